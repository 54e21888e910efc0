//! Differentiable layers specific to the enhancing/cropping network.

use crate::error::{Error, Result, ShapeError};
use crate::geometry::{map_center_to_grid, AttentionMap, AuCenterSet, CROP_WINDOW, NUM_CENTERS};
use crate::tensor::{
    add, conv2d, conv2d_backward, matmul, matmul_backward, mul_plane, mul_plane_backward,
    nearest_upscale2x, nearest_upscale2x_backward, relu, relu_backward, Scalar, Tensor,
};

/// Stacks per-sample attention maps, resized to `h×w`, into `[N,1,h,w]`.
///
/// A single map is broadcast across the batch.
pub fn attention_planes<T: Scalar>(maps: &[AttentionMap], n: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if maps.len() != 1 && maps.len() != n {
        return Err(Error::invalid(
            "attention maps",
            format!("expected 1 or {n} maps, found {}", maps.len()),
        ));
    }
    let mut data = Vec::with_capacity(n * h * w);
    let resized: Vec<Tensor<T>> = maps.iter().map(|m| m.resized(h, w)).collect();
    for i in 0..n {
        data.extend_from_slice(resized[i.min(resized.len() - 1)].data());
    }
    Ok(Tensor::new(&[n, 1, h, w], data)?)
}

/// Bias-free 1×1 projection applied to the attention-modulated skip path.
#[derive(Clone, Copy, Debug)]
pub struct EnhanceParams<'a, T> {
    projection: &'a Tensor<T>,
}

impl<'a, T: Scalar> EnhanceParams<'a, T> {
    pub fn new(projection: &'a Tensor<T>) -> Result<Self> {
        let [_, _, kh, kw] = projection.dims4("enhance")?;
        if (kh, kw) != (1, 1) {
            return Err(Error::invalid("enhance projection", "kernel must be 1x1"));
        }
        Ok(Self { projection })
    }

    pub fn projection(&self) -> &'a Tensor<T> {
        self.projection
    }
}

/// `group_output + conv1x1(a_r ⊙ x)` with `a_r` the attention resized to the group resolution.
pub fn enhance_forward<T: Scalar>(
    x: &Tensor<T>,
    group_output: &Tensor<T>,
    maps: &[AttentionMap],
    p: EnhanceParams<'_, T>,
) -> Result<Tensor<T>> {
    let [n, _, h, w] = x.dims4("enhance_forward")?;
    let [gn, _, gh, gw] = group_output.dims4("enhance_forward")?;
    if (gn, gh, gw) != (n, h, w) {
        return Err(ShapeError::new(
            "enhance_forward",
            x.shape(),
            group_output.shape(),
            "group output must match the input batch and spatial extents",
        )
        .into());
    }
    let planes = attention_planes(maps, n, h, w)?;
    let skip = conv2d(&mul_plane(x, &planes)?, p.projection, None, 1, 0)?;
    Ok(add(group_output, &skip)?)
}

#[derive(Clone, Debug)]
pub struct EnhanceGrads<T> {
    pub x: Option<Tensor<T>>,
    pub group_output: Tensor<T>,
    pub projection: Tensor<T>,
}

pub fn enhance_backward<T: Scalar>(
    x: &Tensor<T>,
    maps: &[AttentionMap],
    p: EnhanceParams<'_, T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<EnhanceGrads<T>> {
    let [n, _, h, w] = x.dims4("enhance_backward")?;
    let planes = attention_planes(maps, n, h, w)?;
    let modulated = mul_plane(x, &planes)?;
    let g = conv2d_backward(&modulated, p.projection, false, 1, 0, upstream, need_input)?;
    let dx = match g.input {
        Some(dm) => Some(mul_plane_backward(x, &planes, &dm)?.0),
        None => None,
    };
    Ok(EnhanceGrads {
        x: dx,
        group_output: upstream.clone(),
        projection: g.kernel,
    })
}

// ---------------------------------------------------------------------------
// local response normalization

/// Across-channel local response normalization parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrnParams {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub window: usize,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self { k: 2.0, alpha: 0.002, beta: 0.75, window: 5 }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(self.alpha >= 0.0) || !(self.beta > 0.0 && self.beta <= 1.0) || self.window.is_multiple_of(2) {
            return Err(Error::invalid(
                "LRN parameters",
                "need k > 0, alpha >= 0, 0 < beta <= 1 and an odd window",
            ));
        }
        Ok(())
    }

    fn span(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        let half = self.window / 2;
        c.saturating_sub(half)..(c + half + 1).min(channels)
    }
}

/// Denominator base `k + α·Σ x²` over the channel window, per element.
fn lrn_scale<T: Scalar>(x: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("lrn")?;
    let hw = h * w;
    let (k, alpha) = (T::from_f64(p.k), T::from_f64(p.alpha));
    let d = x.data();
    let mut s = Tensor::zeros(x.shape());
    let out = s.data_mut();
    for nn in 0..n {
        for ch in 0..c {
            let dst = (nn * c + ch) * hw;
            for j in p.span(ch, c) {
                let src = (nn * c + j) * hw;
                for i in 0..hw {
                    out[dst + i] += d[src + i] * d[src + i];
                }
            }
            for v in &mut out[dst..dst + hw] {
                *v = k + alpha * *v;
            }
        }
    }
    Ok(s)
}

pub fn lrn<T: Scalar>(x: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    p.validate()?;
    let s = lrn_scale(x, p)?;
    let beta = T::from_f64(p.beta);
    let data = x.data().iter().zip(s.data()).map(|(&v, &sv)| v * sv.powf(-beta)).collect();
    Ok(Tensor::new(x.shape(), data)?)
}

pub fn lrn_backward<T: Scalar>(x: &Tensor<T>, p: &LrnParams, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    p.validate()?;
    if x.shape() != upstream.shape() {
        return Err(ShapeError::new("lrn_backward", x.shape(), upstream.shape(), "upstream shape differs").into());
    }
    let [n, c, h, w] = x.dims4("lrn_backward")?;
    let hw = h * w;
    let s = lrn_scale(x, p)?;
    let beta = T::from_f64(p.beta);
    let two_ab = T::from_f64(2.0 * p.alpha * p.beta);
    let (xd, sd, ud) = (x.data(), s.data(), upstream.data());
    // u·x·s^(-β-1), shared by every channel whose window contains the target
    let coupling: Vec<T> = (0..xd.len())
        .map(|i| ud[i] * xd[i] * sd[i].powf(-beta - T::one()))
        .collect();
    let mut grad = Tensor::zeros(x.shape());
    let g = grad.data_mut();
    for nn in 0..n {
        for j in 0..c {
            let dst = (nn * c + j) * hw;
            for i in 0..hw {
                g[dst + i] = ud[dst + i] * sd[dst + i].powf(-beta);
            }
            for ch in p.span(j, c) {
                let src = (nn * c + ch) * hw;
                for i in 0..hw {
                    g[dst + i] -= two_ab * xd[dst + i] * coupling[src + i];
                }
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// cropping

fn per_sample_centers(centers: &[AuCenterSet], n: usize) -> Result<Vec<&AuCenterSet>> {
    if centers.len() != 1 && centers.len() != n {
        return Err(Error::invalid(
            "AU centers",
            format!("expected 1 or {n} center sets, found {}", centers.len()),
        ));
    }
    for c in centers {
        if c.centers.len() != NUM_CENTERS {
            return Err(Error::invalid(
                "AU centers",
                format!("expected {NUM_CENTERS} centers, found {}", c.centers.len()),
            ));
        }
    }
    Ok((0..n).map(|i| &centers[i.min(centers.len() - 1)]).collect())
}

/// Window centers `(row, col)` of the 20 crops on a `grid×grid` feature map.
pub fn crop_positions(centers: &AuCenterSet, grid: usize) -> Vec<(usize, usize)> {
    centers
        .centers
        .iter()
        .map(|c| map_center_to_grid(c.position, grid, CROP_WINDOW))
        .collect()
}

/// Slices the 20 `3×3` windows around the AU centers, in canonical center order.
pub fn crop_forward<T: Scalar>(f: &Tensor<T>, centers: &[AuCenterSet]) -> Result<Vec<Tensor<T>>> {
    let [n, c, gh, gw] = f.dims4("crop_forward")?;
    if gh != gw || gh < CROP_WINDOW {
        return Err(ShapeError::new("crop_forward", f.shape(), &[CROP_WINDOW], "need a square grid of at least 3").into());
    }
    let per = per_sample_centers(centers, n)?;
    let positions: Vec<_> = per.iter().map(|cs| crop_positions(cs, gh)).collect();
    let w = CROP_WINDOW;
    let half = w / 2;
    let d = f.data();
    let mut crops = Vec::with_capacity(NUM_CENTERS);
    for r in 0..NUM_CENTERS {
        let mut out = Vec::with_capacity(n * c * w * w);
        for (nn, pos) in positions.iter().enumerate() {
            let (row, col) = pos[r];
            for ch in 0..c {
                let plane = &d[(nn * c + ch) * gh * gw..];
                for y in row - half..=row + half {
                    out.extend_from_slice(&plane[y * gw + col - half..=y * gw + col + half]);
                }
            }
        }
        crops.push(Tensor::new(&[n, c, w, w], out)?);
    }
    Ok(crops)
}

/// Scatters the 20 crop gradients back onto the feature map; overlaps accumulate.
pub fn crop_backward<T: Scalar>(
    input_shape: &[usize],
    centers: &[AuCenterSet],
    upstream: &[Tensor<T>],
) -> Result<Tensor<T>> {
    let (n, c, gh, gw) = match *input_shape {
        [n, c, gh, gw] => (n, c, gh, gw),
        _ => return Err(ShapeError::new("crop_backward", input_shape, &[], "expected rank 4").into()),
    };
    if upstream.len() != NUM_CENTERS {
        return Err(Error::invalid(
            "crop gradients",
            format!("expected {NUM_CENTERS}, found {}", upstream.len()),
        ));
    }
    let per = per_sample_centers(centers, n)?;
    let w = CROP_WINDOW;
    let half = w / 2;
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (r, up) in upstream.iter().enumerate() {
        if up.shape() != [n, c, w, w] {
            return Err(ShapeError::new("crop_backward", &[n, c, w, w], up.shape(), "crop gradient shape").into());
        }
        let u = up.data();
        for (nn, cs) in per.iter().enumerate() {
            let (row, col) = map_center_to_grid(cs.centers[r].position, gh, w);
            for ch in 0..c {
                let base = (nn * c + ch) * gh * gw;
                let ub = (nn * c + ch) * w * w;
                for (dy, y) in (row - half..=row + half).enumerate() {
                    for (dx, x) in (col - half..=col + half).enumerate() {
                        g[base + y * gw + x] += u[ub + dy * w + dx];
                    }
                }
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// fully connected

/// `x·W + b` for `x [N,K]`, `W [K,P]`, `b [P]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = matmul(x, weight)?;
    let [_, p] = out.dims2("linear")?;
    if bias.shape() != [p] {
        return Err(ShapeError::new("linear", weight.shape(), bias.shape(), "bias must be [P]").into());
    }
    for row in out.data_mut().chunks_mut(p) {
        row.iter_mut().zip(bias.data()).for_each(|(v, &b)| *v += b);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub x: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, upstream: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (dx, dw) = matmul_backward(x, weight, upstream)?;
    let [_, p] = upstream.dims2("linear_backward")?;
    let mut db = vec![T::zero(); p];
    for row in upstream.data().chunks(p) {
        db.iter_mut().zip(row).for_each(|(a, &u)| *a += u);
    }
    Ok(LinearGrads { x: dx, weight: dw, bias: Tensor::new(&[p], db)? })
}

// ---------------------------------------------------------------------------
// region heads

/// Parameters of one cropped-region head.
#[derive(Clone, Copy, Debug)]
pub struct RegionHead<'a, T> {
    /// `[C, C, 3, 3]`, valid padding.
    pub conv_weight: &'a Tensor<T>,
    pub conv_bias: &'a Tensor<T>,
    /// `[C·16, F]`.
    pub fc_weight: &'a Tensor<T>,
    pub fc_bias: &'a Tensor<T>,
}

/// Intermediate activations of a region head.
#[derive(Clone, Debug)]
pub struct RegionHeadCache<T> {
    pub upscaled: Tensor<T>,
    pub conv: Tensor<T>,
    pub flat: Tensor<T>,
    pub fc: Tensor<T>,
}

/// upscale ×2 → conv 3×3 (valid) → relu → flatten → fc → relu.
pub fn region_head_forward<T: Scalar>(
    crop: &Tensor<T>,
    head: RegionHead<'_, T>,
) -> Result<(Tensor<T>, RegionHeadCache<T>)> {
    let upscaled = nearest_upscale2x(crop)?;
    let conv = conv2d(&upscaled, head.conv_weight, Some(head.conv_bias), 1, 0)?;
    let [n, c, h, w] = conv.dims4("region_head")?;
    let flat = relu(&conv).reshape(&[n, c * h * w])?;
    let fc = linear(&flat, head.fc_weight, head.fc_bias)?;
    let out = relu(&fc);
    Ok((out, RegionHeadCache { upscaled, conv, flat, fc }))
}

#[derive(Clone, Debug)]
pub struct RegionHeadGrads<T> {
    pub crop: Tensor<T>,
    pub conv_weight: Tensor<T>,
    pub conv_bias: Tensor<T>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

pub fn region_head_backward<T: Scalar>(
    head: RegionHead<'_, T>,
    cache: &RegionHeadCache<T>,
    upstream: &Tensor<T>,
) -> Result<RegionHeadGrads<T>> {
    let d_fc = relu_backward(&cache.fc, upstream)?;
    let lin = linear_backward(&cache.flat, head.fc_weight, &d_fc)?;
    let d_flat = lin.x.reshape(cache.conv.shape())?;
    let d_conv = relu_backward(&cache.conv, &d_flat)?;
    let g = conv2d_backward(&cache.upscaled, head.conv_weight, true, 1, 0, &d_conv, true)?;
    let crop = nearest_upscale2x_backward(&g.input.expect("input gradient requested"))?;
    Ok(RegionHeadGrads {
        crop,
        conv_weight: g.kernel,
        conv_bias: g.bias.expect("bias gradient requested"),
        fc_weight: lin.weight,
        fc_bias: lin.bias,
    })
}

/// Concatenates equal-width `[N,F]` region outputs into `[N, count·F]`.
pub fn concat_regions<T: Scalar>(heads: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = heads.first().ok_or_else(|| Error::invalid("region heads", "nothing to concatenate"))?;
    let [n, f] = first.dims2("concat_regions")?;
    for h in heads {
        if h.shape() != [n, f] {
            return Err(ShapeError::new("concat_regions", first.shape(), h.shape(), "region widths differ").into());
        }
    }
    let total = f * heads.len();
    let mut out = Vec::with_capacity(n * total);
    for row in 0..n {
        for h in heads {
            out.extend_from_slice(&h.data()[row * f..(row + 1) * f]);
        }
    }
    Ok(Tensor::new(&[n, total], out)?)
}

/// Splits `[N, count·F]` into `count` contiguous `[N,F]` blocks.
pub fn split_regions<T: Scalar>(upstream: &Tensor<T>, count: usize) -> Result<Vec<Tensor<T>>> {
    let [n, total] = upstream.dims2("split_regions")?;
    if count == 0 || total % count != 0 {
        return Err(ShapeError::new("split_regions", upstream.shape(), &[count], "width not divisible by block count").into());
    }
    let f = total / count;
    (0..count)
        .map(|k| {
            let mut data = Vec::with_capacity(n * f);
            for row in 0..n {
                data.extend_from_slice(&upstream.data()[row * total + k * f..row * total + (k + 1) * f]);
            }
            Ok(Tensor::new(&[n, f], data)?)
        })
        .collect()
}
