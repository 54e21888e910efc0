use rayon::prelude::*;

use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::ShapeError;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), ShapeError> {
    if a.shape() != b.shape() {
        return Err(ShapeError::new(op, a.shape(), b.shape(), "shapes differ"));
    }
    Ok(())
}

fn check_upstream(op: &'static str, expected: &[usize], upstream: &[usize]) -> Result<(), ShapeError> {
    if expected != upstream {
        return Err(ShapeError::new(
            op,
            expected,
            upstream,
            "upstream gradient shape differs from the op output",
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom, ShapeError> {
    let [n, cin, h, w] = input.dims4(op)?;
    let [cout, kcin, kh, kw] = kernel.dims4(op)?;
    if kcin != cin {
        return Err(ShapeError::new(
            op,
            input.shape(),
            kernel.shape(),
            "input channels differ from kernel input channels",
        ));
    }
    if stride == 0 {
        return Err(ShapeError::new(op, input.shape(), kernel.shape(), "stride must be at least 1"));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(ShapeError::new(
            op,
            input.shape(),
            kernel.shape(),
            "kernel larger than padded input",
        ));
    }
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad: padding,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    })
}

/// Output columns `ox` whose input column `ox*stride + kj - pad` lies inside `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `[rows, cols]` to `[cols, rows]`, in cache blocks.
fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    const B: usize = 32;
    let mut out = vec![T::zero(); rows * cols];
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let srcrow = &col[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &srcrow[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.pad] += s[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N,Cin,H,W]` with `kernel [Cout,Cin,kh,kw]`, zero padded.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, ShapeError> {
    let g = conv_geom("conv2d", input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(ShapeError::new("conv2d", kernel.shape(), b.shape(), "bias must be [Cout]"));
        }
    }
    let p = g.positions();
    let in_stride = g.cin * g.h * g.w;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let x = input.data();
    let k = kernel.data();
    out.data_mut()
        .par_chunks_mut(g.cout * p)
        .enumerate()
        .for_each(|(n, o)| {
            let xs = &x[n * in_stride..(n + 1) * in_stride];
            if g.is_pointwise() {
                gemm(MatRef::new(k, g.cout, g.cin), MatRef::new(xs, g.cin, p), o, false);
            } else {
                let mut col = vec![T::zero(); g.patch() * p];
                im2col(xs, &g, &mut col);
                gemm(MatRef::new(k, g.cout, g.patch()), MatRef::new(&col, g.patch(), p), o, false);
            }
            if let Some(b) = bias {
                for (co, row) in o.chunks_mut(p).enumerate() {
                    let bv = b.data()[co];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to each of its inputs.
#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass of [`conv2d`]. The input gradient is skipped unless `need_input`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<Conv2dGrads<T>, ShapeError> {
    let g = conv_geom("conv2d_backward", input, kernel, stride, padding)?;
    check_upstream("conv2d_backward", &[g.n, g.cout, g.oh, g.ow], upstream.shape())?;
    let p = g.positions();
    let kdim = g.patch();
    let in_stride = g.cin * g.h * g.w;
    let x = input.data();
    let k = kernel.data();
    let up = upstream.data();

    let per_sample: Vec<(Option<Vec<T>>, Vec<T>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let xs = &x[n * in_stride..(n + 1) * in_stride];
            let us = &up[n * g.cout * p..(n + 1) * g.cout * p];
            let mut dk = vec![T::zero(); g.cout * kdim];
            let mut dx = None;
            if g.is_pointwise() {
                let xt = transpose(xs, g.cin, p);
                gemm(MatRef::new(us, g.cout, p), MatRef::new(&xt, p, g.cin), &mut dk, false);
                if need_input {
                    let mut d = vec![T::zero(); in_stride];
                    gemm(MatRef::t(k, g.cout, g.cin), MatRef::new(us, g.cout, p), &mut d, false);
                    dx = Some(d);
                }
            } else {
                let mut col = vec![T::zero(); kdim * p];
                im2col(xs, &g, &mut col);
                let colt = transpose(&col, kdim, p);
                gemm(MatRef::new(us, g.cout, p), MatRef::new(&colt, p, kdim), &mut dk, false);
                if need_input {
                    gemm(MatRef::t(k, g.cout, kdim), MatRef::new(us, g.cout, p), &mut col, false);
                    let mut d = vec![T::zero(); in_stride];
                    col2im(&col, &g, &mut d);
                    dx = Some(d);
                }
            }
            (dx, dk)
        })
        .collect();

    let mut dkernel = vec![T::zero(); g.cout * kdim];
    let mut dinput = need_input.then(|| Vec::with_capacity(g.n * in_stride));
    for (dx, dk) in per_sample {
        for (a, b) in dkernel.iter_mut().zip(dk) {
            *a += b;
        }
        if let (Some(acc), Some(d)) = (dinput.as_mut(), dx) {
            acc.extend(d);
        }
    }
    let bias = has_bias.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let start = (n * g.cout + co) * p;
                *acc += up[start..start + p].iter().fold(T::zero(), |s, &v| s + v);
            }
        }
        Tensor::new(&[g.cout], db).expect("bias gradient shape")
    });
    Ok(Conv2dGrads {
        input: dinput.map(|d| Tensor::new(input.shape(), d).expect("input gradient shape")),
        kernel: Tensor::new(kernel.shape(), dkernel).expect("kernel gradient shape"),
        bias,
    })
}

// ---------------------------------------------------------------------------
// pooling

/// Flat input positions of each pooled maximum, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndex {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndex {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn positions(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 max pooling with stride 2. Ties resolve to the first element in row-major order.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndex), ShapeError> {
    let [n, c, h, w] = input.dims4("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ShapeError::new("maxpool2", input.shape(), &[2, 2], "height and width must be even"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[n, c, oh, ow], out)?,
        PoolIndex {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward<T: Scalar>(index: &PoolIndex, upstream: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let s = &index.input_shape;
    check_upstream("maxpool2_backward", &[s[0], s[1], s[2] / 2, s[3] / 2], upstream.shape())?;
    let mut grad = Tensor::zeros(s);
    let g = grad.data_mut();
    for (&pos, &u) in index.argmax.iter().zip(upstream.data()) {
        g[pos] += u;
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// dense algebra

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let [m, k] = a.dims2("matmul")?;
    let [kb, p] = b.dims2("matmul")?;
    if k != kb {
        return Err(ShapeError::new("matmul", a.shape(), b.shape(), "inner extents differ"));
    }
    let mut out = Tensor::zeros(&[m, p]);
    gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, p), out.data_mut(), false);
    Ok(out)
}

/// Returns `(∂a, ∂b)` for `a·b` given the upstream gradient.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ShapeError> {
    let [m, k] = a.dims2("matmul_backward")?;
    let [kb, p] = b.dims2("matmul_backward")?;
    if k != kb {
        return Err(ShapeError::new("matmul_backward", a.shape(), b.shape(), "inner extents differ"));
    }
    check_upstream("matmul_backward", &[m, p], upstream.shape())?;
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, p]);
    gemm(MatRef::new(upstream.data(), m, p), MatRef::t(b.data(), k, p), da.data_mut(), false);
    gemm(MatRef::t(a.data(), m, k), MatRef::new(upstream.data(), m, p), db.data_mut(), false);
    Ok((da, db))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn add_backward<T: Scalar>(upstream: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (upstream.clone(), upstream.clone())
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape(), data)
}

pub fn mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ShapeError> {
    same_shape("mul_backward", a, b)?;
    check_upstream("mul_backward", a.shape(), upstream.shape())?;
    Ok((mul(upstream, b)?, mul(upstream, a)?))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|v| v * s)
}

pub fn scale_backward<T: Scalar>(s: T, upstream: &Tensor<T>) -> Tensor<T> {
    upstream.map(|v| v * s)
}

/// Multiplies every channel of `x [N,C,H,W]` by the per-sample plane `map [N,1,H,W]`.
pub fn mul_plane<T: Scalar>(x: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let [n, c, h, w] = x.dims4("mul_plane")?;
    if map.shape() != [n, 1, h, w] {
        return Err(ShapeError::new("mul_plane", x.shape(), map.shape(), "map must be [N,1,H,W]"));
    }
    let hw = h * w;
    let mut out = x.clone();
    for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let m = &map.data()[(i / c) * hw..(i / c + 1) * hw];
        plane.iter_mut().zip(m).for_each(|(v, &a)| *v *= a);
    }
    Ok(out)
}

/// Returns `(∂x, ∂map)` for [`mul_plane`].
pub fn mul_plane_backward<T: Scalar>(
    x: &Tensor<T>,
    map: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ShapeError> {
    let [n, c, h, w] = x.dims4("mul_plane_backward")?;
    check_upstream("mul_plane_backward", x.shape(), upstream.shape())?;
    let dx = mul_plane(upstream, map)?;
    let hw = h * w;
    let mut dmap = Tensor::zeros(&[n, 1, h, w]);
    for (i, (up, xs)) in upstream.data().chunks(hw).zip(x.data().chunks(hw)).enumerate() {
        let d = &mut dmap.data_mut()[(i / c) * hw..(i / c + 1) * hw];
        for ((acc, &u), &v) in d.iter_mut().zip(up).zip(xs) {
            *acc += u * v;
        }
    }
    Ok((dx, dmap))
}

// ---------------------------------------------------------------------------
// activations

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    check_upstream("relu_backward", input.shape(), upstream.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &u)| if x > T::zero() { u } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    check_upstream("sigmoid_backward", input.shape(), upstream.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &u)| {
            let s = sigmoid_scalar(x);
            u * s * (T::one() - s)
        })
        .collect();
    Tensor::new(input.shape(), data)
}

// ---------------------------------------------------------------------------
// resampling

/// Replicates every pixel of `[N,C,h,w]` into a 2×2 block.
pub fn nearest_upscale2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let [n, c, h, w] = x.dims4("nearest_upscale2x")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            let row = &plane[(oy / 2) * w..(oy / 2 + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / 2]);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn nearest_upscale2x_backward<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    let [n, c, oh, ow] = upstream.dims4("nearest_upscale2x_backward")?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(ShapeError::new(
            "nearest_upscale2x_backward",
            upstream.shape(),
            &[],
            "upstream extents must be even",
        ));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut grad = Tensor::zeros(&[n, c, h, w]);
    for (plane, g) in upstream.data().chunks(oh * ow).zip(grad.data_mut().chunks_mut(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                g[(oy / 2) * w + ox / 2] += plane[oy * ow + ox];
            }
        }
    }
    Ok(grad)
}

/// Source coordinate and blend weight for one output index of a corner-aligned resize.
fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    let v = a + t * (b - a);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    v.max(lo).min(hi)
}

/// Corner-aligned bilinear resize of a 2-D map.
pub fn bilinear_resize<T: Scalar>(map: &Tensor<T>, to: (usize, usize)) -> Result<Tensor<T>, ShapeError> {
    let [h, w] = map.dims2("bilinear_resize")?;
    let (th, tw) = to;
    if th == 0 || tw == 0 {
        return Err(ShapeError::new("bilinear_resize", map.shape(), &[th, tw], "target extents must be positive"));
    }
    let rows = resize_taps(h, th);
    let cols = resize_taps(w, tw);
    let m = map.data();
    let mut out = Vec::with_capacity(th * tw);
    for &(y0, y1, fy) in &rows {
        let fy = T::from_f64(fy);
        for &(x0, x1, fx) in &cols {
            let fx = T::from_f64(fx);
            let top = lerp(m[y0 * w + x0], m[y0 * w + x1], fx);
            let bottom = lerp(m[y1 * w + x0], m[y1 * w + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Tensor::new(&[th, tw], out)
}

pub fn bilinear_resize_backward<T: Scalar>(
    input_shape: (usize, usize),
    upstream: &Tensor<T>,
) -> Result<Tensor<T>, ShapeError> {
    let (h, w) = input_shape;
    let [th, tw] = upstream.dims2("bilinear_resize_backward")?;
    let rows = resize_taps(h, th);
    let cols = resize_taps(w, tw);
    let mut grad = Tensor::zeros(&[h, w]);
    let g = grad.data_mut();
    let up = upstream.data();
    for (i, &(y0, y1, fy)) in rows.iter().enumerate() {
        let fy = T::from_f64(fy);
        for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
            let fx = T::from_f64(fx);
            let u = up[i * tw + j];
            let top = u * (T::one() - fy);
            let bottom = u * fy;
            g[y0 * w + x0] += top * (T::one() - fx);
            g[y0 * w + x1] += top * fx;
            g[y1 * w + x0] += bottom * (T::one() - fx);
            g[y1 * w + x1] += bottom * fx;
        }
    }
    Ok(grad)
}

/// Applies [`bilinear_resize`] to each trailing 2-D plane of a rank-3 or rank-4 tensor.
pub fn resize_planes<T: Scalar>(x: &Tensor<T>, to: (usize, usize)) -> Result<Tensor<T>, ShapeError> {
    let shape = x.shape();
    if shape.len() < 3 {
        return Err(ShapeError::new("resize_planes", shape, &[], "expected rank 3 or 4"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out = Vec::with_capacity(x.len() / (h * w) * to.0 * to.1);
    for plane in x.data().chunks(h * w) {
        let p = Tensor::new(&[h, w], plane.to_vec())?;
        out.extend(bilinear_resize(&p, to)?.into_data());
    }
    let mut new_shape = shape.to_vec();
    let r = new_shape.len();
    new_shape[r - 2] = to.0;
    new_shape[r - 1] = to.1;
    Tensor::new(&new_shape, out)
}
