use std::path::Path;

use super::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::pnm::encode_pgm;
use crate::tensor::{Scalar, Tensor};

/// `(rows, cols)` of the tile grid for `c` maps; `rows·cols ≥ c`.
pub fn tile_layout(c: usize) -> (usize, usize) {
    let half = ((c / 2) as f64).sqrt().round() as usize;
    if c.is_multiple_of(2) && half * half * 2 == c {
        return (2 * half, half);
    }
    let side = (c as f64).sqrt().round() as usize;
    if side * side == c {
        return (side, side);
    }
    let cols = ((c as f64 / 2.0).sqrt().ceil() as usize).max(1);
    (c.div_ceil(cols), cols)
}

/// Renders `[C,H,W]` (or `[1,C,H,W]`) as a grayscale mosaic; returns `(width, height, pixels)`.
pub fn render_feature_map<T: Scalar>(tap: &Tensor<T>) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = match tap.shape() {
        &[c, h, w] | &[1, c, h, w] => (c, h, w),
        s => return Err(Error::invalid("feature map", format!("expected [C,H,W], got {s:?}"))),
    };
    let (rows, cols) = tile_layout(c);
    let (width, height) = (cols * w, rows * h);
    let mut px = vec![0u8; width * height];
    for (k, map) in tap.data().chunks(h * w).enumerate() {
        let (lo, hi) = map.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
        let (tr, tc) = (k / cols, k % cols);
        for y in 0..h {
            for x in 0..w {
                let v = map[y * w + x].as_f64();
                let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 };
                px[(tr * h + y) * width + tc * w + x] = g;
            }
        }
    }
    Ok((width, height, px))
}

/// Writes a tiled PGM of a feature tap, each map min-max normalized independently.
pub fn dump_feature_map<T: Scalar>(tap: &Tensor<T>, path: &Path) -> Result<(usize, usize)> {
    let (w, h, px) = render_feature_map(tap)?;
    write_atomic(path, &encode_pgm(w, h, &px))?;
    Ok((w, h))
}
