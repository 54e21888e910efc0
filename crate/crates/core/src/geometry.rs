//! Facial landmarks to AU centers, attention maps, and feature-grid crop positions.
//!
//! Landmarks follow the iBUG 68-point convention. "Left" and "right" refer to
//! image sides (left = smaller x), so the image-left brow is points 17..=21 and
//! the image-left eye is 36..=41.
//!
//! | pair | AUs        | anchor (left / right)          | vertical offset |
//! |------|------------|--------------------------------|-----------------|
//! | 0    | 1          | inner brow 21 / 22             | d/2 up          |
//! | 1    | 2          | outer brow 17 / 26             | d/3 up          |
//! | 2    | 4          | brow center 19 / 24            | d/3 down        |
//! | 3    | 6          | eye bottom mid(40,41) / (47,46)| d down          |
//! | 4    | 7          | eye centroid 36..41 / 42..47   | none            |
//! | 5    | 10         | upper lip 50 / 52              | none            |
//! | 6    | 12, 14, 15 | lip corner 48 / 54             | none            |
//! | 7    | 17         | lower lip 58 / 56              | d/2 down        |
//! | 8    | 23, 24     | inner upper lip 61 / 63        | none            |
//! | 9    | 23, 24     | inner lower lip 67 / 65        | none            |
//!
//! `d` is the distance between the inner eye corners (39, 42) on the 100×100 grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm;
use crate::tensor::{bilinear_resize, Scalar, Tensor};

pub const NUM_LANDMARKS: usize = 68;
pub const GRID: usize = 100;
pub const NUM_CENTERS: usize = 20;
/// Half extent of an AU area; boxes are `2·5+1 = 11` pixels wide.
pub const BOX_RADIUS: usize = 5;
/// Slope of the attention weight in the Manhattan distance.
pub const ATTENTION_SLOPE: f64 = 0.095;
/// Window extent of a crop on the feature grid.
pub const CROP_WINDOW: usize = 3;

/// The 12 AUs in label order.
pub const AU_IDS: [u8; 12] = [1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24];

pub const LEFT_INNER_EYE: usize = 39;
pub const RIGHT_INNER_EYE: usize = 42;

/// iBUG-68 index of the horizontally mirrored landmark.
pub fn mirror_index(i: usize) -> usize {
    match i {
        0..=16 => 16 - i,
        17..=26 => 43 - i,
        27..=30 => i,
        31..=35 => 66 - i,
        36..=39 => 81 - i,
        40 | 41 => 87 - i,
        42..=45 => 81 - i,
        46 | 47 => 87 - i,
        48..=54 => 102 - i,
        55..=59 => 114 - i,
        60..=64 => 124 - i,
        65..=67 => 132 - i,
        _ => panic!("landmark index {i} out of range"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug)]
enum Anchor {
    Point(usize),
    Mid(usize, usize),
    Mean(usize, usize),
}

impl Anchor {
    fn resolve(&self, p: &[(f64, f64)]) -> (f64, f64) {
        match *self {
            Anchor::Point(i) => p[i],
            Anchor::Mid(a, b) => ((p[a].0 + p[b].0) / 2.0, (p[a].1 + p[b].1) / 2.0),
            Anchor::Mean(a, b) => {
                let n = (b - a + 1) as f64;
                let (sx, sy) = p[a..=b].iter().fold((0.0, 0.0), |(x, y), q| (x + q.0, y + q.1));
                (sx / n, sy / n)
            }
        }
    }
}

struct CenterRule {
    aus: &'static [u8],
    left: Anchor,
    right: Anchor,
    /// Offset along y in units of `d`; positive is downward.
    offset: f64,
}

const RULES: [CenterRule; 10] = [
    CenterRule { aus: &[1], left: Anchor::Point(21), right: Anchor::Point(22), offset: -0.5 },
    CenterRule { aus: &[2], left: Anchor::Point(17), right: Anchor::Point(26), offset: -1.0 / 3.0 },
    CenterRule { aus: &[4], left: Anchor::Point(19), right: Anchor::Point(24), offset: 1.0 / 3.0 },
    CenterRule { aus: &[6], left: Anchor::Mid(40, 41), right: Anchor::Mid(47, 46), offset: 1.0 },
    CenterRule { aus: &[7], left: Anchor::Mean(36, 41), right: Anchor::Mean(42, 47), offset: 0.0 },
    CenterRule { aus: &[10], left: Anchor::Point(50), right: Anchor::Point(52), offset: 0.0 },
    CenterRule { aus: &[12, 14, 15], left: Anchor::Point(48), right: Anchor::Point(54), offset: 0.0 },
    CenterRule { aus: &[17], left: Anchor::Point(58), right: Anchor::Point(56), offset: 0.5 },
    CenterRule { aus: &[23, 24], left: Anchor::Point(61), right: Anchor::Point(63), offset: 0.0 },
    CenterRule { aus: &[23, 24], left: Anchor::Point(67), right: Anchor::Point(65), offset: 0.0 },
];

/// AU ids attached to each of the 20 centers, in canonical order.
pub fn center_au_ids(index: usize) -> &'static [u8] {
    RULES[index / 2].aus
}

/// Canonical center indices carrying the given AU.
pub fn centers_for_au(au: u8) -> Vec<usize> {
    (0..NUM_CENTERS).filter(|&i| center_au_ids(i).contains(&au)).collect()
}

/// 68 facial key points in image pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
    width: u32,
    height: u32,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidLandmarks("image size must be positive".into()));
        }
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidLandmarks(format!(
                "expected {NUM_LANDMARKS} points, found {}",
                points.len()
            )));
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !(x.is_finite() && y.is_finite())
                || x < 0.0
                || y < 0.0
                || x >= width as f64
                || y >= height as f64
            {
                return Err(Error::InvalidLandmarks(format!(
                    "point {i} ({x}, {y}) outside the {width}x{height} image"
                )));
            }
        }
        Ok(Self { points, width, height })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Points rescaled independently per axis onto the 100×100 grid.
    pub fn normalized(&self) -> Vec<(f64, f64)> {
        let sx = GRID as f64 / self.width as f64;
        let sy = GRID as f64 / self.height as f64;
        self.points.iter().map(|&(x, y)| (x * sx, y * sy)).collect()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LandmarkFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        file.into_landmarks()
    }

    pub fn to_file(&self, image: &str) -> LandmarkFile {
        LandmarkFile {
            image: image.to_string(),
            width: self.width,
            height: self.height,
            points: self.points.iter().map(|&(x, y)| [x, y]).collect(),
        }
    }
}

/// On-disk landmark document: `{image, width, height, points: [[x, y]; 68]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFile {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub points: Vec<[f64; 2]>,
}

impl LandmarkFile {
    pub fn into_landmarks(self) -> Result<LandmarkSet> {
        LandmarkSet::new(
            self.points.iter().map(|p| (p[0], p[1])).collect(),
            self.width,
            self.height,
        )
    }
}

/// Euclidean distance between the inner eye corners, in pixels.
pub fn inner_eye_distance(l: &LandmarkSet) -> Result<f64> {
    let d = distance(l.points[LEFT_INNER_EYE], l.points[RIGHT_INNER_EYE]);
    if d == 0.0 {
        return Err(Error::DegenerateLandmarks("inner eye corners coincide".into()));
    }
    Ok(d)
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuCenter {
    /// `(x, y)` on the 100×100 grid.
    pub position: (f64, f64),
    pub au_ids: Vec<u8>,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuCenterSet {
    pub centers: Vec<AuCenter>,
    /// Inner-eye-corner distance on the 100×100 grid.
    pub scale_d: f64,
}

impl AuCenterSet {
    pub fn validate(&self) -> Result<()> {
        if self.centers.len() != NUM_CENTERS {
            return Err(Error::invalid(
                "AU centers",
                format!("expected {NUM_CENTERS} centers, found {}", self.centers.len()),
            ));
        }
        for c in &self.centers {
            let (x, y) = c.position;
            if !(0.0..GRID as f64).contains(&x) || !(0.0..GRID as f64).contains(&y) {
                return Err(Error::invalid("AU centers", format!("center ({x}, {y}) off the grid")));
            }
        }
        Ok(())
    }

    /// Center positions rounded to integer grid pixels as `(col, row)`.
    pub fn rounded(&self) -> Vec<(usize, usize)> {
        self.centers
            .iter()
            .map(|c| (c.position.0.round() as usize, c.position.1.round() as usize))
            .collect()
    }
}

/// The 20 AU centers for a face.
pub fn au_centers(l: &LandmarkSet) -> Result<AuCenterSet> {
    inner_eye_distance(l)?;
    let p = l.normalized();
    let d = distance(p[LEFT_INNER_EYE], p[RIGHT_INNER_EYE]);
    if d == 0.0 {
        return Err(Error::DegenerateLandmarks("inner eye corners coincide on the grid".into()));
    }
    let clamp = |v: f64| v.clamp(0.0, (GRID - 1) as f64);
    let mut centers = Vec::with_capacity(NUM_CENTERS);
    for rule in &RULES {
        for (anchor, side) in [(rule.left, Side::Left), (rule.right, Side::Right)] {
            let (x, y) = anchor.resolve(&p);
            centers.push(AuCenter {
                position: (clamp(x), clamp(y + rule.offset * d)),
                au_ids: rule.aus.to_vec(),
                side,
            });
        }
    }
    Ok(AuCenterSet { centers, scale_d: d })
}

/// Fixed 100×100 attention weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    grid: Vec<f64>,
}

impl AttentionMap {
    pub fn zeros() -> Self {
        Self { grid: vec![0.0; GRID * GRID] }
    }

    pub fn from_grid(grid: Vec<f64>) -> Result<Self> {
        if grid.len() != GRID * GRID {
            return Err(Error::invalid("attention map", format!("expected {} values", GRID * GRID)));
        }
        if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("attention map", "values must lie in [0, 1]"));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * GRID + col]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(&[GRID, GRID], &self.grid).expect("attention grid shape")
    }

    /// The map resampled to a feature resolution.
    pub fn resized<T: Scalar>(&self, h: usize, w: usize) -> Tensor<T> {
        bilinear_resize(&self.to_tensor::<T>(), (h, w)).expect("positive resize target")
    }

    /// 16-bit binary PGM with `round(w·65535)` per pixel.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let samples: Vec<u16> = self.grid.iter().map(|&w| (w * 65535.0).round() as u16).collect();
        pnm::encode_pgm16(GRID, GRID, &samples)
    }

    /// `"EACATT01"` followed by the grid as little-endian `f32`, row-major.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.grid.len());
        out.extend_from_slice(RAW_MAGIC);
        for &v in &self.grid {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != RAW_MAGIC {
            return Err(Error::invalid("attention raw grid", "missing EACATT01 header"));
        }
        let body = &bytes[8..];
        if body.len() != 4 * GRID * GRID {
            return Err(Error::Truncated(format!(
                "attention grid has {} bytes, expected {}",
                body.len(),
                4 * GRID * GRID
            )));
        }
        let grid = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_grid(grid)
    }
}

pub const RAW_MAGIC: &[u8; 8] = b"EACATT01";

/// Builds the attention map: `1 - 0.095·d_m` inside each 11×11 box, maximum over boxes.
pub fn attention_map(c: &AuCenterSet) -> Result<AttentionMap> {
    c.validate()?;
    let mut grid = vec![0.0f64; GRID * GRID];
    for (cx, cy) in c.rounded() {
        let rows = cy.saturating_sub(BOX_RADIUS)..=(cy + BOX_RADIUS).min(GRID - 1);
        for row in rows {
            let cols = cx.saturating_sub(BOX_RADIUS)..=(cx + BOX_RADIUS).min(GRID - 1);
            for col in cols {
                let dm = row.abs_diff(cy) + col.abs_diff(cx);
                let w = 1.0 - ATTENTION_SLOPE * dm as f64;
                let cell = &mut grid[row * GRID + col];
                if w > *cell {
                    *cell = w;
                }
            }
        }
    }
    Ok(AttentionMap { grid })
}

/// Attention map straight from landmarks.
pub fn attention_from_landmarks(l: &LandmarkSet) -> Result<AttentionMap> {
    attention_map(&au_centers(l)?)
}

/// Maps a 100-grid position to the `(row, col)` of a `window`-wide crop on a `grid`-sized map.
pub fn map_center_to_grid(position: (f64, f64), grid: usize, window: usize) -> (usize, usize) {
    debug_assert!(grid >= window && window >= 1 && window % 2 == 1);
    let half = window / 2;
    let hi = grid - 1 - half;
    let scale = grid as f64 / GRID as f64;
    let place = |v: f64| ((v * scale).round().max(0.0) as usize).clamp(half, hi);
    (place(position.1), place(position.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A left/right symmetric face on a 200×200 image.
    pub(crate) fn symmetric_face() -> LandmarkSet {
        let mut pts = vec![(0.0, 0.0); NUM_LANDMARKS];
        let half: [(usize, f64, f64); 34] = [
            (0, 40.0, 80.0), (1, 41.0, 95.0), (2, 43.0, 110.0), (3, 46.0, 124.0),
            (4, 51.0, 137.0), (5, 58.0, 149.0), (6, 67.0, 159.0), (7, 79.0, 166.0),
            (17, 55.0, 62.0), (18, 63.0, 57.0), (19, 72.0, 56.0), (20, 81.0, 58.0), (21, 89.0, 62.0),
            (31, 88.0, 118.0), (32, 93.0, 120.0),
            (36, 60.0, 80.0), (37, 66.0, 76.0), (38, 74.0, 76.0), (39, 80.0, 80.0),
            (40, 74.0, 83.0), (41, 66.0, 83.0),
            (48, 78.0, 140.0), (49, 85.0, 135.0), (50, 93.0, 133.0),
            (58, 93.0, 149.0), (59, 85.0, 146.0),
            (60, 82.0, 140.0), (61, 93.0, 138.0), (67, 93.0, 142.0),
            (27, 100.0, 75.0), (28, 100.0, 88.0), (29, 100.0, 100.0), (30, 100.0, 110.0), (33, 100.0, 121.0),
        ];
        for (i, x, y) in half {
            pts[i] = (x, y);
            let m = mirror_index(i);
            pts[m] = (200.0 - x, y);
        }
        pts[8] = (100.0, 170.0);
        pts[51] = (100.0, 132.0);
        pts[57] = (100.0, 151.0);
        pts[62] = (100.0, 138.5);
        pts[66] = (100.0, 141.5);
        LandmarkSet::new(pts, 200, 200).unwrap()
    }

    fn with_inner_corners(a: (f64, f64), b: (f64, f64)) -> LandmarkSet {
        let mut pts = vec![(10.0, 10.0); NUM_LANDMARKS];
        pts[LEFT_INNER_EYE] = a;
        pts[RIGHT_INNER_EYE] = b;
        LandmarkSet::new(pts, 100, 100).unwrap()
    }

    #[test]
    fn mirror_is_an_involution() {
        for i in 0..NUM_LANDMARKS {
            assert_eq!(mirror_index(mirror_index(i)), i);
        }
        assert_eq!(mirror_index(39), 42);
        assert_eq!(mirror_index(48), 54);
        assert_eq!(mirror_index(41), 46);
    }

    #[test]
    fn inner_eye_distance_examples() {
        assert_eq!(inner_eye_distance(&with_inner_corners((40.0, 50.0), (60.0, 50.0))).unwrap(), 20.0);
        assert_eq!(inner_eye_distance(&with_inner_corners((0.0, 0.0), (3.0, 4.0))).unwrap(), 5.0);
        assert!(matches!(
            inner_eye_distance(&with_inner_corners((5.0, 5.0), (5.0, 5.0))),
            Err(Error::DegenerateLandmarks(_))
        ));
    }

    #[test]
    fn landmarks_must_be_inside_image() {
        let mut pts = vec![(1.0, 1.0); NUM_LANDMARKS];
        assert!(LandmarkSet::new(pts.clone(), 10, 10).is_ok());
        pts[3] = (10.0, 2.0);
        assert!(LandmarkSet::new(pts.clone(), 10, 10).is_err());
        assert!(LandmarkSet::new(pts[..67].to_vec(), 20, 20).is_err());
    }

    #[test]
    fn eye_center_rule_uses_centroids() {
        let face = symmetric_face();
        let c = au_centers(&face).unwrap();
        let p = face.normalized();
        let mean = |a: usize, b: usize| {
            let n = (b - a + 1) as f64;
            (
                p[a..=b].iter().map(|q| q.0).sum::<f64>() / n,
                p[a..=b].iter().map(|q| q.1).sum::<f64>() / n,
            )
        };
        let au7: Vec<_> = centers_for_au(7).into_iter().map(|i| c.centers[i].position).collect();
        let l = mean(36, 41);
        let r = mean(42, 47);
        assert!((au7[0].0 - l.0).abs() < 1e-12 && (au7[0].1 - l.1).abs() < 1e-12);
        assert!((au7[1].0 - r.0).abs() < 1e-12 && (au7[1].1 - r.1).abs() < 1e-12);
    }

    #[test]
    fn inner_brow_rule_is_half_scale_up() {
        let face = symmetric_face();
        let c = au_centers(&face).unwrap();
        let p = face.normalized();
        assert!((c.centers[0].position.1 - (p[21].1 - c.scale_d / 2.0)).abs() < 1e-12);
        assert!((c.centers[1].position.1 - (p[22].1 - c.scale_d / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_face_gives_mirrored_centers() {
        let c = au_centers(&symmetric_face()).unwrap();
        for pair in c.centers.chunks(2) {
            assert_eq!(pair[0].side, Side::Left);
            assert_eq!(pair[1].side, Side::Right);
            assert!((pair[0].position.0 + pair[1].position.0 - 100.0).abs() < 1e-9);
            assert!((pair[0].position.1 - pair[1].position.1).abs() < 1e-9);
        }
    }

    #[test]
    fn center_set_covers_all_aus_and_shares_lip_centers() {
        let c = au_centers(&symmetric_face()).unwrap();
        assert_eq!(c.centers.len(), NUM_CENTERS);
        for au in AU_IDS {
            assert!(!centers_for_au(au).is_empty(), "AU{au} has no center");
        }
        assert_eq!(centers_for_au(12), centers_for_au(14));
        assert_eq!(centers_for_au(12), centers_for_au(15));
        assert_eq!(centers_for_au(23), centers_for_au(24));
    }

    #[test]
    fn attention_weights_follow_manhattan_rule() {
        let c = au_centers(&symmetric_face()).unwrap();
        let map = attention_map(&c).unwrap();
        let (cx, cy) = c.rounded()[0];
        assert_eq!(map.at(cy, cx), 1.0);
        // AU1 box: only the inner-brow boxes reach these pixels
        let v3 = map.at(cy, cx - 3);
        assert!(v3 >= 0.715 - 1e-12);
    }

    #[test]
    fn single_center_box_values() {
        let mut centers = Vec::new();
        for i in 0..NUM_CENTERS {
            centers.push(AuCenter {
                position: (50.0, 50.0),
                au_ids: center_au_ids(i).to_vec(),
                side: if i % 2 == 0 { Side::Left } else { Side::Right },
            });
        }
        let set = AuCenterSet { centers, scale_d: 10.0 };
        let map = attention_map(&set).unwrap();
        assert_eq!(map.at(50, 50), 1.0);
        assert!((map.at(45, 45) - 0.05).abs() < 1e-12);
        assert!((map.at(51, 52) - 0.715).abs() < 1e-12);
        assert_eq!(map.at(44, 50), 0.0);
        assert_eq!(map.at(50, 56), 0.0);
    }

    #[test]
    fn map_center_examples() {
        assert_eq!(map_center_to_grid((50.0, 50.0), 28, 3), (14, 14));
        assert_eq!(map_center_to_grid((99.0, 99.0), 28, 3), (26, 26));
        assert_eq!(map_center_to_grid((0.0, 0.0), 28, 3), (1, 1));
        assert_eq!(map_center_to_grid((20.0, 80.0), 28, 3), (22, 6));
    }

    #[test]
    fn raw_grid_round_trip() {
        let map = attention_map(&au_centers(&symmetric_face()).unwrap()).unwrap();
        let back = AttentionMap::from_raw(&map.to_raw()).unwrap();
        for (a, b) in map.grid().iter().zip(back.grid()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(AttentionMap::from_raw(b"EACATT00").is_err());
    }

    #[test]
    fn landmark_json_round_trip() {
        let face = symmetric_face();
        let doc = serde_json::to_string(&face.to_file("a.pgm")).unwrap();
        let parsed: LandmarkFile = serde_json::from_str(&doc).unwrap();
        assert_eq!(parsed.into_landmarks().unwrap(), face);
    }
}
