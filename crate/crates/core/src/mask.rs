//! Foreground prior re-weighting masks at latent resolution.
//!
//! Foreground cells get `w / c^p`, where `c` is the latent-cell area of the
//! smallest box covering the cell; background cells get `1 / (H' W')^p`.
//! Normalization rescales so the mask sums to `H' W'`; the total is taken as
//! `background_cells * background + (foreground values summed row-major)` so a
//! box-free mask normalizes to exactly 1.0.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layout::{BBox2D, GeometricLayout};

pub const DEFAULT_W: f64 = 2.0;
pub const DEFAULT_P: f64 = 0.2;

pub const MASK_MAGIC: &[u8; 4] = b"GEOM";
/// magic, u32 H', u32 W', u8 normalized, f64 w, f64 p
pub const MASK_HEADER_LEN: usize = 4 + 4 + 4 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskParams {
    pub w: f64,
    pub p: f64,
    pub normalize: bool,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { w: DEFAULT_W, p: DEFAULT_P, normalize: true }
    }
}

impl MaskParams {
    pub fn check(&self) -> Result<()> {
        if !(self.w >= 1.0 && self.w.is_finite()) {
            return Err(Error::Argument(format!("foreground weight w = {} must be >= 1", self.w)));
        }
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(Error::Argument(format!("area exponent p = {} must be >= 0", self.p)));
        }
        Ok(())
    }
}

/// Half-open cell extent `[left, right) x [top, bottom)` on the latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl LatentBox {
    pub fn area(&self) -> u64 {
        (self.right - self.left) as u64 * (self.bottom - self.top) as u64
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        (self.left..self.right).contains(&col) && (self.top..self.bottom).contains(&row)
    }
}

fn latent_span(lo: f64, hi: f64, extent: u32, cells: u32) -> (u32, u32) {
    let scale = |v: f64| v * cells as f64 / extent as f64;
    let clamp = |v: f64| v.max(0.0).min(cells as f64) as u32;
    let mut a = clamp(scale(lo).floor());
    let mut b = clamp(scale(hi).ceil());
    if b <= a {
        if a >= cells {
            a = cells - 1;
        }
        b = a + 1;
    }
    (a, b)
}

/// Scales a pixel box onto a `latent_w x latent_h` grid: near edges floor,
/// far edges ceil, at least one cell per axis.
pub fn to_latent(b: &BBox2D, width: u32, height: u32, latent_w: u32, latent_h: u32) -> LatentBox {
    assert!(latent_w >= 1 && latent_h >= 1, "latent grid must be non-empty");
    let (left, right) = latent_span(b.x1, b.x2, width, latent_w);
    let (top, bottom) = latent_span(b.y1, b.y2, height, latent_h);
    LatentBox { left, top, right, bottom }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightMask {
    pub height: u32,
    pub width: u32,
    pub params: MaskParams,
    /// Row-major, `height * width` entries.
    pub values: Vec<f64>,
}

impl ReweightMask {
    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Builds the re-weighting mask for `layout` on a `latent_w x latent_h` grid.
pub fn build_mask(layout: &GeometricLayout, latent_w: u32, latent_h: u32, params: MaskParams) -> Result<ReweightMask> {
    params.check()?;
    if latent_w == 0 || latent_h == 0 {
        return Err(Error::Argument(format!("latent grid {latent_w}x{latent_h} must be non-empty")));
    }
    let cells = latent_w as usize * latent_h as usize;

    // Paint largest first so the smallest covering box wins each cell.
    let mut boxes: Vec<LatentBox> = layout
        .boxes
        .iter()
        .map(|b| to_latent(&b.bbox, layout.width, layout.height, latent_w, latent_h))
        .collect();
    boxes.sort_by_key(|b| std::cmp::Reverse(b.area()));
    let mut area = vec![0u64; cells];
    for b in &boxes {
        let c = b.area();
        for row in b.top..b.bottom {
            let start = row as usize * latent_w as usize;
            area[start + b.left as usize..start + b.right as usize].fill(c);
        }
    }

    let background = 1.0 / (cells as f64).powf(params.p);
    let mut values: Vec<f64> =
        area.iter().map(|&c| if c == 0 { background } else { params.w / (c as f64).powf(params.p) }).collect();
    if params.normalize {
        let background_cells = area.iter().filter(|&&c| c == 0).count();
        let foreground: f64 = values.iter().zip(&area).filter(|(_, &c)| c != 0).map(|(v, _)| v).sum();
        let total = background_cells as f64 * background + foreground;
        for v in &mut values {
            *v = cells as f64 * *v / total;
        }
    }
    Ok(ReweightMask { height: latent_h, width: latent_w, params, values })
}

/// Binary form: `"GEOM"`, u32 H', u32 W', u8 normalized, f64 w, f64 p, then
/// `H' * W'` f32 values, all little-endian, row-major.
pub fn encode_mask(mask: &ReweightMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + mask.values.len() * 4);
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&mask.height.to_le_bytes());
    out.extend_from_slice(&mask.width.to_le_bytes());
    out.push(mask.params.normalize as u8);
    out.extend_from_slice(&mask.params.w.to_le_bytes());
    out.extend_from_slice(&mask.params.p.to_le_bytes());
    for &v in &mask.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses a GEOM buffer. Values come back widened from f32.
pub fn decode_mask(bytes: &[u8]) -> Result<ReweightMask> {
    if bytes.len() < MASK_HEADER_LEN {
        return Err(Error::Decode(format!("mask file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MASK_MAGIC {
        return Err(Error::Decode("bad mask magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let height = u32_at(4);
    let width = u32_at(8);
    let normalize = match bytes[12] {
        0 => false,
        1 => true,
        b => return Err(Error::Decode(format!("bad normalized flag {b}"))),
    };
    let params = MaskParams { w: f64_at(13), p: f64_at(21), normalize };
    let n = (height as usize)
        .checked_mul(width as usize)
        .filter(|n| n.checked_mul(4).and_then(|b| b.checked_add(MASK_HEADER_LEN)) == Some(bytes.len()))
        .ok_or_else(|| Error::Decode(format!("payload length {} does not match {height}x{width}", bytes.len())))?;
    let values: Vec<f64> = bytes[MASK_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    debug_assert_eq!(values.len(), n);
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Decode(format!("mask value {v} is not positive and finite")));
    }
    Ok(ReweightMask { height, width, params, values })
}

pub fn read_mask(path: &Path) -> Result<ReweightMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

/// Writes the GEOM file atomically.
pub fn mask_to_file(mask: &ReweightMask, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &encode_mask(mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub image_id: String,
    pub height: u32,
    pub width: u32,
    pub params: MaskParams,
    /// SHA-256 of the GEOM bytes, lowercase hex.
    pub checksum: String,
}

impl MaskSidecar {
    pub fn new(image_id: &str, mask: &ReweightMask, encoded: &[u8]) -> Self {
        let digest = Sha256::digest(encoded);
        Self {
            image_id: image_id.to_string(),
            height: mask.height,
            width: mask.width,
            params: mask.params,
            checksum: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::AnnotatedBox;

    fn layout(boxes: &[(f64, f64, f64, f64)], w: u32, h: u32) -> GeometricLayout {
        let mut l = GeometricLayout::new("m", w, h);
        for &(x1, y1, x2, y2) in boxes {
            l.boxes.push(AnnotatedBox::new(1, "car", BBox2D::new(x1, y1, x2, y2)));
        }
        l
    }

    #[test]
    fn latent_scaling() {
        let full = to_latent(&BBox2D::new(0.0, 0.0, 800.0, 456.0), 800, 456, 100, 57);
        assert_eq!(full, LatentBox { left: 0, top: 0, right: 100, bottom: 57 });
        assert_eq!(full.area(), 5700);

        let one = to_latent(&BBox2D::new(0.0, 0.0, 8.0, 8.0), 800, 456, 100, 57);
        assert_eq!(one, LatentBox { left: 0, top: 0, right: 1, bottom: 1 });

        let tiny = to_latent(&BBox2D::new(3.0, 3.0, 4.0, 4.0), 800, 456, 100, 57);
        assert_eq!(tiny, LatentBox { left: 0, top: 0, right: 1, bottom: 1 });

        let edge = to_latent(&BBox2D::new(800.0, 456.0, 800.0, 456.0), 800, 456, 100, 57);
        assert_eq!(edge, LatentBox { left: 99, top: 56, right: 100, bottom: 57 });
    }

    #[test]
    fn hand_case() {
        let m = build_mask(&layout(&[(0.0, 0.0, 2.0, 2.0)], 4, 4), 4, 4, MaskParams { w: 2.0, p: 0.0, normalize: true })
            .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r < 2 && c < 2 { 1.6 } else { 0.8 };
                assert_eq!(m.get(r, c), expected);
            }
        }
    }

    #[test]
    fn no_boxes_is_all_ones() {
        for p in [0.0, 0.2, 1.5] {
            let m = build_mask(&layout(&[], 64, 64), 8, 8, MaskParams { w: 3.0, p, normalize: true }).unwrap();
            assert!(m.values.iter().all(|&v| v == 1.0), "p = {p}");
        }
    }

    #[test]
    fn defaults_normalize() {
        let l = layout(&[(10.0, 10.0, 200.0, 300.0), (400.0, 100.0, 430.0, 120.0)], 800, 456);
        let m = build_mask(&l, 100, 57, MaskParams::default()).unwrap();
        assert!((m.sum() - 5700.0).abs() / 5700.0 < 1e-4);
        assert_eq!(MaskParams::default(), MaskParams { w: 2.0, p: 0.2, normalize: true });
    }

    #[test]
    fn smallest_box_wins_overlap() {
        let l = layout(&[(0.0, 0.0, 8.0, 8.0), (0.0, 0.0, 2.0, 2.0)], 8, 8);
        let m = build_mask(&l, 8, 8, MaskParams { w: 2.0, p: 1.0, normalize: false }).unwrap();
        assert_eq!(m.get(0, 0), 2.0 / 4.0);
        assert_eq!(m.get(5, 5), 2.0 / 64.0);
    }

    #[test]
    fn rejects_bad_params() {
        let l = layout(&[], 8, 8);
        assert!(build_mask(&l, 8, 8, MaskParams { w: 0.5, p: 0.0, normalize: true }).is_err());
        assert!(build_mask(&l, 8, 8, MaskParams { w: 2.0, p: -1.0, normalize: true }).is_err());
        assert!(build_mask(&l, 0, 8, MaskParams::default()).is_err());
    }

    #[test]
    fn geom_header_offsets() {
        let m = build_mask(&layout(&[(0.0, 0.0, 2.0, 2.0)], 4, 4), 4, 3, MaskParams::default()).unwrap();
        let bytes = encode_mask(&m);
        assert_eq!(MASK_HEADER_LEN, 29);
        assert_eq!(&bytes[0..4], b"GEOM");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
        assert_eq!(bytes[12], 1);
        assert_eq!(&bytes[13..21], &2.0f64.to_le_bytes());
        assert_eq!(&bytes[21..29], &0.2f64.to_le_bytes());
        assert_eq!(&bytes[29..33], &(m.values[0] as f32).to_le_bytes());
        assert_eq!(bytes.len(), 29 + 12 * 4);
    }

    #[test]
    fn geom_round_trip_and_truncation() {
        let m = build_mask(&layout(&[(1.0, 1.0, 5.0, 7.0)], 16, 16), 8, 8, MaskParams::default()).unwrap();
        let bytes = encode_mask(&m);
        let back = decode_mask(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.to_f32(), m.to_f32());
        for cut in [0, 4, 28, 29, bytes.len() - 1] {
            assert!(decode_mask(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_mask(&bad).is_err());
    }

    #[test]
    fn sidecar_checksum_is_sha256() {
        let m = build_mask(&layout(&[], 8, 8), 2, 2, MaskParams::default()).unwrap();
        let bytes = encode_mask(&m);
        let s = MaskSidecar::new("x", &m, &bytes);
        assert_eq!(s.checksum.len(), 64);
        assert_ne!(s.checksum, MaskSidecar::new("x", &m, b"").checksum);
        assert_eq!(
            MaskSidecar::new("x", &m, b"").checksum,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
