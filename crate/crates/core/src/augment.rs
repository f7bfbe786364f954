//! Box augmentation: small-box filter, horizontal flip, per-image shift.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{BBox2D, GeometricLayout};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Boxes with area strictly below this fraction of the image area are dropped.
    pub min_area_fraction: f64,
    pub flip_p: f64,
    /// Each shift component is drawn uniformly from `[-max_shift_px, max_shift_px]`.
    pub max_shift_px: u32,
    /// View label mapping under horizontal flip. Must be an involution.
    pub view_swaps: BTreeMap<String, String>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        let mut view_swaps = BTreeMap::new();
        for (a, b) in [("front", "front"), ("back", "back"), ("front left", "front right"), ("back left", "back right")] {
            view_swaps.insert(a.to_string(), b.to_string());
            view_swaps.insert(b.to_string(), a.to_string());
        }
        Self { min_area_fraction: 0.002, flip_p: 0.5, max_shift_px: 256, view_swaps }
    }
}

impl AugmentPolicy {
    /// Parses a TOML policy. Missing keys take the defaults; a `view_swaps`
    /// table replaces the default one and may list each pair in one direction.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut policy: AugmentPolicy = toml::from_str(text).map_err(|e| Error::Decode(e.to_string()))?;
        let pairs: Vec<_> = policy.view_swaps.iter().map(|(a, b)| (a.clone(), b.clone())).collect();
        for (a, b) in pairs {
            match policy.view_swaps.get(&b) {
                Some(back) if *back != a => {
                    return Err(Error::Argument(format!("view swap {a:?} -> {b:?} conflicts with {b:?} -> {back:?}")));
                }
                Some(_) => {}
                None => {
                    policy.view_swaps.insert(b, a);
                }
            }
        }
        policy.check()?;
        Ok(policy)
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_p) {
            return Err(Error::Argument(format!("flip_p {} outside [0, 1]", self.flip_p)));
        }
        if !(0.0..=1.0).contains(&self.min_area_fraction) {
            return Err(Error::Argument(format!("min_area_fraction {} outside [0, 1]", self.min_area_fraction)));
        }
        for (a, b) in &self.view_swaps {
            if self.view_swaps.get(b) != Some(a) {
                return Err(Error::Argument(format!("view swap table is not an involution at {a:?}")));
            }
        }
        Ok(())
    }

    pub fn area_threshold(&self, layout: &GeometricLayout) -> f64 {
        self.min_area_fraction * layout.image_area()
    }
}

/// Drops boxes smaller than the policy's area floor, keeping survivor order.
pub fn filter_small(layout: &GeometricLayout, policy: &AugmentPolicy) -> GeometricLayout {
    let threshold = policy.area_threshold(layout);
    let mut out = layout.clone();
    out.boxes.retain(|b| b.bbox.area() >= threshold);
    out
}

/// Mirrors every box and the view label unconditionally.
pub fn flip_forced(layout: &GeometricLayout, policy: &AugmentPolicy) -> Result<GeometricLayout> {
    let mut out = layout.clone();
    if let Some(view) = &layout.view {
        let swapped = policy
            .view_swaps
            .get(view)
            .ok_or_else(|| Error::Argument(format!("view {view:?} has no entry in the view swap table")))?;
        out.view = Some(swapped.clone());
    }
    let w = layout.width as f64;
    for b in &mut out.boxes {
        let BBox2D { x1, y1, x2, y2 } = b.bbox;
        b.bbox = BBox2D::new(w - x2, y1, w - x1, y2);
    }
    Ok(out)
}

/// Whether the flip fires for this `(seed, image_id)`.
pub fn flip_fires(layout: &GeometricLayout, policy: &AugmentPolicy, seed: u64) -> bool {
    substream(seed, &layout.image_id, Stream::Flip).gen::<f64>() < policy.flip_p
}

pub fn flip_h(layout: &GeometricLayout, policy: &AugmentPolicy, seed: u64) -> Result<GeometricLayout> {
    if flip_fires(layout, policy, seed) {
        flip_forced(layout, policy)
    } else {
        Ok(layout.clone())
    }
}

/// The per-image offset drawn for this `(seed, image_id)`.
pub fn shift_offset(layout: &GeometricLayout, policy: &AugmentPolicy, seed: u64) -> (i64, i64) {
    let m = policy.max_shift_px as i64;
    let mut rng = substream(seed, &layout.image_id, Stream::Shift);
    let dx = rng.gen_range(-m..=m);
    let dy = rng.gen_range(-m..=m);
    (dx, dy)
}

/// Translates all boxes by `(dx, dy)`, clips to the frame and drops boxes that
/// leave the frame or fall below the area floor.
pub fn shift_by(layout: &GeometricLayout, policy: &AugmentPolicy, dx: i64, dy: i64) -> GeometricLayout {
    let (w, h) = (layout.width as f64, layout.height as f64);
    let threshold = policy.area_threshold(layout);
    let mut out = layout.clone();
    out.boxes.clear();
    for b in &layout.boxes {
        let moved = b.bbox.translate(dx as f64, dy as f64);
        if moved.x1 > w || moved.x2 < 0.0 || moved.y1 > h || moved.y2 < 0.0 {
            continue;
        }
        let clipped = moved.clip(w, h);
        if clipped.area() < threshold {
            continue;
        }
        let mut nb = b.clone();
        nb.bbox = clipped;
        out.boxes.push(nb);
    }
    out
}

pub fn shift(layout: &GeometricLayout, policy: &AugmentPolicy, seed: u64) -> GeometricLayout {
    let (dx, dy) = shift_offset(layout, policy, seed);
    shift_by(layout, policy, dx, dy)
}

/// filter, flip, shift, filter.
pub fn augment(layout: &GeometricLayout, policy: &AugmentPolicy, seed: u64) -> Result<GeometricLayout> {
    let filtered = filter_small(layout, policy);
    let flipped = flip_h(&filtered, policy, seed)?;
    let shifted = shift(&flipped, policy, seed);
    Ok(filter_small(&shifted, policy))
}
