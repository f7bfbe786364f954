//! Annotation ingest: COCO JSON, the canonical JSON Lines manifest, class
//! statistics and seeded few-shot subsets.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::layout::{AnnotatedBox, Attributes, BBox2D, ClassTable, GeometricLayout};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub categories: ClassTable,
    pub layouts: Vec<GeometricLayout>,
    pub source: String,
}

impl DatasetManifest {
    pub fn annotation_count(&self) -> usize {
        self.layouts.iter().map(|l| l.boxes.len()).sum()
    }

    pub fn find(&self, image_id: &str) -> Option<&GeometricLayout> {
        self.layouts.iter().find(|l| l.image_id == image_id)
    }
}

/// Accepts ids written either as JSON strings or as integers.
pub(crate) fn id_string<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Str(String),
        Num(u64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Str(s) => s,
        Id::Num(n) => n.to_string(),
    })
}

// ---- COCO ----

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Parses a COCO detection file. Boxes are converted from `[x, y, w, h]` to
/// corners; images without annotations are kept with empty box lists.
pub fn parse_coco(bytes: &[u8], source: &str) -> Result<DatasetManifest> {
    let coco: CocoFile = serde_json::from_slice(bytes).map_err(|e| Error::json(bytes, e))?;
    let mut categories = ClassTable::new();
    for c in &coco.categories {
        categories.insert(c.id, c.name.clone())?;
    }
    let mut index = std::collections::HashMap::with_capacity(coco.images.len());
    let mut layouts = Vec::with_capacity(coco.images.len());
    for img in &coco.images {
        if index.insert(img.id, layouts.len()).is_some() {
            return Err(Error::Argument(format!("duplicate image id {}", img.id)));
        }
        layouts.push(GeometricLayout::new(img.id.to_string(), img.width, img.height));
    }
    for a in &coco.annotations {
        let name = categories
            .name(a.category_id)
            .ok_or(Error::UnknownCategory { annotation_id: a.id, category_id: a.category_id })?;
        let &slot = index.get(&a.image_id).ok_or(Error::UnknownImage { annotation_id: a.id, image_id: a.image_id })?;
        let [x, y, w, h] = a.bbox;
        layouts[slot].boxes.push(AnnotatedBox::new(a.category_id, name, BBox2D::from_xywh(x, y, w, h)));
    }
    Ok(DatasetManifest { categories, layouts, source: source.to_string() })
}

// ---- canonical manifest ----

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    #[serde(deserialize_with = "id_string")]
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    view: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weather: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timeofday: Option<String>,
    #[serde(default)]
    boxes: Vec<ManifestBox>,
}

#[derive(Serialize, Deserialize)]
struct ManifestBox {
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_id: Option<u64>,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestParse {
    pub manifest: DatasetManifest,
    /// Non-fatal problems, e.g. unknown view labels that were dropped.
    pub warnings: Vec<String>,
}

/// Parses the JSON Lines manifest. Views outside `views` are dropped with a
/// warning. Boxes without a `class_id` reuse the id already bound to their
/// class name, or get the next free id.
pub fn parse_manifest(bytes: &[u8], views: &[String], source: &str) -> Result<ManifestParse> {
    parse_lines(bytes, Some(views), source)
}

fn parse_lines(bytes: &[u8], views: Option<&[String]>, source: &str) -> Result<ManifestParse> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Decode(format!("manifest is not UTF-8: {e}")))?;
    let mut out = ManifestParse::default();
    out.manifest.source = source.to_string();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Line { line: lineno, message };
        let raw: ManifestLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !seen.insert(raw.image_id.clone()) {
            return Err(err(format!("duplicate image_id {:?}", raw.image_id)));
        }
        let mut layout = GeometricLayout::new(raw.image_id, raw.width, raw.height);
        layout.attributes = Attributes { weather: raw.weather, time_of_day: raw.timeofday };
        match raw.view {
            Some(v) if views.is_some_and(|set| !set.contains(&v)) => {
                out.warnings.push(format!("line {lineno}: unknown view {v:?} dropped"));
            }
            v => layout.view = v,
        }
        let table = &mut out.manifest.categories;
        for b in raw.boxes {
            let id = match b.class_id.or_else(|| table.id(&b.class)) {
                Some(id) => id,
                None => table.next_id(),
            };
            table.insert(id, b.class.clone()).map_err(|e| err(e.to_string()))?;
            layout.boxes.push(AnnotatedBox::new(id, b.class, BBox2D::new(b.x1, b.y1, b.x2, b.y2)));
        }
        out.manifest.layouts.push(layout);
    }
    Ok(out)
}

fn manifest_line(layout: &GeometricLayout) -> ManifestLine {
    ManifestLine {
        image_id: layout.image_id.clone(),
        width: layout.width,
        height: layout.height,
        view: layout.view.clone(),
        weather: layout.attributes.weather.clone(),
        timeofday: layout.attributes.time_of_day.clone(),
        boxes: layout
            .boxes
            .iter()
            .map(|b| ManifestBox {
                class: b.class_name.clone(),
                class_id: Some(b.class_id),
                x1: b.bbox.x1,
                y1: b.bbox.y1,
                x2: b.bbox.x2,
                y2: b.bbox.y2,
            })
            .collect(),
    }
}

/// Canonical single-line JSON for one layout, without the trailing newline.
pub fn layout_to_json(layout: &GeometricLayout) -> String {
    serde_json::to_string(&manifest_line(layout)).expect("manifest lines serialize")
}

/// Parses one manifest line without view filtering.
pub fn layout_from_json(line: &str) -> Result<GeometricLayout> {
    let mut parsed = parse_lines(line.as_bytes(), None, "<line>")?;
    parsed.manifest.layouts.pop().ok_or_else(|| Error::Argument("empty layout record".into()))
}

/// Canonical manifest bytes: one line per layout, `\n` terminated.
pub fn write_manifest(manifest: &DatasetManifest) -> Vec<u8> {
    let mut out = Vec::new();
    for l in &manifest.layouts {
        serde_json::to_writer(&mut out, &manifest_line(l)).expect("manifest lines serialize");
        out.push(b'\n');
    }
    out
}

// ---- statistics ----

pub const DEFAULT_QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub class_id: u64,
    pub name: String,
    pub count: usize,
    pub fraction: f64,
    pub rare: bool,
    /// `(q, area)` pairs; empty when the class has no boxes.
    pub area_quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub total: usize,
    pub images: usize,
    pub rare_fraction: f64,
    pub classes: Vec<ClassStat>,
}

/// Linear interpolation between order statistics at rank `q * (n - 1)`.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    let h = q * (values.len() - 1) as f64;
    let lo = h.floor() as usize;
    let n = values.len();
    let (_, &mut a, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if lo + 1 >= n || h == lo as f64 {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + (h - lo as f64) * (b - a)
}

/// Per-class counts, fractions and box-area quantiles. Classes whose fraction
/// is below `rare_fraction` are flagged.
pub fn stats(manifest: &DatasetManifest, rare_fraction: f64, quantiles: &[f64]) -> ClassStats {
    let total = manifest.annotation_count();
    let mut areas: std::collections::BTreeMap<u64, Vec<f64>> =
        manifest.categories.iter().map(|(id, _)| (id, Vec::new())).collect();
    for b in manifest.layouts.iter().flat_map(|l| &l.boxes) {
        areas.entry(b.class_id).or_default().push(b.bbox.area());
    }
    let classes = areas
        .into_iter()
        .map(|(class_id, mut a)| {
            let count = a.len();
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let area_quantiles =
                if a.is_empty() { Vec::new() } else { quantiles.iter().map(|&q| (q, quantile(&mut a, q))).collect() };
            ClassStat {
                class_id,
                name: manifest.categories.name(class_id).unwrap_or_default().to_string(),
                count,
                fraction,
                rare: fraction < rare_fraction,
                area_quantiles,
            }
        })
        .collect();
    ClassStats { total, images: manifest.layouts.len(), rare_fraction, classes }
}

// ---- subsets ----

/// Samples `round(fraction * N)` images without replacement, keeping their
/// original order. With `nested`, every fraction takes a prefix of the same
/// seeded permutation, so smaller subsets are contained in larger ones.
pub fn split_subset(manifest: &DatasetManifest, fraction: f64, seed: u64, nested: bool) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = manifest.layouts.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let key = if nested { String::new() } else { format!("{fraction}") };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, &key, Stream::Subset));
    let mut chosen = perm[..k].to_vec();
    chosen.sort_unstable();
    Ok(DatasetManifest {
        categories: manifest.categories.clone(),
        layouts: chosen.into_iter().map(|i| manifest.layouts[i].clone()).collect(),
        source: format!("{}#subset(fraction={fraction},seed={seed},nested={nested})", manifest.source),
    })
}
