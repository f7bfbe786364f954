//! Independent oracles and random instance generators shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

use geoprompt::geo3d::{Box3D, CameraRig};
use geoprompt::ingest::DatasetManifest;
use geoprompt::layout::{AnnotatedBox, BBox2D, GeometricLayout, GridSpec};
use geoprompt::mask::MaskParams;
use geoprompt::metrics::Detection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- codec

/// Bin index by linear scan: the largest `k` with `k <= v / extent * bins`,
/// capped at the last bin.
pub fn brute_bin(v: f64, extent: u32, bins: u32) -> u32 {
    let scaled = v / extent as f64 * bins as f64;
    let mut k = 0;
    while k + 1 < bins && ((k + 1) as f64) <= scaled {
        k += 1;
    }
    k
}

pub fn brute_token_index(x: f64, y: f64, grid: &GridSpec) -> usize {
    brute_bin(y, grid.height, grid.h_bins) as usize * grid.w_bins as usize + brute_bin(x, grid.width, grid.w_bins) as usize
}

// ---------------------------------------------------------------- layouts

const CLASSES: [&str; 4] = ["car", "pedestrian", "traffic cone", "barrier"];

pub fn random_box(r: &mut impl Rng, w: u32, h: u32) -> BBox2D {
    let (w, h) = (w as f64, h as f64);
    let (a, b) = (r.gen_range(0.0..=w), r.gen_range(0.0..=w));
    let (c, d) = (r.gen_range(0.0..=h), r.gen_range(0.0..=h));
    BBox2D::new(a.min(b), c.min(d), a.max(b), c.max(d))
}

/// Box with integer-ish size biased toward small objects.
pub fn random_small_box(r: &mut impl Rng, w: u32, h: u32) -> BBox2D {
    let bw = r.gen_range(1.0..=(w as f64 / 3.0));
    let bh = r.gen_range(1.0..=(h as f64 / 3.0));
    let x = r.gen_range(0.0..=(w as f64 - bw));
    let y = r.gen_range(0.0..=(h as f64 - bh));
    BBox2D::new(x, y, x + bw, y + bh)
}

pub fn random_layout(r: &mut impl Rng, id: &str, w: u32, h: u32, max_boxes: usize) -> GeometricLayout {
    let views = ["front", "front left", "front right", "back", "back left", "back right"];
    let mut l = GeometricLayout::new(id, w, h).with_view(views[r.gen_range(0..views.len())]);
    for _ in 0..r.gen_range(0..=max_boxes) {
        let k = r.gen_range(0..CLASSES.len());
        let b = if r.gen_bool(0.5) { random_box(r, w, h) } else { random_small_box(r, w, h) };
        l.boxes.push(AnnotatedBox::new(k as u64 + 1, CLASSES[k], b));
    }
    l
}

pub fn class_table() -> geoprompt::ClassTable {
    let mut t = geoprompt::ClassTable::new();
    for (k, name) in CLASSES.iter().enumerate() {
        t.insert(k as u64 + 1, *name).unwrap();
    }
    t
}

// ---------------------------------------------------------------- mask

pub fn oracle_extent(lo: f64, hi: f64, extent: u32, cells: u32) -> (u32, u32) {
    let mut a = ((lo * cells as f64 / extent as f64).floor().max(0.0) as u32).min(cells);
    let mut b = ((hi * cells as f64 / extent as f64).ceil().max(0.0) as u32).min(cells);
    if b <= a {
        a = a.min(cells - 1);
        b = a + 1;
    }
    (a, b)
}

/// Cell-by-cell evaluation: find every box covering the cell, take the
/// smallest area, apply the weighting formula, normalize.
pub fn oracle_mask(layout: &GeometricLayout, lw: u32, lh: u32, params: MaskParams) -> Vec<f64> {
    let extents: Vec<((u32, u32), (u32, u32))> = layout
        .boxes
        .iter()
        .map(|b| {
            (oracle_extent(b.bbox.x1, b.bbox.x2, layout.width, lw), oracle_extent(b.bbox.y1, b.bbox.y2, layout.height, lh))
        })
        .collect();
    let cells = (lw * lh) as f64;
    let background = 1.0 / cells.powf(params.p);
    let mut raw = Vec::new();
    let mut is_fg = Vec::new();
    for row in 0..lh {
        for col in 0..lw {
            let mut best: Option<u64> = None;
            for &((l, r), (t, b)) in &extents {
                if col >= l && col < r && row >= t && row < b {
                    let c = (r - l) as u64 * (b - t) as u64;
                    best = Some(best.map_or(c, |x| x.min(c)));
                }
            }
            match best {
                Some(c) => {
                    raw.push(params.w / (c as f64).powf(params.p));
                    is_fg.push(true);
                }
                None => {
                    raw.push(background);
                    is_fg.push(false);
                }
            }
        }
    }
    if params.normalize {
        let n_bg = is_fg.iter().filter(|f| !**f).count();
        let mut fg_sum = 0.0;
        for (v, f) in raw.iter().zip(&is_fg) {
            if *f {
                fg_sum += v;
            }
        }
        let total = n_bg as f64 * background + fg_sum;
        raw.iter().map(|v| cells * v / total).collect()
    } else {
        raw
    }
}

/// Per-cell area of the smallest covering box (0 for background).
pub fn oracle_cover_area(layout: &GeometricLayout, lw: u32, lh: u32) -> Vec<u64> {
    let mut out = vec![0u64; (lw * lh) as usize];
    for b in &layout.boxes {
        let (l, r) = oracle_extent(b.bbox.x1, b.bbox.x2, layout.width, lw);
        let (t, bt) = oracle_extent(b.bbox.y1, b.bbox.y2, layout.height, lh);
        let c = (r - l) as u64 * (bt - t) as u64;
        for row in t..bt {
            for col in l..r {
                let cell = &mut out[(row * lw + col) as usize];
                if *cell == 0 || c < *cell {
                    *cell = c;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- projection

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Homogeneous 4x4 then 3x3 multiply, then perspective division.
pub fn oracle_project(p: [f64; 3], rig: &CameraRig) -> Option<(f64, f64)> {
    let e: Vec<Vec<f64>> = rig.extrinsics().iter().map(|r| r.to_vec()).collect();
    let k: Vec<Vec<f64>> = rig.intrinsics().iter().map(|r| r.to_vec()).collect();
    let cam = matmul(&e, &[vec![p[0]], vec![p[1]], vec![p[2]], vec![1.0]]);
    if cam[2][0] <= 0.0 {
        return None;
    }
    let img = matmul(&k, &cam[..3]);
    Some((img[0][0] / img[2][0], img[1][0] / img[2][0]))
}

pub fn random_rotation(r: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rigid(rot: [[f64; 3]; 3], t: [f64; 3]) -> [[f64; 4]; 4] {
    let mut e = [[0.0; 4]; 4];
    for i in 0..3 {
        e[i][..3].copy_from_slice(&rot[i]);
        e[i][3] = t[i];
    }
    e[3][3] = 1.0;
    e
}

/// Inverse of a rigid transform.
pub fn rigid_inverse(e: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut rt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rt[i][j] = e[j][i];
        }
    }
    let t = [e[0][3], e[1][3], e[2][3]];
    let nt: [f64; 3] = std::array::from_fn(|i| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]));
    rigid(rt, nt)
}

pub fn apply(e: &[[f64; 4]; 4], p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| e[i][0] * p[0] + e[i][1] * p[1] + e[i][2] * p[2] + e[i][3])
}

pub fn compose(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn random_rig(r: &mut impl Rng) -> CameraRig {
    let fx = r.gen_range(300.0..1500.0);
    let fy = fx * r.gen_range(0.9..1.1);
    let e = rigid(random_rotation(r), std::array::from_fn(|_| r.gen_range(-10.0..10.0)));
    CameraRig::from_params(fx, fy, r.gen_range(300.0..500.0), r.gen_range(150.0..300.0), e).unwrap()
}

/// A box placed mostly in front of the rig's camera.
pub fn random_box3d(r: &mut impl Rng, rig: &CameraRig) -> Box3D {
    let cam_center = [r.gen_range(-5.0..5.0), r.gen_range(-3.0..3.0), r.gen_range(4.0..60.0)];
    let world_center = apply(&rigid_inverse(rig.extrinsics()), cam_center);
    Box3D::from_center(world_center, r.gen_range(0.5..6.0), r.gen_range(0.5..3.0), r.gen_range(0.5..3.0), r.gen_range(-3.2..3.2))
        .unwrap()
}

// ---------------------------------------------------------------- average precision

pub const THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
const RANGES: [(f64, f64); 3] = [(0.0, 1e10), (1024.0, 9216.0), (9216.0, 1e10)];

fn oracle_iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let aa = (a.x2 - a.x1) * (a.y2 - a.y1);
    let ab = (b.x2 - b.x1) * (b.y2 - b.y1);
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    ix * iy / (aa + ab - ix * iy)
}

/// Enumerates every injective partial assignment of detections (rank order)
/// to ground truths and keeps those consistent with the greedy rule: each
/// detection takes the best available in-range candidate, else the best
/// out-of-range candidate, highest IoU first, lowest index on ties. Exactly
/// one assignment must survive.
fn exhaustive_match(dets: &[BBox2D], gts: &[BBox2D], ignore: &[bool], t: f64) -> Vec<Option<usize>> {
    fn rec(d: usize, n_det: usize, n_gt: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, all: &mut Vec<Vec<Option<usize>>>) {
        if d == n_det {
            all.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(d + 1, n_det, n_gt, used, cur, all);
        cur.pop();
        for g in 0..n_gt {
            if !used[g] {
                used[g] = true;
                cur.push(Some(g));
                rec(d + 1, n_det, n_gt, used, cur, all);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut all = Vec::new();
    rec(0, dets.len(), gts.len(), &mut vec![false; gts.len()], &mut Vec::new(), &mut all);

    let consistent = |a: &Vec<Option<usize>>| {
        let mut used = vec![false; gts.len()];
        for (d, choice) in a.iter().enumerate() {
            let cands: Vec<usize> = (0..gts.len()).filter(|&g| !used[g] && oracle_iou(&dets[d], &gts[g]) >= t).collect();
            let pool: Vec<usize> = if cands.iter().any(|&g| !ignore[g]) {
                cands.into_iter().filter(|&g| !ignore[g]).collect()
            } else {
                cands
            };
            let mut want: Option<usize> = None;
            for g in pool {
                let better = match want {
                    None => true,
                    Some(w) => oracle_iou(&dets[d], &gts[g]) > oracle_iou(&dets[d], &gts[w]),
                };
                if better {
                    want = Some(g);
                }
            }
            if *choice != want {
                return false;
            }
            if let Some(g) = want {
                used[g] = true;
            }
        }
        true
    };
    let survivors: Vec<_> = all.into_iter().filter(consistent).collect();
    assert_eq!(survivors.len(), 1, "greedy rule must pick exactly one assignment");
    survivors.into_iter().next().unwrap()
}

fn oracle_ap(mut ranked: Vec<(f64, bool, bool)>, positives: usize) -> f64 {
    // stable: earlier images / earlier ranks first among equal scores
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let kept: Vec<bool> = ranked.iter().filter(|r| !r.2).map(|r| r.1).collect();
    let mut pts = Vec::new();
    let mut tp = 0;
    for (i, &hit) in kept.iter().enumerate() {
        tp += hit as usize;
        pts.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = pts.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub per_class: Vec<(u64, Option<f64>)>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Full report computed with the exhaustive matcher (max 100 detections per
/// image and class, 101 recall points).
pub fn oracle_evaluate(preds: &[Detection], truths: &DatasetManifest) -> OracleReport {
    let mut class_ids: Vec<u64> = truths.categories.iter().map(|(id, _)| id).collect();
    for l in &truths.layouts {
        for b in &l.boxes {
            if !class_ids.contains(&b.class_id) {
                class_ids.push(b.class_id);
            }
        }
    }
    class_ids.sort_unstable();

    // per class, per range: Some(per-threshold APs)
    let mut table: Vec<(u64, [Option<Vec<f64>>; 3])> = Vec::new();
    for &k in &class_ids {
        let mut per_range: [Option<Vec<f64>>; 3] = [None, None, None];
        for (ri, &(lo, hi)) in RANGES.iter().enumerate() {
            let in_range = |b: &BBox2D| {
                let a = (b.x2 - b.x1) * (b.y2 - b.y1);
                a >= lo && a <= hi
            };
            let mut positives = 0;
            let mut per_t: Vec<Vec<(f64, bool, bool)>> = vec![Vec::new(); THRESHOLDS.len()];
            for l in &truths.layouts {
                let gts: Vec<BBox2D> = l.boxes.iter().filter(|b| b.class_id == k).map(|b| b.bbox).collect();
                let ignore: Vec<bool> = gts.iter().map(|g| !in_range(g)).collect();
                positives += ignore.iter().filter(|i| !**i).count();
                let mut dets: Vec<&Detection> = preds.iter().filter(|p| p.image_id == l.image_id && p.class_id == k).collect();
                dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                dets.truncate(100);
                let boxes: Vec<BBox2D> = dets.iter().map(|d| d.bbox).collect();
                for (ti, &t) in THRESHOLDS.iter().enumerate() {
                    let m = exhaustive_match(&boxes, &gts, &ignore, t);
                    for (d, choice) in m.iter().enumerate() {
                        let ig = match choice {
                            Some(g) => ignore[*g],
                            None => !in_range(&boxes[d]),
                        };
                        per_t[ti].push((dets[d].score, choice.is_some(), ig));
                    }
                }
            }
            if positives > 0 {
                per_range[ri] = Some(per_t.into_iter().map(|r| oracle_ap(r, positives)).collect());
            }
        }
        table.push((k, per_range));
    }
    let class_mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let over = |ri: usize| -> Vec<f64> { table.iter().filter_map(|(_, r)| r[ri].as_ref().map(class_mean)).collect() };
    let at = |ti: usize| -> Vec<f64> { table.iter().filter_map(|(_, r)| r[0].as_ref().map(|v| v[ti])).collect() };
    OracleReport {
        map: mean(&over(0)),
        ap50: mean(&at(0)),
        ap75: mean(&at(5)),
        ap_medium: mean(&over(1)),
        ap_large: mean(&over(2)),
        per_class: table.iter().map(|(k, r)| (*k, r[0].as_ref().map(class_mean))).collect(),
    }
}

/// Small random evaluation case: up to `max_images` images, <= 5 boxes each,
/// <= 3 classes; detections are jittered copies of ground truth plus clutter.
pub fn random_eval_case(r: &mut impl Rng, max_images: usize) -> (Vec<Detection>, DatasetManifest) {
    let mut m = DatasetManifest::default();
    let n_classes = r.gen_range(1..=3u64);
    for k in 1..=n_classes {
        m.categories.insert(k, format!("class{k}")).unwrap();
    }
    let mut preds = Vec::new();
    for i in 0..r.gen_range(1..=max_images) {
        let id = format!("img{i}");
        let mut l = GeometricLayout::new(id.clone(), 400, 300);
        for _ in 0..r.gen_range(0..=5) {
            let k = r.gen_range(1..=n_classes);
            let s = r.gen_range(10.0..150.0);
            let x = r.gen_range(0.0..(400.0 - s));
            let y = r.gen_range(0.0..(300.0 - s));
            l.boxes.push(AnnotatedBox::new(k, format!("class{k}"), BBox2D::new(x, y, x + s, y + s * r.gen_range(0.5..1.0))));
        }
        let mut n_det = 0;
        for b in &l.boxes {
            if n_det < 5 && r.gen_bool(0.8) {
                let jitter: [f64; 4] = std::array::from_fn(|_| r.gen_range(-8.0..8.0));
                let bb = BBox2D::new(b.bbox.x1 + jitter[0], b.bbox.y1 + jitter[1], b.bbox.x2 + jitter[2], b.bbox.y2 + jitter[3]);
                let bb = BBox2D::new(bb.x1.min(bb.x2), bb.y1.min(bb.y2), bb.x1.max(bb.x2), bb.y1.max(bb.y2));
                let class = if r.gen_bool(0.9) { b.class_id } else { r.gen_range(1..=n_classes) };
                preds.push(Detection { image_id: id.clone(), class_id: class, bbox: bb, score: discrete_score(r) });
                n_det += 1;
            }
        }
        while n_det < 5 && r.gen_bool(0.4) {
            let k = r.gen_range(1..=n_classes);
            preds.push(Detection { image_id: id.clone(), class_id: k, bbox: random_small_box(r, 400, 300), score: discrete_score(r) });
            n_det += 1;
        }
        m.layouts.push(l);
    }
    (preds, m)
}

/// Scores on a coarse grid so ties occur.
fn discrete_score(r: &mut impl Rng) -> f64 {
    r.gen_range(1..=20) as f64 / 20.0
}
