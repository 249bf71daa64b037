//! Spatial statistics of nearest-neighbour matches.
//!
//! Every (query pixel, neighbour) pair becomes a [`MatchRecord`]. From these
//! records we compute location histograms, circular means of match angles
//! about the image center, and the radial/tangential split of the
//! displacement from query pixel to match.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::activation::LabeledImage;
use crate::classifier::{match_pixels, unit_pixels, ClassifierParams};
use crate::error::{Error, Result};
use crate::memory::MemoryStore;
use crate::seed;

const CENTER_TOL: f64 = 1e-12;
const R_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub query_position: (f64, f64),
    pub match_position: (f64, f64),
    pub same_class: bool,
    pub kernel_value: f64,
    pub distance: f64,
    pub query_image: u32,
    pub match_image: u32,
    pub query_class: u32,
    pub match_class: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchFilter {
    Same,
    Different,
    #[default]
    All,
}

impl MatchFilter {
    pub fn accepts(self, r: &MatchRecord) -> bool {
        match self {
            MatchFilter::Same => r.same_class,
            MatchFilter::Different => !r.same_class,
            MatchFilter::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    Kernel,
}

/// One record per (query pixel, neighbour). With `leave_one_out`, matches
/// into the query's own image are excluded at retrieval time.
pub fn collect_matches(
    queries: &[LabeledImage],
    store: &MemoryStore,
    params: &ClassifierParams,
    leave_one_out: bool,
) -> Result<Vec<MatchRecord>> {
    if !store.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let mut records = Vec::new();
    for q in queries {
        let (pixels, _) = unit_pixels(&q.image);
        let params = ClassifierParams {
            exclude_image: leave_one_out.then_some(q.image_id),
            ..*params
        };
        let w = q.image.width();
        for m in match_pixels(&pixels, store, &params)? {
            let query_position = q.image.centered_position(m.pixel / w, m.pixel % w);
            for (n, &kernel_value) in m.result.neighbors.iter().zip(&m.kernels) {
                let (mx, my) = store.position(n.index);
                let match_class = store.class_id(n.index);
                records.push(MatchRecord {
                    query_position,
                    match_position: (mx as f64, my as f64),
                    same_class: match_class == q.class_id,
                    kernel_value,
                    distance: n.distance,
                    query_image: q.image_id,
                    match_image: store.image_id(n.index),
                    query_class: q.class_id,
                    match_class,
                });
            }
        }
    }
    Ok(records)
}

/// Spatial extent covered by a histogram, in centered pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    /// The full pixel area of a W×H image (pixel centers ± 0.5).
    pub fn of_image(width: usize, height: usize) -> Self {
        let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
        Self {
            x_min: -hw,
            x_max: hw,
            y_min: -hh,
            y_max: hh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub bins_x: usize,
    pub bins_y: usize,
    pub extent: Extent,
    /// Row-major, row 0 at the top (largest y), like the image itself.
    pub counts: Vec<u64>,
}

impl Histogram2D {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.bins_x + col]
    }

    /// CSV grid, one histogram row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks(self.bins_x) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Square histogram of match positions. Points outside the extent are
/// clamped into the border bins so the total is always conserved.
pub fn location_histogram(records: &[MatchRecord], filter: MatchFilter, bins: usize, extent: Extent) -> Result<Histogram2D> {
    let points: Vec<(f64, f64)> = records.iter().filter(|r| filter.accepts(r)).map(|r| r.match_position).collect();
    histogram_points(&points, bins, bins, extent)
}

pub fn histogram_points(points: &[(f64, f64)], bins_x: usize, bins_y: usize, extent: Extent) -> Result<Histogram2D> {
    if bins_x == 0 || bins_y == 0 {
        return Err(Error::Config("histogram needs at least one bin per axis".into()));
    }
    if !(extent.x_max > extent.x_min && extent.y_max > extent.y_min) {
        return Err(Error::Config(format!("empty histogram extent {extent:?}")));
    }
    let mut counts = vec![0u64; bins_x * bins_y];
    let bin = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
        let t = ((v - lo) / (hi - lo) * n as f64).floor();
        t.clamp(0.0, (n - 1) as f64) as usize
    };
    for &(x, y) in points {
        let col = bin(x, extent.x_min, extent.x_max, bins_x);
        let row = bins_y - 1 - bin(y, extent.y_min, extent.y_max, bins_y);
        counts[row * bins_x + col] += 1;
    }
    Ok(Histogram2D {
        bins_x,
        bins_y,
        extent,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularSummary {
    /// Mean direction in (−π, π]; `None` when R < 1e-9.
    pub mean_angle: Option<f64>,
    pub resultant_length: f64,
    /// Records that carried an angle.
    pub count: usize,
    /// Records at the exact image center (no defined angle).
    pub skipped_center: usize,
    /// Standard error of the mean resultant vector, two-way clustered by
    /// query image and match image.
    pub standard_error: f64,
}

impl CircularSummary {
    fn empty(skipped_center: usize) -> Self {
        Self {
            mean_angle: None,
            resultant_length: 0.0,
            count: 0,
            skipped_center,
            standard_error: 0.0,
        }
    }
}

/// Circular mean of match-position angles about the image center.
pub fn circular_mean(records: &[MatchRecord], weighting: Weighting) -> Result<CircularSummary> {
    let summary = summarize(records.iter(), weighting);
    if summary.count == 0 {
        return Err(Error::NoAngularData);
    }
    Ok(summary)
}

/// Weighted circular mean of raw points; each point is its own cluster.
pub fn circular_mean_points(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<CircularSummary> {
    let samples = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, weights.map_or(1.0, |w| w[i]), (i as u64, i as u64)));
    let summary = summarize_samples(samples);
    if summary.count == 0 {
        return Err(Error::NoAngularData);
    }
    Ok(summary)
}

fn summarize<'a>(records: impl Iterator<Item = &'a MatchRecord>, weighting: Weighting) -> CircularSummary {
    summarize_samples(records.map(|r| {
        let w = match weighting {
            Weighting::Uniform => 1.0,
            Weighting::Kernel => r.kernel_value,
        };
        (r.match_position, w, (r.query_image as u64, r.match_image as u64))
    }))
}

type Sums = (f64, f64, f64);

fn add_to<K: Ord>(map: &mut BTreeMap<K, Sums>, key: K, ux: f64, uy: f64, w: f64) {
    let c = map.entry(key).or_insert((0.0, 0.0, 0.0));
    c.0 += w * ux;
    c.1 += w * uy;
    c.2 += w;
}

/// Samples carry a (row, column) cluster pair. The variance estimate is
/// V_row + V_col − V_pair, floored at the larger one-way estimate.
fn summarize_samples(samples: impl Iterator<Item = ((f64, f64), f64, (u64, u64))>) -> CircularSummary {
    let mut rows: BTreeMap<u64, Sums> = BTreeMap::new();
    let mut cols: BTreeMap<u64, Sums> = BTreeMap::new();
    let mut pairs: BTreeMap<(u64, u64), Sums> = BTreeMap::new();
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    let (mut count, mut skipped) = (0, 0);
    for ((x, y), w, cluster) in samples {
        let r = x.hypot(y);
        if r < CENTER_TOL {
            skipped += 1;
            continue;
        }
        let (ux, uy) = (x / r, y / r);
        sx += w * ux;
        sy += w * uy;
        sw += w;
        count += 1;
        add_to(&mut rows, cluster.0, ux, uy, w);
        add_to(&mut cols, cluster.1, ux, uy, w);
        add_to(&mut pairs, cluster, ux, uy, w);
    }
    if count == 0 || sw <= 0.0 {
        return CircularSummary::empty(skipped);
    }
    let (mx, my) = (sx / sw, sy / sw);
    let resultant_length = mx.hypot(my).min(1.0);
    let mean_angle = (resultant_length >= R_FLOOR).then(|| wrap_angle(my.atan2(mx)));
    let spread = |sums: &mut dyn Iterator<Item = &Sums>| -> f64 {
        sums.map(|&(cx, cy, cw)| (cx - cw * mx).powi(2) + (cy - cw * my).powi(2)).sum()
    };
    let (vr, vc) = (spread(&mut rows.values()), spread(&mut cols.values()));
    let spread = (vr + vc - spread(&mut pairs.values())).max(vr).max(vc);
    CircularSummary {
        mean_angle,
        resultant_length,
        count,
        skipped_center: skipped,
        standard_error: spread.sqrt() / sw,
    }
}

/// Map an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut t = a % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Absolute angular difference in [0, π].
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialTangentialVariance {
    /// Mean squared displacement along the center→query ray (pixels²).
    pub sigma_r2: f64,
    /// Mean squared displacement perpendicular to it (pixels²).
    pub sigma_t2: f64,
    /// Mean squared displacement, the trace of the displacement second moment.
    pub total: f64,
    pub count: usize,
    pub skipped_center: usize,
}

/// Split the match displacement `match − query` into radial and tangential
/// parts. Moments are taken about zero displacement, i.e. about the query
/// pixel itself, so `sigma_r2 + sigma_t2 == total` for every input.
pub fn radial_tangential(records: &[MatchRecord], filter: MatchFilter) -> RadialTangentialVariance {
    let pairs: Vec<((f64, f64), (f64, f64))> = records
        .iter()
        .filter(|r| filter.accepts(r))
        .map(|r| (r.query_position, r.match_position))
        .collect();
    radial_tangential_pairs(&pairs)
}

pub fn radial_tangential_pairs(pairs: &[((f64, f64), (f64, f64))]) -> RadialTangentialVariance {
    let (mut r2, mut t2, mut tot) = (0.0, 0.0, 0.0);
    let (mut count, mut skipped) = (0, 0);
    for &((qx, qy), (mx, my)) in pairs {
        let norm = qx.hypot(qy);
        if norm < CENTER_TOL {
            skipped += 1;
            continue;
        }
        let (ux, uy) = (qx / norm, qy / norm);
        let (dx, dy) = (mx - qx, my - qy);
        let radial = dx * ux + dy * uy;
        let tangential = -dx * uy + dy * ux;
        r2 += radial * radial;
        t2 += tangential * tangential;
        tot += dx * dx + dy * dy;
        count += 1;
    }
    let n = count.max(1) as f64;
    RadialTangentialVariance {
        sigma_r2: r2 / n,
        sigma_t2: t2 / n,
        total: tot / n,
        count,
        skipped_center: skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAngularBias {
    pub class_id: u32,
    pub same: CircularSummary,
    pub different: CircularSummary,
    /// R_same − R_diff.
    pub r_gap: f64,
    /// Standard error of the gap, sqrt(se_same² + se_diff²).
    pub gap_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularBiasReport {
    pub classes: Vec<ClassAngularBias>,
    pub weighting: Weighting,
}

/// Per query class: circular summaries of same-class and different-class matches.
pub fn angular_bias_from_records(records: &[MatchRecord], weighting: Weighting) -> AngularBiasReport {
    let classes: BTreeSet<u32> = records.iter().map(|r| r.query_class).collect();
    let classes = classes
        .into_iter()
        .map(|class_id| {
            let of_class = || records.iter().filter(move |r| r.query_class == class_id);
            let same = summarize(of_class().filter(|r| r.same_class), weighting);
            let different = summarize(of_class().filter(|r| !r.same_class), weighting);
            ClassAngularBias {
                class_id,
                r_gap: same.resultant_length - different.resultant_length,
                gap_sigma: same.standard_error.hypot(different.standard_error),
                same,
                different,
            }
        })
        .collect();
    AngularBiasReport { classes, weighting }
}

pub fn angular_bias_report(
    store: &MemoryStore,
    queries: &[LabeledImage],
    params: &ClassifierParams,
    leave_one_out: bool,
    weighting: Weighting,
) -> Result<AngularBiasReport> {
    let records = collect_matches(queries, store, params, leave_one_out)?;
    Ok(angular_bias_from_records(&records, weighting))
}

/// Null model: permute class labels across every image that appears in the
/// records (query and memory images alike), keeping class sizes fixed, and
/// recompute the same/different tags. Retrieval itself is label-free, so the
/// neighbour lists stay valid.
pub fn shuffle_labels(records: &[MatchRecord], seed_value: u64) -> Vec<MatchRecord> {
    let mut image_class: BTreeMap<u32, u32> = BTreeMap::new();
    for r in records {
        image_class.insert(r.query_image, r.query_class);
        image_class.insert(r.match_image, r.match_class);
    }
    let images: Vec<u32> = image_class.keys().copied().collect();
    let mut labels: Vec<u32> = image_class.values().copied().collect();
    labels.shuffle(&mut seed::rng(seed_value, seed::stream::NULL_LABELS));
    let shuffled: BTreeMap<u32, u32> = images.into_iter().zip(labels).collect();
    records
        .iter()
        .map(|r| {
            let (qc, mc) = (shuffled[&r.query_image], shuffled[&r.match_image]);
            MatchRecord {
                query_class: qc,
                match_class: mc,
                same_class: qc == mc,
                ..*r
            }
        })
        .collect()
}
