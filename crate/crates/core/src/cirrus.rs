//! K-Means segmentation of the cirrus band into contamination classes, and
//! the per-image fire-pixel vs. contamination table with least-squares fits.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::PatchDataset;
use crate::{Error, Result};

pub const CIRRUS_CLUSTERS: usize = 3;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CirrusClass {
    None = 0,
    Scattered = 1,
    Dense = 2,
}

impl CirrusClass {
    pub const ALL: [CirrusClass; 3] = [CirrusClass::None, CirrusClass::Scattered, CirrusClass::Dense];

    pub fn from_rank(rank: usize) -> Self {
        Self::ALL[rank]
    }

    pub fn name(self) -> &'static str {
        match self {
            CirrusClass::None => "none",
            CirrusClass::Scattered => "scattered",
            CirrusClass::Dense => "dense",
        }
    }

    /// Model input encoding.
    pub fn encoded(self) -> f64 {
        match self {
            CirrusClass::None => 0.0,
            CirrusClass::Scattered => 0.5,
            CirrusClass::Dense => 1.0,
        }
    }

    /// Grey level used for PGM label rasters.
    pub fn grey(self) -> u8 {
        match self {
            CirrusClass::None => 0,
            CirrusClass::Scattered => 128,
            CirrusClass::Dense => 255,
        }
    }

    pub fn from_grey(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CirrusClass::None),
            128 => Ok(CirrusClass::Scattered),
            255 => Ok(CirrusClass::Dense),
            other => Err(Error::Malformed(format!("grey level {other} is not a cirrus class"))),
        }
    }
}

/// Row-major `(value, row, col)` triples, one per pixel.
pub fn build_features(band: &[f64], height: usize, width: usize) -> Result<Vec<[f64; 3]>> {
    if band.len() != height * width {
        return Err(Error::Shape(format!("band has {} values for {height}x{width}", band.len())));
    }
    Ok(band.iter().enumerate().map(|(i, &v)| [v, (i / width) as f64, (i % width) as f64]).collect())
}

/// Rescales each feature column to [0, 1]; constant columns become 0.
pub fn min_max_scale(features: &mut [[f64; 3]]) {
    for d in 0..3 {
        let (lo, hi) = features.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), f| (l.min(f[d]), h.max(f[d])));
        let span = hi - lo;
        for f in features.iter_mut() {
            f[d] = if span > 0.0 { (f[d] - lo) / span } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansOptions { k, seed, max_iter: DEFAULT_MAX_ITER, tol: DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, dist2(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Greedy k-means++: each new centre is the best (lowest potential) of
/// `2 + ln k` candidates drawn with probability proportional to D².
fn kmeans_pp(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if total > 0.0 {
                let mut r = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if r < d {
                        chosen = i;
                        break;
                    }
                    r -= d;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let cand = points[idx];
            let updated: Vec<f64> = points.iter().zip(&d2).map(|(p, &d)| d.min(dist2(p, &cand))).collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, idx, updated));
            }
        }
        let (_, idx, updated) = best.expect("at least one trial");
        centroids.push(points[idx]);
        d2 = updated;
    }
    centroids
}

fn assign(points: &[[f64; 3]], centroids: &[[f64; 3]], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (j, d) = nearest(p, centroids);
        *l = j;
        inertia += d;
    }
    inertia
}

/// Cluster means; an empty cluster is moved onto the point farthest from its centre.
fn update(points: &[[f64; 3]], labels: &[usize], prev: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let k = prev.len();
    let mut sums = vec![[0.0; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..3 {
            sums[l][d] += p[d];
        }
    }
    let mut out: Vec<[f64; 3]> = sums
        .iter()
        .zip(&counts)
        .zip(prev)
        .map(|((s, &c), p)| if c > 0 { [s[0] / c as f64, s[1] / c as f64, s[2] / c as f64] } else { *p })
        .collect();
    if counts.contains(&0) {
        let mut far: Vec<(f64, usize)> =
            points.iter().zip(labels).enumerate().map(|(i, (p, &l))| (dist2(p, &out[l]), i)).collect();
        // farthest first, lower index on ties
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut next = far.into_iter();
        for j in 0..k {
            if counts[j] == 0 {
                if let Some((_, i)) = next.next() {
                    out[j] = points[i];
                }
            }
        }
    }
    out
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans(points: &[[f64; 3]], opts: &KMeansOptions) -> Result<KMeansResult> {
    if opts.k == 0 || points.len() < opts.k {
        return Err(Error::InsufficientData(format!("{} points for k = {}", points.len(), opts.k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centroids = kmeans_pp(points, opts.k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        history.push(assign(points, &centroids, &mut labels));
        let next = update(points, &labels, &centroids);
        let shift = next.iter().zip(&centroids).map(|(a, b)| dist2(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        if shift < opts.tol {
            break;
        }
    }
    assign(points, &centroids, &mut labels);
    // final centroids are the exact means of the final labels
    centroids = update(points, &labels, &centroids);
    history.push(inertia(points, &labels, &centroids));
    Ok(KMeansResult { centroids, labels, inertia_history: history, iterations })
}

pub fn inertia(points: &[[f64; 3]], labels: &[usize], centroids: &[[f64; 3]]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| dist2(p, &centroids[l])).sum()
}

/// Maps raw cluster index to class rank by ascending intensity (feature 0);
/// ties keep the lower original index first.
pub fn order_clusters(centroids: &[[f64; 3]]) -> Vec<CirrusClass> {
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| centroids[a][0].total_cmp(&centroids[b][0]).then(a.cmp(&b)));
    let mut mapping = vec![CirrusClass::None; centroids.len()];
    for (rank, &cluster) in order.iter().enumerate() {
        mapping[cluster] = CirrusClass::from_rank(rank.min(2));
    }
    mapping
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedCirrus {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<CirrusClass>,
    /// Feature-space centroid per class, indexed by `CirrusClass as usize`.
    pub centroids: [[f64; 3]; 3],
    /// Set when the band was constant and every pixel was labelled `None`.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentOptions {
    pub seed: u64,
    /// Min-max scale features before clustering (off by default).
    pub normalize: bool,
}

pub fn segment_cirrus(band: &[f64], height: usize, width: usize, opts: SegmentOptions) -> Result<SegmentedCirrus> {
    let mut features = build_features(band, height, width)?;
    let first = band.first().copied().ok_or_else(|| Error::InsufficientData("empty band".into()))?;
    if band.iter().all(|&v| v == first) {
        log::warn!("constant cirrus band ({first}); labelling every pixel as no cirrus");
        let mean = [first, (height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0];
        return Ok(SegmentedCirrus {
            height,
            width,
            labels: vec![CirrusClass::None; band.len()],
            centroids: [mean; 3],
            degenerate: true,
        });
    }
    if opts.normalize {
        min_max_scale(&mut features);
    }
    let km = kmeans(&features, &KMeansOptions::new(CIRRUS_CLUSTERS, opts.seed))?;
    let mapping = order_clusters(&km.centroids);
    let mut centroids = [[0.0; 3]; 3];
    for (cluster, class) in mapping.iter().enumerate() {
        centroids[*class as usize] = km.centroids[cluster];
    }
    Ok(SegmentedCirrus {
        height,
        width,
        labels: km.labels.iter().map(|&l| mapping[l]).collect(),
        centroids,
        degenerate: false,
    })
}

/// Per-image seed for batch segmentation.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Segments the named band of every patch, in order.
pub fn segment_dataset(dataset: &PatchDataset, band: &str, seed: u64) -> Result<Vec<SegmentedCirrus>> {
    dataset
        .patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let b = p.band_index(band)?;
            segment_cirrus(&p.band_plane(b), p.height, p.width, SegmentOptions { seed: image_seed(seed, i), normalize: false })
        })
        .collect()
}

pub fn encode_channel(seg: &SegmentedCirrus) -> Vec<f64> {
    seg.labels.iter().map(|c| c.encoded()).collect()
}

/// `(dense, scattered, none)` pixel counts.
pub fn contamination_counts(seg: &SegmentedCirrus) -> (usize, usize, usize) {
    let mut c = [0usize; 3];
    for l in &seg.labels {
        c[*l as usize] += 1;
    }
    (c[2], c[1], c[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdaRow {
    pub image_index: usize,
    pub fire_pixels: usize,
    pub dense: usize,
    pub scattered: usize,
    pub none: usize,
}

pub const EDA_CSV_HEADER: &str = "image_index,fire_pixels,dense,scattered,none";

pub fn fire_vs_cirrus_table(dataset: &PatchDataset, segs: &[SegmentedCirrus]) -> Result<Vec<EdaRow>> {
    if dataset.len() != segs.len() {
        return Err(Error::Shape(format!("{} images but {} segmentations", dataset.len(), segs.len())));
    }
    dataset
        .patches
        .iter()
        .zip(segs)
        .enumerate()
        .map(|(i, (p, s))| {
            if s.labels.len() != p.mask.len() {
                return Err(Error::Shape(format!("segmentation {i} does not match its patch")));
            }
            let (dense, scattered, none) = contamination_counts(s);
            Ok(EdaRow { image_index: i, fire_pixels: p.fire_pixels(), dense, scattered, none })
        })
        .collect()
}

pub fn eda_csv(rows: &[EdaRow]) -> String {
    let mut s = format!("{EDA_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.image_index, r.fire_pixels, r.dense, r.scattered, r.none);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("{} x values, {} y values", n, y.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("linear fit needs 2 points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("x has zero variance".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(RegressionFit { slope, intercept: my - slope * mx, n })
}

/// Scatter plot with an optional fitted line, as a standalone SVG document.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64], fit: Option<&RegressionFit>) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = range(x);
    let (y0, y1) = range(y);
    let sx = |v: f64| M + (v - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, title);
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, x_label);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        y_label
    );
    let _ = writeln!(s, r#"<text x="{M}" y="{}" font-size="10">{x0}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{x1}</text>"#, H - M + 14.0, W - M, H - M + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y0}</text><text x="{}" y="{M}" font-size="10" text-anchor="end">{y1}</text>"#, M - 4.0, H - M, M - 4.0);
    for (&a, &b) in x.iter().zip(y) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue" fill-opacity="0.6"/>"#, sx(a), sy(b));
    }
    if let Some(f) = fit {
        let (ya, yb) = (f.slope * x0 + f.intercept, f.slope * x1 + f.intercept);
        let _ = writeln!(
            s,
            r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-width="2"/>"#,
            sx(x0),
            sy(ya),
            sx(x1),
            sy(yb)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end" fill="firebrick">y = {:.4}x + {:.4}</text>"#,
            W - M,
            M,
            f.slope,
            f.intercept
        );
    }
    s.push_str("</svg>\n");
    s
}
