use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;
use wildfire_core::autonet::{Mode, ModelGraph, Tensor};
use wildfire_core::cirrus::{
    eda_csv, fire_vs_cirrus_table, image_seed, linear_fit, scatter_svg, segment_cirrus, CirrusClass, SegmentOptions,
    SegmentedCirrus,
};
use wildfire_core::config::KeyValues;
use wildfire_core::metrics::{confusion_slices, DEFAULT_THRESHOLD};
use wildfire_core::models::{build_fcn, load_model, save_model, ModelSpec, SavedModel};
use wildfire_core::raster::{
    filter_cirrus, normalize_bands, read_container, select_bands_dataset, write_container, MultibandPatch, PatchDataset,
    PixelData, StatsSource, CIRRUS, DEFAULT_BAND_MAP, GREEN, SWIR,
};
use wildfire_core::stats::{mean_sd, two_proportion_z, welch_t};
use wildfire_core::synthetic::{generate, SyntheticSpec};
use wildfire_core::train::{fit, mask_data, run_sensitivity, split_dataset, TrainConfig, Variant};
use wildfire_core::{CnnConfig, FcnConfig, Head, MetricsReport, NormalizationStats};

use crate::args::*;
use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::pgm;
use crate::UsageError;

/// Global flags merged over the optional configuration file.
#[derive(Debug, Clone)]
pub struct Context {
    pub global: GlobalOpts,
    pub kv: KeyValues,
}

impl Context {
    pub fn new(global: GlobalOpts) -> Result<Self> {
        let kv = match &global.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                KeyValues::parse(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => KeyValues::new(),
        };
        if let Some(t) = global.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(UsageError(format!("--threshold {t} outside [0, 1]")).into());
            }
        }
        Ok(Context { global, kv })
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(match self.global.seed {
            Some(s) => s,
            None => self.kv.get_or("seed", 0)?,
        })
    }

    fn threshold(&self, fallback: f64) -> Result<f64> {
        Ok(match self.global.threshold {
            Some(t) => t,
            None => self.kv.get_or("threshold", fallback)?,
        })
    }

    fn bands(&self) -> Option<Vec<String>> {
        self.global.bands.clone()
    }

    fn manifest(&self, command: &str) -> Result<RunManifest> {
        let mut m = RunManifest::start(command, self.seed()?);
        m.record_config(&self.kv);
        Ok(m)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn load(path: &Path) -> Result<PatchDataset> {
    let d = read_container(path).with_context(|| format!("reading container {}", path.display()))?;
    d.validate().with_context(|| format!("validating {}", path.display()))?;
    Ok(d)
}

pub fn ingest(ctx: &Context, a: &IngestArgs) -> Result<PathBuf> {
    let seed = ctx.seed()?;
    let mut manifest = ctx.manifest("ingest")?;
    let dataset = if a.synthetic {
        let bands = ctx.bands().unwrap_or_else(|| ["B3", "B6", "B7", "B9"].map(String::from).to_vec());
        let spec = SyntheticSpec {
            count: a.count,
            height: a.size,
            width: a.size,
            band_ids: bands,
            fire_probability: a.fire_probability,
            cirrus_fraction: a.cirrus_fraction,
            seed,
        };
        let mut kv = KeyValues::new();
        spec.to_kv(&mut kv);
        manifest.record_config(&kv);
        generate(&spec)?
    } else {
        let dir = a.raw_dir.as_ref().expect("clap requires raw_dir without --synthetic");
        manifest.inputs.push(dir.clone());
        let bands = ctx.bands().unwrap_or_else(|| DEFAULT_BAND_MAP.map(String::from).to_vec());
        ingest_raw(dir, &bands, a.size)?
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_container(&dataset, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    log::info!("wrote {} patches to {}", dataset.len(), a.out.display());
    manifest.outputs.push(a.out.clone());
    let mut name = a.out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    manifest.finish(&a.out.with_file_name(name))?;
    Ok(a.out.clone())
}

/// One sub-directory per patch, sorted by name, each holding `<band>.bin`
/// (u16 little-endian, row-major) and `mask.bin` (u8).
fn ingest_raw(dir: &Path, bands: &[String], size: usize) -> Result<PatchDataset> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading raw directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    entries.retain(|p| p.is_dir());
    entries.sort();
    if entries.is_empty() {
        return Err(wildfire_core::Error::InsufficientData(format!("no patch directories in {}", dir.display())).into());
    }
    let n = size * size;
    let mut patches = Vec::with_capacity(entries.len());
    for p in &entries {
        let mask_path = p.join("mask.bin");
        let mask = fs::read(&mask_path).with_context(|| format!("reading {}", mask_path.display()))?;
        if mask.len() != n {
            return Err(wildfire_core::Error::Truncated { expected: n as u64, actual: mask.len() as u64 })
                .with_context(|| format!("{}", mask_path.display()));
        }
        let mut values = vec![0u16; n * bands.len()];
        for (k, b) in bands.iter().enumerate() {
            let path = p.join(format!("{b}.bin"));
            let raw = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            if raw.len() != 2 * n {
                return Err(wildfire_core::Error::Truncated { expected: 2 * n as u64, actual: raw.len() as u64 })
                    .with_context(|| format!("{}", path.display()));
            }
            for (i, c) in raw.chunks_exact(2).enumerate() {
                values[i * bands.len() + k] = u16::from_le_bytes([c[0], c[1]]);
            }
        }
        let patch = MultibandPatch::new(size, size, bands.to_vec(), PixelData::U16(values), mask)
            .with_context(|| format!("{}", p.display()))?;
        patches.push(patch);
    }
    Ok(PatchDataset::new(patches, dir.display().to_string()))
}

fn fcn_bands(ctx: &Context, data: &PatchDataset) -> Vec<String> {
    if let Some(b) = ctx.bands() {
        return b;
    }
    let preferred = [GREEN, SWIR[0], SWIR[1]];
    if preferred.iter().all(|b| data.band_ids().iter().any(|x| x == b)) {
        preferred.map(String::from).to_vec()
    } else {
        data.band_ids().to_vec()
    }
}

fn train_defaults(preset: Preset) -> TrainConfig {
    match preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::paper(),
    }
}

pub fn train_fcn(ctx: &Context, a: &TrainFcnArgs) -> Result<PathBuf> {
    let mut manifest = ctx.manifest("train-fcn")?;
    manifest.inputs.push(a.data.clone());
    let data = load(&a.data)?;
    let bands = fcn_bands(ctx, &data);
    let band_refs: Vec<&str> = bands.iter().map(String::as_str).collect();
    let selected = select_bands_dataset(&data, &band_refs)?;

    let defaults = match ctx.global.preset {
        Preset::Desk => FcnConfig::desk(bands.len()),
        Preset::Paper => FcnConfig { input_channels: bands.len(), ..FcnConfig::paper() },
    };
    let mut fcn = FcnConfig::from_kv(&ctx.kv, defaults)?;
    fcn.input_channels = bands.len();
    let mut cfg = TrainConfig::from_kv(&ctx.kv, &train_defaults(ctx.global.preset))?;
    cfg.seed = ctx.seed()?;
    cfg.threshold = ctx.threshold(cfg.threshold)?;
    cfg.eval_train |= a.eval_train;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let m = fcn.spatial_multiple();
    if let Some(p) = selected.patches.iter().find(|p| p.height % m != 0 || p.width % m != 0) {
        bail!(UsageError(format!("patch size {}x{} is not a multiple of {m} required by depth {}", p.height, p.width, fcn.depth)));
    }

    let (train_idx, val_idx) = if a.train_all {
        ((0..selected.len()).collect::<Vec<_>>(), vec![])
    } else {
        split_dataset(selected.len(), cfg.split_fraction, cfg.seed)?
    };
    let (_, norm) = normalize_bands(&selected.subset(&train_idx), StatsSource::Fit)?;
    let (floats, _) = normalize_bands(&selected, StatsSource::Given(&norm))?;
    let tensors = mask_data(&floats)?;
    let (mut model, _) = build_fcn(&fcn, cfg.seed)?;
    log::info!("FCN with {} parameters on {} training patches", model.param_count(), train_idx.len());
    let log = fit(&mut model, &tensors, &train_idx, &val_idx, &cfg)?;

    create_dir(&a.out_dir)?;
    let mut meta = KeyValues::new();
    meta.set_list("bands", &bands);
    meta.set_list("norm_means", &norm.means);
    meta.set_list("norm_sds", &norm.sds);
    meta.set("threshold", cfg.threshold);
    let model_path = a.out_dir.join("model.fpm");
    save_model(&model_path, &ModelSpec::Fcn(fcn), &meta, &model)?;
    manifest.outputs.push(model_path);
    manifest.outputs.push(write(&a.out_dir.join("train_log.csv"), log.to_csv())?);
    manifest.outputs.push(write(&a.out_dir.join("loss_curve.csv"), log.loss_curve_csv())?);
    let mut kv = KeyValues::new();
    cfg.to_kv(&mut kv);
    fcn.to_kv(&mut kv);
    kv.set_list("bands", &bands);
    manifest.record_config(&kv);
    manifest.finish(&a.out_dir.join(MANIFEST_NAME))?;
    if let Some(last) = log.records.last() {
        println!(
            "epochs: {}  final train loss: {:.6}  val {}: {}",
            log.records.len(),
            last.train_loss,
            log.metric,
            last.val_metric.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(a.out_dir.clone())
}

struct Loaded {
    saved: SavedModel,
    threshold: f64,
    inputs: Tensor,
    targets: Tensor,
    size: (usize, usize),
}

fn load_for_inference(ctx: &Context, model: &Path, data: &Path) -> Result<Loaded> {
    let saved = load_model(model).with_context(|| format!("loading model {}", model.display()))?;
    if saved.graph.head != Head::PixelMask {
        bail!(UsageError(format!("{} is not a mask model", model.display())));
    }
    let bands: Vec<String> = saved.meta.require_list("bands")?;
    let norm = NormalizationStats::new(bands.clone(), saved.meta.require_list("norm_means")?, saved.meta.require_list("norm_sds")?)?;
    let threshold = ctx.threshold(saved.meta.get_or("threshold", DEFAULT_THRESHOLD)?)?;
    let dataset = load(data)?;
    let refs: Vec<&str> = bands.iter().map(String::as_str).collect();
    let selected = select_bands_dataset(&dataset, &refs)?;
    let (floats, _) = normalize_bands(&selected, StatsSource::Given(&norm))?;
    let td = mask_data(&floats)?;
    let size = (dataset.patches[0].height, dataset.patches[0].width);
    Ok(Loaded { saved, threshold, inputs: td.inputs, targets: td.targets, size })
}

fn infer(model: &mut ModelGraph, inputs: &Tensor) -> Result<Tensor> {
    let n = inputs.shape()[0];
    let mut parts = Vec::new();
    for start in (0..n).step_by(8) {
        parts.push(model.forward(&inputs.batch_slice(start, (start + 8).min(n)), Mode::Infer)?);
    }
    Ok(Tensor::concat_batch(&parts)?)
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<MetricsReport> {
    let mut l = load_for_inference(ctx, &a.model, &a.data)?;
    let pred = infer(&mut l.saved.graph, &l.inputs)?;
    let counts = confusion_slices(pred.data(), l.targets.data(), l.threshold);
    let report = MetricsReport::from_counts(&counts, l.threshold);
    print!("{report}\n{}", counts.table());
    if let Some(dir) = &a.out_dir {
        let mut manifest = ctx.manifest("eval")?;
        manifest.inputs.extend([a.model.clone(), a.data.clone()]);
        create_dir(dir)?;
        manifest.outputs.push(write(&dir.join("metrics.csv"), report.to_string())?);
        manifest.outputs.push(write(&dir.join("confusion.txt"), counts.table())?);
        manifest.finish(&dir.join(MANIFEST_NAME))?;
    }
    Ok(report)
}

pub fn predict(ctx: &Context, a: &PredictArgs) -> Result<Vec<PathBuf>> {
    let mut manifest = ctx.manifest("predict")?;
    manifest.inputs.extend([a.model.clone(), a.data.clone()]);
    let mut l = load_for_inference(ctx, &a.model, &a.data)?;
    let pred = infer(&mut l.saved.graph, &l.inputs)?;
    create_dir(&a.out_dir)?;
    let (h, w) = l.size;
    let mut written = Vec::new();
    for (i, img) in pred.data().chunks(h * w).enumerate() {
        let bytes = if a.probabilities {
            let px: Vec<u16> = img.iter().map(|&p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            pgm::encode16(w, h, &px)
        } else {
            let px: Vec<u8> = img.iter().map(|&p| if p >= l.threshold { 255 } else { 0 }).collect();
            pgm::encode8(w, h, &px)
        };
        written.push(write(&a.out_dir.join(format!("mask_{i:05}.pgm")), bytes)?);
    }
    manifest.outputs.extend(written.iter().cloned());
    manifest.finish(&a.out_dir.join(MANIFEST_NAME))?;
    Ok(written)
}

/// Segments `band` of every patch in parallel; per-image seeds keep the
/// result independent of scheduling.
pub fn segment_all(data: &PatchDataset, band: &str, seed: u64, normalize: bool) -> Result<Vec<SegmentedCirrus>> {
    Ok(data
        .patches
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let b = p.band_index(band)?;
            segment_cirrus(&p.band_plane(b), p.height, p.width, SegmentOptions { seed: image_seed(seed, i), normalize })
        })
        .collect::<wildfire_core::Result<Vec<_>>>()?)
}

pub fn segment(ctx: &Context, a: &SegmentArgs) -> Result<PathBuf> {
    let mut manifest = ctx.manifest("segment")?;
    manifest.inputs.push(a.data.clone());
    let data = load(&a.data)?;
    let segs = segment_all(&data, &a.band, ctx.seed()?, a.normalize_features)?;
    create_dir(&a.out_dir)?;
    let mut csv = String::from("image_index,dense,scattered,none\n");
    for (i, s) in segs.iter().enumerate() {
        let px: Vec<u8> = s.labels.iter().map(|c| c.grey()).collect();
        manifest.outputs.push(write(&a.out_dir.join(format!("labels_{i:05}.pgm")), pgm::encode8(s.width, s.height, &px))?);
        let (d, sc, n) = wildfire_core::cirrus::contamination_counts(s);
        let _ = writeln!(csv, "{i},{d},{sc},{n}");
    }
    let csv_path = write(&a.out_dir.join("contamination.csv"), csv)?;
    manifest.outputs.push(csv_path.clone());
    manifest.finish(&a.out_dir.join(MANIFEST_NAME))?;
    Ok(csv_path)
}

fn read_segments(dir: &Path, data: &PatchDataset) -> Result<Vec<SegmentedCirrus>> {
    data.patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let path = dir.join(format!("labels_{i:05}.pgm"));
            let g = pgm::decode(&fs::read(&path).with_context(|| format!("reading {}", path.display()))?)
                .with_context(|| format!("decoding {}", path.display()))?;
            if (g.height, g.width) != (p.height, p.width) {
                bail!(wildfire_core::Error::Shape(format!("{} is {}x{}, patch {i} is {}x{}", path.display(), g.height, g.width, p.height, p.width)));
            }
            let labels = g
                .pixels
                .iter()
                .map(|&v| CirrusClass::from_grey(u8::try_from(v).unwrap_or(1)))
                .collect::<wildfire_core::Result<Vec<_>>>()
                .with_context(|| format!("{}", path.display()))?;
            Ok(SegmentedCirrus { height: g.height, width: g.width, labels, centroids: [[0.0; 3]; 3], degenerate: false })
        })
        .collect()
}

pub fn eda(ctx: &Context, a: &EdaArgs) -> Result<PathBuf> {
    let mut manifest = ctx.manifest("eda")?;
    manifest.inputs.push(a.data.clone());
    let data = load(&a.data)?;
    let segs = match &a.segments {
        Some(dir) => {
            manifest.inputs.push(dir.clone());
            read_segments(dir, &data)?
        }
        None => segment_all(&data, &a.band, ctx.seed()?, false)?,
    };
    let rows = fire_vs_cirrus_table(&data, &segs)?;
    create_dir(&a.out_dir)?;
    let table = write(&a.out_dir.join("fire_vs_cirrus.csv"), eda_csv(&rows))?;
    manifest.outputs.push(table.clone());
    let fire: Vec<f64> = rows.iter().map(|r| r.fire_pixels as f64).collect();
    let mut fits = String::from("class,slope,intercept,n\n");
    for class in [CirrusClass::Dense, CirrusClass::Scattered, CirrusClass::None] {
        let x: Vec<f64> = rows
            .iter()
            .map(|r| match class {
                CirrusClass::Dense => r.dense,
                CirrusClass::Scattered => r.scattered,
                CirrusClass::None => r.none,
            } as f64)
            .collect();
        let fit = linear_fit(&x, &fire);
        match &fit {
            Ok(f) => {
                let _ = writeln!(fits, "{},{},{},{}", class.name(), f.slope, f.intercept, f.n);
            }
            Err(e) => {
                log::warn!("no regression line for {}: {e}", class.name());
                let _ = writeln!(fits, "{},n/a,n/a,{}", class.name(), x.len());
            }
        }
        let title = format!("Fire pixels vs. {} cirrus pixels", class.name());
        let svg = scatter_svg(&title, &format!("{} cirrus pixels", class.name()), "fire pixels", &x, &fire, fit.as_ref().ok());
        manifest.outputs.push(write(&a.out_dir.join(format!("scatter_{}.svg", class.name())), svg)?);
    }
    manifest.outputs.push(write(&a.out_dir.join("regression.csv"), fits)?);
    manifest.finish(&a.out_dir.join(MANIFEST_NAME))?;
    Ok(table)
}

pub fn sensitivity(ctx: &Context, a: &SensitivityArgs) -> Result<PathBuf> {
    let mut manifest = ctx.manifest("sensitivity")?;
    manifest.inputs.push(a.data.clone());
    let raw = load(&a.data)?;
    let data = if a.no_filter {
        raw
    } else {
        let kept = filter_cirrus(&raw, CIRRUS, a.cirrus_threshold)?;
        log::info!("{} of {} patches pass the cirrus filter", kept.len(), raw.len());
        raw.subset(&kept)
    };
    if data.is_empty() {
        return Err(wildfire_core::Error::InsufficientData("no patches left after cirrus filtering".into()).into());
    }
    let size = (data.patches[0].height, data.patches[0].width);
    let cnn_defaults = match ctx.global.preset {
        Preset::Desk => CnnConfig::desk(2, size),
        Preset::Paper => CnnConfig { input_size: size, ..CnnConfig::paper(2) },
    };
    let cnn = CnnConfig::from_kv(&ctx.kv, &cnn_defaults)?;
    let train_default = match ctx.global.preset {
        Preset::Desk => TrainConfig { split_fraction: 0.8, ..TrainConfig::desk() },
        Preset::Paper => TrainConfig::paper_sensitivity(),
    };
    let mut cfg = TrainConfig::from_kv(&ctx.kv, &train_default)?;
    cfg.seed = ctx.seed()?;
    cfg.threshold = ctx.threshold(cfg.threshold)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let report = run_sensitivity(&data, &cnn, &cfg)?;
    create_dir(&a.out_dir)?;
    for v in Variant::ALL {
        let run = report.run(v);
        manifest.outputs.push(write(&a.out_dir.join(format!("{v}_train_log.csv")), run.log.to_csv())?);
        manifest.outputs.push(write(&a.out_dir.join(format!("{v}_loss_curve.csv")), run.log.loss_curve_csv())?);
    }
    let rendered = report.render();
    print!("{rendered}");
    let path = write(&a.out_dir.join("report.csv"), rendered)?;
    manifest.outputs.push(path.clone());
    let mut kv = KeyValues::new();
    cfg.to_kv(&mut kv);
    cnn.to_kv(&mut kv);
    manifest.record_config(&kv);
    manifest.finish(&a.out_dir.join(MANIFEST_NAME))?;
    Ok(path)
}

/// Per-epoch seconds from a training-log CSV.
fn log_seconds(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().with_context(|| format!("{} has no header", path.display()))?;
    let col = header
        .split(',')
        .position(|c| c == "seconds")
        .ok_or_else(|| wildfire_core::Error::Malformed(format!("{} has no seconds column", path.display())))?;
    lines
        .map(|l| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| wildfire_core::Error::Malformed(format!("bad row {l:?} in {}", path.display())).into())
        })
        .collect()
}

pub fn stats(_ctx: &Context, a: &StatsArgs) -> Result<String> {
    let result = match &a.test {
        StatsTest::Proportions { p1, n1, p2, n2 } => two_proportion_z(*p1, *n1, *p2, *n2, a.alternative)?,
        StatsTest::Welch { m1, sd1, n1, m2, sd2, n2 } => welch_t(*m1, *sd1, *n1, *m2, *sd2, *n2, a.alternative)?,
        StatsTest::Logs { log1, log2 } => {
            let (x, y) = (log_seconds(log1)?, log_seconds(log2)?);
            let (m1, s1) = mean_sd(&x);
            let (m2, s2) = mean_sd(&y);
            welch_t(m1, s1, x.len() as u64, m2, s2, y.len() as u64, a.alternative)?
        }
    };
    let text = result.to_string();
    println!("{text}");
    Ok(text)
}
