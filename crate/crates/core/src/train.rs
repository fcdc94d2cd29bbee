//! Class-weighted loss, Adam, learning-rate decay, splitting, the epoch loop
//! and the three-model band sensitivity harness.

use std::fmt::{self, Write as _};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autonet::{Head, Mode, ModelGraph, Param, Tensor};
use crate::cirrus::{encode_channel, image_seed, segment_cirrus, SegmentOptions};
use crate::config::KeyValues;
use crate::metrics::{binary_accuracy, confusion_slices, f_beta, precision_recall, DEFAULT_THRESHOLD};
use crate::models::{build_sensitivity_cnn, CnnConfig};
use crate::raster::{normalize_bands, select_bands_dataset, FloatDataset, PatchDataset, StatsSource, CIRRUS, SWIR};
use crate::stats::{mean_sd, two_proportion_z, welch_t, Alternative, HypothesisResult};
use crate::{Error, Result};

pub const PRED_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeight(pub f64);

/// Ratio of negative to positive pixels over all masks.
pub fn compute_class_weight<'a>(masks: impl IntoIterator<Item = &'a [u8]>) -> Result<ClassWeight> {
    let (mut zeros, mut ones) = (0u64, 0u64);
    for m in masks {
        for &v in m {
            if v == 0 {
                zeros += 1;
            } else {
                ones += 1;
            }
        }
    }
    if ones == 0 {
        return Err(Error::NoPositivePixels);
    }
    Ok(ClassWeight(zeros as f64 / ones as f64))
}

fn class_weight_of(targets: &Tensor, indices: &[usize]) -> Result<ClassWeight> {
    let per = targets.len() / targets.shape()[0].max(1);
    let masks: Vec<Vec<u8>> = indices
        .iter()
        .map(|&i| targets.data()[i * per..(i + 1) * per].iter().map(|&v| u8::from(v >= 0.5)).collect())
        .collect();
    compute_class_weight(masks.iter().map(|m| m.as_slice()))
}

/// Mean over the batch of the per-image sum of
/// `-(p_c y ln ŷ + (1 - y) ln(1 - ŷ))`, with ŷ clipped to `[1e-7, 1 - 1e-7]`.
/// Returns the loss and its gradient with respect to `pred`.
pub fn weighted_bce(pred: &Tensor, target: &Tensor, p_c: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let batch = pred.shape().first().copied().unwrap_or(1).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((&p, &y), g) in pred.data().iter().zip(target.data()).zip(grad.data_mut()) {
        let q = p.clamp(PRED_CLIP, 1.0 - PRED_CLIP);
        loss -= p_c * y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        if p == q {
            *g = -(p_c * y / q - (1.0 - y) / (1.0 - q)) / batch;
        }
    }
    Ok((loss / batch, grad))
}

pub fn lr_schedule(epoch: usize, alpha0: f64, k: f64) -> f64 {
    alpha0 * (-k * epoch as f64).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &[Param]) -> Self {
        Self::new(&params.iter().map(|p| p.value.len()).collect::<Vec<_>>())
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(params: &mut [Param], state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Shape(format!("optimizer tracks {} tensors, model has {}", state.m.len(), params.len())));
    }
    for p in params.iter().filter(|p| p.trainable) {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if !p.trainable {
            continue;
        }
        let grad = p.grad.data();
        for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// `Σ λ Σ w²` over the weights of L2-tagged layers; adds `2 λ w` to their
/// gradients when `accumulate` is set.
pub fn l2_penalty(model: &mut ModelGraph, accumulate: bool) -> f64 {
    let tagged: Vec<(f64, usize)> = model.l2_nodes().map(|(n, p)| (n.l2, p)).collect();
    let mut total = 0.0;
    for (lambda, pid) in tagged {
        let p = &mut model.params[pid];
        total += lambda * p.value.data().iter().map(|w| w * w).sum::<f64>();
        if accumulate {
            let value = p.value.data().to_vec();
            for (g, w) in p.grad.data_mut().iter_mut().zip(value) {
                *g += 2.0 * lambda * w;
            }
        }
    }
    total
}

/// Seeded shuffle; the first `floor(n * fraction)` indices train.
pub fn split_dataset(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    // tolerance so that products like 5420 * 0.8 land on the exact integer
    let n_train = (n as f64 * fraction + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub split_fraction: f64,
    pub seed: u64,
    pub class_weight: Option<f64>,
    pub threshold: f64,
    /// Also evaluate the training split after every epoch.
    pub eval_train: bool,
}

impl TrainConfig {
    /// Full-scale schedule: α0 = 1e-3, k = 0.1, 100 epochs, batch 32, 85/15 split.
    pub fn paper() -> Self {
        TrainConfig {
            lr0: 1e-3,
            decay: 0.1,
            epochs: 100,
            batch_size: 32,
            split_fraction: 0.85,
            seed: 0,
            class_weight: None,
            threshold: DEFAULT_THRESHOLD,
            eval_train: false,
        }
    }

    /// Full-scale schedule with the 80/20 split used for the sensitivity comparison.
    pub fn paper_sensitivity() -> Self {
        TrainConfig { split_fraction: 0.8, ..Self::paper() }
    }

    /// Small-data schedule: a slower decay keeps tiny models learning past
    /// the first few dozen epochs.
    pub fn desk() -> Self {
        TrainConfig {
            lr0: 5e-3,
            decay: 0.01,
            epochs: 300,
            batch_size: 4,
            split_fraction: 0.85,
            seed: 0,
            class_weight: None,
            threshold: DEFAULT_THRESHOLD,
            eval_train: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split fraction {} outside (0, 1)", self.split_fraction)));
        }
        if let Some(w) = self.class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("class weight must be positive, got {w}")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("lr0", self.lr0);
        kv.set("decay", self.decay);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("split_fraction", self.split_fraction);
        kv.set("seed", self.seed);
        if let Some(w) = self.class_weight {
            kv.set("class_weight", w);
        }
        kv.set("threshold", self.threshold);
        kv.set("eval_train", self.eval_train);
    }

    pub fn from_kv(kv: &KeyValues, defaults: &TrainConfig) -> Result<Self> {
        let cfg = TrainConfig {
            lr0: kv.get_or("lr0", defaults.lr0)?,
            decay: kv.get_or("decay", defaults.decay)?,
            epochs: kv.get_or("epochs", defaults.epochs)?,
            batch_size: kv.get_or("batch_size", defaults.batch_size)?,
            split_fraction: kv.get_or("split_fraction", defaults.split_fraction)?,
            seed: kv.get_or("seed", defaults.seed)?,
            class_weight: kv.get("class_weight")?.or(defaults.class_weight),
            threshold: kv.get_or("threshold", defaults.threshold)?,
            eval_train: kv.get_or("eval_train", defaults.eval_train)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub train_metric: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub class_weight: f64,
    /// `f2` for mask models, `binary_accuracy` for classifiers.
    pub metric: &'static str,
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    fn header(&self, s: &mut String) {
        let mut kv = KeyValues::new();
        self.config.to_kv(&mut kv);
        kv.set("class_weight_used", self.class_weight);
        kv.set("metric", self.metric);
        for line in kv.to_string().lines() {
            let _ = writeln!(s, "# {line}");
        }
    }

    /// Full log including wall-clock seconds.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        self.header(&mut s);
        let m = self.metric;
        let _ = writeln!(s, "epoch,lr,train_loss,val_loss,val_{m},train_{m},seconds");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6}",
                r.epoch,
                r.lr,
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_metric),
                opt(r.train_metric),
                r.seconds
            );
        }
        s
    }

    /// Timing-free loss curve; identical for identical seeds.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::new();
        self.header(&mut s);
        let m = self.metric;
        let _ = writeln!(s, "epoch,train_loss,val_loss,val_{m}");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_metric));
        }
        s
    }

    pub fn seconds(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.seconds).collect()
    }
}

/// Inputs `[N, H, W, C]` with matching targets (`[N, H, W, 1]` masks or `[N, 1]` labels).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl TrainData {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        let (n, _, _, _) = inputs.dims4()?;
        if targets.shape().first() != Some(&n) {
            return Err(Error::Shape(format!("{n} inputs but targets {:?}", targets.shape())));
        }
        Ok(TrainData { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacks standardized patches into inputs and per-pixel mask targets.
pub fn mask_data(dataset: &FloatDataset) -> Result<TrainData> {
    let first = dataset.patches.first().ok_or_else(|| Error::InsufficientData("empty dataset".into()))?;
    let (h, w, c) = (first.height, first.width, dataset.band_ids.len());
    let mut x = Vec::with_capacity(dataset.patches.len() * h * w * c);
    let mut y = Vec::with_capacity(dataset.patches.len() * h * w);
    for p in &dataset.patches {
        if (p.height, p.width) != (h, w) {
            return Err(Error::Shape(format!("mixed patch sizes {}x{} and {h}x{w}", p.height, p.width)));
        }
        x.extend_from_slice(&p.values);
        y.extend(p.mask.iter().map(|&m| f64::from(m)));
    }
    let n = dataset.patches.len();
    TrainData::new(Tensor::new(vec![n, h, w, c], x)?, Tensor::new(vec![n, h, w, 1], y)?)
}

/// Evaluates `indices` in inference mode: (mean loss, metric).
pub fn evaluate(model: &mut ModelGraph, data: &TrainData, indices: &[usize], p_c: f64, cfg: &TrainConfig) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::InsufficientData("nothing to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for chunk in indices.chunks(cfg.batch_size) {
        let x = data.inputs.gather_batch(chunk);
        let y = data.targets.gather_batch(chunk);
        let out = model.forward(&x, Mode::Infer)?;
        let (l, _) = weighted_bce(&out, &y, p_c)?;
        loss += l * chunk.len() as f64;
        preds.extend_from_slice(out.data());
        truth.extend_from_slice(y.data());
    }
    let metric = match model.head {
        Head::PixelMask => {
            let (p, r) = precision_recall(&confusion_slices(&preds, &truth, cfg.threshold));
            f_beta(p, r, 2.0)
        }
        Head::Classifier => {
            let labels: Vec<u8> = truth.iter().map(|&t| u8::from(t >= 0.5)).collect();
            binary_accuracy(&preds, &labels, cfg.threshold)
        }
    };
    Ok((loss / indices.len() as f64, metric))
}

fn metric_name(head: Head) -> &'static str {
    match head {
        Head::PixelMask => "f2",
        Head::Classifier => "binary_accuracy",
    }
}

/// Epoch loop over fixed train/validation indices.
///
/// The class weight comes from the configuration or, failing that, from the
/// training indices only. Epoch seconds cover forward, backward and update.
pub fn fit(model: &mut ModelGraph, data: &TrainData, train_idx: &[usize], val_idx: &[usize], cfg: &TrainConfig) -> Result<TrainLog> {
    if cfg.batch_size == 0 || !(cfg.lr0 > 0.0) {
        return Err(Error::Config(format!("invalid training configuration {cfg:?}")));
    }
    if train_idx.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let p_c = match cfg.class_weight {
        Some(w) => w,
        None => class_weight_of(&data.targets, train_idx)?.0,
    };
    let mut log = TrainLog { config: cfg.clone(), class_weight: p_c, metric: metric_name(model.head), records: Vec::new() };
    let mut adam = AdamState::for_params(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.to_vec();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr0, cfg.decay);
        order.shuffle(&mut rng);
        let started = Instant::now();
        let mut sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.inputs.gather_batch(chunk);
            let y = data.targets.gather_batch(chunk);
            model.set_step(step);
            step += 1;
            model.zero_grad();
            let out = model.forward(&x, Mode::Train)?;
            let (loss, grad) = weighted_bce(&out, &y, p_c)?;
            let total = loss + l2_penalty(model, true);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            model.backward(&grad)?;
            adam_step(&mut model.params, &mut adam, lr)?;
            sum += total * chunk.len() as f64;
        }
        let seconds = started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        let (val_loss, val_metric) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, m) = evaluate(model, data, val_idx, p_c, cfg)?;
            (Some(l), Some(m))
        };
        let train_metric = if cfg.eval_train { Some(evaluate(model, data, train_idx, p_c, cfg)?.1) } else { None };
        let train_loss = sum / order.len() as f64;
        log::debug!("epoch {epoch}: loss {train_loss:.6} val {val_loss:?} metric {val_metric:?} ({seconds:.3}s)");
        log.records.push(EpochRecord { epoch, lr, train_loss, val_loss, val_metric, train_metric, seconds });
    }
    Ok(log)
}

/// Seeded split by `cfg.split_fraction`, then [`fit`].
pub fn train(model: &mut ModelGraph, data: &TrainData, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let (tr, va) = split_dataset(data.len(), cfg.split_fraction, cfg.seed)?;
    fit(model, data, &tr, &va, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Benchmark,
    Control,
    Experimental,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Benchmark, Variant::Control, Variant::Experimental];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Benchmark => "benchmark",
            Variant::Control => "control",
            Variant::Experimental => "experimental",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Variant::Benchmark => 'B',
            Variant::Control => 'C',
            Variant::Experimental => 'E',
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Variant::Benchmark => 2,
            Variant::Control | Variant::Experimental => 3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub mean_seconds: f64,
    pub sd_seconds: f64,
    pub final_accuracy: f64,
    pub epochs: usize,
}

pub fn summarize(log: &TrainLog) -> RunSummary {
    let (mean_seconds, sd_seconds) = mean_sd(&log.seconds());
    let final_accuracy = log.records.last().and_then(|r| r.val_metric).unwrap_or(0.0);
    RunSummary { mean_seconds, sd_seconds, final_accuracy, epochs: log.records.len() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRun {
    pub variant: Variant,
    pub input_channels: usize,
    pub param_count: usize,
    pub log: TrainLog,
    pub summary: RunSummary,
}

/// One row of the comparison table: either a test result or the reason it
/// could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisRow {
    pub label: String,
    pub result: std::result::Result<HypothesisResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub runs: Vec<SensitivityRun>,
    pub n_validation: usize,
    pub hypotheses: Vec<HypothesisRow>,
}

impl SensitivityReport {
    pub fn run(&self, v: Variant) -> &SensitivityRun {
        self.runs.iter().find(|r| r.variant == v).expect("all three variants are run")
    }

    /// Summary CSV plus the four hypothesis rows.
    pub fn render(&self) -> String {
        let mut s = String::from("model,input_channels,params,epochs,mean_sec_per_epoch,sd_sec_per_epoch,final_binary_accuracy\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.5}",
                r.variant, r.input_channels, r.param_count, r.summary.epochs, r.summary.mean_seconds, r.summary.sd_seconds, r.summary.final_accuracy
            );
        }
        s.push_str("\nhypothesis,test,statistic,p_value\n");
        for h in &self.hypotheses {
            match &h.result {
                Ok(r) => {
                    let _ = writeln!(s, "{},{},{:.6},{:.6e}", h.label, r.test, r.statistic, r.p_value);
                }
                Err(why) => {
                    let _ = writeln!(s, "{},n/a,n/a,n/a ({why})", h.label);
                }
            }
        }
        s
    }
}

/// Channel stack for one variant: standardized SWIR, plus the standardized
/// raw cirrus band (control) or the encoded cirrus segmentation (experimental).
pub fn variant_inputs(dataset: &PatchDataset, variant: Variant, train_idx: &[usize], seg_seed: u64) -> Result<TrainData> {
    let swir = select_bands_dataset(dataset, &SWIR)?;
    let with_cirrus = [SWIR[0], SWIR[1], CIRRUS];
    let bands: &[&str] = if variant == Variant::Control { &with_cirrus } else { &SWIR };
    let selected = if variant == Variant::Control { select_bands_dataset(dataset, bands)? } else { swir };
    let (_, fitted) = normalize_bands(&selected.subset(train_idx), StatsSource::Fit)?;
    let (floats, _) = normalize_bands(&selected, StatsSource::Given(&fitted))?;
    let first = floats.patches.first().ok_or_else(|| Error::InsufficientData("empty dataset".into()))?;
    let (h, w) = (first.height, first.width);
    let c = variant.channels();
    let mut x = Vec::with_capacity(floats.patches.len() * h * w * c);
    for (i, p) in floats.patches.iter().enumerate() {
        if variant == Variant::Experimental {
            let raw = &dataset.patches[i];
            let b = raw.band_index(CIRRUS)?;
            let seg = segment_cirrus(&raw.band_plane(b), h, w, SegmentOptions { seed: image_seed(seg_seed, i), normalize: false })?;
            let enc = encode_channel(&seg);
            for (px, e) in p.values.chunks(2).zip(enc) {
                x.extend_from_slice(px);
                x.push(e);
            }
        } else {
            x.extend_from_slice(&p.values);
        }
    }
    let labels: Vec<f64> = dataset.patches.iter().map(|p| f64::from(u8::from(p.has_fire()))).collect();
    let n = dataset.len();
    TrainData::new(Tensor::new(vec![n, h, w, c], x)?, Tensor::new(vec![n, 1], labels)?)
}

/// Trains benchmark, control and experimental classifiers sequentially with
/// the same architecture family, hyperparameters, split and seed, then
/// compares accuracy (two-proportion z) and epoch time (Welch t).
pub fn run_sensitivity(dataset: &PatchDataset, cnn: &CnnConfig, cfg: &TrainConfig) -> Result<SensitivityReport> {
    cfg.validate()?;
    dataset.validate()?;
    let (train_idx, val_idx) = split_dataset(dataset.len(), cfg.split_fraction, cfg.seed)?;
    if val_idx.is_empty() {
        return Err(Error::InsufficientData("validation split is empty".into()));
    }
    let inputs: Vec<(Variant, TrainData)> = Variant::ALL
        .iter()
        .map(|&v| variant_inputs(dataset, v, &train_idx, cfg.seed).map(|d| (v, d)))
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for (variant, data) in &inputs {
        let mut cc = cnn.with_input_channels(variant.channels());
        let (_, h, w, c) = data.inputs.dims4()?;
        if c != cc.input_channels {
            return Err(Error::Shape(format!("{variant} data has {c} channels, model expects {}", cc.input_channels)));
        }
        cc.input_size = (h, w);
        let (mut model, _) = build_sensitivity_cnn(&cc, cfg.seed)?;
        log::info!("training {variant} classifier ({} channels, {} params)", c, model.param_count());
        let log = fit(&mut model, data, &train_idx, &val_idx, cfg)?;
        let summary = summarize(&log);
        runs.push(SensitivityRun { variant: *variant, input_channels: c, param_count: model.param_count(), log, summary });
    }
    let n = val_idx.len() as u64;
    let get = |v: Variant| runs.iter().find(|r| r.variant == v).expect("variant present").summary;
    let (b, c, e) = (get(Variant::Benchmark), get(Variant::Control), get(Variant::Experimental));
    let epochs = e.epochs as u64;
    let hypotheses = vec![
        HypothesisRow {
            label: "accuracy p_E - p_B > 0".into(),
            result: two_proportion_z(e.final_accuracy, n, b.final_accuracy, n, Alternative::Greater).map_err(|x| x.to_string()),
        },
        HypothesisRow {
            label: "accuracy p_E - p_C < 0".into(),
            result: two_proportion_z(e.final_accuracy, n, c.final_accuracy, n, Alternative::Less).map_err(|x| x.to_string()),
        },
        HypothesisRow {
            label: "time mu_E - mu_B > 0".into(),
            result: welch_t(e.mean_seconds, e.sd_seconds, epochs, b.mean_seconds, b.sd_seconds, b.epochs as u64, Alternative::Greater)
                .map_err(|x| x.to_string()),
        },
        HypothesisRow {
            label: "time mu_E - mu_C < 0".into(),
            result: welch_t(e.mean_seconds, e.sd_seconds, epochs, c.mean_seconds, c.sd_seconds, c.epochs as u64, Alternative::Less)
                .map_err(|x| x.to_string()),
        },
    ];
    Ok(SensitivityReport { runs, n_validation: val_idx.len(), hypotheses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::{grad_check_with, GraphBuilder, Padding};
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn class_weight_ratios() {
        let mut m = vec![0u8; 14];
        m.extend([1, 1]);
        assert_eq!(compute_class_weight([m.as_slice()]).unwrap(), ClassWeight(7.0));
        assert_eq!(compute_class_weight([&[0u8, 1][..]]).unwrap(), ClassWeight(1.0));
        assert!(matches!(compute_class_weight([&[0u8; 4][..]]), Err(Error::NoPositivePixels)));
        // column totals of a large confusion table
        let mut totals = vec![0u8; 35_075_560];
        totals.extend(std::iter::repeat_n(1u8, 18_968));
        let w = compute_class_weight([totals.as_slice()]).unwrap().0;
        assert!((w - 1849.1965).abs() < 1e-4, "{w}");
    }

    #[test]
    fn bce_single_pixels() {
        let (l, _) = weighted_bce(&t(&[1, 1], &[0.5]), &t(&[1, 1], &[1.0]), 2.0).unwrap();
        assert!((l - 1.38629).abs() < 1e-5);
        let (l, _) = weighted_bce(&t(&[1, 1], &[0.5]), &t(&[1, 1], &[0.0]), 123.0).unwrap();
        assert!((l - 0.69315).abs() < 1e-5);
        let (l, _) = weighted_bce(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), 5.0).unwrap();
        assert!(l < 1e-5);
        assert!(weighted_bce(&t(&[1, 2], &[0.5, 0.5]), &t(&[2, 1], &[1.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn bce_sums_pixels_and_averages_images() {
        // two images of two pixels each: the loss is the per-image sum averaged
        let p = t(&[2, 2], &[0.5, 0.5, 0.5, 0.5]);
        let y = t(&[2, 2], &[0.0; 4]);
        let (l, _) = weighted_bce(&p, &y, 1.0).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_differences() {
        let p = t(&[2, 3], &[0.2, 0.7, 0.4, 0.9, 0.1, 0.55]);
        let y = t(&[2, 3], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let (_, g) = weighted_bce(&p, &y, 3.5).unwrap();
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a.data_mut()[i] += 1e-6;
            b.data_mut()[i] -= 1e-6;
            let num = (weighted_bce(&a, &y, 3.5).unwrap().0 - weighted_bce(&b, &y, 3.5).unwrap().0) / 2e-6;
            assert!((num - g.data()[i]).abs() / num.abs().max(1e-5) < 1e-6);
        }
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 1e-3, 0.1), 1e-3);
        assert!((lr_schedule(10, 1e-3, 0.1) - 3.67879e-4).abs() < 1e-9);
        assert!((1..50).all(|e| lr_schedule(e, 1e-3, 0.1) < lr_schedule(e - 1, 1e-3, 0.1)));
    }

    fn scalar_param(w: f64, g: f64) -> Param {
        Param { name: "w".into(), value: Tensor::scalar(w), grad: Tensor::scalar(g), trainable: true }
    }

    #[test]
    fn adam_hand_trace_and_oracle() {
        let mut ps = vec![scalar_param(1.0, 1.0)];
        let mut st = AdamState::for_params(&ps);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert!((ps[0].value.data()[0] - 0.9).abs() < 1e-7);

        // independent scalar re-implementation
        let (mut w, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        let mut ps = vec![scalar_param(0.3, 0.0)];
        let mut st = AdamState::for_params(&ps);
        for step in 1..=2 {
            let g = -0.75;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(step));
            let vh = v / (1.0 - 0.999f64.powi(step));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
            ps[0].grad = Tensor::scalar(g);
            adam_step(&mut ps, &mut st, 0.01).unwrap();
        }
        assert!((ps[0].value.data()[0] - w).abs() < 1e-12);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn adam_zero_and_nonfinite() {
        let mut ps = vec![scalar_param(2.0, 0.0)];
        let mut st = AdamState::for_params(&ps);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps[0].value.data()[0], 2.0);
        ps[0].grad = Tensor::scalar(f64::NAN);
        match adam_step(&mut ps, &mut st, 0.1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
    }

    fn l2_model(lambda: f64) -> ModelGraph {
        let mut g = GraphBuilder::new(1, None, 3);
        let c = g.conv2d("c", GraphBuilder::INPUT, 2, 3, 1, Padding::Same).unwrap();
        if lambda > 0.0 {
            g.set_l2(c, lambda).unwrap();
        }
        g.finish(Head::PixelMask)
    }

    #[test]
    fn l2_values() {
        assert_eq!(l2_penalty(&mut l2_model(0.0), true), 0.0);
        let mut m = l2_model(3e-3);
        let pid = m.l2_nodes().next().unwrap().1;
        m.params[pid].value.data_mut().iter_mut().for_each(|w| *w = 0.0);
        m.params[pid].value.data_mut()[0] = 2.0;
        m.zero_grad();
        assert!((l2_penalty(&mut m, true) - 0.012).abs() < 1e-15);
        assert!((m.params[pid].grad.data()[0] - 0.012).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_matches_differences() {
        let mut m = l2_model(3e-3);
        m.zero_grad();
        l2_penalty(&mut m, true);
        let pid = m.l2_nodes().next().unwrap().1;
        let analytic = m.params[pid].grad.clone();
        for i in 0..analytic.len() {
            let orig = m.params[pid].value.data()[i];
            m.params[pid].value.data_mut()[i] = orig + 1e-5;
            let fp = l2_penalty(&mut m, false);
            m.params[pid].value.data_mut()[i] = orig - 1e-5;
            let fm = l2_penalty(&mut m, false);
            m.params[pid].value.data_mut()[i] = orig;
            let num = (fp - fm) / 2e-5;
            assert!((num - analytic.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn two_layer_objective_gradient() {
        let mut g = GraphBuilder::new(2, None, 11);
        let c = g.conv2d("c1", GraphBuilder::INPUT, 3, 3, 1, Padding::Same).unwrap();
        g.set_l2(c, 0.05).unwrap();
        let r = g.relu("r", c);
        let c2 = g.conv2d("c2", r, 1, 1, 1, Padding::Same).unwrap();
        g.set_l2(c2, 0.05).unwrap();
        g.sigmoid("s", c2);
        let mut m = g.finish(Head::PixelMask);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(&[2, 4, 4, 2], |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let y = Tensor::from_fn(&[2, 4, 4, 1], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let report = grad_check_with(&mut m, &x, 1e-6, |m, x, with_grad| {
            let out = m.forward(x, Mode::Train)?;
            let (l, g) = weighted_bce(&out, &y, 4.0)?;
            let f = l + l2_penalty(m, with_grad);
            let gx = if with_grad { Some(m.backward(&g)?) } else { None };
            Ok((f, gx))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 50);
    }

    #[test]
    fn split_rules() {
        let (tr, va) = split_dataset(14_274, 0.85, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (12_132, 2_142));
        let (tr, va) = split_dataset(5_420, 0.80, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (4_336, 1_084));
        assert_eq!(split_dataset(100, 0.7, 9).unwrap(), split_dataset(100, 0.7, 9).unwrap());
        assert!(split_dataset(10, 1.0, 0).is_err());
    }

    #[test]
    fn zero_epochs_leave_params_untouched() {
        let mut m = l2_model(0.0);
        let before = m.named_params();
        let data = TrainData::new(Tensor::zeros(&[2, 4, 4, 1]), Tensor::filled(&[2, 4, 4, 2], 1.0)).unwrap();
        let cfg = TrainConfig { epochs: 0, class_weight: Some(1.0), ..TrainConfig::desk() };
        let log = fit(&mut m, &data, &[0, 1], &[], &cfg).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(m.named_params(), before);
    }

    #[test]
    fn summary_of_constant_timing() {
        let rec = |s| EpochRecord { epoch: 0, lr: 0.0, train_loss: 0.0, val_loss: None, val_metric: Some(0.5), train_metric: None, seconds: s };
        let log = TrainLog { config: TrainConfig::desk(), class_weight: 1.0, metric: "binary_accuracy", records: vec![rec(2.0); 5] };
        let s = summarize(&log);
        assert_eq!((s.mean_seconds, s.sd_seconds, s.final_accuracy), (2.0, 0.0, 0.5));
    }

    #[test]
    fn config_round_trip() {
        let cfg = TrainConfig { class_weight: Some(3.5), seed: 77, ..TrainConfig::paper() };
        let mut kv = KeyValues::new();
        cfg.to_kv(&mut kv);
        assert_eq!(TrainConfig::from_kv(&kv, &TrainConfig::desk()).unwrap(), cfg);
        assert!(TrainConfig { batch_size: 0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { split_fraction: 1.0, ..cfg }.validate().is_err());
    }

    proptest! {
        #[test]
        fn unit_weight_is_plain_bce(vals in proptest::collection::vec((0.001f64..0.999, proptest::bool::ANY), 1..40)) {
            let n = vals.len();
            let p = Tensor::new(vec![1, n], vals.iter().map(|v| v.0).collect()).unwrap();
            let y = Tensor::new(vec![1, n], vals.iter().map(|v| f64::from(u8::from(v.1))).collect()).unwrap();
            let (l, _) = weighted_bce(&p, &y, 1.0).unwrap();
            let plain: f64 = vals.iter().map(|&(q, b)| if b { -q.ln() } else { -(1.0 - q).ln() }).sum();
            prop_assert!((l - plain).abs() < 1e-12);
        }

        #[test]
        fn split_partitions(n in 2usize..500, f in 0.05f64..0.95, seed in 0u64..1000) {
            let (tr, va) = split_dataset(n, f, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
