//! Network families: the encoder/decoder mask predictor and the image-level
//! classifier used for the band sensitivity comparison.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autonet::checkpoint::{decode_checkpoint, write_checkpoint};
pub use crate::autonet::Head;
use crate::autonet::{GraphBuilder, ModelGraph, NodeId, Padding};
use crate::config::KeyValues;
use crate::{Error, Result};

/// Encoder/decoder with skip connections.
///
/// Block `i` of the encoder has `base_width * 2^i` filters; the bottleneck has
/// `base_width * 2^depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcnConfig {
    pub base_width: usize,
    pub depth: usize,
    pub input_channels: usize,
}

impl Default for FcnConfig {
    fn default() -> Self {
        FcnConfig { base_width: 8, depth: 3, input_channels: 3 }
    }
}

impl FcnConfig {
    /// Small network for CPU experiments and tests.
    pub fn desk(input_channels: usize) -> Self {
        FcnConfig { base_width: 8, depth: 3, input_channels }
    }

    /// 2,133,745 trainable parameters with 3 input channels.
    pub fn paper() -> Self {
        FcnConfig { base_width: 48, depth: 3, input_channels: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.input_channels == 0 {
            return Err(Error::Config(format!("depth, base_width and input_channels must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("model", "fcn");
        kv.set("base_width", self.base_width);
        kv.set("depth", self.depth);
        kv.set("input_channels", self.input_channels);
    }

    pub fn from_kv(kv: &KeyValues, defaults: FcnConfig) -> Result<Self> {
        let cfg = FcnConfig {
            base_width: kv.get_or("base_width", defaults.base_width)?,
            depth: kv.get_or("depth", defaults.depth)?,
            input_channels: kv.get_or("input_channels", defaults.input_channels)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named node ids of a built FCN, for shape inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcnLayout {
    pub encoder_outputs: Vec<NodeId>,
    pub decoder_upsamples: Vec<NodeId>,
    pub decoder_concats: Vec<NodeId>,
}

/// Encoder blocks conv-bn-relu-pool, a conv-bn-relu bottleneck, decoder
/// blocks upconv-concat-conv-bn-relu, and a 1x1 conv + sigmoid head.
pub fn build_fcn(cfg: &FcnConfig, seed: u64) -> Result<(ModelGraph, FcnLayout)> {
    cfg.validate()?;
    let mut g = GraphBuilder::new(cfg.input_channels, None, seed);
    let mut x = GraphBuilder::INPUT;
    let mut skips = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let w = cfg.base_width << i;
        x = g.conv2d(&format!("enc{i}.conv"), x, w, 3, 1, Padding::Same)?;
        x = g.batchnorm(&format!("enc{i}.bn"), x);
        x = g.relu(&format!("enc{i}.relu"), x);
        skips.push(x);
        x = g.maxpool2(&format!("enc{i}.pool"), x)?;
    }
    x = g.conv2d("bottleneck.conv", x, cfg.base_width << cfg.depth, 3, 1, Padding::Same)?;
    x = g.batchnorm("bottleneck.bn", x);
    x = g.relu("bottleneck.relu", x);
    let mut ups = Vec::with_capacity(cfg.depth);
    let mut concats = Vec::with_capacity(cfg.depth);
    for i in (0..cfg.depth).rev() {
        let w = cfg.base_width << i;
        x = g.conv2d_transpose(&format!("dec{i}.up"), x, w, 2, 2)?;
        ups.push(x);
        x = g.concat(&format!("dec{i}.concat"), x, skips[i])?;
        concats.push(x);
        x = g.conv2d(&format!("dec{i}.conv"), x, w, 3, 1, Padding::Same)?;
        x = g.batchnorm(&format!("dec{i}.bn"), x);
        x = g.relu(&format!("dec{i}.relu"), x);
    }
    x = g.conv2d("head.conv", x, 1, 1, 1, Padding::Same)?;
    g.sigmoid("head.sigmoid", x);
    let layout = FcnLayout { encoder_outputs: skips, decoder_upsamples: ups, decoder_concats: concats };
    Ok((g.finish(Head::PixelMask), layout))
}

/// Image-level classifier: conv3x3-relu-pool stages, dropout before
/// flattening, dense-relu-dropout stages, one sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_channels: usize,
    pub input_size: (usize, usize),
    pub conv_widths: Vec<usize>,
    pub dense_widths: Vec<usize>,
    /// L2 coefficient per conv layer; only the final two may be non-zero.
    pub conv_l2: Vec<f64>,
    pub conv_dropout: f64,
    /// One probability per dense layer, non-increasing.
    pub dense_dropouts: Vec<f64>,
}

pub const SENSITIVITY_L2: f64 = 3e-3;

/// Spreads dropout linearly from 0.3 down to 0.1 over `n` layers.
pub fn decreasing_dropouts(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.3],
        _ => (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                0.3 * (1.0 - t) + 0.1 * t
            })
            .collect(),
    }
}

fn final_two_l2(convs: usize, lambda: f64) -> Vec<f64> {
    (0..convs).map(|i| if i + 2 >= convs { lambda } else { 0.0 }).collect()
}

impl CnnConfig {
    pub fn desk(input_channels: usize, input_size: (usize, usize)) -> Self {
        let conv_widths = vec![8, 16, 16];
        CnnConfig {
            input_channels,
            input_size,
            conv_l2: final_two_l2(conv_widths.len(), SENSITIVITY_L2),
            conv_widths,
            dense_widths: vec![16, 8],
            conv_dropout: 0.3,
            dense_dropouts: decreasing_dropouts(2),
        }
    }

    /// 1,825,006 trainable parameters on 128x128x3 input.
    pub fn paper(input_channels: usize) -> Self {
        let conv_widths = vec![32, 64, 128, 256, 256];
        CnnConfig {
            input_channels,
            input_size: (128, 128),
            conv_l2: final_two_l2(conv_widths.len(), SENSITIVITY_L2),
            conv_widths,
            dense_widths: vec![205, 32],
            conv_dropout: 0.3,
            dense_dropouts: decreasing_dropouts(2),
        }
    }

    pub fn with_input_channels(&self, c: usize) -> Self {
        CnnConfig { input_channels: c, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.conv_widths.len();
        if self.input_channels == 0 || n == 0 || self.conv_widths.contains(&0) || self.dense_widths.contains(&0) {
            return Err(Error::Config("classifier needs positive channel counts and at least one conv".into()));
        }
        let shrink = 1usize << n;
        if self.input_size.0 < shrink || self.input_size.1 < shrink {
            return Err(Error::Config(format!(
                "input {:?} too small for {n} pooling stages",
                self.input_size
            )));
        }
        if self.conv_l2.len() != n {
            return Err(Error::Config(format!("conv_l2 has {} entries for {n} conv layers", self.conv_l2.len())));
        }
        if let Some(i) = self.conv_l2.iter().enumerate().position(|(i, &l)| l != 0.0 && i + 2 < n) {
            return Err(Error::Config(format!(
                "L2 attached to conv layer {i}; only the final two conv layers may be regularized"
            )));
        }
        if self.conv_l2.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("L2 coefficients must be finite and non-negative".into()));
        }
        if self.dense_dropouts.len() != self.dense_widths.len() {
            return Err(Error::Config(format!(
                "{} dropout probabilities for {} dense layers",
                self.dense_dropouts.len(),
                self.dense_widths.len()
            )));
        }
        for &p in std::iter::once(&self.conv_dropout).chain(&self.dense_dropouts) {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
            }
        }
        if self.dense_dropouts.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!("dense dropouts {:?} must be non-increasing", self.dense_dropouts)));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("model", "cnn");
        kv.set("input_channels", self.input_channels);
        kv.set("input_height", self.input_size.0);
        kv.set("input_width", self.input_size.1);
        kv.set_list("conv_widths", &self.conv_widths);
        kv.set_list("dense_widths", &self.dense_widths);
        kv.set_list("conv_l2", &self.conv_l2);
        kv.set("conv_dropout", self.conv_dropout);
        kv.set_list("dense_dropouts", &self.dense_dropouts);
    }

    pub fn from_kv(kv: &KeyValues, defaults: &CnnConfig) -> Result<Self> {
        let conv_widths: Vec<usize> = kv.get_list("conv_widths")?.unwrap_or_else(|| defaults.conv_widths.clone());
        let dense_widths: Vec<usize> = kv.get_list("dense_widths")?.unwrap_or_else(|| defaults.dense_widths.clone());
        let conv_l2 = match (kv.get_list::<f64>("conv_l2")?, kv.get::<f64>("l2_lambda")?) {
            (Some(list), _) => list,
            (None, Some(lambda)) => final_two_l2(conv_widths.len(), lambda),
            (None, None) if conv_widths.len() == defaults.conv_widths.len() => defaults.conv_l2.clone(),
            (None, None) => final_two_l2(conv_widths.len(), SENSITIVITY_L2),
        };
        let dense_dropouts = match kv.get_list::<f64>("dense_dropouts")? {
            Some(d) => d,
            None if dense_widths.len() == defaults.dense_widths.len() => defaults.dense_dropouts.clone(),
            None => decreasing_dropouts(dense_widths.len()),
        };
        let cfg = CnnConfig {
            input_channels: kv.get_or("input_channels", defaults.input_channels)?,
            input_size: (
                kv.get_or("input_height", defaults.input_size.0)?,
                kv.get_or("input_width", defaults.input_size.1)?,
            ),
            conv_widths,
            dense_widths,
            conv_l2,
            conv_dropout: kv.get_or("conv_dropout", defaults.conv_dropout)?,
            dense_dropouts,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnLayout {
    pub convs: Vec<NodeId>,
    pub dense: Vec<NodeId>,
}

pub fn build_sensitivity_cnn(cfg: &CnnConfig, seed: u64) -> Result<(ModelGraph, CnnLayout)> {
    cfg.validate()?;
    let mut g = GraphBuilder::new(cfg.input_channels, Some(cfg.input_size), seed);
    let mut x = GraphBuilder::INPUT;
    let mut convs = Vec::new();
    for (i, (&w, &l2)) in cfg.conv_widths.iter().zip(&cfg.conv_l2).enumerate() {
        x = g.conv2d(&format!("conv{i}"), x, w, 3, 1, Padding::Same)?;
        if l2 > 0.0 {
            g.set_l2(x, l2)?;
        }
        convs.push(x);
        x = g.relu(&format!("conv{i}.relu"), x);
        x = g.maxpool2(&format!("conv{i}.pool"), x)?;
    }
    x = g.dropout("conv.dropout", x, cfg.conv_dropout)?;
    x = g.flatten("flatten", x)?;
    let mut dense = Vec::new();
    for (i, (&w, &p)) in cfg.dense_widths.iter().zip(&cfg.dense_dropouts).enumerate() {
        x = g.dense(&format!("dense{i}"), x, w)?;
        dense.push(x);
        x = g.relu(&format!("dense{i}.relu"), x);
        x = g.dropout(&format!("dense{i}.dropout"), x, p)?;
    }
    x = g.dense("head.dense", x, 1)?;
    g.sigmoid("head.sigmoid", x);
    Ok((g.finish(Head::Classifier), CnnLayout { convs, dense }))
}

pub fn param_count(model: &ModelGraph) -> usize {
    model.param_count()
}

/// Architecture description sufficient to rebuild a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Fcn(FcnConfig),
    Cnn(CnnConfig),
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        Ok(match self {
            ModelSpec::Fcn(c) => build_fcn(c, seed)?.0,
            ModelSpec::Cnn(c) => build_sensitivity_cnn(c, seed)?.0,
        })
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        match self {
            ModelSpec::Fcn(c) => c.to_kv(&mut kv),
            ModelSpec::Cnn(c) => c.to_kv(&mut kv),
        }
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        match kv.raw("model") {
            Some("fcn") => Ok(ModelSpec::Fcn(FcnConfig::from_kv(kv, FcnConfig::default())?)),
            Some("cnn") => {
                let c: usize = kv.require("input_channels")?;
                let size = (kv.require("input_height")?, kv.require("input_width")?);
                Ok(ModelSpec::Cnn(CnnConfig::from_kv(kv, &CnnConfig::desk(c, size))?))
            }
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

pub const MODEL_MAGIC: &str = "FPM1";
const PREAMBLE_END: &str = "end";

/// A saved model: a text preamble (`FPM1`, `key = value` lines, `end`)
/// followed by an `FPW1` weight block.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub spec: ModelSpec,
    /// Free-form metadata (bands, normalization, seed, ...).
    pub meta: KeyValues,
    pub graph: ModelGraph,
}

pub fn save_model(path: impl AsRef<Path>, spec: &ModelSpec, meta: &KeyValues, graph: &ModelGraph) -> Result<()> {
    let mut kv = spec.to_kv();
    kv.set("seed", graph.seed());
    kv.merge(meta);
    let mut buf = format!("{MODEL_MAGIC}\n{kv}{PREAMBLE_END}\n").into_bytes();
    write_checkpoint(&mut buf, &graph.named_params())?;
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let bytes = fs::read(path)?;
    let head = format!("{MODEL_MAGIC}\n");
    if !bytes.starts_with(head.as_bytes()) {
        return Err(Error::BadMagic { expected: *b"FPM1", found: bytes[..bytes.len().min(4)].to_vec() });
    }
    let marker = format!("\n{PREAMBLE_END}\n");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::Malformed("model preamble is not terminated".into()))?;
    let text = std::str::from_utf8(&bytes[head.len()..end + 1])
        .map_err(|_| Error::Malformed("model preamble is not UTF-8".into()))?;
    let meta = KeyValues::parse(text)?;
    let spec = ModelSpec::from_kv(&meta)?;
    let seed: u64 = meta.require("seed")?;
    let mut graph = spec.build(seed)?;
    graph.load_params(&decode_checkpoint(&bytes[end + marker.len()..])?)?;
    Ok(SavedModel { spec, meta, graph })
}
