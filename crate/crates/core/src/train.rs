//! Contrastive pre-training of the encoder and supervised fine-tuning of the
//! classifier head.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::Window;
use crate::codec::parse_ip_header;
use crate::corruption::{corrupt_bits, CorruptionSpec};
use crate::error::{Error, Result};
use crate::eval::{build_training_sets, LabelSource, LayerSplit};
use crate::layer::Layer;
use crate::nn::{Adam, Checkpoint, Classifier, Encoder, EncoderConfig, Head, Params};
use crate::recover::ModelSet;
use crate::seed::derive_seed;
use crate::synth::AnnotatedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Instances per pre-training batch; each yields two views.
    pub batch: usize,
    pub temperature: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub finetune_batch: usize,
    /// Training-time flip ratio.
    pub gamma1: f64,
    /// Training-time loss ratio.
    pub gamma2: f64,
    /// Corrupt fine-tuning windows too, fresh each epoch.
    pub finetune_augment: bool,
    pub channels: usize,
    pub out_dim: usize,
    pub hidden: usize,
    /// Cap on training windows per class and layer; `None` uses them all.
    pub max_positives: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            temperature: 0.5,
            pretrain_epochs: 100,
            finetune_epochs: 20,
            pretrain_lr: 1e-3,
            finetune_lr: 1e-3,
            finetune_batch: 256,
            gamma1: 0.1,
            gamma2: 0.1,
            finetune_augment: true,
            channels: 64,
            out_dim: 64,
            hidden: 64,
            max_positives: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("pre-training batch must be at least 2".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.finetune_batch == 0 || self.channels == 0 || self.out_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("batch sizes and widths must be positive".into()));
        }
        if !(self.pretrain_lr > 0.0 && self.finetune_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.augmentation(0).map(|_| ())
    }

    pub fn encoder_config(&self, t: usize) -> EncoderConfig {
        EncoderConfig::with_dims(t, self.channels, 10, 3, self.out_dim)
    }

    fn augmentation(&self, seed: u64) -> Result<CorruptionSpec> {
        CorruptionSpec::new(self.gamma1, self.gamma2, seed)
    }
}

/// Windows with header (1) and non-header (0) labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub positives: Vec<Window>,
    pub negatives: Vec<Window>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives then negatives, with their labels.
    pub fn windows(&self) -> impl Iterator<Item = (&Window, u8)> {
        self.positives.iter().map(|w| (w, 1)).chain(self.negatives.iter().map(|w| (w, 0)))
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub layer: Option<Layer>,
    pub stage: String,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// Receives loss records as training proceeds.
pub type LossSink<'a> = dyn FnMut(LossRecord) + 'a;

/// A sink that drops every record.
pub fn no_log(_: LossRecord) {}

/// Two independently corrupted views of `w`.
pub fn augment_pair(w: &Window, gamma1: f64, gamma2: f64, seed: u64) -> Result<(Window, Window)> {
    let view = |k: u64| -> Result<Window> {
        let spec = CorruptionSpec::new(gamma1, gamma2, derive_seed(seed, &[k]))?;
        Ok(Window { bits: corrupt_bits(&w.bits, &spec)?, origin: w.origin })
    };
    Ok((view(0)?, view(1)?))
}

fn window_len(windows: &[Window]) -> Result<usize> {
    let t = windows.first().map(|w| w.len()).unwrap_or(0);
    if t == 0 || windows.iter().any(|w| w.len() != t) {
        return Err(Error::Config("windows must share a non-zero length".into()));
    }
    Ok(t)
}

fn diverged(epoch: usize, batch: usize, what: &str) -> Error {
    Error::Divergence { epoch, batch, what: what.into() }
}

/// Self-supervised NT-Xent training of a fresh encoder on header windows.
pub fn pretrain(positives: &[Window], cfg: &TrainConfig, log: &mut LossSink) -> Result<Encoder<f32>> {
    cfg.validate()?;
    if positives.len() < cfg.batch {
        return Err(Error::InsufficientData(format!(
            "{} positives for a batch of {}",
            positives.len(),
            cfg.batch
        )));
    }
    let t = window_len(positives)?;
    let layer = Layer::from_window_bits(t);
    let mut enc = Encoder::<f32>::init(&cfg.encoder_config(t), derive_seed(cfg.seed, &[1]))?;
    let mut opt = Adam::new(&enc, cfg.pretrain_lr as f32);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    for epoch in 0..cfg.pretrain_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, epoch as u64])));
        for (bi, idx) in order.chunks(cfg.batch).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let mut bits = Vec::with_capacity(idx.len() * 2 * t);
            for (j, &i) in idx.iter().enumerate() {
                let seed = derive_seed(cfg.seed, &[3, epoch as u64, bi as u64, j as u64]);
                let (a, b) = augment_pair(&positives[i], cfg.gamma1, cfg.gamma2, seed)?;
                bits.extend_from_slice(&a.bits);
                bits.extend_from_slice(&b.bits);
            }
            let (loss, g) = enc.ntxent_gradients(&bits, cfg.temperature as f32)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, bi, "non-finite NT-Xent loss"));
            }
            opt.step(&mut enc, &g).map_err(|_| diverged(epoch, bi, "non-finite gradient"))?;
            log(LossRecord { layer, stage: "pretrain".into(), epoch, batch: bi, loss: loss as f64 });
        }
    }
    Ok(enc)
}

/// Trains a classifier head over the frozen backbone of `encoder` with
/// binary cross entropy.
pub fn finetune(
    encoder: &Encoder<f32>,
    data: &LabeledSet,
    cfg: &TrainConfig,
    log: &mut LossSink,
) -> Result<Classifier<f32>> {
    cfg.validate()?;
    if data.positives.is_empty() || data.negatives.is_empty() {
        return Err(Error::Config("fine-tuning needs both header and non-header windows".into()));
    }
    let t = encoder.cfg().t;
    if data.windows().any(|(w, _)| w.len() != t) {
        return Err(Error::Config(format!("fine-tuning windows must have {t} bits")));
    }
    let layer = Layer::from_window_bits(t);
    let mut clf = Classifier::new(encoder.clone(), cfg.hidden, derive_seed(cfg.seed, &[4]))?;
    let mut opt = Adam::new(&clf.head, cfg.finetune_lr as f32);
    let labels: Vec<u8> = data.windows().map(|(_, y)| y).collect();
    let c = clf.cfg().c;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut pooled = Vec::new();
    let (mut mu, mut sigma) = (vec![0.0f32; c], vec![1.0f32; c]);
    for epoch in 0..cfg.finetune_epochs {
        if epoch == 0 || cfg.finetune_augment {
            let mut bits = Vec::with_capacity(labels.len() * t);
            for (i, (w, _)) in data.windows().enumerate() {
                if cfg.finetune_augment {
                    let spec = cfg.augmentation(derive_seed(cfg.seed, &[5, epoch as u64, i as u64]))?;
                    bits.extend(corrupt_bits(&w.bits, &spec)?);
                } else {
                    bits.extend_from_slice(&w.bits);
                }
            }
            pooled = clf.encoder.backbone.pooled(&bits)?;
            if epoch == 0 {
                (mu, sigma) = feature_moments(&pooled, c);
            }
        }
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[6, epoch as u64])));
        for (bi, idx) in order.chunks(cfg.finetune_batch).enumerate() {
            let feats: Vec<f32> = idx
                .iter()
                .flat_map(|&i| pooled[i * c..(i + 1) * c].iter().zip(mu.iter().zip(&sigma)).map(|(x, (m, s))| (x - m) / s))
                .collect();
            let ys: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, g) = clf.head.bce_gradients(&feats, &ys)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, bi, "non-finite BCE loss"));
            }
            opt.step(&mut clf.head, &g).map_err(|_| diverged(epoch, bi, "non-finite gradient"))?;
            log(LossRecord { layer, stage: "finetune".into(), epoch, batch: bi, loss: loss as f64 });
        }
    }
    fold_standardization(&mut clf.head, &mu, &sigma);
    Ok(clf)
}

/// Per-channel mean and standard deviation of pooled features.
fn feature_moments(pooled: &[f32], c: usize) -> (Vec<f32>, Vec<f32>) {
    let n = (pooled.len() / c).max(1) as f64;
    let mut mean = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for row in pooled.chunks_exact(c) {
        for j in 0..c {
            mean[j] += row[j] as f64;
            sq[j] += (row[j] as f64).powi(2);
        }
    }
    let mu: Vec<f32> = mean.iter().map(|m| (m / n) as f32).collect();
    let sigma = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| {
            let var = s / n - (m / n).powi(2);
            if var > 1e-12 { var.sqrt() as f32 } else { 1.0 }
        })
        .collect();
    (mu, sigma)
}

/// Rewrites the first head layer so it accepts raw pooled features.
fn fold_standardization(head: &mut Head<f32>, mu: &[f32], sigma: &[f32]) {
    let h = head.hidden;
    for i in 0..head.c {
        for j in 0..h {
            let w = head.w1[i * h + j] / sigma[i];
            head.w1[i * h + j] = w;
            head.b1[j] -= mu[i] * w;
        }
    }
}

/// Appends loss records to a line-delimited JSON file.
pub struct LossLog {
    out: std::io::BufWriter<fs::File>,
    error: Option<std::io::Error>,
}

impl LossLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self { out: std::io::BufWriter::new(fs::File::create(path)?), error: None })
    }

    pub fn record(&mut self, r: LossRecord) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(&r).expect("loss record serializes");
        if let Err(e) = writeln!(self.out, "{line}") {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Trained models together with the data splits they came from.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: ModelSet,
    pub splits: Vec<(Layer, LayerSplit)>,
    pub written: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn split(&self, layer: Layer) -> &LayerSplit {
        &self.splits.iter().find(|(l, _)| *l == layer).expect("every layer is trained").1
    }
}

/// Pre-trains and fine-tunes one classifier per layer. When `out_dir` is
/// given, writes `bb.clxt`, `gse.clxt`, `ip.clxt` and `protocols.json` there.
pub fn train_all_layers(
    streams: &[AnnotatedStream],
    source: LabelSource,
    split_seed: u64,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    log: &mut LossSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = build_training_sets(streams, source, split_seed)?;
    let mut classifiers = Vec::new();
    for (layer, split) in &splits {
        let mut train = split.train.clone();
        if let Some(cap) = cfg.max_positives {
            train.positives.truncate(cap);
            train.negatives.truncate(cap);
        }
        let layer_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[*layer as u64]), ..cfg.clone() };
        log::info!("{layer}: pre-training on {} positives", train.positives.len());
        let enc = pretrain(&train.positives, &layer_cfg, log)?;
        log::info!("{layer}: fine-tuning on {} windows", train.len());
        classifiers.push(finetune(&enc, &train, &layer_cfg, log)?);
    }
    let ip_train = &splits.iter().find(|(l, _)| *l == Layer::Ip).expect("ip split").1.train;
    let protocols = observed_protocols(&ip_train.positives);
    let mut it = classifiers.into_iter();
    let models = ModelSet {
        bb: it.next().expect("bb"),
        gse: it.next().expect("gse"),
        ip: it.next().expect("ip"),
        protocols,
    };
    let written = match out_dir {
        Some(dir) => models.save(dir)?,
        None => Vec::new(),
    };
    Ok(TrainOutcome { models, splits, written })
}

/// Protocol codes carried by IP header windows whose checksum verifies, sorted.
pub fn observed_protocols(ip_windows: &[Window]) -> Vec<u8> {
    let mut codes: Vec<u8> = ip_windows
        .iter()
        .filter_map(|w| match parse_ip_header(&w.to_bytes()) {
            Ok((h, true)) if h.version == 4 => Some(h.protocol),
            _ => None,
        })
        .collect();
    codes.sort_unstable();
    codes.dedup();
    codes
}

/// Writes a checkpoint for a freshly trained encoder or classifier.
pub fn save_checkpoint(ck: impl Into<Checkpoint>, path: impl AsRef<Path>) -> Result<()> {
    let ck: Checkpoint = ck.into();
    if !ck.encoder.all_finite() {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    ck.save(path)
}
