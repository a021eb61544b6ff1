//! Dataset construction, detection metrics, corruption sweeps and throughput.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{Origin, Window};
use crate::corruption::{corrupt_bits, corrupt_stream, CorruptionSpec};
use crate::error::{Error, Result};
use crate::fsm::fsm_decode;
use crate::layer::Layer;
use crate::nn::Classifier;
use crate::recover::{detections_from_scores, recover, score_offsets, HeaderDetection, ModelSet, ScanConfig};
use crate::seed::derive_seed;
use crate::synth::{AnnotatedStream, Annotation};
use crate::train::LabeledSet;

/// Where header positions come from when building training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Generator ground truth.
    Annotations,
    /// Headers the FSM decoder walks successfully.
    Fsm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerSplit {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

/// Fewest positives per layer accepted for training.
pub const MIN_POSITIVES: usize = 10;

fn header_offsets(stream: &AnnotatedStream, source: LabelSource) -> [Vec<usize>; 3] {
    match source {
        LabelSource::Annotations => Layer::ALL.map(|l| stream.layer_offsets(l)),
        LabelSource::Fsm => {
            let r = fsm_decode(&stream.bytes);
            [r.bb_offsets, r.gse_offsets, r.ip_offsets]
        }
    }
}

/// Per-layer header windows and an equal number of non-header windows,
/// split 2/3 train, 1/3 test by origin. Half of the negatives sit near a header
/// start of the same layer (half of those within the header length, the rest
/// within `T/8` bytes), a quarter within 2 bytes of another layer's header
/// start, the rest anywhere.
pub fn build_training_sets(
    streams: &[AnnotatedStream],
    source: LabelSource,
    split_seed: u64,
) -> Result<Vec<(Layer, LayerSplit)>> {
    let offsets: Vec<[Vec<usize>; 3]> = streams.iter().map(|s| header_offsets(s, source)).collect();
    let mut out = Vec::new();
    for layer in Layer::ALL {
        let li = layer as usize;
        let t = layer.window_bits();
        let near = (t / 8) as isize;
        let close = layer.nominal_header_len() as isize;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (si, (stream, offs)) in streams.iter().zip(&offsets).enumerate() {
            let headers: HashSet<usize> = offs[li].iter().copied().collect();
            let len = stream.bytes.len();
            let origin = |offset| Origin { stream: si, offset, layer };
            for &o in &offs[li] {
                pos.push(Window::from_stream(&stream.bytes, o, t).with_origin(origin(o)));
            }
            let want = offs[li].len();
            if want == 0 || len <= headers.len() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split_seed, &[0x4e, li as u64, si as u64]));
            let others: Vec<usize> =
                Layer::ALL.iter().filter(|&&l| l != layer).flat_map(|&l| offs[l as usize].iter().copied()).collect();
            let mut taken: HashSet<usize> = HashSet::new();
            let mut attempts = 0;
            while taken.len() < want && attempts < want * 50 {
                attempts += 1;
                let o = match taken.len() % 4 {
                    0 | 1 => {
                        let h = offs[li][rng.gen_range(0..want)] as isize;
                        let reach = if rng.gen_bool(0.5) { close } else { near };
                        let mut d = rng.gen_range(-reach..reach);
                        if d >= 0 {
                            d += 1;
                        }
                        h + d
                    }
                    2 if !others.is_empty() => {
                        others[rng.gen_range(0..others.len())] as isize + rng.gen_range(-2..=2)
                    }
                    _ => rng.gen_range(0..len) as isize,
                };
                if o < 0 || o as usize >= len {
                    continue;
                }
                let o = o as usize;
                if !headers.contains(&o) && taken.insert(o) {
                    neg.push(Window::from_stream(&stream.bytes, o, t).with_origin(origin(o)));
                }
            }
        }
        if pos.len() < MIN_POSITIVES {
            return Err(Error::InsufficientData(format!(
                "{} {layer} headers, need at least {MIN_POSITIVES}",
                pos.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split_seed, &[0x53, li as u64]));
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let (p_test, n_test) = (pos.split_off(pos.len() * 2 / 3), neg.split_off(neg.len() * 2 / 3));
        out.push((
            layer,
            LayerSplit {
                train: LabeledSet { positives: pos, negatives: neg },
                test: LabeledSet { positives: p_test, negatives: n_test },
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::AddAssign for MetricCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Derived scores; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, precision `TP/(TP+FP)`, recall `TP/(TP+FN)` and their harmonic mean.
pub fn metrics(c: &MetricCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics { acc: ratio(c.tp + c.tn, c.total()), precision, recall, f1 }
}

/// Exact-offset matching of detections against annotated header starts of
/// one layer; every other scanned offset is a true negative.
pub fn confusion_from_detections(
    detections: &[HeaderDetection],
    annotations: &[Annotation],
    layer: Layer,
    n_candidates: usize,
) -> MetricCounts {
    let truth: HashSet<usize> = annotations.iter().filter(|a| a.layer == layer).map(|a| a.offset_bytes).collect();
    let found: Vec<usize> = detections.iter().filter(|d| d.layer == layer).map(|d| d.offset_bytes).collect();
    confusion_from_offsets(&found, &truth, n_candidates)
}

pub fn confusion_from_offsets(found: &[usize], truth: &HashSet<usize>, n_candidates: usize) -> MetricCounts {
    let found: HashSet<usize> = found.iter().copied().collect();
    let tp = found.intersection(truth).count();
    let fp = found.len() - tp;
    let fn_ = truth.len() - tp;
    MetricCounts { tp, fp, fn_, tn: n_candidates.saturating_sub(tp + fp + fn_) }
}

/// Window-level confusion of a classifier on a labeled set, optionally
/// after corrupting every window.
pub fn evaluate_windows(
    model: &Classifier<f32>,
    set: &LabeledSet,
    corruption: Option<&CorruptionSpec>,
    threshold: f64,
) -> Result<MetricCounts> {
    let mut bits = Vec::with_capacity(set.len() * model.cfg().t);
    let mut labels = Vec::with_capacity(set.len());
    for (i, (w, y)) in set.windows().enumerate() {
        match corruption {
            Some(spec) => {
                let s = CorruptionSpec { seed: derive_seed(spec.seed, &[i as u64]), ..*spec };
                bits.extend(corrupt_bits(&w.bits, &s)?);
            }
            None => bits.extend_from_slice(&w.bits),
        }
        labels.push(y);
    }
    let scores = model.predict(&bits)?;
    let mut c = MetricCounts::default();
    for (&p, &y) in scores.iter().zip(&labels) {
        match (p as f64 >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Grid of corruption settings for a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub degrees: Vec<f64>,
    /// Flip:loss ratios.
    pub ratios: Vec<[f64; 2]>,
    pub rounds: usize,
    pub seed: u64,
    pub scan: ScanConfig,
    /// Record wall-clock seconds; off gives byte-reproducible reports.
    pub timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            degrees: (1..=10).map(|i| i as f64 * 0.02).collect(),
            ratios: vec![[1.0, 3.0], [1.0, 1.0], [3.0, 1.0]],
            rounds: 10,
            seed: 0,
            scan: ScanConfig::default(),
            timing: true,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.degrees.iter().any(|&d| !(0.0..=1.0).contains(&d)) {
            return Err(Error::Config("degrees must lie in [0,1]".into()));
        }
        if self.ratios.iter().any(|r| !(r[0] >= 0.0 && r[1] >= 0.0 && r[0] + r[1] > 0.0)) {
            return Err(Error::Config("ratios need non-negative parts with a positive sum".into()));
        }
        self.scan.validate()
    }
}

fn ratio_label(r: [f64; 2]) -> String {
    format!("{}:{}", r[0], r[1])
}

/// One line of a sweep report. `round` is `None` on the mean-over-rounds row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub degree: f64,
    pub ratio: String,
    pub round: Option<usize>,
    pub layer: Layer,
    pub system: String,
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Headers reported by the system, right or wrong.
    pub headers_found: f64,
    pub elapsed_s: Option<f64>,
}

impl SweepRow {
    fn from_counts(
        key: (f64, &str, usize),
        layer: Layer,
        system: &str,
        c: &MetricCounts,
        found: usize,
        elapsed: Option<f64>,
    ) -> Self {
        let m = metrics(c);
        Self {
            degree: key.0,
            ratio: key.1.to_string(),
            round: Some(key.2),
            layer,
            system: system.into(),
            tp: c.tp as f64,
            fp: c.fp as f64,
            tn: c.tn as f64,
            fn_: c.fn_ as f64,
            acc: m.acc,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            headers_found: found as f64,
            elapsed_s: elapsed,
        }
    }
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn mean_row(rows: &[&SweepRow]) -> SweepRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let first = rows[0];
    SweepRow {
        round: None,
        tp: avg(|r| r.tp),
        fp: avg(|r| r.fp),
        tn: avg(|r| r.tn),
        fn_: avg(|r| r.fn_),
        acc: mean_opt(rows.iter().map(|r| r.acc)),
        precision: mean_opt(rows.iter().map(|r| r.precision)),
        recall: mean_opt(rows.iter().map(|r| r.recall)),
        f1: mean_opt(rows.iter().map(|r| r.f1)),
        headers_found: avg(|r| r.headers_found),
        elapsed_s: mean_opt(rows.iter().map(|r| r.elapsed_s)),
        ..first.clone()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Per-round rows followed, for each cell, by its mean row.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn means(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.round.is_none())
    }

    pub fn mean(&self, degree: f64, ratio: [f64; 2], layer: Layer, system: &str) -> Option<&SweepRow> {
        let label = ratio_label(ratio);
        self.means()
            .find(|r| (r.degree - degree).abs() < 1e-9 && r.ratio == label && r.layer == layer && r.system == system)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "degree", "ratio", "round", "layer", "system", "tp", "fp", "tn", "fn", "acc", "precision", "recall",
            "f1", "headers_found", "elapsed_s",
        ])
        .map_err(csv_err)?;
        let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            out.write_record([
                format!("{:.2}", r.degree),
                r.ratio.clone(),
                r.round.map_or_else(|| "mean".into(), |x| x.to_string()),
                r.layer.to_string(),
                r.system.clone(),
                format!("{}", r.tp),
                format!("{}", r.fp),
                format!("{}", r.tn),
                format!("{}", r.fn_),
                num(r.acc),
                num(r.precision),
                num(r.recall),
                num(r.f1),
                format!("{}", r.headers_found),
                r.elapsed_s.map_or_else(String::new, |x| format!("{x:.6}")),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean rows as an aligned plain-text table.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "   -  ".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>7} {:>5} {:>6} {:>10} {:>10} {:>6} {:>6} {:>6} {:>6} {:>10}",
            "degree", "ratio", "layer", "system", "tp", "fp", "acc", "prec", "recall", "f1", "found"
        );
        for r in self.means() {
            let _ = writeln!(
                s,
                "{:>6.2} {:>7} {:>5} {:>6} {:>10.1} {:>10.1} {:>6} {:>6} {:>6} {:>6} {:>10.1}",
                r.degree,
                r.ratio,
                r.layer.to_string(),
                r.system,
                r.tp,
                r.fp,
                f(r.acc),
                f(r.precision),
                f(r.recall),
                f(r.f1),
                r.headers_found
            );
        }
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Corrupts the streams at every grid cell and measures both systems:
/// the classifier pipeline (when `models` is given) and the FSM decoder.
/// Round `r` uses stream `r mod streams.len()`.
pub fn corruption_sweep(
    streams: &[AnnotatedStream],
    models: Option<&ModelSet>,
    spec: &SweepSpec,
) -> Result<SweepReport> {
    spec.validate()?;
    if streams.is_empty() {
        return Err(Error::InsufficientData("sweep needs at least one stream".into()));
    }
    let mut report = SweepReport::default();
    for (di, &degree) in spec.degrees.iter().enumerate() {
        for (ri, &ratio) in spec.ratios.iter().enumerate() {
            let label = ratio_label(ratio);
            let cell_start = report.rows.len();
            for round in 0..spec.rounds {
                let stream = &streams[round % streams.len()];
                let seed = derive_seed(spec.seed, &[di as u64, ri as u64, round as u64]);
                let corrupted = corrupt_stream(stream, &CorruptionSpec::from_degree(degree, ratio[0], ratio[1], seed)?)?;
                let data = &corrupted.bytes;
                let key = (degree, label.as_str(), round);
                let clock = Instant::now();
                let fsm = fsm_decode(data);
                let fsm_s = spec.timing.then(|| clock.elapsed().as_secs_f64());
                for (layer, found) in Layer::ALL.into_iter().zip([&fsm.bb_offsets, &fsm.gse_offsets, &fsm.ip_offsets]) {
                    let truth: HashSet<usize> = stream.layer_offsets(layer).into_iter().collect();
                    let c = confusion_from_offsets(found, &truth, data.len());
                    report.rows.push(SweepRow::from_counts(key, layer, "fsm", &c, found.len(), fsm_s));
                }
                if let Some(models) = models {
                    let clock = Instant::now();
                    let rec = recover(models, data, &spec.scan)?;
                    let cl_s = spec.timing.then(|| clock.elapsed().as_secs_f64());
                    for layer in Layer::ALL {
                        let dets = rec.detections(layer);
                        let c = confusion_from_detections(dets, &stream.annotations, layer, rec.candidates(layer));
                        report.rows.push(SweepRow::from_counts(key, layer, "cl", &c, dets.len(), cl_s));
                    }
                }
                log::info!("sweep degree {degree:.2} ratio {label} round {round} done");
            }
            let cell: Vec<SweepRow> = report.rows[cell_start..].to_vec();
            for system in ["fsm", "cl"] {
                for layer in Layer::ALL {
                    let rows: Vec<&SweepRow> = cell.iter().filter(|r| r.system == system && r.layer == layer).collect();
                    if !rows.is_empty() {
                        report.rows.push(mean_row(&rows));
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Picks, per layer, the threshold from `grid` with the best F1 over
/// `streams` corrupted at each of `degrees` (flip:loss 1:1). Each layer is
/// scanned over the whole stream. Ties go to the lower threshold.
pub fn calibrate_thresholds(
    models: &ModelSet,
    streams: &[AnnotatedStream],
    degrees: &[f64],
    grid: &[f64],
    base: &ScanConfig,
    seed: u64,
) -> Result<ScanConfig> {
    base.validate()?;
    if streams.is_empty() || degrees.is_empty() || grid.is_empty() {
        return Err(Error::InsufficientData("calibration needs streams, degrees and a threshold grid".into()));
    }
    let mut counts = vec![[MetricCounts::default(); 3]; grid.len()];
    for (si, stream) in streams.iter().enumerate() {
        for (di, &degree) in degrees.iter().enumerate() {
            let spec = CorruptionSpec::from_degree(degree, 1.0, 1.0, derive_seed(seed, &[si as u64, di as u64]))?;
            let data = corrupt_stream(stream, &spec)?.bytes;
            for (li, layer) in Layer::ALL.into_iter().enumerate() {
                let scores = score_offsets(models.get(layer), layer, &data, 0..data.len(), base.stride)?;
                for (ti, &th) in grid.iter().enumerate() {
                    let dets = detections_from_scores(&scores, layer, th, base.radius(layer));
                    counts[ti][li] += confusion_from_detections(&dets, &stream.annotations, layer, scores.len());
                }
            }
        }
    }
    let mut cfg = base.clone();
    for (li, layer) in Layer::ALL.into_iter().enumerate() {
        let mut best = (grid[0], f64::NEG_INFINITY);
        for (ti, &th) in grid.iter().enumerate() {
            let f1 = metrics(&counts[ti][li]).f1.unwrap_or(0.0);
            log::info!("calibration {layer} threshold {th}: {:?} f1 {f1:.4}", counts[ti][li]);
            if f1 > best.1 {
                best = (th, f1);
            }
        }
        cfg.layer_thresholds.insert(layer, best.0);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Headers per second for one system and layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub layer: Layer,
    pub headers: usize,
    pub headers_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub bytes: usize,
    pub hardware: String,
    pub threads: usize,
    pub cl_seconds: f64,
    pub fsm_seconds: f64,
    pub cl: Vec<LayerRate>,
    pub fsm: Vec<LayerRate>,
    /// Classifier rate over FSM rate per layer; `None` when the FSM found nothing.
    pub speedup: Vec<(Layer, Option<f64>)>,
}

pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()))
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}, {cores} logical cores, {}", std::env::consts::OS)
}

/// Runs both systems once on the same bytes and reports header rates.
pub fn throughput_report(models: &ModelSet, data: &[u8], scan: &ScanConfig) -> Result<ThroughputReport> {
    let clock = Instant::now();
    let rec = recover(models, data, scan)?;
    let cl_seconds = clock.elapsed().as_secs_f64().max(1e-9);
    let clock = Instant::now();
    let fsm = fsm_decode(data);
    let fsm_seconds = clock.elapsed().as_secs_f64().max(1e-9);
    let cl: Vec<LayerRate> = Layer::ALL
        .into_iter()
        .map(|l| {
            let n = rec.detections(l).len();
            LayerRate { layer: l, headers: n, headers_per_s: n as f64 / cl_seconds }
        })
        .collect();
    let fsm_rates: Vec<LayerRate> = Layer::ALL
        .into_iter()
        .zip([fsm.bb_found, fsm.gse_found, fsm.ip_found])
        .map(|(l, n)| LayerRate { layer: l, headers: n, headers_per_s: n as f64 / fsm_seconds })
        .collect();
    let speedup = cl
        .iter()
        .zip(&fsm_rates)
        .map(|(c, f)| (c.layer, (f.headers_per_s > 0.0).then(|| c.headers_per_s / f.headers_per_s)))
        .collect();
    Ok(ThroughputReport {
        bytes: data.len(),
        hardware: hardware_description(),
        threads: rayon::current_num_threads(),
        cl_seconds,
        fsm_seconds,
        cl,
        fsm: fsm_rates,
        speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let m = metrics(&MetricCounts { tp: 9, tn: 9, fp: 1, fn_: 1 });
        for v in [m.acc, m.precision, m.recall, m.f1] {
            assert!((v.unwrap() - 0.9).abs() < 1e-12);
        }
        let m = metrics(&MetricCounts { tp: 4, tn: 7, fp: 0, fn_: 0 });
        assert_eq!([m.acc, m.precision, m.recall, m.f1], [Some(1.0); 4]);
        let m = metrics(&MetricCounts { tp: 0, tn: 5, fp: 0, fn_: 3 });
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert_eq!(metrics(&MetricCounts::default()).acc, None);
    }

    fn ann(o: usize, layer: Layer) -> Annotation {
        Annotation { offset_bytes: o, layer, length_bytes: 10, pdu_id: None }
    }

    fn det(o: usize, layer: Layer) -> HeaderDetection {
        HeaderDetection { offset_bytes: o, layer, score: 0.9, corrected: Vec::new() }
    }

    #[test]
    fn confusion_examples() {
        let anns = vec![ann(0, Layer::Bb), ann(50, Layer::Bb), ann(10, Layer::Gse)];
        let exact = confusion_from_detections(&[det(0, Layer::Bb), det(50, Layer::Bb)], &anns, Layer::Bb, 100);
        assert_eq!(exact, MetricCounts { tp: 2, fp: 0, fn_: 0, tn: 98 });
        let none = confusion_from_detections(&[], &anns, Layer::Bb, 100);
        assert_eq!(none, MetricCounts { tp: 0, fp: 0, fn_: 2, tn: 98 });
        let off = confusion_from_detections(&[det(1, Layer::Bb), det(10, Layer::Gse)], &anns, Layer::Bb, 100);
        assert_eq!(off, MetricCounts { tp: 0, fp: 1, fn_: 2, tn: 97 });
        assert_eq!(off.total(), 100);
    }

    #[test]
    fn null_model_precision_matches_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let truth: HashSet<usize> = (0..n).filter(|_| rng.gen_bool(0.01)).collect();
        let found: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.2)).collect();
        let c = confusion_from_offsets(&found, &truth, n);
        let p = metrics(&c).precision.unwrap();
        let base = truth.len() as f64 / n as f64;
        // Binomial 4σ on the hit count among the detections.
        let sigma = (base * (1.0 - base) / found.len() as f64).sqrt();
        assert!((p - base).abs() < 4.0 * sigma, "{p} vs {base}");
        assert_eq!(c.total(), n);
    }

    #[test]
    fn csv_has_the_documented_columns() {
        let row = SweepRow::from_counts((0.1, "1:1", 0), Layer::Gse, "fsm", &MetricCounts { tp: 1, ..Default::default() }, 1, None);
        let report = SweepReport { rows: vec![row.clone(), mean_row(&[&row])] };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "degree,ratio,round,layer,system,tp,fp,tn,fn,acc,precision,recall,f1,headers_found,elapsed_s"
        );
        assert!(lines.next().unwrap().starts_with("0.10,1:1,0,gse,fsm,1,0,0,0,1.000000,1.000000,1.000000,1.000000,1,"));
        assert!(lines.next().unwrap().contains(",mean,"));
        assert!(report.to_table().contains("gse"));
    }
}
