//! `clx`: synthesize, corrupt, decode and recover DVB-S2/GSE/IP streams.

mod manifest;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use clx_core::bits::{bits_to_bytes, bytes_to_bits, Origin, Window};
use clx_core::corruption::{corrupt_stream, CorruptionSpec};
use clx_core::eval::{build_training_sets, calibrate_thresholds, corruption_sweep, throughput_report, LabelSource, SweepSpec};
use clx_core::fsm::fsm_decode;
use clx_core::nn::Checkpoint;
use clx_core::recover::{recover, write_detections, write_pdus, ModelSet, ScanConfig};
use clx_core::synth::{build_stream, read_annotations, truncate_stream, write_annotations, AnnotatedStream, StreamMeta, TrafficSpec};
use clx_core::train::{finetune, no_log, observed_protocols, pretrain, train_all_layers, LabeledSet, LossLog, TrainConfig};
use clx_core::{Error, Layer, Result};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "clx", version, about = "Synthesize, corrupt, decode and recover DVB-S2/GSE/IP streams")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an annotated stream.
    Gen(GenArgs),
    /// Drop the start of a stream, as when reception begins mid-stream.
    Truncate(TruncateArgs),
    /// Pass a stream through the bit flip / bit loss channel.
    Corrupt(CorruptArgs),
    /// Decode a stream with the length-field FSM decoder.
    FsmDecode(FsmArgs),
    /// Cut labeled header / non-header windows out of streams.
    BuildDataset(DatasetArgs),
    /// Contrastive pre-training of one layer's encoder.
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning of a classifier head over a frozen encoder.
    Finetune(FinetuneArgs),
    /// Build datasets and train all three layer classifiers.
    TrainAll(TrainAllArgs),
    /// Detect headers with trained classifiers.
    Scan(ScanArgs),
    /// Detect headers and extract PDUs.
    Extract(ExtractArgs),
    /// Corruption sweep comparing the classifiers with the FSM decoder.
    Sweep(SweepArgs),
    /// Header rates of both systems on the same input.
    Throughput(ThroughputArgs),
    /// Choose per-layer scan thresholds on annotated held-out streams.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct StreamIn {
    /// Stream bytes.
    #[arg(long = "in")]
    input: PathBuf,
    /// Annotations (JSON lines).
    #[arg(long)]
    ann: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Traffic spec file (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pdus: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pdu_min: Option<usize>,
    #[arg(long)]
    pdu_max: Option<usize>,
    #[arg(long)]
    max_fragment: Option<usize>,
    /// BB data field capacity in bits.
    #[arg(long)]
    frame_capacity: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ann: PathBuf,
}

#[derive(Args)]
struct TruncateArgs {
    #[command(flatten)]
    src: StreamIn,
    /// Bytes to drop.
    #[arg(long)]
    offset: usize,
    #[arg(long)]
    out: PathBuf,
    /// Output annotations; defaults to the output path with extension `ann`.
    #[arg(long)]
    out_ann: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptArgs {
    #[command(flatten)]
    src: StreamIn,
    #[arg(long)]
    gamma1: f64,
    #[arg(long)]
    gamma2: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Output annotations; defaults to the output path with extension `ann`.
    #[arg(long)]
    out_ann: Option<PathBuf>,
}

#[derive(Args)]
struct FsmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Leave wall-clock times out so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct DatasetArgs {
    /// Stream files; pair each with an `--ann` when labels come from annotations.
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    ann: Vec<PathBuf>,
    #[arg(long, default_value = "annotations")]
    source: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    /// Training config file (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    out_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    max_positives: Option<usize>,
    /// Loss log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory written by `build-dataset`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    layer: Layer,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    layer: Layer,
    /// Encoder checkpoint from `pretrain`.
    #[arg(long)]
    encoder: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainAllArgs {
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    ann: Vec<PathBuf>,
    #[arg(long, default_value = "annotations")]
    source: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    /// Model directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScanFlags {
    /// Scan config file (JSON); flags override its fields.
    #[arg(long)]
    scan_config: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    /// Threshold for layers without an entry in `layer_thresholds`.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    suppress_radius: Option<usize>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    scan: ScanFlags,
    /// Detections (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    scan: ScanFlags,
    /// PDU records: big-endian u32 length, then the bytes.
    #[arg(long)]
    out: PathBuf,
    /// Also write the detections used (JSON lines).
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config (JSON): `SweepSpec` fields plus optional `traffic` and `streams`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model directory; without it only the FSM decoder is measured.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Annotated input streams; when absent, streams are generated from the config.
    #[arg(long = "in")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    ann: Vec<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Plain-text table of the mean rows.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ThroughputArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    scan: ScanFlags,
    /// Report (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, required = true)]
    ann: Vec<PathBuf>,
    /// Corruption degrees (flip:loss 1:1) to calibrate over.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1")]
    degrees: Vec<f64>,
    /// Candidate thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,0.95,0.97,0.99")]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scan: ScanFlags,
    /// Scan config (JSON) with the chosen thresholds.
    #[arg(long)]
    out: PathBuf,
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_ann(path: &Path) -> Result<Vec<clx_core::synth::Annotation>> {
    read_annotations(BufReader::new(File::open(path)?))
}

fn load_stream(bytes: &Path, ann: Option<&Path>) -> Result<AnnotatedStream> {
    Ok(AnnotatedStream {
        bytes: fs::read(bytes)?,
        annotations: match ann {
            Some(a) => read_ann(a)?,
            None => Vec::new(),
        },
        meta: StreamMeta::default(),
    })
}

fn save_stream(s: &AnnotatedStream, out: &Path, ann: &Path) -> Result<()> {
    fs::write(out, &s.bytes)?;
    let mut w = create(ann)?;
    write_annotations(&mut w, &s.annotations)?;
    w.flush()?;
    Ok(())
}

fn default_ann(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("ann"))
}

fn finish(m: RunManifest, anchor: &Path, clock: Option<Instant>) -> Result<()> {
    let m = RunManifest { wall_clock_s: clock.map(|c| c.elapsed().as_secs_f64()), ..m };
    m.write(anchor)?;
    Ok(())
}

fn parse_source(s: &str) -> Result<LabelSource> {
    match s {
        "annotations" => Ok(LabelSource::Annotations),
        "fsm" => Ok(LabelSource::Fsm),
        other => Err(Error::Config(format!("unknown label source {other:?}; use annotations or fsm"))),
    }
}

fn load_streams(inputs: &[PathBuf], anns: &[PathBuf], need_ann: bool) -> Result<Vec<AnnotatedStream>> {
    if need_ann && anns.len() != inputs.len() {
        return Err(Error::Config(format!("{} streams but {} annotation files", inputs.len(), anns.len())));
    }
    inputs.iter().enumerate().map(|(i, p)| load_stream(p, anns.get(i).map(|a| a.as_path()))).collect()
}

fn train_config(f: &TrainFlags) -> Result<TrainConfig> {
    let mut c: TrainConfig = read_config(f.config.as_deref())?;
    set(&mut c.seed, f.seed);
    set(&mut c.batch, f.batch);
    set(&mut c.temperature, f.temperature);
    set(&mut c.pretrain_epochs, f.pretrain_epochs);
    set(&mut c.finetune_epochs, f.finetune_epochs);
    set(&mut c.pretrain_lr, f.pretrain_lr);
    set(&mut c.finetune_lr, f.finetune_lr);
    set(&mut c.gamma1, f.gamma1);
    set(&mut c.gamma2, f.gamma2);
    set(&mut c.channels, f.channels);
    set(&mut c.out_dim, f.out_dim);
    set(&mut c.hidden, f.hidden);
    if f.max_positives.is_some() {
        c.max_positives = f.max_positives;
    }
    c.validate()?;
    Ok(c)
}

fn scan_config(f: &ScanFlags) -> Result<ScanConfig> {
    let mut c: ScanConfig = read_config(f.scan_config.as_deref())?;
    set(&mut c.stride, f.stride);
    set(&mut c.threshold, f.threshold);
    if f.suppress_radius.is_some() {
        c.suppress_radius = f.suppress_radius;
    }
    c.validate()?;
    Ok(c)
}

/// One dataset window per line.
#[derive(Serialize, Deserialize)]
struct WindowRecord {
    label: u8,
    origin: Option<Origin>,
    /// Packed bits, hex.
    bits: String,
}

fn write_windows(path: &Path, set: &LabeledSet) -> Result<()> {
    let mut w = create(path)?;
    for (win, label) in set.windows() {
        let rec = WindowRecord { label, origin: win.origin, bits: clx_core::hexbytes::to_hex(&bits_to_bytes(&win.bits)) };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    w.flush()?;
    Ok(())
}

fn read_windows(path: &Path, t: usize) -> Result<LabeledSet> {
    let mut set = LabeledSet::default();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WindowRecord = serde_json::from_str(&line)?;
        let mut bits = bytes_to_bits(
            &clx_core::hexbytes::from_hex(&rec.bits)
                .ok_or_else(|| Error::InputSize(format!("{}: bad hex in window record", path.display())))?,
        );
        if bits.len() < t {
            return Err(Error::InputSize(format!("{}: window of {} bits, need {t}", path.display(), bits.len())));
        }
        bits.truncate(t);
        let w = Window { bits, origin: rec.origin };
        if rec.label == 1 {
            set.positives.push(w);
        } else {
            set.negatives.push(w);
        }
    }
    Ok(set)
}

fn dataset_file(dir: &Path, layer: Layer, part: &str) -> PathBuf {
    dir.join(format!("{layer}_{part}.jsonl"))
}

fn with_loss_log<T>(path: Option<&Path>, f: impl FnOnce(&mut dyn FnMut(clx_core::train::LossRecord)) -> Result<T>) -> Result<T> {
    match path {
        Some(p) => {
            let mut log = LossLog::create(p)?;
            let out = f(&mut |r| log.record(r))?;
            log.finish()?;
            Ok(out)
        }
        None => f(&mut no_log),
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default)]
struct SweepFile {
    #[serde(flatten)]
    spec: SweepSpec,
    /// Traffic for generated streams.
    traffic: Option<TrafficSpec>,
    /// How many streams to generate, seeds `traffic.seed + i`.
    streams: Option<usize>,
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => {
            let clock = Instant::now();
            let mut spec: TrafficSpec = read_config(a.config.as_deref())?;
            set(&mut spec.n_pdus, a.pdus);
            set(&mut spec.seed, a.seed);
            set(&mut spec.pdu_len_range[0], a.pdu_min);
            set(&mut spec.pdu_len_range[1], a.pdu_max);
            set(&mut spec.max_fragment, a.max_fragment);
            set(&mut spec.frame_capacity, a.frame_capacity);
            let s = build_stream(&spec)?;
            save_stream(&s, &a.out, &a.ann)?;
            let m = RunManifest::new("gen", &spec).seed("traffic", spec.seed).outputs([&a.out, &a.ann]);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Truncate(a) => {
            let clock = Instant::now();
            let s = load_stream(&a.src.input, a.src.ann.as_deref())?;
            let t = truncate_stream(&s, a.offset)?;
            let out_ann = default_ann(&a.out, a.out_ann);
            save_stream(&t, &a.out, &out_ann)?;
            let m = RunManifest::new("truncate", serde_json::json!({ "offset": a.offset }))
                .inputs([Some(&a.src.input), a.src.ann.as_ref()].into_iter().flatten())
                .outputs([&a.out, &out_ann]);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Corrupt(a) => {
            let clock = Instant::now();
            let spec = CorruptionSpec::new(a.gamma1, a.gamma2, a.seed)?;
            let s = load_stream(&a.src.input, a.src.ann.as_deref())?;
            let c = corrupt_stream(&s, &spec)?;
            let out_ann = default_ann(&a.out, a.out_ann);
            save_stream(&c, &a.out, &out_ann)?;
            let m = RunManifest::new("corrupt", spec)
                .seed("channel", a.seed)
                .inputs([Some(&a.src.input), a.src.ann.as_ref()].into_iter().flatten())
                .outputs([&a.out, &out_ann]);
            finish(m, &a.out, Some(clock))
        }
        Cmd::FsmDecode(a) => {
            let clock = Instant::now();
            let data = fs::read(&a.input)?;
            let mut report = fsm_decode(&data);
            if a.no_timing {
                report.elapsed_s = None;
            }
            write_json(&a.out, &report)?;
            let m = RunManifest::new("fsm-decode", serde_json::json!({ "timing": !a.no_timing }))
                .inputs([&a.input])
                .outputs([&a.out]);
            finish(m, &a.out, (!a.no_timing).then_some(clock))
        }
        Cmd::BuildDataset(a) => {
            let clock = Instant::now();
            let source = parse_source(&a.source)?;
            let streams = load_streams(&a.inputs, &a.ann, source == LabelSource::Annotations)?;
            let splits = build_training_sets(&streams, source, a.split_seed)?;
            fs::create_dir_all(&a.out)?;
            let mut outputs = Vec::new();
            for (layer, split) in &splits {
                for (part, set) in [("train", &split.train), ("test", &split.test)] {
                    let p = dataset_file(&a.out, *layer, part);
                    write_windows(&p, set)?;
                    outputs.push(p);
                }
            }
            let m = RunManifest::new("build-dataset", serde_json::json!({ "source": a.source, "split_seed": a.split_seed }))
                .seed("split", a.split_seed)
                .inputs(a.inputs.iter().chain(&a.ann))
                .outputs(outputs);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Pretrain(a) => {
            let clock = Instant::now();
            let cfg = train_config(&a.train)?;
            let train_path = dataset_file(&a.dataset, a.layer, "train");
            let mut set = read_windows(&train_path, a.layer.window_bits())?;
            if let Some(cap) = cfg.max_positives {
                set.positives.truncate(cap);
            }
            let enc = with_loss_log(a.train.log.as_deref(), |log| pretrain(&set.positives, &cfg, log))?;
            Checkpoint::from(enc).save(&a.out)?;
            let m = RunManifest::new("pretrain", &cfg).seed("train", cfg.seed).inputs([&train_path]).outputs([&a.out]);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Finetune(a) => {
            let clock = Instant::now();
            let cfg = train_config(&a.train)?;
            let train_path = dataset_file(&a.dataset, a.layer, "train");
            let mut set = read_windows(&train_path, a.layer.window_bits())?;
            if let Some(cap) = cfg.max_positives {
                set.positives.truncate(cap);
                set.negatives.truncate(cap);
            }
            let enc = Checkpoint::load(&a.encoder)?.encoder;
            if enc.cfg().t != a.layer.window_bits() {
                return Err(Error::Checkpoint(format!("encoder T = {} does not match layer {}", enc.cfg().t, a.layer)));
            }
            let clf = with_loss_log(a.train.log.as_deref(), |log| finetune(&enc, &set, &cfg, log))?;
            Checkpoint::from(clf).save(&a.out)?;
            let mut outputs = vec![a.out.clone()];
            if a.layer == Layer::Ip {
                let p = a.out.with_file_name("protocols.json");
                write_json(&p, &serde_json::json!({ "protocols": observed_protocols(&set.positives) }))?;
                outputs.push(p);
            }
            let m = RunManifest::new("finetune", &cfg)
                .seed("train", cfg.seed)
                .inputs([&train_path, &a.encoder])
                .outputs(outputs);
            finish(m, &a.out, Some(clock))
        }
        Cmd::TrainAll(a) => {
            let clock = Instant::now();
            let cfg = train_config(&a.train)?;
            let source = parse_source(&a.source)?;
            let streams = load_streams(&a.inputs, &a.ann, source == LabelSource::Annotations)?;
            let out = with_loss_log(a.train.log.as_deref(), |log| {
                train_all_layers(&streams, source, a.split_seed, &cfg, Some(&a.out), log)
            })?;
            let m = RunManifest::new("train-all", &cfg)
                .seed("train", cfg.seed)
                .seed("split", a.split_seed)
                .inputs(a.inputs.iter().chain(&a.ann))
                .outputs(&out.written);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Scan(a) => {
            let clock = Instant::now();
            let cfg = scan_config(&a.scan)?;
            let models = ModelSet::load(&a.models)?;
            let data = fs::read(&a.input)?;
            let rec = recover(&models, &data, &cfg)?;
            let mut w = create(&a.out)?;
            write_detections(&mut w, &rec.all_detections())?;
            w.flush()?;
            let m = RunManifest::new("scan", &cfg).inputs([&a.input, &a.models]).outputs([&a.out]);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Extract(a) => {
            let clock = Instant::now();
            let cfg = scan_config(&a.scan)?;
            let models = ModelSet::load(&a.models)?;
            let data = fs::read(&a.input)?;
            let rec = recover(&models, &data, &cfg)?;
            let mut w = create(&a.out)?;
            write_pdus(&mut w, &rec.pdus)?;
            w.flush()?;
            let mut outputs = vec![a.out.clone()];
            if let Some(p) = &a.detections {
                let mut w = create(p)?;
                write_detections(&mut w, &rec.all_detections())?;
                w.flush()?;
                outputs.push(p.clone());
            }
            let m = RunManifest::new("extract", &cfg).inputs([&a.input, &a.models]).outputs(outputs);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Sweep(a) => {
            let clock = Instant::now();
            let mut file: SweepFile = read_config(a.config.as_deref())?;
            set(&mut file.spec.rounds, a.rounds);
            set(&mut file.spec.seed, a.seed);
            if a.no_timing {
                file.spec.timing = false;
            }
            let streams = if a.inputs.is_empty() {
                let traffic = file.traffic.clone().unwrap_or_default();
                (0..file.streams.unwrap_or(1) as u64)
                    .map(|i| build_stream(&TrafficSpec { seed: traffic.seed + i, ..traffic.clone() }))
                    .collect::<Result<Vec<_>>>()?
            } else {
                load_streams(&a.inputs, &a.ann, true)?
            };
            let models = a.models.as_deref().map(ModelSet::load).transpose()?;
            let report = corruption_sweep(&streams, models.as_ref(), &file.spec)?;
            report.write_csv(create(&a.out)?)?;
            let mut outputs = vec![a.out.clone()];
            if let Some(t) = &a.table {
                fs::write(t, report.to_table())?;
                outputs.push(t.clone());
            }
            let m = RunManifest::new("sweep", &file)
                .seed("sweep", file.spec.seed)
                .inputs(a.inputs.iter().chain(&a.ann).chain(&a.models))
                .outputs(outputs);
            finish(m, &a.out, file.spec.timing.then_some(clock))
        }
        Cmd::Throughput(a) => {
            let clock = Instant::now();
            let cfg = scan_config(&a.scan)?;
            let models = ModelSet::load(&a.models)?;
            let data = fs::read(&a.input)?;
            let report = throughput_report(&models, &data, &cfg)?;
            write_json(&a.out, &report)?;
            let m = RunManifest::new("throughput", &cfg).inputs([&a.input, &a.models]).outputs([&a.out]);
            finish(m, &a.out, Some(clock))
        }
        Cmd::Calibrate(a) => {
            let clock = Instant::now();
            let base = scan_config(&a.scan)?;
            let models = ModelSet::load(&a.models)?;
            let streams = load_streams(&a.inputs, &a.ann, true)?;
            let cfg = calibrate_thresholds(&models, &streams, &a.degrees, &a.grid, &base, a.seed)?;
            write_json(&a.out, &cfg)?;
            let m = RunManifest::new("calibrate", &cfg)
                .seed("channel", a.seed)
                .inputs(a.inputs.iter().chain(&a.ann).chain([&a.models]))
                .outputs([&a.out]);
            finish(m, &a.out, Some(clock))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CLX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("clx: cannot size the worker pool: {e}");
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clx: {e}");
            ExitCode::FAILURE
        }
    }
}
