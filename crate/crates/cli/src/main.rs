//! `bgerase`: generate the synthetic benchmark, pretrain encoders, and run
//! the probe, retrieval, bias and saliency evaluations.
//!
//! Every machine-readable result goes to stdout as one JSON document with a
//! `schema_version` field; `--text` switches to aligned columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bgerase::checkpoint;
use bgerase::config::{ExperimentConfig, ObjectiveKind};
use bgerase::distractor::DistractorVariant;
use bgerase::error::ErrorFamily;
use bgerase::eval::adversarial::{adversarial_probe, Attack};
use bgerase::eval::probe::fit_on_videos;
use bgerase::eval::saliency::{saliency_map, write_saliency_pngs};
use bgerase::eval::{finetune, finetune_evaluate, recall_at_k, video_features, FeatureKind, FinetuneConfig, ProbeConfig, ProbeResult};
use bgerase::experiment::{ablate_distractors, diagnose, evaluate_arm, Dataset, EVAL_SPLITS};
use bgerase::synthdata::{generate_dataset, GeneratorConfig, Split};
use bgerase::train::{ClipGeometry, StepMetrics, Trainer};
use bgerase::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

const SCHEMA_VERSION: u32 = 1;

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "bgerase", version, about = "Background Erasing experiments on a scene-biased synthetic video benchmark")]
struct Cli {
    /// Print aligned text instead of JSON.
    #[arg(long, global = true)]
    text: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (BEVD videos plus manifest.json).
    GenData(GenDataArgs),
    /// Self-supervised pretraining; writes a checkpoint and a JSONL metrics log.
    Pretrain(PretrainArgs),
    /// Linear probe on frozen features.
    Probe(ProbeArgs),
    /// Nearest-neighbour retrieval recall@K.
    Retrieve(RetrieveArgs),
    /// Correlate per-class static accuracy with per-class BE improvement.
    Diagnose(DiagnoseArgs),
    /// Channel-mean saliency maps and adversarial overlap report.
    Saliency(SaliencyArgs),
    /// Pretrain and probe every distractor variant.
    AblateDistractors(AblateArgs),
    /// Describe a checkpoint or a resolved configuration.
    Describe(DescribeArgs),
}

#[derive(Args)]
struct DataArg {
    /// Dataset root (directory holding manifest.json).
    #[arg(long, env = "BGERASE_DATA_DIR")]
    data: PathBuf,
}

/// Configuration layers shared by training commands: defaults, then
/// `--config`, then named flags, then `--set`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file, nested or with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set optim.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// contrastive, rotation4 or clip_order3.
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    /// none, gaussian, mixup, cutmix, inter_frame (inter) or intra_frame (intra).
    #[arg(long)]
    distractor: Option<DistractorVariant>,
    /// Hard negative (contrastive) or consistency term (pretext): on/off.
    #[arg(long)]
    be: Option<OnOff>,
    #[arg(long)]
    gamma: Option<f32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = &self.config {
            cfg.merge_file(p)?;
        }
        let mut set = |k: &str, v: Value| cfg.set_value(k, v);
        if let Some(s) = self.seed {
            set("seed", json!(s))?;
        }
        if let Some(o) = self.objective {
            set("objective.kind", json!(o.name()))?;
        }
        if let Some(d) = self.distractor {
            set("distractor.variant", json!(d.name()))?;
        }
        if let Some(b) = self.be {
            set("objective.be", json!(matches!(b, OnOff::On)))?;
        }
        if let Some(g) = self.gamma {
            set("distractor.gamma", json!(g))?;
        }
        if let Some(b) = self.beta {
            set("objective.beta", json!(b))?;
        }
        if let Some(t) = self.temperature {
            set("objective.temperature", json!(t))?;
        }
        if let Some(e) = self.epochs {
            set("optim.epochs", json!(e))?;
        }
        if let Some(b) = self.batch_size {
            set("optim.batch_size", json!(b))?;
        }
        if let Some(l) = self.lr {
            set("optim.lr", json!(l))?;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON generator config (GeneratorConfig fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long)]
    bias_spread: Option<f64>,
    #[arg(long)]
    videos_per_class: Option<usize>,
    #[arg(long)]
    test_videos_per_class: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    data: DataArg,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    /// JSONL metrics log (default: `<out>.metrics.jsonl`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test split, or `all` for every evaluation split.
    #[arg(long, default_value = "test_antibias")]
    split: String,
    #[arg(long)]
    num_clips: Option<usize>,
    /// Fine-tune the whole encoder with a class head instead of fitting a
    /// linear probe on frozen features.
    #[arg(long)]
    finetune: bool,
    #[arg(long, default_value_t = 10, requires = "finetune")]
    ft_epochs: usize,
    #[arg(long, default_value_t = 0.01, requires = "finetune")]
    ft_lr: f64,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "train")]
    gallery: Split,
    #[arg(long, default_value = "test_inbias")]
    query: Split,
    /// Comma-separated K values (default from the checkpoint's eval config).
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long = "be")]
    be_checkpoint: PathBuf,
}

#[derive(Args)]
struct SaliencyArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for PNG sequences.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test_inbias")]
    split: Split,
    /// Number of videos (first N of the split) or a single `--record`.
    #[arg(long, default_value_t = 4)]
    clips: usize,
    #[arg(long)]
    record: Option<String>,
    /// Attacks to run (default: all three).
    #[arg(long, value_delimiter = ',')]
    attack: Vec<Attack>,
    /// Blend weight of add_static_frame (default from the eval config).
    #[arg(long)]
    lambda: Option<f32>,
    /// Skip fitting a probe; prediction changes are then omitted.
    #[arg(long)]
    no_probe: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArg,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Directory for per-arm checkpoints (optional).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long, conflicts_with = "resolve")]
    checkpoint: Option<PathBuf>,
    /// Print the resolved configuration for the given layers instead.
    #[arg(long)]
    resolve: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn exit_code(family: ErrorFamily) -> u8 {
    match family {
        ErrorFamily::Config => 3,
        ErrorFamily::Io => 4,
        ErrorFamily::Numeric => 5,
        ErrorFamily::Data => 6,
    }
}

fn emit(doc: Value) {
    let mut doc = doc;
    if let Value::Object(m) = &mut doc {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    out!("{}", serde_json::to_string_pretty(&doc).expect("json"));
}

fn table(headers: &[&str], rows: &[Vec<String>]) {
    let mut w: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.len());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:>width$}", width = w[i]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    out!("{}", line(headers.iter().map(|s| s.to_string()).collect()));
    for r in rows {
        out!("{}", line(r.clone()));
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// The dataset fixes the data section of the config, so hashes identify
/// the data a run saw.
fn bind_data(cfg: &mut ExperimentConfig, data: &Dataset) -> Result<()> {
    cfg.data = data.manifest.generator.clone();
    cfg.validate()
}

fn load_checkpoint(path: &Path) -> Result<(Trainer, String)> {
    let l = checkpoint::load(path)?;
    Ok((l.trainer, l.content_hash))
}

fn check_data(trainer: &Trainer, data: &Dataset) -> Result<()> {
    let d = data.manifest.dims();
    let e = &trainer.config.encoder;
    if d.c != e.in_channels || d.h < e.input_height || d.w < e.input_width {
        return Err(Error::ShapeMismatch {
            expected: vec![e.in_channels, e.input_height, e.input_width],
            actual: vec![d.c, d.h, d.w],
        });
    }
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs, text: bool) -> Result<()> {
    let mut g = match &a.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<GeneratorConfig>(&s).map_err(|e| Error::Json { path: p.clone(), source: e })?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(v) = a.classes {
        g.num_classes = v;
    }
    if let Some(v) = a.bias {
        g.bias_rho = v;
    }
    if let Some(v) = a.bias_spread {
        g.bias_spread = v;
    }
    if let Some(v) = a.videos_per_class {
        g.videos_per_class = v;
    }
    if let Some(v) = a.test_videos_per_class {
        g.test_videos_per_class = v;
    }
    if let Some(v) = a.frames {
        g.frames = v;
    }
    if let Some(v) = a.size {
        g.height = v;
        g.width = v;
    }
    if let Some(v) = a.seed {
        g.seed = v;
    }
    let m = generate_dataset(&g, &a.out)?;
    let manifest_path = a.out.join("manifest.json");
    let counts: Vec<(String, usize)> = Split::ALL.iter().map(|s| (s.name().to_string(), m.split(*s).count())).collect();
    if text {
        out!("manifest: {}", manifest_path.display());
        table(&["split", "videos"], &counts.iter().map(|(s, n)| vec![s.clone(), n.to_string()]).collect::<Vec<_>>());
    } else {
        emit(json!({
            "command": "gen-data",
            "manifest": manifest_path,
            "num_records": m.records.len(),
            "splits": counts.into_iter().map(|(k, n)| (k, json!(n))).collect::<serde_json::Map<_, _>>(),
            "class_bias": m.class_bias,
            "generator": m.generator,
        }));
    }
    Ok(())
}

fn metrics_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    })
}

fn cmd_pretrain(a: PretrainArgs, text: bool) -> Result<()> {
    let data = Dataset::load(&a.data.data)?;
    let mut cfg = a.cfg.resolve()?;
    bind_data(&mut cfg, &data)?;
    let mpath = metrics_path(&a.out, &a.metrics);
    if let Some(dir) = mpath.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut log = BufWriter::new(file);
    let hash = cfg.hash();
    let train = data.train_videos();
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut last: Option<StepMetrics> = None;
    let mut io_err = None;
    for _ in 0..cfg.optim.epochs {
        let res = trainer.train_epoch(&train, &mut |m: &StepMetrics| {
            let mut line = serde_json::to_value(m).expect("metrics serialise");
            line["config_hash"] = json!(hash);
            if let Err(e) = writeln!(log, "{line}") {
                io_err.get_or_insert(e);
            }
            last = Some(m.clone());
        });
        if let Err(e) = res {
            if e.family() == ErrorFamily::Numeric {
                let dump = json!({
                    "error": e.to_string(),
                    "config": cfg,
                    "config_hash": hash,
                    "step": trainer.step,
                    "epoch": trainer.epoch,
                    "last_finite_metrics": last,
                });
                let mut p = a.out.as_os_str().to_owned();
                p.push(".nan-dump.json");
                let _ = std::fs::write(&p, serde_json::to_string_pretty(&dump).unwrap());
                eprintln!("diagnostic dump written to {}", PathBuf::from(p).display());
            }
            return Err(e);
        }
    }
    log.flush().map_err(|e| Error::io(&mpath, e))?;
    if let Some(e) = io_err {
        return Err(Error::io(&mpath, e));
    }
    let content_hash = checkpoint::save(&trainer, &a.out)?;
    if text {
        out!("checkpoint  {}", a.out.display());
        out!("metrics     {}", mpath.display());
        out!("config      {hash}");
        out!("content     {content_hash}");
        if let Some(m) = &last {
            out!("final loss  {:.4}", m.loss);
        }
    } else {
        emit(json!({
            "command": "pretrain",
            "checkpoint": a.out,
            "metrics": mpath,
            "config_hash": hash,
            "content_hash": content_hash,
            "steps": trainer.step,
            "final": last,
        }));
    }
    Ok(())
}

fn cmd_probe(a: ProbeArgs, text: bool) -> Result<()> {
    let data = Dataset::load(&a.data.data)?;
    let (mut trainer, content_hash) = load_checkpoint(&a.checkpoint)?;
    check_data(&trainer, &data)?;
    if let Some(n) = a.num_clips {
        trainer.config.eval.num_clips = n;
    }
    if a.finetune {
        return finetune_probe(&a, &data, &trainer, &content_hash, text);
    }
    let eval = evaluate_arm(&data, &trainer)?;
    let all = [eval.inbias, eval.antibias, eval.actor];
    let chosen: Vec<_> = if a.split == "all" {
        all.to_vec()
    } else {
        let s: Split = a.split.parse()?;
        match all.iter().find(|r| r.split == s.name()) {
            Some(r) => vec![r.clone()],
            None => {
                // Any other split: fit on train, test on the requested one.
                let cfg = ProbeConfig::from_eval(&trainer.config.eval);
                let g = ClipGeometry::from_config(&trainer.config);
                let (tv, tl): (Vec<_>, Vec<_>) = data.split(Split::Train).into_iter().unzip();
                let tf = video_features(&trainer.encoder, &trainer.params, &tv, g, cfg.train_clips, FeatureKind::Projection)?;
                let probe = fit_on_videos(&tf, &tl, data.num_classes(), &cfg)?;
                let (ev, el): (Vec<_>, Vec<_>) = data.split(s).into_iter().unzip();
                let ef = video_features(&trainer.encoder, &trainer.params, &ev, g, cfg.num_clips, FeatureKind::Projection)?;
                vec![probe.evaluate(s.name(), &ef, &el)?]
            }
        }
    };
    print_probe(&a, &trainer, &content_hash, "linear_probe", None, &chosen, data.num_classes(), text);
    Ok(())
}

fn finetune_probe(a: &ProbeArgs, data: &Dataset, trainer: &Trainer, content_hash: &str, text: bool) -> Result<()> {
    let cfg = FinetuneConfig {
        epochs: a.ft_epochs,
        lr: a.ft_lr,
        num_clips: trainer.config.eval.num_clips,
        seed: trainer.config.seed,
        ..FinetuneConfig::default()
    };
    let g = ClipGeometry::from_config(&trainer.config);
    let k = data.num_classes();
    let (params, loss) = finetune(&trainer.encoder, &trainer.params, &data.split(Split::Train), k, g, &cfg)?;
    let splits: Vec<Split> = if a.split == "all" { EVAL_SPLITS.to_vec() } else { vec![a.split.parse()?] };
    let mut results = Vec::new();
    for s in splits {
        results.push(finetune_evaluate(&trainer.encoder, &params, s.name(), &data.split(s), k, g, cfg.num_clips)?);
    }
    let info = json!({ "config": cfg, "final_train_loss": loss });
    print_probe(a, trainer, content_hash, "finetune", Some(info), &results, k, text);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn print_probe(a: &ProbeArgs, trainer: &Trainer, content_hash: &str, protocol: &str, info: Option<Value>, chosen: &[ProbeResult], k: usize, text: bool) {
    if text {
        let mut headers = vec!["split".to_string(), "top1".to_string()];
        headers.extend((0..k).map(|c| format!("c{c}")));
        let rows: Vec<Vec<String>> = chosen
            .iter()
            .map(|r| {
                let mut row = vec![r.split.clone(), pct(r.top1)];
                row.extend(r.per_class_accuracy.iter().map(|&x| pct(x)));
                row
            })
            .collect();
        table(&headers.iter().map(String::as_str).collect::<Vec<_>>(), &rows);
    } else {
        emit(json!({
            "command": "probe",
            "protocol": protocol,
            "finetune": info,
            "checkpoint": a.checkpoint,
            "content_hash": content_hash,
            "config_hash": trainer.config.hash(),
            "results": chosen,
        }));
    }
}

fn cmd_retrieve(a: RetrieveArgs, text: bool) -> Result<()> {
    let data = Dataset::load(&a.data.data)?;
    let (trainer, content_hash) = load_checkpoint(&a.checkpoint)?;
    check_data(&trainer, &data)?;
    let g = ClipGeometry::from_config(&trainer.config);
    let feats = |s: Split| -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
        let (v, l): (Vec<_>, Vec<_>) = data.split(s).into_iter().unzip();
        let f = video_features(&trainer.encoder, &trainer.params, &v, g, 1, FeatureKind::Backbone)?;
        Ok((f.into_iter().map(|mut c| c.remove(0)).collect(), l))
    };
    let (gf, gl) = feats(a.gallery)?;
    let (qf, ql) = feats(a.query)?;
    let ks = if a.k.is_empty() { trainer.config.eval.retrieval_k.clone() } else { a.k };
    let r = recall_at_k(&gf, &gl, &qf, &ql, &ks)?;
    if text {
        let rows: Vec<Vec<String>> = r
            .entries
            .iter()
            .map(|e| vec![e.k.to_string(), e.effective_k.to_string(), pct(e.recall)])
            .collect();
        table(&["K", "effective_K", "recall%"], &rows);
    } else {
        emit(json!({
            "command": "retrieve",
            "checkpoint": a.checkpoint,
            "content_hash": content_hash,
            "config_hash": trainer.config.hash(),
            "gallery": a.gallery.name(),
            "query": a.query.name(),
            "result": r,
        }));
    }
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs, text: bool) -> Result<()> {
    let data = Dataset::load(&a.data.data)?;
    let (base, hb) = load_checkpoint(&a.baseline)?;
    let (be, he) = load_checkpoint(&a.be_checkpoint)?;
    check_data(&base, &data)?;
    check_data(&be, &data)?;
    let rep = diagnose(&data, &base, &be)?;
    if text {
        let rows: Vec<Vec<String>> = rep
            .scatter
            .iter()
            .enumerate()
            .map(|(c, (s, d))| vec![c.to_string(), pct(*s), format!("{:+.1}", 100.0 * d)])
            .collect();
        table(&["class", "static%", "improvement"], &rows);
        out!("rho {:+.3}  p {:.4}", rep.diagnostic.pearson_rho, rep.diagnostic.p_value);
    } else {
        emit(json!({
            "command": "diagnose",
            "baseline": { "checkpoint": a.baseline, "content_hash": hb, "config_hash": base.config.hash() },
            "be": { "checkpoint": a.be_checkpoint, "content_hash": he, "config_hash": be.config.hash() },
            "diagnostic": rep.diagnostic,
            "scatter": rep.scatter.iter().map(|(x, y)| json!({"static_acc": x, "improvement": y})).collect::<Vec<_>>(),
            "baseline_inbias": rep.baseline_inbias,
            "be_inbias": rep.be_inbias,
            "static_probe": rep.static_probe,
        }));
    }
    Ok(())
}

fn cmd_saliency(a: SaliencyArgs, text: bool) -> Result<()> {
    let data = Dataset::load(&a.data.data)?;
    let (trainer, content_hash) = load_checkpoint(&a.checkpoint)?;
    check_data(&trainer, &data)?;
    let g = ClipGeometry::from_config(&trainer.config);
    let eval = &trainer.config.eval;
    let lambda = a.lambda.unwrap_or(eval.attack_lambda as f32);
    let attacks = if a.attack.is_empty() { Attack::ALL.to_vec() } else { a.attack.clone() };
    let probe = if a.no_probe {
        None
    } else {
        let cfg = ProbeConfig::from_eval(eval);
        let (tv, tl): (Vec<_>, Vec<_>) = data.split(Split::Train).into_iter().unzip();
        let tf = video_features(&trainer.encoder, &trainer.params, &tv, g, cfg.train_clips, FeatureKind::Projection)?;
        Some(fit_on_videos(&tf, &tl, data.num_classes(), &cfg)?)
    };
    let records: Vec<usize> = match &a.record {
        Some(id) => vec![data
            .records
            .iter()
            .position(|r| &r.id == id)
            .ok_or_else(|| Error::UnknownRecord(id.clone()))?],
        None => (0..data.records.len())
            .filter(|&i| data.records[i].split == a.split)
            .take(a.clips)
            .collect(),
    };
    let mut per_clip = Vec::new();
    let mut sums = vec![(0.0f64, 0usize, 0usize); attacks.len()];
    for &i in &records {
        let (rec, video) = (&data.records[i], &data.videos[i]);
        let start = g.uniform_starts(video, 1)?[0];
        let clip = g.extract(video, start, g.center_crop(video))?;
        let dir = a.out.join(&rec.id);
        let clean = saliency_map(&trainer.encoder, &trainer.params, &clip)?;
        write_saliency_pngs(&dir, "clean", &clip, &clean)?;
        let mut rng = bgerase::rng::rng_for(trainer.config.seed, &format!("saliency/{}", rec.id));
        let mut reports = Vec::new();
        for (j, &attack) in attacks.iter().enumerate() {
            let r = adversarial_probe(&trainer.encoder, &trainer.params, probe.as_ref(), &clip, attack, lambda, eval.saliency_top_fraction, &mut rng)?;
            if let (Some(c), Some(m)) = (&r.attacked_clip, &r.attacked) {
                write_saliency_pngs(&dir, attack.name(), c, m)?;
            }
            sums[j].0 += r.iou;
            sums[j].1 += usize::from(r.prediction_changed == Some(true));
            sums[j].2 += 1;
            reports.push(r);
        }
        per_clip.push(json!({
            "record": rec.id,
            "class_label": rec.class_label,
            "degenerate": clean.degenerate,
            "pngs": dir,
            "attacks": reports,
        }));
    }
    let summary: Vec<Value> = attacks
        .iter()
        .zip(&sums)
        .map(|(at, (iou, changed, n))| {
            json!({
                "attack": at.name(),
                "mean_iou": iou / (*n).max(1) as f64,
                "prediction_change_rate": if probe.is_some() { json!(*changed as f64 / (*n).max(1) as f64) } else { Value::Null },
                "clips": n,
            })
        })
        .collect();
    if text {
        let rows: Vec<Vec<String>> = summary
            .iter()
            .map(|s| {
                vec![
                    s["attack"].as_str().unwrap_or("").to_string(),
                    format!("{:.3}", s["mean_iou"].as_f64().unwrap_or(0.0)),
                    s["prediction_change_rate"].as_f64().map_or("-".into(), pct),
                ]
            })
            .collect();
        table(&["attack", "mean_iou", "changed%"], &rows);
        out!("PNG sequences under {}", a.out.display());
    } else {
        emit(json!({
            "command": "saliency",
            "checkpoint": a.checkpoint,
            "content_hash": content_hash,
            "config_hash": trainer.config.hash(),
            "lambda": lambda,
            "top_fraction": eval.saliency_top_fraction,
            "summary": summary,
            "clips": per_clip,
        }));
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs, text: bool) -> Result<()> {
    let data = Dataset::load(&a.data.data)?;
    let mut cfg = a.cfg.resolve()?;
    bind_data(&mut cfg, &data)?;
    let mut arms = Vec::new();
    let mut save_err = None;
    let table_res = ablate_distractors(&data, &cfg, &a.seeds, &mut |rep, trainer| {
        let mut arm = json!({
            "variant": rep.variant,
            "seed": rep.seed,
            "config_hash": rep.config_hash,
            "final_loss": rep.final_loss,
        });
        if let Some(dir) = &a.checkpoints {
            let p = dir.join(format!("{}-seed{}.beck", rep.variant, rep.seed));
            match checkpoint::save(trainer, &p) {
                Ok(h) => {
                    arm["checkpoint"] = json!(p);
                    arm["content_hash"] = json!(h);
                }
                Err(e) => {
                    save_err.get_or_insert(e);
                }
            }
        }
        eprintln!("{} seed {}: anti-bias {:.1}%", rep.variant, rep.seed, 100.0 * rep.eval.antibias.top1);
        arms.push(arm);
    })?;
    if let Some(e) = save_err {
        return Err(e);
    }
    if text {
        let rows: Vec<Vec<String>> = table_res
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.variant.clone(), pct(r.antibias_mean)];
                row.extend(r.antibias_top1.iter().map(|&x| pct(x)));
                row
            })
            .collect();
        let mut headers = vec!["variant".to_string(), "antibias_mean".to_string()];
        headers.extend(a.seeds.iter().map(|s| format!("seed{s}")));
        table(&headers.iter().map(String::as_str).collect::<Vec<_>>(), &rows);
    } else {
        emit(json!({
            "command": "ablate-distractors",
            "config_hash": cfg.hash(),
            "seeds": a.seeds,
            "rows": table_res.rows,
            "arms": arms,
        }));
    }
    Ok(())
}

fn cmd_describe(a: DescribeArgs, text: bool) -> Result<()> {
    let doc = match &a.checkpoint {
        Some(p) => {
            let mut d = checkpoint::describe(p)?;
            d["command"] = json!("describe");
            d
        }
        None => {
            let cfg = a.cfg.resolve()?;
            cfg.validate()?;
            let enc = bgerase::encoder::Encoder::new(cfg.encoder.clone())?;
            json!({
                "command": "describe",
                "config_hash": cfg.hash(),
                "config": cfg.flat(),
                "encoder": enc.describe(),
            })
        }
    };
    if text {
        for key in ["path", "content_hash", "config_hash", "encoder_hash", "seed", "step", "epoch", "online_parameters", "queue_len"] {
            if let Some(v) = doc.get(key) {
                out!("{key:<18} {v}");
            }
        }
        if let Some(Value::Object(flat)) = doc.get("config") {
            for (k, v) in flat {
                if !v.is_object() {
                    out!("{k:<32} {v}");
                }
            }
        }
    } else {
        emit(doc);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let text = cli.text;
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a, text),
        Command::Pretrain(a) => cmd_pretrain(a, text),
        Command::Probe(a) => cmd_probe(a, text),
        Command::Retrieve(a) => cmd_retrieve(a, text),
        Command::Diagnose(a) => cmd_diagnose(a, text),
        Command::Saliency(a) => cmd_saliency(a, text),
        Command::AblateDistractors(a) => cmd_ablate(a, text),
        Command::Describe(a) => cmd_describe(a, text),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let family = e.family();
            eprintln!("error ({family:?}): {e}");
            ExitCode::from(exit_code(family))
        }
    }
}
