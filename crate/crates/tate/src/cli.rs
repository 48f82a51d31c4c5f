//! Command-line surface: data synthesis, teacher pretraining, student
//! training, missing-rate evaluation sweeps, gradient checking, and embedding
//! export.
//!
//! Config precedence is file < environment < flags. The flat key=value config
//! file and the TATE_ environment prefix both feed the same override set and
//! reject unknown keys. Every command prints its effective configuration as a
//! single JSON line before doing any work.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::data::{
    load_jsonl, synth_generate, write_jsonl, Dataset, MissingMode, MissingPattern, SynthSpec,
};
use crate::gradcheck::{finite_diff_check_per_group, NamedParams};
use crate::graph::Graph;
use crate::losses::{
    backward_loss, cls_loss, forward_loss, tag_loss, total_loss, LossKind, LossWeights,
};
use crate::model::{
    collect_grads, default_config, student_forward, teacher_forward, BoundParams, Dropout,
    ModelConfig, StudentParams, TeacherParams,
};
use crate::training::{
    evaluate, export_embeddings, history_to_csv, pretrain_teacher, train, TrainConfig,
};
use crate::data::encode_tag;
use crate::data::mask_missing;

#[derive(Parser)]
#[command(
    name = "tate",
    version,
    about = "Tag-assisted transformer encoder for multimodal classification under missing modalities"
)]
struct Cli {
    /// Flat key=value config file (lowest precedence; env TATE_* and flags override it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL dataset.
    Synth(SynthArgs),
    /// Pretrain the full-modality teacher with cross-entropy only.
    Pretrain(PretrainArgs),
    /// Train the student against a frozen teacher checkpoint.
    Train(TrainArgs),
    /// Evaluate a student checkpoint across a missing-rate grid.
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump encoder outputs (E_out) with labels and missing patterns.
    ExportEmbeddings(ExportArgs),
}

/// Overrides shared by the training-flavoured commands. Every field is also a
/// config-file / TATE_ environment key of the same name.
#[derive(Args, Debug, Default, Clone)]
struct RunFlags {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Missing rate eta in [0, 1].
    #[arg(long)]
    eta: Option<f64>,
    /// Missing pattern mode: single or multiple.
    #[arg(long, value_parser = MissingMode::from_str)]
    mode: Option<MissingMode>,
    /// Forward (teacher alignment) loss weight.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Backward (reconstruction) loss weight.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Tag recovery loss weight.
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden width d of each modality encoder.
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention head count.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Attach the 4-digit tag to the joint vector (false gives "-w/o tag").
    #[arg(long)]
    use_tag: Option<bool>,
    /// Route modalities through the shared pairwise projections.
    #[arg(long)]
    use_common_space: Option<bool>,
    /// Loss kind for the forward term: js, mae, or cosine.
    #[arg(long, value_parser = LossKind::from_str)]
    forward_kind: Option<LossKind>,
    #[arg(long, value_parser = LossKind::from_str)]
    backward_kind: Option<LossKind>,
    #[arg(long, value_parser = LossKind::from_str)]
    tag_kind: Option<LossKind>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    width_visual: usize,
    #[arg(long, default_value_t = 12)]
    width_acoustic: usize,
    #[arg(long, default_value_t = 16)]
    width_textual: usize,
    #[arg(long, default_value_t = 8)]
    len_visual: usize,
    #[arg(long, default_value_t = 10)]
    len_acoustic: usize,
    #[arg(long, default_value_t = 6)]
    len_textual: usize,
    /// Distance between class anchors; 0 removes all class signal.
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of each class to split off into --holdout-out.
    #[arg(long, requires = "holdout_out")]
    holdout: Option<f64>,
    #[arg(long, requires = "holdout")]
    holdout_out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Where to write the teacher checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional loss-history CSV path.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Teacher checkpoint produced by `tate pretrain`.
    #[arg(long)]
    teacher: PathBuf,
    /// Pretrain the teacher in place if the checkpoint is missing.
    #[arg(long)]
    pretrain: bool,
    /// Where to write the student checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Loss-history CSV path (defaults to <out>.history.csv).
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated missing-rate grid.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    etas: Vec<f64>,
    #[arg(long, value_parser = MissingMode::from_str)]
    mode: Option<MissingMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional path for the CSV table (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of samples to backpropagate through.
    #[arg(long, default_value_t = 2)]
    samples: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Max relative error allowed per parameter group.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Corrupt one analytic gradient group (negative control; must fail).
    #[arg(long)]
    inject_fault: bool,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_parser = MissingMode::from_str)]
    mode: Option<MissingMode>,
    #[arg(long)]
    seed: Option<u64>,
}

/// One optional value per tunable; filled from file, then env, then flags.
#[derive(Debug, Default, Clone)]
struct Overrides {
    lr: Option<f64>,
    batch: Option<usize>,
    epochs: Option<usize>,
    eta: Option<f64>,
    mode: Option<MissingMode>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lambda3: Option<f64>,
    seed: Option<u64>,
    hidden: Option<usize>,
    heads: Option<usize>,
    dropout: Option<f64>,
    use_tag: Option<bool>,
    use_common_space: Option<bool>,
    forward_kind: Option<LossKind>,
    backward_kind: Option<LossKind>,
    tag_kind: Option<LossKind>,
}

fn parse_value<T: FromStr>(key: &str, value: &str, source: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value '{value}' for '{key}' in {source}: {e}"))
}

impl Overrides {
    fn set(&mut self, key: &str, value: &str, source: &str) -> Result<()> {
        match key {
            "lr" => self.lr = Some(parse_value(key, value, source)?),
            "batch" => self.batch = Some(parse_value(key, value, source)?),
            "epochs" => self.epochs = Some(parse_value(key, value, source)?),
            "eta" => self.eta = Some(parse_value(key, value, source)?),
            "mode" => self.mode = Some(parse_value(key, value, source)?),
            "lambda1" => self.lambda1 = Some(parse_value(key, value, source)?),
            "lambda2" => self.lambda2 = Some(parse_value(key, value, source)?),
            "lambda3" => self.lambda3 = Some(parse_value(key, value, source)?),
            "seed" => self.seed = Some(parse_value(key, value, source)?),
            "hidden" => self.hidden = Some(parse_value(key, value, source)?),
            "heads" => self.heads = Some(parse_value(key, value, source)?),
            "dropout" => self.dropout = Some(parse_value(key, value, source)?),
            "use_tag" => self.use_tag = Some(parse_value(key, value, source)?),
            "use_common_space" => {
                self.use_common_space = Some(parse_value(key, value, source)?)
            }
            "forward_kind" => self.forward_kind = Some(parse_value(key, value, source)?),
            "backward_kind" => self.backward_kind = Some(parse_value(key, value, source)?),
            "tag_kind" => self.tag_kind = Some(parse_value(key, value, source)?),
            other => bail!("unknown config key '{other}' in {source}"),
        }
        Ok(())
    }

    fn merge(&mut self, higher: &Overrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if higher.$f.is_some() { self.$f = higher.$f; } )* };
        }
        take!(
            lr, batch, epochs, eta, mode, lambda1, lambda2, lambda3, seed, hidden, heads,
            dropout, use_tag, use_common_space, forward_kind, backward_kind, tag_kind
        );
    }

    fn from_file(path: &Path) -> Result<Overrides> {
        let source = format!("config file {}", path.display());
        let text = std::fs::read_to_string(path).with_context(|| source.clone())?;
        let mut o = Overrides::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{source} line {}: expected key=value, got '{line}'", n + 1);
            };
            o.set(key.trim(), value.trim(), &source)?;
        }
        Ok(o)
    }

    fn from_env() -> Result<Overrides> {
        let mut o = Overrides::default();
        for (key, value) in std::env::vars() {
            if let Some(rest) = key.strip_prefix("TATE_") {
                o.set(&rest.to_lowercase(), &value, "environment")?;
            }
        }
        Ok(o)
    }

    fn from_flags(f: &RunFlags) -> Overrides {
        Overrides {
            lr: f.lr,
            batch: f.batch,
            epochs: f.epochs,
            eta: f.eta,
            mode: f.mode,
            lambda1: f.lambda1,
            lambda2: f.lambda2,
            lambda3: f.lambda3,
            seed: f.seed,
            hidden: f.hidden,
            heads: f.heads,
            dropout: f.dropout,
            use_tag: f.use_tag,
            use_common_space: f.use_common_space,
            forward_kind: f.forward_kind,
            backward_kind: f.backward_kind,
            tag_kind: f.tag_kind,
        }
    }

    /// file < environment < flags.
    fn resolve(config: Option<&Path>, flags: &RunFlags) -> Result<Overrides> {
        let mut o = match config {
            Some(p) => Overrides::from_file(p)?,
            None => Overrides::default(),
        };
        o.merge(&Overrides::from_env()?);
        o.merge(&Overrides::from_flags(flags));
        Ok(o)
    }

    fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let dw = LossWeights::default();
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch: self.batch.unwrap_or(d.batch),
            epochs: self.epochs.unwrap_or(d.epochs),
            eta: self.eta.unwrap_or(d.eta),
            mode: self.mode.unwrap_or(d.mode),
            weights: LossWeights {
                lambda1: self.lambda1.unwrap_or(dw.lambda1),
                lambda2: self.lambda2.unwrap_or(dw.lambda2),
                lambda3: self.lambda3.unwrap_or(dw.lambda3),
            },
            seed: self.seed.unwrap_or(d.seed),
            forward_kind: self.forward_kind.unwrap_or(d.forward_kind),
            backward_kind: self.backward_kind.unwrap_or(d.backward_kind),
            tag_kind: self.tag_kind.unwrap_or(d.tag_kind),
        }
    }

    fn apply_model(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.use_tag {
            cfg.use_tag = v;
        }
        if let Some(v) = self.use_common_space {
            cfg.use_common_space = v;
        }
    }
}

#[derive(Serialize)]
struct Effective<'a> {
    command: &'a str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

fn print_effective(command: &str, model: &ModelConfig, train: &TrainConfig) -> Result<()> {
    let line = serde_json::to_string(&Effective {
        command,
        model,
        train,
    })?;
    println!("{line}");
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    load_jsonl(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Model config for a dataset: Table-style defaults, classes from the data,
/// then user overrides.
fn model_config_for(dataset: &Dataset, o: &Overrides) -> Result<ModelConfig> {
    let mut cfg = default_config(
        dataset.width_visual,
        dataset.width_acoustic,
        dataset.width_textual,
    );
    cfg.classes = dataset.class_count;
    o.apply_model(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    dispatch(cli)
}

/// Test-friendly entry point: parse from an explicit argv.
pub fn run_from<I, T>(args: I) -> Result<ExitCode>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Pretrain(args) => cmd_pretrain(cli.config.as_deref(), args),
        Command::Train(args) => cmd_train(cli.config.as_deref(), args),
        Command::Eval(args) => cmd_eval(cli.config.as_deref(), args),
        Command::Gradcheck(args) => cmd_gradcheck(cli.config.as_deref(), args),
        Command::ExportEmbeddings(args) => cmd_export(cli.config.as_deref(), args),
    }
}

#[derive(Serialize)]
struct SynthSummary {
    command: &'static str,
    segments: usize,
    classes: usize,
    class_counts: Vec<usize>,
    width_visual: usize,
    width_acoustic: usize,
    width_textual: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<&'static str>,
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let spec = SynthSpec {
        classes: args.classes,
        per_class: args.per_class,
        width_visual: args.width_visual,
        width_acoustic: args.width_acoustic,
        width_textual: args.width_textual,
        len_visual: args.len_visual,
        len_acoustic: args.len_acoustic,
        len_textual: args.len_textual,
        separation: args.separation,
        noise: args.noise,
        seed: args.seed,
    };
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({ "command": "synth", "spec": &spec }))?
    );
    let mut dataset = synth_generate(&spec);
    if let (Some(frac), Some(holdout_out)) = (args.holdout, &args.holdout_out) {
        if !(0.0..1.0).contains(&frac) {
            bail!("--holdout must be in [0, 1)");
        }
        // Samples are IID within a class, so an index split is unbiased.
        let keep = args.per_class - ((frac * args.per_class as f64).round() as usize)
            .min(args.per_class);
        let mut held = dataset.clone();
        let all = std::mem::take(&mut dataset.segments);
        held.segments.clear();
        for (i, seg) in all.into_iter().enumerate() {
            if i % args.per_class < keep {
                dataset.segments.push(seg);
            } else {
                held.segments.push(seg);
            }
        }
        write_jsonl(&held, holdout_out)
            .with_context(|| format!("writing {}", holdout_out.display()))?;
    }
    write_jsonl(&dataset, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let mut class_counts = vec![0usize; dataset.class_count];
    for s in &dataset.segments {
        class_counts[s.label] += 1;
    }
    let summary = SynthSummary {
        command: "synth",
        segments: dataset.len(),
        classes: dataset.class_count,
        class_counts,
        width_visual: dataset.width_visual,
        width_acoustic: dataset.width_acoustic,
        width_textual: dataset.width_textual,
        warning: (args.separation == 0.0).then_some("no class signal"),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn write_history(path: &Path, history: &[crate::training::EpochStats]) -> Result<()> {
    std::fs::write(path, history_to_csv(history))
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_pretrain(config: Option<&Path>, args: PretrainArgs) -> Result<ExitCode> {
    let o = Overrides::resolve(config, &args.flags)?;
    let dataset = load_dataset(&args.data)?;
    let cfg = model_config_for(&dataset, &o)?;
    let train_cfg = o.train_config();
    print_effective("pretrain", &cfg, &train_cfg)?;
    let (teacher, history) = pretrain_teacher(&dataset, &cfg, &train_cfg)?;
    checkpoint::save_teacher(&cfg, &teacher, &args.out)?;
    if let Some(h) = &args.history {
        write_history(h, &history)?;
    }
    let last = history.last();
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": "pretrain",
            "epochs": history.len(),
            "final_cls": last.map(|h| h.cls),
            "train_acc": last.map(|h| h.train_acc),
            "checkpoint": args.out.display().to_string(),
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(config: Option<&Path>, args: TrainArgs) -> Result<ExitCode> {
    let o = Overrides::resolve(config, &args.flags)?;
    let dataset = load_dataset(&args.data)?;
    let cfg = model_config_for(&dataset, &o)?;
    let train_cfg = o.train_config();
    print_effective("train", &cfg, &train_cfg)?;

    let teacher = if args.teacher.exists() {
        let (tcfg, teacher) = checkpoint::load_teacher(&args.teacher)?;
        // Dropout is a training-time knob; everything else is architecture.
        let arch = |c: &ModelConfig| {
            let mut c = c.clone();
            c.dropout = 0.0;
            c
        };
        if arch(&tcfg) != arch(&cfg) {
            bail!(
                "teacher checkpoint {} was trained with a different model config; \
                 re-run `tate pretrain` with the current settings",
                args.teacher.display()
            );
        }
        teacher
    } else if args.pretrain {
        let (teacher, _) = pretrain_teacher(&dataset, &cfg, &train_cfg)?;
        checkpoint::save_teacher(&cfg, &teacher, &args.teacher)?;
        teacher
    } else {
        bail!(
            "teacher checkpoint '{}' not found; run `tate pretrain --data {} --out {}` \
             first, or pass --pretrain to train one in place",
            args.teacher.display(),
            args.data.display(),
            args.teacher.display()
        );
    };

    let (student, history) = train(&dataset, &teacher, &cfg, &train_cfg)?;
    checkpoint::save_student(&cfg, &student, &args.out)?;
    let history_path = args.history.unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_history(&history_path, &history)?;

    let metrics = evaluate(
        &cfg,
        &student,
        &dataset,
        train_cfg.eta,
        train_cfg.mode,
        train_cfg.seed,
    )?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": "train",
            "epochs": history.len(),
            "final": history.last(),
            "metrics": metrics,
            "checkpoint": args.out.display().to_string(),
            "history": history_path.display().to_string(),
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(config: Option<&Path>, args: EvalArgs) -> Result<ExitCode> {
    let flags = RunFlags {
        mode: args.mode,
        seed: args.seed,
        ..RunFlags::default()
    };
    let o = Overrides::resolve(config, &flags)?;
    let (cfg, student) = checkpoint::load_student(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let train_cfg = o.train_config();
    print_effective("eval", &cfg, &train_cfg)?;

    let mut csv = String::from("eta,M-F1,ACC\n");
    let mut rows = Vec::new();
    for &eta in &args.etas {
        let m = evaluate(&cfg, &student, &dataset, eta, train_cfg.mode, train_cfg.seed)?;
        csv.push_str(&format!("{eta},{:.4},{:.4}\n", m.macro_f1, m.accuracy));
        rows.push(serde_json::json!({
            "eta": eta,
            "m_f1": m.macro_f1,
            "acc": m.accuracy,
            "confusion": m.confusion,
        }));
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": "eval",
            "mode": train_cfg.mode,
            "seed": train_cfg.seed,
            "rows": rows,
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(config: Option<&Path>, args: ExportArgs) -> Result<ExitCode> {
    let flags = RunFlags {
        eta: args.eta,
        mode: args.mode,
        seed: args.seed,
        ..RunFlags::default()
    };
    let o = Overrides::resolve(config, &flags)?;
    let (cfg, student) = checkpoint::load_student(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let train_cfg = o.train_config();
    print_effective("export-embeddings", &cfg, &train_cfg)?;

    let rows = export_embeddings(
        &cfg,
        &student,
        &dataset,
        train_cfg.eta,
        train_cfg.mode,
        train_cfg.seed,
    )?;
    let width = rows.first().map_or(0, |r| r.e_out.len());
    let mut csv = String::from("id,label,pattern");
    for i in 0..width {
        csv.push_str(&format!(",e{i}"));
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!("{},{},{}", r.id, r.label, r.pattern));
        for v in &r.e_out {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    std::fs::write(&args.out, &csv)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": "export-embeddings",
            "rows": rows.len(),
            "width": width,
            "out": args.out.display().to_string(),
        }))?
    );
    Ok(ExitCode::SUCCESS)
}

/// Tiny-config defaults for gradient checking; finite differences over the
/// full default model would take hours.
fn gradcheck_config(o: &Overrides, dataset: &Dataset) -> Result<ModelConfig> {
    let mut cfg = ModelConfig {
        hidden: 16,
        heads: 2,
        classes: dataset.class_count,
        dropout: 0.0,
        use_tag: true,
        use_common_space: true,
        width_visual: dataset.width_visual,
        width_acoustic: dataset.width_acoustic,
        width_textual: dataset.width_textual,
    };
    o.apply_model(&mut cfg);
    if cfg.dropout > 0.0 {
        bail!("gradcheck requires dropout 0 (the loss must be deterministic)");
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Mean total loss over the fixed sample set, as a pure function of the
/// parameter vector. Shared by the numeric and analytic sides.
fn gradcheck_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    bound: &BoundParams,
    segments: &[(crate::data::Segment, MissingPattern, crate::tensor::Tensor)],
    train_cfg: &TrainConfig,
) -> crate::tensor::Result<crate::graph::NodeId> {
    let mut totals = Vec::with_capacity(segments.len());
    for (seg, pattern, e_pre) in segments {
        let tag = encode_tag(pattern);
        let masked = mask_missing(seg, pattern);
        let trace = student_forward(g, cfg, bound, &masked, &tag, &mut Dropout::off())
            .map_err(|e| crate::tensor::NumericsError::Contract(e.to_string()))?;
        let cls = cls_loss(g, trace.probs, seg.label)?;
        let fwd = forward_loss(g, train_cfg.forward_kind, trace.e_out, e_pre)?;
        let bwd = backward_loss(g, train_cfg.backward_kind, trace.d_out, trace.e_all)?;
        let tg = tag_loss(g, train_cfg.tag_kind, &tag.as_floats(), trace.d_out)?;
        totals.push(total_loss(g, cls, Some(fwd), Some(bwd), Some(tg), &train_cfg.weights)?);
    }
    let mut sum = totals[0];
    for &t in &totals[1..] {
        sum = g.add(sum, t)?;
    }
    Ok(g.scale(sum, 1.0 / segments.len() as f64))
}

fn cmd_gradcheck(config: Option<&Path>, args: GradcheckArgs) -> Result<ExitCode> {
    let o = Overrides::resolve(config, &args.flags)?;
    if args.samples == 0 {
        bail!("gradcheck needs at least one sample");
    }
    let train_cfg = o.train_config();
    let seed = train_cfg.seed;

    // Small fixed-width synthetic probe data; widths are irrelevant to the
    // backward rules under test.
    let spec = SynthSpec {
        classes: 3,
        per_class: args.samples,
        width_visual: 6,
        width_acoustic: 5,
        width_textual: 4,
        len_visual: 3,
        len_acoustic: 4,
        len_textual: 2,
        separation: 2.0,
        noise: 1.0,
        seed,
    };
    let dataset = synth_generate(&spec);
    let cfg = gradcheck_config(&o, &dataset)?;
    print_effective("gradcheck", &cfg, &train_cfg)?;

    // Cycle through every valid missing pattern so the tag and masking paths
    // all carry gradient.
    let patterns = MissingPattern::all_valid();
    let teacher = TeacherParams::init(&cfg, seed.wrapping_add(1))?;
    let mut fixtures = Vec::with_capacity(args.samples);
    for (i, seg) in dataset.segments.iter().take(args.samples).enumerate() {
        let mut g = Graph::new();
        let named = teacher.named();
        let bound = BoundParams::bind(&mut g, &named);
        let (e_pre, _) = teacher_forward(&mut g, &bound, seg, &MissingPattern::none())?;
        fixtures.push((
            seg.clone(),
            patterns[i % patterns.len()].clone(),
            g.value(e_pre).clone(),
        ));
    }

    let student = StudentParams::init(&cfg, seed)?;
    let params: NamedParams = student
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();

    let f = |p: &NamedParams| -> crate::tensor::Result<f64> {
        let mut g = Graph::new();
        let borrowed: Vec<(String, &crate::tensor::Tensor)> =
            p.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bound = BoundParams::bind(&mut g, &borrowed);
        let loss = gradcheck_loss(&mut g, &cfg, &bound, &fixtures, &train_cfg)?;
        g.value(loss).item()
    };

    let mut analytic: NamedParams = {
        let mut g = Graph::new();
        let borrowed: Vec<(String, &crate::tensor::Tensor)> =
            params.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bound = BoundParams::bind(&mut g, &borrowed);
        let loss = gradcheck_loss(&mut g, &cfg, &bound, &fixtures, &train_cfg)?;
        g.backward(loss)?;
        collect_grads(&g, &bound)
    };
    if args.inject_fault {
        for v in analytic[0].1.data_mut() {
            *v += 1.0;
        }
    }

    let report = finite_diff_check_per_group(&f, &params, &analytic, args.eps)?;
    let mut all_pass = true;
    for (name, err) in &report {
        let ok = *err < args.tol;
        all_pass &= ok;
        println!(
            "group {name}: max_rel_err {err:.3e} {}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "command": "gradcheck",
            "groups": report.len(),
            "tol": args.tol,
            "pass": all_pass,
        }))?
    );
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
