use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mstcn::checkpoint;
use mstcn::config::RunConfig;
use mstcn::data::{read_dataset, synth_generate, write_dataset, Split};
use mstcn::model::LipReader;
use mstcn::temporal::{receptive_field, trace_receptive_field, MultiScaleTCNSpec};
use mstcn::train::{evaluate, fit, HardPretrainConfig, TrainConfig};
use mstcn::verify::{self, Scope};
use mstcn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mstcn",
    version,
    about = "Multi-scale TCN word classifier on synthetic clips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoints and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        wd: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Random temporal crops around the target interval.
        #[arg(long)]
        variable_length: bool,
        /// Pretrain on the hardest classes before full training.
        #[arg(long)]
        hard_pretrain: bool,
    },
    /// Accuracy under random frame dropping.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Frame-drop counts: `N` or an inclusive range `N..M`.
        #[arg(long)]
        drop_frames: Option<String>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Finite-difference gradient checks in 64-bit precision.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
    },
    /// Analytic and traced receptive field per branch.
    Rf {
        #[command(flatten)]
        common: Common,
        /// Branch kernel sizes (overrides the config).
        #[arg(long, value_delimiter = ',')]
        kernels: Option<Vec<usize>>,
        /// Number of temporal blocks (overrides the config).
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        causal: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Layers,
    Model,
    All,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn require(path: Option<PathBuf>, field: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config {
        field: field.to_string(),
        msg: "required (set it in the config or pass the flag)".to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn gen_data(common: Common) -> Result<()> {
    let mut cfg = load_config(&common)?;
    let dir = require(cfg.out_dir.take().or(cfg.data_dir.take()), "out_dir")?;
    cfg.validate()?;
    let data = synth_generate(&cfg.data, cfg.seed)?;
    create_dir(&dir)?;
    write_dataset(&dir, &data, common.force)?;
    println!("wrote {} (K = {})", dir.display(), data.train.num_classes);
    for split in Split::ALL {
        let d = data.get(split);
        let mut lengths = std::collections::BTreeMap::new();
        for s in &d.samples {
            *lengths.entry(s.target.1 - s.target.0).or_insert(0usize) += 1;
        }
        let hist: Vec<String> = lengths.iter().map(|(l, n)| format!("{l}:{n}")).collect();
        println!(
            "{:<5} {:>5} clips of {} frames; target lengths {}",
            split.name(),
            d.len(),
            cfg.data.length,
            hist.join(" ")
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    common: Common,
    data: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    wd: Option<f64>,
    batch: Option<usize>,
    variable_length: bool,
    hard_pretrain: bool,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    let t: &mut TrainConfig = &mut cfg.train;
    t.epochs = epochs.unwrap_or(t.epochs);
    t.lr_max = lr.unwrap_or(t.lr_max);
    t.weight_decay = wd.unwrap_or(t.weight_decay);
    t.batch_size = batch.unwrap_or(t.batch_size);
    t.variable_length |= variable_length;
    if hard_pretrain && t.hard_pretrain.is_none() {
        t.hard_pretrain = Some(HardPretrainConfig::default());
    }
    if data.is_some() {
        cfg.data_dir = data;
    }
    let data_dir = require(cfg.data_dir.clone(), "data_dir")?;
    let out = require(cfg.out_dir.clone(), "out_dir")?;
    let dataset = read_dataset(&data_dir)?;
    cfg.data.num_classes = dataset.train.num_classes;
    cfg.model.tcn.num_classes = dataset.train.num_classes;
    if let Some((h, _)) = dataset.train.frame_size() {
        cfg.data.frame_size = h;
    }
    cfg.validate()?;
    let metrics = out.join("metrics.csv");
    if metrics.exists() && !common.force {
        return Err(Error::Exists(metrics));
    }
    create_dir(&out)?;
    mstcn::data::disk::write_atomic(&out.join("config.json"), cfg.to_json().as_bytes())?;
    let mut model = LipReader::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let result = fit(&mut model, &dataset, &cfg.train, cfg.seed, Some(&out))?;
    if let Some(h) = &result.hard_classes {
        println!("hard classes: {h:?}");
    }
    for r in result.records.iter().filter(|r| r.split == "val") {
        println!(
            "epoch {:>3}  lr {:.3e}  val loss {:.4}  val acc {:.4}",
            r.epoch, r.lr, r.loss, r.acc
        );
    }
    println!(
        "best val acc {:.4} at epoch {}; checkpoints in {}",
        result.best_val_acc,
        result.best_epoch,
        out.display()
    );
    Ok(())
}

fn parse_drops(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config {
        field: "drop_frames".into(),
        msg: format!("`{s}` is not `N` or `N..M`"),
    };
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn eval(
    common: Common,
    checkpoint_path: PathBuf,
    data: Option<PathBuf>,
    drop_frames: Option<String>,
    split: Option<SplitArg>,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if data.is_some() {
        cfg.data_dir = data;
    }
    let data_dir = require(cfg.data_dir.clone(), "data_dir")?;
    let drops = match drop_frames {
        Some(s) => parse_drops(&s)?,
        None => cfg.eval.drop_frames.clone(),
    };
    let split = match split {
        Some(SplitArg::Train) => Split::Train,
        Some(SplitArg::Val) => Split::Val,
        Some(SplitArg::Test) => Split::Test,
        None => cfg.eval.split,
    };
    let (model, run) = checkpoint::load(&checkpoint_path)?;
    let dataset = read_dataset(&data_dir)?;
    let d = dataset.get(split);
    if d.num_classes != model.num_classes() {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} classes, dataset has {}",
            model.num_classes(),
            d.num_classes
        )));
    }
    let crop = match run.get("train") {
        Some(t) => serde_json::from_value::<TrainConfig>(t.clone())?.crop_size,
        None => cfg.train.crop_size,
    };
    if let (Some(c), Some((h, w))) = (crop, d.frame_size()) {
        if c > h || c > w {
            return Err(Error::Incompatible(format!(
                "model expects {c}x{c} crops of {h}x{w} frames"
            )));
        }
    }
    let out_dir = match cfg.out_dir.clone() {
        Some(o) => o,
        None => checkpoint_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let csv = out_dir.join(format!("eval_{}.csv", split.name()));
    if csv.exists() && !common.force {
        return Err(Error::Exists(csv));
    }
    let mut text = String::from("drop_frames,accuracy,loss\n");
    println!("{:>11}  {:>8}  {:>8}", "drop_frames", "accuracy", "loss");
    for n in drops {
        if let Some(s) = d.samples.iter().find(|s| n >= s.length) {
            return Err(Error::Config {
                field: "drop_frames".into(),
                msg: format!("cannot drop {n} of {} frames", s.length),
            });
        }
        let r = evaluate(&model, d, n, crop, cfg.train.eval_batch_size, cfg.seed)?;
        println!("{n:>11}  {:>8.4}  {:>8.4}", r.accuracy, r.loss);
        text.push_str(&format!("{n},{},{}\n", r.accuracy, r.loss));
    }
    create_dir(&out_dir)?;
    mstcn::data::disk::write_atomic(&csv, text.as_bytes())?;
    println!("wrote {}", csv.display());
    Ok(())
}

/// Returns whether every check passed.
fn gradcheck(common: Common, scope: ScopeArg) -> Result<bool> {
    let cfg = load_config(&common)?;
    let scopes = match scope {
        ScopeArg::Ops => vec![Scope::Ops],
        ScopeArg::Layers => vec![Scope::Layers],
        ScopeArg::Model => vec![Scope::Model],
        ScopeArg::All => vec![Scope::Ops, Scope::Layers, Scope::Model],
    };
    let mut ok = true;
    println!(
        "{:<32} {:>12} {:>10}  status",
        "component", "rel error", "threshold"
    );
    for s in scopes {
        for row in verify::run(s, cfg.seed)? {
            let status = if row.passed() { "pass" } else { "FAIL" };
            ok &= row.passed();
            println!(
                "{:<32} {:>12.3e} {:>10.0e}  {status}",
                row.component, row.error, row.threshold
            );
        }
    }
    Ok(ok)
}

/// Returns whether analytic and traced fields agree for every branch.
fn rf(
    common: Common,
    kernels: Option<Vec<usize>>,
    blocks: Option<usize>,
    causal: bool,
) -> Result<bool> {
    let cfg = load_config(&common)?;
    let mut spec: MultiScaleTCNSpec = cfg.model.tcn;
    if let Some(k) = kernels {
        spec.branch_kernel_sizes = k;
    }
    if let Some(b) = blocks {
        spec.num_blocks = b;
    }
    spec.causal |= causal;
    // the field does not depend on width
    spec.channels = spec.branch_kernel_sizes.len().max(1);
    spec.validate()?;
    let mut ok = true;
    println!(
        "{:>6} {:>6} {:>9} {:>7}  status",
        "kernel", "blocks", "analytic", "traced"
    );
    for f in receptive_field(&spec) {
        let traced = trace_receptive_field(f.kernel_size, spec.num_blocks, spec.causal)?;
        let status = if traced == f.frames { "ok" } else { "MISMATCH" };
        ok &= traced == f.frames;
        println!(
            "{:>6} {:>6} {:>9} {:>7}  {status}",
            f.kernel_size, spec.num_blocks, f.frames, traced
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { common } => gen_data(common).map(|_| true),
        Command::Train {
            common,
            data,
            epochs,
            lr,
            wd,
            batch,
            variable_length,
            hard_pretrain,
        } => train(
            common,
            data,
            epochs,
            lr,
            wd,
            batch,
            variable_length,
            hard_pretrain,
        )
        .map(|_| true),
        Command::Eval {
            common,
            checkpoint,
            data,
            drop_frames,
            split,
        } => eval(common, checkpoint, data, drop_frames, split).map(|_| true),
        Command::Gradcheck { common, scope } => gradcheck(common, scope),
        Command::Rf {
            common,
            kernels,
            blocks,
            causal,
        } => rf(common, kernels, blocks, causal),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
