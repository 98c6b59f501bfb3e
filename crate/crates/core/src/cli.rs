//! The `subscore-mtl` command line: one binary, one subcommand per stage.
//!
//! Every run is determined by its flags (and an optional TOML config file,
//! which flags override). Errors are printed as a single
//! `error[<kind>]: <message>` line; exit codes are 0 success, 1 usage or
//! configuration, 2 data, 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{
    load_cohort, subject_split, write_synthetic_cohort, Cohort, Dataset, Group, ScoreVector,
    SplitSpec, SynthConfig, ITEM_LABELS,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_ablation, subgroup_report};
use crate::loss::{derive_weights, WeightConfig};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::train::{gradcheck, train_with, AdamConfig, TrainConfig, GRADCHECK_TOLERANCE};

#[derive(Debug, Parser)]
#[command(
    name = "subscore-mtl",
    version,
    about = "Weighted multi-task regression of ADAS-Cog sub-scores from 3D volumes"
)]
pub struct Cli {
    /// Worker threads; results are bit-identical for any value.
    #[arg(long, global = true, env = "SUBSCORE_MTL_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (volumes + manifest).
    Synth(SynthArgs),
    /// Split a cohort into train/validation subjects.
    Split(SplitArgs),
    /// Train one model and write its checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cohort.
    Eval(EvalArgs),
    /// Train and compare the strong, moderate and uniform presets.
    Ablate(TrainArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Correlate items with the global score and derive loss weights.
    DeriveWeights(DeriveArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 163)]
    pub cn: usize,
    #[arg(long, default_value_t = 95)]
    pub mci: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Volume side length (cubic volumes).
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by `train` and `ablate`. Unset flags fall back to the
/// `--config` file, then to built-in defaults.
#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// TOML file with any of the keys below (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Existing split file; otherwise one is made from --ratio/--split-seed.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,

    /// Seeds initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub no_shuffle: bool,

    /// uniform, moderate or strong.
    #[arg(long, conflicts_with = "weights")]
    pub preset: Option<String>,
    /// JSON weight file `{"name": ..., "w": [13 reals]}`.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ModelArgs {
    /// Start from the small test model instead of the default.
    #[arg(long)]
    pub tiny: bool,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    /// Volume side length the model expects.
    #[arg(long)]
    pub input_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Evaluate the validation subjects of this split (default: everyone).
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.32)]
    pub high: f64,
    #[arg(long, default_value_t = 0.004)]
    pub low: f64,
    /// Write the weight config JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in a `--config` TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    split: Option<PathBuf>,
    ratio: Option<f64>,
    split_seed: Option<u64>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    shuffle: Option<bool>,
    preset: Option<String>,
    weights: Option<PathBuf>,
    tiny: Option<bool>,
    patch_size: Option<usize>,
    embed_dim: Option<usize>,
    depth: Option<usize>,
    n_heads: Option<usize>,
    mlp_ratio: Option<usize>,
    head_hidden: Option<usize>,
    input_dim: Option<usize>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
        Ok(FileConfig {
            manifest: fix(cfg.manifest),
            out: fix(cfg.out),
            split: fix(cfg.split),
            weights: fix(cfg.weights),
            ..cfg
        })
    }
}

/// Fully resolved `train`/`ablate` settings.
#[derive(Debug)]
pub struct Experiment {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub split: Option<PathBuf>,
    pub ratio: f64,
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn model_config(a: &ModelArgs, f: &FileConfig) -> ModelConfig {
    let base = if a.tiny || f.tiny.unwrap_or(false) {
        ModelConfig::tiny()
    } else {
        ModelConfig::default()
    };
    let dim = a.input_dim.or(f.input_dim);
    ModelConfig {
        patch_size: a.patch_size.or(f.patch_size).unwrap_or(base.patch_size),
        embed_dim: a.embed_dim.or(f.embed_dim).unwrap_or(base.embed_dim),
        depth: a.depth.or(f.depth).unwrap_or(base.depth),
        n_heads: a.n_heads.or(f.n_heads).unwrap_or(base.n_heads),
        mlp_ratio: a.mlp_ratio.or(f.mlp_ratio).unwrap_or(base.mlp_ratio),
        head_hidden: a.head_hidden.or(f.head_hidden).unwrap_or(base.head_hidden),
        input_dims: dim.map(|d| [d; 3]).unwrap_or(base.input_dims),
        ..base
    }
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<Experiment> {
        let f = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let missing = |flag: &str| Error::Config(format!("--{flag} is required"));
        let weights = if let Some(p) = &self.weights {
            WeightConfig::load(p)?
        } else if let Some(name) = &self.preset {
            WeightConfig::preset(name)?
        } else if let Some(p) = &f.weights {
            WeightConfig::load(p)?
        } else if let Some(name) = &f.preset {
            WeightConfig::preset(name)?
        } else {
            WeightConfig::uniform()
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            epochs: self.epochs.or(f.epochs).unwrap_or(d.epochs),
            batch_size: self.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
            adam: AdamConfig {
                learning_rate: self.lr.or(f.learning_rate).unwrap_or(d.adam.learning_rate),
                beta1: self.beta1.or(f.beta1).unwrap_or(d.adam.beta1),
                beta2: self.beta2.or(f.beta2).unwrap_or(d.adam.beta2),
                epsilon: self.epsilon.or(f.epsilon).unwrap_or(d.adam.epsilon),
            },
            seed: self.seed.or(f.seed).unwrap_or(d.seed),
            weights,
            shuffle: !self.no_shuffle && f.shuffle.unwrap_or(true),
        };
        train.validate()?;
        let model = model_config(&self.model, &f);
        model.validate()?;
        Ok(Experiment {
            manifest: self
                .manifest
                .clone()
                .or(f.manifest)
                .ok_or_else(|| missing("manifest"))?,
            out: self.out.clone().or(f.out).ok_or_else(|| missing("out"))?,
            split: self.split.clone().or(f.split),
            ratio: self.ratio.or(f.ratio).unwrap_or(0.8),
            split_seed: self.split_seed.or(f.split_seed).unwrap_or(0),
            model,
            train,
        })
    }
}

impl Experiment {
    fn load(&self) -> Result<(Cohort, Dataset, SplitSpec)> {
        let cohort = load_cohort(&self.manifest)?;
        let split = match &self.split {
            Some(p) => {
                let s = SplitSpec::load(p)?;
                s.check_covers(&cohort)?;
                s
            }
            None => subject_split(&cohort, self.ratio, self.split_seed)?,
        };
        let data = Dataset::from_cohort(&cohort)?;
        Ok((cohort, data, split))
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn mean_sd(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Group, size, sex split, age and global score, one row per group.
pub fn cohort_summary(cohort: &Cohort) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>11} {:>13} {:>14} {:>15}",
        "Group", "Subject (n)", "Male/Female", "Age (mean±SD)", "Global (mean±SD)"
    );
    let fmt = |v: Option<(f64, f64)>| {
        v.map(|(m, sd)| format!("{m:.1}±{sd:.1}"))
            .unwrap_or("n/a".into())
    };
    for g in Group::ALL {
        let subs: Vec<_> = cohort.subjects.iter().filter(|r| r.group == g).collect();
        let male = subs.iter().filter(|r| r.sex == crate::data::Sex::M).count();
        let ages: Vec<f64> = subs.iter().map(|r| r.age).collect();
        let global: Vec<f64> = subs.iter().map(|r| r.scores_m24.global()).collect();
        let _ = writeln!(
            s,
            "{:<6} {:>11} {:>13} {:>14} {:>15}",
            g.as_str(),
            subs.len(),
            format!("{}/{}", male, subs.len() - male),
            fmt(mean_sd(&ages)),
            fmt(mean_sd(&global)),
        );
    }
    s
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(a.cn, a.mci, a.seed);
    cfg.dims = [a.dim; 3];
    cfg.patch_size = a.patch_size;
    let synth = crate::data::generate_synthetic_cohort(&cfg)?;
    let cohort = write_synthetic_cohort(&a.out, &synth)?;
    if cohort.is_empty() {
        eprintln!("warning: empty cohort; wrote a manifest with no subjects");
    }
    print!("{}", cohort_summary(&cohort));
    println!("wrote {}", a.out.join("manifest.csv").display());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let cohort = load_cohort(&a.manifest)?;
    let split = subject_split(&cohort, a.ratio, a.seed)?;
    split.save(&a.out)?;
    println!(
        "train {} / val {} subjects -> {}",
        split.train_ids.len(),
        split.val_ids.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let exp = a.resolve()?;
    let (_, data, split) = exp.load()?;
    let params = crate::model::init_params::<f32>(&exp.model, exp.train.seed)?;
    eprintln!(
        "training {} parameters on {} subjects ({} validation), weights {}",
        params.param_count(),
        split.train_ids.len(),
        split.val_ids.len(),
        exp.train.weights.label()
    );
    let (params, history) = train_with(params, &data, &split, &exp.train, |e| {
        eprintln!(
            "epoch {:>4}  train {:.4}  val {}",
            e.epoch,
            e.train_loss,
            e.val_loss
                .map(|v| format!("{v:.4}"))
                .unwrap_or("n/a".into())
        );
    })?;
    fs::create_dir_all(&exp.out).map_err(|e| Error::io(&exp.out, e))?;
    save_checkpoint(&exp.out.join("checkpoint.json"), &params, exp.train.seed)?;
    write_file(&exp.out.join("history.csv"), history.to_csv())?;
    write_file(&exp.out.join("weights.json"), exp.train.weights.to_json())?;
    split.save(&exp.out.join("split.json"))?;
    println!("wrote {}", exp.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cohort = load_cohort(&a.manifest)?;
    let data = Dataset::from_cohort(&cohort)?;
    let ids = match &a.split {
        Some(p) => {
            let s = SplitSpec::load(p)?;
            s.check_covers(&cohort)?;
            s.val_ids
        }
        None => cohort.ids().map(str::to_string).collect(),
    };
    let ev = evaluate(&ck.params, &data, &ids)?;
    ev.write_all(&a.out)?;
    print!("{}\n{}", ev.report.to_text(), subgroup_report(&ev.report));
    Ok(())
}

fn cmd_ablate(a: &TrainArgs) -> Result<()> {
    if a.preset.is_some() || a.weights.is_some() {
        return Err(Error::Config(
            "ablate always runs strong, moderate and uniform; drop --preset/--weights".into(),
        ));
    }
    let exp = a.resolve()?;
    let (_, data, split) = exp.load()?;
    let configs = [
        WeightConfig::strong(),
        WeightConfig::moderate(),
        WeightConfig::uniform(),
    ];
    let result = run_ablation(&data, &split, &exp.model, &exp.train, &configs)?;
    result.write_all(&exp.out)?;
    split.save(&exp.out.join("split.json"))?;
    print!("{}", result.to_text());
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut m = a.model.clone();
    // The check is meant for small models; default to the tiny one.
    m.tiny = true;
    let cfg = model_config(&m, &FileConfig::default());
    let rep = gradcheck(&cfg, a.seed, a.step)?;
    println!(
        "checked {} coordinates ({} below the zero floor); max relative error {:.3e} ({}[{}]: analytic {:.6e}, numeric {:.6e})",
        rep.checked, rep.below_floor, rep.max_rel_error, rep.worst_tensor, rep.worst_index, rep.analytic, rep.numeric
    );
    if !rep.passed() {
        return Err(Error::GradCheck(rep.max_rel_error));
    }
    println!("ok (tolerance {GRADCHECK_TOLERANCE:e})");
    Ok(())
}

fn cmd_derive(a: &DeriveArgs) -> Result<()> {
    let cohort = load_cohort(&a.manifest)?;
    let scores: Vec<ScoreVector> = cohort.subjects.iter().map(|r| r.scores_m24).collect();
    let (table, wc) = derive_weights(&scores, a.top_k, a.high, a.low)?;
    println!("{:<9} {:>14} {:>8}  item", "Sub-score", "r ± SD", "weight");
    for (j, label) in ITEM_LABELS.iter().enumerate() {
        let r = if table.constant[j] {
            "n/a".to_string()
        } else {
            format!("{:.2} ± {:.2}", table.r[j], table.sd[j])
        };
        println!(
            "{:<9} {:>14} {:>8}  {}",
            format!("Q{}", j + 1),
            r,
            wc.w[j],
            label
        );
    }
    println!("n = {}", table.n);
    let json = wc.to_json();
    println!("{json}");
    if let Some(p) = &a.out {
        write_file(p, &json)?;
    }
    Ok(())
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A second initialization (e.g. in tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::DeriveWeights(a) => cmd_derive(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}", e.kind(), msg);
            e.exit_code()
        }
    }
}
