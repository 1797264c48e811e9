//! Command-line front end: dataset generation, training, evaluation,
//! single-image prediction and uncertainty reports, driven by a `key = value`
//! config file with `[data]`, `[train]` and `[eval]` sections.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::diffnet::{Architecture, NetworkParameters};
use crate::error::Error;
use crate::eval::{
    eval_stream, evaluate, meu_predict, pckh_curve, pckh_curve_csv, per_joint_csv, table_csv, uncertainty_report,
};
use crate::lossmap::BeliefLoss;
use crate::models::{sample_poses, ConditionalNet, Inference, NoiseMode, PoseSampler, PredictionNet, Role};
use crate::objective::PairwiseLoss;
use crate::rng::Stream;
use crate::svg;
use crate::synth::{build_benchmark, read_dataset, write_dataset, DiverseDataset, GenConfig};
use crate::training::{
    init_probabilistic, train_fs_baseline, train_iterative, train_joint, train_pw_baseline, Method, TrainConfig,
    TrainingLog,
};

pub const DATASET_FILE: &str = "dataset.pdd";
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    /// 1 for usage and configuration problems, 3 for non-finite numbers,
    /// 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::Config(_)) => 1,
            CliError::Lib(Error::NonFinite(_)) => 3,
            CliError::Lib(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "posedisc", version, about = "Probabilistic pose estimation from diverse supervision")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file with [data], [train] and [eval] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the data and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Dataset archive written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Samples drawn per image (overrides eval.k_eval).
    #[arg(long)]
    pub k: Option<usize>,
    /// Feed the ground-truth action to a conditional checkpoint.
    #[arg(long)]
    pub with_actions: bool,
    /// Also write SVG figures.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark and its diverse split.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Strong fraction of the training split: 0.25, 0.5, 0.75, "25-75" style, or any value in (0, 1).
        #[arg(long, value_parser = parse_split)]
        split: Option<f64>,
    },
    /// Train one method and write checkpoints plus log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        /// Samples per network during training.
        #[arg(long)]
        k: Option<usize>,
    },
    /// PCKh tables on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// MEU pose for one dataset sample.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Dataset sample index (default: first test sample).
        #[arg(long)]
        index: Option<usize>,
    },
    /// Per-joint spread of the sample distribution over the test split.
    ReportUncertainty {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
}

pub fn parse_split(s: &str) -> std::result::Result<f64, String> {
    let f = match s.split_once('-') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad split '{s}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad split '{s}'"))?;
            a / (a + b)
        }
        None => s.trim().parse().map_err(|_| format!("bad split '{s}'"))?,
    };
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("split must lie strictly between 0 and 1, got '{s}'"))
    }
}

/// Everything a command may read, with defaults for unspecified keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: GenConfig,
    pub strong_fraction: f64,
    pub method: Method,
    pub train: TrainConfig,
    pub tau: f64,
    /// Expected-loss level separating green from blue sample frames, in Δ units.
    pub frame_threshold: f64,
    /// Circle radius per unit of entropy above the deterministic floor, normalized image units.
    pub radius_scale: f64,
    pub min_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: GenConfig::default(),
            strong_fraction: 0.5,
            method: Method::ProbJoint,
            train: TrainConfig::default(),
            tau: 0.5,
            frame_threshold: 2.6e-4,
            radius_scale: 0.004,
            min_radius: 0.01,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{v}' for '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid value '{v}' for '{key}'"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> CliResult<()> {
        let name = format!("{section}.{key}");
        let k = name.as_str();
        let (d, t) = (&mut self.data, &mut self.train);
        match (section, key) {
            ("", "seed") => {
                d.seed = parse_value(k, v)?;
                t.seed = d.seed;
            }
            ("data", "num_actions") => d.num_actions = parse_value(k, v)?,
            ("data", "samples_per_action") => d.samples_per_action = parse_value(k, v)?,
            ("data", "image_height") => d.image_height = parse_value(k, v)?,
            ("data", "image_width") => d.image_width = parse_value(k, v)?,
            ("data", "jitter") => d.jitter = parse_value(k, v)?,
            ("data", "back_view") => d.back_view = parse_value(k, v)?,
            ("data", "seed") => d.seed = parse_value(k, v)?,
            ("data", "strong_fraction") => self.strong_fraction = parse_split(v).map_err(CliError::Usage)?,
            ("train", "method") => self.method = parse_value(k, v)?,
            ("train", "eta") => t.eta = parse_value(k, v)?,
            ("train", "momentum") => t.momentum = parse_value(k, v)?,
            ("train", "weight_decay") => t.weight_decay = parse_value(k, v)?,
            ("train", "weight_decay_fs") => t.weight_decay_fs = parse_value(k, v)?,
            ("train", "weight_decay_pw") => t.weight_decay_pw = parse_value(k, v)?,
            ("train", "batch_size") => t.batch_size = parse_value(k, v)?,
            ("train", "init_epochs") => t.init_epochs = parse_value(k, v)?,
            ("train", "finetune_epochs") => t.finetune_epochs = parse_value(k, v)?,
            ("train", "stage_epochs") => t.stage_epochs = parse_value(k, v)?,
            ("train", "joint_epochs") => t.joint_epochs = parse_value(k, v)?,
            ("train", "rounds") => t.rounds = parse_value(k, v)?,
            ("train", "k") => t.k = parse_value(k, v)?,
            ("train", "gamma") => t.gamma = parse_value(k, v)?,
            ("train", "pw_threshold") => t.pw_threshold = parse_value(k, v)?,
            ("train", "patience") => t.patience = parse_value(k, v)?,
            ("train", "seed") => t.seed = parse_value(k, v)?,
            ("train", "aux_weight") => t.aux_weight = parse_value(k, v)?,
            ("train", "augment") => t.augment = parse_bool(k, v)?,
            ("train", "clip_norm") => t.clip_norm = parse_value(k, v)?,
            ("train", "probe_size") => t.probe_size = parse_value(k, v)?,
            ("train", "grid_height") => t.loss.grid_h = parse_value(k, v)?,
            ("train", "grid_width") => t.loss.grid_w = parse_value(k, v)?,
            ("train", "sigma") => t.loss.sigma = parse_value(k, v)?,
            ("eval", "k_eval") => t.k_eval = parse_value(k, v)?,
            ("eval", "tau") => self.tau = parse_value(k, v)?,
            ("eval", "frame_threshold") => self.frame_threshold = parse_value(k, v)?,
            ("eval", "radius_scale") => self.radius_scale = parse_value(k, v)?,
            ("eval", "min_radius") => self.min_radius = parse_value(k, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key '{}'", k.trim_start_matches('.')))),
        }
        Ok(())
    }

    /// Applies a config file's contents on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected 'key = value'", n + 1)))?;
            self.set(&section, k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then flag overrides.
    pub fn load(common: &Common) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        if let Some(s) = common.seed {
            cfg.data.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(CliError::Usage(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.radius_scale >= 0.0 && self.min_radius >= 0.0 && self.frame_threshold.is_finite()) {
            return Err(CliError::Usage("invalid figure settings".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let (d, t) = (&self.data, &self.train);
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "num_actions = {}", d.num_actions);
        let _ = writeln!(s, "samples_per_action = {}", d.samples_per_action);
        let _ = writeln!(s, "image_height = {}", d.image_height);
        let _ = writeln!(s, "image_width = {}", d.image_width);
        let _ = writeln!(s, "jitter = {:?}", d.jitter);
        let _ = writeln!(s, "back_view = {:?}", d.back_view);
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "strong_fraction = {:?}", self.strong_fraction);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "eta = {:?}", t.eta);
        let _ = writeln!(s, "momentum = {:?}", t.momentum);
        let _ = writeln!(s, "weight_decay = {:?}", t.weight_decay);
        let _ = writeln!(s, "weight_decay_fs = {:?}", t.weight_decay_fs);
        let _ = writeln!(s, "weight_decay_pw = {:?}", t.weight_decay_pw);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "init_epochs = {}", t.init_epochs);
        let _ = writeln!(s, "finetune_epochs = {}", t.finetune_epochs);
        let _ = writeln!(s, "stage_epochs = {}", t.stage_epochs);
        let _ = writeln!(s, "joint_epochs = {}", t.joint_epochs);
        let _ = writeln!(s, "rounds = {}", t.rounds);
        let _ = writeln!(s, "k = {}", t.k);
        let _ = writeln!(s, "gamma = {:?}", t.gamma);
        let _ = writeln!(s, "pw_threshold = {:?}", t.pw_threshold);
        let _ = writeln!(s, "patience = {}", t.patience);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "aux_weight = {:?}", t.aux_weight);
        let _ = writeln!(s, "augment = {}", t.augment);
        let _ = writeln!(s, "clip_norm = {:?}", t.clip_norm);
        let _ = writeln!(s, "probe_size = {}", t.probe_size);
        let _ = writeln!(s, "grid_height = {}", t.loss.grid_h);
        let _ = writeln!(s, "grid_width = {}", t.loss.grid_w);
        let _ = writeln!(s, "sigma = {:?}", t.loss.sigma);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "k_eval = {}", t.k_eval);
        let _ = writeln!(s, "tau = {:?}", self.tau);
        let _ = writeln!(s, "frame_threshold = {:?}", self.frame_threshold);
        let _ = writeln!(s, "radius_scale = {:?}", self.radius_scale);
        let _ = writeln!(s, "min_radius = {:?}", self.min_radius);
        s
    }
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_ECHO), &cfg.to_text())
}

/// A checkpoint loaded as whichever network it holds.
#[derive(Debug, Clone)]
pub enum LoadedNet {
    Prediction(PredictionNet),
    Conditional(ConditionalNet),
}

impl LoadedNet {
    pub fn load(path: &Path) -> CliResult<Self> {
        let ck = Checkpoint::load(path)?;
        Ok(match ck.role {
            Role::Prediction => LoadedNet::Prediction(ck.into_prediction()?),
            Role::Conditional => LoadedNet::Conditional(ck.into_conditional()?),
        })
    }

    pub fn inference(&self, k: usize) -> Inference {
        match self {
            LoadedNet::Prediction(p) => p.inference(k),
            LoadedNet::Conditional(_) => Inference::Meu { k },
        }
    }

    /// Checks the network against the dataset and the requested action use.
    fn check(&self, d: &DiverseDataset, with_actions: bool) -> CliResult<()> {
        match (self, with_actions) {
            (LoadedNet::Conditional(_), false) => {
                return Err(Error::Precondition(
                    "role mismatch: a conditional checkpoint is evaluated only with --with-actions".into(),
                )
                .into())
            }
            (LoadedNet::Prediction(_), true) => {
                return Err(Error::Precondition("role mismatch: a prediction checkpoint takes no actions".into()).into())
            }
            (LoadedNet::Conditional(c), true) if c.num_actions() != d.num_actions => {
                return Err(Error::Shape(format!(
                    "checkpoint has {} action heads, dataset has {} actions",
                    c.num_actions(),
                    d.num_actions
                ))
                .into())
            }
            _ => {}
        }
        let p = self.params();
        if p.input_dim() != d.image_height * d.image_width || p.num_joints() != d.num_joints() {
            return Err(Error::Shape("checkpoint does not match the dataset's image size or joints".into()).into());
        }
        Ok(())
    }
}

impl PoseSampler for LoadedNet {
    fn params(&self) -> &NetworkParameters {
        match self {
            LoadedNet::Prediction(p) => &p.params,
            LoadedNet::Conditional(c) => &c.params,
        }
    }

    fn role(&self) -> Role {
        match self {
            LoadedNet::Prediction(_) => Role::Prediction,
            LoadedNet::Conditional(_) => Role::Conditional,
        }
    }

    fn noise_mode(&self) -> NoiseMode {
        match self {
            LoadedNet::Prediction(p) => p.noise,
            LoadedNet::Conditional(_) => NoiseMode::Sampled,
        }
    }
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let d = build_benchmark(&cfg.data, cfg.strong_fraction)?;
    prepare_out(cfg, out)?;
    write_dataset(&out.join(DATASET_FILE), &d)?;
    for w in &d.warnings {
        log::warn!("{w}");
    }
    let mut s = String::new();
    let _ = writeln!(s, "samples = {}", d.samples.len());
    let _ = writeln!(s, "actions = {}", d.num_actions);
    let _ = writeln!(s, "train = {}", d.splits.train.len());
    let _ = writeln!(s, "val = {}", d.splits.val.len());
    let _ = writeln!(s, "test = {}", d.splits.test.len());
    let _ = writeln!(s, "strong = {}", d.strong.len());
    let _ = writeln!(s, "weak = {}", d.weak.len());
    Ok(s)
}

fn save_pred(net: &PredictionNet, d: &DiverseDataset, cfg: &RunConfig, path: &Path) -> CliResult<()> {
    Ok(Checkpoint::from_prediction(net, d.num_actions, cfg.train.seed).save(path)?)
}

fn save_cond(net: &ConditionalNet, cfg: &RunConfig, path: &Path) -> CliResult<()> {
    Ok(Checkpoint::from_conditional(net, cfg.train.seed).save(path)?)
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<TrainingLog> {
    cfg.validate()?;
    let d = read_dataset(data)?;
    prepare_out(cfg, out)?;
    let arch = Architecture::toy(d.image_height, d.image_width, d.num_joints());
    let t = &cfg.train;
    let log = match cfg.method {
        Method::Fs => {
            let (pred, log) = train_fs_baseline(&d, &arch, t)?;
            save_pred(&pred, &d, cfg, &out.join("prediction.ckpt"))?;
            log
        }
        Method::Pw => {
            let (pred, cond, outcome) = train_pw_baseline(&d, &arch, t)?;
            save_pred(&pred, &d, cfg, &out.join("prediction.ckpt"))?;
            save_cond(&cond, cfg, &out.join("conditional.ckpt"))?;
            outcome.log
        }
        Method::ProbIterative | Method::ProbJoint => {
            let (mut pred, mut cond, mut log, warnings) = init_probabilistic(&d, &arch, t)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            log.extend(train_iterative(&mut pred, &mut cond, &d, t)?.log);
            if cfg.method == Method::ProbIterative {
                save_pred(&pred, &d, cfg, &out.join("prediction.ckpt"))?;
                save_cond(&cond, cfg, &out.join("conditional.ckpt"))?;
            } else {
                let (pi, ci) = (out.join("prediction_iterative.ckpt"), out.join("conditional_iterative.ckpt"));
                save_pred(&pred, &d, cfg, &pi)?;
                save_cond(&cond, cfg, &ci)?;
                let mut pred = Checkpoint::load(&pi)?.into_prediction()?;
                let mut cond = Checkpoint::load(&ci)?.into_conditional()?;
                log.extend(train_joint(&mut pred, &mut cond, &d, t)?);
                save_pred(&pred, &d, cfg, &out.join("prediction.ckpt"))?;
                save_cond(&cond, cfg, &out.join("conditional.ckpt"))?;
            }
            log
        }
    };
    log.write(&out.join("log.csv"))?;
    Ok(log)
}

fn checkpoint_label(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_evaluate(cfg: &RunConfig, model: &ModelArgs, out: &Path) -> CliResult<String> {
    cfg.validate()?;
    let d = read_dataset(&model.data)?;
    let net = LoadedNet::load(&model.checkpoint)?;
    net.check(&d, model.with_actions)?;
    let loss = BeliefLoss::new(cfg.train.loss)?;
    let k = model.k.unwrap_or(cfg.train.k_eval);
    let ev = evaluate(
        &net,
        &d,
        &d.splits.test,
        model.with_actions,
        net.inference(k),
        cfg.tau,
        cfg.train.seed,
        &loss,
    )?;
    prepare_out(cfg, out)?;
    let table = table_csv(&[(checkpoint_label(&model.checkpoint), ev.pckh.clone())])?;
    write(&out.join("table.csv"), &table)?;
    write(&out.join("per_joint.csv"), &per_joint_csv(&ev.pckh, &d.skeleton.joint_names))?;
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    write(&out.join("pckh_curve.csv"), &pckh_curve_csv(&pckh_curve(&ev.distances, &thresholds)))?;
    if model.svg {
        let bars: Vec<(String, f64)> = d
            .skeleton
            .joint_names
            .iter()
            .cloned()
            .zip(ev.pckh.per_joint_accuracy.iter().copied())
            .collect();
        let title = format!("PCKh@{} per joint", cfg.tau);
        write(&out.join("per_joint.svg"), &svg::bar_chart(&title, &bars))?;
    }
    Ok(table)
}

pub fn cmd_predict(cfg: &RunConfig, model: &ModelArgs, index: Option<usize>, out: &Path) -> CliResult<String> {
    cfg.validate()?;
    let d = read_dataset(&model.data)?;
    let net = LoadedNet::load(&model.checkpoint)?;
    net.check(&d, model.with_actions)?;
    let i = match index {
        Some(i) if i < d.samples.len() => i,
        Some(i) => return Err(CliError::Usage(format!("sample index {i} out of range"))),
        None => *d.splits.test.first().ok_or_else(|| Error::Empty("test split".into()))?,
    };
    let s = &d.samples[i];
    let action = model.with_actions.then_some(s.action);
    let k = match net.inference(model.k.unwrap_or(cfg.train.k_eval)) {
        Inference::Meu { k } => k,
        Inference::ZeroNoise => 1,
    };
    let loss = BeliefLoss::new(cfg.train.loss)?;
    let set = sample_poses(&net, &s.image, action, k, eval_stream(cfg.train.seed, i))?;
    let (pose, sel) = meu_predict(&set, &loss)?;
    let expected_loss = if k > 1 {
        set.poses
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != sel)
            .map(|(_, p)| loss.loss(&pose, p))
            .sum::<f64>()
            / (k - 1) as f64
    } else {
        0.0
    };
    prepare_out(cfg, out)?;
    let mut csv = String::from("joint,x,y\n");
    for (name, j) in d.skeleton.joint_names.iter().zip(&pose.joints) {
        let _ = writeln!(csv, "{name},{:.10e},{:.10e}", j[0], j[1]);
    }
    write(&out.join("prediction.csv"), &csv)?;
    if model.svg {
        let doc = svg::samples_figure(&d.skeleton, &set.poses, &pose, expected_loss, cfg.frame_threshold);
        write(&out.join("samples.svg"), &doc)?;
    }
    let _ = writeln!(csv, "# sample {i}, expected loss {expected_loss:.6e}");
    Ok(csv)
}

pub fn cmd_report_uncertainty(cfg: &RunConfig, model: &ModelArgs, out: &Path) -> CliResult<String> {
    cfg.validate()?;
    let d = read_dataset(&model.data)?;
    let net = LoadedNet::load(&model.checkpoint)?;
    net.check(&d, model.with_actions)?;
    let k = model.k.unwrap_or(cfg.train.k_eval);
    let images: Vec<_> = d
        .splits
        .test
        .iter()
        .map(|&i| (&d.samples[i].image, model.with_actions.then_some(d.samples[i].action)))
        .collect();
    let report = uncertainty_report(&net, &images, k, Stream::named(cfg.train.seed, "uncertainty"))?;
    prepare_out(cfg, out)?;
    let csv = report.to_csv(&d.skeleton.joint_names);
    write(&out.join("uncertainty.csv"), &csv)?;
    if model.svg {
        let first = *d.splits.test.first().ok_or_else(|| Error::Empty("test split".into()))?;
        let loss = BeliefLoss::new(cfg.train.loss)?;
        let s = &d.samples[first];
        let pose = crate::eval::predict(
            &net,
            &s.image,
            model.with_actions.then_some(s.action),
            net.inference(k),
            eval_stream(cfg.train.seed, first),
            &loss,
        )?;
        let radii = svg::circle_radii(&report.entropy, cfg.radius_scale, cfg.min_radius);
        write(&out.join("uncertainty.svg"), &svg::uncertainty_figure(&d.skeleton, &pose, &radii))?;
    }
    Ok(csv)
}

/// Runs one parsed command and returns the text to print.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::GenData { common, split } => {
            let mut cfg = RunConfig::load(&common)?;
            if let Some(f) = split {
                cfg.strong_fraction = f;
            }
            cmd_gen_data(&cfg, &common.out)
        }
        Command::Train { common, data, method, k } => {
            let mut cfg = RunConfig::load(&common)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(k) = k {
                cfg.train.k = k;
            }
            let log = cmd_train(&cfg, &data, &common.out)?;
            Ok(format!("{} log rows written to {}\n", log.records.len(), common.out.display()))
        }
        Command::Evaluate { common, model, tau } => {
            let mut cfg = RunConfig::load(&common)?;
            if let Some(t) = tau {
                cfg.tau = t;
            }
            cmd_evaluate(&cfg, &model, &common.out)
        }
        Command::Predict { common, model, index } => {
            let cfg = RunConfig::load(&common)?;
            cmd_predict(&cfg, &model, index, &common.out)
        }
        Command::ReportUncertainty { common, model } => {
            let cfg = RunConfig::load(&common)?;
            cmd_report_uncertainty(&cfg, &model, &common.out)
        }
    }
}
