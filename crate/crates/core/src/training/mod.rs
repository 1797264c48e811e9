//! SGD training of the two networks: supervised initialization, the iterative
//! and joint DISC stages, and the FS and PW baselines.

mod engine;
mod log;
mod optim;

use std::fmt;
use std::str::FromStr;

pub use log::{LogRecord, TrainingLog, LOG_HEADER};
pub use optim::{clip_global_norm, sgd_step, SgdState};

use engine::{probe, probe_examples, run_stage, Nets, Stage, StageObjective};

use crate::diffnet::Architecture;
use crate::error::{Error, Result};
use crate::lossmap::{BeliefLoss, RenderConfig};
use crate::models::{self, ConditionalNet, NoiseMode, PredictionNet, Role, SupervisedSetup};
use crate::objective::ObjectiveKind;
use crate::synth::DiverseDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub momentum: f64,
    /// Weight decay of the probabilistic networks.
    pub weight_decay: f64,
    pub weight_decay_fs: f64,
    pub weight_decay_pw: f64,
    pub batch_size: usize,
    /// Supervised epochs of the prediction network.
    pub init_epochs: usize,
    /// Supervised fine-tuning epochs of the conditional network.
    pub finetune_epochs: usize,
    /// Epochs of each θ or w stage.
    pub stage_epochs: usize,
    pub joint_epochs: usize,
    pub rounds: usize,
    /// Samples per network and example during training.
    pub k: usize,
    /// Samples used for MEU during validation.
    pub k_eval: usize,
    pub gamma: f64,
    /// Cross-diversity threshold of the PW baseline, in units of Δ.
    pub pw_threshold: f64,
    pub patience: usize,
    pub seed: u64,
    /// Weight of the supervised term on strong examples in the DISC stages.
    pub aux_weight: f64,
    pub augment: bool,
    pub clip_norm: f64,
    pub probe_size: usize,
    pub loss: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.025,
            momentum: 0.9,
            weight_decay: 0.0001,
            weight_decay_fs: 0.0001,
            weight_decay_pw: 0.0001,
            batch_size: 8,
            init_epochs: 50,
            finetune_epochs: 20,
            stage_epochs: 4,
            joint_epochs: 4,
            rounds: 3,
            k: 4,
            k_eval: 16,
            gamma: 0.5,
            pw_threshold: 3.0,
            patience: 5,
            seed: 0,
            aux_weight: 1.0,
            augment: true,
            clip_norm: 10.0,
            probe_size: 64,
            loss: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if [self.weight_decay, self.weight_decay_fs, self.weight_decay_pw]
            .iter()
            .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return bad("weight decay must be non-negative");
        }
        if self.k == 0 || self.k_eval == 0 {
            return bad("K must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.rounds == 0 {
            return bad("at least one round is required");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.pw_threshold.is_nan() || self.pw_threshold < 0.0 {
            return bad("pw_threshold must be non-negative");
        }
        if !(self.clip_norm > 0.0) || !(self.aux_weight >= 0.0) {
            return bad("clip_norm must be positive and aux_weight non-negative");
        }
        self.loss.validate()
    }

    pub fn prob_setup(&self) -> SupervisedSetup {
        SupervisedSetup {
            gamma: self.gamma,
            weight_decay: self.weight_decay,
            noise: NoiseMode::Sampled,
        }
    }

    pub fn fs_setup(&self) -> SupervisedSetup {
        SupervisedSetup {
            gamma: 0.0,
            weight_decay: self.weight_decay_fs,
            noise: NoiseMode::Zero,
        }
    }

    pub fn pw_setup(&self) -> SupervisedSetup {
        SupervisedSetup {
            gamma: 0.0,
            weight_decay: self.weight_decay_pw,
            noise: NoiseMode::Sampled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fs,
    Pw,
    ProbIterative,
    ProbJoint,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fs, Method::Pw, Method::ProbIterative, Method::ProbJoint];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fs => "fs",
            Method::Pw => "pw",
            Method::ProbIterative => "prob_iterative",
            Method::ProbJoint => "prob_joint",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fs" => Ok(Method::Fs),
            "pw" => Ok(Method::Pw),
            "prob_iterative" => Ok(Method::ProbIterative),
            "prob_joint" => Ok(Method::ProbJoint),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected fs, pw, prob_iterative or prob_joint)"
            ))),
        }
    }
}

/// Incremental early-stopping rule: the best epoch has the strictly highest
/// score so far, and training halts once `patience` epochs pass without one.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(EarlyStopper {
            patience,
            best: None,
            since: 0,
        })
    }

    /// Returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        match self.best {
            Some((_, b)) if !(score > b) => {
                self.since += 1;
                (false, self.since >= self.patience)
            }
            _ => {
                self.best = Some((epoch, score));
                self.since = 0;
                (true, false)
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStop {
    pub best_epoch: usize,
    /// Epoch after which training halts, if the rule fires within the log.
    pub stopped_after: Option<usize>,
}

/// Applies the early-stopping rule to a series of validation scores, epoch 0 first.
pub fn early_stop(val: &[f64], patience: usize) -> Result<EarlyStop> {
    if val.is_empty() {
        return Err(Error::Empty("validation log".into()));
    }
    let mut s = EarlyStopper::new(patience)?;
    for (e, &v) in val.iter().enumerate() {
        if s.observe(e, v).1 {
            return Ok(EarlyStop {
                best_epoch: s.best_epoch().expect("observed"),
                stopped_after: Some(e),
            });
        }
    }
    Ok(EarlyStop {
        best_epoch: s.best_epoch().expect("observed"),
        stopped_after: None,
    })
}

pub(crate) fn supervised_prediction_stage(
    net: &mut PredictionNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
    setup: SupervisedSetup,
    tag: &str,
) -> Result<TrainingLog> {
    if dataset.strong.is_empty() {
        return Err(Error::Empty("strong set".into()));
    }
    net.noise = setup.noise;
    let stage = Stage {
        tag: tag.to_string(),
        objective: StageObjective::SupervisedPred { gamma: setup.gamma },
        update_w: true,
        update_theta: false,
        examples: dataset.strong.clone(),
        epochs: cfg.init_epochs,
        weight_decay: setup.weight_decay,
        pw_threshold: None,
        aux: None,
        validate: Role::Prediction,
    };
    run_stage(&stage, &mut Nets { pred: net, cond: None }, dataset, cfg)
}

pub(crate) fn supervised_conditional_stage(
    pred: &PredictionNet,
    cond: &mut ConditionalNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
    setup: SupervisedSetup,
    tag: &str,
) -> Result<TrainingLog> {
    if dataset.strong.is_empty() {
        return Err(Error::Empty("strong set".into()));
    }
    let stage = Stage {
        tag: tag.to_string(),
        objective: StageObjective::SupervisedCond { gamma: setup.gamma },
        update_w: false,
        update_theta: true,
        examples: dataset.strong.clone(),
        epochs: cfg.finetune_epochs,
        weight_decay: setup.weight_decay,
        pw_threshold: None,
        aux: None,
        validate: Role::Conditional,
    };
    let mut frozen = pred.clone();
    run_stage(&stage, &mut Nets { pred: &mut frozen, cond: Some(cond) }, dataset, cfg)
}

/// Which objective family the DISC stages use.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Prob,
    Pointwise,
}

fn disc_stage(family: Family, update_w: bool, tag: String, dataset: &DiverseDataset, cfg: &TrainConfig) -> Stage {
    let (kind, weight_decay, pw_threshold, aux_gamma) = match family {
        Family::Prob => (
            if update_w { ObjectiveKind::W } else { ObjectiveKind::Theta },
            cfg.weight_decay,
            None,
            cfg.gamma,
        ),
        Family::Pointwise => (ObjectiveKind::Cross, cfg.weight_decay_pw, Some(cfg.pw_threshold), 0.0),
    };
    Stage {
        tag,
        objective: StageObjective::Disc(kind),
        update_w,
        update_theta: !update_w,
        examples: dataset.train(),
        epochs: cfg.stage_epochs,
        weight_decay,
        pw_threshold,
        aux: (cfg.aux_weight > 0.0).then_some((cfg.aux_weight, aux_gamma)),
        validate: if update_w { Role::Prediction } else { Role::Conditional },
    }
}

/// Optimizes the conditional network against the fixed prediction network.
pub fn train_theta_stage(
    pred: &PredictionNet,
    cond: &mut ConditionalNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<TrainingLog> {
    let stage = disc_stage(Family::Prob, false, tag.to_string(), dataset, cfg);
    let mut frozen = pred.clone();
    run_stage(&stage, &mut Nets { pred: &mut frozen, cond: Some(cond) }, dataset, cfg)
}

/// Optimizes the prediction network against the fixed conditional network.
pub fn train_w_stage(
    pred: &mut PredictionNet,
    cond: &ConditionalNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<TrainingLog> {
    let stage = disc_stage(Family::Prob, true, tag.to_string(), dataset, cfg);
    let mut frozen = cond.clone();
    run_stage(&stage, &mut Nets { pred, cond: Some(&mut frozen) }, dataset, cfg)
}

/// DISC between the networks averaged over the training probe set.
pub fn probe_disc(pred: &PredictionNet, cond: &ConditionalNet, dataset: &DiverseDataset, cfg: &TrainConfig) -> Result<LogRecord> {
    let loss = BeliefLoss::new(cfg.loss)?;
    let mut p = pred.clone();
    let mut c = cond.clone();
    let nets = Nets {
        pred: &mut p,
        cond: Some(&mut c),
    };
    let set = probe_examples(&dataset.train(), cfg);
    let s = probe(&nets, dataset, &set, StageObjective::Disc(ObjectiveKind::Joint), None, cfg, &loss)?;
    Ok(LogRecord {
        epoch: 0,
        stage: String::new(),
        objective: s.objective,
        val_pckh: None,
        div_ww: Some(s.div_ww),
        div_tt: s.div_tt,
        div_wt: s.div_wt,
    })
}

/// Result of an alternating run: the log, and the probe DISC after each round.
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeOutcome {
    pub log: TrainingLog,
    pub round_disc: Vec<f64>,
}

fn alternate(
    family: Family,
    pred: &mut PredictionNet,
    cond: &mut ConditionalNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
) -> Result<IterativeOutcome> {
    cfg.validate()?;
    let prefix = match family {
        Family::Prob => "",
        Family::Pointwise => "pw_",
    };
    let mut log = TrainingLog::default();
    let mut round_disc = Vec::with_capacity(cfg.rounds);
    for r in 1..=cfg.rounds {
        for update_w in [false, true] {
            let tag = format!("{prefix}{}_r{r}", if update_w { "w" } else { "theta" });
            let stage = disc_stage(family, update_w, tag.clone(), dataset, cfg);
            log.extend(run_stage(&stage, &mut Nets { pred, cond: Some(cond) }, dataset, cfg)?);
            let mut after = probe_disc(pred, cond, dataset, cfg)?;
            after.epoch = r;
            after.stage = format!("disc_after_{tag}");
            if update_w {
                round_disc.push(after.objective);
            }
            log.push(after);
        }
    }
    Ok(IterativeOutcome { log, round_disc })
}

/// `rounds` alternations of a θ stage followed by a w stage.
pub fn train_iterative(
    pred: &mut PredictionNet,
    cond: &mut ConditionalNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
) -> Result<IterativeOutcome> {
    alternate(Family::Prob, pred, cond, dataset, cfg)
}

/// Both networks updated together on the full DISC objective.
pub fn train_joint(
    pred: &mut PredictionNet,
    cond: &mut ConditionalNet,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    let stage = Stage {
        tag: "joint".into(),
        objective: StageObjective::Disc(ObjectiveKind::Joint),
        update_w: true,
        update_theta: true,
        examples: dataset.train(),
        epochs: cfg.joint_epochs,
        weight_decay: cfg.weight_decay,
        pw_threshold: None,
        aux: (cfg.aux_weight > 0.0).then_some((cfg.aux_weight, cfg.gamma)),
        validate: Role::Prediction,
    };
    run_stage(&stage, &mut Nets { pred, cond: Some(cond) }, dataset, cfg)
}

/// Fully supervised pointwise network on the strong set; predicts with zero noise.
pub fn train_fs_baseline(dataset: &DiverseDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<(PredictionNet, TrainingLog)> {
    models::init_prediction(dataset, arch, cfg, cfg.fs_setup(), "fs")
}

/// Stage-1 networks of the probabilistic method.
pub fn init_probabilistic(
    dataset: &DiverseDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(PredictionNet, ConditionalNet, TrainingLog, Vec<String>)> {
    let (pred, mut log) = models::init_prediction(dataset, arch, cfg, cfg.prob_setup(), "init_pred")?;
    let (cond, l2, warnings) = models::init_conditional(&pred, dataset, cfg, cfg.prob_setup(), "init_cond")?;
    log.extend(l2);
    Ok((pred, cond, log, warnings))
}

/// Pointwise diverse-data baseline: cross-diversity only, weak examples
/// skipped when their cross term exceeds the threshold.
pub fn train_pw_baseline(
    dataset: &DiverseDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(PredictionNet, ConditionalNet, IterativeOutcome)> {
    let (mut pred, mut log) = models::init_prediction(dataset, arch, cfg, cfg.pw_setup(), "pw_init_pred")?;
    let (mut cond, l2, _) = models::init_conditional(&pred, dataset, cfg, cfg.pw_setup(), "pw_init_cond")?;
    log.extend(l2);
    let out = alternate(Family::Pointwise, &mut pred, &mut cond, dataset, cfg)?;
    log.extend(out.log);
    Ok((
        pred,
        cond,
        IterativeOutcome {
            log,
            round_disc: out.round_disc,
        },
    ))
}

/// Everything a method run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub method: Method,
    pub pred: PredictionNet,
    pub cond: Option<ConditionalNet>,
    pub log: TrainingLog,
    pub round_disc: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Runs a method end to end in memory.
pub fn train_method(method: Method, dataset: &DiverseDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainedModels> {
    cfg.validate()?;
    match method {
        Method::Fs => {
            let (pred, log) = train_fs_baseline(dataset, arch, cfg)?;
            Ok(TrainedModels {
                method,
                pred,
                cond: None,
                log,
                round_disc: vec![],
                warnings: dataset.warnings.clone(),
            })
        }
        Method::Pw => {
            let (pred, cond, out) = train_pw_baseline(dataset, arch, cfg)?;
            Ok(TrainedModels {
                method,
                pred,
                cond: Some(cond),
                log: out.log,
                round_disc: out.round_disc,
                warnings: dataset.warnings.clone(),
            })
        }
        Method::ProbIterative | Method::ProbJoint => {
            let (mut pred, mut cond, mut log, warnings) = init_probabilistic(dataset, arch, cfg)?;
            let out = train_iterative(&mut pred, &mut cond, dataset, cfg)?;
            log.extend(out.log);
            if method == Method::ProbJoint {
                log.extend(train_joint(&mut pred, &mut cond, dataset, cfg)?);
            }
            Ok(TrainedModels {
                method,
                pred,
                cond: Some(cond),
                log,
                round_disc: out.round_disc,
                warnings,
            })
        }
    }
}
