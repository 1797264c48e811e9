//! Epoch loop shared by every stage: shuffled mini-batches, per-example
//! gradients reduced in example order, clipped SGD, probe statistics, and
//! early stopping on validation PCKh.

use rand::seq::SliceRandom;

use super::log::{LogRecord, TrainingLog};
use super::optim::{scaled_update, SgdState};
use super::{EarlyStopper, TrainConfig};
use crate::diffnet::accumulate_backward;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::lossmap::{BeliefLoss, Pose};
use crate::models::{draw_samples, ConditionalNet, Inference, NetView, NoiseMode, PredictionNet, Role};
use crate::objective::{objective_with_grads, supervised_with_grads, Diversities, ObjectiveKind};
use crate::rng::Stream;
use crate::synth::{augment, DiverseDataset, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum StageObjective {
    /// Supervised loss of the prediction network's samples.
    SupervisedPred { gamma: f64 },
    /// Supervised loss of the conditional network's samples (head = action).
    SupervisedCond { gamma: f64 },
    /// Diversity objective between the two networks.
    Disc(ObjectiveKind),
}

#[derive(Debug, Clone)]
pub(crate) struct Stage {
    pub tag: String,
    pub objective: StageObjective,
    pub update_w: bool,
    pub update_theta: bool,
    pub examples: Vec<usize>,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Weak examples whose cross term exceeds this are skipped.
    pub pw_threshold: Option<f64>,
    /// (weight, gamma) of the supervised term added on strong examples.
    pub aux: Option<(f64, f64)>,
    pub validate: Role,
}

pub(crate) struct Nets<'a> {
    pub pred: &'a mut PredictionNet,
    pub cond: Option<&'a mut ConditionalNet>,
}

impl Nets<'_> {
    fn pred_view(&self) -> NetView<'_> {
        NetView {
            params: &self.pred.params,
            role: Role::Prediction,
            noise: self.pred.noise,
        }
    }

    fn cond_view(&self) -> Result<NetView<'_>> {
        let c = self
            .cond
            .as_deref()
            .ok_or_else(|| Error::Precondition("stage needs the conditional network".into()))?;
        Ok(NetView {
            params: &c.params,
            role: Role::Conditional,
            noise: NoiseMode::Sampled,
        })
    }
}

fn k_for(view: &NetView<'_>, k: usize) -> usize {
    match view.noise {
        NoiseMode::Sampled => k,
        NoiseMode::Zero => 1,
    }
}

/// Deterministic subset of `examples` used for the logged objective.
pub(crate) fn probe_examples(examples: &[usize], cfg: &TrainConfig) -> Vec<usize> {
    let mut v = examples.to_vec();
    v.sort_unstable();
    v.shuffle(&mut Stream::named(cfg.seed, "probe").rng());
    v.truncate(cfg.probe_size.max(1));
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ProbeStats {
    pub objective: f64,
    pub div_ww: f64,
    pub div_tt: Option<f64>,
    pub div_wt: Option<f64>,
}

/// Supervised term added on strong examples, and the sides it applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AuxTerm {
    pub weight: f64,
    pub gamma: f64,
    pub w: bool,
    pub theta: bool,
}

impl AuxTerm {
    fn of(stage: &Stage) -> Option<Self> {
        stage.aux.map(|(weight, gamma)| AuxTerm {
            weight,
            gamma,
            w: stage.update_w,
            theta: stage.update_theta,
        })
    }
}

/// Objective and diversity terms averaged over the probe examples, with
/// fixed noise per example and unaugmented images. With `aux`, the
/// objective includes the supervised term on strong probe examples.
pub(crate) fn probe(
    nets: &Nets<'_>,
    dataset: &DiverseDataset,
    examples: &[usize],
    objective: StageObjective,
    aux: Option<AuxTerm>,
    cfg: &TrainConfig,
    loss: &BeliefLoss,
) -> Result<ProbeStats> {
    if examples.is_empty() {
        return Err(Error::Empty("probe set".into()));
    }
    let pv = nets.pred_view();
    let cv = nets.cond_view().ok();
    let (mut obj, mut ww, mut tt, mut wt) = (0.0, 0.0, 0.0, 0.0);
    for &i in examples {
        let s = &dataset.samples[i];
        let mut rng = Stream::named(cfg.seed, "probe").sub("noise").child(i as u64).rng();
        let (wp, _) = draw_samples(&pv, &s.image, None, k_for(&pv, cfg.k), &mut rng)?;
        let tp = match &cv {
            Some(c) => Some(draw_samples(c, &s.image, Some(s.action), cfg.k, &mut rng)?.0),
            None => None,
        };
        let div = Diversities::compute(&wp, tp.as_deref().unwrap_or(&wp), loss)?;
        ww += div.self_w;
        tt += div.self_theta;
        wt += div.cross;
        obj += match objective {
            StageObjective::SupervisedPred { gamma } => supervised_value(&wp, dataset.pose(i)?, gamma, loss)?,
            StageObjective::SupervisedCond { gamma } => {
                let tp = tp.as_deref().ok_or_else(|| Error::Precondition("no conditional network".into()))?;
                supervised_value(tp, dataset.pose(i)?, gamma, loss)?
            }
            StageObjective::Disc(kind) => {
                if tp.is_none() {
                    return Err(Error::Precondition("no conditional network".into()));
                }
                div.value(kind, cfg.gamma)
            }
        };
        if let (Some(a), Some(gt)) = (aux, s.pose.as_ref()) {
            if a.w {
                obj += a.weight * supervised_value(&wp, gt, a.gamma, loss)?;
            }
            if let (true, Some(tp)) = (a.theta, tp.as_deref()) {
                obj += a.weight * supervised_value(tp, gt, a.gamma, loss)?;
            }
        }
    }
    let n = examples.len() as f64;
    let both = cv.is_some();
    Ok(ProbeStats {
        objective: obj / n,
        div_ww: ww / n,
        div_tt: both.then_some(tt / n),
        div_wt: both.then_some(wt / n),
    })
}

fn supervised_value(samples: &[Pose], gt: &Pose, gamma: f64, loss: &BeliefLoss) -> Result<f64> {
    Ok(Diversities::compute(samples, std::slice::from_ref(gt), loss)?.value(ObjectiveKind::W, gamma))
}

/// Validation PCKh@0.5 of the network the stage is judged by.
pub(crate) fn validation_pckh(nets: &Nets<'_>, dataset: &DiverseDataset, role: Role, cfg: &TrainConfig, loss: &BeliefLoss) -> Result<f64> {
    let val = &dataset.splits.val;
    match role {
        Role::Prediction => {
            let inference = nets.pred.inference(cfg.k_eval);
            Ok(evaluate(&nets.pred_view(), dataset, val, false, inference, 0.5, cfg.seed, loss)?.pckh.total)
        }
        Role::Conditional => {
            let inference = Inference::Meu { k: cfg.k_eval };
            Ok(evaluate(&nets.cond_view()?, dataset, val, true, inference, 0.5, cfg.seed, loss)?.pckh.total)
        }
    }
}

fn add_scaled(dst: &mut [Vec<f64>], src: &[Vec<f64>], s: f64) {
    for (d, g) in dst.iter_mut().zip(src) {
        for (a, b) in d.iter_mut().zip(g) {
            *a += s * b;
        }
    }
}

fn example_image(
    dataset: &DiverseDataset,
    i: usize,
    cfg: &TrainConfig,
    tag: &str,
    epoch: usize,
) -> (Image, Option<Pose>) {
    let s = &dataset.samples[i];
    if cfg.augment {
        let mut rng = Stream::named(cfg.seed, "augmentation")
            .sub(tag)
            .child(epoch as u64)
            .child(i as u64)
            .rng();
        augment(&dataset.skeleton, &s.image, s.pose.as_ref(), &mut rng)
    } else {
        (s.image.clone(), s.pose.clone())
    }
}

/// Adds one example's parameter gradients to the batch buffers. Returns
/// `false` when the example is skipped by the threshold rule.
#[allow(clippy::too_many_arguments)]
fn accumulate_example(
    stage: &Stage,
    nets: &Nets<'_>,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
    loss: &BeliefLoss,
    i: usize,
    epoch: usize,
    gw: &mut [f64],
    gt: &mut [f64],
) -> Result<bool> {
    let (image, gt_pose) = example_image(dataset, i, cfg, &stage.tag, epoch);
    let action = dataset.samples[i].action;
    let mut rng = Stream::named(cfg.seed, "noise")
        .sub(&stage.tag)
        .child(epoch as u64)
        .child(i as u64)
        .rng();
    let need_gt = || {
        gt_pose
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("sample {i} has no pose for a supervised stage")))
    };
    match stage.objective {
        StageObjective::SupervisedPred { gamma } => {
            let pv = nets.pred_view();
            let (poses, caches) = draw_samples(&pv, &image, None, k_for(&pv, cfg.k), &mut rng)?;
            let (_, g) = supervised_with_grads(&poses, need_gt()?, gamma, loss)?;
            accumulate_backward(pv.params, &caches, &g, gw)?;
        }
        StageObjective::SupervisedCond { gamma } => {
            let cv = nets.cond_view()?;
            let (poses, caches) = draw_samples(&cv, &image, Some(action), cfg.k, &mut rng)?;
            let (_, g) = supervised_with_grads(&poses, need_gt()?, gamma, loss)?;
            accumulate_backward(cv.params, &caches, &g, gt)?;
        }
        StageObjective::Disc(kind) => {
            let pv = nets.pred_view();
            let cv = nets.cond_view()?;
            let (wp, wc) = draw_samples(&pv, &image, None, k_for(&pv, cfg.k), &mut rng)?;
            let (tp, tc) = draw_samples(&cv, &image, Some(action), cfg.k, &mut rng)?;
            let (_, div, grads) = objective_with_grads(&wp, &tp, cfg.gamma, kind, loss)?;
            let strong = gt_pose.is_some();
            if let Some(t) = stage.pw_threshold {
                if !strong && !(div.cross <= t) {
                    return Ok(false);
                }
            }
            if stage.update_w {
                let mut g = grads
                    .w
                    .ok_or_else(|| Error::Precondition(format!("{kind} does not differentiate w")))?;
                if let (Some((weight, gamma)), Some(p)) = (stage.aux, gt_pose.as_ref()) {
                    add_scaled(&mut g, &supervised_with_grads(&wp, p, gamma, loss)?.1, weight);
                }
                accumulate_backward(pv.params, &wc, &g, gw)?;
            }
            if stage.update_theta {
                let mut g = grads
                    .theta
                    .ok_or_else(|| Error::Precondition(format!("{kind} does not differentiate theta")))?;
                if let (Some((weight, gamma)), Some(p)) = (stage.aux, gt_pose.as_ref()) {
                    add_scaled(&mut g, &supervised_with_grads(&tp, p, gamma, loss)?.1, weight);
                }
                accumulate_backward(cv.params, &tc, &g, gt)?;
            }
        }
    }
    Ok(true)
}

/// Batch mean of the accumulated gradient, clipped to `clip_norm`, applied
/// as one SGD step.
fn apply(
    params: &mut [f64],
    grad: &[f64],
    count: usize,
    state: &mut SgdState,
    stage: &Stage,
    cfg: &TrainConfig,
) -> Result<()> {
    let mean_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / count as f64;
    if !mean_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient in stage {}", stage.tag)));
    }
    let clip = if mean_norm > cfg.clip_norm { cfg.clip_norm / mean_norm } else { 1.0 };
    scaled_update(params, grad, clip / count as f64, state, cfg.eta, cfg.momentum, stage.weight_decay);
    Ok(())
}

fn record(
    nets: &Nets<'_>,
    dataset: &DiverseDataset,
    stage: &Stage,
    probe_set: &[usize],
    cfg: &TrainConfig,
    loss: &BeliefLoss,
    epoch: usize,
) -> Result<LogRecord> {
    let p = probe(nets, dataset, probe_set, stage.objective, AuxTerm::of(stage), cfg, loss)?;
    if !p.objective.is_finite() {
        return Err(Error::NonFinite(format!("objective in stage {} epoch {epoch}", stage.tag)));
    }
    let v = validation_pckh(nets, dataset, stage.validate, cfg, loss)?;
    Ok(LogRecord {
        epoch,
        stage: stage.tag.clone(),
        objective: p.objective,
        val_pckh: Some(v),
        div_ww: Some(p.div_ww),
        div_tt: p.div_tt,
        div_wt: p.div_wt,
    })
}

pub(crate) struct EpochState {
    pub sw: SgdState,
    pub st: SgdState,
    pub gw: Vec<f64>,
    pub gt: Vec<f64>,
}

/// One shuffled pass over the stage's examples, one SGD step per batch.
pub(crate) fn run_epoch(
    stage: &Stage,
    nets: &mut Nets<'_>,
    dataset: &DiverseDataset,
    cfg: &TrainConfig,
    loss: &BeliefLoss,
    epoch: usize,
    state: &mut EpochState,
) -> Result<()> {
    let mut order = stage.examples.clone();
    order.shuffle(&mut Stream::named(cfg.seed, "shuffle").sub(&stage.tag).child(epoch as u64).rng());
    for batch in order.chunks(cfg.batch_size) {
        state.gw.fill(0.0);
        state.gt.fill(0.0);
        let mut count = 0;
        for &i in batch {
            if accumulate_example(stage, nets, dataset, cfg, loss, i, epoch, &mut state.gw, &mut state.gt)? {
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        if stage.update_w {
            apply(&mut nets.pred.params.values, &state.gw, count, &mut state.sw, stage, cfg)?;
        }
        if stage.update_theta {
            let c = nets.cond.as_deref_mut().expect("checked by run_stage");
            apply(&mut c.params.values, &state.gt, count, &mut state.st, stage, cfg)?;
        }
    }
    Ok(())
}

/// Runs one stage and leaves the networks at the epoch with the best
/// validation PCKh (epoch 0 being the starting state).
pub(crate) fn run_stage(stage: &Stage, nets: &mut Nets<'_>, dataset: &DiverseDataset, cfg: &TrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    if stage.update_theta && nets.cond.is_none() {
        return Err(Error::Precondition("stage updates a missing conditional network".into()));
    }
    let loss = BeliefLoss::new(cfg.loss)?;
    let probe_set = probe_examples(&stage.examples, cfg);
    let mut log = TrainingLog::default();
    if stage.examples.is_empty() {
        return Ok(log);
    }
    let first = record(nets, dataset, stage, &probe_set, cfg, &loss, 0)?;
    let mut stopper = EarlyStopper::new(cfg.patience)?;
    stopper.observe(0, first.val_pckh.unwrap_or(0.0));
    log.push(first);
    let snapshot = |n: &Nets<'_>| (n.pred.params.values.clone(), n.cond.as_ref().map(|c| c.params.values.clone()));
    let mut best = snapshot(nets);
    let wlen = nets.pred.params.values.len();
    let tlen = nets.cond.as_ref().map_or(0, |c| c.params.values.len());
    let mut state = EpochState {
        sw: SgdState::new(wlen),
        st: SgdState::new(tlen),
        gw: vec![0.0; if stage.update_w { wlen } else { 0 }],
        gt: vec![0.0; if stage.update_theta { tlen } else { 0 }],
    };
    for epoch in 1..=stage.epochs {
        run_epoch(stage, nets, dataset, cfg, &loss, epoch, &mut state)?;
        let r = record(nets, dataset, stage, &probe_set, cfg, &loss, epoch)?;
        let (improved, stop) = stopper.observe(epoch, r.val_pckh.unwrap_or(0.0));
        log.push(r);
        if improved {
            best = snapshot(nets);
        }
        if stop {
            break;
        }
    }
    nets.pred.params.values = best.0;
    if let (Some(c), Some(v)) = (nets.cond.as_deref_mut(), best.1) {
        c.params.values = v;
    }
    Ok(log)
}
