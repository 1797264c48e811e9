//! Sample-based diversity and dissimilarity estimates and the training
//! objectives built from them.
//!
//! With prediction samples `w_1..w_K` and conditional samples `t_1..t_K'`:
//!
//! ```text
//! div(P, Q)      = 1/(|P||Q|) sum_{k,k'} loss(P_k, Q_k')
//! disc(w, t)     = div(w, t) - gamma div(w, w) - (1 - gamma) div(t, t)
//! theta objective = div(w, t) - (1 - gamma) div(t, t)     (w fixed)
//! w objective     = div(w, t) - gamma div(w, w)           (t fixed)
//! joint objective = disc(w, t)
//! ```
//!
//! Every pair is evaluated (no subsampling). Self-diversities include the zero
//! diagonal, matching the `1/K^2` normalization.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lossmap::Pose;

/// A symmetric loss between poses that may precompute per-pose data.
pub trait PairwiseLoss {
    type Prepared;

    fn prepare(&self, pose: &Pose) -> Self::Prepared;

    fn pair(&self, a: &Self::Prepared, b: &Self::Prepared) -> f64;

    fn loss(&self, a: &Pose, b: &Pose) -> f64 {
        self.pair(&self.prepare(a), &self.prepare(b))
    }
}

/// A pairwise loss that is differentiable in its first argument.
pub trait PairwiseLossGrad: PairwiseLoss {
    /// Adds `scale * d loss(a, b) / da` to `out`.
    fn add_grad_first(&self, a: &Self::Prepared, b: &Self::Prepared, scale: f64, out: &mut [f64]);
}

/// Adapts a plain closure into a [`PairwiseLoss`].
pub struct FnLoss<F>(pub F);

impl<F> PairwiseLoss for FnLoss<F>
where
    F: Fn(&Pose, &Pose) -> f64,
{
    type Prepared = Pose;

    fn prepare(&self, pose: &Pose) -> Pose {
        pose.clone()
    }

    fn pair(&self, a: &Pose, b: &Pose) -> f64 {
        (self.0)(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Prediction,
    Conditional,
    GroundTruth,
}

/// `K` poses drawn for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub poses: Vec<Pose>,
    pub source: SampleSource,
}

impl SampleSet {
    pub fn new(poses: Vec<Pose>, source: SampleSource) -> Result<Self> {
        check_nonempty(&poses)?;
        let j = poses[0].num_joints();
        if poses.iter().any(|p| p.num_joints() != j) {
            return Err(Error::Shape("samples disagree on joint count".into()));
        }
        Ok(SampleSet { poses, source })
    }

    pub fn point_mass(pose: Pose) -> Self {
        SampleSet {
            poses: vec![pose],
            source: SampleSource::GroundTruth,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

fn check_nonempty(poses: &[Pose]) -> Result<()> {
    if poses.is_empty() {
        Err(Error::Empty("sample set".into()))
    } else {
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")))
    }
}

fn prepare_all<L: PairwiseLoss>(loss: &L, poses: &[Pose]) -> Vec<L::Prepared> {
    poses.iter().map(|p| loss.prepare(p)).collect()
}

/// Row-major sum over all pairs divided by the pair count.
fn mean_pair<L: PairwiseLoss>(loss: &L, a: &[L::Prepared], b: &[L::Prepared]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += loss.pair(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// `out[k] = sum_k' d loss(a_k, b_k') / d a_k`.
fn summed_grads<L: PairwiseLossGrad>(
    loss: &L,
    a: &[L::Prepared],
    b: &[L::Prepared],
    dim: usize,
) -> Vec<Vec<f64>> {
    a.iter()
        .map(|x| {
            let mut g = vec![0.0; dim];
            for y in b {
                loss.add_grad_first(x, y, 1.0, &mut g);
            }
            g
        })
        .collect()
}

/// Monte-Carlo estimate of the expected loss between independent draws.
pub fn div_estimate<L: PairwiseLoss>(a: &SampleSet, b: &SampleSet, loss: &L) -> Result<f64> {
    check_nonempty(&a.poses)?;
    check_nonempty(&b.poses)?;
    let pa = prepare_all(loss, &a.poses);
    let pb = prepare_all(loss, &b.poses);
    Ok(mean_pair(loss, &pa, &pb))
}

/// The three diversity terms of one (prediction, conditional) pair of sample sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversities {
    pub cross: f64,
    pub self_w: f64,
    pub self_theta: f64,
}

impl Diversities {
    pub fn compute<L: PairwiseLoss>(w: &[Pose], theta: &[Pose], loss: &L) -> Result<Self> {
        check_nonempty(w)?;
        check_nonempty(theta)?;
        let pw = prepare_all(loss, w);
        let pt = prepare_all(loss, theta);
        Ok(Diversities {
            cross: mean_pair(loss, &pw, &pt),
            self_w: mean_pair(loss, &pw, &pw),
            self_theta: mean_pair(loss, &pt, &pt),
        })
    }

    /// `cross - gamma self_w - (1 - gamma) self_theta`, arranged so that
    /// identical terms cancel exactly.
    pub fn disc(&self, gamma: f64) -> f64 {
        gamma * (self.cross - self.self_w) + (1.0 - gamma) * (self.cross - self.self_theta)
    }

    pub fn value(&self, kind: ObjectiveKind, gamma: f64) -> f64 {
        match kind {
            ObjectiveKind::Theta => self.cross - (1.0 - gamma) * self.self_theta,
            ObjectiveKind::W => self.cross - gamma * self.self_w,
            ObjectiveKind::Joint => self.disc(gamma),
            ObjectiveKind::Cross => self.cross,
        }
    }
}

pub fn disc_estimate<L: PairwiseLoss>(p: &SampleSet, q: &SampleSet, gamma: f64, loss: &L) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(Diversities::compute(&p.poses, &q.poses, loss)?.disc(gamma))
}

/// Dissimilarity between the samples and a point mass at the ground truth.
pub fn supervised_disco_loss<L: PairwiseLoss>(p: &SampleSet, gt: &Pose, gamma: f64, loss: &L) -> Result<f64> {
    check_gamma(gamma)?;
    let d = Diversities::compute(&p.poses, std::slice::from_ref(gt), loss)?;
    Ok(d.value(ObjectiveKind::W, gamma))
}

pub fn theta_objective<L: PairwiseLoss>(w: &SampleSet, theta: &SampleSet, gamma: f64, loss: &L) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(Diversities::compute(&w.poses, &theta.poses, loss)?.value(ObjectiveKind::Theta, gamma))
}

pub fn w_objective<L: PairwiseLoss>(w: &SampleSet, theta: &SampleSet, gamma: f64, loss: &L) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(Diversities::compute(&w.poses, &theta.poses, loss)?.value(ObjectiveKind::W, gamma))
}

pub fn joint_objective<L: PairwiseLoss>(w: &SampleSet, theta: &SampleSet, gamma: f64, loss: &L) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(Diversities::compute(&w.poses, &theta.poses, loss)?.value(ObjectiveKind::Joint, gamma))
}

/// Which objective is being differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Conditional-network step; gradients for the conditional samples only.
    Theta,
    /// Prediction-network step; gradients for the prediction samples only.
    W,
    /// Both networks at once.
    Joint,
    /// Cross-diversity only (pointwise baseline); gradients for both sides.
    Cross,
}

impl ObjectiveKind {
    /// (cross, self_w, self_theta) coefficients.
    fn coefficients(self, gamma: f64) -> (f64, f64, f64) {
        match self {
            ObjectiveKind::Theta => (1.0, 0.0, 1.0 - gamma),
            ObjectiveKind::W => (1.0, gamma, 0.0),
            ObjectiveKind::Joint => (1.0, gamma, 1.0 - gamma),
            ObjectiveKind::Cross => (1.0, 0.0, 0.0),
        }
    }

    pub fn differentiates_w(self) -> bool {
        !matches!(self, ObjectiveKind::Theta)
    }

    pub fn differentiates_theta(self) -> bool {
        !matches!(self, ObjectiveKind::W)
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta_obj" => Ok(ObjectiveKind::Theta),
            "w_obj" => Ok(ObjectiveKind::W),
            "joint_obj" => Ok(ObjectiveKind::Joint),
            "cross_obj" => Ok(ObjectiveKind::Cross),
            other => Err(Error::Config(format!("unknown objective tag '{other}'"))),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Theta => "theta_obj",
            ObjectiveKind::W => "w_obj",
            ObjectiveKind::Joint => "joint_obj",
            ObjectiveKind::Cross => "cross_obj",
        })
    }
}

/// Per-sample pose gradients; a side is `None` when the objective holds it fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGrads {
    pub w: Option<Vec<Vec<f64>>>,
    pub theta: Option<Vec<Vec<f64>>>,
}

/// Objective value, its diversity terms, and the gradients of the objective
/// with respect to every coordinate of the differentiated samples.
pub fn objective_with_grads<L: PairwiseLossGrad>(
    w: &[Pose],
    theta: &[Pose],
    gamma: f64,
    kind: ObjectiveKind,
    loss: &L,
) -> Result<(f64, Diversities, PoseGrads)> {
    check_gamma(gamma)?;
    check_nonempty(w)?;
    check_nonempty(theta)?;
    let dim = 2 * w[0].num_joints();
    if theta.iter().chain(w).any(|p| 2 * p.num_joints() != dim) {
        return Err(Error::Shape("samples disagree on joint count".into()));
    }
    let pw = prepare_all(loss, w);
    let pt = prepare_all(loss, theta);
    let div = Diversities {
        cross: mean_pair(loss, &pw, &pt),
        self_w: mean_pair(loss, &pw, &pw),
        self_theta: mean_pair(loss, &pt, &pt),
    };
    let (c_cross, c_w, c_t) = kind.coefficients(gamma);
    let (kw, kt) = (w.len() as f64, theta.len() as f64);
    // d/dx_k sum_{i,j} loss(x_i, x_j) = 2 sum_j d1 loss(x_k, x_j) for a symmetric loss
    let combine = |cross: Vec<Vec<f64>>, own: Option<Vec<Vec<f64>>>, a: f64, b: f64| {
        cross
            .into_iter()
            .enumerate()
            .map(|(k, g)| match &own {
                Some(s) => g.iter().zip(&s[k]).map(|(x, y)| a * x - b * y).collect(),
                None => g.iter().map(|x| a * x).collect(),
            })
            .collect::<Vec<Vec<f64>>>()
    };
    let gw = kind.differentiates_w().then(|| {
        let cross = summed_grads(loss, &pw, &pt, dim);
        let own = (c_w != 0.0).then(|| summed_grads(loss, &pw, &pw, dim));
        combine(cross, own, c_cross / (kw * kt), 2.0 * c_w / (kw * kw))
    });
    let gt = kind.differentiates_theta().then(|| {
        let cross = summed_grads(loss, &pt, &pw, dim);
        let own = (c_t != 0.0).then(|| summed_grads(loss, &pt, &pt, dim));
        combine(cross, own, c_cross / (kw * kt), 2.0 * c_t / (kt * kt))
    });
    Ok((div.value(kind, gamma), div, PoseGrads { w: gw, theta: gt }))
}

pub fn objective_pose_grads<L: PairwiseLossGrad>(
    w: &SampleSet,
    theta: &SampleSet,
    gamma: f64,
    loss: &L,
    kind: ObjectiveKind,
) -> Result<PoseGrads> {
    Ok(objective_with_grads(&w.poses, &theta.poses, gamma, kind, loss)?.2)
}

/// Supervised loss against a ground-truth pose and its gradients for the samples.
pub fn supervised_with_grads<L: PairwiseLossGrad>(
    samples: &[Pose],
    gt: &Pose,
    gamma: f64,
    loss: &L,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (v, _, g) = objective_with_grads(samples, std::slice::from_ref(gt), gamma, ObjectiveKind::W, loss)?;
    Ok((v, g.w.expect("w objective differentiates w")))
}
