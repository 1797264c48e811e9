//! The prediction network Pr_w (image only) and the conditional network Pr_θ
//! (image and action), plus their supervised initialization.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::diffnet::{forward, forward_head, forward_trunk, Architecture, ForwardCache, NetworkParameters, NoiseVector};
use crate::error::{Error, Result};
use crate::lossmap::Pose;
use crate::objective::{SampleSet, SampleSource};
use crate::rng::{Rng, Stream};
use crate::synth::{DiverseDataset, Image};
use crate::training::{self, TrainConfig, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Prediction,
    Conditional,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Prediction => "prediction",
            Role::Conditional => "conditional",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(Role::Prediction),
            "conditional" => Ok(Role::Conditional),
            other => Err(Error::Config(format!("unknown role '{other}'"))),
        }
    }
}

/// How a single pose is read out of a network at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    /// Draw `k` samples and return the minimum-expected-loss one.
    Meu { k: usize },
    /// One forward pass with the all-zero noise vector.
    ZeroNoise,
}

/// Noise convention a network was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Sampled,
    Zero,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::Sampled => "sampled",
            NoiseMode::Zero => "zero",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(NoiseMode::Sampled),
            "zero" => Ok(NoiseMode::Zero),
            other => Err(Error::Config(format!("unknown noise mode '{other}'"))),
        }
    }
}

/// A network that can be sampled, with the head chosen from an optional action.
pub trait PoseSampler {
    fn params(&self) -> &NetworkParameters;
    fn role(&self) -> Role;

    fn noise_mode(&self) -> NoiseMode {
        NoiseMode::Sampled
    }

    /// Head to evaluate for `action`.
    fn head(&self, action: Option<usize>) -> Result<Option<usize>> {
        let n = self.params().num_heads;
        match (self.role(), action) {
            (Role::Prediction, None) => Ok(None),
            (Role::Prediction, Some(_)) => Err(Error::Precondition(
                "the prediction network does not take an action".into(),
            )),
            (Role::Conditional, None) => Err(Error::Precondition(
                "the conditional network needs an action".into(),
            )),
            (Role::Conditional, Some(a)) if a < n => Ok((n > 1).then_some(a)),
            (Role::Conditional, Some(a)) => Err(Error::InvalidHead {
                head: Some(a),
                num_heads: n,
            }),
        }
    }

    fn source(&self) -> SampleSource {
        match self.role() {
            Role::Prediction => SampleSource::Prediction,
            Role::Conditional => SampleSource::Conditional,
        }
    }
}

pub const OUTPUT_INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionNet {
    pub params: NetworkParameters,
    pub noise: NoiseMode,
}

impl PredictionNet {
    pub fn new(params: NetworkParameters, noise: NoiseMode) -> Result<Self> {
        params.validate()?;
        if params.num_heads != 1 {
            return Err(Error::Shape(format!(
                "a prediction network has one head, got {}",
                params.num_heads
            )));
        }
        Ok(PredictionNet { params, noise })
    }

    /// Xavier-initialized network with output weights shrunk by
    /// [`OUTPUT_INIT_SCALE`] and output bias `mean_pose`, so that untrained
    /// predictions start near the average pose.
    pub fn init(arch: &Architecture, mean_pose: Option<&Pose>, noise: NoiseMode, rng: &mut Rng) -> Result<Self> {
        let mut params = NetworkParameters::init(arch, 1, rng)?;
        let last = params.num_layers() - 1;
        let wr = params.weight_range(last, 0);
        for v in &mut params.values[wr] {
            *v *= OUTPUT_INIT_SCALE;
        }
        if let Some(p) = mean_pose {
            let br = params.bias_range(last, 0);
            if br.len() != 2 * p.num_joints() {
                return Err(Error::Shape("mean pose joint count differs from the network".into()));
            }
            params.values[br].copy_from_slice(&p.to_flat());
        }
        Self::new(params, noise)
    }

    pub fn inference(&self, k: usize) -> Inference {
        match self.noise {
            NoiseMode::Sampled => Inference::Meu { k },
            NoiseMode::Zero => Inference::ZeroNoise,
        }
    }
}

impl PoseSampler for PredictionNet {
    fn params(&self) -> &NetworkParameters {
        &self.params
    }

    fn role(&self) -> Role {
        Role::Prediction
    }

    fn noise_mode(&self) -> NoiseMode {
        self.noise
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNet {
    pub params: NetworkParameters,
}

impl ConditionalNet {
    pub fn new(params: NetworkParameters) -> Result<Self> {
        params.validate()?;
        Ok(ConditionalNet { params })
    }

    /// Trunk and every head copied from the prediction network.
    pub fn from_prediction(pred: &PredictionNet, num_actions: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::Config("at least one action is required".into()));
        }
        let mut params = pred.params.clone();
        params.num_heads = num_actions;
        params.values = vec![0.0; params.expected_len()];
        params.copy_from_single_head(&pred.params)?;
        Self::new(params)
    }

    pub fn num_actions(&self) -> usize {
        self.params.num_heads
    }
}

impl PoseSampler for ConditionalNet {
    fn params(&self) -> &NetworkParameters {
        &self.params
    }

    fn role(&self) -> Role {
        Role::Conditional
    }
}

/// Borrowed parameters with a role, for sampling from networks under training.
#[derive(Debug, Clone, Copy)]
pub struct NetView<'a> {
    pub params: &'a NetworkParameters,
    pub role: Role,
    pub noise: NoiseMode,
}

impl PoseSampler for NetView<'_> {
    fn params(&self) -> &NetworkParameters {
        self.params
    }

    fn role(&self) -> Role {
        self.role
    }

    fn noise_mode(&self) -> NoiseMode {
        self.noise
    }
}

fn noise_for(net: &impl PoseSampler, rng: &mut Rng) -> NoiseVector {
    let dim = net.params().noise_dim;
    match net.noise_mode() {
        NoiseMode::Sampled => NoiseVector::sample(dim, rng),
        NoiseMode::Zero => NoiseVector::zeros(dim),
    }
}

/// `k` samples for one image, reusing the trunk activations across draws.
/// Noise vectors are drawn from `rng` in order.
pub fn draw_samples(
    net: &impl PoseSampler,
    image: &Image,
    action: Option<usize>,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<Pose>, Vec<ForwardCache>)> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    let head = net.head(action)?;
    let trunk = forward_trunk(net.params(), image)?;
    draw_from_trunk(net, &trunk, head, k, rng)
}

pub(crate) fn draw_from_trunk(
    net: &impl PoseSampler,
    trunk: &Arc<crate::diffnet::TrunkCache>,
    head: Option<usize>,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<Pose>, Vec<ForwardCache>)> {
    let mut poses = Vec::with_capacity(k);
    let mut caches = Vec::with_capacity(k);
    for _ in 0..k {
        let z = noise_for(net, rng);
        let (p, c) = forward_head(net.params(), trunk, &z, head)?;
        poses.push(p);
        caches.push(c);
    }
    Ok((poses, caches))
}

/// `k` i.i.d. samples from the network's implicit distribution for one image.
pub fn sample_poses(
    net: &impl PoseSampler,
    image: &Image,
    action: Option<usize>,
    k: usize,
    stream: Stream,
) -> Result<SampleSet> {
    let (poses, _) = draw_samples(net, image, action, k, &mut stream.rng())?;
    SampleSet::new(poses, net.source())
}

/// Same draws as [`sample_poses`], each with a full forward pass.
pub fn sample_poses_naive(
    net: &impl PoseSampler,
    image: &Image,
    action: Option<usize>,
    k: usize,
    stream: Stream,
) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    let head = net.head(action)?;
    let mut rng = stream.rng();
    let poses = (0..k)
        .map(|_| {
            let z = noise_for(net, &mut rng);
            forward(net.params(), image, &z, head).map(|(p, _)| p)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(poses, net.source())
}

/// Coordinate-wise mean of the strong poses.
pub fn mean_strong_pose(dataset: &DiverseDataset) -> Result<Pose> {
    if dataset.strong.is_empty() {
        return Err(Error::Empty("strong set".into()));
    }
    let j = dataset.num_joints();
    let mut acc = vec![0.0; 2 * j];
    for &i in &dataset.strong {
        for (a, v) in acc.iter_mut().zip(dataset.pose(i)?.to_flat()) {
            *a += v;
        }
    }
    let n = dataset.strong.len() as f64;
    Pose::from_flat(&acc.iter().map(|a| a / n).collect::<Vec<_>>())
}

/// Settings that distinguish the supervised initializations of the methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedSetup {
    pub gamma: f64,
    pub weight_decay: f64,
    pub noise: NoiseMode,
}

/// The seeded starting point of [`init_prediction`].
pub fn initial_prediction(
    dataset: &DiverseDataset,
    arch: &Architecture,
    noise: NoiseMode,
    seed: u64,
) -> Result<PredictionNet> {
    let mean = mean_strong_pose(dataset)?;
    PredictionNet::init(arch, Some(&mean), noise, &mut Stream::named(seed, "init").rng())
}

/// Supervised training of the prediction network on the strong set.
pub fn init_prediction(
    dataset: &DiverseDataset,
    arch: &Architecture,
    config: &TrainConfig,
    setup: SupervisedSetup,
    tag: &str,
) -> Result<(PredictionNet, TrainingLog)> {
    let mut net = initial_prediction(dataset, arch, setup.noise, config.seed)?;
    let log = training::supervised_prediction_stage(&mut net, dataset, config, setup, tag)?;
    Ok((net, log))
}

/// Copies the prediction network into every head, then fine-tunes each head on
/// the strong samples of its action; the trunk sees every strong sample.
/// Actions without strong samples keep the copied head and are reported in
/// the returned warnings.
pub fn init_conditional(
    pred: &PredictionNet,
    dataset: &DiverseDataset,
    config: &TrainConfig,
    setup: SupervisedSetup,
    tag: &str,
) -> Result<(ConditionalNet, TrainingLog, Vec<String>)> {
    let mut cond = ConditionalNet::from_prediction(pred, dataset.num_actions)?;
    let mut warnings = Vec::new();
    for a in 0..dataset.num_actions {
        if dataset.strong_of_action(a).is_empty() {
            let msg = format!("action {a} has no strong samples; its head keeps the copied initialization");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let log = training::supervised_conditional_stage(pred, &mut cond, dataset, config, setup, tag)?;
    Ok((cond, log, warnings))
}
