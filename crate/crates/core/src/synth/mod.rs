//! Synthetic action-conditioned stick-figure benchmark.

mod augment;
mod io;
pub mod skeleton;

pub use augment::{augment, augment_with, AugmentParams, MAX_ROTATION_DEG};
pub use io::{read_dataset, write_dataset};
pub use skeleton::{default_prototypes, ActionPrototype, Skeleton};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lossmap::Pose;
use crate::rng::Stream;

/// Grayscale raster, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * self.width + c]
    }
}

/// Pixel radius of the linear intensity falloff around each bone.
pub const STROKE_RADIUS_PX: f64 = 1.5;

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    (p[0] - qx).hypot(p[1] - qy)
}

/// Draws the figure: `clamp(1 - d / 1.5px, 0, 1)` with `d` the pixel distance
/// from a pixel center to the nearest bone.
pub fn render_figure(skeleton: &Skeleton, pose: &Pose, height: usize, width: usize) -> Image {
    let segs: Vec<([f64; 2], [f64; 2])> = skeleton
        .segments(pose)
        .map(|(a, b)| {
            (
                [a[0] * width as f64, a[1] * height as f64],
                [b[0] * width as f64, b[1] * height as f64],
            )
        })
        .collect();
    let mut pixels = vec![0.0f32; height * width];
    for (a, b) in &segs {
        let r0 = (a[1].min(b[1]) - STROKE_RADIUS_PX - 1.0).floor().max(0.0) as usize;
        let r1 = ((a[1].max(b[1]) + STROKE_RADIUS_PX + 1.0).ceil().max(0.0) as usize).min(height);
        let c0 = (a[0].min(b[0]) - STROKE_RADIUS_PX - 1.0).floor().max(0.0) as usize;
        let c1 = ((a[0].max(b[0]) + STROKE_RADIUS_PX + 1.0).ceil().max(0.0) as usize).min(width);
        for r in r0..r1 {
            for c in c0..c1 {
                let d = segment_distance([c as f64 + 0.5, r as f64 + 0.5], *a, *b);
                let v = (1.0 - d / STROKE_RADIUS_PX).clamp(0.0, 1.0) as f32;
                let px = &mut pixels[r * width + c];
                if v > *px {
                    *px = v;
                }
            }
        }
    }
    Image {
        height,
        width,
        pixels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub num_actions: usize,
    pub samples_per_action: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Angular jitter standard deviation, radians.
    pub jitter: f64,
    /// Probability that a figure faces away from the camera. Its joints are
    /// then mirrored about the pelvis while the labels stay put, so the
    /// raster alone cannot tell left from right.
    pub back_view: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_actions: 6,
            samples_per_action: 300,
            image_height: 48,
            image_width: 48,
            jitter: 0.15,
            back_view: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub action: usize,
    /// Present for fully annotated samples.
    pub pose: Option<Pose>,
    pub head_length: Option<f64>,
}

/// Fully labeled generated corpus, `samples_per_action` consecutive samples per action.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: GenConfig,
    pub skeleton: Skeleton,
    pub prototypes: Vec<ActionPrototype>,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn indices_of_action(&self, action: usize) -> impl Iterator<Item = usize> + '_ {
        self.samples
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.action == action)
            .map(|(i, _)| i)
    }
}

pub fn gen_dataset(config: &GenConfig) -> Result<Corpus> {
    if config.num_actions < 2 {
        return Err(Error::Config("at least two actions are required".into()));
    }
    if config.samples_per_action == 0 || config.image_height == 0 || config.image_width == 0 {
        return Err(Error::Config("sample count and image size must be positive".into()));
    }
    if !(config.jitter.is_finite() && config.jitter >= 0.0) {
        return Err(Error::Config(format!("invalid jitter {}", config.jitter)));
    }
    if !(0.0..=1.0).contains(&config.back_view) {
        return Err(Error::Config(format!("invalid back-view probability {}", config.back_view)));
    }
    let skeleton = Skeleton::default();
    let prototypes = default_prototypes(config.num_actions, config.jitter);
    let stream = Stream::named(config.seed, "data");
    let mut samples = Vec::with_capacity(config.num_actions * config.samples_per_action);
    for proto in &prototypes {
        for s in 0..config.samples_per_action {
            let index = proto.id * config.samples_per_action + s;
            let mut rng = stream.child(index as u64).rng();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut mode = &proto.modes[proto.modes.len() - 1].1;
            for (w, p) in &proto.modes {
                acc += w;
                if u < acc {
                    mode = p;
                    break;
                }
            }
            let mut angles = mode.angles();
            if proto.jitter > 0.0 {
                let normal = Normal::new(0.0, proto.jitter).expect("valid jitter");
                for a in &mut angles {
                    *a += normal.sample(&mut rng);
                }
            }
            let mut pose = skeleton.forward_kinematics(&angles);
            if rng.gen::<f64>() < config.back_view {
                let cx = skeleton.pelvis[0];
                for j in &mut pose.joints {
                    j[0] = 2.0 * cx - j[0];
                }
            }
            let image = render_figure(&skeleton, &pose, config.image_height, config.image_width);
            samples.push(Sample {
                image,
                action: proto.id,
                head_length: Some(Skeleton::head_length(&pose)),
                pose: Some(pose),
            });
        }
    }
    Ok(Corpus {
        config: config.clone(),
        skeleton,
        prototypes,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-action stratified random split into train/validation/test.
pub fn make_splits(corpus: &Corpus, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let stream = Stream::named(seed, "split");
    let mut splits = Splits {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for a in 0..corpus.config.num_actions {
        let mut idx: Vec<usize> = corpus.indices_of_action(a).collect();
        idx.shuffle(&mut stream.child(a as u64).rng());
        let n = idx.len() as f64;
        let n_train = ((fractions[0] * n).round() as usize).min(idx.len());
        let n_val = ((fractions[1] * n).round() as usize).min(idx.len() - n_train);
        splits.train.extend_from_slice(&idx[..n_train]);
        splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

/// Values that describe how a dataset was produced; echoed into the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub samples_per_action: usize,
    pub jitter: f64,
    pub back_view: f64,
    pub strong_fraction: f64,
}

/// Training data with poses kept for the strong subset only, plus labeled
/// validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DiverseDataset {
    pub meta: DatasetMeta,
    pub skeleton: Skeleton,
    pub num_actions: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Weak training samples have `pose == None`.
    pub samples: Vec<Sample>,
    pub splits: Splits,
    pub strong: Vec<usize>,
    pub weak: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DiverseDataset {
    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    pub fn train(&self) -> Vec<usize> {
        self.splits.train.clone()
    }

    /// Pose of a sample that must carry one.
    pub fn pose(&self, i: usize) -> Result<&Pose> {
        self.samples[i]
            .pose
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("sample {i} has no pose annotation")))
    }

    pub fn head_length(&self, i: usize) -> Result<f64> {
        self.samples[i]
            .head_length
            .ok_or_else(|| Error::Precondition(format!("sample {i} has no head length")))
    }

    pub fn strong_of_action(&self, action: usize) -> Vec<usize> {
        self.strong
            .iter()
            .copied()
            .filter(|&i| self.samples[i].action == action)
            .collect()
    }

    pub fn is_strong(&self, i: usize) -> bool {
        self.strong.binary_search(&i).is_ok()
    }
}

/// Largest-remainder apportionment of `total` over `weights` (ties to the lower index).
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Keeps poses for a stratified `strong_fraction` of the training split
/// (exactly `ceil(strong_fraction * |train|)` samples) and strips them from
/// the rest.
pub fn make_diverse(
    corpus: &Corpus,
    splits: &Splits,
    strong_fraction: f64,
    seed: u64,
) -> Result<DiverseDataset> {
    if !(strong_fraction > 0.0 && strong_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "strong fraction must lie in (0, 1], got {strong_fraction}"
        )));
    }
    let a_count = corpus.config.num_actions;
    let per_action: Vec<Vec<usize>> = (0..a_count)
        .map(|a| {
            splits
                .train
                .iter()
                .copied()
                .filter(|&i| corpus.samples[i].action == a)
                .collect()
        })
        .collect();
    let n_train = splits.train.len();
    let total = ((strong_fraction * n_train as f64) - 1e-9).ceil().max(0.0) as usize;
    let shares: Vec<f64> = per_action
        .iter()
        .map(|v| strong_fraction * v.len() as f64)
        .collect();
    let quotas = apportion(total.min(n_train), &shares);
    let stream = Stream::named(seed, "diverse");
    let mut strong = Vec::new();
    let mut warnings = Vec::new();
    for (a, idx) in per_action.iter().enumerate() {
        let mut idx = idx.clone();
        idx.shuffle(&mut stream.child(a as u64).rng());
        let q = quotas[a].min(idx.len());
        if q == 0 {
            let msg = format!("action {a} has no strongly annotated training samples");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        strong.extend_from_slice(&idx[..q]);
    }
    strong.sort_unstable();
    let weak: Vec<usize> = splits
        .train
        .iter()
        .copied()
        .filter(|i| strong.binary_search(i).is_err())
        .collect();
    let mut samples = corpus.samples.clone();
    for &i in &weak {
        samples[i].pose = None;
        samples[i].head_length = None;
    }
    Ok(DiverseDataset {
        meta: DatasetMeta {
            seed: corpus.config.seed,
            samples_per_action: corpus.config.samples_per_action,
            jitter: corpus.config.jitter,
            back_view: corpus.config.back_view,
            strong_fraction,
        },
        skeleton: corpus.skeleton.clone(),
        num_actions: a_count,
        image_height: corpus.config.image_height,
        image_width: corpus.config.image_width,
        samples,
        splits: splits.clone(),
        strong,
        weak,
        warnings,
    })
}

/// Generation, 70/15/15 split and strong/weak partition in one call.
pub fn build_benchmark(config: &GenConfig, strong_fraction: f64) -> Result<DiverseDataset> {
    let corpus = gen_dataset(config)?;
    let splits = make_splits(&corpus, [0.70, 0.15, 0.15], config.seed)?;
    make_diverse(&corpus, &splits, strong_fraction, config.seed)
}
