#![allow(dead_code)]

use posedisc::diffnet::{grad_check, Activation, Architecture, NetworkParameters, NoiseVector};
use posedisc::eval::meu_index;
use posedisc::lossmap::{delta_grad, delta_loss, BeliefLoss, Pose, RenderConfig};
use posedisc::objective::{
    disc_estimate, div_estimate, joint_objective, objective_pose_grads, supervised_disco_loss, theta_objective,
    w_objective, ObjectiveKind, PairwiseLoss, SampleSet, SampleSource,
};
use posedisc::rng::Stream;
use posedisc::synth::Image;
use rand::Rng as _;

pub const J: usize = 14;

pub fn random_pose(rng: &mut impl rand::Rng, j: usize) -> Pose {
    Pose {
        joints: (0..j).map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]).collect(),
    }
}

/// Poses scattered around a random centre.
pub fn random_set(rng: &mut impl rand::Rng, k: usize, j: usize, spread: f64) -> Vec<Pose> {
    let c = random_pose(rng, j);
    scatter(rng, &c, k, spread)
}

pub fn scatter(rng: &mut impl rand::Rng, c: &Pose, k: usize, spread: f64) -> Vec<Pose> {
    (0..k)
        .map(|_| Pose {
            joints: c
                .joints
                .iter()
                .map(|p| [p[0] + rng.gen_range(-spread..spread), p[1] + rng.gen_range(-spread..spread)])
                .collect(),
        })
        .collect()
}

pub fn set(poses: Vec<Pose>) -> SampleSet {
    SampleSet::new(poses, SampleSource::Prediction).unwrap()
}

/// Direct cell-by-cell rendering of the Gaussian belief maps and their mean
/// squared difference.
pub fn delta_brute(a: &Pose, b: &Pose, cfg: &RenderConfig) -> f64 {
    let two_var = 2.0 * cfg.sigma * cfg.sigma;
    let map = |p: [f64; 2], r: usize, c: usize| {
        let dy = p[1] * cfg.grid_h as f64 - (r as f64 + 0.5);
        let dx = p[0] * cfg.grid_w as f64 - (c as f64 + 0.5);
        (-(dx * dx + dy * dy) / two_var).exp()
    };
    let mut total = 0.0;
    for (pa, pb) in a.joints.iter().zip(&b.joints) {
        for r in 0..cfg.grid_h {
            for c in 0..cfg.grid_w {
                let d = map(*pa, r, c) - map(*pb, r, c);
                total += d * d;
            }
        }
    }
    total / (a.joints.len() * cfg.grid_h * cfg.grid_w) as f64
}

/// Relative error with the same floor as the library's gradient check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Largest component difference relative to the largest component of either
/// vector, so coordinates whose gradient nearly cancels are judged on the
/// scale of the whole gradient.
pub fn vector_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    diff / scale.max(1e-12)
}

/// Δ between support points of finite distributions, indexed by support id.
pub struct TableLoss(pub Vec<Vec<f64>>);

impl PairwiseLoss for TableLoss {
    type Prepared = usize;

    fn prepare(&self, pose: &Pose) -> usize {
        pose.joints[0][0] as usize
    }

    fn pair(&self, a: &usize, b: &usize) -> f64 {
        self.0[*a][*b]
    }
}

/// A finite distribution over poses: probabilities and support.
pub struct Finite {
    pub probs: Vec<f64>,
    pub support: Vec<usize>,
}

pub struct EstimatorCheck {
    pub label: String,
    pub estimate: f64,
    pub oracle: f64,
    pub se: f64,
}

impl EstimatorCheck {
    pub fn within(&self, k: f64) -> bool {
        (self.estimate - self.oracle).abs() <= k * self.se
    }
}

/// Three distributions pushed forward from discrete noise through fixed poses,
/// compared with exact enumeration at `k` samples each.
pub fn enumerated_estimator_checks(k: usize, seed: u64) -> Vec<EstimatorCheck> {
    let cfg = RenderConfig::default();
    let mut rng = Stream::from_seed(seed).rng();
    let base = random_pose(&mut rng, J);
    let atoms: Vec<Pose> = (0..6)
        .map(|i| Pose {
            joints: base
                .joints
                .iter()
                .map(|p| [p[0] + 0.02 * i as f64 * rng.gen_range(-1.0..1.0), p[1] + 0.02 * i as f64])
                .collect(),
        })
        .collect();
    let table: Vec<Vec<f64>> = atoms
        .iter()
        .map(|a| atoms.iter().map(|b| delta_loss(a, b, &cfg).unwrap()).collect())
        .collect();
    let dists = [
        Finite { probs: vec![0.5, 0.5], support: vec![0, 3] },
        Finite { probs: vec![0.2, 0.5, 0.3], support: vec![1, 2, 4] },
        Finite { probs: vec![0.1, 0.15, 0.2, 0.25, 0.3], support: vec![0, 1, 2, 4, 5] },
    ];
    let draw = |d: &Finite, rng: &mut posedisc::rng::Rng| -> Vec<Pose> {
        (0..k)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut id = *d.support.last().unwrap();
                for (p, &s) in d.probs.iter().zip(&d.support) {
                    acc += p;
                    if u < acc {
                        id = s;
                        break;
                    }
                }
                Pose { joints: vec![[id as f64, 0.0]] }
            })
            .collect()
    };
    let loss = TableLoss(table.clone());
    let kf = k as f64;
    // zeta_10 = Var E[h | X], zeta_01 = Var E[h | Y], zeta_11 = Var h(X, Y), mean = E h
    let zetas = |a: &Finite, b: &Finite| -> (f64, f64, f64, f64) {
        let pairs = || {
            a.probs.iter().zip(&a.support).flat_map(move |(p, &x)| {
                b.probs.iter().zip(&b.support).map(move |(q, &y)| (p * q, x, y))
            })
        };
        let mean: f64 = pairs().map(|(w, x, y)| w * table[x][y]).sum();
        let z11: f64 = pairs().map(|(w, x, y)| w * (table[x][y] - mean).powi(2)).sum();
        let cond = |u: &Finite, v: &Finite, first: bool| -> f64 {
            u.probs
                .iter()
                .zip(&u.support)
                .map(|(p, &x)| {
                    let m: f64 = v
                        .probs
                        .iter()
                        .zip(&v.support)
                        .map(|(q, &y)| q * if first { table[x][y] } else { table[y][x] })
                        .sum();
                    p * (m - mean).powi(2)
                })
                .sum()
        };
        (mean, cond(a, b, true), cond(b, a, false), z11)
    };
    let samples: Vec<Vec<Pose>> = dists.iter().map(|d| draw(d, &mut rng)).collect();
    let second: Vec<Vec<Pose>> = dists.iter().map(|d| draw(d, &mut rng)).collect();
    let mut out = Vec::new();
    let mut two_sample = |label: String, a: &[Pose], b: &[Pose], da: &Finite, db: &Finite| {
        let (mean, z10, z01, z11) = zetas(da, db);
        out.push(EstimatorCheck {
            label,
            estimate: div_estimate(&set(a.to_vec()), &set(b.to_vec()), &loss).unwrap(),
            oracle: mean,
            se: (((kf - 1.0) * (z10 + z01) + z11) / (kf * kf)).sqrt(),
        });
    };
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        two_sample(format!("div(p{i}, p{j})"), &samples[i], &second[j], &dists[i], &dists[j]);
    }
    for i in 0..3 {
        two_sample(format!("div(p{i}, p{i}) independent"), &samples[i], &second[i], &dists[i], &dists[i]);
    }
    for (i, d) in dists.iter().enumerate() {
        // all K^2 pairs of one sample: (K - 1) / K times the U-statistic
        let (mean, z1, _, z2) = zetas(d, d);
        let var_u = (4.0 * (kf - 2.0) * z1 + 2.0 * z2) / (kf * (kf - 1.0));
        let shrink = (kf - 1.0) / kf;
        out.push(EstimatorCheck {
            label: format!("div(p{i}, p{i}) same sample"),
            estimate: div_estimate(&set(samples[i].clone()), &set(samples[i].clone()), &loss).unwrap(),
            oracle: shrink * mean,
            se: shrink * var_u.sqrt(),
        });
    }
    out
}

/// Returns the largest |disc| over identical sets and the largest asymmetry at γ = 0.5.
pub fn disc_identity_checks(seeds: u64) -> (f64, f64) {
    let loss = BeliefLoss::new(RenderConfig::default()).unwrap();
    let (mut zero, mut asym): (f64, f64) = (0.0, 0.0);
    for s in 0..seeds {
        let mut rng = Stream::from_seed(100 + s).rng();
        let k = rng.gen_range(1..12);
        let p = set(random_set(&mut rng, k, J, 0.05));
        let n = rng.gen_range(1..12);
        let q = set(random_set(&mut rng, n, J, 0.05));
        for gamma in [0.0, 0.3, 0.5, 1.0] {
            zero = zero.max(disc_estimate(&p, &p, gamma, &loss).unwrap().abs());
        }
        let a = disc_estimate(&p, &q, 0.5, &loss).unwrap();
        let b = disc_estimate(&q, &p, 0.5, &loss).unwrap();
        asym = asym.max((a - b).abs());
    }
    (zero, asym)
}

/// Largest deviation from the objective identities relative to the objective
/// scale, and the largest |supervised loss| with every sample at the ground truth.
pub fn identity_checks(seeds: u64) -> (f64, f64) {
    let loss = BeliefLoss::new(RenderConfig::default()).unwrap();
    let (mut worst, mut sup): (f64, f64) = (0.0, 0.0);
    for s in 0..seeds {
        let mut rng = Stream::from_seed(200 + s).rng();
        let (kw, kt) = (rng.gen_range(1..10), rng.gen_range(1..10));
        let w = set(random_set(&mut rng, kw, J, 0.08));
        let t = set(random_set(&mut rng, kt, J, 0.08));
        let gamma: f64 = rng.gen_range(0.0..=1.0);
        let joint = joint_objective(&w, &t, gamma, &loss).unwrap();
        let theta = theta_objective(&w, &t, gamma, &loss).unwrap();
        let wo = w_objective(&w, &t, gamma, &loss).unwrap();
        let sw = div_estimate(&w, &w, &loss).unwrap();
        let st = div_estimate(&t, &t, &loss).unwrap();
        let scale = theta.abs().max(wo.abs()).max(sw).max(st);
        worst = worst.max((joint - (theta - gamma * sw)).abs() / scale);
        worst = worst.max((joint - (wo - (1.0 - gamma) * st)).abs() / scale);
        let gt = random_pose(&mut rng, J);
        let k = rng.gen_range(1..8);
        sup = sup.max(supervised_disco_loss(&set(vec![gt.clone(); k]), &gt, gamma, &loss).unwrap().abs());
    }
    (worst, sup)
}

/// Exhaustive lowest-index argmin of the summed loss against all samples.
pub fn meu_oracle(poses: &[Pose], cfg: &RenderConfig) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, a) in poses.iter().enumerate() {
        let v: f64 = poses.iter().map(|b| delta_loss(a, b, cfg).unwrap()).sum();
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Number of random sets (K ≤ 50, some with duplicated or fully tied samples)
/// on which `meu_index` disagrees with the oracle.
pub fn meu_mismatches(sets: u64) -> usize {
    let cfg = RenderConfig::default();
    let loss = BeliefLoss::new(cfg).unwrap();
    let mut bad = 0;
    for s in 0..sets {
        let mut rng = Stream::from_seed(300 + s).rng();
        let k = rng.gen_range(1..=50);
        let mut poses = random_set(&mut rng, k, J, 0.06);
        match s % 4 {
            1 => {
                // duplicates of a random sample
                let src = rng.gen_range(0..k);
                for _ in 0..rng.gen_range(1..4) {
                    let dst = rng.gen_range(0..k);
                    poses[dst] = poses[src].clone();
                }
            }
            2 => {
                // all samples equal: every index ties
                let p = poses[0].clone();
                poses.iter_mut().for_each(|x| *x = p.clone());
            }
            3 if k >= 2 => {
                // two tight clusters of equal size
                let (a, b) = (poses[0].clone(), poses[1].clone());
                for (i, x) in poses.iter_mut().enumerate() {
                    *x = if i % 2 == 0 { a.clone() } else { b.clone() };
                }
            }
            _ => {}
        }
        if meu_index(&poses, &loss).unwrap() != meu_oracle(&poses, &cfg) {
            bad += 1;
        }
    }
    bad
}

pub fn gradient_arch() -> Architecture {
    Architecture {
        input_dim: 20,
        hidden: vec![9, 7],
        noise_dim: 4,
        num_joints: 3,
        injection_layer: 1,
        activation: Activation::Tanh,
    }
}

pub fn random_image(rng: &mut impl rand::Rng, h: usize, w: usize) -> Image {
    Image::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap()
}

/// Worst relative error of `backward` over every parameter, for a prediction
/// network and a three-head conditional network, under a quadratic and a Δ loss.
pub fn network_gradient_error(seed: u64) -> f64 {
    let arch = gradient_arch();
    let mut rng = Stream::from_seed(400 + seed).rng();
    let image = random_image(&mut rng, 4, 5);
    let target = scatter(&mut rng, &Pose { joints: vec![[0.5, 0.5]; arch.num_joints] }, 1, 0.08).remove(0);
    let cfg = RenderConfig { grid_h: 16, grid_w: 16, sigma: 3.0 };
    let mut worst: f64 = 0.0;
    for heads in [1usize, 3] {
        let mut params = NetworkParameters::init(&arch, heads, &mut rng).unwrap();
        let last = params.num_layers() - 1;
        for h in 0..heads {
            let wr = params.weight_range(last, h);
            for v in &mut params.values[wr] {
                *v *= 0.1;
            }
            let br = params.bias_range(last, h);
            for v in &mut params.values[br] {
                *v += 0.5;
            }
        }
        let z = NoiseVector::sample(arch.noise_dim, &mut rng);
        let head = (heads > 1).then(|| rng.gen_range(0..heads));
        let quad = |p: &Pose| {
            let flat = p.to_flat();
            let t = target.to_flat();
            let v = flat.iter().zip(&t).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
            (v, flat.iter().zip(&t).map(|(a, b)| a - b).collect())
        };
        let belief = |p: &Pose| (delta_loss(p, &target, &cfg).unwrap(), delta_grad(p, &target, &cfg).unwrap());
        worst = worst.max(grad_check(&params, &image, &z, head, quad, 1e-5, None).unwrap());
        worst = worst.max(grad_check(&params, &image, &z, head, belief, 1e-5, None).unwrap());
    }
    worst
}

/// Worst relative error of `delta_grad` against central differences of `delta_loss`.
pub fn delta_gradient_error(seed: u64) -> f64 {
    let cfg = RenderConfig::default();
    let mut rng = Stream::from_seed(500 + seed).rng();
    let a = random_pose(&mut rng, J);
    let b = scatter(&mut rng, &a, 1, 0.08).remove(0);
    let g = delta_grad(&a, &b, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..2 * J {
        let mut flat = a.to_flat();
        let orig = flat[i];
        flat[i] = orig + 1e-5;
        let plus = delta_loss(&Pose::from_flat(&flat).unwrap(), &b, &cfg).unwrap();
        flat[i] = orig - 1e-5;
        let minus = delta_loss(&Pose::from_flat(&flat).unwrap(), &b, &cfg).unwrap();
        worst = worst.max(rel_err(g[i], (plus - minus) / 2e-5));
    }
    worst
}

/// Worst relative error of the objective pose gradients for every objective kind.
pub fn objective_gradient_error(seed: u64) -> f64 {
    let loss = BeliefLoss::new(RenderConfig::default()).unwrap();
    let mut rng = Stream::from_seed(600 + seed).rng();
    let c = random_pose(&mut rng, J);
    let (kw, kt) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let w = scatter(&mut rng, &c, kw, 0.06);
    let t = scatter(&mut rng, &c, kt, 0.06);
    let gamma: f64 = rng.gen_range(0.0..=1.0);
    let value = |kind: ObjectiveKind, w: &[Pose], t: &[Pose]| -> f64 {
        let (ws, ts) = (set(w.to_vec()), set(t.to_vec()));
        match kind {
            ObjectiveKind::Theta => theta_objective(&ws, &ts, gamma, &loss).unwrap(),
            ObjectiveKind::W => w_objective(&ws, &ts, gamma, &loss).unwrap(),
            ObjectiveKind::Joint => joint_objective(&ws, &ts, gamma, &loss).unwrap(),
            ObjectiveKind::Cross => div_estimate(&ws, &ts, &loss).unwrap(),
        }
    };
    let mut worst: f64 = 0.0;
    for kind in [ObjectiveKind::Theta, ObjectiveKind::W, ObjectiveKind::Joint, ObjectiveKind::Cross] {
        let grads = objective_pose_grads(&set(w.clone()), &set(t.clone()), gamma, &loss, kind).unwrap();
        for (side, g) in [(0, &grads.w), (1, &grads.theta)] {
            let Some(g) = g else { continue };
            let poses = if side == 0 { &w } else { &t };
            for (k, gk) in g.iter().enumerate() {
                let mut numeric = vec![0.0; 2 * J];
                for (i, n) in numeric.iter_mut().enumerate() {
                    let mut moved = poses.clone();
                    let mut flat = moved[k].to_flat();
                    let orig = flat[i];
                    let mut eval = |x: f64| {
                        flat[i] = x;
                        moved[k] = Pose::from_flat(&flat).unwrap();
                        if side == 0 {
                            value(kind, &moved, &t)
                        } else {
                            value(kind, &w, &moved)
                        }
                    };
                    *n = (eval(orig + 1e-5) - eval(orig - 1e-5)) / 2e-5;
                }
                worst = worst.max(vector_rel_err(gk, &numeric));
            }
        }
    }
    worst
}
