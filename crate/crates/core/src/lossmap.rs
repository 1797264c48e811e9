//! Belief maps, the belief-map task loss and its gradient, and PCKh.
//!
//! A joint at normalized position `(u, v)` is rendered on an `H x W` grid as
//! `exp(-(dx^2 + dy^2) / (2 sigma^2))`, where `dx = u W - (c + 1/2)` and
//! `dy = v H - (r + 1/2)` are cell-unit offsets to the center of cell `(r, c)`.
//! The loss between two poses is the mean squared difference of their maps over
//! all joints and cells.
//!
//! The Gaussian factorizes into a column profile times a row profile, so the
//! squared difference summed over a grid reduces to products of 1-D dot
//! products. [`BeliefLoss`] evaluates the loss that way; [`render_belief`] builds
//! the full grids and is kept as the direct definition.

use crate::error::{Error, Result};
use crate::objective::{PairwiseLoss, PairwiseLossGrad};

/// Joint locations in normalized image coordinates (origin top-left).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joints: Vec<[f64; 2]>,
}

impl Pose {
    pub fn new(joints: Vec<[f64; 2]>) -> Result<Self> {
        if joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose coordinate".into()));
        }
        Ok(Pose { joints })
    }

    /// From interleaved `u0, v0, u1, v1, ...`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::Shape("odd number of pose coordinates".into()));
        }
        Pose::new(coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Standard deviation in grid cells.
    pub sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            grid_h: 32,
            grid_w: 32,
            sigma: 1.5,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Config("belief grid must be at least 1x1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub sigma: f64,
    /// One row-major `grid_h x grid_w` grid per joint.
    pub grids: Vec<Vec<f64>>,
}

impl BeliefMap {
    pub fn value(&self, joint: usize, row: usize, col: usize) -> f64 {
        self.grids[joint][row * self.grid_w + col]
    }
}

/// Renders every joint cell by cell.
pub fn render_belief(pose: &Pose, cfg: &RenderConfig) -> Result<BeliefMap> {
    cfg.validate()?;
    check_finite(pose)?;
    let two_var = 2.0 * cfg.sigma * cfg.sigma;
    let grids = pose
        .joints
        .iter()
        .map(|&[u, v]| {
            let mut g = Vec::with_capacity(cfg.grid_h * cfg.grid_w);
            for r in 0..cfg.grid_h {
                let dy = v * cfg.grid_h as f64 - (r as f64 + 0.5);
                for c in 0..cfg.grid_w {
                    let dx = u * cfg.grid_w as f64 - (c as f64 + 0.5);
                    g.push((-(dx * dx + dy * dy) / two_var).exp());
                }
            }
            g
        })
        .collect();
    Ok(BeliefMap {
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        sigma: cfg.sigma,
        grids,
    })
}

fn check_finite(pose: &Pose) -> Result<()> {
    if pose.joints.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("pose coordinate".into()))
    }
}

/// 1-D Gaussian profile along one axis and its derivative with respect to the
/// normalized coordinate.
#[derive(Debug, Clone)]
struct AxisProfile {
    g: Vec<f64>,
    dg: Vec<f64>,
    /// Sum of squares of `g` and its derivative.
    ss: f64,
    dss: f64,
}

impl AxisProfile {
    fn new(coord: f64, cells: usize, sigma: f64) -> Self {
        let scale = cells as f64;
        let pos = coord * scale;
        let inv_var = 1.0 / (sigma * sigma);
        let mut g = vec![0.0; cells];
        // Walk outward from the nearest cell with the ratio recurrence
        // g(c+1)/g(c) = exp(-(2d+1)/(2 sigma^2)), d = c + 1/2 - pos, which keeps
        // values decreasing so underflow only ever flushes to zero.
        let nearest = (pos - 0.5).round().clamp(0.0, (cells - 1) as f64) as usize;
        let d0 = nearest as f64 + 0.5 - pos;
        g[nearest] = (-0.5 * d0 * d0 * inv_var).exp();
        let step = (-inv_var).exp();
        let mut val = g[nearest];
        let mut ratio = (-(2.0 * d0 + 1.0) * 0.5 * inv_var).exp();
        for c in nearest + 1..cells {
            val *= ratio;
            ratio *= step;
            g[c] = val;
        }
        let mut val = g[nearest];
        let mut ratio = (-(-2.0 * d0 + 1.0) * 0.5 * inv_var).exp();
        for c in (0..nearest).rev() {
            val *= ratio;
            ratio *= step;
            g[c] = val;
        }
        let dg: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(c, &gv)| gv * (c as f64 + 0.5 - pos) * inv_var * scale)
            .collect();
        let ss = g.iter().map(|x| x * x).sum();
        let dss = 2.0 * g.iter().zip(&dg).map(|(a, b)| a * b).sum::<f64>();
        AxisProfile { g, dg, ss, dss }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Separable factors of one pose's belief map.
#[derive(Debug, Clone)]
pub struct BeliefProfile {
    cols: Vec<AxisProfile>,
    rows: Vec<AxisProfile>,
}

impl BeliefProfile {
    pub fn new(pose: &Pose, cfg: &RenderConfig) -> Self {
        BeliefProfile {
            cols: pose
                .joints
                .iter()
                .map(|j| AxisProfile::new(j[0], cfg.grid_w, cfg.sigma))
                .collect(),
            rows: pose
                .joints
                .iter()
                .map(|j| AxisProfile::new(j[1], cfg.grid_h, cfg.sigma))
                .collect(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.cols.len()
    }
}

/// The belief-map loss with a fixed rendering configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefLoss {
    pub cfg: RenderConfig,
}

impl BeliefLoss {
    pub fn new(cfg: RenderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(BeliefLoss { cfg })
    }

    fn norm(&self, joints: usize) -> f64 {
        1.0 / (joints * self.cfg.grid_h * self.cfg.grid_w) as f64
    }

    pub fn profile(&self, pose: &Pose) -> BeliefProfile {
        BeliefProfile::new(pose, &self.cfg)
    }

    pub fn profile_loss(&self, a: &BeliefProfile, b: &BeliefProfile) -> f64 {
        let mut total = 0.0;
        for j in 0..a.num_joints() {
            let (ax, ay, bx, by) = (&a.cols[j], &a.rows[j], &b.cols[j], &b.rows[j]);
            let cross = dot(&ax.g, &bx.g) * dot(&ay.g, &by.g);
            total += ax.ss * ay.ss + bx.ss * by.ss - 2.0 * cross;
        }
        (total * self.norm(a.num_joints())).max(0.0)
    }

    /// Adds `scale * dLoss(a, b)/da` to `out` (interleaved coordinates).
    pub fn profile_grad_first(
        &self,
        a: &BeliefProfile,
        b: &BeliefProfile,
        scale: f64,
        out: &mut [f64],
    ) {
        let s = scale * self.norm(a.num_joints());
        for j in 0..a.num_joints() {
            let (ax, ay, bx, by) = (&a.cols[j], &a.rows[j], &b.cols[j], &b.rows[j]);
            let cx = dot(&ax.g, &bx.g);
            let cy = dot(&ay.g, &by.g);
            let dcx = dot(&ax.dg, &bx.g);
            let dcy = dot(&ay.dg, &by.g);
            out[2 * j] += s * (ax.dss * ay.ss - 2.0 * dcx * cy);
            out[2 * j + 1] += s * (ax.ss * ay.dss - 2.0 * cx * dcy);
        }
    }
}

fn check_pair(h1: &Pose, h2: &Pose) -> Result<()> {
    if h1.num_joints() != h2.num_joints() {
        return Err(Error::Shape(format!(
            "poses have {} and {} joints",
            h1.num_joints(),
            h2.num_joints()
        )));
    }
    check_finite(h1)?;
    check_finite(h2)
}

/// Mean squared belief-map difference over all joints and cells.
pub fn delta_loss(h1: &Pose, h2: &Pose, cfg: &RenderConfig) -> Result<f64> {
    check_pair(h1, h2)?;
    let loss = BeliefLoss::new(*cfg)?;
    Ok(loss.profile_loss(&loss.profile(h1), &loss.profile(h2)))
}

/// Gradient of [`delta_loss`] with respect to the coordinates of `h1`.
pub fn delta_grad(h1: &Pose, h2: &Pose, cfg: &RenderConfig) -> Result<Vec<f64>> {
    check_pair(h1, h2)?;
    let loss = BeliefLoss::new(*cfg)?;
    let mut out = vec![0.0; 2 * h1.num_joints()];
    loss.profile_grad_first(&loss.profile(h1), &loss.profile(h2), 1.0, &mut out);
    Ok(out)
}

impl PairwiseLoss for BeliefLoss {
    type Prepared = BeliefProfile;

    fn prepare(&self, pose: &Pose) -> BeliefProfile {
        self.profile(pose)
    }

    fn pair(&self, a: &BeliefProfile, b: &BeliefProfile) -> f64 {
        self.profile_loss(a, b)
    }
}

impl PairwiseLossGrad for BeliefLoss {
    fn add_grad_first(&self, a: &BeliefProfile, b: &BeliefProfile, scale: f64, out: &mut [f64]) {
        self.profile_grad_first(a, b, scale, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PckhResult {
    pub per_joint_accuracy: Vec<f64>,
    pub total: f64,
    pub threshold_tau: f64,
    pub num_samples: usize,
}

/// Euclidean joint displacement divided by the sample's head length.
pub fn normalized_distances(
    predictions: &[Pose],
    ground_truths: &[Pose],
    head_lengths: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if predictions.len() != ground_truths.len() || predictions.len() != head_lengths.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} ground truths, {} head lengths",
            predictions.len(),
            ground_truths.len(),
            head_lengths.len()
        )));
    }
    predictions
        .iter()
        .zip(ground_truths)
        .zip(head_lengths)
        .map(|((p, g), &hl)| {
            if p.num_joints() != g.num_joints() {
                return Err(Error::Shape("joint count mismatch".into()));
            }
            if !(hl.is_finite() && hl > 0.0) {
                return Err(Error::Precondition(format!("head length must be positive, got {hl}")));
            }
            Ok(p.joints
                .iter()
                .zip(&g.joints)
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]) / hl)
                .collect())
        })
        .collect()
}

/// A joint is correct when its displacement is at most `tau` head lengths.
pub fn pckh(
    predictions: &[Pose],
    ground_truths: &[Pose],
    head_lengths: &[f64],
    tau: f64,
) -> Result<PckhResult> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let dists = normalized_distances(predictions, ground_truths, head_lengths)?;
    let n = dists.len();
    if n == 0 {
        return Err(Error::Empty("no samples to score".into()));
    }
    let joints = dists[0].len();
    let mut correct = vec![0usize; joints];
    for row in &dists {
        for (c, &d) in correct.iter_mut().zip(row) {
            if d <= tau {
                *c += 1;
            }
        }
    }
    let per_joint_accuracy: Vec<f64> = correct.iter().map(|&c| c as f64 / n as f64).collect();
    let total = correct.iter().sum::<usize>() as f64 / (n * joints) as f64;
    Ok(PckhResult {
        per_joint_accuracy,
        total,
        threshold_tau: tau,
        num_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RenderConfig {
        RenderConfig::default()
    }

    fn direct_loss(a: &Pose, b: &Pose, cfg: &RenderConfig) -> f64 {
        let ma = render_belief(a, cfg).unwrap();
        let mb = render_belief(b, cfg).unwrap();
        let sum: f64 = ma
            .grids
            .iter()
            .zip(&mb.grids)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
            .sum();
        sum / (a.num_joints() * cfg.grid_h * cfg.grid_w) as f64
    }

    #[test]
    fn joint_on_cell_center_peaks_at_one() {
        let c = cfg();
        let pose = Pose::new(vec![[10.5 / 32.0, 3.5 / 32.0]]).unwrap();
        let m = render_belief(&pose, &c).unwrap();
        assert_eq!(m.value(0, 3, 10), 1.0);
        let prof = BeliefProfile::new(&pose, &c);
        assert_eq!(prof.cols[0].g[10] * prof.rows[0].g[3], 1.0);
    }

    #[test]
    fn one_sigma_away_is_exp_minus_half() {
        let c = RenderConfig {
            grid_h: 16,
            grid_w: 16,
            sigma: 2.0,
        };
        // joint on center of cell (4, 4); cell (4, 6) is two cells = one sigma away
        let pose = Pose::new(vec![[4.5 / 16.0, 4.5 / 16.0]]).unwrap();
        let m = render_belief(&pose, &c).unwrap();
        assert!((m.value(0, 4, 6) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((m.value(0, 4, 6) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn far_joint_renders_to_zero_without_error() {
        let c = RenderConfig {
            grid_h: 64,
            grid_w: 64,
            sigma: 1.5,
        };
        let pose = Pose::new(vec![[10.0, 10.0]]).unwrap();
        let m = render_belief(&pose, &c).unwrap();
        // nearest cell center is (63.5, 63.5) cells, the joint sits at (640, 640)
        let d: f64 = 640.0 - 63.5;
        let oracle = (-(2.0 * d * d) / (2.0 * 1.5 * 1.5)).exp();
        assert!(oracle < 1e-300);
        assert!(m.grids[0].iter().all(|&v| v < 1e-300));
        let l = delta_loss(&pose, &Pose::new(vec![[0.5, 0.5]]).unwrap(), &c).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn non_finite_pose_is_rejected() {
        let p = Pose {
            joints: vec![[f64::NAN, 0.0]],
        };
        assert!(render_belief(&p, &cfg()).is_err());
        assert!(Pose::new(vec![[f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn identical_poses_have_zero_loss_and_gradient() {
        let p = Pose::new(vec![[0.3, 0.7], [0.52, 0.41]]).unwrap();
        assert_eq!(delta_loss(&p, &p, &cfg()).unwrap(), 0.0);
        assert!(delta_grad(&p, &p, &cfg()).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn well_separated_joints_match_direct_sum() {
        let c = cfg();
        let a = Pose::new(vec![[0.2, 0.2]]).unwrap();
        let b = Pose::new(vec![[0.8, 0.8]]).unwrap();
        let m = render_belief(&a, &c).unwrap();
        let s: f64 = m.grids[0].iter().map(|v| v * v).sum();
        let expected = 2.0 * s / (c.grid_h * c.grid_w) as f64;
        let got = delta_loss(&a, &b, &c).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");
    }

    #[test]
    fn joint_count_mismatch_is_an_error() {
        let a = Pose::new(vec![[0.2, 0.2]]).unwrap();
        let b = Pose::new(vec![[0.2, 0.2], [0.1, 0.1]]).unwrap();
        assert!(delta_loss(&a, &b, &cfg()).is_err());
        assert!(delta_grad(&a, &b, &cfg()).is_err());
    }

    #[test]
    fn gradient_is_per_joint_separable() {
        let c = cfg();
        let h1 = Pose::new(vec![[0.4, 0.5], [0.6, 0.3]]).unwrap();
        let h2 = Pose::new(vec![[0.42, 0.47], [0.1, 0.9]]).unwrap();
        let mut h2_moved = h2.clone();
        h2_moved.joints[1] = [0.65, 0.33];
        let g = delta_grad(&h1, &h2, &c).unwrap();
        let g_moved = delta_grad(&h1, &h2_moved, &c).unwrap();
        assert_eq!(g[0..2], g_moved[0..2]);
        assert_ne!(g[2..4], g_moved[2..4]);
    }

    #[test]
    fn pckh_threshold_is_inclusive() {
        let gt = Pose::new(vec![[0.5, 0.5]]).unwrap();
        let near = Pose::new(vec![[0.5 + 0.49 * 0.1, 0.5]]).unwrap();
        let far = Pose::new(vec![[0.5 + 0.51 * 0.1, 0.5]]).unwrap();
        let r = pckh(&[near], &[gt.clone()], &[0.1], 0.5).unwrap();
        assert_eq!(r.total, 1.0);
        let r = pckh(&[far], &[gt.clone()], &[0.1], 0.5).unwrap();
        assert_eq!(r.total, 0.0);
        let exact = Pose::new(vec![[0.75, 0.5]]).unwrap();
        let r = pckh(&[exact], &[gt], &[0.5], 0.5).unwrap();
        assert_eq!(r.total, 1.0);
    }

    #[test]
    fn pckh_perfect_and_mixed_batches() {
        let gts: Vec<Pose> = (0..4)
            .map(|i| Pose::new(vec![[0.1 * i as f64, 0.2], [0.3, 0.4]]).unwrap())
            .collect();
        let hl = vec![0.1; 4];
        assert_eq!(pckh(&gts, &gts, &hl, 0.5).unwrap().total, 1.0);
        // samples 0 and 2 exact, samples 1 and 3 displaced by 0.2 on both joints
        let preds: Vec<Pose> = gts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let off = if i % 2 == 1 { 0.2 } else { 0.0 };
                Pose::new(p.joints.iter().map(|j| [j[0] + off, j[1]]).collect()).unwrap()
            })
            .collect();
        let r = pckh(&preds, &gts, &hl, 0.5).unwrap();
        assert_eq!(r.total, 0.5);
        assert_eq!(r.per_joint_accuracy, vec![0.5, 0.5]);
        assert_eq!(r.num_samples, 4);
        assert!(pckh(&preds[..3], &gts, &hl, 0.5).is_err());
    }

    fn arb_pose(j: usize) -> impl Strategy<Value = Pose> {
        prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2), j)
            .prop_map(|v| Pose::new(v.into_iter().map(|(a, b)| [a, b]).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn loss_is_symmetric_nonnegative_and_matches_direct_sum(
            a in arb_pose(3), b in arb_pose(3)
        ) {
            let c = RenderConfig { grid_h: 16, grid_w: 24, sigma: 1.7 };
            let ab = delta_loss(&a, &b, &c).unwrap();
            let ba = delta_loss(&b, &a, &c).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab >= 0.0);
            let direct = direct_loss(&a, &b, &c);
            prop_assert!((ab - direct).abs() <= 1e-12 * direct.max(1e-3), "{} vs {}", ab, direct);
        }

        #[test]
        fn belief_decreases_with_distance(u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let c = RenderConfig { grid_h: 20, grid_w: 20, sigma: 1.5 };
            let p = Pose::new(vec![[u, v]]).unwrap();
            let m = render_belief(&p, &c).unwrap();
            let mut cells: Vec<(f64, f64)> = (0..400).map(|i| {
                let (r, col) = (i / 20, i % 20);
                let dx = u * 20.0 - (col as f64 + 0.5);
                let dy = v * 20.0 - (r as f64 + 0.5);
                (dx * dx + dy * dy, m.grids[0][i])
            }).collect();
            cells.sort_by(|x, y| x.0.total_cmp(&y.0));
            for w in cells.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 || w[1].0 == w[0].0);
            }
            prop_assert!(cells.iter().all(|c| (0.0..=1.0).contains(&c.1)));
        }

        #[test]
        fn pckh_total_is_order_invariant(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 9;
            let gts: Vec<Pose> = (0..n).map(|_| Pose::new(vec![[rng.gen(), rng.gen()]; 2]).unwrap()).collect();
            let preds: Vec<Pose> = gts.iter().map(|g| Pose::new(g.joints.iter().map(|j| [j[0] + rng.gen_range(-0.1..0.1), j[1]]).collect()).unwrap()).collect();
            let hl: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.15)).collect();
            let base = pckh(&preds, &gts, &hl, 0.5).unwrap().total;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let p2: Vec<Pose> = order.iter().map(|&i| preds[i].clone()).collect();
            let g2: Vec<Pose> = order.iter().map(|&i| gts[i].clone()).collect();
            let h2: Vec<f64> = order.iter().map(|&i| hl[i]).collect();
            prop_assert_eq!(base, pckh(&p2, &g2, &h2, 0.5).unwrap().total);
        }
    }
}
