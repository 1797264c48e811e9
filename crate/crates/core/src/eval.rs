//! MEU prediction, PCKh evaluation tables and per-joint uncertainty.

use std::fmt::Write as _;

use crate::diffnet::{forward, NoiseVector};
use crate::error::{Error, Result};
use crate::lossmap::{normalized_distances, pckh, PckhResult, Pose};
use crate::models::{sample_poses, Inference, PoseSampler};
use crate::objective::{PairwiseLoss, SampleSet};
use crate::rng::Stream;
use crate::synth::skeleton::*;
use crate::synth::{DiverseDataset, Image};

/// Index of the sample with the smallest summed loss to all samples; ties go
/// to the lowest index.
pub fn meu_index<L: PairwiseLoss>(poses: &[Pose], loss: &L) -> Result<usize> {
    if poses.is_empty() {
        return Err(Error::Empty("sample set".into()));
    }
    let prepared: Vec<_> = poses.iter().map(|p| loss.prepare(p)).collect();
    let mut best = (0, f64::INFINITY);
    for (k, a) in prepared.iter().enumerate() {
        let total: f64 = prepared.iter().map(|b| loss.pair(a, b)).sum();
        if total < best.1 {
            best = (k, total);
        }
    }
    Ok(best.0)
}

pub fn meu_predict<L: PairwiseLoss>(samples: &SampleSet, loss: &L) -> Result<(Pose, usize)> {
    let k = meu_index(&samples.poses, loss)?;
    Ok((samples.poses[k].clone(), k))
}

/// Point prediction for one image.
pub fn predict<L: PairwiseLoss>(
    net: &impl PoseSampler,
    image: &Image,
    action: Option<usize>,
    inference: Inference,
    stream: Stream,
    loss: &L,
) -> Result<Pose> {
    match inference {
        Inference::ZeroNoise => {
            let head = net.head(action)?;
            let z = NoiseVector::zeros(net.params().noise_dim);
            Ok(forward(net.params(), image, &z, head)?.0)
        }
        Inference::Meu { k } => {
            let set = sample_poses(net, image, action, k, stream)?;
            Ok(meu_predict(&set, loss)?.0)
        }
    }
}

/// Stream for the evaluation noise of dataset sample `index`.
pub fn eval_stream(seed: u64, index: usize) -> Stream {
    Stream::named(seed, "eval").child(index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub indices: Vec<usize>,
    pub predictions: Vec<Pose>,
    /// Per sample, per joint distance in head lengths.
    pub distances: Vec<Vec<f64>>,
    pub pckh: PckhResult,
}

/// Scores predictions on `indices`, which must carry ground-truth poses. When
/// `with_actions` is set the true action is passed to the network.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<L: PairwiseLoss>(
    net: &impl PoseSampler,
    dataset: &DiverseDataset,
    indices: &[usize],
    with_actions: bool,
    inference: Inference,
    tau: f64,
    seed: u64,
    loss: &L,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let mut predictions = Vec::with_capacity(indices.len());
    let mut gts = Vec::with_capacity(indices.len());
    let mut hls = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &dataset.samples[i];
        let action = with_actions.then_some(s.action);
        predictions.push(predict(net, &s.image, action, inference, eval_stream(seed, i), loss)?);
        gts.push(dataset.pose(i)?.clone());
        hls.push(dataset.head_length(i)?);
    }
    let distances = normalized_distances(&predictions, &gts, &hls)?;
    let pckh = pckh(&predictions, &gts, &hls, tau)?;
    Ok(Evaluation {
        indices: indices.to_vec(),
        predictions,
        distances,
        pckh,
    })
}

/// Column groups of the results table.
pub const TABLE_GROUPS: [(&str, &[usize]); 7] = [
    ("Head", &[HEAD_TOP, NECK]),
    ("Sho.", &[L_SHOULDER, R_SHOULDER]),
    ("Elb.", &[L_ELBOW, R_ELBOW]),
    ("Wri.", &[L_WRIST, R_WRIST]),
    ("Hip", &[L_HIP, R_HIP]),
    ("Knee", &[L_KNEE, R_KNEE]),
    ("Ank.", &[L_ANKLE, R_ANKLE]),
];

/// Group accuracies in table order, followed by the total, in percent.
pub fn table_row(result: &PckhResult) -> Result<Vec<f64>> {
    if result.per_joint_accuracy.len() != JOINT_NAMES.len() {
        return Err(Error::Shape(format!(
            "table needs {} joints, result has {}",
            JOINT_NAMES.len(),
            result.per_joint_accuracy.len()
        )));
    }
    let mut row: Vec<f64> = TABLE_GROUPS
        .iter()
        .map(|(_, js)| 100.0 * js.iter().map(|&j| result.per_joint_accuracy[j]).sum::<f64>() / js.len() as f64)
        .collect();
    row.push(100.0 * result.total);
    Ok(row)
}

/// Results table: a threshold column naming `PCKh@tau`, the joint groups, and the total.
pub fn table_csv(rows: &[(String, PckhResult)]) -> Result<String> {
    let tau = rows.first().map_or(0.5, |r| r.1.threshold_tau);
    let mut s = format!("PCKh@{tau}");
    for (name, _) in TABLE_GROUPS {
        let _ = write!(s, ",{name}");
    }
    s.push_str(",Total\n");
    for (label, r) in rows {
        s.push_str(label);
        for v in table_row(r)? {
            let _ = write!(s, ",{v:.2}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Accuracy of every joint and the total, one row each.
pub fn per_joint_csv(result: &PckhResult, names: &[String]) -> String {
    let mut s = format!("joint,pckh@{}\n", result.threshold_tau);
    for (n, a) in names.iter().zip(&result.per_joint_accuracy) {
        let _ = writeln!(s, "{n},{:.4}", 100.0 * a);
    }
    let _ = writeln!(s, "total,{:.4}", 100.0 * result.total);
    s
}

/// Total accuracy as a function of the normalized distance threshold.
pub fn pckh_curve(distances: &[Vec<f64>], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let all: Vec<f64> = distances.iter().flatten().copied().collect();
    thresholds
        .iter()
        .map(|&t| {
            let hit = all.iter().filter(|&&d| d <= t).count();
            (t, if all.is_empty() { 0.0 } else { hit as f64 / all.len() as f64 })
        })
        .collect()
}

pub fn pckh_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("normalized_distance,accuracy\n");
    for (t, a) in curve {
        let _ = writeln!(s, "{t:.3},{a:.6}");
    }
    s
}

/// Per-joint spread of a network's samples, averaged over images.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub k: usize,
    pub num_images: usize,
    pub mean_pairwise_distance: Vec<f64>,
    /// `0.5 ln((2 pi e)^2 det(Sigma + 1e-8 I))` of the per-joint sample covariance.
    pub entropy: Vec<f64>,
}

pub const COVARIANCE_RIDGE: f64 = 1e-8;

/// Spread statistics of one joint's samples: (mean pairwise distance, entropy proxy).
pub fn joint_spread(points: &[[f64; 2]]) -> (f64, f64) {
    let k = points.len();
    let mut dist = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            dist += (points[a][0] - points[b][0]).hypot(points[a][1] - points[b][1]);
        }
    }
    let pairs = (k * (k - 1) / 2).max(1) as f64;
    let n = k as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let d = (n - 1.0).max(1.0);
    let (sxx, syy, sxy) = (sxx / d + COVARIANCE_RIDGE, syy / d + COVARIANCE_RIDGE, sxy / d);
    let det = (sxx * syy - sxy * sxy).max(COVARIANCE_RIDGE * COVARIANCE_RIDGE);
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    (dist / pairs, 0.5 * (two_pi_e * two_pi_e * det).ln())
}

/// Draws `k` samples per image (noise stream `stream.child(position)`).
pub fn uncertainty_report(
    net: &impl PoseSampler,
    images: &[(&Image, Option<usize>)],
    k: usize,
    stream: Stream,
) -> Result<UncertaintyReport> {
    if k < 2 {
        return Err(Error::Precondition("uncertainty needs K >= 2".into()));
    }
    if images.is_empty() {
        return Err(Error::Empty("no images".into()));
    }
    let j = net.params().num_joints();
    let mut dist = vec![0.0; j];
    let mut ent = vec![0.0; j];
    for (n, (img, action)) in images.iter().enumerate() {
        let set = sample_poses(net, img, *action, k, stream.child(n as u64))?;
        for jj in 0..j {
            let pts: Vec<[f64; 2]> = set.poses.iter().map(|p| p.joints[jj]).collect();
            let (d, e) = joint_spread(&pts);
            dist[jj] += d;
            ent[jj] += e;
        }
    }
    let m = images.len() as f64;
    Ok(UncertaintyReport {
        k,
        num_images: images.len(),
        mean_pairwise_distance: dist.iter().map(|d| d / m).collect(),
        entropy: ent.iter().map(|e| e / m).collect(),
    })
}

impl UncertaintyReport {
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("joint,mean_pairwise_distance,entropy_proxy\n");
        for ((n, d), e) in names.iter().zip(&self.mean_pairwise_distance).zip(&self.entropy) {
            let _ = writeln!(s, "{n},{d:.8e},{e:.8e}");
        }
        s
    }
}
