//! Stick-figure skeleton, action prototypes and forward kinematics.
//!
//! The figure faces the camera, so the person's left side is drawn on the
//! image's right. The kinematic root is the pelvis, which is not itself an
//! output joint. Bone angles are relative to the parent bone's direction (the
//! root's reference direction is straight up), so angular jitter accumulates
//! along each chain.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::lossmap::Pose;

pub const HEAD_TOP: usize = 0;
pub const NECK: usize = 1;
pub const L_SHOULDER: usize = 2;
pub const R_SHOULDER: usize = 3;
pub const L_ELBOW: usize = 4;
pub const R_ELBOW: usize = 5;
pub const L_WRIST: usize = 6;
pub const R_WRIST: usize = 7;
pub const L_HIP: usize = 8;
pub const R_HIP: usize = 9;
pub const L_KNEE: usize = 10;
pub const R_KNEE: usize = 11;
pub const L_ANKLE: usize = 12;
pub const R_ANKLE: usize = 13;

pub const JOINT_NAMES: [&str; 14] = [
    "head_top",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
];

/// Parent of a bone: the pelvis root or another joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parent {
    Pelvis,
    Joint(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub parent: Parent,
    pub child: usize,
    pub length: f64,
    /// Index into the free-angle vector, or `None` for a rigid bone.
    pub free_angle: Option<usize>,
    /// Fixed relative angle for rigid bones.
    pub rigid_angle: f64,
}

/// Free angles, in this order.
pub const ANGLE_NAMES: [&str; 10] = [
    "torso", "head", "l_upper_arm", "l_forearm", "r_upper_arm", "r_forearm", "l_thigh", "l_shin",
    "r_thigh", "r_shin",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// Bones in topological order (every parent precedes its children).
    pub bones: Vec<Bone>,
    pub pelvis: [f64; 2],
    /// Left/right joint pairs exchanged by a horizontal flip.
    pub swap_pairs: Vec<(usize, usize)>,
}

impl Default for Skeleton {
    fn default() -> Self {
        let rigid = |parent, child, length, angle| Bone {
            parent,
            child,
            length,
            free_angle: None,
            rigid_angle: angle,
        };
        let free = |parent, child, length, idx| Bone {
            parent,
            child,
            length,
            free_angle: Some(idx),
            rigid_angle: 0.0,
        };
        use Parent::{Joint, Pelvis};
        let bones = vec![
            free(Pelvis, NECK, 0.22, 0),
            free(Joint(NECK), HEAD_TOP, 0.09, 1),
            rigid(Joint(NECK), L_SHOULDER, 0.07, FRAC_PI_2),
            rigid(Joint(NECK), R_SHOULDER, 0.07, -FRAC_PI_2),
            free(Joint(L_SHOULDER), L_ELBOW, 0.11, 2),
            free(Joint(L_ELBOW), L_WRIST, 0.10, 3),
            free(Joint(R_SHOULDER), R_ELBOW, 0.11, 4),
            free(Joint(R_ELBOW), R_WRIST, 0.10, 5),
            rigid(Pelvis, L_HIP, 0.045, FRAC_PI_2),
            rigid(Pelvis, R_HIP, 0.045, -FRAC_PI_2),
            free(Joint(L_HIP), L_KNEE, 0.14, 6),
            free(Joint(L_KNEE), L_ANKLE, 0.13, 7),
            free(Joint(R_HIP), R_KNEE, 0.14, 8),
            free(Joint(R_KNEE), R_ANKLE, 0.13, 9),
        ];
        Skeleton {
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            bones,
            pelvis: [0.5, 0.56],
            swap_pairs: vec![
                (L_SHOULDER, R_SHOULDER),
                (L_ELBOW, R_ELBOW),
                (L_WRIST, R_WRIST),
                (L_HIP, R_HIP),
                (L_KNEE, R_KNEE),
                (L_ANKLE, R_ANKLE),
            ],
        }
    }
}

impl Skeleton {
    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    /// Segments drawn for the figure, including the two pelvis-rooted hip bones.
    pub fn segments<'a>(&'a self, pose: &'a Pose) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + 'a {
        self.bones.iter().map(move |b| {
            let from = match b.parent {
                Parent::Pelvis => self.pelvis_of(pose),
                Parent::Joint(j) => pose.joints[j],
            };
            (from, pose.joints[b.child])
        })
    }

    /// Pelvis location recovered as the midpoint of the hips.
    pub fn pelvis_of(&self, pose: &Pose) -> [f64; 2] {
        let (l, r) = (pose.joints[L_HIP], pose.joints[R_HIP]);
        [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0]
    }

    /// Joint positions for relative angles `angles` (length [`ANGLE_NAMES`]).
    pub fn forward_kinematics(&self, angles: &[f64]) -> Pose {
        let n = self.num_joints();
        let mut pos = vec![[0.0; 2]; n];
        let mut dir = vec![0.0; n];
        let up = -FRAC_PI_2;
        for b in &self.bones {
            let (origin, parent_dir) = match b.parent {
                Parent::Pelvis => (self.pelvis, up),
                Parent::Joint(j) => (pos[j], dir[j]),
            };
            let rel = b.free_angle.map_or(b.rigid_angle, |i| angles[i]);
            let a = parent_dir + rel;
            dir[b.child] = a;
            pos[b.child] = [origin[0] + b.length * a.cos(), origin[1] + b.length * a.sin()];
        }
        Pose { joints: pos }
    }

    /// Length of the neck-to-head-top segment.
    pub fn head_length(pose: &Pose) -> f64 {
        let (a, b) = (pose.joints[NECK], pose.joints[HEAD_TOP]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }
}

/// A limb pose in a mirror-symmetric convention: `raise` is measured from
/// hanging straight down toward the body's outside, `bend` folds the distal
/// segment further in the same rotational sense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limb {
    pub raise: f64,
    pub bend: f64,
}

fn limb(raise_deg: f64, bend_deg: f64) -> Limb {
    Limb {
        raise: raise_deg.to_radians(),
        bend: bend_deg.to_radians(),
    }
}

/// Posture in limb terms; converted to the skeleton's relative angles by
/// [`Posture::angles`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posture {
    pub torso: f64,
    pub head: f64,
    pub l_arm: Limb,
    pub r_arm: Limb,
    pub l_leg: Limb,
    pub r_leg: Limb,
}

impl Posture {
    pub fn angles(&self) -> [f64; 10] {
        // Left limbs hang from a parent pointing to image-right (angle 0), right
        // limbs from one pointing image-left (angle pi); straight down is pi/2.
        let left = |l: Limb| [FRAC_PI_2 - l.raise, -l.bend];
        let right = |l: Limb| [l.raise - FRAC_PI_2, l.bend];
        let [la, lf] = left(self.l_arm);
        let [ra, rf] = right(self.r_arm);
        let [lt, ls] = left(self.l_leg);
        let [rt, rs] = right(self.r_leg);
        [self.torso, self.head, la, lf, ra, rf, lt, ls, rt, rs]
    }

    fn mirrored(&self) -> Self {
        Posture {
            torso: -self.torso,
            head: -self.head,
            l_arm: self.r_arm,
            r_arm: self.l_arm,
            l_leg: self.r_leg,
            r_leg: self.l_leg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrototype {
    pub id: usize,
    pub name: String,
    /// (mixture weight, modal posture)
    pub modes: Vec<(f64, Posture)>,
    /// Standard deviation of the Gaussian jitter on every free angle, radians.
    pub jitter: f64,
}

impl ActionPrototype {
    pub fn weights_valid(&self) -> bool {
        !self.modes.is_empty()
            && self.modes.iter().all(|(w, _)| *w > 0.0)
            && (self.modes.iter().map(|(w, _)| w).sum::<f64>() - 1.0).abs() < 1e-12
    }
}

fn posture(arms: (Limb, Limb), legs: (Limb, Limb)) -> Posture {
    Posture {
        torso: 0.0,
        head: 0.0,
        l_arm: arms.0,
        r_arm: arms.1,
        l_leg: legs.0,
        r_leg: legs.1,
    }
}

/// Built-in action library. Actions 2 and 4 are bimodal (left- or
/// right-handed/footed). Ids past the library reuse it with the arms raised a
/// further 20 degrees per wrap.
pub fn default_prototypes(num_actions: usize, jitter: f64) -> Vec<ActionPrototype> {
    let down = limb(15.0, 10.0);
    let leg = limb(6.0, 0.0);
    let wave = posture((limb(140.0, 40.0), down), (leg, leg));
    let kick = posture((limb(45.0, 10.0), limb(45.0, 10.0)), (limb(70.0, 0.0), leg));
    let library: Vec<(&str, Vec<(f64, Posture)>)> = vec![
        ("stand", vec![(1.0, posture((down, down), (leg, leg)))]),
        (
            "arms_up",
            vec![(1.0, posture((limb(160.0, 10.0), limb(160.0, 10.0)), (limb(8.0, 0.0), limb(8.0, 0.0))))],
        ),
        ("wave", vec![(0.5, wave), (0.5, wave.mirrored())]),
        (
            "squat",
            vec![(1.0, posture((limb(80.0, 0.0), limb(80.0, 0.0)), (limb(55.0, -75.0), limb(55.0, -75.0))))],
        ),
        ("kick", vec![(0.5, kick), (0.5, kick.mirrored())]),
        (
            "t_pose",
            vec![(1.0, posture((limb(90.0, 0.0), limb(90.0, 0.0)), (limb(20.0, 0.0), limb(20.0, 0.0))))],
        ),
    ];
    (0..num_actions)
        .map(|id| {
            let (name, modes) = &library[id % library.len()];
            let wrap = (id / library.len()) as f64;
            let modes = modes
                .iter()
                .map(|&(w, mut p)| {
                    let lift = (20.0 * wrap).to_radians();
                    p.l_arm.raise = (p.l_arm.raise + lift).min(PI);
                    p.r_arm.raise = (p.r_arm.raise + lift).min(PI);
                    (w, p)
                })
                .collect();
            ActionPrototype {
                id,
                name: if wrap > 0.0 {
                    format!("{name}_{}", wrap as usize)
                } else {
                    name.to_string()
                },
                modes,
                jitter,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bones_are_topologically_ordered_tree() {
        let s = Skeleton::default();
        let mut seen = vec![false; s.num_joints()];
        for b in &s.bones {
            if let Parent::Joint(p) = b.parent {
                assert!(seen[p], "parent {p} after child {}", b.child);
            }
            assert!(!seen[b.child], "joint {} has two parents", b.child);
            seen[b.child] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn swap_pairs_match_names() {
        let s = Skeleton::default();
        for &(l, r) in &s.swap_pairs {
            assert_eq!(s.joint_names[l].replacen("l_", "r_", 1), s.joint_names[r]);
        }
    }

    #[test]
    fn standing_figure_is_upright_and_mirror_symmetric() {
        let s = Skeleton::default();
        let p = s.forward_kinematics(&default_prototypes(1, 0.0)[0].modes[0].1.angles());
        assert!(p.joints[HEAD_TOP][1] < p.joints[NECK][1]);
        assert!(p.joints[NECK][1] < p.joints[L_ANKLE][1]);
        for &(l, r) in &s.swap_pairs {
            assert!((p.joints[l][0] - 0.5 + (p.joints[r][0] - 0.5)).abs() < 1e-12);
            assert!((p.joints[l][1] - p.joints[r][1]).abs() < 1e-12);
            assert!(p.joints[l][0] > 0.5, "left side drawn on image right");
        }
        assert!((Skeleton::head_length(&p) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn mixture_weights_are_valid() {
        for p in default_prototypes(9, 0.1) {
            assert!(p.weights_valid(), "{}", p.name);
        }
    }
}
