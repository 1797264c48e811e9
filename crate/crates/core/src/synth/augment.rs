//! Rotation and horizontal-flip augmentation applied to raster and pose together.

use rand::Rng as _;

use super::{Image, Skeleton};
use crate::lossmap::Pose;
use crate::rng::Rng;

pub const MAX_ROTATION_DEG: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Rotation about the image center, degrees (positive turns +x toward +y).
    pub angle_deg: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        angle_deg: 0.0,
        flip: false,
    };

    pub fn sample(rng: &mut Rng) -> Self {
        AugmentParams {
            angle_deg: rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            flip: rng.gen_bool(0.5),
        }
    }
}

fn bilinear(img: &Image, x: f64, y: f64) -> f32 {
    // (x, y) in pixel units with pixel centers at +0.5
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let get = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= img.height as f64 || c >= img.width as f64 {
            0.0
        } else {
            f64::from(img.at(r as usize, c as usize))
        }
    };
    let v = get(y0, x0) * (1.0 - tx) * (1.0 - ty)
        + get(y0, x0 + 1.0) * tx * (1.0 - ty)
        + get(y0 + 1.0, x0) * (1.0 - tx) * ty
        + get(y0 + 1.0, x0 + 1.0) * tx * ty;
    v.clamp(0.0, 1.0) as f32
}

/// Applies a rotation then an optional flip. Joints may leave the unit square.
pub fn augment_with(
    skeleton: &Skeleton,
    image: &Image,
    pose: Option<&Pose>,
    params: AugmentParams,
) -> (Image, Option<Pose>) {
    let (h, w) = (image.height as f64, image.width as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (s, c) = params.angle_deg.to_radians().sin_cos();
    let mut out = image.clone();
    if params.angle_deg != 0.0 {
        for r in 0..image.height {
            for col in 0..image.width {
                let (qx, qy) = (col as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
                // inverse rotation
                let (px, py) = (c * qx + s * qy + cx, -s * qx + c * qy + cy);
                out.pixels[r * image.width + col] = bilinear(image, px, py);
            }
        }
    }
    if params.flip {
        for row in out.pixels.chunks_exact_mut(image.width) {
            row.reverse();
        }
    }
    let pose = pose.map(|p| {
        let mut joints: Vec<[f64; 2]> = p
            .joints
            .iter()
            .map(|&[u, v]| {
                if params.angle_deg == 0.0 {
                    return [u, v];
                }
                let (x, y) = (u * w - cx, v * h - cy);
                [(c * x - s * y + cx) / w, (s * x + c * y + cy) / h]
            })
            .collect();
        if params.flip {
            for j in &mut joints {
                j[0] = 1.0 - j[0];
            }
            for &(l, r) in &skeleton.swap_pairs {
                joints.swap(l, r);
            }
        }
        Pose { joints }
    });
    (out, pose)
}

/// Uniform rotation in [-30, 30] degrees and a fair-coin horizontal flip.
pub fn augment(
    skeleton: &Skeleton,
    image: &Image,
    pose: Option<&Pose>,
    rng: &mut Rng,
) -> (Image, Option<Pose>) {
    augment_with(skeleton, image, pose, AugmentParams::sample(rng))
}
