//! Small SVG exports: per-joint accuracy bars, superimposed pose samples and
//! uncertainty circles. Coordinates are the normalized image frame scaled to
//! a square canvas.

use std::fmt::Write as _;

use crate::eval::COVARIANCE_RIDGE;
use crate::lossmap::Pose;
use crate::synth::skeleton::Skeleton;

const CANVAS: f64 = 240.0;

fn open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn skeleton_lines(out: &mut String, skeleton: &Skeleton, pose: &Pose, stroke: &str, opacity: f64) {
    for (a, b) in skeleton.segments(pose) {
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{stroke}\" stroke-width=\"2\" stroke-opacity=\"{opacity}\"/>",
            a[0] * CANVAS,
            a[1] * CANVAS,
            b[0] * CANVAS,
            b[1] * CANVAS
        );
    }
}

/// Horizontal bars, one per label, with accuracies given as fractions.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let row = 18.0;
    let label_w = 110.0;
    let bar_w = 300.0;
    let height = 30.0 + row * bars.len() as f64 + 10.0;
    let mut s = open(label_w + bar_w + 60.0, height);
    let _ = writeln!(s, "<text x=\"4\" y=\"18\" font-size=\"13\">{}</text>", escape(title));
    for (i, (label, acc)) in bars.iter().enumerate() {
        let y = 30.0 + row * i as f64;
        let w = bar_w * acc.clamp(0.0, 1.0);
        let _ = writeln!(
            s,
            "<text x=\"4\" y=\"{:.1}\" font-size=\"11\">{}</text>",
            y + 12.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{label_w}\" y=\"{y:.1}\" width=\"{w:.2}\" height=\"{:.1}\" fill=\"#4a7ab5\"/>",
            row - 4.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{:.1}</text>",
            label_w + w + 4.0,
            y + 12.0,
            100.0 * acc
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Frame colour for a sample set: green when its expected loss is below
/// `threshold`, blue otherwise.
pub fn frame_colour(expected_loss: f64, threshold: f64) -> &'static str {
    if expected_loss < threshold {
        "green"
    } else {
        "blue"
    }
}

/// All samples drawn faintly, the selected pose on top, inside a coloured frame.
pub fn samples_figure(skeleton: &Skeleton, samples: &[Pose], selected: &Pose, expected_loss: f64, threshold: f64) -> String {
    let mut s = open(CANVAS, CANVAS);
    let _ = writeln!(
        s,
        "<rect x=\"2\" y=\"2\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"4\"/>",
        CANVAS - 4.0,
        CANVAS - 4.0,
        frame_colour(expected_loss, threshold)
    );
    let opacity = (1.0 / samples.len().max(1) as f64).max(0.08);
    for p in samples {
        skeleton_lines(&mut s, skeleton, p, "gray", opacity);
    }
    skeleton_lines(&mut s, skeleton, selected, "black", 1.0);
    s.push_str("</svg>\n");
    s
}

/// Entropy proxy of a point mass under the covariance ridge.
pub fn entropy_floor() -> f64 {
    let tau = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    0.5 * (tau * tau * COVARIANCE_RIDGE * COVARIANCE_RIDGE).ln()
}

/// Radius `scale · (h − floor)` per joint, never below `min_radius`, where
/// `floor` is the proxy of a deterministic joint.
pub fn circle_radii(entropy: &[f64], scale: f64, min_radius: f64) -> Vec<f64> {
    let floor = entropy_floor();
    entropy
        .iter()
        .map(|h| (scale * (h - floor)).max(min_radius))
        .collect()
}

/// Stick figure with a circle of the given radius (normalized units) per joint.
pub fn uncertainty_figure(skeleton: &Skeleton, pose: &Pose, radii: &[f64]) -> String {
    let mut s = open(CANVAS, CANVAS);
    skeleton_lines(&mut s, skeleton, pose, "black", 1.0);
    for (j, r) in pose.joints.iter().zip(radii) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.3}\" fill=\"red\" fill-opacity=\"0.25\" stroke=\"red\"/>",
            j[0] * CANVAS,
            j[1] * CANVAS,
            r * CANVAS
        );
    }
    s.push_str("</svg>\n");
    s
}
