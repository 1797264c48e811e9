//! Dataset archive.
//!
//! One file: a UTF-8 manifest of `key = value` lines opened by the line
//! `posedisc-dataset 1` and closed by `end_manifest`, followed immediately by
//! one binary record per sample in index order. All binary values are
//! little-endian:
//!
//! ```text
//! u32  action id
//! u8   flags (bit 0: pose present)
//! f64  head length            (only when the pose is present)
//! f64  u, v for each joint    (only when the pose is present)
//! f32  raster, row-major, image_height * image_width values
//! ```
//!
//! Index lists (`train`, `val`, `test`, `strong`, `weak`) are comma-separated.
//! Weak training samples carry no pose.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{DatasetMeta, DiverseDataset, Image, Sample, Skeleton, Splits};
use crate::error::{Error, Result};
use crate::lossmap::Pose;

const MAGIC: &str = "posedisc-dataset 1";
const END: &str = "end_manifest\n";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn bones_field(sk: &Skeleton) -> String {
    sk.bones
        .iter()
        .map(|b| {
            let parent = match b.parent {
                super::skeleton::Parent::Pelvis => "pelvis",
                super::skeleton::Parent::Joint(j) => sk.joint_names[j].as_str(),
            };
            format!("{parent}>{}:{:?}", sk.joint_names[b.child], b.length)
        })
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode_dataset(d: &DiverseDataset) -> Vec<u8> {
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "num_samples = {}", d.samples.len());
    let _ = writeln!(m, "num_actions = {}", d.num_actions);
    let _ = writeln!(m, "num_joints = {}", d.num_joints());
    let _ = writeln!(m, "image_height = {}", d.image_height);
    let _ = writeln!(m, "image_width = {}", d.image_width);
    let _ = writeln!(m, "seed = {}", d.meta.seed);
    let _ = writeln!(m, "samples_per_action = {}", d.meta.samples_per_action);
    let _ = writeln!(m, "jitter = {:?}", d.meta.jitter);
    let _ = writeln!(m, "back_view = {:?}", d.meta.back_view);
    let _ = writeln!(m, "strong_fraction = {:?}", d.meta.strong_fraction);
    let _ = writeln!(m, "joint_names = {}", d.skeleton.joint_names.join(","));
    let _ = writeln!(m, "bones = {}", bones_field(&d.skeleton));
    let _ = writeln!(m, "train = {}", join(&d.splits.train));
    let _ = writeln!(m, "val = {}", join(&d.splits.val));
    let _ = writeln!(m, "test = {}", join(&d.splits.test));
    let _ = writeln!(m, "strong = {}", join(&d.strong));
    let _ = writeln!(m, "weak = {}", join(&d.weak));
    m.push_str(END);
    let mut out = m.into_bytes();
    for s in &d.samples {
        out.extend_from_slice(&(s.action as u32).to_le_bytes());
        match (&s.pose, s.head_length) {
            (Some(p), Some(hl)) => {
                out.push(1);
                out.extend_from_slice(&hl.to_le_bytes());
                for v in p.joints.iter().flatten() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            _ => out.push(0),
        }
        for px in &s.image.pixels {
            out.extend_from_slice(&px.to_le_bytes());
        }
    }
    out
}

pub fn write_dataset(path: &Path, d: &DiverseDataset) -> Result<()> {
    std::fs::write(path, encode_dataset(d)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated sample records"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<DiverseDataset> {
    let end = bytes
        .windows(END.len())
        .position(|w| w == END.as_bytes())
        .ok_or_else(|| Error::format(path, "missing end_manifest"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::format(path, "not a posedisc dataset (bad header)"));
    }
    let mut kv = BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::format(path, format!("bad manifest line '{line}'")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| Error::format(path, format!("missing key '{k}'")));
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(path, format!("bad integer for '{k}'")))
    };
    let float = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(path, format!("bad number for '{k}'")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        let v = get(k)?;
        if v.is_empty() {
            return Ok(vec![]);
        }
        v.split(',')
            .map(|x| x.parse().map_err(|_| Error::format(path, format!("bad index in '{k}'"))))
            .collect()
    };
    let n = num("num_samples")? as usize;
    let num_actions = num("num_actions")? as usize;
    let joints = num("num_joints")? as usize;
    let (h, w) = (num("image_height")? as usize, num("image_width")? as usize);
    let skeleton = Skeleton::default();
    if get("joint_names")? != &skeleton.joint_names.join(",") || get("bones")? != &bones_field(&skeleton) {
        return Err(Error::format(path, "unsupported skeleton"));
    }
    if joints != skeleton.num_joints() {
        return Err(Error::format(path, "joint count disagrees with skeleton"));
    }
    let mut cur = Cursor {
        bytes,
        pos: end + END.len(),
        path,
    };
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let action = cur.u32()? as usize;
        if action >= num_actions {
            return Err(Error::format(path, format!("action id {action} out of range")));
        }
        let flags = cur.take(1)?[0];
        let (pose, head_length) = if flags & 1 == 1 {
            let hl = cur.f64()?;
            let coords = (0..2 * joints).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            (Some(Pose::from_flat(&coords)?), Some(hl))
        } else {
            (None, None)
        };
        let pixels = (0..h * w).map(|_| cur.f32()).collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            image: Image::new(h, w, pixels)?,
            action,
            pose,
            head_length,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after sample records"));
    }
    let splits = Splits {
        train: list("train")?,
        val: list("val")?,
        test: list("test")?,
    };
    let strong = list("strong")?;
    let weak = list("weak")?;
    if splits.train.iter().chain(&splits.val).chain(&splits.test).any(|&i| i >= n) {
        return Err(Error::format(path, "split index out of range"));
    }
    if strong.iter().any(|i| weak.binary_search(i).is_ok()) {
        return Err(Error::format(path, "strong and weak sets overlap"));
    }
    Ok(DiverseDataset {
        meta: DatasetMeta {
            seed: num("seed")?,
            samples_per_action: num("samples_per_action")? as usize,
            jitter: float("jitter")?,
            back_view: float("back_view")?,
            strong_fraction: float("strong_fraction")?,
        },
        skeleton,
        num_actions,
        image_height: h,
        image_width: w,
        samples,
        splits,
        strong,
        weak,
        warnings: vec![],
    })
}

pub fn read_dataset(path: &Path) -> Result<DiverseDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_benchmark, GenConfig};

    #[test]
    fn archive_round_trip() {
        let d = build_benchmark(
            &GenConfig {
                num_actions: 2,
                samples_per_action: 10,
                image_height: 12,
                image_width: 16,
                jitter: 0.2,
                back_view: 0.3,
                seed: 9,
            },
            0.5,
        )
        .unwrap();
        let bytes = encode_dataset(&d);
        let back = decode_dataset(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.samples, d.samples);
        assert_eq!(back.splits, d.splits);
        assert_eq!(back.strong, d.strong);
        assert_eq!(back.weak, d.weak);
        assert_eq!(back.meta, d.meta);
        assert_eq!(encode_dataset(&back), bytes);
        assert!(decode_dataset(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode_dataset(b"garbage", Path::new("mem")).is_err());
    }
}
