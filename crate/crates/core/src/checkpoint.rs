//! Text checkpoints: a `key = value` header followed by one parameter value
//! per line, written with 17 significant digits so a load reproduces the
//! parameters bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffnet::{Activation, NetworkParameters};
use crate::error::{Error, Result};
use crate::models::{ConditionalNet, NoiseMode, PredictionNet, Role};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "posedisc-checkpoint";
const END: &str = "end_header";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: Role,
    pub noise: NoiseMode,
    pub num_actions: usize,
    pub seed: u64,
    pub params: NetworkParameters,
}

impl Checkpoint {
    pub fn from_prediction(net: &PredictionNet, num_actions: usize, seed: u64) -> Self {
        Checkpoint {
            role: Role::Prediction,
            noise: net.noise,
            num_actions,
            seed,
            params: net.params.clone(),
        }
    }

    pub fn from_conditional(net: &ConditionalNet, seed: u64) -> Self {
        Checkpoint {
            role: Role::Conditional,
            noise: NoiseMode::Sampled,
            num_actions: net.num_actions(),
            seed,
            params: net.params.clone(),
        }
    }

    pub fn into_prediction(self) -> Result<PredictionNet> {
        if self.role != Role::Prediction {
            return Err(Error::Precondition(format!(
                "role mismatch: expected a prediction checkpoint, found {}",
                self.role
            )));
        }
        PredictionNet::new(self.params, self.noise)
    }

    pub fn into_conditional(self) -> Result<ConditionalNet> {
        if self.role != Role::Conditional {
            return Err(Error::Precondition(format!(
                "role mismatch: expected a conditional checkpoint, found {}",
                self.role
            )));
        }
        ConditionalNet::new(self.params)
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::with_capacity(p.values.len() * 25 + 512);
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "role = {}", self.role);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "activation = {}", p.activation.name());
        let shapes: Vec<String> = p.layer_shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
        let _ = writeln!(s, "layer_shapes = {}", shapes.join(","));
        let _ = writeln!(s, "injection_layer = {}", p.injection_layer);
        let _ = writeln!(s, "num_heads = {}", p.num_heads);
        let _ = writeln!(s, "num_joints = {}", p.num_joints());
        let _ = writeln!(s, "noise_dim = {}", p.noise_dim);
        let _ = writeln!(s, "num_actions = {}", self.num_actions);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "num_values = {}", p.values.len());
        s.push_str(END);
        s.push('\n');
        for v in &p.values {
            let _ = writeln!(s, "{v:.16e}");
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| bad("empty file".into()))?;
        match first.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(bad(format!("unsupported format version {v}"))),
            _ => return Err(bad("not a checkpoint".into())),
        }
        let mut header = BTreeMap::new();
        loop {
            let line = lines.next().ok_or_else(|| bad("missing end_header".into()))?;
            if line == END {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| header.get(k).ok_or_else(|| bad(format!("missing header key '{k}'")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("bad value for '{k}'")))
        };
        let role: Role = get("role")?.parse().map_err(|_| bad("bad role".into()))?;
        let noise: NoiseMode = get("noise")?.parse().map_err(|_| bad("bad noise mode".into()))?;
        let activation = Activation::parse(get("activation")?).ok_or_else(|| bad("bad activation".into()))?;
        let layer_shapes = get("layer_shapes")?
            .split(',')
            .map(|t| {
                let (r, c) = t.split_once('x')?;
                Some((r.parse().ok()?, c.parse().ok()?))
            })
            .collect::<Option<Vec<(usize, usize)>>>()
            .ok_or_else(|| bad("bad layer_shapes".into()))?;
        let seed = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let count = num("num_values")?;
        let values = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(format!("bad parameter value '{l}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != count {
            return Err(bad(format!("expected {count} values, found {}", values.len())));
        }
        let params = NetworkParameters {
            layer_shapes,
            values,
            injection_layer: num("injection_layer")?,
            num_heads: num("num_heads")?,
            noise_dim: num("noise_dim")?,
            activation,
        };
        params.validate().map_err(|e| bad(e.to_string()))?;
        if params.num_joints() != num("num_joints")? {
            return Err(bad("num_joints disagrees with the output layer".into()));
        }
        let ck = Checkpoint {
            role,
            noise,
            num_actions: num("num_actions")?,
            seed,
            params,
        };
        if ck.role == Role::Conditional && ck.params.num_heads != ck.num_actions {
            return Err(bad("conditional checkpoint needs one head per action".into()));
        }
        if ck.role == Role::Prediction && ck.params.num_heads != 1 {
            return Err(bad("prediction checkpoint must have one head".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}
