//! Small fully connected network with an explicit noise-injection point.
//!
//! Layer `l` maps activation `a_l` to `a_{l+1}`; `a_0` is the flattened image and
//! `a_L` the `2J` pose coordinates. The noise vector is concatenated to the
//! hidden activation `a_inj` before it enters layer `inj`. Layers before `inj`
//! form the trunk, which is shared by every head; layers from `inj` onward are
//! owned by a head. A prediction network has one head, a conditional network
//! has one head per action and only the selected head is ever evaluated.
//!
//! Parameter layout in `values`: trunk layers in order, then each head's layers
//! in order. Every layer stores its row-major `rows x cols` weight matrix
//! followed by its `rows` biases.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::lossmap::Pose;
use crate::rng::Rng;
use crate::synth::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Architecture description used to build parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub noise_dim: usize,
    pub num_joints: usize,
    /// Index of the hidden activation (1-based layer input) that receives the noise.
    pub injection_layer: usize,
    pub activation: Activation,
}

impl Architecture {
    /// Flattened image, two tanh hidden layers, noise entering the second one.
    pub fn toy(image_height: usize, image_width: usize, num_joints: usize) -> Self {
        Architecture {
            input_dim: image_height * image_width,
            hidden: vec![128, 64],
            noise_dim: 16,
            num_joints,
            injection_layer: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(2 * self.num_joints);
        (0..dims.len() - 1)
            .map(|l| {
                let extra = if l == self.injection_layer {
                    self.noise_dim
                } else {
                    0
                };
                (dims[l + 1], dims[l] + extra)
            })
            .collect()
    }
}

/// Flat parameter vector plus the metadata needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub layer_shapes: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    pub injection_layer: usize,
    pub num_heads: usize,
    pub noise_dim: usize,
    pub activation: Activation,
}

fn layer_len((rows, cols): (usize, usize)) -> usize {
    rows * cols + rows
}

impl NetworkParameters {
    pub fn zeros(arch: &Architecture, num_heads: usize) -> Result<Self> {
        let layer_shapes = arch.layer_shapes();
        let mut p = NetworkParameters {
            layer_shapes,
            values: Vec::new(),
            injection_layer: arch.injection_layer,
            num_heads,
            noise_dim: arch.noise_dim,
            activation: arch.activation,
        };
        p.values = vec![0.0; p.expected_len()];
        p.validate()?;
        Ok(p)
    }

    /// Weights uniform on `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`, biases zero.
    /// Each head is initialized independently.
    pub fn init(arch: &Architecture, num_heads: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(arch, num_heads)?;
        for l in 0..p.layer_shapes.len() {
            let heads = if l < p.injection_layer { 1 } else { num_heads };
            for h in 0..heads {
                let (rows, cols) = p.layer_shapes[l];
                let s = (6.0 / (rows + cols) as f64).sqrt();
                let w = p.weight_range(l, h);
                for v in &mut p.values[w] {
                    *v = rng.gen_range(-s..s);
                }
            }
        }
        Ok(p)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_shapes.len()
    }

    pub fn num_joints(&self) -> usize {
        self.layer_shapes.last().map_or(0, |s| s.0 / 2)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes.first().map_or(0, |s| s.1)
    }

    fn trunk_len(&self) -> usize {
        self.layer_shapes[..self.injection_layer]
            .iter()
            .map(|&s| layer_len(s))
            .sum()
    }

    fn head_len(&self) -> usize {
        self.layer_shapes[self.injection_layer..]
            .iter()
            .map(|&s| layer_len(s))
            .sum()
    }

    pub fn expected_len(&self) -> usize {
        self.trunk_len() + self.num_heads * self.head_len()
    }

    /// Indices of the shared trunk parameters.
    pub fn trunk_range(&self) -> Range<usize> {
        0..self.trunk_len()
    }

    /// Indices of the parameters owned by `head`.
    pub fn head_range(&self, head: usize) -> Range<usize> {
        let start = self.trunk_len() + head * self.head_len();
        start..start + self.head_len()
    }

    fn layer_offset(&self, layer: usize, head: usize) -> usize {
        if layer < self.injection_layer {
            self.layer_shapes[..layer].iter().map(|&s| layer_len(s)).sum()
        } else {
            self.head_range(head).start
                + self.layer_shapes[self.injection_layer..layer]
                    .iter()
                    .map(|&s| layer_len(s))
                    .sum::<usize>()
        }
    }

    /// Weight block of `layer` (for head-owned layers, the copy owned by `head`).
    pub fn weight_range(&self, layer: usize, head: usize) -> Range<usize> {
        let off = self.layer_offset(layer, head);
        let (rows, cols) = self.layer_shapes[layer];
        off..off + rows * cols
    }

    pub fn bias_range(&self, layer: usize, head: usize) -> Range<usize> {
        let off = self.layer_offset(layer, head);
        let (rows, cols) = self.layer_shapes[layer];
        off + rows * cols..off + rows * cols + rows
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_shapes.len();
        if n < 2 {
            return Err(Error::Shape("network needs at least two layers".into()));
        }
        if self.injection_layer == 0 || self.injection_layer >= n {
            return Err(Error::Shape(format!(
                "injection layer {} is not a hidden layer of a {n}-layer network",
                self.injection_layer
            )));
        }
        for l in 1..n {
            let extra = if l == self.injection_layer {
                self.noise_dim
            } else {
                0
            };
            if self.layer_shapes[l].1 != self.layer_shapes[l - 1].0 + extra {
                return Err(Error::Shape(format!("layer {l} input width mismatch")));
            }
        }
        if self.layer_shapes[n - 1].0 % 2 != 0 {
            return Err(Error::Shape("output width must be 2J".into()));
        }
        if self.num_heads == 0 {
            return Err(Error::Shape("network needs at least one head".into()));
        }
        if self.values.len() != self.expected_len() {
            return Err(Error::Shape(format!(
                "{} values for layer shapes implying {}",
                self.values.len(),
                self.expected_len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(())
    }

    fn resolve_head(&self, head: Option<usize>) -> Result<usize> {
        match (self.num_heads, head) {
            (1, None) => Ok(0),
            (n, Some(h)) if n > 1 && h < n => Ok(h),
            (n, h) => Err(Error::InvalidHead { head: h, num_heads: n }),
        }
    }

    /// Overwrites every head with a copy of head 0 of `source`, which must share
    /// this network's layer shapes.
    pub fn copy_from_single_head(&mut self, source: &NetworkParameters) -> Result<()> {
        if source.layer_shapes != self.layer_shapes || source.injection_layer != self.injection_layer
        {
            return Err(Error::Shape("architectures differ".into()));
        }
        let trunk = self.trunk_range();
        self.values[trunk.clone()].copy_from_slice(&source.values[trunk]);
        let src = source.head_range(0);
        for h in 0..self.num_heads {
            let dst = self.head_range(h);
            self.values[dst].copy_from_slice(&source.values[src.clone()]);
        }
        Ok(())
    }
}

/// Uniform noise on `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn sample(dim: usize, rng: &mut Rng) -> Self {
        NoiseVector((0..dim).map(|_| rng.gen::<f64>()).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        NoiseVector(vec![0.0; dim])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| (0.0..1.0).contains(v)) {
            Ok(NoiseVector(values))
        } else {
            Err(Error::Precondition("noise components must lie in [0, 1)".into()))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Trunk activations for one image; shared by every sample drawn for it.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    /// Nonzero input pixels as (index, value).
    input: Vec<(usize, f64)>,
    /// `acts[l]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl TrunkCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |a| a.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub trunk: Arc<TrunkCache>,
    pub noise: NoiseVector,
    pub head: usize,
    /// Input of the injection layer (trunk output followed by noise).
    injected: Vec<f64>,
    /// Outputs of each head-owned layer; the last one is the pose.
    acts: Vec<Vec<f64>>,
    fingerprint: (usize, usize),
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b[i] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

pub fn forward_trunk(params: &NetworkParameters, image: &Image) -> Result<Arc<TrunkCache>> {
    if image.pixels.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "image has {} pixels, network expects {}",
            image.pixels.len(),
            params.input_dim()
        )));
    }
    let input: Vec<(usize, f64)> = image
        .pixels
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, &p)| (i, f64::from(p)))
        .collect();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(params.injection_layer);
    for l in 0..params.injection_layer {
        let (rows, cols) = params.layer_shapes[l];
        let w = &params.values[params.weight_range(l, 0)];
        let b = &params.values[params.bias_range(l, 0)];
        let mut out = vec![0.0; rows];
        if l == 0 {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &w[i * cols..(i + 1) * cols];
                *o = b[i] + input.iter().map(|&(j, x)| row[j] * x).sum::<f64>();
            }
        } else {
            dense(w, b, &acts[l - 1], &mut out);
        }
        for o in &mut out {
            *o = params.activation.apply(*o);
        }
        acts.push(out);
    }
    Ok(Arc::new(TrunkCache { input, acts }))
}

pub fn forward_head(
    params: &NetworkParameters,
    trunk: &Arc<TrunkCache>,
    z: &NoiseVector,
    head: Option<usize>,
) -> Result<(Pose, ForwardCache)> {
    let head = params.resolve_head(head)?;
    if z.len() != params.noise_dim {
        return Err(Error::Shape(format!(
            "noise has {} components, network expects {}",
            z.len(),
            params.noise_dim
        )));
    }
    let mut injected = Vec::with_capacity(trunk.output().len() + z.len());
    injected.extend_from_slice(trunk.output());
    injected.extend_from_slice(z.as_slice());
    let n = params.num_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n - params.injection_layer);
    for l in params.injection_layer..n {
        let rows = params.layer_shapes[l].0;
        let w = &params.values[params.weight_range(l, head)];
        let b = &params.values[params.bias_range(l, head)];
        let mut out = vec![0.0; rows];
        dense(w, b, acts.last().unwrap_or(&injected), &mut out);
        if l + 1 < n {
            for o in &mut out {
                *o = params.activation.apply(*o);
            }
        }
        acts.push(out);
    }
    let pose = Pose::from_flat(acts.last().expect("at least one head layer"))?;
    Ok((
        pose,
        ForwardCache {
            trunk: Arc::clone(trunk),
            noise: z.clone(),
            head,
            injected,
            acts,
            fingerprint: (params.values.len(), params.num_heads),
        },
    ))
}

/// Evaluates the network on one image and noise draw.
pub fn forward(
    params: &NetworkParameters,
    image: &Image,
    z: &NoiseVector,
    head: Option<usize>,
) -> Result<(Pose, ForwardCache)> {
    params.resolve_head(head)?;
    let trunk = forward_trunk(params, image)?;
    forward_head(params, &trunk, z, head)
}

fn check_cache(params: &NetworkParameters, cache: &ForwardCache) -> Result<()> {
    if cache.fingerprint != (params.values.len(), params.num_heads)
        || cache.acts.len() != params.num_layers() - params.injection_layer
    {
        return Err(Error::Shape("cache was produced by a different network".into()));
    }
    Ok(())
}

/// Backpropagates through the head-owned layers, adding parameter gradients to
/// `grad` and the gradient with respect to the trunk output to `trunk_delta`.
pub fn backward_head(
    params: &NetworkParameters,
    cache: &ForwardCache,
    dl_dpose: &[f64],
    grad: &mut [f64],
    trunk_delta: &mut [f64],
) -> Result<()> {
    check_cache(params, cache)?;
    let n = params.num_layers();
    if dl_dpose.len() != params.layer_shapes[n - 1].0 {
        return Err(Error::Shape("pose gradient length mismatch".into()));
    }
    if grad.len() != params.values.len() || trunk_delta.len() != cache.trunk.output().len() {
        return Err(Error::Shape("gradient buffer length mismatch".into()));
    }
    let inj = params.injection_layer;
    let mut delta = dl_dpose.to_vec();
    for l in (inj..n).rev() {
        let (rows, cols) = params.layer_shapes[l];
        let input = if l == inj {
            &cache.injected
        } else {
            &cache.acts[l - inj - 1]
        };
        let wr = params.weight_range(l, cache.head);
        let br = params.bias_range(l, cache.head);
        let w = &params.values[wr.clone()];
        let gw = &mut grad[wr];
        for i in 0..rows {
            let d = delta[i];
            if d == 0.0 {
                continue;
            }
            for (g, x) in gw[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                *g += d * x;
            }
        }
        for (g, d) in grad[br].iter_mut().zip(&delta) {
            *g += d;
        }
        let mut prev = vec![0.0; cols];
        for i in 0..rows {
            let d = delta[i];
            if d == 0.0 {
                continue;
            }
            for (p, wv) in prev.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                *p += d * wv;
            }
        }
        if l == inj {
            for (t, p) in trunk_delta.iter_mut().zip(&prev) {
                *t += p;
            }
        } else {
            let a = &cache.acts[l - inj - 1];
            for (p, &av) in prev.iter_mut().zip(a) {
                *p *= params.activation.slope(av);
            }
            delta = prev;
        }
    }
    Ok(())
}

/// Backpropagates a gradient with respect to the trunk output into the trunk
/// parameters.
pub fn backward_trunk(
    params: &NetworkParameters,
    trunk: &TrunkCache,
    trunk_delta: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if trunk_delta.len() != trunk.output().len() || grad.len() != params.values.len() {
        return Err(Error::Shape("trunk gradient length mismatch".into()));
    }
    let mut delta: Vec<f64> = trunk_delta
        .iter()
        .zip(trunk.output())
        .map(|(d, &a)| d * params.activation.slope(a))
        .collect();
    for l in (0..params.injection_layer).rev() {
        let (rows, cols) = params.layer_shapes[l];
        let wr = params.weight_range(l, 0);
        let br = params.bias_range(l, 0);
        {
            let gw = &mut grad[wr.clone()];
            if l == 0 {
                for (i, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[i * cols..(i + 1) * cols];
                    for &(j, x) in &trunk.input {
                        row[j] += d * x;
                    }
                }
            } else {
                let input = &trunk.acts[l - 1];
                for (i, &d) in delta.iter().enumerate() {
                    for (g, x) in gw[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
        }
        for (g, d) in grad[br].iter_mut().zip(&delta) {
            *g += d;
        }
        if l > 0 {
            let w = &params.values[wr];
            let a = &trunk.acts[l - 1];
            let mut prev = vec![0.0; cols];
            for i in 0..rows {
                for (p, wv) in prev.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                    *p += delta[i] * wv;
                }
            }
            for (p, &av) in prev.iter_mut().zip(a) {
                *p *= params.activation.slope(av);
            }
            delta = prev;
        }
    }
    Ok(())
}

/// Exact gradient of a scalar loss whose derivative with respect to the pose
/// coordinates is `dl_dpose`.
pub fn backward(params: &NetworkParameters, cache: &ForwardCache, dl_dpose: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.values.len()];
    let mut trunk_delta = vec![0.0; cache.trunk.output().len()];
    backward_head(params, cache, dl_dpose, &mut grad, &mut trunk_delta)?;
    backward_trunk(params, &cache.trunk, &trunk_delta, &mut grad)?;
    Ok(grad)
}

/// Adds the gradients of several samples to `grad`. Samples that share a trunk
/// cache (the usual case, K draws for one image) backpropagate through the
/// trunk once with their summed trunk-output gradient.
pub fn accumulate_backward(
    params: &NetworkParameters,
    caches: &[ForwardCache],
    dl_dposes: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<()> {
    if caches.len() != dl_dposes.len() {
        return Err(Error::Shape("one pose gradient per cache required".into()));
    }
    let mut start = 0;
    while start < caches.len() {
        let trunk = &caches[start].trunk;
        let mut end = start + 1;
        while end < caches.len() && Arc::ptr_eq(&caches[end].trunk, trunk) {
            end += 1;
        }
        let mut trunk_delta = vec![0.0; trunk.output().len()];
        for (cache, d) in caches[start..end].iter().zip(&dl_dposes[start..end]) {
            backward_head(params, cache, d, grad, &mut trunk_delta)?;
        }
        backward_trunk(params, trunk, &trunk_delta, grad)?;
        start = end;
    }
    Ok(())
}

/// Compares [`backward`] against central differences of `loss` for the
/// parameters in `indices` (every parameter when `None`). Returns the maximum
/// relative error `|a - b| / max(|a|, |b|, 1e-12)`.
///
/// `loss` maps a pose to the scalar loss and its gradient with respect to the
/// pose coordinates.
pub fn grad_check<F>(
    params: &NetworkParameters,
    image: &Image,
    z: &NoiseVector,
    head: Option<usize>,
    loss: F,
    eps: f64,
    indices: Option<&[usize]>,
) -> Result<f64>
where
    F: Fn(&Pose) -> (f64, Vec<f64>),
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    let (pose, cache) = forward(params, image, z, head)?;
    let (value, dpose) = loss(&pose);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let analytic = backward(params, &cache, &dpose)?;
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..params.values.len()).collect();
            &all
        }
    };
    let mut probe = params.clone();
    let eval = |probe: &NetworkParameters| -> Result<f64> {
        let (p, _) = forward(probe, image, z, head)?;
        let v = loss(&p).0;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss".into()))
        }
    };
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.values[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.values[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
