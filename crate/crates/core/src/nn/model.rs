use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv1d_backward, conv1d_forward, conv_output_len, dense_backward, dense_forward, flatten_concat, maxpool1d,
    maxpool1d_backward, relu, relu_backward,
};
use super::{NnError, Result, Tensor};
use crate::features::{ChannelGroup, FeatureWindow, HOURS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub width: usize,
    pub stride: usize,
}

/// Convolution, ReLU, then optional max-pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub kernels: usize,
    pub width: usize,
    pub stride: usize,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

/// A conv stack over one input group. An empty stack flattens the group
/// straight into the trunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub input: ChannelGroup,
    #[serde(default)]
    pub layers: Vec<ConvLayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub heads: Vec<HeadSpec>,
    /// Dense layer widths; the last must be 24.
    pub trunk: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::default_architecture(0)
    }
}

impl ModelSpec {
    /// One conv head (8 kernels of width 3, max-pool 2/2) per non-calendar
    /// group, the calendar flattened into the trunk, trunk `[64, 24]`.
    pub fn default_architecture(seed: u64) -> ModelSpec {
        let conv = ConvLayerSpec { kernels: 8, width: 3, stride: 1, pool: Some(PoolSpec { width: 2, stride: 2 }) };
        let heads = ChannelGroup::ALL
            .into_iter()
            .map(|g| HeadSpec {
                input: g,
                layers: if g == ChannelGroup::Calendar { vec![] } else { vec![conv.clone()] },
            })
            .collect();
        ModelSpec { heads, trunk: vec![64, HOURS], seed }
    }

    fn head_path(&self, head: usize) -> String {
        format!("heads.{}", self.heads[head].input.name())
    }

    pub fn conv_path(&self, head: usize, layer: usize) -> String {
        format!("{}.conv{layer}", self.head_path(head))
    }

    pub fn dense_path(layer: usize) -> String {
        format!("trunk.dense{layer}")
    }

    /// Checks group coverage and the shape algebra. Returns the flattened
    /// width of each head.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        for h in &self.heads {
            if !seen.insert(h.input) {
                return Err(NnError::InvalidSpec(format!("group `{}` consumed by more than one head", h.input)));
            }
        }
        if let Some(g) = ChannelGroup::ALL.into_iter().find(|g| !seen.contains(g)) {
            return Err(NnError::InvalidSpec(format!("group `{g}` is not consumed by any head")));
        }
        match self.trunk.last() {
            Some(&HOURS) => {}
            _ => return Err(NnError::InvalidSpec(format!("trunk must end in {HOURS} outputs"))),
        }
        if self.trunk.contains(&0) {
            return Err(NnError::InvalidSpec("trunk layer of width 0".into()));
        }
        let mut widths = Vec::new();
        for (hi, head) in self.heads.iter().enumerate() {
            let (mut c, mut len) = (head.input.channels(), HOURS);
            for (li, l) in head.layers.iter().enumerate() {
                let path = self.conv_path(hi, li);
                if l.kernels == 0 {
                    return Err(NnError::InvalidSpec(format!("{path}: zero kernels")));
                }
                len = conv_output_len(len, l.width, l.stride)
                    .ok_or_else(|| NnError::InvalidSpec(format!("{path}: conv does not fit input length {len}")))?;
                c = l.kernels;
                if let Some(p) = l.pool {
                    len = conv_output_len(len, p.width, p.stride)
                        .ok_or_else(|| NnError::InvalidSpec(format!("{path}: pool does not fit length {len}")))?;
                }
            }
            widths.push(c * len);
        }
        Ok(widths)
    }

    /// Parameter paths and shapes in layer order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let widths = self.validate()?;
        let mut out = Vec::new();
        for (hi, head) in self.heads.iter().enumerate() {
            let mut c = head.input.channels();
            for (li, l) in head.layers.iter().enumerate() {
                let p = self.conv_path(hi, li);
                out.push((format!("{p}.kernels"), vec![l.kernels, c, l.width]));
                out.push((format!("{p}.bias"), vec![l.kernels]));
                c = l.kernels;
            }
        }
        let mut n = widths.iter().sum::<usize>();
        for (i, &m) in self.trunk.iter().enumerate() {
            let p = Self::dense_path(i);
            out.push((format!("{p}.weight"), vec![m, n]));
            out.push((format!("{p}.bias"), vec![m]));
            n = m;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
    }
}

/// Learnable tensors keyed by layer path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
}

pub type GradientSet = ModelParams;

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Result<ModelParams> {
        Ok(ModelParams {
            tensors: spec.param_shapes()?.into_iter().map(|(p, s)| (p, Tensor::zeros(&s))).collect(),
        })
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors.get(path).ok_or_else(|| NnError::InvalidSpec(format!("missing parameter `{path}`")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(path).ok_or_else(|| NnError::InvalidSpec(format!("missing parameter `{path}`")))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Verifies every tensor matches the model spec's shapes exactly.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != self.tensors.len() {
            return Err(NnError::InvalidSpec(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (p, s) in shapes {
            self.get(&p)?.expect_shape("parameter", &s)?;
        }
        Ok(())
    }

    /// `self += scale * other`, path by path.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (p, t) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(p) {
                for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                    *a += scale * b;
                }
            }
        }
    }
}

/// He-uniform weights for layers followed by ReLU, Glorot-uniform for the
/// final linear layer, zero biases.
pub fn init_params(spec: &ModelSpec) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let last = spec.trunk.len() - 1;
    for (path, shape) in spec.param_shapes()? {
        if path.ends_with(".bias") {
            continue;
        }
        let bound = if path == format!("{}.weight", ModelSpec::dense_path(last)) {
            (6.0 / (shape[1] + shape[0]) as f64).sqrt()
        } else {
            let fan_in: usize = shape[1..].iter().product();
            (6.0 / fan_in as f64).sqrt()
        };
        for v in params.get_mut(&path)?.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

pub type ModelInput = BTreeMap<ChannelGroup, Tensor>;

pub fn model_input(window: &FeatureWindow) -> Result<ModelInput> {
    window
        .inputs
        .iter()
        .map(|(g, v)| Ok((*g, Tensor::new(vec![g.channels(), HOURS], v.clone())?)))
        .collect()
}

#[derive(Debug, Clone)]
struct ConvCache {
    input: Tensor,
    pre_activation: Tensor,
    pool: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    layers: Vec<ConvCache>,
    output_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Tensor,
    pre_activation: Tensor,
}

/// Intermediate values recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    heads: Vec<HeadCache>,
    dense: Vec<DenseCache>,
    pub output: Tensor,
}

fn finite(t: Tensor, path: impl FnOnce() -> String) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(NnError::NonFinite { path: path() })
    }
}

pub fn model_forward(spec: &ModelSpec, params: &ModelParams, input: &ModelInput) -> Result<(Tensor, Tape)> {
    let mut heads = Vec::with_capacity(spec.heads.len());
    let mut features = Vec::with_capacity(spec.heads.len());
    for (hi, head) in spec.heads.iter().enumerate() {
        let mut x = input
            .get(&head.input)
            .ok_or_else(|| NnError::Shape {
                op: "model input",
                expected: format!("group `{}`", head.input),
                actual: "absent".into(),
            })?
            .clone();
        x.expect_shape("model input", &[head.input.channels(), HOURS])?;
        let mut layers = Vec::with_capacity(head.layers.len());
        for (li, l) in head.layers.iter().enumerate() {
            let path = spec.conv_path(hi, li);
            let pre = conv1d_forward(
                &x,
                params.get(&format!("{path}.kernels"))?,
                params.get(&format!("{path}.bias"))?,
                l.stride,
            )?;
            let pre = finite(pre, || path.clone())?;
            let act = relu(&pre);
            let (out, pool) = match l.pool {
                Some(p) => {
                    let (o, idx) = maxpool1d(&act, p.width, p.stride)?;
                    (o, Some((idx, act.shape().to_vec())))
                }
                None => (act, None),
            };
            layers.push(ConvCache { input: x, pre_activation: pre, pool });
            x = out;
        }
        heads.push(HeadCache { layers, output_shape: x.shape().to_vec() });
        features.push(x);
    }

    let mut x = flatten_concat(&features.iter().collect::<Vec<_>>());
    let last = spec.trunk.len() - 1;
    let mut dense = Vec::with_capacity(spec.trunk.len());
    for i in 0..spec.trunk.len() {
        let path = ModelSpec::dense_path(i);
        let pre = dense_forward(&x, params.get(&format!("{path}.weight"))?, params.get(&format!("{path}.bias"))?)?;
        let pre = finite(pre, || path.clone())?;
        let out = if i == last { pre.clone() } else { relu(&pre) };
        dense.push(DenseCache { input: x, pre_activation: pre });
        x = out;
    }
    Ok((x.clone(), Tape { heads, dense, output: x }))
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n
}

/// Reverse pass from a gradient on the model output.
pub fn backward_from_output(spec: &ModelSpec, params: &ModelParams, tape: &Tape, grad_output: &Tensor) -> Result<GradientSet> {
    let mut grads = BTreeMap::new();
    let last = spec.trunk.len() - 1;
    let mut g = grad_output.clone();
    for i in (0..spec.trunk.len()).rev() {
        let path = ModelSpec::dense_path(i);
        let cache = &tape.dense[i];
        if i != last {
            g = relu_backward(&cache.pre_activation, &g);
        }
        let (gx, gw, gb) = dense_backward(&cache.input, params.get(&format!("{path}.weight"))?, &g)?;
        grads.insert(format!("{path}.weight"), gw);
        grads.insert(format!("{path}.bias"), gb);
        g = gx;
    }

    let mut offset = 0;
    for (hi, head) in spec.heads.iter().enumerate() {
        let cache = &tape.heads[hi];
        let width: usize = cache.output_shape.iter().product();
        let mut gh = Tensor::new(cache.output_shape.clone(), g.data()[offset..offset + width].to_vec())?;
        offset += width;
        for li in (0..head.layers.len()).rev() {
            let path = spec.conv_path(hi, li);
            let lc = &cache.layers[li];
            if let Some((idx, shape)) = &lc.pool {
                gh = maxpool1d_backward(shape, idx, &gh)?;
            }
            gh = relu_backward(&lc.pre_activation, &gh);
            let (gx, gk, gb) =
                conv1d_backward(&lc.input, params.get(&format!("{path}.kernels"))?, head.layers[li].stride, &gh)?;
            grads.insert(format!("{path}.kernels"), gk);
            grads.insert(format!("{path}.bias"), gb);
            gh = gx;
        }
    }
    Ok(ModelParams { tensors: grads })
}

/// Gradients of the mean squared error against `target`.
pub fn model_backward(spec: &ModelSpec, params: &ModelParams, tape: &Tape, target: &[f64]) -> Result<GradientSet> {
    if target.len() != tape.output.len() {
        return Err(NnError::Shape {
            op: "mse target",
            expected: tape.output.len().to_string(),
            actual: target.len().to_string(),
        });
    }
    let n = target.len() as f64;
    let g = tape.output.data().iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    backward_from_output(spec, params, tape, &Tensor::vector(g))
}

pub fn loss_and_gradients(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &ModelInput,
    target: &[f64],
) -> Result<(f64, GradientSet)> {
    let (out, tape) = model_forward(spec, params, input)?;
    let loss = mse_loss(out.data(), target);
    let grads = model_backward(spec, params, &tape, target)?;
    Ok((loss, grads))
}
