//! Feed-forward basis network φ_w: R² → R^d.
//!
//! Hidden layers apply the configured activation; the output layer is affine.
//! Batches are stored column-wise (one column per sample) so each layer is a
//! single GEMM. Gradients are exact reverse mode (parameters) and forward mode
//! (input Jacobian).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

const MAGIC: &[u8; 8] = b"FNET\x00\x01\x00\x00";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Not differentiable at zero; input Jacobians use the right derivative.
    Relu,
    /// Linear hidden layers, mostly useful for tests.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            input_dim: 2,
            hidden: vec![256, 256, 256],
            output_dim: 32,
            activation: Activation::Tanh,
        }
    }
}

impl NetSpec {
    pub fn new(hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        NetSpec {
            input_dim: 2,
            hidden,
            output_dim,
            activation,
        }
    }

    /// (fan_out, fan_in) of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 {
            return Err(Error::ConfigInvalid("feature net input_dim must be 2".into()));
        }
        if self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::ConfigInvalid("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// fan_out × fan_in
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    spec: NetSpec,
    layers: Vec<Layer>,
}

/// Activations recorded by [`FeatureNet::forward_trace`] for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `post[0]` is the input batch (2 × n); `post[l]` the output of layer l.
    post: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers (only kept for ReLU).
    pre: Vec<DMatrix<f64>>,
}

impl Trace {
    /// Network output, d × n.
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().expect("trace has at least the input")
    }
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub layers: Vec<Layer>,
}

impl NetGradient {
    pub fn zeros_like(net: &FeatureNet) -> Self {
        NetGradient {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }
}

impl FeatureNet {
    /// All weights and biases zero.
    pub fn zeros(spec: NetSpec) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Layer {
                weight: DMatrix::zeros(o, i),
                bias: DVector::zeros(o),
            })
            .collect();
        FeatureNet { spec, layers }
    }

    /// Uniform fan-in initialization, U(±√(3/fan_in)) for weights and zero
    /// biases, from a seeded stream.
    pub fn init(spec: NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(spec);
        for l in &mut net.layers {
            let lim = (3.0 / l.weight.ncols() as f64).sqrt();
            for w in l.weight.iter_mut() {
                *w = rng.random_range(-lim..lim);
            }
        }
        net
    }

    pub fn from_layers(spec: NetSpec, layers: Vec<Layer>) -> Result<Self> {
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len()
            || shapes.iter().zip(&layers).any(|(&(o, i), l)| {
                l.weight.nrows() != o || l.weight.ncols() != i || l.bias.len() != o
            })
        {
            return Err(Error::FormatMismatch("layer shapes disagree with NetSpec".into()));
        }
        Ok(FeatureNet { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    /// Flat parameter vector w: per layer, weight (column-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params_flat(&mut self, w: &[f64]) {
        assert_eq!(w.len(), self.n_params(), "flat parameter length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&w[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&w[k..k + nb]);
            k += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    fn input_matrix(points: &[Vec2]) -> DMatrix<f64> {
        DMatrix::from_fn(2, points.len(), |r, c| points[c][r])
    }

    fn affine(layer: &Layer, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &layer.weight * a;
        for mut col in z.column_iter_mut() {
            col += &layer.bias;
        }
        z
    }

    /// φ_w(z).
    pub fn forward(&self, z: Vec2) -> DVector<f64> {
        let mut a = DVector::from_column_slice(&[z.x, z.y]);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = &layer.weight * &a + &layer.bias;
            if l < last {
                next.apply(|v| *v = self.spec.activation.apply(*v));
            }
            a = next;
        }
        a
    }

    /// Features of a batch as a d × n matrix (column k is φ_w(points[k])).
    pub fn forward_batch(&self, points: &[Vec2]) -> DMatrix<f64> {
        let mut a = Self::input_matrix(points);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &a);
            if l < last {
                z.apply(|v| *v = self.spec.activation.apply(*v));
            }
            a = z;
        }
        a
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward_trace(&self, points: &[Vec2]) -> Trace {
        let mut post = vec![Self::input_matrix(points)];
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, post.last().unwrap());
            if l < last {
                if self.spec.activation == Activation::Relu {
                    pre.push(z.clone());
                }
                z.apply(|v| *v = self.spec.activation.apply(*v));
            }
            post.push(z);
        }
        Trace { post, pre }
    }

    /// Reverse-mode gradient of Σ_k ⟨adjoints[:,k], φ_w(z_k)⟩ w.r.t. all
    /// parameters, summed over the batch in `trace`.
    pub fn backward(&self, trace: &Trace, adjoints: &DMatrix<f64>) -> NetGradient {
        let n = trace.post[0].ncols();
        assert_eq!(adjoints.ncols(), n, "adjoint batch size");
        assert_eq!(adjoints.nrows(), self.output_dim(), "adjoint width");
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = adjoints.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &trace.post[l];
            let gw = &delta * a_prev.transpose();
            let gb = delta.column_sum();
            grads.push(Layer {
                weight: gw,
                bias: gb,
            });
            if l > 0 {
                let mut d = layer.weight.tr_mul(&delta);
                let act = self.spec.activation;
                match act {
                    Activation::Relu => {
                        let pre = &trace.pre[l - 1];
                        d.zip_apply(pre, |g, x| *g *= act.derivative(x, 0.0));
                    }
                    _ => {
                        d.zip_apply(a_prev, |g, y| *g *= act.derivative(0.0, y));
                    }
                }
                delta = d;
            }
        }
        grads.reverse();
        NetGradient { layers: grads }
    }

    /// Gradient over w of Σ_k ⟨adjoints[:,k], φ_w(points[k])⟩.
    pub fn parameter_gradient(&self, points: &[Vec2], adjoints: &DMatrix<f64>) -> NetGradient {
        let trace = self.forward_trace(points);
        self.backward(&trace, adjoints)
    }

    /// φ_w(z) and its d × 2 Jacobian w.r.t. z.
    pub fn forward_with_jacobian(&self, z: Vec2) -> (DVector<f64>, DMatrix<f64>) {
        let mut a = DVector::from_column_slice(&[z.x, z.y]);
        let mut tangent = DMatrix::<f64>::identity(2, 2);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = &layer.weight * &a + &layer.bias;
            let mut t = &layer.weight * &tangent;
            if l < last {
                let act = self.spec.activation;
                let post = pre.map(|v| act.apply(v));
                for (r, mut row) in t.row_iter_mut().enumerate() {
                    row *= act.derivative(pre[r], post[r]);
                }
                a = post;
            } else {
                a = pre;
            }
            tangent = t;
        }
        (a, tangent)
    }

    /// Exact d × 2 Jacobian of φ_w at z.
    pub fn input_jacobian(&self, z: Vec2) -> DMatrix<f64> {
        self.forward_with_jacobian(z).1
    }

    /// Serializes to the `.fnet` container: magic, header length (u64 LE),
    /// JSON header with the NetSpec and layer offsets, then every parameter
    /// as a little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header_json.len() + 8 * self.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for v in self.params_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::FormatMismatch(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing .fnet magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(&format!("header: {e}")))?;
        header.spec.validate().map_err(|e| bad(&e.to_string()))?;
        let expected = header.spec.n_params();
        if header.n_params != expected {
            return Err(bad(&format!(
                "header declares {} parameters but NetSpec implies {expected}",
                header.n_params
            )));
        }
        let shapes = header.spec.layer_shapes();
        if header.layers.len() != shapes.len() {
            return Err(bad("layer table length disagrees with NetSpec"));
        }
        let mut offset = 0;
        for (entry, &(o, i)) in header.layers.iter().zip(&shapes) {
            if entry.rows != o || entry.cols != i || entry.weight_offset != offset {
                return Err(bad("layer table disagrees with NetSpec"));
            }
            offset += o * i;
            if entry.bias_offset != offset {
                return Err(bad("layer table disagrees with NetSpec"));
            }
            offset += o;
        }
        let data = &bytes[body..];
        if data.len() != 8 * expected {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                8 * expected,
                data.len()
            )));
        }
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut net = FeatureNet::zeros(header.spec);
        net.set_params_flat(&flat);
        Ok(net)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes(bytes)
    }

    fn header(&self) -> CheckpointHeader {
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let e = LayerEntry {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight_offset: offset,
                    bias_offset: offset + l.weight.len(),
                };
                offset += l.weight.len() + l.bias.len();
                e
            })
            .collect();
        CheckpointHeader {
            spec: self.spec.clone(),
            n_params: self.n_params(),
            layers,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    rows: usize,
    cols: usize,
    /// Offsets in f64 elements from the start of the parameter block.
    weight_offset: usize,
    bias_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetSpec,
    n_params: usize,
    layers: Vec<LayerEntry>,
}
