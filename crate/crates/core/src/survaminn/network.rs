use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SurvError;

/// Layer widths. The decoder mirrors the encoder back to `input_dim`; the
/// regressor maps the bottleneck through `regressor` hidden widths to one
/// linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder: Vec<usize>,
    pub regressor: Vec<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim, encoder: vec![64, 32, 16], regressor: vec![8] }
    }

    pub fn bottleneck(&self) -> usize {
        *self.encoder.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<(), SurvError> {
        if self.input_dim == 0 || self.encoder.is_empty() || self.encoder.iter().chain(&self.regressor).any(|&w| w == 0)
        {
            return Err(SurvError::BadConfig(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    fn specs(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |branch, fan_in, fan_out, relu| {
            out.push(LayerSpec { branch, fan_in, fan_out, offset, relu });
            offset += fan_in * fan_out + fan_out;
        };
        let mut prev = self.input_dim;
        for &w in &self.encoder {
            push(Branch::Encoder, prev, w, true);
            prev = w;
        }
        let mut dec: Vec<usize> = self.encoder.iter().rev().skip(1).copied().collect();
        dec.push(self.input_dim);
        let last = dec.len() - 1;
        for (k, &w) in dec.iter().enumerate() {
            push(Branch::Decoder, prev, w, k != last);
            prev = w;
        }
        prev = self.bottleneck();
        for &w in &self.regressor {
            push(Branch::Regressor, prev, w, true);
            prev = w;
        }
        push(Branch::Regressor, prev, 1, false);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Encoder,
    Decoder,
    Regressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub branch: Branch,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Start of this layer's weights in the flat parameter vector; weights
    /// are `fan_out × fan_in` row-major, followed by `fan_out` biases.
    pub offset: usize,
    pub relu: bool,
}

impl LayerSpec {
    pub fn n_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

/// Autoencoder plus hazard head, all parameters in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    arch: Architecture,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

impl Network {
    /// He-uniform weights `U(±√(6/fan_in))`, zero biases.
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self, SurvError> {
        let mut net = Self::zeros(arch)?;
        for l in net.layers.clone() {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            for w in &mut net.params[l.offset..l.bias_offset()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self, SurvError> {
        arch.validate()?;
        let layers = arch.specs();
        let n = layers.iter().map(LayerSpec::n_params).sum();
        Ok(Self { arch, layers, params: vec![0.0; n] })
    }

    /// Rebuild from a flat parameter vector.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, SurvError> {
        let mut net = Self::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(SurvError::DimensionMismatch { expected: net.params.len(), got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(SurvError::NonFinite("parameters"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    /// Bias of the final regressor unit.
    pub fn output_bias_mut(&mut self) -> &mut f64 {
        let l = *self.layers.last().expect("network has layers");
        &mut self.params[l.bias_offset()]
    }

    fn hidden_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.relu)
    }
}

/// Inverted-dropout multipliers per hidden layer, `n_instances × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    masks: Vec<Option<Vec<f64>>>,
}

impl DropoutMasks {
    pub fn none(net: &Network) -> Self {
        Self { masks: vec![None; net.layers.len()] }
    }

    pub fn sample<R: Rng>(net: &Network, n_instances: usize, rate: f64, rng: &mut R) -> Self {
        let mut masks = vec![None; net.layers.len()];
        if rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            // 32-bit draws: the rate is exact to 2^-32 at half the generator cost of u64 draws
            let cut = (rate * 4_294_967_296.0) as u64;
            for (k, l) in net.hidden_layers() {
                let mut m = vec![keep; n_instances * l.fan_out];
                for v in &mut m {
                    if u64::from(rng.next_u32()) < cut {
                        *v = 0.0;
                    }
                }
                masks[k] = Some(m);
            }
        }
        Self { masks }
    }
}

/// Cached forward pass over a stack of instances.
pub(crate) struct Tape {
    pub n: usize,
    pub input: Vec<f64>,
    /// Per layer: activation after ReLU (before dropout) for hidden layers,
    /// the linear output otherwise.
    pub pre_drop: Vec<Vec<f64>>,
    /// Per layer: output as consumed by the next layer.
    pub out: Vec<Vec<f64>>,
}

impl Tape {
    pub fn reconstruction(&self, net: &Network) -> &[f64] {
        &self.out[net.arch.encoder.len() * 2 - 1]
    }

    pub fn hazards(&self) -> &[f64] {
        self.out.last().expect("network has layers")
    }

    /// Which hidden units are active, for detecting kinks.
    pub fn active_pattern(&self, net: &Network) -> Vec<bool> {
        net.hidden_layers().flat_map(|(k, _)| self.pre_drop[k].iter().map(|&v| v > 0.0)).collect()
    }
}

/// `c = a·b + beta·c` with `a` m×k and `b` k×n given by (row, column)
/// strides; `c` is a dense row-major m×n block.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, s: (usize, usize)| (rows - 1) * s.0 + (cols - 1) * s.1;
    assert!(k == 0 || (last(m, k, sa) < a.len() && last(k, n, sb) < b.len()));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided read inside `a` and `b`,
    // and `c` holds the full m×n output.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), sa.0 as isize, sa.1 as isize,
            b.as_ptr(), sb.0 as isize, sb.1 as isize,
            beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn dense_forward(params: &[f64], l: &LayerSpec, x: &[f64], n: usize) -> Vec<f64> {
    let w = &params[l.offset..l.bias_offset()];
    let b = &params[l.bias_offset()..l.offset + l.n_params()];
    let mut y = Vec::with_capacity(n * l.fan_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    // y += x · Wᵀ
    gemm(n, l.fan_in, l.fan_out, x, (l.fan_in, 1), w, (1, l.fan_in), 1.0, &mut y);
    y
}

/// Accumulate parameter gradients of one layer; returns the input gradient
/// when `want_dx`.
fn dense_backward(params: &[f64], grad: &mut [f64], l: &LayerSpec, x: &[f64], dy: &[f64], n: usize, want_dx: bool) -> Vec<f64> {
    let (gw, gb) = grad[l.offset..l.offset + l.n_params()].split_at_mut(l.fan_in * l.fan_out);
    // gW += dyᵀ · x
    gemm(l.fan_out, n, l.fan_in, dy, (1, l.fan_out), x, (l.fan_in, 1), 1.0, gw);
    for row in dy.chunks_exact(l.fan_out) {
        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
    if !want_dx {
        return Vec::new();
    }
    let w = &params[l.offset..l.bias_offset()];
    let mut dx = vec![0.0; n * l.fan_in];
    gemm(n, l.fan_out, l.fan_in, dy, (l.fan_out, 1), w, (l.fan_in, 1), 0.0, &mut dx);
    dx
}

impl Network {
    /// Forward pass over `n` stacked instances (`x` is `n × input_dim`).
    pub(crate) fn forward_tape(&self, x: &[f64], n: usize, masks: &DropoutMasks) -> Tape {
        let n_enc = self.arch.encoder.len();
        let bottleneck = n_enc - 1;
        let mut pre_drop = Vec::with_capacity(self.layers.len());
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let input: &[f64] = match k {
                0 => x,
                _ if k == 2 * n_enc => &out[bottleneck],
                _ => &out[k - 1],
            };
            let mut y = dense_forward(&self.params, l, input, n);
            if l.relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let dropped = match &masks.masks[k] {
                Some(m) => y.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => y.clone(),
            };
            pre_drop.push(y);
            out.push(dropped);
        }
        Tape { n, input: x.to_vec(), pre_drop, out }
    }

    /// Backward pass given loss gradients w.r.t. the reconstruction and the
    /// per-instance hazards. Returns the flat parameter gradient.
    pub(crate) fn backward(&self, tape: &Tape, masks: &DropoutMasks, d_recon: &[f64], d_eta: &[f64]) -> Vec<f64> {
        let n_enc = self.arch.encoder.len();
        let n = tape.n;
        let mut grad = vec![0.0; self.params.len()];
        let input_of = |k: usize| -> &[f64] {
            match k {
                0 => &tape.input,
                _ if k == 2 * n_enc => &tape.out[n_enc - 1],
                _ => &tape.out[k - 1],
            }
        };
        // gradient w.r.t. out[k] -> gradient w.r.t. the layer's linear output
        let through_act = |k: usize, mut d: Vec<f64>| -> Vec<f64> {
            if let Some(m) = &masks.masks[k] {
                d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
            }
            if self.layers[k].relu {
                d.iter_mut().zip(&tape.pre_drop[k]).for_each(|(a, &y)| {
                    if y <= 0.0 {
                        *a = 0.0
                    }
                });
            }
            d
        };
        let chain = |range: std::ops::Range<usize>, d_top: Vec<f64>, grad: &mut Vec<f64>| -> Vec<f64> {
            let mut d = d_top;
            for k in range.rev() {
                let dl = through_act(k, d);
                d = dense_backward(&self.params, grad, &self.layers[k], input_of(k), &dl, n, k > 0);
            }
            d
        };
        let d_z_dec = chain(n_enc..2 * n_enc, d_recon.to_vec(), &mut grad);
        let d_z_reg = chain(2 * n_enc..self.layers.len(), d_eta.to_vec(), &mut grad);
        let d_z: Vec<f64> = d_z_dec.iter().zip(&d_z_reg).map(|(a, b)| a + b).collect();
        chain(0..n_enc, d_z, &mut grad);
        grad
    }
}
