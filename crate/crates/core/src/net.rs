//! The correction term: a fixed five-layer perceptron with a bounded output.
//!
//! Hidden layers use rectified-linear activations and the output layer `tanh`,
//! so every output component lies in `(-1, 1)`. [`bounded_correction`] scales
//! that output so its Euclidean norm never exceeds `λ · ‖g‖`.
//!
//! Gradients are computed analytically for this topology; there is no general
//! autodiff. Parameters are laid out as `[W0, b0, W1, b1, ...]` with each
//! weight matrix stored row-major as `out × in`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};
use crate::model::ParamDelta;

/// Number of weight layers.
pub const LAYERS: usize = 5;
pub const DEFAULT_HIDDEN: [usize; LAYERS - 1] = [64, 64, 64, 64];
const MAGIC: &[u8; 5] = b"STRL1";

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.n_out {
            let row = &self.weights[r * self.n_in..(r + 1) * self.n_in];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionNet {
    layers: Vec<Dense>,
    /// Bound multiplier `λ`.
    pub lambda: f64,
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub slots: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &CorrectionNet) -> Self {
        Self {
            slots: net.params().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.slots.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|v| v.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.slots.iter().flatten()
    }
}

/// Intermediate values of one forward pass.
struct Trace {
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
    /// Inputs to every layer (index 0 is the network input).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl CorrectionNet {
    /// A network with every weight and bias zero.
    pub fn zeros(dims: &[usize], lambda: f64) -> Result<Self> {
        if dims.len() != LAYERS + 1 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "correction net needs {} positive layer sizes, got {dims:?}",
                LAYERS + 1
            )));
        }
        Ok(Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            lambda,
        })
    }

    /// Uniform initialization in `±1/√fan_in`.
    pub fn random(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        lambda: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut net = Self::zeros(&dims, lambda)?;
        for layer in &mut net.layers {
            let limit = 1.0 / (layer.n_in as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].n_in];
        dims.extend(self.layers.iter().map(|l| l.n_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[LAYERS - 1].n_out
    }

    pub fn param_count(&self) -> usize {
        self.params().map(<[f64]>::len).sum()
    }

    /// Parameter slices in `[W0, b0, W1, b1, ...]` order.
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Zeroes the last layer so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = &mut self.layers[LAYERS - 1];
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.params().flatten().all(|v| v.is_finite()) && self.lambda.is_finite()
    }

    fn trace(&self, input: &[f64]) -> Result<Trace> {
        check_dim("correction net input", self.input_dim(), input.len())?;
        let mut inputs = Vec::with_capacity(LAYERS);
        let mut pre = Vec::with_capacity(LAYERS);
        let mut cur = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.apply(&cur, &mut z);
            let act: Vec<f64> = if i + 1 == LAYERS {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            inputs.push(std::mem::replace(&mut cur, act));
            pre.push(z);
        }
        Ok(Trace {
            pre,
            inputs,
            output: cur,
        })
    }

    /// Forward pass; every component of the result lies in `(-1, 1)`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.output)
    }

    /// Smallest `|z|` over hidden pre-activations: how far `input` is from a rectifier kink.
    pub fn kink_distance(&self, input: &[f64]) -> Result<f64> {
        let t = self.trace(input)?;
        Ok(t.pre[..LAYERS - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs())))
    }

    /// Which hidden rectifiers are active (`z > 0`) for `input`.
    pub fn activation_pattern(&self, input: &[f64]) -> Result<Vec<bool>> {
        let t = self.trace(input)?;
        Ok(t.pre[..LAYERS - 1].iter().flatten().map(|&z| z > 0.0).collect())
    }

    /// Gradient of `upstream · forward(input)` with respect to every parameter.
    ///
    /// The rectifier's subgradient at zero is taken as zero.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<NetGrads> {
        check_dim("correction net upstream gradient", self.output_dim(), upstream.len())?;
        let trace = self.trace(input)?;
        let mut slots = vec![Vec::new(); 2 * LAYERS];
        // gradient w.r.t. the current layer's pre-activation
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&trace.output)
            .map(|(u, y)| u * (1.0 - y * y))
            .collect();
        for i in (0..LAYERS).rev() {
            let layer = &self.layers[i];
            let x = &trace.inputs[i];
            let mut dw = vec![0.0; layer.n_in * layer.n_out];
            for r in 0..layer.n_out {
                let d = delta[r];
                if d != 0.0 {
                    for (c, xv) in x.iter().enumerate() {
                        dw[r * layer.n_in + c] = d * xv;
                    }
                }
            }
            slots[2 * i] = dw;
            slots[2 * i + 1] = delta.clone();
            if i > 0 {
                let below = &trace.pre[i - 1];
                let mut next = vec![0.0; layer.n_in];
                for r in 0..layer.n_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[r * layer.n_in..(r + 1) * layer.n_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, z) in next.iter_mut().zip(below) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(NetGrads { slots })
    }

    /// Serializes to the `STRL1` weight format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.param_count());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(LAYERS as u32).to_le_bytes());
        for d in self.layer_dims() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.params().flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.lambda.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(r.fail(0, "bad magic, expected STRL1"));
        }
        let at = r.pos;
        let count = r.u32()? as usize;
        if count != LAYERS {
            return Err(r.fail(at, &format!("expected {LAYERS} layers, found {count}")));
        }
        let mut dims = Vec::with_capacity(count + 1);
        for _ in 0..=count {
            let at = r.pos;
            let d = r.u32()? as usize;
            if d == 0 {
                return Err(r.fail(at, "layer dimension is zero"));
            }
            dims.push(d);
        }
        let mut net = Self::zeros(&dims, 0.0)?;
        for slot in net.params_mut() {
            for v in slot.iter_mut() {
                *v = r.f64()?;
            }
        }
        net.lambda = r.f64()?;
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes after bound multiplier"));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the network maps `input_dim` inputs to `output_dim` outputs.
    pub fn expect_dims(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        check_dim("correction net input", input_dim, self.input_dim())?;
        check_dim("correction net output", output_dim, self.output_dim())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, message: &str) -> Error {
        Error::WeightFormat {
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(self.pos, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// `ĝ = λ · (gnorm / √d) · net(input)`; guarantees `‖ĝ‖ ≤ λ · gnorm`.
pub fn bounded_correction(net: &CorrectionNet, input: &[f64], gnorm: f64) -> Result<ParamDelta> {
    debug_assert!(gnorm >= 0.0);
    let d = net.output_dim();
    if gnorm == 0.0 || net.lambda == 0.0 {
        return Ok(ParamDelta::zeros(d));
    }
    let scale = bound_scale(net.lambda, gnorm, d);
    Ok(ParamDelta(
        net.forward(input)?.into_iter().map(|y| scale * y).collect(),
    ))
}

pub(crate) fn bound_scale(lambda: f64, gnorm: f64, d: usize) -> f64 {
    lambda * gnorm / (d as f64).sqrt()
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Applied,
    /// Gradients contained NaN or infinity; parameters were left untouched.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(net: &CorrectionNet, step_size: f64) -> Self {
        let shape: Vec<Vec<f64>> = net.params().map(|p| vec![0.0; p.len()]).collect();
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: shape.clone(),
            second: shape,
        }
    }

    /// One bias-corrected update, applied in place.
    pub fn step(&mut self, net: &mut CorrectionNet, grads: &NetGrads) -> StepStatus {
        assert_eq!(grads.slots.len(), self.first.len(), "gradient layout mismatch");
        if !grads.is_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.steps);
            return StepStatus::SkippedNonFinite;
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((param, g), m), v) in net
            .params_mut()
            .zip(&grads.slots)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                param[i] -= self.step_size * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        StepStatus::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> CorrectionNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CorrectionNet::random(4, &[6, 5, 7, 5], 3, 1.0, &mut rng).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    /// Straight-line evaluation with explicit loops over the serialized parameters.
    fn reference_forward(net: &CorrectionNet, input: &[f64]) -> Vec<f64> {
        let dims = net.layer_dims();
        let flat: Vec<f64> = net.params().flatten().copied().collect();
        let mut offset = 0;
        let mut act = input.to_vec();
        for l in 0..5 {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let w = &flat[offset..offset + n_in * n_out];
            let b = &flat[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next = vec![0.0; n_out];
            for r in 0..n_out {
                let mut s = b[r];
                for c in 0..n_in {
                    s += w[r * n_in + c] * act[c];
                }
                next[r] = if l == 4 { s.tanh() } else if s > 0.0 { s } else { 0.0 };
            }
            act = next;
        }
        act
    }

    #[test]
    fn zero_parameters_output_zero() {
        let net = CorrectionNet::zeros(&[3, 4, 4, 4, 4, 2], 1.0).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn wrong_layer_count_is_rejected() {
        assert!(CorrectionNet::zeros(&[3, 4, 2], 1.0).is_err());
    }

    #[test]
    fn input_dimension_is_checked() {
        let net = small_net(1);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 4, found: 1, .. })
        ));
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..100 {
            let net = small_net(seed);
            let x = random_input(&mut rng, 4);
            let a = net.forward(&x).unwrap();
            let b = reference_forward(&net, &x);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
                assert!(p.abs() < 1.0);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = small_net(2);
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        let mut checked = 0;
        for seed in 0..20 {
            let net = small_net(100 + seed);
            let x = random_input(&mut rng, 4);
            let up = random_input(&mut rng, 3);
            let grads = net.backward(&x, &up).unwrap();
            let objective = |n: &CorrectionNet| -> f64 {
                n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            for slot in 0..grads.slots.len() {
                for i in 0..grads.slots[slot].len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    plus.params_mut().nth(slot).unwrap()[i] += h;
                    minus.params_mut().nth(slot).unwrap()[i] -= h;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let an = grads.slots[slot][i];
                    let scale = fd.abs().max(an.abs());
                    if scale < 1e-7 {
                        continue;
                    }
                    let rel = (fd - an).abs() / scale;
                    // a rectifier kink inside ±h shows up as a large discrepancy; skip those
                    if rel > 1e-4 && near_kink(&net, &x, h) {
                        continue;
                    }
                    assert!(rel < 1e-4, "slot {slot}[{i}] fd {fd} analytic {an}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 500, "only {checked} parameters checked");
    }

    fn near_kink(net: &CorrectionNet, x: &[f64], h: f64) -> bool {
        net.kink_distance(x).unwrap() < 1e3 * h
    }

    #[test]
    fn bounded_correction_respects_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..200 {
            let mut net = small_net(seed);
            net.lambda = rng.random_range(0.0..2.0);
            let x = random_input(&mut rng, 4);
            let gnorm = rng.random_range(0.0..5.0);
            let c = bounded_correction(&net, &x, gnorm).unwrap();
            assert!(crate::model::norm(&c) <= net.lambda * gnorm + 1e-12);
        }
        let net = small_net(0);
        assert!(bounded_correction(&net, &[1.0; 4], 0.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = small_net(42);
        let bytes = net.to_bytes();
        let back = CorrectionNet::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let bytes = small_net(1).to_bytes();
        match CorrectionNet::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::WeightFormat { offset, .. }) => assert!(offset > 0),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CorrectionNet::from_bytes(&bad),
            Err(Error::WeightFormat { offset: 0, .. })
        ));
        let mut wrong_count = bytes.clone();
        wrong_count[5] = 3;
        assert!(matches!(
            CorrectionNet::from_bytes(&wrong_count),
            Err(Error::WeightFormat { offset: 5, .. })
        ));
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut net = small_net(3);
        let before = net.clone();
        let mut opt = Adam::new(&net, 1e-3);
        let zero = NetGrads::zeros_like(&net);
        assert_eq!(opt.step(&mut net, &zero), StepStatus::Applied);
        assert_eq!(net, before);
        assert_eq!(opt.steps, 1);
        opt.step(&mut net, &zero);
        assert_eq!(opt.steps, 2);
    }

    #[test]
    fn adam_skips_non_finite() {
        let mut net = small_net(3);
        let before = net.clone();
        let mut opt = Adam::new(&net, 1e-3);
        let mut g = NetGrads::zeros_like(&net);
        g.slots[0][0] = f64::NAN;
        assert_eq!(opt.step(&mut net, &g), StepStatus::SkippedNonFinite);
        assert_eq!(net, before);
        assert_eq!(opt.steps, 0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // loss = (p − 3)^2 on the single output bias; minimizer p = 3.
        let mut net = CorrectionNet::zeros(&[1, 1, 1, 1, 1, 1], 1.0).unwrap();
        let mut opt = Adam::new(&net, 1e-2);
        for _ in 0..2000 {
            let p = net.params().nth(9).unwrap()[0];
            let mut g = NetGrads::zeros_like(&net);
            g.slots[9][0] = 2.0 * (p - 3.0);
            opt.step(&mut net, &g);
        }
        let p = net.params().nth(9).unwrap()[0];
        assert!((p - 3.0).abs() < 1e-3, "p = {p}");
    }
}
