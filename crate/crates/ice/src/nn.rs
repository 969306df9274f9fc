//! Minimal dense-network stack with manual backprop.
//!
//! Weights are stored input-major (`weights[i * out_dim + j]`), so a
//! forward pass walks one contiguous row per input feature and can skip
//! zero features entirely. Observations here are mostly-zero binary
//! planes, which makes that skip the main performance lever. Gradients
//! track which input rows they touched so the SGD step and the
//! subsequent reset only visit those rows.
//!
//! Everything is `f64`; gradients are checked against central
//! differences in the tests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("parameter vector has {got} values, network expects {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("non-finite parameter after update in layer {layer}")]
    NumericInstability { layer: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint payload: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply_in_place(self, xs: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Tanh => {
                for x in xs {
                    *x = x.tanh();
                }
            }
            Activation::Sigmoid => {
                for x in xs {
                    *x = 1.0 / (1.0 + (-*x).exp());
                }
            }
        }
    }

    /// d(activation)/d(pre-activation) expressed through the output value.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Input-major: row `i` holds the fan-out weights of input `i`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights uniform in `±1/sqrt(in_dim)` scaled by `gain`, zero bias.
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = gain / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// All-zero weights and bias: a head that starts indifferent
    /// (uniform logits, zero value) until gradients move it.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// `out = activation(W^T input + bias)`, skipping zero inputs.
    pub fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        assert_eq!(input.len(), self.in_dim, "layer input size");
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        self.activation.apply_in_place(out);
    }

    /// Backward through this layer given its forward `input` and `output`.
    ///
    /// `d_output` is dL/d(output). Weight and bias gradients are added to
    /// `grad`; when `d_input` is given, dL/d(input) is accumulated into it.
    pub fn backward_dense(
        &self,
        input: &[f64],
        output: &[f64],
        d_output: &[f64],
        grad: &mut LayerGrad,
        mut d_input: Option<&mut [f64]>,
    ) {
        let d_pre = self.d_pre(output, d_output, grad);
        for (i, &x) in input.iter().enumerate() {
            let row = i * self.out_dim;
            let w_row = &self.weights[row..row + self.out_dim];
            if x != 0.0 {
                grad.mark_row(i);
                let g_row = &mut grad.weights[row..row + self.out_dim];
                if let Some(d_in) = d_input.as_deref_mut() {
                    let mut acc = 0.0;
                    for j in 0..self.out_dim {
                        let dz = d_pre[j];
                        g_row[j] += x * dz;
                        acc += w_row[j] * dz;
                    }
                    d_in[i] += acc;
                } else {
                    for j in 0..self.out_dim {
                        g_row[j] += x * d_pre[j];
                    }
                }
            } else if let Some(d_in) = d_input.as_deref_mut() {
                let mut acc = 0.0;
                for j in 0..self.out_dim {
                    acc += w_row[j] * d_pre[j];
                }
                d_in[i] += acc;
            }
        }
    }

    /// Backward for a sparse input given as `(index, value)` pairs.
    /// Input gradients are not produced (first layers never need them).
    pub fn backward_sparse(
        &self,
        input: &[(u32, f64)],
        output: &[f64],
        d_output: &[f64],
        grad: &mut LayerGrad,
    ) {
        let d_pre = self.d_pre(output, d_output, grad);
        for &(i, x) in input {
            let i = i as usize;
            grad.mark_row(i);
            let row = i * self.out_dim;
            let g_row = &mut grad.weights[row..row + self.out_dim];
            for j in 0..self.out_dim {
                g_row[j] += x * d_pre[j];
            }
        }
    }

    /// Computes d_pre = d_output * activation slope and adds it to the bias
    /// gradient (bias feeds the pre-activation directly).
    fn d_pre(&self, output: &[f64], d_output: &[f64], grad: &mut LayerGrad) -> Vec<f64> {
        assert_eq!(output.len(), self.out_dim);
        assert_eq!(d_output.len(), self.out_dim);
        let mut d_pre = vec![0.0; self.out_dim];
        for j in 0..self.out_dim {
            d_pre[j] = d_output[j] * self.activation.slope_from_output(output[j]);
            grad.bias[j] += d_pre[j];
        }
        d_pre
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradient buffer mirroring one layer, tracking touched weight rows so
/// apply/reset can skip rows that never accumulated anything.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    touched: Vec<usize>,
    marked: Vec<bool>,
    out_dim: usize,
}

impl LayerGrad {
    pub fn zeros_for(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
            touched: Vec::new(),
            marked: vec![false; layer.in_dim],
            out_dim: layer.out_dim,
        }
    }

    #[inline]
    fn mark_row(&mut self, i: usize) {
        if !self.marked[i] {
            self.marked[i] = true;
            self.touched.push(i);
        }
    }

    /// True when every accumulated gradient value is finite.
    pub fn is_finite(&self) -> bool {
        let rows_ok = self.touched.iter().all(|&i| {
            let row = i * self.out_dim;
            self.weights[row..row + self.out_dim]
                .iter()
                .all(|g| g.is_finite())
        });
        rows_ok && self.bias.iter().all(|g| g.is_finite())
    }

    /// `param -= lr * grad` on touched rows and bias, then clears the
    /// gradient. Callers validate finiteness first so a failed update
    /// can leave parameters untouched.
    pub fn apply_and_reset(&mut self, layer: &mut DenseLayer, lr: f64) {
        for &i in &self.touched {
            let row = i * self.out_dim;
            for j in row..row + self.out_dim {
                layer.weights[j] -= lr * self.weights[j];
                self.weights[j] = 0.0;
            }
            self.marked[i] = false;
        }
        self.touched.clear();
        for (b, g) in layer.bias.iter_mut().zip(self.bias.iter_mut()) {
            *b -= lr * *g;
            *g = 0.0;
        }
    }
}

/// Forward-pass record: the sparse input plus every layer's output.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub input_sparse: Vec<(u32, f64)>,
    pub acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_for(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(LayerGrad::zeros_for).collect(),
        }
    }
}

impl Mlp {
    /// `dims = [in, h1, ..., out]` with one activation per layer.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Self {
        assert_eq!(dims.len(), activations.len() + 1, "one activation per layer");
        let layers = activations
            .iter()
            .enumerate()
            .map(|(l, &act)| DenseLayer::new(dims[l], dims[l + 1], act, 1.0, rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("empty net").in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("empty net").out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass recording activations (and the input, sparsely) for a
    /// later backward pass. Reuses the trace's buffers.
    pub fn forward_traced(&self, input: &[f64], trace: &mut MlpTrace) {
        trace.input_sparse.clear();
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                trace.input_sparse.push((i as u32, x));
            }
        }
        trace.acts.resize_with(self.layers.len(), Vec::new);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.acts.split_at_mut(l);
            if l == 0 {
                layer.forward_into(input, &mut rest[0]);
            } else {
                layer.forward_into(&done[l - 1], &mut rest[0]);
            }
        }
    }

    pub fn output_of<'t>(&self, trace: &'t MlpTrace) -> &'t [f64] {
        trace.acts.last().expect("empty trace")
    }

    /// Accumulate gradients of a scalar loss into `grads`, given the trace
    /// of the forward pass and `d_output` = dL/d(final output).
    pub fn backward(&self, trace: &MlpTrace, d_output: &[f64], grads: &mut MlpGrads) {
        let mut d_out = d_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let output = &trace.acts[l];
            if l == 0 {
                layer.backward_sparse(&trace.input_sparse, output, &d_out, &mut grads.layers[l]);
            } else {
                let mut d_in = vec![0.0; layer.in_dim];
                layer.backward_dense(
                    &trace.acts[l - 1],
                    output,
                    &d_out,
                    &mut grads.layers[l],
                    Some(&mut d_in),
                );
                d_out = d_in;
            }
        }
    }

    /// SGD step: `w -= lr * g` for every touched parameter; clears `grads`.
    /// A non-finite gradient anywhere fails the whole step, naming the
    /// first offending layer, with parameters untouched.
    pub fn apply_gradients(&mut self, grads: &mut MlpGrads, lr: f64) -> Result<(), NnError> {
        for (l, grad) in grads.layers.iter().enumerate() {
            if !grad.is_finite() {
                return Err(NnError::NumericInstability { layer: l });
            }
        }
        for (layer, grad) in self.layers.iter_mut().zip(&mut grads.layers) {
            grad.apply_and_reset(layer, lr);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// All parameters, layer by layer, weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let wl = layer.weights.len();
            layer.weights.copy_from_slice(&params[at..at + wl]);
            at += wl;
            let bl = layer.bias.len();
            layer.bias.copy_from_slice(&params[at..at + bl]);
            at += bl;
        }
        Ok(())
    }

    /// Like [`Mlp::backward`] but also returns dL/d(input), for
    /// observation-gradient checks. Reconstructs the dense input from the
    /// trace's sparse record; not intended for hot paths.
    pub fn backward_with_input_grad(
        &self,
        trace: &MlpTrace,
        d_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Vec<f64> {
        let first = &self.layers[0];
        let mut input = vec![0.0; first.in_dim];
        for &(i, x) in &trace.input_sparse {
            input[i as usize] = x;
        }
        let mut d_out = d_output.to_vec();
        for l in (1..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let mut d_in = vec![0.0; layer.in_dim];
            layer.backward_dense(
                &trace.acts[l - 1],
                &trace.acts[l],
                &d_out,
                &mut grads.layers[l],
                Some(&mut d_in),
            );
            d_out = d_in;
        }
        let mut d_input = vec![0.0; first.in_dim];
        first.backward_dense(
            &input,
            &trace.acts[0],
            &d_out,
            &mut grads.layers[0],
            Some(&mut d_input),
        );
        d_input
    }
}

/// FNV-1a hash over the exact parameter bytes; detects any bit-level
/// change to a network's weights.
pub fn params_checksum(net: &Mlp) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in net.flat_params() {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Central-difference estimate of df/dx at `x`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Writes a checkpoint: one line of JSON header, a little-endian u64
/// parameter count, then the parameters as little-endian f64 bytes.
pub fn save_params<H: serde::Serialize>(
    path: &Path,
    header: &H,
    params: &[f64],
) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(header)?;
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_params`]. Parameters round-trip
/// bit-exactly.
pub fn load_params<H: serde::de::DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>), NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| NnError::Payload("missing header line".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: H = serde_json::from_slice(&header_bytes)?;
    let mut count_bytes = [0u8; 8];
    r.read_exact(&mut count_bytes)
        .map_err(|_| NnError::Payload("missing parameter count".into()))?;
    let count = u64::from_le_bytes(count_bytes) as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != count * 8 {
        return Err(NnError::Payload(format!(
            "expected {} parameter bytes, found {}",
            count * 8,
            raw.len()
        )));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(
            &[7, 6, 4],
            &[Activation::Tanh, Activation::Sigmoid],
            &mut rng,
        )
    }

    /// Brute-force forward ignoring the sparse skip, for comparison.
    fn forward_oracle(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        for layer in &net.layers {
            let mut out = layer.bias.clone();
            for j in 0..layer.out_dim {
                for i in 0..layer.in_dim {
                    out[j] += cur[i] * layer.weights[i * layer.out_dim + j];
                }
            }
            layer.activation.apply_in_place(&mut out);
            cur = out;
        }
        cur
    }

    #[test]
    fn forward_matches_oracle_with_sparse_input() {
        let net = small_net(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let input: Vec<f64> = (0..7)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        0.0
                    } else {
                        rng.gen_range(-2.0..2.0)
                    }
                })
                .collect();
            let got = net.forward(&input);
            let want = forward_oracle(&net, &input);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn traced_forward_matches_plain() {
        let net = small_net(3);
        let input = vec![0.3, 0.0, -1.2, 0.0, 0.7, 2.0, 0.0];
        let mut trace = MlpTrace::default();
        net.forward_traced(&input, &mut trace);
        let plain = net.forward(&input);
        assert_eq!(net.output_of(&trace), plain.as_slice());
        assert_eq!(trace.input_sparse.len(), 4);
    }

    /// Gradient of L = sum_j c_j * out_j checked against central differences
    /// for every parameter.
    #[test]
    fn backward_matches_central_differences() {
        let mut net = small_net(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut trace = MlpTrace::default();
        net.forward_traced(&input, &mut trace);
        let mut grads = MlpGrads::zeros_for(&net);
        net.backward(&trace, &coeffs, &mut grads);

        let mut analytic = Vec::new();
        for g in &grads.layers {
            analytic.extend_from_slice(&g.weights);
            analytic.extend_from_slice(&g.bias);
        }

        let base = net.flat_params();
        for (k, &a) in analytic.iter().enumerate() {
            let fd = central_difference(
                |v| {
                    let mut p = base.clone();
                    p[k] = v;
                    net.set_flat_params(&p).unwrap();
                    let out = net.forward(&input);
                    out.iter().zip(&coeffs).map(|(o, c)| o * c).sum()
                },
                base[k],
                1e-5,
            );
            net.set_flat_params(&base).unwrap();
            assert!(
                (a - fd).abs() <= 1e-7 + 1e-5 * fd.abs().max(a.abs()),
                "param {k}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn sparse_and_dense_backward_agree() {
        let net = small_net(6);
        let layer = &net.layers[0];
        let input = vec![0.0, 1.5, 0.0, -0.5, 0.0, 2.0, 0.0];
        let sparse: Vec<(u32, f64)> = input
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i as u32, x))
            .collect();
        let mut out = Vec::new();
        layer.forward_into(&input, &mut out);
        let d_out = vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.9];

        let mut g1 = LayerGrad::zeros_for(layer);
        layer.backward_dense(&input, &out, &d_out, &mut g1, None);
        let mut g2 = LayerGrad::zeros_for(layer);
        layer.backward_sparse(&sparse, &out, &d_out, &mut g2);
        assert_eq!(g1.weights, g2.weights);
        assert_eq!(g1.bias, g2.bias);
    }

    #[test]
    fn apply_gradients_steps_and_clears() {
        let mut net = small_net(7);
        let input = vec![1.0, 0.0, 0.5, -0.5, 0.0, 0.0, 2.0];
        let mut trace = MlpTrace::default();
        net.forward_traced(&input, &mut trace);
        let mut grads = MlpGrads::zeros_for(&net);
        net.backward(&trace, &[1.0, 1.0, 1.0, 1.0], &mut grads);

        let before = net.flat_params();
        let g_flat: Vec<f64> = {
            let mut v = Vec::new();
            for g in &grads.layers {
                v.extend_from_slice(&g.weights);
                v.extend_from_slice(&g.bias);
            }
            v
        };
        net.apply_gradients(&mut grads, 0.1).unwrap();
        let after = net.flat_params();
        for ((b, g), a) in before.iter().zip(&g_flat).zip(&after) {
            assert!((a - (b - 0.1 * g)).abs() < 1e-12);
        }
        for g in &grads.layers {
            assert!(g.weights.iter().all(|&x| x == 0.0));
            assert!(g.bias.iter().all(|&x| x == 0.0));
        }
        // A second apply with cleared grads is a no-op.
        net.apply_gradients(&mut grads, 0.1).unwrap();
        assert_eq!(net.flat_params(), after);
    }

    #[test]
    fn non_finite_update_is_an_error() {
        let mut net = small_net(8);
        let mut grads = MlpGrads::zeros_for(&net);
        grads.layers[1].bias[0] = f64::NAN;
        let err = net.apply_gradients(&mut grads, 0.1).unwrap_err();
        match err {
            NnError::NumericInstability { layer } => assert_eq!(layer, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct Header {
            dims: Vec<usize>,
            seed: u64,
        }
        let net = small_net(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let header = Header { dims: vec![7, 6, 4], seed: 9 };
        let params = net.flat_params();
        save_params(&path, &header, &params).unwrap();
        let (header2, params2): (Header, Vec<f64>) = load_params(&path).unwrap();
        assert_eq!(header, header2);
        assert_eq!(params.len(), params2.len());
        for (a, b) in params.iter().zip(&params2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_params(&path, &serde_json::json!({"dims": [2]}), &[1.0, 2.0, 3.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let res: Result<(serde_json::Value, Vec<f64>), _> = load_params(&path);
        assert!(matches!(res, Err(NnError::Payload(_))));
    }
}
