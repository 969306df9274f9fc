//! Learned-latent codes: autoencoder embedding, SimHash discretization,
//! and entropy rewards computed on the code trajectory.
//!
//! The pipeline is `state -> encoder -> dense -> sign of random projection
//! -> k-bit code`, where hashing jitters each dense coordinate at its
//! squash's input before projecting. The code trajectory feeds the same
//! count-table entropy machinery as raw states. The autoencoder is
//! trained on replayed states from a FIFO buffer; hashing uses a lagged
//! snapshot of the encoder so codes stay stable between refreshes.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{CountTable, EntropyError, IceReward};
use crate::nn::{self, Activation, Mlp, MlpGrads, MlpTrace, NnError};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("input has {got} values, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] NnError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

/// Decoded probabilities are clamped to this range before the Bernoulli
/// log-likelihood.
pub const PROB_CLAMP: f64 = 1e-6;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fixed sign-of-random-projection hash: `latent_dim` output bits from a
/// `latent_dim x dense_dim` matrix with standard-normal entries drawn
/// once from `rng_seed`. The matrix never changes after construction.
#[derive(Debug, Clone)]
pub struct HashScheme {
    pub latent_dim: usize,
    pub dense_dim: usize,
    pub noise_halfwidth: f64,
    pub rng_seed: u64,
    /// Row-major `latent_dim x dense_dim`; row j produces bit j.
    projection: Vec<f64>,
}

impl HashScheme {
    pub fn new(
        latent_dim: usize,
        dense_dim: usize,
        noise_halfwidth: f64,
        rng_seed: u64,
    ) -> Result<Self, LatentError> {
        if latent_dim < 1 {
            return Err(LatentError::Config("need at least one hash bit".into()));
        }
        if latent_dim > dense_dim {
            return Err(LatentError::Config(format!(
                "hash bits ({latent_dim}) must not exceed dense width ({dense_dim})"
            )));
        }
        if !(noise_halfwidth >= 0.0) {
            return Err(LatentError::Config(format!(
                "noise half-width must be non-negative, got {noise_halfwidth}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let projection: Vec<f64> = (0..latent_dim * dense_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Ok(Self {
            latent_dim,
            dense_dim,
            noise_halfwidth,
            rng_seed,
            projection,
        })
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    /// Test-only scheme with an explicit projection matrix.
    #[cfg(test)]
    pub fn with_projection(
        latent_dim: usize,
        dense_dim: usize,
        noise_halfwidth: f64,
        projection: Vec<f64>,
    ) -> Self {
        assert_eq!(projection.len(), latent_dim * dense_dim);
        Self {
            latent_dim,
            dense_dim,
            noise_halfwidth,
            rng_seed: 0,
            projection,
        }
    }
}

/// A k-bit code with entries in {-1, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentCode {
    pub bits: Vec<i8>,
}

impl LatentCode {
    /// Alphabet view for the count table: -1 -> 0, +1 -> 1.
    pub fn symbols(&self) -> Vec<u16> {
        self.bits.iter().map(|&b| u16::from(b > 0)).collect()
    }
}

/// `sgn(A * sigmoid(u + logit(dense)))` with fresh `u ~ U(-a, a)` per
/// coordinate and `sgn(0) := +1`. The jitter enters at the squash's input
/// — the encoder's pre-activation, recovered through the logit with
/// out-of-range coordinates clamped like decoder probabilities — so it
/// only flips coordinates near the squash's decision boundary while
/// saturated ones hash stably. With `a = 0` the squash undoes the logit
/// and the code is `sgn(A * dense)`, a pure function of `dense`.
pub fn simhash(
    dense: &[f64],
    scheme: &HashScheme,
    rng: &mut impl Rng,
) -> Result<LatentCode, LatentError> {
    if dense.len() != scheme.dense_dim {
        return Err(LatentError::Dimension {
            expected: scheme.dense_dim,
            got: dense.len(),
        });
    }
    let a = scheme.noise_halfwidth;
    let squashed: Vec<f64> = dense
        .iter()
        .map(|&x| {
            let p = x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let pre = (p / (1.0 - p)).ln();
            let u = if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
            sigmoid(u + pre)
        })
        .collect();
    let bits = scheme
        .projection
        .chunks_exact(scheme.dense_dim)
        .map(|row| {
            let dot: f64 = row.iter().zip(&squashed).map(|(&w, &x)| w * x).sum();
            if dot < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect();
    Ok(LatentCode { bits })
}

/// Autoencoder with a sigmoid bottleneck: encoder
/// `state -> hidden (tanh) -> pre-activations (linear)`, squashed to
/// (0,1) wherever the bottleneck is read, decoder mirrors back to
/// per-element Bernoulli probabilities. Keeping the last encoder layer
/// linear exposes the pre-activations, where training jitter is injected.
#[derive(Debug, Clone)]
pub struct AutoencoderParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Auxiliary loss coefficient (lambda).
    pub aux_weight: f64,
    /// Half-width of the uniform jitter added to bottleneck
    /// pre-activations during training steps. Zero disables it. Jitter
    /// regularizes the embedding toward noise-tolerant (saturated)
    /// coordinates; deterministic reads ([`Self::encode`], hashing) never
    /// see it.
    pub noise_halfwidth: f64,
    /// Cadence in policy updates between autoencoder steps.
    pub update_period: u64,
    /// Hash width k normalizing the auxiliary term (lambda / k).
    pub hash_bits: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct AeCheckpointHeader {
    pub encoder_shapes: Vec<(usize, usize)>,
    pub decoder_shapes: Vec<(usize, usize)>,
    pub hash_bits: usize,
    pub projection_seed: u64,
}

impl AutoencoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        hidden: usize,
        dense_dim: usize,
        hash_bits: usize,
        aux_weight: f64,
        noise_halfwidth: f64,
        update_period: u64,
        learning_rate: f64,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, LatentError> {
        if aux_weight < 0.0 {
            return Err(LatentError::Config(format!(
                "auxiliary weight must be non-negative, got {aux_weight}"
            )));
        }
        if !(noise_halfwidth >= 0.0) {
            return Err(LatentError::Config(format!(
                "noise half-width must be non-negative, got {noise_halfwidth}"
            )));
        }
        if update_period == 0 || batch_size == 0 || hash_bits == 0 {
            return Err(LatentError::Config(
                "update period, batch size, and hash bits must be positive".into(),
            ));
        }
        Ok(Self {
            encoder: Mlp::new(
                &[state_dim, hidden, dense_dim],
                &[Activation::Tanh, Activation::Linear],
                rng,
            ),
            decoder: Mlp::new(
                &[dense_dim, hidden, state_dim],
                &[Activation::Tanh, Activation::Sigmoid],
                rng,
            ),
            aux_weight,
            noise_halfwidth,
            update_period,
            hash_bits,
            learning_rate,
            batch_size,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn dense_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    /// Deterministic dense embedding; every coordinate is in (0,1).
    pub fn encode(&self, state: &[f64]) -> Result<Vec<f64>, LatentError> {
        if state.len() != self.state_dim() {
            return Err(LatentError::Dimension {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        Ok(self.encoder.forward(state).into_iter().map(sigmoid).collect())
    }

    /// Decoded per-element Bernoulli probabilities of a dense embedding.
    pub fn decode(&self, dense: &[f64]) -> Result<Vec<f64>, LatentError> {
        if dense.len() != self.dense_dim() {
            return Err(LatentError::Dimension {
                expected: self.dense_dim(),
                got: dense.len(),
            });
        }
        Ok(self.decoder.forward(dense))
    }

    /// Mean loss over the batch plus gradients for both networks.
    ///
    /// Per sample: negative Bernoulli log-likelihood of the reconstruction
    /// against the binary state (nats, probabilities clamped), plus
    /// `(aux_weight / hash_bits) * sum_j min(e_j, 1 - e_j)` pushing every
    /// bottleneck coordinate toward 0 or 1. `jitter` holds one draw per
    /// bottleneck coordinate per sample — coordinate j of sample i reads
    /// `e_j = sigmoid(jitter[i * dense + j] + pre_j)` — or is empty for
    /// the jitter-free path.
    pub fn reconstruction_loss(
        &self,
        batch: &[&[f64]],
        jitter: &[f64],
    ) -> Result<(f64, MlpGrads, MlpGrads), LatentError> {
        if batch.is_empty() {
            return Err(LatentError::EmptyBatch);
        }
        let dense_dim = self.dense_dim();
        if !jitter.is_empty() && jitter.len() != batch.len() * dense_dim {
            return Err(LatentError::Dimension {
                expected: batch.len() * dense_dim,
                got: jitter.len(),
            });
        }
        let n = batch.len() as f64;
        let aux_scale = self.aux_weight / self.hash_bits as f64;
        let mut loss = 0.0;
        let mut enc_grads = MlpGrads::zeros_for(&self.encoder);
        let mut dec_grads = MlpGrads::zeros_for(&self.decoder);
        let mut enc_trace = MlpTrace::default();
        let mut dec_trace = MlpTrace::default();
        for (i, &state) in batch.iter().enumerate() {
            if state.len() != self.state_dim() {
                return Err(LatentError::Dimension {
                    expected: self.state_dim(),
                    got: state.len(),
                });
            }
            self.encoder.forward_traced(state, &mut enc_trace);
            let pre = self.encoder.output_of(&enc_trace);
            let dense: Vec<f64> = pre
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let u = if jitter.is_empty() {
                        0.0
                    } else {
                        jitter[i * dense_dim + j]
                    };
                    sigmoid(u + p)
                })
                .collect();
            self.decoder.forward_traced(&dense, &mut dec_trace);
            let probs = self.decoder.output_of(&dec_trace);

            let mut d_probs = vec![0.0; probs.len()];
            for (j, (&p, &t)) in probs.iter().zip(state).enumerate() {
                let p_cl = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                loss -= (t * p_cl.ln() + (1.0 - t) * (1.0 - p_cl).ln()) / n;
                // d(-log p)/dp; the layer's sigmoid slope turns this into
                // the usual (p - t) at the pre-activation.
                d_probs[j] = (-t / p_cl + (1.0 - t) / (1.0 - p_cl)) / n;
            }
            let mut d_dense =
                self.decoder
                    .backward_with_input_grad(&dec_trace, &d_probs, &mut dec_grads);
            for (d, &e) in d_dense.iter_mut().zip(&dense) {
                loss += aux_scale * e.min(1.0 - e) / n;
                // Subgradient of min(e, 1-e); 0 at the kink matches a
                // central difference taken exactly there.
                *d += aux_scale / n
                    * if e < 0.5 {
                        1.0
                    } else if e > 0.5 {
                        -1.0
                    } else {
                        0.0
                    };
            }
            // Chain through the squash: d(pre) = d(dense) * dense(1 - dense).
            let d_pre: Vec<f64> = d_dense
                .iter()
                .zip(&dense)
                .map(|(&d, &e)| d * e * (1.0 - e))
                .collect();
            self.encoder.backward(&enc_trace, &d_pre, &mut enc_grads);
        }
        Ok((loss, enc_grads, dec_grads))
    }

    /// One SGD step on both networks; fails atomically on non-finite
    /// gradients.
    pub fn apply(
        &mut self,
        enc_grads: &mut MlpGrads,
        dec_grads: &mut MlpGrads,
    ) -> Result<(), LatentError> {
        for grads in [&*enc_grads, &*dec_grads] {
            for (l, g) in grads.layers.iter().enumerate() {
                if !g.is_finite() {
                    return Err(LatentError::Numeric(NnError::NumericInstability {
                        layer: l,
                    }));
                }
            }
        }
        self.encoder.apply_gradients(enc_grads, self.learning_rate)?;
        self.decoder.apply_gradients(dec_grads, self.learning_rate)?;
        Ok(())
    }

    fn shapes(net: &Mlp) -> Vec<(usize, usize)> {
        net.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }

    /// Writes both networks plus the projection seed; reloading with
    /// [`AutoencoderParams::load_checkpoint`] reproduces codes bit-exactly.
    pub fn save_checkpoint(&self, path: &Path, projection_seed: u64) -> Result<(), NnError> {
        let header = AeCheckpointHeader {
            encoder_shapes: Self::shapes(&self.encoder),
            decoder_shapes: Self::shapes(&self.decoder),
            hash_bits: self.hash_bits,
            projection_seed,
        };
        let mut params = self.encoder.flat_params();
        params.extend(self.decoder.flat_params());
        nn::save_params(path, &header, &params)
    }

    /// Restores networks saved by [`AutoencoderParams::save_checkpoint`];
    /// hyperparameters other than shapes take the supplied values.
    pub fn load_checkpoint(
        path: &Path,
        aux_weight: f64,
        noise_halfwidth: f64,
        update_period: u64,
        learning_rate: f64,
        batch_size: usize,
    ) -> Result<(Self, AeCheckpointHeader), LatentError> {
        let (header, params): (AeCheckpointHeader, Vec<f64>) = nn::load_params(path)?;
        let dims = |shapes: &[(usize, usize)]| -> Vec<usize> {
            let mut d: Vec<usize> = shapes.iter().map(|s| s.0).collect();
            d.push(shapes.last().expect("nonempty shapes").1);
            d
        };
        if header.encoder_shapes.len() != 2 || header.decoder_shapes.len() != 2 {
            return Err(LatentError::Numeric(NnError::Payload(
                "expected two-layer encoder and decoder".into(),
            )));
        }
        let enc_dims = dims(&header.encoder_shapes);
        let mut out = Self::new(
            enc_dims[0],
            enc_dims[1],
            enc_dims[2],
            header.hash_bits,
            aux_weight,
            noise_halfwidth,
            update_period,
            learning_rate,
            batch_size,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let enc_n = out.encoder.param_count();
        let total = enc_n + out.decoder.param_count();
        if params.len() != total {
            return Err(LatentError::Numeric(NnError::ParamCount {
                expected: total,
                got: params.len(),
            }));
        }
        out.encoder.set_flat_params(&params[..enc_n])?;
        out.decoder.set_flat_params(&params[enc_n..])?;
        Ok((out, header))
    }
}

/// One replayed step: the raw binary state, its code, and the decoder's
/// reconstruction at collection time.
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub state: Vec<f64>,
    pub code: LatentCode,
    pub reconstruction: Vec<f64>,
}

/// Bounded FIFO of replay triples; pushing past capacity evicts the
/// oldest entry.
#[derive(Debug, Clone)]
pub struct ReconstructionBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
}

impl ReconstructionBuffer {
    pub fn new(capacity: usize) -> Result<Self, LatentError> {
        if capacity == 0 {
            return Err(LatentError::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn push(&mut self, entry: BufferEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Uniform sample of `count` entries (with replacement).
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<&BufferEntry> {
        (0..count)
            .map(|_| &self.entries[rng.gen_range(0..self.entries.len())])
            .collect()
    }
}

/// One latent step: encode, hash, record the replay triple, absorb the
/// code into the table, and return the entropy gain. An empty table is
/// primed with this first code at zero reward, so drivers can call this
/// uniformly from the episode's first state onward.
///
/// With an `anchor` (an embedding from the same encoder, typically of the
/// episode's first state) the hash input is re-referenced to it:
/// `0.5 + (dense - anchor) / 2`, still inside the unit interval. Every
/// projection margin is then exactly zero at the anchor itself, so codes
/// measure movement of the embedding within the episode rather than its
/// absolute placement — which keeps every hash bit responsive no matter
/// where training has parked the encoder's output cloud.
pub fn latent_ice_step(
    state: &[f64],
    anchor: Option<&[f64]>,
    table: &mut CountTable,
    scheme: &HashScheme,
    params: &AutoencoderParams,
    buffer: &mut ReconstructionBuffer,
    rng: &mut impl Rng,
) -> Result<IceReward, LatentError> {
    let dense = params.encode(state)?;
    let code = match anchor {
        Some(anchor) => {
            if anchor.len() != dense.len() {
                return Err(LatentError::Dimension {
                    expected: dense.len(),
                    got: anchor.len(),
                });
            }
            let referenced: Vec<f64> = dense
                .iter()
                .zip(anchor)
                .map(|(&e, &a)| 0.5 + (e - a) / 2.0)
                .collect();
            simhash(&referenced, scheme, rng)?
        }
        None => simhash(&dense, scheme, rng)?,
    };
    let reconstruction = params.decode(&dense)?;
    let symbols = code.symbols();
    buffer.push(BufferEntry {
        state: state.to_vec(),
        code,
        reconstruction,
    });
    if table.is_empty() {
        table.absorb(&symbols)?;
        return Ok(IceReward {
            value_bits: 0.0,
            entropy_bits: table.total_bits(),
        });
    }
    Ok(table.ice_step(&symbols)?)
}

/// Outcome of a cadence check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AeUpdate {
    /// Not at the cadence; nothing happened.
    Skipped,
    /// Cadence fired with nothing to train on; parameters unchanged.
    EmptyBuffer,
    /// One SGD step on a sampled mini-batch; carries the batch loss.
    Updated { loss: f64 },
}

/// Fires one autoencoder update when `policy_update_index` (1-based) hits
/// the configured period; otherwise a no-op. `rng` draws the mini-batch
/// and, when the half-width is positive, a fresh bottleneck jitter.
pub fn maybe_update_autoencoder(
    buffer: &ReconstructionBuffer,
    params: &mut AutoencoderParams,
    policy_update_index: u64,
    rng: &mut impl Rng,
) -> Result<AeUpdate, LatentError> {
    if policy_update_index % params.update_period != 0 {
        return Ok(AeUpdate::Skipped);
    }
    if buffer.is_empty() {
        return Ok(AeUpdate::EmptyBuffer);
    }
    let batch: Vec<&[f64]> = buffer
        .sample(params.batch_size.min(buffer.len()), rng)
        .into_iter()
        .map(|e| e.state.as_slice())
        .collect();
    let a = params.noise_halfwidth;
    let jitter: Vec<f64> = if a > 0.0 {
        (0..batch.len() * params.dense_dim())
            .map(|_| rng.gen_range(-a..a))
            .collect()
    } else {
        Vec::new()
    };
    let (loss, mut enc_grads, mut dec_grads) = params.reconstruction_loss(&batch, &jitter)?;
    params.apply(&mut enc_grads, &mut dec_grads)?;
    Ok(AeUpdate::Updated { loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_ae(seed: u64) -> AutoencoderParams {
        AutoencoderParams::new(12, 10, 6, 4, 0.5, 0.0, 3, 1e-2, 4, &mut rng(seed)).unwrap()
    }

    fn random_binary(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| f64::from(rng.gen_bool(0.5))).collect()
    }

    #[test]
    fn hash_is_deterministic_without_noise() {
        let scheme = HashScheme::new(16, 32, 0.0, 7).unwrap();
        let mut r = rng(1);
        let dense: Vec<f64> = (0..32).map(|_| r.gen_range(-2.0..2.0)).collect();
        let a = simhash(&dense, &scheme, &mut r).unwrap();
        let b = simhash(&dense, &scheme, &mut r).unwrap();
        assert_eq!(a, b);
        assert!(a.bits.iter().all(|&b| b == 1 || b == -1));
        assert!(matches!(
            simhash(&dense[..5], &scheme, &mut r),
            Err(LatentError::Dimension { expected: 32, got: 5 })
        ));
    }

    #[test]
    fn scheme_rejects_bad_configs() {
        assert!(HashScheme::new(0, 8, 0.0, 1).is_err());
        assert!(HashScheme::new(9, 8, 0.0, 1).is_err());
        assert!(HashScheme::new(4, 8, -0.1, 1).is_err());
        assert!(HashScheme::new(4, 8, f64::NAN, 1).is_err());
        // Same seed, same matrix.
        let a = HashScheme::new(4, 8, 0.0, 9).unwrap();
        let b = HashScheme::new(4, 8, 0.0, 9).unwrap();
        assert_eq!(a.projection(), b.projection());
    }

    #[test]
    fn negated_projection_row_flips_exactly_that_bit() {
        let scheme = HashScheme::new(8, 16, 0.0, 3).unwrap();
        let mut r = rng(4);
        for flip in [0usize, 3, 7] {
            let mut proj = scheme.projection().to_vec();
            for w in &mut proj[flip * 16..(flip + 1) * 16] {
                *w = -*w;
            }
            let negated = HashScheme::with_projection(8, 16, 0.0, proj);
            for _ in 0..20 {
                let dense: Vec<f64> = (0..16).map(|_| r.gen_range(-3.0..3.0)).collect();
                let a = simhash(&dense, &scheme, &mut r).unwrap();
                let b = simhash(&dense, &negated, &mut r).unwrap();
                for (j, (x, y)) in a.bits.iter().zip(&b.bits).enumerate() {
                    if j == flip {
                        assert_eq!(*x, -*y);
                    } else {
                        assert_eq!(x, y);
                    }
                }
            }
        }
    }

    /// Codes agree in more bits for nearby dense vectors than for distant
    /// ones: the locality property, estimated over 10,000 sampled pairs.
    #[test]
    fn nearby_vectors_share_more_bits() {
        let scheme = HashScheme::new(16, 128, 0.0, 5).unwrap();
        let mut r = rng(6);
        let mut agreement = [0.0f64; 2];
        let pairs = 10_000;
        for _ in 0..pairs {
            let base: Vec<f64> = (0..128).map(|_| r.gen_range(0.05..0.95)).collect();
            for (case, distance) in [(0usize, 0.1), (1, 3.0)] {
                let mut dir: Vec<f64> = (0..128).map(|_| r.gen_range(-1.0..1.0)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                let other: Vec<f64> = base
                    .iter()
                    .zip(&dir)
                    .map(|(&b, &d)| (b + d / norm * distance).clamp(0.001, 0.999))
                    .collect();
                dir.clear();
                let a = simhash(&base, &scheme, &mut r).unwrap();
                let b = simhash(&other, &scheme, &mut r).unwrap();
                let same = a.bits.iter().zip(&b.bits).filter(|(x, y)| x == y).count();
                agreement[case] += same as f64 / 16.0 / pairs as f64;
            }
        }
        assert!(
            agreement[0] > agreement[1],
            "near {:.4} vs far {:.4}",
            agreement[0],
            agreement[1]
        );
    }

    /// An anchored step hashes `0.5 + (dense - anchor) / 2`. At the anchor
    /// itself every margin is exactly zero, so the first code is all +1
    /// (`sgn(0) := +1`) wherever the encoder happens to park the
    /// embedding; away from it the code matches hashing the re-referenced
    /// vector directly, and a wrong-length anchor is rejected.
    #[test]
    fn anchored_step_rereferences_codes() {
        let mut ae = small_ae(31);
        let scheme = HashScheme::new(4, 6, 0.0, 9).unwrap();
        let mut r = rng(17);
        let s0: Vec<f64> = (0..12).map(|_| f64::from(r.gen_bool(0.5))).collect();
        let mut s1 = s0.clone();
        s1[0] = 1.0 - s1[0];
        s1[7] = 1.0 - s1[7];
        let anchor = ae.encode(&s0).unwrap();

        let mut table = CountTable::new(4, 2).unwrap();
        let mut buf = ReconstructionBuffer::new(16).unwrap();
        let first =
            latent_ice_step(&s0, Some(&anchor), &mut table, &scheme, &ae, &mut buf, &mut r)
                .unwrap();
        assert_eq!(first.value_bits, 0.0);
        assert!(buf.iter().next().unwrap().code.bits.iter().all(|&b| b == 1));

        latent_ice_step(&s1, Some(&anchor), &mut table, &scheme, &ae, &mut buf, &mut r).unwrap();
        let stepped = buf.iter().nth(1).unwrap().code.clone();
        let dense1 = ae.encode(&s1).unwrap();
        let referenced: Vec<f64> = dense1
            .iter()
            .zip(&anchor)
            .map(|(&e, &a)| 0.5 + (e - a) / 2.0)
            .collect();
        let direct = simhash(&referenced, &scheme, &mut r).unwrap();
        assert_eq!(stepped.bits, direct.bits);

        // Training moves the encoder; re-anchoring restores the all-+1
        // origin code at the new embedding of the same state.
        for _ in 0..40 {
            ae.reconstruction_loss(&[&s0, &s1], &[]).unwrap();
        }
        let moved = ae.encode(&s0).unwrap();
        assert!(moved
            .iter()
            .zip(&anchor)
            .any(|(&m, &a)| (m - a).abs() > 1e-6));
        let mut table2 = CountTable::new(4, 2).unwrap();
        latent_ice_step(&s0, Some(&moved), &mut table2, &scheme, &ae, &mut buf, &mut r).unwrap();
        assert!(buf.iter().last().unwrap().code.bits.iter().all(|&b| b == 1));

        assert!(matches!(
            latent_ice_step(&s0, Some(&anchor[..3]), &mut table, &scheme, &ae, &mut buf, &mut r),
            Err(LatentError::Dimension { expected: 6, got: 3 })
        ));
    }

    /// With the sigmoid squash strictly positive, an identity projection
    /// can only ever produce +1 bits: every input lands on the same code,
    /// so latent rewards vanish. This is why projections are drawn from a
    /// zero-mean distribution.
    #[test]
    fn identity_projection_saturates_codes() {
        let mut proj = vec![0.0; 8 * 8];
        for j in 0..8 {
            proj[j * 8 + j] = 1.0;
        }
        let scheme = HashScheme::with_projection(8, 8, 0.0, proj);
        let mut r = rng(7);
        let mut table = CountTable::new(8, 2).unwrap();
        for _ in 0..30 {
            let state: Vec<f64> = (0..8).map(|_| f64::from(r.gen_bool(0.5))).collect();
            let code = simhash(&state, &scheme, &mut r).unwrap();
            assert!(code.bits.iter().all(|&b| b == 1));
            if table.is_empty() {
                table.absorb(&code.symbols()).unwrap();
            } else {
                let reward = table.ice_step(&code.symbols()).unwrap();
                assert!(reward.value_bits.abs() < 1e-12);
            }
        }
        assert!(table.total_bits().abs() < 1e-12);
    }

    /// A difference-pair projection encodes k-bit binary states exactly
    /// (bit j is +1 iff state bit j is 1), so the code trajectory carries
    /// the same entropy as the raw state trajectory: rewards coincide.
    #[test]
    fn difference_pair_projection_reproduces_binary_states() {
        let k = 16;
        let d = 2 * k;
        let mut proj = vec![0.0; k * d];
        for j in 0..k {
            proj[j * d + 2 * j] = 1.0;
            proj[j * d + 2 * j + 1] = -1.0;
        }
        let scheme = HashScheme::with_projection(k, d, 0.0, proj);
        let mut r = rng(8);
        let mut raw_table = CountTable::new(k, 2).unwrap();
        let mut code_table = CountTable::new(k, 2).unwrap();
        for step in 0..200 {
            let state: Vec<u16> = (0..k).map(|_| u16::from(r.gen_bool(0.5))).collect();
            let dense: Vec<f64> = state
                .iter()
                .flat_map(|&b| {
                    let v = if b == 1 { 3.0 } else { -3.0 };
                    [v, -v]
                })
                .collect();
            let code = simhash(&dense, &scheme, &mut r).unwrap();
            assert_eq!(code.symbols(), state);
            if step == 0 {
                raw_table.absorb(&state).unwrap();
                code_table.absorb(&code.symbols()).unwrap();
            } else {
                let raw = raw_table.ice_step(&state).unwrap();
                let lat = code_table.ice_step(&code.symbols()).unwrap();
                assert!((raw.value_bits - lat.value_bits).abs() < 1e-12);
            }
        }
        // Balanced random bits drive the factored entropy toward k.
        assert!(code_table.total_bits() > 0.9 * k as f64);
        assert!(code_table.total_bits() <= k as f64 + 1e-9);
    }

    #[test]
    fn encode_is_pure_bounded_and_zero_head_gives_half() {
        let mut ae = small_ae(9);
        let mut r = rng(10);
        let state = random_binary(12, &mut r);
        let a = ae.encode(&state).unwrap();
        let b = ae.encode(&state).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&e| e > 0.0 && e < 1.0));
        assert!(ae.encode(&state[..3]).is_err());

        let last = ae.encoder.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
        assert_eq!(ae.encode(&state).unwrap(), vec![0.5; 6]);
    }

    /// d(encoder output j)/d(weight) matches central differences.
    #[test]
    fn encoder_output_gradients_match_central_differences() {
        let ae = small_ae(11);
        let mut r = rng(12);
        let state = random_binary(12, &mut r);
        let j = 2;
        let mut trace = MlpTrace::default();
        ae.encoder.forward_traced(&state, &mut trace);
        let mut d_out = vec![0.0; 6];
        d_out[j] = 1.0;
        let mut grads = MlpGrads::zeros_for(&ae.encoder);
        ae.encoder.backward(&trace, &d_out, &mut grads);
        let mut flat = Vec::new();
        for g in &grads.layers {
            flat.extend_from_slice(&g.weights);
            flat.extend_from_slice(&g.bias);
        }
        let base = ae.encoder.flat_params();
        for _ in 0..30 {
            let k = r.gen_range(0..base.len());
            let fd = nn::central_difference(
                |x| {
                    let mut p = base.clone();
                    p[k] = x;
                    let mut net = ae.encoder.clone();
                    net.set_flat_params(&p).unwrap();
                    net.forward(&state)[j]
                },
                base[k],
                1e-5,
            );
            let denom = flat[k].abs().max(fd.abs()).max(1e-4);
            assert!((flat[k] - fd).abs() / denom < 1e-4, "{} vs {fd}", flat[k]);
        }
    }

    #[test]
    fn indifferent_autoencoder_loss_is_exact() {
        // Zeroed final layers: decoder emits 0.5 everywhere and the
        // bottleneck sits at 0.5, so both loss terms are closed-form.
        let mut ae = small_ae(13);
        for net in [&mut ae.encoder, &mut ae.decoder] {
            let last = net.layers.last_mut().unwrap();
            last.weights.iter_mut().for_each(|w| *w = 0.0);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut r = rng(14);
        let states: Vec<Vec<f64>> = (0..3).map(|_| random_binary(12, &mut r)).collect();
        let batch: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let (loss, _, _) = ae.reconstruction_loss(&batch, &[]).unwrap();
        // 12 elements at -ln(1/2) plus (0.5/4) * 6 * 0.5 of auxiliary.
        let expected = 12.0 * 2f64.ln() + 0.5 / 4.0 * 6.0 * 0.5;
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
        assert!(matches!(
            ae.reconstruction_loss(&[], &[]),
            Err(LatentError::EmptyBatch)
        ));
    }

    #[test]
    fn saturated_perfect_reconstruction_has_near_zero_loss() {
        // Force the bottleneck to ~0/1 and the decoder to reproduce a
        // fixed state by bias alone.
        let mut ae = small_ae(15);
        let state: Vec<f64> = (0..12).map(|i| f64::from(i % 2 == 0)).collect();
        for net in [&mut ae.encoder, &mut ae.decoder] {
            let last = net.layers.last_mut().unwrap();
            last.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        for (i, b) in ae.encoder.layers.last_mut().unwrap().bias.iter_mut().enumerate() {
            *b = if i % 2 == 0 { 30.0 } else { -30.0 };
        }
        for (t, b) in state
            .iter()
            .zip(ae.decoder.layers.last_mut().unwrap().bias.iter_mut())
        {
            *b = if *t == 1.0 { 30.0 } else { -30.0 };
        }
        let (loss, _, _) = ae.reconstruction_loss(&[&state], &[]).unwrap();
        assert!(loss.abs() < 1e-4, "loss {loss}");
    }

    #[test]
    fn reconstruction_gradients_match_central_differences() {
        let ae = small_ae(16);
        let mut r = rng(17);
        let states: Vec<Vec<f64>> = (0..3).map(|_| random_binary(12, &mut r)).collect();
        let batch: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let (_, enc_grads, dec_grads) = ae.reconstruction_loss(&batch, &[]).unwrap();
        let mut flat = Vec::new();
        for g in enc_grads.layers.iter().chain(&dec_grads.layers) {
            flat.extend_from_slice(&g.weights);
            flat.extend_from_slice(&g.bias);
        }
        let enc_n = ae.encoder.param_count();
        let mut base = ae.encoder.flat_params();
        base.extend(ae.decoder.flat_params());
        for _ in 0..60 {
            let k = r.gen_range(0..base.len());
            let fd = nn::central_difference(
                |x| {
                    let mut p = base.clone();
                    p[k] = x;
                    let mut pert = ae.clone();
                    pert.encoder.set_flat_params(&p[..enc_n]).unwrap();
                    pert.decoder.set_flat_params(&p[enc_n..]).unwrap();
                    pert.reconstruction_loss(&batch, &[]).unwrap().0
                },
                base[k],
                1e-5,
            );
            let denom = flat[k].abs().max(fd.abs()).max(1e-4);
            assert!(
                (flat[k] - fd).abs() / denom < 1e-4,
                "param {k}: {} vs {fd}",
                flat[k]
            );
        }
    }

    /// Gradients stay exact when bottleneck jitter is active: finite
    /// differences over both networks with a frozen noise draw.
    #[test]
    fn jittered_gradients_match_central_differences() {
        let ae = small_ae(21);
        let mut r = rng(22);
        let states: Vec<Vec<f64>> = (0..3).map(|_| random_binary(12, &mut r)).collect();
        let batch: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let jitter: Vec<f64> = (0..3 * 6).map(|_| r.gen_range(-0.3..0.3)).collect();
        let (_, enc_grads, dec_grads) = ae.reconstruction_loss(&batch, &jitter).unwrap();
        let mut flat = Vec::new();
        for g in enc_grads.layers.iter().chain(&dec_grads.layers) {
            flat.extend_from_slice(&g.weights);
            flat.extend_from_slice(&g.bias);
        }
        let enc_n = ae.encoder.param_count();
        let mut base = ae.encoder.flat_params();
        base.extend(ae.decoder.flat_params());
        for _ in 0..40 {
            let k = r.gen_range(0..base.len());
            let fd = nn::central_difference(
                |x| {
                    let mut p = base.clone();
                    p[k] = x;
                    let mut pert = ae.clone();
                    pert.encoder.set_flat_params(&p[..enc_n]).unwrap();
                    pert.decoder.set_flat_params(&p[enc_n..]).unwrap();
                    pert.reconstruction_loss(&batch, &jitter).unwrap().0
                },
                base[k],
                1e-5,
            );
            let denom = flat[k].abs().max(fd.abs()).max(1e-4);
            assert!(
                (flat[k] - fd).abs() / denom < 1e-4,
                "param {k}: {} vs {fd}",
                flat[k]
            );
        }
        assert!(matches!(
            ae.reconstruction_loss(&batch, &jitter[..5]),
            Err(LatentError::Dimension { .. })
        ));
    }

    #[test]
    fn buffer_is_bounded_fifo() {
        assert!(ReconstructionBuffer::new(0).is_err());
        let mut buf = ReconstructionBuffer::new(3).unwrap();
        assert!(buf.is_empty());
        for i in 0..5 {
            buf.push(BufferEntry {
                state: vec![i as f64],
                code: LatentCode { bits: vec![1] },
                reconstruction: vec![0.5],
            });
        }
        assert_eq!(buf.len(), 3);
        let states: Vec<f64> = buf.iter().map(|e| e.state[0]).collect();
        assert_eq!(states, vec![2.0, 3.0, 4.0]);
        let mut r = rng(18);
        assert_eq!(buf.sample(10, &mut r).len(), 10);
    }

    #[test]
    fn latent_steps_on_constant_state_earn_nothing() {
        let ae = small_ae(19);
        let scheme = HashScheme::new(4, 6, 0.0, 20).unwrap();
        let mut table = CountTable::new(4, 2).unwrap();
        let mut buf = ReconstructionBuffer::new(64).unwrap();
        let mut r = rng(21);
        let state = random_binary(12, &mut r);
        let mut first_code = None;
        for _ in 0..10 {
            let reward =
                latent_ice_step(&state, &mut table, &scheme, &ae, &mut buf, &mut r).unwrap();
            assert!(reward.value_bits.abs() < 1e-12);
            assert!(reward.entropy_bits.abs() < 1e-12);
            let code = buf.iter().last().unwrap().code.clone();
            if let Some(ref c) = first_code {
                assert_eq!(*c, code);
            } else {
                first_code = Some(code);
            }
        }
        assert_eq!(buf.len(), 10);
    }

    #[test]
    fn cadence_cares_only_about_multiples_and_empty_buffer_warns() {
        let mut ae = small_ae(22);
        let mut buf = ReconstructionBuffer::new(8).unwrap();
        let mut r = rng(23);
        assert_eq!(
            maybe_update_autoencoder(&buf, &mut ae, 1, &mut r).unwrap(),
            AeUpdate::Skipped
        );
        assert_eq!(
            maybe_update_autoencoder(&buf, &mut ae, 2, &mut r).unwrap(),
            AeUpdate::Skipped
        );
        let before = ae.encoder.flat_params();
        assert_eq!(
            maybe_update_autoencoder(&buf, &mut ae, 3, &mut r).unwrap(),
            AeUpdate::EmptyBuffer
        );
        assert_eq!(ae.encoder.flat_params(), before);

        buf.push(BufferEntry {
            state: random_binary(12, &mut r),
            code: LatentCode { bits: vec![1, -1, 1, -1] },
            reconstruction: vec![0.5; 12],
        });
        match maybe_update_autoencoder(&buf, &mut ae, 3, &mut r).unwrap() {
            AeUpdate::Updated { loss } => assert!(loss > 0.0),
            other => panic!("expected update, got {other:?}"),
        }
        assert_ne!(ae.encoder.flat_params(), before);
    }

    /// Held-out reconstruction loss falls over 200 cadence firings on
    /// random-walk visitation states.
    #[test]
    fn autoencoder_training_reduces_held_out_loss() {
        use crate::env::{Env, GridWorld};

        let mut env = GridWorld::new(8, 60).unwrap();
        let cells = env.cells();
        let mut ae =
            AutoencoderParams::new(cells, 48, 24, 8, 0.5, 0.0, 3, 5e-3, 8, &mut rng(24)).unwrap();
        let mut buf = ReconstructionBuffer::new(512).unwrap();
        let mut r = rng(25);

        let mut collect = |buf_opt: &mut Option<&mut ReconstructionBuffer>,
                           held: &mut Vec<Vec<f64>>,
                           r: &mut ChaCha8Rng| {
            for _ in 0..4 {
                let mut obs = env.reset();
                loop {
                    let plane: Vec<f64> = obs[..cells].iter().map(|&v| v as f64).collect();
                    if let Some(b) = buf_opt {
                        b.push(BufferEntry {
                            state: plane,
                            code: LatentCode { bits: vec![1; 8] },
                            reconstruction: Vec::new(),
                        });
                    } else {
                        held.push(plane);
                    }
                    let t = env.step(r.gen_range(0..4)).unwrap();
                    if t.done {
                        break;
                    }
                    obs = t.next_state;
                }
            }
        };
        let mut held = Vec::new();
        collect(&mut Some(&mut buf), &mut held, &mut r);
        collect(&mut None, &mut held, &mut r);
        let held_batch: Vec<&[f64]> = held.iter().map(|s| s.as_slice()).collect();

        let (before, _, _) = ae.reconstruction_loss(&held_batch, &[]).unwrap();
        let mut fired = 0;
        let mut index = 0u64;
        while fired < 200 {
            index += 1;
            if let AeUpdate::Updated { .. } =
                maybe_update_autoencoder(&buf, &mut ae, index, &mut r).unwrap()
            {
                fired += 1;
            }
        }
        let (after, _, _) = ae.reconstruction_loss(&held_batch, &[]).unwrap();
        assert!(
            after < before,
            "held-out loss should fall: {before} -> {after}"
        );
    }

    #[test]
    fn checkpoint_restores_codes_bit_exactly() {
        let ae = small_ae(26);
        let scheme = HashScheme::new(4, 6, 0.0, 27).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae_checkpoint.bin");
        ae.save_checkpoint(&path, scheme.rng_seed).unwrap();
        let (loaded, header) =
            AutoencoderParams::load_checkpoint(&path, ae.aux_weight, 0.0, 3, 1e-2, 4).unwrap();
        assert_eq!(header.projection_seed, 27);
        let rescheme =
            HashScheme::new(4, 6, 0.0, header.projection_seed).unwrap();
        assert_eq!(scheme.projection(), rescheme.projection());
        let mut r = rng(28);
        for _ in 0..10 {
            let state = random_binary(12, &mut r);
            let dense_a = ae.encode(&state).unwrap();
            let dense_b = loaded.encode(&state).unwrap();
            for (a, b) in dense_a.iter().zip(&dense_b) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            let code_a = simhash(&dense_a, &scheme, &mut rng(0)).unwrap();
            let code_b = simhash(&dense_b, &rescheme, &mut rng(0)).unwrap();
            assert_eq!(code_a, code_b);
        }
    }
}
