//! Factored trajectory entropy over discrete state vectors.
//!
//! A trajectory of states in `{0..K}^D` is summarized by per-dimension
//! symbol counts. The trajectory entropy is the sum of per-dimension
//! Shannon entropies in bits, and the ICE reward for a new state is the
//! change in that sum. Counts carry a cached `sum c*log2(c)` accumulator
//! per dimension so a step costs O(D) regardless of trajectory length.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("table needs dims >= 1 and alphabet_size >= 2, got {dims}x{symbols}")]
    Config { dims: usize, symbols: usize },
    #[error("state has {got} dims, table expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("symbol {symbol} at dim {dim} exceeds alphabet size {symbols}")]
    SymbolOutOfRange {
        dim: usize,
        symbol: u16,
        symbols: usize,
    },
    #[error("operation needs at least one absorbed state")]
    EmptyTrajectory,
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("probability {value} at index {index} is negative")]
    NegativeProbability { index: usize, value: f64 },
}

/// Trajectory information content at one step, with per-dimension breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySnapshot {
    /// Sum of `per_dim_bits`.
    pub total_bits: f64,
    pub per_dim_bits: Vec<f64>,
    /// States absorbed when the snapshot was taken.
    pub step: u64,
}

/// Outcome of absorbing one state into a [`CountTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IceReward {
    /// Change in trajectory entropy caused by this state, in bits.
    /// Not guaranteed non-negative: adding a state can rebalance a
    /// dimension's counts away from uniform (e.g. revisiting a state).
    pub value_bits: f64,
    /// Trajectory entropy after absorbing, in bits.
    pub entropy_bits: f64,
}

/// Per-dimension symbol counts for a trajectory of `dims`-length states
/// over the alphabet `0..symbols`.
#[derive(Debug, Clone)]
pub struct CountTable {
    dims: usize,
    symbols: usize,
    /// Row-major `dims x symbols` occurrence counts.
    counts: Vec<u64>,
    /// Per-dimension cached `sum_k c_k * log2(c_k)` (0 log 0 = 0).
    dim_clogc: Vec<f64>,
    /// Sum of `dim_clogc` across dimensions.
    total_clogc: f64,
    /// States absorbed so far.
    len: u64,
}

fn clog2c(c: u64) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.log2()
    }
}

impl CountTable {
    pub fn new(dims: usize, symbols: usize) -> Result<Self, EntropyError> {
        if dims == 0 || symbols < 2 {
            return Err(EntropyError::Config { dims, symbols });
        }
        Ok(Self {
            dims,
            symbols,
            counts: vec![0; dims * symbols],
            dim_clogc: vec![0.0; dims],
            total_clogc: 0.0,
            len: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Number of states absorbed.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forget all absorbed states, keeping the allocation.
    pub fn reset(&mut self) {
        self.counts.fill(0);
        self.dim_clogc.fill(0.0);
        self.total_clogc = 0.0;
        self.len = 0;
    }

    fn check(&self, state: &[u16]) -> Result<(), EntropyError> {
        if state.len() != self.dims {
            return Err(EntropyError::LengthMismatch {
                expected: self.dims,
                got: state.len(),
            });
        }
        for (dim, &symbol) in state.iter().enumerate() {
            if symbol as usize >= self.symbols {
                return Err(EntropyError::SymbolOutOfRange {
                    dim,
                    symbol,
                    symbols: self.symbols,
                });
            }
        }
        Ok(())
    }

    /// Add one state to the trajectory. The table is untouched on error.
    pub fn absorb(&mut self, state: &[u16]) -> Result<(), EntropyError> {
        self.check(state)?;
        for (dim, &symbol) in state.iter().enumerate() {
            let slot = dim * self.symbols + symbol as usize;
            let c = self.counts[slot];
            let delta = clog2c(c + 1) - clog2c(c);
            self.counts[slot] = c + 1;
            self.dim_clogc[dim] += delta;
            self.total_clogc += delta;
        }
        self.len += 1;
        Ok(())
    }

    /// Occurrence probabilities `c_k / n` for one dimension.
    pub fn occurrence_probabilities(&self, dim: usize) -> Result<Vec<f64>, EntropyError> {
        assert!(dim < self.dims, "dim {dim} out of range");
        if self.len == 0 {
            return Err(EntropyError::EmptyTrajectory);
        }
        let row = &self.counts[dim * self.symbols..(dim + 1) * self.symbols];
        let n = self.len as f64;
        Ok(row.iter().map(|&c| c as f64 / n).collect())
    }

    /// Shannon entropy of one dimension's symbol distribution, in bits.
    /// Lies in `[0, log2(min(steps, symbols))]`.
    pub fn element_entropy(&self, dim: usize) -> Result<f64, EntropyError> {
        assert!(dim < self.dims, "dim {dim} out of range");
        if self.len == 0 {
            return Err(EntropyError::EmptyTrajectory);
        }
        Ok(self.element_entropy_unchecked(dim))
    }

    fn element_entropy_unchecked(&self, dim: usize) -> f64 {
        let n = self.len as f64;
        n.log2() - self.dim_clogc[dim] / n
    }

    /// Total factored entropy in bits; 0 for an empty table. O(1).
    pub fn total_bits(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        let n = self.len as f64;
        self.dims as f64 * n.log2() - self.total_clogc / n
    }

    /// Trajectory entropy: per-dimension entropies and their sum, in bits.
    pub fn trajectory_entropy(&self) -> Result<EntropySnapshot, EntropyError> {
        if self.len == 0 {
            return Err(EntropyError::EmptyTrajectory);
        }
        let per_dim_bits: Vec<f64> = (0..self.dims)
            .map(|d| self.element_entropy_unchecked(d))
            .collect();
        Ok(EntropySnapshot {
            total_bits: self.total_bits(),
            per_dim_bits,
            step: self.len,
        })
    }

    /// Absorb a state and return the resulting entropy change.
    ///
    /// The table must already hold at least one state (episode drivers
    /// absorb the initial state first), so the "before" entropy is
    /// well-defined. Rewards telescope: their sum over an episode equals
    /// the final total entropy minus the initial (zero) one.
    pub fn ice_step(&mut self, next_state: &[u16]) -> Result<IceReward, EntropyError> {
        if self.len == 0 {
            return Err(EntropyError::EmptyTrajectory);
        }
        let before = self.total_bits();
        self.absorb(next_state)?;
        let after = self.total_bits();
        Ok(IceReward {
            value_bits: after - before,
            entropy_bits: after,
        })
    }
}

/// Entropy of the empirical distribution over whole states, in bits.
///
/// Counts distinct full states in a hash map (at most `trajectory.len()`
/// nonzero terms), never enumerating the K^D state space. Upper-bounded
/// by the factored trajectory entropy of the same states (sub-additivity);
/// the gap is zero iff dimensions are empirically independent.
pub fn joint_entropy_oracle(trajectory: &[Vec<u16>]) -> f64 {
    if trajectory.is_empty() {
        return 0.0;
    }
    let mut occurrences: HashMap<&[u16], u64> = HashMap::new();
    for state in trajectory {
        *occurrences.entry(state.as_slice()).or_insert(0) += 1;
    }
    let n = trajectory.len() as f64;
    let clogc: f64 = occurrences.values().map(|&c| clog2c(c)).sum();
    n.log2() - clogc / n
}

/// KL divergence from `p` to the uniform distribution over `p.len()`
/// outcomes, in bits, computed directly as `sum p * log2(p * K)`.
///
/// Equals `log2(K) - H(p)` for any probability vector.
pub fn kl_to_uniform(p: &[f64]) -> Result<f64, EntropyError> {
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(EntropyError::NegativeProbability { index, value });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(EntropyError::NotNormalized { sum });
    }
    let k = p.len() as f64;
    Ok(p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * (v * k).log2())
        .sum())
}
