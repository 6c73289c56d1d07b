//! Expected matrix entropy at initialization and the depth-penalized
//! block-wise objective built on it.
//!
//! The entropy of a weight matrix `W` with singular values `s_j` is
//! `Σ_j ln(1 + s_j²/ε²)`, averaged over random initializations. A block of
//! `L` layers with embedding width `E` and FFN width `F` contributes
//!
//! ```text
//! L · [ α₁ (1 − βL/log₂E) · 4·T(E,E) + α₂ (1 − βL/log₂F) · 2·T(E,F) ]
//! ```
//!
//! where `T(r,c)` is the expected entropy of one `r×c` matrix. The four
//! `E×E` terms are the query, key, value and output projections; the two
//! `E×F` terms are the FFN matrices.

mod spectrum;
mod table;

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::ArchConfig;
use crate::error::{Error, Result};

pub use spectrum::{
    sample_matrix_entropy, sample_singular_values, tridiagonal_eigenvalues, Bidiagonal, SpectrumSampler,
};
pub use table::{build_table, required_shapes, EntropyTable, TableMeta};

/// Redraws allowed after a failed decomposition before giving up.
pub const DECOMPOSITION_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    Natural,
    Base2,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base2 => x.log2(),
        }
    }

    /// Factor converting nats into this base.
    fn nats_factor(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Base2 => std::f64::consts::LOG2_E,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Zero-mean Gaussian entries with variance `2 / (rows + cols)`.
    #[default]
    Glorot,
}

impl InitRule {
    pub fn std_dev(self, rows: usize, cols: usize) -> f64 {
        match self {
            InitRule::Glorot => (2.0 / (rows + cols) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub alpha_mhsa: f64,
    pub alpha_ffn: f64,
    pub matrix_log_base: LogBase,
    pub width_log_base: LogBase,
    pub init_rule: InitRule,
    pub mc_samples: u32,
    pub seed: u64,
    pub sampler: SpectrumSampler,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            beta: 1.0 / 16.0,
            alpha_mhsa: 1.0,
            alpha_ffn: 1.0,
            matrix_log_base: LogBase::Natural,
            width_log_base: LogBase::Base2,
            init_rule: InitRule::Glorot,
            mc_samples: 64,
            seed: 0,
            sampler: SpectrumSampler::Bidiagonal,
        }
    }
}

impl EntropyConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !self.alpha_mhsa.is_finite() || !self.alpha_ffn.is_finite() {
            return Err(Error::InvalidConfig("alpha weights must be finite".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Describes where `table` disagrees with the fields that determine table
    /// values. β and α only enter scoring, so they may differ.
    pub fn table_mismatch(&self, table: &EntropyConfig) -> Option<String> {
        let mut diffs = Vec::new();
        if self.epsilon != table.epsilon {
            diffs.push(format!("epsilon {} != {}", table.epsilon, self.epsilon));
        }
        if self.matrix_log_base != table.matrix_log_base {
            diffs.push("matrix_log_base".to_string());
        }
        if self.init_rule != table.init_rule {
            diffs.push("init_rule".to_string());
        }
        if self.mc_samples != table.mc_samples {
            diffs.push(format!("mc_samples {} != {}", table.mc_samples, self.mc_samples));
        }
        if self.seed != table.seed {
            diffs.push(format!("seed {} != {}", table.seed, self.seed));
        }
        if self.sampler != table.sampler {
            diffs.push("sampler".to_string());
        }
        if diffs.is_empty() {
            None
        } else {
            Some(format!("table built with {}", diffs.join(", ")))
        }
    }
}

/// `Σ_j ln(1 + s_j²/ε²)` in nats.
pub fn entropy_from_singulars(singular_values: &[f64], epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut total = 0.0;
    for &s in singular_values {
        if s.is_nan() || s < 0.0 {
            return Err(Error::Domain(format!("negative singular value {s}")));
        }
        let r = s / epsilon;
        total += (r * r).ln_1p();
    }
    Ok(total)
}

/// Monte-Carlo mean of the matrix entropy of a freshly initialized
/// `rows×cols` weight matrix.
pub fn expected_matrix_entropy<R: Rng + ?Sized>(rows: u32, cols: u32, cfg: &EntropyConfig, rng: &mut R) -> Result<f64> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain(format!("matrix shape ({rows}, {cols}) has a zero side")));
    }
    cfg.check()?;
    let (r, c) = (rows as usize, cols as usize);
    let std_dev = cfg.init_rule.std_dev(r, c);
    let mut sum = 0.0;
    for _ in 0..cfg.mc_samples {
        let mut attempt = 0;
        sum += loop {
            match sample_matrix_entropy(r, c, std_dev, cfg.epsilon, cfg.sampler, rng) {
                Ok(h) => break h,
                Err(Error::Decomposition { .. }) if attempt < DECOMPOSITION_RETRIES => attempt += 1,
                Err(e) => return Err(e),
            }
        };
    }
    Ok(sum / f64::from(cfg.mc_samples) * cfg.matrix_log_base.nats_factor())
}

/// `β·L / log₂(width)`: the depth-to-effective-width ratio.
pub fn effectiveness_gamma(depth: u32, width_channels: u32, beta: f64) -> Result<f64> {
    gamma_with_base(depth, width_channels, beta, LogBase::Base2)
}

fn gamma_with_base(depth: u32, width: u32, beta: f64, base: LogBase) -> Result<f64> {
    if width < 2 {
        return Err(Error::Domain(format!(
            "width {width} gives a non-positive effective width"
        )));
    }
    Ok(beta * f64::from(depth) / base.log(f64::from(width)))
}

/// Anything that can answer "expected entropy of an `rows×cols` matrix".
pub trait EntropySource {
    fn matrix_entropy(&self, rows: u32, cols: u32) -> Result<f64>;
}

impl EntropySource for BTreeMap<(u32, u32), f64> {
    fn matrix_entropy(&self, rows: u32, cols: u32) -> Result<f64> {
        self.get(&(rows.min(cols), rows.max(cols)))
            .copied()
            .ok_or(Error::MissingKey { rows, cols })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub gamma_mhsa: f64,
    pub gamma_ffn: f64,
    /// Entropy of one attention layer (Q, K, V and O together).
    pub h_mhsa: f64,
    /// Entropy of one FFN layer (both matrices).
    pub h_ffn: f64,
    pub block_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub per_block: Vec<BlockScore>,
    pub total: f64,
}

/// Scores `arch` with entropies taken from `source`.
pub fn score_with<S: EntropySource + ?Sized>(
    arch: &ArchConfig,
    cfg: &EntropyConfig,
    source: &S,
) -> Result<ScoreBreakdown> {
    arch.check_structure()?;
    let per_block = arch
        .blocks
        .iter()
        .map(|b| {
            let gamma_mhsa = gamma_with_base(b.depth, b.embed_dim, cfg.beta, cfg.width_log_base)?;
            let gamma_ffn = gamma_with_base(b.depth, b.ffn_dim, cfg.beta, cfg.width_log_base)?;
            let h_mhsa = 4.0 * source.matrix_entropy(b.embed_dim, b.embed_dim)?;
            let h_ffn = 2.0 * source.matrix_entropy(b.embed_dim, b.ffn_dim)?;
            let layer = cfg.alpha_mhsa * (1.0 - gamma_mhsa) * h_mhsa + cfg.alpha_ffn * (1.0 - gamma_ffn) * h_ffn;
            Ok(BlockScore {
                gamma_mhsa,
                gamma_ffn,
                h_mhsa,
                h_ffn,
                block_total: f64::from(b.depth) * layer,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_block.iter().map(|b| b.block_total).sum();
    Ok(ScoreBreakdown { per_block, total })
}

/// Scores `arch` from a precomputed table, refusing tables built under a
/// different configuration.
pub fn score_arch(arch: &ArchConfig, cfg: &EntropyConfig, table: &EntropyTable) -> Result<ScoreBreakdown> {
    table.check_config(cfg)?;
    score_with(arch, cfg, table)
}

/// Scores `arch` by fresh Monte-Carlo estimates instead of a table. Each
/// distinct matrix shape is estimated once, in block order.
pub fn score_arch_direct<R: Rng + ?Sized>(
    arch: &ArchConfig,
    cfg: &EntropyConfig,
    rng: &mut R,
) -> Result<ScoreBreakdown> {
    arch.check_structure()?;
    let mut values = BTreeMap::new();
    for b in &arch.blocks {
        for (r, c) in [(b.embed_dim, b.embed_dim), (b.embed_dim, b.ffn_dim)] {
            let key = (r.min(c), r.max(c));
            if let Entry::Vacant(slot) = values.entry(key) {
                slot.insert(expected_matrix_entropy(key.0, key.1, cfg, rng)?);
            }
        }
    }
    score_with(arch, cfg, &values)
}
