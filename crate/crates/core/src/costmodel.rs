//! Analytical parameter and FLOPs counts plus profile-driven latency.
//!
//! Accounting rules:
//! - token embeddings are factorized (`vocab → embed_proj_dim → E_1`) and
//!   the vocabulary head is tied to the token embedding; the last block's
//!   `E_N → embed_proj_dim` output projection is the only head weight.
//! - a layer holds `4E² + 2EF` matrix weights, `5E + F` biases and two
//!   layer norms (`4E`). With sharing a block stores one layer.
//! - adjacent blocks of different width are bridged by an `E_j × E_{j+1}`
//!   projection.
//! - FLOPs cover decoder blocks and width bridges only, at 2 FLOPs per
//!   multiply-accumulate. Every layer is counted even when weights are shared.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::archspace::ArchConfig;
use crate::error::{Error, Result};

pub const DEFAULT_FLOPS_SEQ_LEN: u32 = 1024;
pub const DEFAULT_LATENCY_SEQ_LEN: u32 = 128;

pub const FLOPS_EXCLUSIONS: &str =
    "FLOPs exclude token/position embeddings, the input/output projections and the vocabulary head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Params,
    Flops,
    Latency,
}

impl Metric {
    pub fn default_seq_len(self) -> u32 {
        match self {
            Metric::Latency => DEFAULT_LATENCY_SEQ_LEN,
            _ => DEFAULT_FLOPS_SEQ_LEN,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "params" => Ok(Metric::Params),
            "flops" => Ok(Metric::Flops),
            "latency" => Ok(Metric::Latency),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Params => "params",
            Metric::Flops => "flops",
            Metric::Latency => "latency",
        })
    }
}

/// Upper bound on one cost metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub metric: Metric,
    /// Parameters, FLOPs per forward pass, or milliseconds.
    pub limit: f64,
    pub seq_len: u32,
}

impl BudgetSpec {
    pub fn new(metric: Metric, limit: f64) -> Self {
        Self {
            metric,
            limit,
            seq_len: metric.default_seq_len(),
        }
    }

    pub fn with_seq_len(mut self, seq_len: u32) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.limit.is_nan() || self.limit < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "budget limit {} is not a non-negative number",
                self.limit
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::InvalidConfig("seq_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: u64,
    pub token_embedding: u64,
    pub position_embedding: u64,
    pub input_projection: u64,
    pub inter_block_projections: u64,
    pub per_block_shared: u64,
    pub lm_head: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopReport {
    pub seq_len: u32,
    pub total: u64,
    pub linear_maps: u64,
    pub attention_maps: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops: Option<FlopReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl CostReport {
    /// Plain-text rendering for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.params {
            out.push_str("parameters\n");
            for (name, v) in [
                ("token_embedding", p.token_embedding),
                ("position_embedding", p.position_embedding),
                ("input_projection", p.input_projection),
                ("inter_block_projections", p.inter_block_projections),
                ("per_block_shared", p.per_block_shared),
                ("lm_head", p.lm_head),
                ("total", p.total),
            ] {
                out.push_str(&format!("  {name:<24} {v:>15}\n"));
            }
        }
        if let Some(f) = &self.flops {
            out.push_str(&format!("flops (seq_len {})\n", f.seq_len));
            for (name, v) in [
                ("linear_maps", f.linear_maps),
                ("attention_maps", f.attention_maps),
                ("total", f.total),
            ] {
                out.push_str(&format!("  {name:<24} {v:>15}\n"));
            }
        }
        if let Some(ms) = self.latency_ms {
            out.push_str(&format!("latency_ms {ms:.3}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

fn layer_params(e: u64, f: u64) -> u64 {
    let matrices = 4 * e * e + 2 * e * f;
    let biases = 4 * e + f + e;
    let norms = 4 * e;
    matrices + biases + norms
}

fn bridges(arch: &ArchConfig) -> impl Iterator<Item = (u64, u64)> + '_ {
    arch.blocks
        .windows(2)
        .filter(|w| w[0].embed_dim != w[1].embed_dim)
        .map(|w| (u64::from(w[0].embed_dim), u64::from(w[1].embed_dim)))
}

pub fn count_params(arch: &ArchConfig) -> Result<ParamReport> {
    arch.check_structure()?;
    let proj = u64::from(arch.embed_proj_dim);
    let first = u64::from(arch.blocks[0].embed_dim);
    let last = u64::from(arch.blocks[arch.blocks.len() - 1].embed_dim);
    let token_embedding = u64::from(arch.vocab_size) * proj;
    let position_embedding = u64::from(arch.max_positions) * proj;
    let input_projection = proj * first;
    let inter_block_projections = bridges(arch).map(|(a, b)| a * b).sum();
    let per_block_shared = arch
        .blocks
        .iter()
        .map(|b| {
            let copies = if arch.param_sharing { 1 } else { u64::from(b.depth) };
            copies * layer_params(u64::from(b.embed_dim), u64::from(b.ffn_dim))
        })
        .sum();
    let lm_head = last * proj;
    Ok(ParamReport {
        total: token_embedding
            + position_embedding
            + input_projection
            + inter_block_projections
            + per_block_shared
            + lm_head,
        token_embedding,
        position_embedding,
        input_projection,
        inter_block_projections,
        per_block_shared,
        lm_head,
    })
}

pub fn count_flops(arch: &ArchConfig, seq_len: u32) -> Result<FlopReport> {
    arch.check_structure()?;
    if seq_len == 0 || seq_len > arch.max_positions {
        return Err(Error::SeqLen {
            seq_len,
            max_positions: arch.max_positions,
        });
    }
    let n = u64::from(seq_len);
    let mut linear_maps = 0u64;
    let mut attention_maps = 0u64;
    for b in &arch.blocks {
        let (e, f, l) = (u64::from(b.embed_dim), u64::from(b.ffn_dim), u64::from(b.depth));
        linear_maps += 2 * n * l * (4 * e * e + 2 * e * f);
        // QKᵀ and AV: n²·E multiply-accumulates each
        attention_maps += l * 4 * n * n * e;
    }
    linear_maps += bridges(arch).map(|(a, b)| 2 * n * a * b).sum::<u64>();
    Ok(FlopReport {
        seq_len,
        total: linear_maps + attention_maps,
        linear_maps,
        attention_maps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub embed_dim: u32,
    pub ffn_dim: u32,
    pub ms: f64,
}

/// Measured per-layer latencies for one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileFile", into = "ProfileFile")]
pub struct DeviceProfile {
    pub device_name: String,
    pub seq_len: u32,
    pub overhead_ms: f64,
    layer_entries: BTreeMap<(u32, u32), f64>,
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    #[serde(default)]
    schema: crate::schema::Schema,
    device_name: String,
    seq_len: u32,
    overhead_ms: f64,
    entries: Vec<LatencyEntry>,
}

impl TryFrom<ProfileFile> for DeviceProfile {
    type Error = Error;

    fn try_from(file: ProfileFile) -> Result<Self> {
        DeviceProfile::new(file.device_name, file.seq_len, file.overhead_ms, file.entries)
    }
}

impl From<DeviceProfile> for ProfileFile {
    fn from(p: DeviceProfile) -> Self {
        ProfileFile {
            schema: crate::schema::Schema,
            device_name: p.device_name,
            seq_len: p.seq_len,
            overhead_ms: p.overhead_ms,
            entries: p
                .layer_entries
                .into_iter()
                .map(|((embed_dim, ffn_dim), ms)| LatencyEntry { embed_dim, ffn_dim, ms })
                .collect(),
        }
    }
}

impl DeviceProfile {
    pub fn new(
        device_name: impl Into<String>,
        seq_len: u32,
        overhead_ms: f64,
        entries: impl IntoIterator<Item = LatencyEntry>,
    ) -> Result<Self> {
        if overhead_ms.is_nan() || overhead_ms < 0.0 {
            return Err(Error::InvalidConfig(format!("negative overhead {overhead_ms}")));
        }
        let mut layer_entries = BTreeMap::new();
        for e in entries {
            if !(e.ms >= 0.0 && e.ms.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "invalid latency {} at ({}, {})",
                    e.ms, e.embed_dim, e.ffn_dim
                )));
            }
            if layer_entries.insert((e.embed_dim, e.ffn_dim), e.ms).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate profile entry ({}, {})",
                    e.embed_dim, e.ffn_dim
                )));
            }
        }
        Ok(Self {
            device_name: device_name.into(),
            seq_len,
            overhead_ms,
            layer_entries,
        })
    }

    /// Latency of one layer, bilinearly interpolated between grid keys.
    pub fn layer_latency(&self, embed_dim: u32, ffn_dim: u32) -> Result<f64> {
        if let Some(&ms) = self.layer_entries.get(&(embed_dim, ffn_dim)) {
            return Ok(ms);
        }
        let out_of_grid = Error::OutOfGrid { embed_dim, ffn_dim };
        let es: BTreeSet<u32> = self.layer_entries.keys().map(|k| k.0).collect();
        let fs: BTreeSet<u32> = self.layer_entries.keys().map(|k| k.1).collect();
        let (Some((e0, e1)), Some((f0, f1))) = (bracket(&es, embed_dim), bracket(&fs, ffn_dim)) else {
            return Err(out_of_grid);
        };
        let at = |e, f| self.layer_entries.get(&(e, f)).copied();
        let (Some(q00), Some(q01), Some(q10), Some(q11)) = (at(e0, f0), at(e0, f1), at(e1, f0), at(e1, f1)) else {
            return Err(out_of_grid);
        };
        let t = frac(embed_dim, e0, e1);
        let u = frac(ffn_dim, f0, f1);
        Ok((1.0 - t) * (1.0 - u) * q00 + (1.0 - t) * u * q01 + t * (1.0 - u) * q10 + t * u * q11)
    }
}

fn bracket(axis: &BTreeSet<u32>, v: u32) -> Option<(u32, u32)> {
    let lo = *axis.range(..=v).next_back()?;
    let hi = *axis.range(v..).next()?;
    Some((lo, hi))
}

fn frac(v: u32, lo: u32, hi: u32) -> f64 {
    if hi == lo {
        0.0
    } else {
        f64::from(v - lo) / f64::from(hi - lo)
    }
}

pub fn estimate_latency(arch: &ArchConfig, profile: &DeviceProfile) -> Result<f64> {
    arch.check_structure()?;
    arch.blocks.iter().try_fold(profile.overhead_ms, |acc, b| {
        Ok(acc + f64::from(b.depth) * profile.layer_latency(b.embed_dim, b.ffn_dim)?)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVerdict {
    pub value: f64,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Evaluates the budgeted metric and whether it stays within the limit.
pub fn compute_cost(arch: &ArchConfig, budget: &BudgetSpec, profile: Option<&DeviceProfile>) -> Result<CostVerdict> {
    let mut warnings = Vec::new();
    let value = match budget.metric {
        Metric::Params => count_params(arch)?.total as f64,
        Metric::Flops => count_flops(arch, budget.seq_len)?.total as f64,
        Metric::Latency => {
            let profile = profile.ok_or(Error::MissingProfile)?;
            if profile.seq_len != budget.seq_len {
                warnings.push(format!(
                    "profile measured at seq_len {} but budget asks for {}",
                    profile.seq_len, budget.seq_len
                ));
            }
            estimate_latency(arch, profile)?
        }
    };
    Ok(CostVerdict {
        value,
        feasible: value <= budget.limit,
        warnings,
    })
}
