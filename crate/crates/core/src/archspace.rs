//! Block-wise decoder architectures and the discrete space they are drawn from.
//!
//! An architecture is a list of `N` blocks. Every layer inside a block has the
//! same embedding width, FFN width and head count, and with parameter sharing
//! all layers of a block reuse one set of weights. Embedding widths must be
//! non-decreasing from the first block to the last.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Schema;

pub const DEFAULT_HEAD_DIM: u32 = 64;
pub const DEFAULT_EMBED_PROJ_DIM: u32 = 768;
pub const DEFAULT_MAX_POSITIONS: u32 = 2048;
/// Byte-level BPE vocabulary.
pub const DEFAULT_VOCAB_SIZE: u32 = 50257;

/// Attempts allowed before sampling or mutation gives up on a space.
pub const REJECTION_CAP: usize = 10_000;

/// Largest grid distance a single mutation moves a field.
pub const MUTATION_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockSpec {
    pub embed_dim: u32,
    pub ffn_dim: u32,
    pub depth: u32,
}

impl BlockSpec {
    pub fn new(embed_dim: u32, ffn_dim: u32, depth: u32) -> Self {
        Self {
            embed_dim,
            ffn_dim,
            depth,
        }
    }

    pub fn ffn_ratio(&self) -> f64 {
        f64::from(self.ffn_dim) / f64::from(self.embed_dim)
    }

    pub fn heads(&self, head_dim: u32) -> u32 {
        self.embed_dim / head_dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    #[serde(default)]
    pub schema: Schema,
    pub blocks: Vec<BlockSpec>,
    #[serde(default = "default_embed_proj_dim")]
    pub embed_proj_dim: u32,
    #[serde(default = "default_max_positions")]
    pub max_positions: u32,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: u32,
    #[serde(default = "default_head_dim")]
    pub head_dim: u32,
    #[serde(default = "default_true")]
    pub param_sharing: bool,
}

fn default_embed_proj_dim() -> u32 {
    DEFAULT_EMBED_PROJ_DIM
}
fn default_max_positions() -> u32 {
    DEFAULT_MAX_POSITIONS
}
fn default_vocab_size() -> u32 {
    DEFAULT_VOCAB_SIZE
}
fn default_head_dim() -> u32 {
    DEFAULT_HEAD_DIM
}
fn default_true() -> bool {
    true
}

impl ArchConfig {
    /// Architecture with the default global settings.
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        Self {
            schema: Schema,
            blocks,
            embed_proj_dim: DEFAULT_EMBED_PROJ_DIM,
            max_positions: DEFAULT_MAX_POSITIONS,
            vocab_size: DEFAULT_VOCAB_SIZE,
            head_dim: DEFAULT_HEAD_DIM,
            param_sharing: true,
        }
    }
    /// Builds blocks from per-block widths, FFN ratios (F = round(E·ratio))
    /// and depths.
    pub fn from_ratios(embed: &[u32], ratios: &[f64], depth: &[u32]) -> Self {
        assert!(embed.len() == ratios.len() && embed.len() == depth.len());
        let blocks = embed
            .iter()
            .zip(ratios)
            .zip(depth)
            .map(|((&e, &r), &l)| BlockSpec::new(e, (f64::from(e) * r).round() as u32, l))
            .collect();
        Self::new(blocks)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_depth(&self) -> u32 {
        self.blocks.iter().map(|b| b.depth).sum()
    }

    /// Checks the rules that hold for every architecture regardless of the
    /// search space: at least one block, positive dimensions, whole heads and
    /// non-decreasing embedding widths.
    pub fn check_structure(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.blocks.is_empty() {
            violations.push(Violation::new(None, Rule::NoBlocks));
        }
        if self.head_dim == 0 {
            violations.push(Violation::new(None, Rule::ZeroHeadDim));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.embed_dim == 0 || b.ffn_dim == 0 || b.depth == 0 {
                violations.push(Violation::new(Some(i), Rule::ZeroDimension));
            } else if self.head_dim != 0 && b.embed_dim % self.head_dim != 0 {
                violations.push(Violation::new(
                    Some(i),
                    Rule::PartialHead {
                        embed_dim: b.embed_dim,
                        head_dim: self.head_dim,
                    },
                ));
            }
        }
        push_monotonicity(&self.blocks, &mut violations);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArch(violations))
        }
    }

    /// Stable ordering key used for deterministic tie-breaking.
    pub fn encoding(&self) -> Vec<(u32, u32, u32)> {
        self.blocks.iter().map(|b| (b.embed_dim, b.ffn_dim, b.depth)).collect()
    }

    /// 64-bit FNV-1a hash of the block structure and global settings.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for b in &self.blocks {
            h.write(b.embed_dim);
            h.write(b.ffn_dim);
            h.write(b.depth);
        }
        h.write(self.embed_proj_dim);
        h.write(self.max_positions);
        h.write(self.vocab_size);
        h.write(self.head_dim);
        h.write(u32::from(self.param_sharing));
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, v: u32) {
        for byte in v.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceDef {
    #[serde(default)]
    pub schema: Schema,
    pub embed_choices: Vec<u32>,
    pub ffn_choices: Vec<u32>,
    pub depth_choices: Vec<u32>,
    pub num_blocks: usize,
    #[serde(default = "default_head_dim")]
    pub head_dim: u32,
    #[serde(default = "default_embed_proj_dim")]
    pub embed_proj_dim: u32,
    #[serde(default = "default_max_positions")]
    pub max_positions: u32,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: u32,
    #[serde(default = "default_true")]
    pub param_sharing: bool,
}

impl Default for SearchSpaceDef {
    fn default() -> Self {
        Self {
            schema: Schema,
            embed_choices: (1..=16).map(|i| i * 64).collect(),
            ffn_choices: (1..=32).map(|i| i * 128).collect(),
            depth_choices: vec![1, 2, 3, 4],
            num_blocks: 4,
            head_dim: DEFAULT_HEAD_DIM,
            embed_proj_dim: DEFAULT_EMBED_PROJ_DIM,
            max_positions: DEFAULT_MAX_POSITIONS,
            vocab_size: DEFAULT_VOCAB_SIZE,
            param_sharing: true,
        }
    }
}

impl SearchSpaceDef {
    /// A space with default global settings and the given choice sets.
    pub fn with_choices(embed: &[u32], ffn: &[u32], depth: &[u32], num_blocks: usize) -> Self {
        Self {
            embed_choices: embed.to_vec(),
            ffn_choices: ffn.to_vec(),
            depth_choices: depth.to_vec(),
            num_blocks,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let sets = [
            ("embed_choices", &self.embed_choices),
            ("ffn_choices", &self.ffn_choices),
            ("depth_choices", &self.depth_choices),
        ];
        for (name, set) in sets {
            if set.is_empty() {
                return Err(Error::InvalidSpace(format!("{name} is empty")));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSpace(format!("{name} is not strictly ascending")));
            }
            if set[0] == 0 {
                return Err(Error::InvalidSpace(format!("{name} contains zero")));
            }
        }
        if self.num_blocks == 0 {
            return Err(Error::InvalidSpace("num_blocks must be at least 1".into()));
        }
        if self.head_dim == 0 {
            return Err(Error::InvalidSpace("head_dim must be positive".into()));
        }
        if let Some(e) = self.embed_choices.iter().find(|&&e| e % self.head_dim != 0) {
            return Err(Error::InvalidSpace(format!(
                "embed choice {e} is not a multiple of head_dim {}",
                self.head_dim
            )));
        }
        Ok(())
    }

    /// Number of per-block field combinations, `|E|·|F|·|L|`.
    pub fn block_combinations(&self) -> u128 {
        self.embed_choices.len() as u128 * self.ffn_choices.len() as u128 * self.depth_choices.len() as u128
    }

    /// Raw product of all choice-set sizes over every block, before the
    /// monotonicity rule removes anything.
    pub fn raw_size(&self) -> u128 {
        (0..self.num_blocks).fold(1u128, |acc, _| acc.saturating_mul(self.block_combinations()))
    }

    /// Wraps blocks with this space's global settings.
    pub fn arch(&self, blocks: Vec<BlockSpec>) -> ArchConfig {
        ArchConfig {
            schema: Schema,
            blocks,
            embed_proj_dim: self.embed_proj_dim,
            max_positions: self.max_positions,
            vocab_size: self.vocab_size,
            head_dim: self.head_dim,
            param_sharing: self.param_sharing,
        }
    }

    /// Every block at the smallest choice on every axis.
    pub fn minimal_arch(&self) -> ArchConfig {
        let b = BlockSpec::new(self.embed_choices[0], self.ffn_choices[0], self.depth_choices[0]);
        self.arch(vec![b; self.num_blocks])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    NoBlocks,
    ZeroHeadDim,
    ZeroDimension,
    PartialHead { embed_dim: u32, head_dim: u32 },
    BlockCount { expected: usize, found: usize },
    HeadDimMismatch { expected: u32, found: u32 },
    EmbedNotInChoices(u32),
    FfnNotInChoices(u32),
    DepthNotInChoices(u32),
    NonDecreasingEmbedding { previous: u32, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub block: Option<usize>,
    pub rule: Rule,
}

impl Violation {
    fn new(block: Option<usize>, rule: Rule) -> Self {
        Self { block, rule }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.block {
            write!(f, "block {i}: ")?;
        }
        match &self.rule {
            Rule::NoBlocks => write!(f, "architecture has no blocks"),
            Rule::ZeroHeadDim => write!(f, "head_dim must be positive"),
            Rule::ZeroDimension => write!(f, "dimensions must be positive"),
            Rule::PartialHead { embed_dim, head_dim } => {
                write!(f, "embed_dim {embed_dim} is not a multiple of head_dim {head_dim}")
            }
            Rule::BlockCount { expected, found } => {
                write!(f, "block count {found} differs from num_blocks {expected}")
            }
            Rule::HeadDimMismatch { expected, found } => {
                write!(f, "head_dim {found} differs from the space's {expected}")
            }
            Rule::EmbedNotInChoices(v) => write!(f, "embed_dim {v} not in embed_choices"),
            Rule::FfnNotInChoices(v) => write!(f, "ffn_dim {v} not in ffn_choices"),
            Rule::DepthNotInChoices(v) => write!(f, "depth {v} not in depth_choices"),
            Rule::NonDecreasingEmbedding { previous, found } => {
                write!(f, "non-decreasing embedding violated ({found} after {previous})")
            }
        }
    }
}

/// Outcome of [`validate`]; empty means the architecture belongs to the space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidArch(self.violations))
        }
    }
}

fn push_monotonicity(blocks: &[BlockSpec], out: &mut Vec<Violation>) {
    for (i, w) in blocks.windows(2).enumerate() {
        if w[1].embed_dim < w[0].embed_dim {
            out.push(Violation::new(
                Some(i + 1),
                Rule::NonDecreasingEmbedding {
                    previous: w[0].embed_dim,
                    found: w[1].embed_dim,
                },
            ));
        }
    }
}

pub fn validate(arch: &ArchConfig, space: &SearchSpaceDef) -> Validation {
    let mut violations = Vec::new();
    if arch.blocks.len() != space.num_blocks {
        violations.push(Violation::new(
            None,
            Rule::BlockCount {
                expected: space.num_blocks,
                found: arch.blocks.len(),
            },
        ));
    }
    if arch.head_dim != space.head_dim {
        violations.push(Violation::new(
            None,
            Rule::HeadDimMismatch {
                expected: space.head_dim,
                found: arch.head_dim,
            },
        ));
    }
    for (i, b) in arch.blocks.iter().enumerate() {
        if space.embed_choices.binary_search(&b.embed_dim).is_err() {
            violations.push(Violation::new(Some(i), Rule::EmbedNotInChoices(b.embed_dim)));
        }
        if space.ffn_choices.binary_search(&b.ffn_dim).is_err() {
            violations.push(Violation::new(Some(i), Rule::FfnNotInChoices(b.ffn_dim)));
        }
        if space.depth_choices.binary_search(&b.depth).is_err() {
            violations.push(Violation::new(Some(i), Rule::DepthNotInChoices(b.depth)));
        }
    }
    push_monotonicity(&arch.blocks, &mut violations);
    Validation { violations }
}

fn is_monotone(blocks: &[BlockSpec]) -> bool {
    blocks.windows(2).all(|w| w[0].embed_dim <= w[1].embed_dim)
}

fn pick<R: Rng + ?Sized>(set: &[u32], rng: &mut R) -> u32 {
    set[rng.random_range(0..set.len())]
}

/// Draws every block field uniformly and rejects non-monotone draws.
pub fn sample_uniform<R: Rng + ?Sized>(space: &SearchSpaceDef, rng: &mut R) -> Result<ArchConfig> {
    sample_uniform_traced(space, rng).map(|(arch, _)| arch)
}

/// Like [`sample_uniform`] but also reports how many draws were needed.
pub fn sample_uniform_traced<R: Rng + ?Sized>(space: &SearchSpaceDef, rng: &mut R) -> Result<(ArchConfig, usize)> {
    space.check()?;
    let mut blocks = Vec::with_capacity(space.num_blocks);
    for attempt in 1..=REJECTION_CAP {
        blocks.clear();
        for _ in 0..space.num_blocks {
            blocks.push(BlockSpec::new(
                pick(&space.embed_choices, rng),
                pick(&space.ffn_choices, rng),
                pick(&space.depth_choices, rng),
            ));
        }
        if is_monotone(&blocks) {
            return Ok((space.arch(blocks), attempt));
        }
    }
    Err(Error::RejectionLimit {
        attempts: REJECTION_CAP,
    })
}

/// Moves `current` by up to [`MUTATION_RADIUS`] grid steps, never zero and
/// never off the grid. Returns `None` when the set has a single value.
fn step<R: Rng + ?Sized>(set: &[u32], current: u32, rng: &mut R) -> Option<u32> {
    let idx = set.binary_search(&current).ok()?;
    let lo = idx.saturating_sub(MUTATION_RADIUS);
    let hi = (idx + MUTATION_RADIUS).min(set.len() - 1);
    let span = hi - lo;
    if span == 0 {
        return None;
    }
    // uniform over [lo, hi] minus idx
    let mut j = lo + rng.random_range(0..span);
    if j >= idx {
        j += 1;
    }
    Some(set[j])
}

/// Mutates exactly one randomly chosen block.
///
/// Within that block each of depth, embedding width and FFN width is redrawn
/// with probability 1/2 to a neighbouring grid value. Draws that touch no
/// field, or that break the width ordering, are discarded and redrawn.
pub fn mutate<R: Rng + ?Sized>(arch: &ArchConfig, space: &SearchSpaceDef, rng: &mut R) -> Result<ArchConfig> {
    validate(arch, space).into_result()?;
    let j = rng.random_range(0..arch.blocks.len());
    let original = arch.blocks[j];
    let movable = [
        space.depth_choices.len() > 1,
        space.embed_choices.len() > 1,
        space.ffn_choices.len() > 1,
    ];
    if !movable.iter().any(|&m| m) {
        return Ok(arch.clone());
    }

    let mut out = arch.clone();
    for _ in 0..REJECTION_CAP {
        let mut block = original;
        let mut touched = false;
        if rng.random_bool(0.5) {
            if let Some(v) = step(&space.depth_choices, block.depth, rng) {
                block.depth = v;
                touched = true;
            }
        }
        if rng.random_bool(0.5) {
            if let Some(v) = step(&space.embed_choices, block.embed_dim, rng) {
                block.embed_dim = v;
                touched = true;
            }
        }
        if rng.random_bool(0.5) {
            if let Some(v) = step(&space.ffn_choices, block.ffn_dim, rng) {
                block.ffn_dim = v;
                touched = true;
            }
        }
        if !touched {
            continue;
        }
        out.blocks[j] = block;
        if is_monotone(&out.blocks) {
            return Ok(out);
        }
    }
    Err(Error::RejectionLimit {
        attempts: REJECTION_CAP,
    })
}

/// Lists every architecture of a small space exactly once.
///
/// Order is lexicographic over blocks, block 0 most significant; within a
/// block the key is (embed index, ffn index, depth index).
pub fn enumerate(space: &SearchSpaceDef, limit: u128) -> Result<Enumerate<'_>> {
    space.check()?;
    let size = space.raw_size();
    if size > limit {
        return Err(Error::SpaceTooLarge { size, limit });
    }
    Ok(Enumerate {
        space,
        digits: vec![0; space.num_blocks],
        done: false,
    })
}

pub struct Enumerate<'a> {
    space: &'a SearchSpaceDef,
    // one mixed-radix digit per block over |E|·|F|·|L| combos
    digits: Vec<usize>,
    done: bool,
}

impl Enumerate<'_> {
    fn block(&self, digit: usize) -> BlockSpec {
        let nf = self.space.ffn_choices.len();
        let nl = self.space.depth_choices.len();
        let e = digit / (nf * nl);
        let f = (digit / nl) % nf;
        let l = digit % nl;
        BlockSpec::new(
            self.space.embed_choices[e],
            self.space.ffn_choices[f],
            self.space.depth_choices[l],
        )
    }

    fn advance(&mut self) {
        let radix = self.space.block_combinations() as usize;
        for d in self.digits.iter_mut().rev() {
            *d += 1;
            if *d < radix {
                return;
            }
            *d = 0;
        }
        self.done = true;
    }
}

impl Iterator for Enumerate<'_> {
    type Item = ArchConfig;

    fn next(&mut self) -> Option<ArchConfig> {
        while !self.done {
            let blocks: Vec<BlockSpec> = self.digits.iter().map(|&d| self.block(d)).collect();
            self.advance();
            if is_monotone(&blocks) {
                return Some(self.space.arch(blocks));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ref_52m() -> ArchConfig {
        ArchConfig::from_ratios(&[512, 512, 640, 896], &[1.0; 4], &[2, 3, 2, 1])
    }

    #[test]
    fn reference_structure_is_valid() {
        assert!(validate(&ref_52m(), &SearchSpaceDef::default()).is_ok());
    }

    #[test]
    fn decreasing_widths_are_flagged_at_the_offending_block() {
        let space = SearchSpaceDef::with_choices(&[64, 128], &[128], &[1], 2);
        let arch = space.arch(vec![BlockSpec::new(128, 128, 1), BlockSpec::new(64, 128, 1)]);
        let v = validate(&arch, &space);
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].block, Some(1));
        assert!(v.violations[0].to_string().contains("non-decreasing embedding"));
    }

    #[test]
    fn off_grid_embedding_is_flagged() {
        let space = SearchSpaceDef::default();
        let mut arch = ref_52m();
        arch.blocks[0].embed_dim = 100;
        let v = validate(&arch, &space);
        assert!(v
            .violations
            .iter()
            .any(|x| x.block == Some(0) && x.to_string().contains("not in embed_choices")));
    }

    #[test]
    fn block_count_mismatch_is_flagged() {
        let space = SearchSpaceDef::default();
        let arch = space.arch(vec![BlockSpec::new(64, 128, 1)]);
        let v = validate(&arch, &space);
        assert!(matches!(
            v.violations[0].rule,
            Rule::BlockCount { expected: 4, found: 1 }
        ));
    }

    #[test]
    fn structure_check_rejects_partial_heads() {
        let arch = ArchConfig::new(vec![BlockSpec::new(100, 128, 1)]);
        assert!(matches!(arch.check_structure(), Err(Error::InvalidArch(_))));
    }

    #[test]
    fn space_check_catches_bad_sets() {
        for embed_choices in [vec![128, 64], vec![96]] {
            let s = SearchSpaceDef {
                embed_choices,
                ..Default::default()
            };
            assert!(s.check().is_err());
        }
        let mut s = SearchSpaceDef::default();
        s.depth_choices.clear();
        assert!(s.check().is_err());
        assert!(SearchSpaceDef::default().check().is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = SearchSpaceDef::default();
        let a = sample_uniform(&space, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = sample_uniform(&space, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, b);
        assert!(validate(&a, &space).is_ok());
    }

    #[test]
    fn single_embed_choice_pins_every_block() {
        let space = SearchSpaceDef {
            embed_choices: vec![64],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let arch = sample_uniform(&space, &mut rng).unwrap();
            assert!(arch.blocks.iter().all(|b| b.embed_dim == 64));
        }
    }

    #[test]
    fn rejection_rate_matches_exhaustive_ratio() {
        // Reduced space {64,128}^2: 3 of the 4 width pairs are monotone.
        let space = SearchSpaceDef::with_choices(&[64, 128], &[128], &[1], 2);
        let pairs = [64u32, 128];
        let monotone = pairs
            .iter()
            .flat_map(|a| pairs.iter().map(move |b| (a, b)))
            .filter(|(a, b)| a <= b)
            .count();
        let exact = monotone as f64 / 4.0;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let attempts: usize = (0..n).map(|_| sample_uniform_traced(&space, &mut rng).unwrap().1).sum();
        let acceptance = n as f64 / attempts as f64;
        assert!((acceptance - exact).abs() < 0.015, "{acceptance} vs {exact}");
    }

    #[test]
    fn minimal_arch_mutates_upward_in_one_block() {
        let space = SearchSpaceDef::default();
        let base = space.minimal_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m = mutate(&base, &space, &mut rng).unwrap();
            let changed: Vec<_> = (0..base.blocks.len())
                .filter(|&i| base.blocks[i] != m.blocks[i])
                .collect();
            assert_eq!(changed.len(), 1);
            let (a, b) = (base.blocks[changed[0]], m.blocks[changed[0]]);
            assert!(b.embed_dim >= a.embed_dim && b.ffn_dim >= a.ffn_dim && b.depth >= a.depth);
            assert!(validate(&m, &space).is_ok());
        }
    }

    #[test]
    fn mutation_is_deterministic_and_keeps_globals() {
        let space = SearchSpaceDef::default();
        let base = ref_52m();
        let a = mutate(&base, &space, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = mutate(&base, &space, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.embed_proj_dim, base.embed_proj_dim);
        assert_eq!(a.max_positions, base.max_positions);
        assert_eq!(a.vocab_size, base.vocab_size);
    }

    #[test]
    fn mutation_moves_at_most_two_grid_steps() {
        let space = SearchSpaceDef::default();
        let base = ref_52m();
        let idx = |set: &[u32], v: u32| set.binary_search(&v).unwrap() as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let m = mutate(&base, &space, &mut rng).unwrap();
            for (a, b) in base.blocks.iter().zip(&m.blocks) {
                let de = idx(&space.embed_choices, a.embed_dim) - idx(&space.embed_choices, b.embed_dim);
                let df = idx(&space.ffn_choices, a.ffn_dim) - idx(&space.ffn_choices, b.ffn_dim);
                let dl = idx(&space.depth_choices, a.depth) - idx(&space.depth_choices, b.depth);
                assert!(de.abs() <= 2 && df.abs() <= 2 && dl.abs() <= 2);
            }
        }
    }

    #[test]
    fn mutation_hits_each_block_uniformly() {
        let space = SearchSpaceDef::default();
        let base = ref_52m();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let m = mutate(&base, &space, &mut rng).unwrap();
            let j = (0..4).find(|&i| base.blocks[i] != m.blocks[i]).unwrap();
            counts[j] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn enumerate_small_space_by_hand_count() {
        let space = SearchSpaceDef::with_choices(&[64, 128], &[128], &[1, 2], 2);
        let all: Vec<_> = enumerate(&space, 1_000).unwrap().collect();
        assert_eq!(all.len(), 12);
        let mut seen = std::collections::HashSet::new();
        for a in &all {
            assert!(validate(a, &space).is_ok());
            assert!(seen.insert(a.encoding()));
        }
        // lexicographic order
        assert!(all.windows(2).all(|w| w[0].encoding() < w[1].encoding()));
    }

    #[test]
    fn enumerate_single_block_counts_every_combination() {
        let space = SearchSpaceDef::with_choices(&[64, 128, 192], &[128, 256], &[1, 2, 3, 4], 1);
        assert_eq!(enumerate(&space, 1_000).unwrap().count(), 3 * 2 * 4);
    }

    #[test]
    fn enumerate_refuses_default_space() {
        let err = enumerate(&SearchSpaceDef::default(), 1_000_000).err().unwrap();
        assert!(matches!(err, Error::SpaceTooLarge { .. }));
    }

    #[test]
    fn arch_json_round_trips_with_schema() {
        let arch = ref_52m();
        let text = serde_json::to_string(&arch).unwrap();
        assert!(text.starts_with(r#"{"schema":1,"blocks":[{"embed_dim":512"#));
        let back: ArchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, arch);
        let bad = text.replace(r#""schema":1"#, r#""schema":2"#);
        assert!(serde_json::from_str::<ArchConfig>(&bad).is_err());
    }
}
