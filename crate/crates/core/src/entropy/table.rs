use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{expected_matrix_entropy, EntropyConfig, EntropySource};
use crate::archspace::SearchSpaceDef;
use crate::error::{Error, Result};
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub config: EntropyConfig,
    pub seed: u64,
    pub mc_samples: u32,
    pub built_at_unix: u64,
}

/// Precomputed expected entropy for every matrix shape a search space can
/// produce, keyed by `(min side, max side)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTable {
    pub meta: TableMeta,
    entries: BTreeMap<(u32, u32), f64>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    schema: Schema,
    meta: TableMeta,
    entries: Vec<(u32, u32, f64)>,
}

fn key(rows: u32, cols: u32) -> (u32, u32) {
    (rows.min(cols), rows.max(cols))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one table entry; depends only on the global seed and the shape
/// so that build order and thread count cannot change any value.
pub(crate) fn shape_seed(seed: u64, rows: u32, cols: u32) -> u64 {
    let (a, b) = key(rows, cols);
    splitmix(splitmix(seed) ^ (u64::from(a) << 32 | u64::from(b)))
}

/// Every matrix shape that scoring or cost accounting of an architecture in
/// `space` can touch: attention `(E,E)`, FFN `(E,F)`, width changes between
/// blocks `(E_a,E_b)` and the input projection `(embed_proj_dim, E)`.
pub fn required_shapes(space: &SearchSpaceDef) -> BTreeSet<(u32, u32)> {
    let mut shapes = BTreeSet::new();
    for &e in &space.embed_choices {
        shapes.insert((e, e));
        for &f in &space.ffn_choices {
            shapes.insert(key(e, f));
        }
        if space.num_blocks > 1 {
            for &e2 in space.embed_choices.iter().filter(|&&x| x > e) {
                shapes.insert((e, e2));
            }
        }
        if space.embed_proj_dim > 0 {
            shapes.insert(key(space.embed_proj_dim, e));
        }
    }
    shapes
}

pub fn build_table(space: &SearchSpaceDef, cfg: &EntropyConfig) -> Result<EntropyTable> {
    space.check()?;
    cfg.check()?;
    let shapes: Vec<_> = required_shapes(space).into_iter().collect();
    let values = shapes
        .par_iter()
        .map(|&(r, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(shape_seed(cfg.seed, r, c));
            expected_matrix_entropy(r, c, cfg, &mut rng).map(|h| ((r, c), h))
        })
        .collect::<Result<Vec<_>>>()?;
    let built_at_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(EntropyTable {
        meta: TableMeta {
            config: cfg.clone(),
            seed: cfg.seed,
            mc_samples: cfg.mc_samples,
            built_at_unix,
        },
        entries: values.into_iter().collect(),
    })
}

impl EntropyTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, rows: u32, cols: u32) -> Option<f64> {
        self.entries.get(&key(rows, cols)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Fails unless the table was built under the value-determining fields
    /// of `cfg`.
    pub fn check_config(&self, cfg: &EntropyConfig) -> Result<()> {
        match cfg.table_mismatch(&self.meta.config) {
            Some(why) => Err(Error::StaleTable(why)),
            None => Ok(()),
        }
    }

    /// True when every shape `space` can produce has an entry.
    pub fn covers(&self, space: &SearchSpaceDef) -> bool {
        required_shapes(space).iter().all(|k| self.entries.contains_key(k))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TableFile {
            schema: Schema,
            meta: self.meta.clone(),
            entries: self.entries.iter().map(|(&(r, c), &v)| (r, c, v)).collect(),
        };
        let mut text = serde_json::to_string(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text)?;
        if file.meta.seed != file.meta.config.seed || file.meta.mc_samples != file.meta.config.mc_samples {
            return Err(Error::StaleTable(
                "meta header disagrees with its config snapshot".into(),
            ));
        }
        let mut entries = BTreeMap::new();
        for (r, c, v) in file.entries {
            if r == 0 || r > c {
                return Err(Error::StaleTable(format!("malformed key ({r}, {c})")));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::StaleTable(format!("invalid value {v} at ({r}, {c})")));
            }
            if entries.insert((r, c), v).is_some() {
                return Err(Error::StaleTable(format!("duplicate key ({r}, {c})")));
            }
        }
        Ok(Self {
            meta: file.meta,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Reads a table and refuses it unless it matches `cfg`.
    pub fn load(path: &Path, cfg: &EntropyConfig) -> Result<Self> {
        let table = Self::read(path)?;
        table.check_config(cfg)?;
        Ok(table)
    }
}

impl EntropySource for EntropyTable {
    fn matrix_entropy(&self, rows: u32, cols: u32) -> Result<f64> {
        self.get(rows, cols).ok_or(Error::MissingKey { rows, cols })
    }
}
