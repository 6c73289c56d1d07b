use std::sync::OnceLock;

use entronas_core::archspace::{mutate, sample_uniform, validate};
use entronas_core::costmodel::{compute_cost, count_flops, count_params};
use entronas_core::entropy::{build_table, entropy_from_singulars, score_with, Bidiagonal};
use entronas_core::{ArchConfig, BudgetSpec, EntropyConfig, EntropyTable, Metric, SearchSpaceDef};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn default_table() -> &'static EntropyTable {
    static TABLE: OnceLock<EntropyTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let cfg = EntropyConfig {
            mc_samples: 16,
            ..Default::default()
        };
        build_table(&SearchSpaceDef::default(), &cfg).unwrap()
    })
}

fn arch_from_seed(seed: u64) -> ArchConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_uniform(&SearchSpaceDef::default(), &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn uniform_samples_are_valid(seed in any::<u64>()) {
        let space = SearchSpaceDef::default();
        let arch = arch_from_seed(seed);
        prop_assert!(validate(&arch, &space).is_ok());
    }

    #[test]
    fn mutation_stays_in_space_and_moves(seed in any::<u64>(), step_seed in any::<u64>()) {
        let space = SearchSpaceDef::default();
        let arch = arch_from_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let child = mutate(&arch, &space, &mut rng).unwrap();
        prop_assert!(validate(&child, &space).is_ok());
        prop_assert_ne!(&child, &arch);
        let changed = arch.blocks.iter().zip(&child.blocks).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, 1);
    }

    #[test]
    fn json_round_trip_is_byte_identical(seed in any::<u64>()) {
        let arch = arch_from_seed(seed);
        let text = serde_json::to_string(&arch).unwrap();
        let back: ArchConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &arch);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn costs_grow_with_depth(seed in any::<u64>(), block in 0usize..4) {
        let arch = arch_from_seed(seed);
        let mut deeper = arch.clone();
        deeper.blocks[block].depth += 1;
        // shared weights: one copy per block regardless of depth
        prop_assert_eq!(count_params(&deeper).unwrap().total, count_params(&arch).unwrap().total);
        prop_assert!(count_flops(&deeper, 1024).unwrap().total > count_flops(&arch, 1024).unwrap().total);
        let mut unshared = arch.clone();
        unshared.param_sharing = false;
        let mut unshared_deeper = deeper.clone();
        unshared_deeper.param_sharing = false;
        prop_assert!(count_params(&unshared_deeper).unwrap().total > count_params(&unshared).unwrap().total);
    }

    #[test]
    fn costs_grow_with_ffn_width(seed in any::<u64>(), block in 0usize..4) {
        let arch = arch_from_seed(seed);
        let mut wider = arch.clone();
        wider.blocks[block].ffn_dim += 128;
        prop_assert!(count_params(&wider).unwrap().total > count_params(&arch).unwrap().total);
        prop_assert!(count_flops(&wider, 1024).unwrap().total > count_flops(&arch, 1024).unwrap().total);
    }

    #[test]
    fn costs_grow_with_embed_width(seed in any::<u64>(), by in 1u32..4) {
        // widening every block keeps the ordering and leaves bridges in place
        let arch = arch_from_seed(seed);
        let mut wider = arch.clone();
        for b in &mut wider.blocks {
            b.embed_dim += 64 * by;
        }
        prop_assert!(count_params(&wider).unwrap().total > count_params(&arch).unwrap().total);
        prop_assert!(count_flops(&wider, 1024).unwrap().total > count_flops(&arch, 1024).unwrap().total);
    }

    #[test]
    fn shrinking_depth_keeps_feasibility(seed in any::<u64>(), block in 0usize..4, limit in 1e9f64..3e11) {
        let arch = arch_from_seed(seed);
        let budget = BudgetSpec::new(Metric::Flops, limit);
        prop_assume!(compute_cost(&arch, &budget, None).unwrap().feasible);
        prop_assume!(arch.blocks[block].depth > 1);
        let mut shallower = arch.clone();
        shallower.blocks[block].depth -= 1;
        prop_assert!(compute_cost(&shallower, &budget, None).unwrap().feasible);
    }

    #[test]
    fn scaling_alphas_scales_scores(a in any::<u64>(), b in any::<u64>(), c in 0.01f64..100.0) {
        let table = default_table();
        let base = table.meta.config.clone();
        let scaled = EntropyConfig { alpha_mhsa: c, alpha_ffn: c, ..base.clone() };
        let (x, y) = (arch_from_seed(a), arch_from_seed(b));
        let sx = score_with(&x, &base, table).unwrap().total;
        let sy = score_with(&y, &base, table).unwrap().total;
        let tx = score_with(&x, &scaled, table).unwrap().total;
        let ty = score_with(&y, &scaled, table).unwrap().total;
        prop_assert!((tx / (c * sx) - 1.0).abs() < 1e-12);
        prop_assert_eq!(sx.partial_cmp(&sy), tx.partial_cmp(&ty));
    }

    #[test]
    fn table_is_monotone_in_both_sides(i in 0usize..15, j in 0usize..31) {
        let table = default_table();
        let e = 64 * (i as u32 + 1);
        let f = 128 * (j as u32 + 1);
        prop_assert!(table.get(e, e).unwrap() < table.get(e + 64, e + 64).unwrap());
        prop_assert!(table.get(e, f).unwrap() < table.get(e, f + 128).unwrap());
        prop_assert!(table.get(e, f).unwrap() < table.get(e + 64, f).unwrap());
    }

    #[test]
    fn entropy_is_monotone_in_each_singular_value(
        values in prop::collection::vec(0.0f64..10.0, 1..20),
        idx in any::<prop::sample::Index>(),
        bump in 1e-6f64..1.0,
    ) {
        let k = idx.index(values.len());
        let mut bigger = values.clone();
        bigger[k] += bump;
        prop_assert!(entropy_from_singulars(&bigger, 0.01).unwrap() > entropy_from_singulars(&values, 0.01).unwrap());
    }

    #[test]
    fn log_det_equals_spectral_sum(rows in 1usize..120, cols in 1usize..120, seed in any::<u64>(), eps in 0.005f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_dev = (2.0 / (rows + cols) as f64).sqrt();
        let b = Bidiagonal::sample(rows, cols, std_dev, &mut rng).unwrap();
        let spectral = entropy_from_singulars(&b.singular_values().unwrap(), eps).unwrap();
        let det = b.log_det_entropy(eps);
        prop_assert!((det - spectral).abs() <= 1e-9 * spectral.max(1.0));
    }
}
