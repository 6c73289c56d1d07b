use std::fs;
use std::path::{Path, PathBuf};

use entronas_core::costmodel::{compute_cost, count_flops, count_params, estimate_latency, FLOPS_EXCLUSIONS};
use entronas_core::entropy::{self, score_arch, score_arch_direct};
use entronas_core::evosearch::{
    ea_search, naive_scaling_baseline, random_search_baseline, Evaluator, Objective, ScalingKind,
};
use entronas_core::schema::Schema;
use entronas_core::{
    ArchConfig, BudgetSpec, CostReport, DeviceProfile, EntropyConfig, EntropyTable, Metric, ScoreBreakdown,
    SearchConfig, SearchSpaceDef,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{sha256_hex, Recorder};
use crate::{
    table_cache_dir, BaselineArgs, BaselineKind, BudgetArgs, BuildTableArgs, CliError, CostArgs, Format, ScoreArgs,
    SearchArgs, SearchFlags, TableArgs,
};

/// Largest relative gap accepted between table and direct scores.
pub const DIRECT_TOLERANCE: f64 = 0.01;

/// Offset separating the direct-scoring random stream from table seeds.
const DIRECT_STREAM: u64 = 0x6469_7265_6374;

type CliResult<T> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load<T: DeserializeOwned>(path: &Path, role: &str, rec: &mut Recorder) -> CliResult<T> {
    let bytes = read(path)?;
    rec.input(role, path, &bytes);
    parse(path, &bytes)
}

fn pretty<T: Serialize>(value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    text.push('\n');
    Ok(text)
}

fn set_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::internal)?;
    }
    Ok(())
}

fn load_space(path: Option<&Path>, rec: &mut Recorder) -> CliResult<SearchSpaceDef> {
    let space = match path {
        Some(p) => {
            let s: SearchSpaceDef = load(p, "space", rec)?;
            s.check()
                .map_err(|e| CliError::from_core(&p.display().to_string(), e))?;
            s
        }
        None => SearchSpaceDef::default(),
    };
    Ok(space)
}

fn load_entropy(path: Option<&Path>, rec: &mut Recorder) -> CliResult<Option<EntropyConfig>> {
    let Some(p) = path else { return Ok(None) };
    let cfg: EntropyConfig = load(p, "entropy_config", rec)?;
    cfg.check()
        .map_err(|e| CliError::from_core(&p.display().to_string(), e))?;
    Ok(Some(cfg))
}

fn load_arch(path: &Path, rec: &mut Recorder) -> CliResult<ArchConfig> {
    let arch: ArchConfig = load(path, "arch", rec)?;
    arch.check_structure()
        .map_err(|e| CliError::from_core(&path.display().to_string(), e))?;
    Ok(arch)
}

fn load_profile(path: Option<&Path>, rec: &mut Recorder) -> CliResult<Option<DeviceProfile>> {
    path.map(|p| load(p, "device", rec)).transpose()
}

/// Cache file name for a table over `space` built with `cfg`. Only the
/// fields that change table values enter the key.
pub fn cache_path(space: &SearchSpaceDef, cfg: &EntropyConfig) -> PathBuf {
    let key = json!({
        "space": space,
        "epsilon": cfg.epsilon,
        "matrix_log_base": cfg.matrix_log_base,
        "init_rule": cfg.init_rule,
        "mc_samples": cfg.mc_samples,
        "seed": cfg.seed,
        "sampler": cfg.sampler,
    });
    let digest = sha256_hex(key.to_string().as_bytes());
    table_cache_dir().join(format!("entropy-{}.json", &digest[..16]))
}

fn read_table(path: &Path, rec: &mut Recorder) -> CliResult<EntropyTable> {
    let bytes = read(path)?;
    rec.input("table", path, &bytes);
    let text = String::from_utf8(bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    EntropyTable::from_json(&text).map_err(|e| {
        CliError::from_core(
            &format!("{} (rebuild it with `build-table --force`)", path.display()),
            e,
        )
    })
}

struct Resolved {
    table: EntropyTable,
    entropy: EntropyConfig,
    path: PathBuf,
}

/// Finds the table for `space`: the explicit `--table`, else the cache,
/// building into the cache when `build_missing` is set.
fn resolve_table(
    args: &TableArgs,
    space: &SearchSpaceDef,
    build_missing: bool,
    rec: &mut Recorder,
) -> CliResult<Resolved> {
    let from_file = load_entropy(args.entropy_config.as_deref(), rec)?;
    let (table, entropy, path) = match &args.table {
        Some(path) => {
            let table = read_table(path, rec)?;
            let entropy = from_file.unwrap_or_else(|| table.meta.config.clone());
            (table, entropy, path.clone())
        }
        None => {
            let entropy = from_file.unwrap_or_default();
            let path = cache_path(space, &entropy);
            let table = if path.exists() {
                read_table(&path, rec)?
            } else if build_missing {
                eprintln!("building entropy table into {}", path.display());
                let table = entropy::build_table(space, &entropy)?;
                let text = table.to_json()?;
                write(&path, &text)?;
                rec.input("table", &path, text.as_bytes());
                table
            } else {
                return Err(CliError::new(
                    3,
                    format!("no cached table at {}; run build-table or pass --table", path.display()),
                ));
            };
            (table, entropy, path)
        }
    };
    table
        .check_config(&entropy)
        .map_err(|e| CliError::from_core(&path.display().to_string(), e))?;
    if !table.covers(space) {
        return Err(CliError::usage(format!(
            "{}: table does not cover every shape of the search space",
            path.display()
        )));
    }
    Ok(Resolved { table, entropy, path })
}

pub fn build_table(args: BuildTableArgs) -> CliResult<()> {
    set_threads(args.threads)?;
    let mut rec = Recorder::start("build-table");
    let space = load_space(args.space.as_deref(), &mut rec)?;
    let entropy = load_entropy(args.entropy_config.as_deref(), &mut rec)?.unwrap_or_default();
    let out = args.out.clone().unwrap_or_else(|| cache_path(&space, &entropy));

    if out.exists() && !args.force {
        let mut probe = Recorder::start("probe");
        let existing = read_table(&out, &mut probe)?;
        if let Err(e) = existing.check_config(&entropy) {
            return Err(CliError::new(
                1,
                format!("{}: {e}; pass --force to overwrite", out.display()),
            ));
        }
        if !existing.covers(&space) {
            return Err(CliError::new(
                1,
                format!(
                    "{}: existing table does not cover this space; pass --force to overwrite",
                    out.display()
                ),
            ));
        }
        eprintln!("{}: existing table matches, left unchanged", out.display());
        return Ok(());
    }

    let table = entropy::build_table(&space, &entropy)?;
    let text = table.to_json()?;
    write(&out, &text)?;
    rec.output("table", &out, text.as_bytes());
    let manifest = rec.finish(
        Some(entropy.seed),
        json!({
            "space": space,
            "entropy": entropy,
            "out": out,
            "force": args.force,
            "threads": args.threads,
            "entries": table.len(),
        }),
    );
    manifest.write(&manifest_beside(&out))?;
    eprintln!("{}: {} entries", out.display(), table.len());
    Ok(())
}

fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

#[derive(Serialize)]
struct DirectCheck<'a> {
    schema: Schema,
    table: &'a ScoreBreakdown,
    direct: &'a ScoreBreakdown,
    relative_error: f64,
    tolerance: f64,
    within_tolerance: bool,
}

pub fn score(args: ScoreArgs) -> CliResult<()> {
    let mut rec = Recorder::start("score");
    let arch = load_arch(&args.arch, &mut rec)?;
    let have_table = args.table.table.is_some() || !args.direct;

    let (text, entropy, failed) = if have_table {
        let space = load_space(args.table.space.as_deref(), &mut rec)?;
        let resolved = resolve_table_for_arch(&args.table, &space, &mut rec)?;
        let from_table = score_arch(&arch, &resolved.entropy, &resolved.table)
            .map_err(|e| CliError::from_core(&resolved.path.display().to_string(), e))?;
        if args.direct {
            let direct = direct_score(&arch, &resolved.entropy)?;
            let relative_error = (from_table.total - direct.total).abs() / direct.total.abs();
            let check = DirectCheck {
                schema: Schema,
                table: &from_table,
                direct: &direct,
                relative_error,
                tolerance: DIRECT_TOLERANCE,
                within_tolerance: relative_error <= DIRECT_TOLERANCE,
            };
            (pretty(&check)?, resolved.entropy, !check.within_tolerance)
        } else {
            (pretty(&from_table)?, resolved.entropy, false)
        }
    } else {
        let entropy = load_entropy(args.table.entropy_config.as_deref(), &mut rec)?.unwrap_or_default();
        (pretty(&direct_score(&arch, &entropy)?)?, entropy, false)
    };
    print!("{text}");
    if let Some(path) = &args.manifest {
        rec.output("stdout", Path::new("-"), text.as_bytes());
        rec.finish(
            Some(entropy.seed),
            json!({ "arch": args.arch, "entropy": entropy, "direct": args.direct }),
        )
        .write(path)?;
    }
    if failed {
        return Err(CliError::new(1, "table and direct scores differ by more than 1%"));
    }
    Ok(())
}

/// Like [`resolve_table`], but a table that lacks the architecture's space
/// is fine as long as it holds every shape the architecture needs.
fn resolve_table_for_arch(args: &TableArgs, space: &SearchSpaceDef, rec: &mut Recorder) -> CliResult<Resolved> {
    if args.table.is_none() {
        return resolve_table(args, space, false, rec);
    }
    let path = args.table.clone().unwrap_or_default();
    let table = read_table(&path, rec)?;
    let entropy = load_entropy(args.entropy_config.as_deref(), rec)?.unwrap_or_else(|| table.meta.config.clone());
    Ok(Resolved { table, entropy, path })
}

fn direct_score(arch: &ArchConfig, entropy: &EntropyConfig) -> CliResult<ScoreBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(entropy.seed ^ DIRECT_STREAM);
    Ok(score_arch_direct(arch, entropy, &mut rng)?)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchFile {
    iterations: Option<u64>,
    population_size: Option<usize>,
    parent_size: Option<usize>,
    seed: Option<u64>,
    metric: Option<Metric>,
    limit: Option<f64>,
    seq_len: Option<u32>,
    init_rejection_cap: Option<usize>,
    refill_attempt_cap: Option<usize>,
}

/// Flags over config file over built-in defaults.
fn resolve_search(budget: &BudgetArgs, flags: &SearchFlags, rec: &mut Recorder) -> CliResult<SearchConfig> {
    let file: SearchFile = match &flags.config {
        Some(p) => load(p, "config", rec)?,
        None => SearchFile::default(),
    };
    let metric = budget
        .metric
        .or(file.metric)
        .ok_or_else(|| CliError::usage("a budget metric is required (--metric)"))?;
    let limit = budget
        .limit
        .or(file.limit)
        .ok_or_else(|| CliError::usage("a budget limit is required (--limit)"))?;
    if !limit.is_finite() {
        return Err(CliError::usage(format!("--limit must be finite, got {limit}")));
    }
    let seq_len = budget.seq_len.or(file.seq_len).unwrap_or(metric.default_seq_len());
    let mut cfg = SearchConfig::new(BudgetSpec::new(metric, limit).with_seq_len(seq_len));
    cfg.iterations = flags.iters.or(file.iterations).unwrap_or(cfg.iterations);
    cfg.population_size = flags.pop.or(file.population_size).unwrap_or(cfg.population_size);
    cfg.parent_size = flags.parents.or(file.parent_size).unwrap_or(cfg.parent_size);
    cfg.seed = flags.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.init_rejection_cap = file.init_rejection_cap.unwrap_or(cfg.init_rejection_cap);
    cfg.refill_attempt_cap = file.refill_attempt_cap.or(cfg.refill_attempt_cap);
    cfg.check()?;
    Ok(cfg)
}

pub fn search(args: SearchArgs) -> CliResult<()> {
    set_threads(args.search.threads)?;
    let mut rec = Recorder::start("search");
    let cfg = resolve_search(&args.budget, &args.search, &mut rec)?;
    let profile = load_profile(args.budget.device.as_deref(), &mut rec)?;
    if cfg.budget.metric == Metric::Latency && profile.is_none() {
        return Err(CliError::usage("--metric latency needs --device"));
    }
    let space = load_space(args.table.space.as_deref(), &mut rec)?;
    let resolved = resolve_table(&args.table, &space, true, &mut rec)?;
    let eval = Evaluator::new(
        &space,
        &resolved.entropy,
        &resolved.table,
        &cfg.budget,
        profile.as_ref(),
    )?;
    let result = ea_search(&eval, &cfg)?;

    let outputs = [
        ("best_arch.json", pretty(&result.best.arch)?),
        ("result.json", pretty(&result)?),
        ("history.csv", result.history_csv()),
    ];
    for (name, text) in &outputs {
        let path = args.out_dir.join(name);
        write(&path, text)?;
        rec.output(name, &path, text.as_bytes());
    }
    let manifest = rec.finish(
        Some(cfg.seed),
        json!({
            "search": cfg,
            "space": space,
            "entropy": resolved.entropy,
            "table": resolved.path,
            "threads": args.search.threads,
            "search_wall_time_s": result.wall_time.as_secs_f64(),
        }),
    );
    manifest.write(&args.out_dir.join("manifest.json"))?;
    eprintln!(
        "best score {:.4} at {} {}",
        result.best.score.total, cfg.budget.metric, result.best.cost_value
    );
    Ok(())
}

pub fn cost(args: CostArgs) -> CliResult<()> {
    let mut rec = Recorder::start("cost");
    let arch = load_arch(&args.arch, &mut rec)?;
    let profile = load_profile(args.device.as_deref(), &mut rec)?;
    if let Some(limit) = args.limit {
        if !limit.is_finite() || limit < 0.0 {
            return Err(CliError::usage(format!(
                "--limit must be a finite non-negative number, got {limit}"
            )));
        }
    }
    let seq_len = args.seq_len.unwrap_or(args.metric.default_seq_len());
    let budget = BudgetSpec::new(args.metric, args.limit.unwrap_or(f64::MAX)).with_seq_len(seq_len);
    let verdict = compute_cost(&arch, &budget, profile.as_ref())?;

    let report = CostReport {
        params: Some(count_params(&arch)?),
        flops: Some(count_flops(&arch, seq_len)?),
        latency_ms: profile.as_ref().map(|p| estimate_latency(&arch, p)).transpose()?,
        notes: vec![FLOPS_EXCLUSIONS.to_string()],
    };
    let mut doc = json!({
        "schema": Schema,
        "metric": args.metric,
        "seq_len": seq_len,
        "value": verdict.value,
    });
    let obj = doc.as_object_mut().expect("object literal");
    if let Value::Object(fields) = serde_json::to_value(&report).map_err(CliError::internal)? {
        obj.extend(fields);
    }
    if let Some(limit) = args.limit {
        obj.insert("limit".into(), json!(limit));
        obj.insert("feasible".into(), json!(verdict.feasible));
    }
    if !verdict.warnings.is_empty() {
        obj.insert("warnings".into(), json!(verdict.warnings));
    }
    match args.format {
        Format::Json => print!("{}", pretty(&doc)?),
        Format::Table => {
            print!("{}", report.to_table());
            println!("{} {}", args.metric, verdict.value);
            if let Some(limit) = args.limit {
                println!("limit {limit} feasible {}", verdict.feasible);
            }
            for w in &verdict.warnings {
                println!("warning: {w}");
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    schema: Schema,
    kind: &'static str,
    arch: ArchConfig,
    score: ScoreBreakdown,
    cost_value: f64,
    budget: BudgetSpec,
}

pub fn baseline(args: BaselineArgs) -> CliResult<()> {
    set_threads(args.search.threads)?;
    let mut rec = Recorder::start("baseline");
    let cfg = resolve_search(&args.budget, &args.search, &mut rec)?;
    let profile = load_profile(args.budget.device.as_deref(), &mut rec)?;
    if cfg.budget.metric == Metric::Latency && profile.is_none() {
        return Err(CliError::usage("--metric latency needs --device"));
    }
    let space = load_space(args.table.space.as_deref(), &mut rec)?;
    let resolved = resolve_table(&args.table, &space, true, &mut rec)?;
    let eval = Evaluator::new(
        &space,
        &resolved.entropy,
        &resolved.table,
        &cfg.budget,
        profile.as_ref(),
    )?;

    let (kind, arch) = match args.kind {
        BaselineKind::Random => ("random", random_search_baseline(&eval, &cfg)?.best.arch),
        BaselineKind::DecoderParam => {
            let eval = eval.with_objective(Objective::DecoderParams);
            ("decoder-param", ea_search(&eval, &cfg)?.best.arch)
        }
        BaselineKind::ScaleDepth => (
            "scale-depth",
            naive_scaling_baseline(ScalingKind::Depth, &cfg.budget, &space, profile.as_ref())?,
        ),
        BaselineKind::ScaleWidth => (
            "scale-width",
            naive_scaling_baseline(ScalingKind::Width, &cfg.budget, &space, profile.as_ref())?,
        ),
    };
    let eval = Evaluator::new(
        &space,
        &resolved.entropy,
        &resolved.table,
        &cfg.budget,
        profile.as_ref(),
    )?;
    let candidate = eval
        .evaluate(arch, 0, None)?
        .ok_or_else(|| CliError::internal("baseline returned an over-budget architecture"))?;
    let report = BaselineReport {
        schema: Schema,
        kind,
        arch: candidate.arch,
        score: candidate.score,
        cost_value: candidate.cost_value,
        budget: cfg.budget.clone(),
    };
    let text = pretty(&report)?;
    match &args.out {
        Some(path) => {
            write(path, &text)?;
            rec.output("baseline", path, text.as_bytes());
        }
        None => print!("{text}"),
    }
    if let Some(path) = &args.manifest {
        rec.finish(
            Some(cfg.seed),
            json!({
                "kind": kind,
                "search": cfg,
                "space": space,
                "entropy": resolved.entropy,
                "table": resolved.path,
                "threads": args.search.threads,
            }),
        )
        .write(path)?;
    }
    Ok(())
}
