use std::fmt;
use std::fs::File;
use std::path::Path;

use crossconf::combiners::{alpha_prime, coverage_bounds, coverage_floor};
use crossconf::data::{assign_folds, NumericTable};
use crossconf::experiments::{run_real_data, run_simulation, AggregateReport, ProtocolConfig, SimulationConfig};
use crossconf::pvalues::is_informative;
use crossconf::sets::{method_set, parse_methods, MethodOptions};
use crossconf::{
    CrossConformal, Dataset, Error, FoldMode, Method, PValueKind, RandomSource, RegressorSpec, ScoreFunctionSpec,
    SplitConformal,
};
use serde_json::json;

use crate::args::{parse_counts, BoundsArgs, PValuesArg, PredictArgs, ProtocolArgs, RunArgs, SimulateArgs};
use crate::output::{json_sibling, write_atomic};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy)]
enum SeedSource {
    Given,
    Entropy,
    Default,
}

impl SeedSource {
    fn label(self) -> &'static str {
        match self {
            SeedSource::Given => "given",
            SeedSource::Entropy => "entropy",
            SeedSource::Default => "default",
        }
    }
}

struct Resolved {
    protocol: ProtocolConfig,
    seed_source: SeedSource,
}

fn resolve_protocol(a: &ProtocolArgs) -> CliResult<Resolved> {
    let methods = parse_methods(&a.methods)?;
    let regressor: RegressorSpec = a.regressor.parse()?;
    let fold_mode: FoldMode = a.fold_mode.parse()?;
    let pvalues = match a.pvalues {
        PValuesArg::Deterministic => PValueKind::Deterministic,
        PValuesArg::Randomized => PValueKind::Randomized,
    };
    let randomized = pvalues == PValueKind::Randomized || methods.iter().any(|m| m.is_randomized());
    let (seed, seed_source) = match (a.seed, a.entropy) {
        (Some(s), _) => (s, SeedSource::Given),
        (None, true) => (rand::random::<u64>(), SeedSource::Entropy),
        (None, false) if randomized => {
            return Err(CliError::Usage(
                "randomized methods need --seed (or CROSSCONF_SEED); pass --entropy to draw one".into(),
            ))
        }
        (None, false) => (0, SeedSource::Default),
    };
    if pvalues == PValueKind::Randomized && methods.iter().any(|m| m.combiner_kind().is_none()) {
        return Err(CliError::Usage(
            "--pvalues randomized applies only to the p-value merging methods".into(),
        ));
    }
    let mut protocol = ProtocolConfig::new(a.alpha, a.k, regressor, methods, seed);
    protocol.fold_mode = fold_mode;
    protocol.pvalues = pvalues;
    protocol.hull = a.hull;
    protocol.validate()?;
    Ok(Resolved { protocol, seed_source })
}

fn header(command: &str, config: &serde_json::Value, seed_source: SeedSource) -> Vec<String> {
    vec![
        format!("crossconf {command} {}", env!("CARGO_PKG_VERSION")),
        format!("config {config}"),
        format!("seed_source {}", seed_source.label()),
    ]
}

fn emit_report(report: &AggregateReport, comments: &[String], config: &serde_json::Value, out: Option<&Path>) -> CliResult<()> {
    let csv = report.to_csv(comments);
    match out {
        Some(path) => {
            let json_path = json_sibling(path);
            if json_path == path {
                return Err(CliError::Usage("--out must not end in .json; the JSON mirror takes that name".into()));
            }
            let mirror = json!({ "config": config, "rows": report.rows, "failures": report.failures });
            let body = serde_json::to_string_pretty(&mirror).map_err(|e| CliError::Data(e.to_string()))?;
            write_atomic(path, csv.as_bytes())?;
            write_atomic(&json_path, format!("{body}\n").as_bytes())?;
        }
        None => print!("{csv}"),
    }
    let failed: usize = report.failures.iter().map(|f| f.failed).sum();
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed} trial(s) failed numerically; counts are in the report header"
        )));
    }
    Ok(())
}

fn load_dataset(path: &Path, target: &str, intercept: bool) -> CliResult<(Dataset, Vec<String>)> {
    let (data, mut names) = Dataset::from_csv_path(path, target)?;
    if intercept {
        names.push("(intercept)".into());
        return Ok((data.with_intercept(), names));
    }
    Ok((data, names))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let p_list = parse_counts(&a.p).map_err(CliError::Usage)?;
    let Resolved { protocol, seed_source } = resolve_protocol(&a.protocol)?;
    let cfg = SimulationConfig {
        n: a.n,
        p_list,
        reps: a.reps,
        protocol,
    };
    cfg.validate()?;
    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
    log::info!("simulate {config}");
    let report = run_simulation(&cfg)?;
    emit_report(&report, &header("simulate", &config, seed_source), &config, a.out.as_deref())
}

pub fn run(a: &RunArgs) -> CliResult<()> {
    let Resolved { protocol, seed_source } = resolve_protocol(&a.protocol)?;
    let (data, _) = load_dataset(&a.data, &a.target, a.intercept)?;
    let config = json!({
        "data": a.data.display().to_string(),
        "target": a.target,
        "intercept": a.intercept,
        "train_size": a.train_size,
        "test_size": a.test_size,
        "trials": a.trials,
        "protocol": protocol,
    });
    let report = run_real_data(&data, a.train_size, a.test_size, a.trials, &protocol)?;
    emit_report(&report, &header("run", &config, seed_source), &config, a.out.as_deref())
}

/// Query rows with the training feature layout.
fn load_queries(path: &Path, names: &[String], intercept: bool) -> CliResult<Vec<Vec<f64>>> {
    let table = NumericTable::from_reader(File::open(path)?)?;
    let p = names.len() - usize::from(intercept);
    let feature_names = &names[..p];
    let picks: Vec<usize> = if feature_names.iter().all(|n| table.columns.contains(n)) {
        feature_names
            .iter()
            .map(|n| table.columns.iter().position(|c| c == n).expect("checked"))
            .collect()
    } else if table.columns.len() == p {
        (0..p).collect()
    } else {
        return Err(CliError::Data(format!(
            "query has {} column(s) but the training data has {p} feature(s)",
            table.columns.len()
        )));
    };
    if table.rows.is_empty() {
        return Err(CliError::Data("query file has no rows".into()));
    }
    Ok(table
        .rows
        .iter()
        .map(|r| {
            let mut x: Vec<f64> = picks.iter().map(|&j| r[j]).collect();
            if intercept {
                x.push(1.0);
            }
            x
        })
        .collect())
}

/// Warns when a method's level cannot exclude anything at this sample size.
fn informativeness_warning(method: Method, alpha: f64, fold_sizes: &[usize], n_used: usize, n_cal: usize) -> Option<String> {
    let (level, m) = match method {
        Method::Split => (alpha, n_cal),
        Method::Split2Alpha => (2.0 * alpha, n_cal),
        Method::Cross | Method::CvPlus => (alpha, n_used),
        m => {
            let level = if m.uses_alpha_prime() {
                alpha_prime(alpha, fold_sizes.len(), n_used)
            } else {
                alpha
            };
            (level, fold_sizes.iter().copied().min().unwrap_or(0))
        }
    };
    (!is_informative(level, m)).then(|| {
        format!(
            "warning: {method}: 1 >= alpha*(m+1) with alpha={level} and m={m}; the set may be the whole real line"
        )
    })
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let Resolved { protocol, seed_source } = resolve_protocol(&a.protocol)?;
    let (data, names) = load_dataset(&a.data, &a.target, a.intercept)?;
    let queries = load_queries(&a.query, &names, a.intercept)?;
    let spec = ScoreFunctionSpec::residual(protocol.regressor);
    let root = RandomSource::new(protocol.seed);

    let cross = if protocol.methods.iter().any(|m| m.needs_folds()) {
        let folds = assign_folds(data.n(), protocol.k, protocol.fold_mode, &root.substream("folds", 0))?;
        Some(CrossConformal::fit(&data, &folds, &spec)?)
    } else {
        None
    };
    let split = if protocol.methods.iter().any(|m| m.needs_split()) {
        Some(SplitConformal::fit(&data, &spec, &root.substream("split", 0))?)
    } else {
        None
    };
    let draws = crossconf::data::draw_randomization(&root.substream("draws", 0));

    let fold_sizes = cross.as_ref().map(|c| c.folds().fold_sizes()).unwrap_or_default();
    let n_used = cross.as_ref().map_or(0, |c| c.folds().n_used());
    let n_cal = split.as_ref().map_or(0, |s| s.calibration.len());
    for &m in &protocol.methods {
        if let Some(w) = informativeness_warning(m, protocol.alpha, &fold_sizes, n_used, n_cal) {
            eprintln!("{w}");
        }
    }

    let opts = MethodOptions {
        alpha: protocol.alpha,
        draws,
        pvalues: protocol.pvalues,
        hull: protocol.hull,
    };
    let mut predictions = Vec::with_capacity(queries.len());
    for (row, x) in queries.iter().enumerate() {
        let tp = cross.as_ref().map(|c| c.at(x));
        let mut sets = serde_json::Map::new();
        for &m in &protocol.methods {
            let set = method_set(m, x, tp.as_ref(), split.as_ref(), &opts)?;
            sets.insert(m.name().to_string(), set.to_json());
        }
        predictions.push(json!({ "row": row, "sets": sets }));
    }
    let out = json!({
        "config": {
            "data": a.data.display().to_string(),
            "target": a.target,
            "query": a.query.display().to_string(),
            "intercept": a.intercept,
            "seed_source": seed_source.label(),
            "draws": { "tau": draws.tau, "u": draws.u },
            "protocol": protocol,
        },
        "predictions": predictions,
    });
    let body = format!("{}\n", serde_json::to_string_pretty(&out).map_err(|e| CliError::Data(e.to_string()))?);
    match &a.out {
        Some(path) => write_atomic(path, body.as_bytes())?,
        None => print!("{body}"),
    }
    Ok(())
}

enum KSpec {
    Fixed(usize),
    Sqrt,
    All,
}

fn parse_k_list(s: &str) -> CliResult<Vec<KSpec>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match t.trim() {
            "sqrt" => Ok(KSpec::Sqrt),
            "n" => Ok(KSpec::All),
            v => v
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(KSpec::Fixed)
                .ok_or_else(|| CliError::Usage(format!("bad fold count `{v}`"))),
        })
        .collect()
}

pub fn bounds(a: &BoundsArgs) -> CliResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha must lie in (0,1), got {}", a.alpha)));
    }
    let ks = parse_k_list(&a.k)?;
    let ns = parse_counts(&a.n).map_err(CliError::Usage)?;
    if ns.contains(&0) {
        return Err(CliError::Usage("n must be >= 1".into()));
    }
    let mut csv = format!("# crossconf bounds {}\n# alpha {}\n", env!("CARGO_PKG_VERSION"), a.alpha);
    csv.push_str("K,n,bound_small_K,bound_large_K,combined,floor\n");
    for spec in &ks {
        for &n in &ns {
            let k = match spec {
                KSpec::Fixed(k) => *k,
                KSpec::Sqrt => ((n as f64).sqrt().round() as usize).max(1),
                KSpec::All => n,
            };
            if k > n {
                continue;
            }
            let b = coverage_bounds(a.alpha, k, n);
            csv.push_str(&format!(
                "{k},{n},{},{},{},{}\n",
                b.small_k,
                b.large_k,
                b.combined,
                coverage_floor(a.alpha, n)
            ));
        }
    }
    match &a.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}
