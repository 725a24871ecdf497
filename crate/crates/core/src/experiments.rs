//! Monte-Carlo simulation and repeated train/test evaluation.
//!
//! Simulated data: `X_i ~ N_p(0, I)`, `Y_i | X_i ~ N(X_iᵀβ, 1)` with
//! `β = √10 · u` for a uniform unit vector `u`, redrawn every replication.
//!
//! Every trial derives its own named substreams from the master seed
//! (data, folds, split, draws), and all methods of a trial share them, so
//! set containments can be checked trial by trial and results do not depend
//! on the thread count.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiners::{alpha_prime, PValueKind};
use crate::data::{assign_folds, draw_randomization, Dataset, FoldMode, RandomDraws, RandomSource};
use crate::error::{invalid_config, Result};
use crate::regression::RegressorSpec;
use crate::scores::ScoreFunctionSpec;
use crate::sets::{method_set, CrossConformal, Method, MethodOptions, PredictionSet, SplitConformal};
use crate::stats::summarize;

/// Settings shared by the simulation and the real-data runner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub alpha: f64,
    pub k: usize,
    pub regressor: RegressorSpec,
    #[serde(with = "method_names")]
    pub methods: Vec<Method>,
    pub seed: u64,
    pub fold_mode: FoldMode,
    pub pvalues: PValueKind,
    pub hull: bool,
}

impl ProtocolConfig {
    pub fn new(alpha: f64, k: usize, regressor: RegressorSpec, methods: Vec<Method>, seed: u64) -> Self {
        Self {
            alpha,
            k,
            regressor,
            methods,
            seed,
            fold_mode: FoldMode::Equal,
            pvalues: PValueKind::Deterministic,
            hull: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid_config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(invalid_config("no methods requested"));
        }
        if self.k == 0 && self.methods.iter().any(|m| m.needs_folds()) {
            return Err(invalid_config("K must be >= 1"));
        }
        if self.fold_mode == FoldMode::Varying {
            for m in &self.methods {
                m.check_fold_sizes(false)?;
            }
        }
        Ok(())
    }
}

mod method_names {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::sets::Method;

    pub fn serialize<S: Serializer>(methods: &[Method], s: S) -> Result<S::Ok, S::Error> {
        methods.iter().map(|m| m.name()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Method>, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| n.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub p_list: Vec<usize>,
    pub reps: usize,
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        if self.reps == 0 {
            return Err(invalid_config("reps must be >= 1"));
        }
        if self.p_list.is_empty() || self.p_list.contains(&0) {
            return Err(invalid_config("p list must be nonempty with p >= 1"));
        }
        if self.protocol.methods.iter().any(|m| m.needs_folds()) && self.protocol.k > self.n {
            return Err(invalid_config("K exceeds n"));
        }
        if self.n < 2 {
            return Err(invalid_config("n must be >= 2"));
        }
        Ok(())
    }
}

/// One simulated training set plus a single test pair.
#[derive(Debug, Clone)]
pub struct SimulatedInstance {
    pub data: Dataset,
    pub beta: Vec<f64>,
    pub test_x: Vec<f64>,
    pub test_y: f64,
}

pub fn simulate_instance(n: usize, p: usize, rng: &RandomSource) -> SimulatedInstance {
    let mut rng = rng.rng();
    let mut beta: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = 10f64.sqrt() / norm;
    beta.iter_mut().for_each(|b| *b *= scale);

    let draw_pair = |rng: &mut rand_chacha::ChaCha20Rng| {
        let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample(StandardNormal);
        let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + noise;
        (x, y)
    };
    let (rows, ys): (Vec<Vec<f64>>, Vec<f64>) = (0..n).map(|_| draw_pair(&mut rng)).unzip();
    let (test_x, test_y) = draw_pair(&mut rng);
    SimulatedInstance {
        data: Dataset::from_rows(&rows, ys).expect("simulated data is finite"),
        beta,
        test_x,
        test_y,
    }
}

/// Outcome of one method on one test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    #[serde(serialize_with = "ser_method", deserialize_with = "de_method")]
    pub method: Method,
    pub p: usize,
    pub covered: bool,
    /// `+∞` for unbounded sets.
    pub width: f64,
    pub n_components: usize,
    pub alpha_used: f64,
}

fn ser_method<S: serde::Serializer>(m: &Method, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(m.name())
}

fn de_method<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Method, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

/// Every set a trial produced, kept for paired checks.
#[derive(Debug, Clone)]
pub struct TrialSets {
    pub draws: RandomDraws,
    pub sets: Vec<(Method, PredictionSet)>,
    pub test_y: f64,
}

impl TrialSets {
    pub fn get(&self, method: Method) -> Option<&PredictionSet> {
        self.sets.iter().find(|(m, _)| *m == method).map(|(_, s)| s)
    }
}

fn alpha_used(method: Method, alpha: f64, k: usize, n: usize) -> f64 {
    match method {
        Method::Split2Alpha => 2.0 * alpha,
        m if m.uses_alpha_prime() => alpha_prime(alpha, k, n),
        _ => alpha,
    }
}

/// Fits the shared state for one trial and produces every method's set at
/// each test point.
pub fn run_trial(
    train: &Dataset,
    tests: &[(Vec<f64>, f64)],
    protocol: &ProtocolConfig,
    trial: &RandomSource,
) -> Result<Vec<TrialSets>> {
    let spec = ScoreFunctionSpec::residual(protocol.regressor);
    let cross = if protocol.methods.iter().any(|m| m.needs_folds()) {
        let folds = assign_folds(train.n(), protocol.k, protocol.fold_mode, &trial.substream("folds", 0))?;
        Some(CrossConformal::fit(train, &folds, &spec)?)
    } else {
        None
    };
    let split = if protocol.methods.iter().any(|m| m.needs_split()) {
        Some(SplitConformal::fit(train, &spec, &trial.substream("split", 0))?)
    } else {
        None
    };
    let draws = draw_randomization(&trial.substream("draws", 0));
    let opts = MethodOptions {
        alpha: protocol.alpha,
        draws,
        pvalues: protocol.pvalues,
        hull: protocol.hull,
    };
    tests
        .iter()
        .map(|(x, y)| {
            let tp = cross.as_ref().map(|c| c.at(x));
            let sets = protocol
                .methods
                .iter()
                .map(|&m| Ok((m, method_set(m, x, tp.as_ref(), split.as_ref(), &opts)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrialSets {
                draws,
                sets,
                test_y: *y,
            })
        })
        .collect()
}

fn summarize_sets(sets: &TrialSets, p: usize, protocol: &ProtocolConfig, k: usize, n_used: usize) -> Vec<TrialResult> {
    sets.sets
        .iter()
        .map(|(m, s)| TrialResult {
            method: *m,
            p,
            covered: s.contains(sets.test_y),
            width: s.width(),
            n_components: s.n_components(),
            alpha_used: alpha_used(*m, protocol.alpha, k, n_used),
        })
        .collect()
}

/// Stream for trial `rep` at covariate count `p`.
pub fn trial_stream(seed: u64, p: usize, rep: usize) -> RandomSource {
    RandomSource::new(seed).substream("trial", ((p as u64) << 32) | rep as u64)
}

/// Results of all replications at one `p`; failed trials are `Err`.
pub fn simulate_trials(cfg: &SimulationConfig, p: usize) -> Vec<Result<(SimulatedInstance, TrialSets)>> {
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let stream = trial_stream(cfg.protocol.seed, p, rep);
            let inst = simulate_instance(cfg.n, p, &stream.substream("data", 0));
            let mut sets = run_trial(&inst.data, &[(inst.test_x.clone(), inst.test_y)], &cfg.protocol, &stream)?;
            Ok((inst, sets.remove(0)))
        })
        .collect()
}

/// Per (method, p) aggregate, matching the report CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub p: usize,
    pub reps: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub sd_width: f64,
    pub median_width: f64,
    pub min_width: f64,
    pub max_width: f64,
    pub n_infinite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCount {
    pub p: usize,
    pub failed: usize,
    pub first_error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    pub failures: Vec<FailureCount>,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "method",
    "p",
    "reps",
    "coverage",
    "mean_width",
    "sd_width",
    "median_width",
    "min_width",
    "max_width",
    "n_infinite",
];

impl AggregateReport {
    pub fn row(&self, method: Method, p: usize) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.method == method.name() && r.p == p)
    }

    /// CSV body with the standard header; `comments` become leading `# `
    /// lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        for f in &self.failures {
            let _ = writeln!(out, "# failed trials p={} count={} first_error={}", f.p, f.failed, f.first_error);
        }
        out.push_str(&REPORT_COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.p,
                r.reps,
                fmt_num(r.coverage),
                fmt_num(r.mean_width),
                fmt_num(r.sd_width),
                fmt_num(r.median_width),
                fmt_num(r.min_width),
                fmt_num(r.max_width),
                r.n_infinite
            );
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Aggregates per-trial `(coverage, width)` pairs; infinite widths are
/// counted, not averaged.
pub fn aggregate_row(method: Method, p: usize, trials: &[(f64, f64)], n_infinite_extra: usize) -> AggregateRow {
    let finite: Vec<f64> = trials.iter().map(|t| t.1).filter(|w| w.is_finite()).collect();
    let n_infinite = trials.len() - finite.len() + n_infinite_extra;
    let s = summarize(&finite);
    let coverage = if trials.is_empty() {
        f64::NAN
    } else {
        trials.iter().map(|t| t.0).sum::<f64>() / trials.len() as f64
    };
    AggregateRow {
        method: method.name().to_string(),
        p,
        reps: trials.len(),
        coverage,
        mean_width: s.mean,
        sd_width: s.sd,
        median_width: s.median,
        min_width: s.min,
        max_width: s.max,
        n_infinite,
    }
}

pub fn run_simulation(cfg: &SimulationConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let mut report = AggregateReport::default();
    for &p in &cfg.p_list {
        let outcomes = simulate_trials(cfg, p);
        let mut per_method: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cfg.protocol.methods.len()];
        let mut failed = 0;
        let mut first_error = None;
        for outcome in outcomes {
            match outcome {
                Ok((inst, sets)) => {
                    let n_used = used_points(inst.data.n(), &cfg.protocol);
                    for (j, r) in summarize_sets(&sets, p, &cfg.protocol, cfg.protocol.k, n_used)
                        .into_iter()
                        .enumerate()
                    {
                        per_method[j].push((f64::from(u8::from(r.covered)), r.width));
                    }
                }
                Err(e) => {
                    failed += 1;
                    first_error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if failed > 0 {
            log::warn!("p={p}: {failed} trial(s) failed numerically and were skipped");
            report.failures.push(FailureCount {
                p,
                failed,
                first_error: first_error.unwrap_or_default(),
            });
        }
        for (j, &m) in cfg.protocol.methods.iter().enumerate() {
            report.rows.push(aggregate_row(m, p, &per_method[j], 0));
        }
    }
    Ok(report)
}

fn used_points(n: usize, protocol: &ProtocolConfig) -> usize {
    match protocol.fold_mode {
        FoldMode::Equal if protocol.k > 0 => n - n % protocol.k,
        _ => n,
    }
}

/// Repeated random train/test evaluation on a fixed dataset. Each trial
/// reports the mean finite width and the covered fraction over its test
/// points; rows aggregate those per-trial values.
pub fn run_real_data(
    data: &Dataset,
    train_size: usize,
    test_size: usize,
    trials: usize,
    protocol: &ProtocolConfig,
) -> Result<AggregateReport> {
    protocol.validate()?;
    if train_size + test_size > data.n() || train_size < 2 || test_size == 0 || trials == 0 {
        return Err(invalid_config(format!(
            "need 2 <= train, 1 <= test, train + test <= n (train={train_size}, test={test_size}, n={})",
            data.n()
        )));
    }
    if protocol.methods.iter().any(|m| m.needs_folds()) && protocol.k > train_size {
        return Err(invalid_config("K exceeds the training size"));
    }
    let root = RandomSource::new(protocol.seed);
    let outcomes: Vec<Result<Vec<TrialSets>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let stream = root.substream("real-trial", t as u64);
            let mut rng = stream.substream("sample", 0).rng();
            let picked = sample(&mut rng, data.n(), train_size + test_size).into_vec();
            let train = data.subset(&picked[..train_size]);
            let tests: Vec<(Vec<f64>, f64)> = picked[train_size..]
                .iter()
                .map(|&i| (data.row(i), data.response(i)))
                .collect();
            run_trial(&train, &tests, protocol, &stream)
        })
        .collect();

    let n_used = used_points(train_size, protocol);
    let mut per_method: Vec<Vec<(f64, f64)>> = vec![Vec::new(); protocol.methods.len()];
    let mut infinite = vec![0usize; protocol.methods.len()];
    let mut failed = 0;
    let mut first_error = None;
    for outcome in outcomes {
        let points = match outcome {
            Ok(points) => points,
            Err(e) => {
                failed += 1;
                first_error.get_or_insert_with(|| e.to_string());
                continue;
            }
        };
        for (j, _) in protocol.methods.iter().enumerate() {
            let results: Vec<TrialResult> = points
                .iter()
                .map(|ts| summarize_sets(ts, data.p(), protocol, protocol.k, n_used).swap_remove(j))
                .collect();
            let finite: Vec<f64> = results.iter().map(|r| r.width).filter(|w| w.is_finite()).collect();
            infinite[j] += results.len() - finite.len();
            let coverage = results.iter().filter(|r| r.covered).count() as f64 / results.len() as f64;
            let width = if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            };
            per_method[j].push((coverage, width));
        }
    }
    let mut report = AggregateReport::default();
    if failed > 0 {
        report.failures.push(FailureCount {
            p: data.p(),
            failed,
            first_error: first_error.unwrap_or_default(),
        });
    }
    for (j, &m) in protocol.methods.iter().enumerate() {
        let mut row = aggregate_row(m, data.p(), &per_method[j], 0);
        // per-trial widths are means over finite sets; disclose every
        // infinite set seen
        row.n_infinite = infinite[j];
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_norm_is_sqrt_ten() {
        let root = RandomSource::new(1);
        for p in [1, 2, 7, 80] {
            let inst = simulate_instance(20, p, &root.substream("x", p as u64));
            let norm = inst.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!((norm - 10f64.sqrt()).abs() < 1e-12);
            assert_eq!(inst.data.p(), p);
            assert_eq!(inst.test_x.len(), p);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let s = RandomSource::new(9).substream("data", 3);
        let a = simulate_instance(30, 4, &s);
        let b = simulate_instance(30, 4, &s);
        assert_eq!(a.data, b.data);
        assert_eq!(a.test_y.to_bits(), b.test_y.to_bits());
    }

    #[test]
    fn response_variance_p1() {
        // Var(Y) = β² + 1 = 11 when p = 1.
        let inst = simulate_instance(100_000, 1, &RandomSource::new(17));
        let ys: Vec<f64> = inst.data.responses().iter().copied().collect();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // se of a normal sample variance: σ²·√(2/(n−1))
        let se = 11.0 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - 11.0).abs() < 3.0 * se, "var={var} se={se}");
    }

    #[test]
    fn csv_layout() {
        let report = AggregateReport {
            rows: vec![aggregate_row(Method::Mod, 5, &[(1.0, 2.0), (0.0, f64::INFINITY)], 0)],
            failures: vec![],
        };
        let csv = report.to_csv(&["seed=1".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed=1");
        assert_eq!(lines[1], REPORT_COLUMNS.join(","));
        assert_eq!(lines[2], "mod,5,2,0.5,2,NaN,2,2,2,1");
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimulationConfig {
            n: 20,
            p_list: vec![2],
            reps: 1,
            protocol: ProtocolConfig::new(0.1, 5, RegressorSpec::MinNormOls, vec![Method::Mod], 0),
        };
        assert!(cfg.validate().is_ok());
        cfg.reps = 0;
        assert!(cfg.validate().is_err());
        cfg.reps = 1;
        cfg.protocol.alpha = 1.5;
        assert!(cfg.validate().is_err());
        cfg.protocol.alpha = 0.1;
        cfg.protocol.fold_mode = FoldMode::Varying;
        cfg.protocol.methods = vec![Method::ECross];
        assert!(cfg.validate().is_err());
        cfg.protocol.methods = vec![Method::UCross, Method::EMod];
        assert!(cfg.validate().is_ok());
    }
}
