//! Test-side oracles written independently of the library's fast paths.
#![allow(dead_code)]

use crossconf::experiments::{simulate_instance, trial_stream, SimulatedInstance};
use crossconf::{CrossConformal, FoldAssignment, RandomSource};
use nalgebra::{DMatrix, DVector};

pub const OLS: crossconf::RegressorSpec = crossconf::RegressorSpec::MinNormOls;

/// A simulated instance plus its trial stream.
pub fn instance(seed: u64, n: usize, p: usize, rep: usize) -> (SimulatedInstance, RandomSource) {
    let stream = trial_stream(seed, p, rep);
    let inst = simulate_instance(n, p, &stream.substream("data", 0));
    (inst, stream)
}

/// Fold p-values by direct counting over each fold's members.
pub fn oracle_pvalues(cc: &CrossConformal, x: &[f64], y: f64, tau: Option<f64>) -> Vec<f64> {
    let folds = cc.folds();
    (0..folds.k())
        .map(|k| {
            let center = cc.cv().model(k).predict(x);
            let s = (y - center).abs();
            let members = folds.members(k);
            let mut ge = 0usize;
            let mut eq = 0usize;
            for &i in members {
                let si = cc.cv().score_of(i).unwrap();
                if si >= s {
                    ge += 1;
                }
                if si == s {
                    eq += 1;
                }
            }
            let m1 = (members.len() + 1) as f64;
            match tau {
                None => (1 + ge) as f64 / m1,
                Some(t) => (t + t * eq as f64 + (ge - eq) as f64) / m1,
            }
        })
        .collect()
}

pub fn oracle_mean(p: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in p {
        s += v;
    }
    s / p.len() as f64
}

pub fn oracle_prefix_min(p: &[f64]) -> f64 {
    (1..=p.len()).map(|l| oracle_mean(&p[..l])).fold(f64::INFINITY, f64::min)
}

pub fn oracle_stat(kind: &str, p: &[f64], u: f64) -> f64 {
    match kind {
        "mod" => oracle_mean(p),
        "e-mod" => oracle_prefix_min(p),
        "u-mod" => oracle_mean(p) / (2.0 - u),
        "eu-mod" => (p[0] / (2.0 - u)).min(oracle_prefix_min(p)),
        other => panic!("unknown statistic {other}"),
    }
}

/// Literal pooled cross-conformal membership.
pub fn oracle_cross(cc: &CrossConformal, x: &[f64], y: f64, alpha: f64) -> bool {
    let folds = cc.folds();
    let centers: Vec<f64> = (0..folds.k()).map(|k| cc.cv().model(k).predict(x)).collect();
    let mut count = 0usize;
    let mut n = 0usize;
    for (k, center) in centers.iter().enumerate() {
        for &i in folds.members(k) {
            n += 1;
            if (y - center).abs() <= cc.cv().score_of(i).unwrap() {
                count += 1;
            }
        }
    }
    (1 + count) as f64 / (n + 1) as f64 > alpha
}

pub fn oracle_alpha_prime(alpha: f64, k: usize, n: usize) -> f64 {
    alpha + (1.0 - alpha) * (k as f64 - 1.0) / (k as f64 + n as f64)
}

/// Least squares through the normal equations with LU; only for
/// well-conditioned full-rank designs.
pub fn lu_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xt = x.transpose();
    (&xt * x).lu().solve(&(&xt * y)).expect("full rank design")
}

/// Breakpoints plus one probe in every gap and beyond both ends.
pub fn probe_points(breaks: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = breaks.iter().copied().filter(|v| v.is_finite()).collect();
    b.sort_by(f64::total_cmp);
    b.dedup();
    let mut out = Vec::with_capacity(2 * b.len() + 2);
    if let (Some(first), Some(last)) = (b.first(), b.last()) {
        out.push(first - 1.0);
        out.push(last + 1.0);
    }
    for w in b.windows(2) {
        out.push(0.5 * (w[0] + w[1]));
    }
    out.extend(b);
    out
}

/// Fold layout with fold 0 holding the extra points: no random placement.
pub fn fixed_layout(n: usize, k: usize, order: &[usize]) -> FoldAssignment {
    let base = n / k;
    let extra = n % k;
    let mut members = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        members.push(order[at..at + size].to_vec());
        at += size;
    }
    FoldAssignment::from_members(n, members, vec![], crossconf::FoldMode::Varying).unwrap()
}
