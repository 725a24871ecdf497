//! Merging statistics for fold p-values and the thresholds they are
//! compared against.
//!
//! | kind   | statistic                                         |
//! |--------|---------------------------------------------------|
//! | mod    | `mean(P)`                                         |
//! | e-mod  | `min_ℓ mean(P_1..P_ℓ)`                            |
//! | u-mod  | `mean(P) / (2 - U)`                               |
//! | eu-mod | `min(P_1 / (2 - U), min_ℓ mean(P_1..P_ℓ))`        |
//!
//! A candidate is kept when its statistic is strictly above the threshold.
//! Prefix statistics read the p-values in fold-index order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RandomDraws;
use crate::error::{invalid_config, Error, Result};
use crate::pvalues::PValueVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinerKind {
    Mod,
    EMod,
    UMod,
    EuMod,
}

impl CombinerKind {
    pub fn needs_u(self) -> bool {
        matches!(self, CombinerKind::UMod | CombinerKind::EuMod)
    }

    /// Whether the statistic depends on fold order.
    pub fn is_exchangeable_rule(self) -> bool {
        matches!(self, CombinerKind::EMod | CombinerKind::EuMod)
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombinerKind::Mod => "mod",
            CombinerKind::EMod => "e-mod",
            CombinerKind::UMod => "u-mod",
            CombinerKind::EuMod => "eu-mod",
        })
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mod" => Ok(CombinerKind::Mod),
            "e-mod" => Ok(CombinerKind::EMod),
            "u-mod" => Ok(CombinerKind::UMod),
            "eu-mod" => Ok(CombinerKind::EuMod),
            other => Err(invalid_config(format!("unknown combiner `{other}`"))),
        }
    }
}

/// Which p-values feed the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueKind {
    #[default]
    Deterministic,
    /// Smoothed with the shared τ of the attached draws.
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinerSpec {
    pub kind: CombinerKind,
    /// α, or α′ for the `-cross` forms.
    pub threshold: f64,
    pub draws: Option<RandomDraws>,
    pub pvalues: PValueKind,
    /// Use the fold-size weighted mean `Σ w_k P_k` instead of the plain mean.
    /// Only meaningful for `mod` and `u-mod`.
    pub weighted: bool,
}

impl CombinerSpec {
    pub fn new(kind: CombinerKind, threshold: f64, draws: Option<RandomDraws>) -> Self {
        Self {
            kind,
            threshold,
            draws,
            pvalues: PValueKind::Deterministic,
            weighted: false,
        }
    }

    pub fn with_pvalues(mut self, pvalues: PValueKind) -> Self {
        self.pvalues = pvalues;
        self
    }

    pub fn weighted(mut self, weighted: bool) -> Self {
        self.weighted = weighted;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid_config(format!("threshold must lie in (0,1), got {}", self.threshold)));
        }
        if self.kind.needs_u() && self.draws.is_none() {
            return Err(invalid_config(format!("{} needs a U draw", self.kind)));
        }
        if self.pvalues == PValueKind::Randomized && self.draws.is_none() {
            return Err(invalid_config("randomized p-values need a τ draw"));
        }
        if self.weighted && self.kind.is_exchangeable_rule() {
            return Err(invalid_config(format!(
                "{} is not defined on weighted averages",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn statistic(&self, p: &PValueVector) -> Result<f64> {
        let draws = self.draws.as_ref();
        match (self.kind, self.weighted) {
            (CombinerKind::Mod, false) => Ok(stat_mod(p)),
            (CombinerKind::Mod, true) => Ok(p.weighted_mean()),
            (CombinerKind::UMod, false) => stat_umod(p, draws),
            (CombinerKind::UMod, true) => Ok(p.weighted_mean() / (2.0 - require_u(draws)?)),
            (CombinerKind::EMod, _) => Ok(stat_emod(p)),
            (CombinerKind::EuMod, _) => stat_eumod(p, draws),
        }
    }

    pub fn verdict(&self, p: &PValueVector) -> Result<MembershipVerdict> {
        let statistic = self.statistic(p)?;
        Ok(MembershipVerdict {
            statistic,
            included: statistic > self.threshold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipVerdict {
    pub statistic: f64,
    pub included: bool,
}

fn require_u(draws: Option<&RandomDraws>) -> Result<f64> {
    draws
        .map(|d| d.u)
        .ok_or_else(|| invalid_config("randomized combiner needs a U draw"))
}

/// Plain mean of the fold p-values.
pub fn stat_mod(p: &PValueVector) -> f64 {
    let sum: f64 = p.values.iter().sum();
    sum / p.len() as f64
}

/// Smallest running mean over the prefixes `P_1..P_ℓ`.
pub fn stat_emod(p: &PValueVector) -> f64 {
    // The ℓ = K term is computed exactly as stat_mod, so stat_emod <= stat_mod
    // holds bit-for-bit.
    let mut sum = 0.0;
    let mut best = f64::INFINITY;
    for (l, v) in p.values.iter().enumerate() {
        sum += v;
        best = best.min(sum / (l + 1) as f64);
    }
    best
}

pub fn stat_umod(p: &PValueVector, draws: Option<&RandomDraws>) -> Result<f64> {
    Ok(stat_mod(p) / (2.0 - require_u(draws)?))
}

pub fn stat_eumod(p: &PValueVector, draws: Option<&RandomDraws>) -> Result<f64> {
    let u = require_u(draws)?;
    Ok((p.values[0] / (2.0 - u)).min(stat_emod(p)))
}

/// `α′ = α + (1 − α)(K − 1)/(K + n)`: running a mean-type variant at `α′`
/// reproduces the plain cross-conformal threshold.
pub fn alpha_prime(alpha: f64, k: usize, n: usize) -> f64 {
    alpha + (1.0 - alpha) * (k as f64 - 1.0) / (k + n) as f64
}

/// Lower bounds on the marginal coverage of the cross-conformal set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageBounds {
    /// `1 − 2α − 2(1−α)(1−1/K)/(n/K+1)`, tight for small K.
    pub small_k: f64,
    /// `1 − 2α − 2(1−α)(1−K/n)/(K+1)`, tight for large K.
    pub large_k: f64,
    pub combined: f64,
}

pub fn coverage_bounds(alpha: f64, k: usize, n: usize) -> CoverageBounds {
    let (kf, nf) = (k as f64, n as f64);
    let small_k = 1.0 - 2.0 * alpha - 2.0 * (1.0 - alpha) * (1.0 - 1.0 / kf) / (nf / kf + 1.0);
    let large_k = 1.0 - 2.0 * alpha - 2.0 * (1.0 - alpha) * (1.0 - kf / nf) / (kf + 1.0);
    CoverageBounds {
        small_k,
        large_k,
        combined: small_k.max(large_k),
    }
}

/// The `1 − 2α − 2/√n` floor that the combined bound always clears.
pub fn coverage_floor(alpha: f64, n: usize) -> f64 {
    1.0 - 2.0 * alpha - 2.0 / (n as f64).sqrt()
}
