//! Prediction sets on the response line.
//!
//! With residual scores every fold indicator `|y − μ̂_k(x)| ≤ S_i` flips only
//! at `μ̂_k(x) ± S_i`, so each membership statistic is a step function of `y`
//! with those breakpoints. [`endpoint_scan`] evaluates the predicate once at
//! every breakpoint and once inside every gap, which recovers the set exactly
//! (including whether each end is open or closed).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::combiners::{alpha_prime, CombinerKind, CombinerSpec, PValueKind};
use crate::data::{Dataset, FoldAssignment, RandomDraws, RandomSource};
use crate::error::{invalid_config, Error, Result};
use crate::pvalues::{fold_weights, FoldWeights, PValueVector};
use crate::regression::{FittedModel, RegressorSpec};
use crate::scores::{compute_cv_scores, CvScores, ScoreFunctionSpec};

/// An interval of the real line; ends may be open, closed or infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: lo.is_finite(),
            hi_closed: hi.is_finite(),
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        let above = self.lo < y || (self.lo_closed && self.lo == y);
        let below = y < self.hi || (self.hi_closed && self.hi == y);
        above && below
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn covers(&self, other: &Interval) -> bool {
        let lo_ok = self.lo < other.lo || (self.lo == other.lo && (self.lo_closed || !other.lo_closed));
        let hi_ok = other.hi < self.hi || (self.hi == other.hi && (self.hi_closed || !other.hi_closed));
        lo_ok && hi_ok
    }
}

/// A finite union of disjoint intervals, sorted left to right.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    intervals: Vec<Interval>,
    hulled: bool,
}

impl PredictionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn whole_line() -> Self {
        Self {
            intervals: vec![Interval::closed(f64::NEG_INFINITY, f64::INFINITY)],
            hulled: false,
        }
    }

    /// Validates ordering and disjointness.
    pub fn from_intervals(intervals: Vec<Interval>) -> Result<Self> {
        for iv in &intervals {
            if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
                return Err(invalid_config(format!("bad interval [{}, {}]", iv.lo, iv.hi)));
            }
            if iv.lo == iv.hi && !(iv.lo_closed && iv.hi_closed) {
                return Err(invalid_config("degenerate interval must be closed"));
            }
        }
        for w in intervals.windows(2) {
            let touching = w[0].hi == w[1].lo && w[0].hi_closed && w[1].lo_closed;
            if w[0].hi > w[1].lo || touching {
                return Err(invalid_config("intervals overlap or are out of order"));
            }
        }
        Ok(Self {
            intervals,
            hulled: false,
        })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_hulled(&self) -> bool {
        self.hulled
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn is_whole_line(&self) -> bool {
        matches!(self.intervals.as_slice(), [iv] if iv.lo == f64::NEG_INFINITY && iv.hi == f64::INFINITY)
    }

    pub fn n_components(&self) -> usize {
        self.intervals.len()
    }

    pub fn contains(&self, y: f64) -> bool {
        // intervals are sorted: find the last one starting at or before y
        let idx = self.intervals.partition_point(|iv| iv.lo <= y);
        idx > 0 && self.intervals[idx - 1].contains(y)
    }

    /// Lebesgue measure; `+∞` for unbounded sets.
    pub fn width(&self) -> f64 {
        self.intervals.iter().map(Interval::width).sum()
    }

    /// The single interval spanning the extreme endpoints.
    pub fn hull(&self) -> PredictionSet {
        match (self.intervals.first(), self.intervals.last()) {
            (Some(first), Some(last)) => PredictionSet {
                intervals: vec![Interval {
                    lo: first.lo,
                    lo_closed: first.lo_closed,
                    hi: last.hi,
                    hi_closed: last.hi_closed,
                }],
                hulled: true,
            },
            _ => PredictionSet {
                intervals: Vec::new(),
                hulled: true,
            },
        }
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.intervals
            .iter()
            .all(|a| other.intervals.iter().any(|b| b.covers(a)))
    }

    /// `[[lo, hi], ...]` with `"-inf"`/`"inf"` for infinite ends.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("prediction sets always serialize")
    }
}

impl Serialize for PredictionSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.intervals.len()))?;
        for iv in &self.intervals {
            seq.serialize_element(&[Endpoint(iv.lo), Endpoint(iv.hi)])?;
        }
        seq.end()
    }
}

struct Endpoint(f64);

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            serializer.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            serializer.serialize_str("-inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

/// `inf{a : (1/n) Σ 1{z_i ≤ a} ≥ γ}`, i.e. the `⌈γn⌉`-th order statistic;
/// `+∞` when `γ > 1`.
///
/// `γn` within `1e-9` (relative) of an integer is snapped to it so that
/// levels such as `(1−α)(1+1/n)` hit the intended rank despite rounding.
pub fn empirical_quantile(z: &[f64], gamma: f64) -> f64 {
    assert!(!z.is_empty(), "quantile of an empty vector");
    let n = z.len();
    let t = gamma * n as f64;
    let nearest = t.round();
    let rank = if (t - nearest).abs() <= 1e-9 * t.abs().max(1.0) {
        nearest
    } else {
        t.ceil()
    };
    if rank > n as f64 {
        return f64::INFINITY;
    }
    if rank < 1.0 {
        return if gamma <= 0.0 {
            f64::NEG_INFINITY
        } else {
            z.iter().copied().fold(f64::INFINITY, f64::min)
        };
    }
    let mut sorted = z.to_vec();
    let r = rank as usize - 1;
    let (_, v, _) = sorted.select_nth_unstable_by(r, f64::total_cmp);
    *v
}

#[derive(Clone, Copy)]
enum Probe {
    Point(f64),
    /// Open gap between two breakpoints (either may be infinite).
    Gap(f64, f64),
}

/// Recovers `{y : membership(y)}` exactly, assuming `membership` is constant
/// on every open gap between consecutive `candidates`.
pub fn endpoint_scan(candidates: &[f64], membership: impl Fn(f64) -> bool) -> PredictionSet {
    let mut pts: Vec<f64> = candidates.iter().copied().filter(|v| v.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    if pts.is_empty() {
        return if membership(0.0) {
            PredictionSet::whole_line()
        } else {
            PredictionSet::empty()
        };
    }

    let mut probes = Vec::with_capacity(2 * pts.len() + 1);
    probes.push(Probe::Gap(f64::NEG_INFINITY, pts[0]));
    for (i, &p) in pts.iter().enumerate() {
        probes.push(Probe::Point(p));
        let next = pts.get(i + 1).copied().unwrap_or(f64::INFINITY);
        probes.push(Probe::Gap(p, next));
    }

    let point_in: Vec<bool> = pts.iter().map(|&p| membership(p)).collect();
    let mut inside = Vec::with_capacity(probes.len());
    let mut pi = 0;
    for probe in &probes {
        match *probe {
            Probe::Point(_) => {
                inside.push(point_in[pi]);
                pi += 1;
            }
            Probe::Gap(a, b) => inside.push(match gap_sample(a, b) {
                Some(y) => membership(y),
                // no float strictly between a and b: the gap is empty
                None => point_in[pi - 1] && point_in[pi],
            }),
        }
    }

    let mut intervals = Vec::new();
    let mut start: Option<(f64, bool)> = None;
    for (idx, probe) in probes.iter().enumerate() {
        match (inside[idx], start) {
            (true, None) => {
                start = Some(match *probe {
                    Probe::Point(p) => (p, true),
                    Probe::Gap(a, _) => (a, false),
                });
            }
            (false, Some((lo, lo_closed))) => {
                let (hi, hi_closed) = match probes[idx - 1] {
                    Probe::Point(p) => (p, true),
                    Probe::Gap(_, b) => (b, false),
                };
                intervals.push(Interval {
                    lo,
                    hi,
                    lo_closed,
                    hi_closed,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some((lo, lo_closed)) = start {
        intervals.push(Interval {
            lo,
            hi: f64::INFINITY,
            lo_closed,
            hi_closed: false,
        });
    }
    PredictionSet {
        intervals,
        hulled: false,
    }
}

fn gap_sample(a: f64, b: f64) -> Option<f64> {
    let y = match (a.is_finite(), b.is_finite()) {
        (false, true) => b - b.abs().max(1.0),
        (true, false) => {
            let y = a + a.abs().max(1.0);
            if y.is_finite() {
                y
            } else {
                f64::MAX
            }
        }
        (true, true) => a + (b - a) / 2.0,
        (false, false) => 0.0,
    };
    (y > a && y < b).then_some(y)
}

/// Fitted cross-validation state: K complement models plus sorted fold
/// scores, reusable across test points.
#[derive(Debug, Clone)]
pub struct CrossConformal {
    folds: FoldAssignment,
    cv: CvScores,
    spec: ScoreFunctionSpec,
    sorted_scores: Vec<Vec<f64>>,
    weights: FoldWeights,
}

impl CrossConformal {
    pub fn fit(data: &Dataset, folds: &FoldAssignment, spec: &ScoreFunctionSpec) -> Result<Self> {
        let cv = compute_cv_scores(data, folds, spec)?;
        Self::from_parts(folds.clone(), cv, *spec)
    }

    pub fn from_parts(folds: FoldAssignment, cv: CvScores, spec: ScoreFunctionSpec) -> Result<Self> {
        if cv.k() != folds.k() {
            return Err(invalid_config("score and fold counts differ"));
        }
        let sorted_scores = (0..folds.k())
            .map(|k| {
                let mut s = cv.fold_scores(k).to_vec();
                s.sort_by(f64::total_cmp);
                s
            })
            .collect();
        let weights = fold_weights(&folds.fold_sizes())?;
        Ok(Self {
            folds,
            cv,
            spec,
            sorted_scores,
            weights,
        })
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn cv(&self) -> &CvScores {
        &self.cv
    }

    pub fn spec(&self) -> &ScoreFunctionSpec {
        &self.spec
    }

    pub fn weights(&self) -> &FoldWeights {
        &self.weights
    }

    /// Evaluates the K fold models at `x` once.
    pub fn at(&self, x: &[f64]) -> TestPoint<'_> {
        TestPoint {
            state: self,
            centers: self.cv.models().iter().map(|m| m.predict(x)).collect(),
        }
    }
}

/// A [`CrossConformal`] state evaluated at one test feature row.
#[derive(Debug, Clone)]
pub struct TestPoint<'a> {
    state: &'a CrossConformal,
    centers: Vec<f64>,
}

impl TestPoint<'_> {
    /// `μ̂_{−I_k}(x)` for every fold.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    fn test_score(&self, k: usize, y: f64) -> f64 {
        (y - self.centers[k]).abs()
    }

    /// Fold p-values at `y`; `tau` selects the randomized form.
    pub fn pvalues(&self, y: f64, tau: Option<f64>) -> PValueVector {
        let values = self
            .state
            .sorted_scores
            .iter()
            .enumerate()
            .map(|(k, sorted)| {
                let s = self.test_score(k, y);
                let m = sorted.len();
                let below = sorted.partition_point(|&v| v < s);
                let denom = (m + 1) as f64;
                match tau {
                    None => (1 + m - below) as f64 / denom,
                    Some(tau) => {
                        let not_above = sorted.partition_point(|&v| v <= s);
                        let ties = not_above - below;
                        let above = m - not_above;
                        (tau + tau * ties as f64 + above as f64) / denom
                    }
                }
            })
            .collect();
        PValueVector {
            values,
            fold_sizes: self.state.folds.fold_sizes(),
            randomized: tau.is_some(),
            tau,
        }
    }

    /// `#{i : s((x, y); D_{−k(i)}) ≤ S_i}` over all used points.
    pub fn pooled_count(&self, y: f64) -> usize {
        let folds = &self.state.folds;
        (0..folds.n_total())
            .filter(|&i| match (folds.fold_of(i), self.state.cv.score_of(i)) {
                (Some(k), Some(s)) => self.test_score(k, y) <= s,
                _ => false,
            })
            .count()
    }

    /// Plain cross-conformal membership, pooled over all points.
    pub fn cross_member(&self, y: f64, alpha: f64) -> bool {
        let n = self.state.folds.n_used();
        (1 + self.pooled_count(y)) as f64 / (n + 1) as f64 > alpha
    }

    /// The same membership through fold p-values:
    /// `Σ w_k P_k(y) > α + (1 − α)(K − 1)/(n + K)`.
    pub fn weighted_member(&self, y: f64, alpha: f64) -> bool {
        let p = self.pvalues(y, None);
        let stat: f64 = self.state.weights.weights.iter().zip(&p.values).map(|(w, v)| w * v).sum();
        let k = self.state.folds.k();
        let n = self.state.folds.n_used();
        stat > alpha + (1.0 - alpha) * (k as f64 - 1.0) / (n + k) as f64
    }

    pub fn variant_member(&self, y: f64, combiner: &CombinerSpec) -> Result<bool> {
        let tau = match combiner.pvalues {
            PValueKind::Deterministic => None,
            PValueKind::Randomized => combiner.draws.map(|d| d.tau),
        };
        Ok(combiner.verdict(&self.pvalues(y, tau))?.included)
    }

    /// Every `μ̂_{−I_k}(x) ± S_i`, `i ∈ I_k`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.state.folds.n_used());
        for (k, sorted) in self.state.sorted_scores.iter().enumerate() {
            let c = self.centers[k];
            for &s in sorted {
                out.push(c - s);
                out.push(c + s);
            }
        }
        out
    }

    pub fn cross_set(&self, alpha: f64) -> PredictionSet {
        endpoint_scan(&self.breakpoints(), |y| self.cross_member(y, alpha))
    }

    pub fn variant_set(&self, combiner: &CombinerSpec) -> Result<PredictionSet> {
        combiner.validate()?;
        let min_m = self.state.folds.fold_sizes().into_iter().min().unwrap_or(0);
        if !crate::pvalues::is_informative(combiner.threshold, min_m) {
            log::warn!(
                "threshold {} with folds of size {min_m}: 1 < threshold·(m+1) fails, the set may be the whole line",
                combiner.threshold
            );
        }
        let breaks = self.breakpoints();
        // membership cannot fail once the combiner validated
        Ok(endpoint_scan(&breaks, |y| self.variant_member(y, combiner).unwrap_or(false)))
    }

    /// The CV+ interval built from `μ̂_{−I_{k(i)}}(x) ∓ S_i`.
    pub fn cv_plus(&self, alpha: f64) -> PredictionSet {
        let folds = &self.state.folds;
        let n = folds.n_used();
        let gamma = (1.0 - alpha) * (1.0 + 1.0 / n as f64);
        if gamma > 1.0 {
            return PredictionSet::whole_line();
        }
        let mut neg_lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for i in 0..folds.n_total() {
            if let (Some(k), Some(s)) = (folds.fold_of(i), self.state.cv.score_of(i)) {
                neg_lo.push(-(self.centers[k] - s));
                hi.push(self.centers[k] + s);
            }
        }
        let lower = -empirical_quantile(&neg_lo, gamma);
        let upper = empirical_quantile(&hi, gamma);
        if lower > upper {
            return PredictionSet::empty();
        }
        PredictionSet {
            intervals: vec![Interval::closed(lower, upper)],
            hulled: false,
        }
    }
}

/// Split conformal state: one model fit on a random half, calibrated on the
/// other half.
#[derive(Debug, Clone)]
pub struct SplitConformal {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub calibration_scores: Vec<f64>,
    model: FittedModel,
    spec: ScoreFunctionSpec,
}

impl SplitConformal {
    pub fn fit(data: &Dataset, spec: &ScoreFunctionSpec, rng: &RandomSource) -> Result<Self> {
        if data.n() < 2 {
            return Err(invalid_config("split conformal needs n >= 2"));
        }
        let mut idx: Vec<usize> = (0..data.n()).collect();
        idx.shuffle(&mut rng.rng());
        let cal = idx.split_off(data.n() / 2);
        let mut train = idx;
        train.sort_unstable();
        let mut calibration = cal;
        calibration.sort_unstable();
        let model = spec.regressor.fit(&data.subset(&train))?;
        let calibration_scores = calibration
            .iter()
            .map(|&i| spec.score(&model, &data.row(i), data.response(i)))
            .collect();
        Ok(Self {
            train,
            calibration,
            calibration_scores,
            model,
            spec: *spec,
        })
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    /// `γ = (1 − α)(1 + 1/|D_cal|)`.
    pub fn level(&self, alpha: f64) -> f64 {
        (1.0 - alpha) * (1.0 + 1.0 / self.calibration_scores.len() as f64)
    }

    pub fn quantile(&self, alpha: f64) -> f64 {
        empirical_quantile(&self.calibration_scores, self.level(alpha))
    }

    pub fn set(&self, x: &[f64], alpha: f64) -> PredictionSet {
        let q = self.quantile(alpha);
        if q.is_infinite() {
            log::warn!("split conformal level exceeds one; returning the whole line");
            return PredictionSet::whole_line();
        }
        let mu = self.model.predict(x);
        PredictionSet {
            intervals: vec![Interval::closed(mu - q, mu + q)],
            hulled: false,
        }
    }

    /// `(1 + #{S_i ≥ s(x, y)}) / (|D_cal| + 1)`.
    pub fn pvalue(&self, x: &[f64], y: f64) -> f64 {
        crate::pvalues::fold_pvalue(self.spec.score(&self.model, x, y), &self.calibration_scores)
    }
}

pub fn split_set(
    data: &Dataset,
    test_x: &[f64],
    alpha: f64,
    spec: &ScoreFunctionSpec,
    rng: &RandomSource,
) -> Result<PredictionSet> {
    Ok(SplitConformal::fit(data, spec, rng)?.set(test_x, alpha))
}

pub fn cross_set_direct(
    data: &Dataset,
    folds: &FoldAssignment,
    test_x: &[f64],
    alpha: f64,
    spec: &ScoreFunctionSpec,
) -> Result<PredictionSet> {
    Ok(CrossConformal::fit(data, folds, spec)?.at(test_x).cross_set(alpha))
}

pub fn variant_set(
    data: &Dataset,
    folds: &FoldAssignment,
    test_x: &[f64],
    spec: &ScoreFunctionSpec,
    combiner: &CombinerSpec,
) -> Result<PredictionSet> {
    CrossConformal::fit(data, folds, spec)?.at(test_x).variant_set(combiner)
}

pub fn cv_plus_set(
    data: &Dataset,
    folds: &FoldAssignment,
    test_x: &[f64],
    alpha: f64,
    regressor: &RegressorSpec,
) -> Result<PredictionSet> {
    let spec = ScoreFunctionSpec::residual(*regressor);
    Ok(CrossConformal::fit(data, folds, &spec)?.at(test_x).cv_plus(alpha))
}

/// Every prediction method the harness and CLI know about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mod,
    EMod,
    UMod,
    EuMod,
    Cross,
    ECross,
    UCross,
    EuCross,
    Split,
    Split2Alpha,
    CvPlus,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Mod,
        Method::EMod,
        Method::UMod,
        Method::EuMod,
        Method::Cross,
        Method::ECross,
        Method::UCross,
        Method::EuCross,
        Method::Split,
        Method::Split2Alpha,
        Method::CvPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mod => "mod",
            Method::EMod => "e-mod",
            Method::UMod => "u-mod",
            Method::EuMod => "eu-mod",
            Method::Cross => "cross",
            Method::ECross => "e-cross",
            Method::UCross => "u-cross",
            Method::EuCross => "eu-cross",
            Method::Split => "split",
            Method::Split2Alpha => "split-2alpha",
            Method::CvPlus => "cv+",
        }
    }

    /// The combiner behind a p-value merging method, if any.
    pub fn combiner_kind(self) -> Option<CombinerKind> {
        match self {
            Method::Mod => Some(CombinerKind::Mod),
            Method::EMod | Method::ECross => Some(CombinerKind::EMod),
            Method::UMod | Method::UCross => Some(CombinerKind::UMod),
            Method::EuMod | Method::EuCross => Some(CombinerKind::EuMod),
            _ => None,
        }
    }

    /// Whether the method runs at the inflated threshold `α′`.
    pub fn uses_alpha_prime(self) -> bool {
        matches!(self, Method::ECross | Method::UCross | Method::EuCross)
    }

    pub fn needs_split(self) -> bool {
        matches!(self, Method::Split | Method::Split2Alpha)
    }

    pub fn needs_folds(self) -> bool {
        !self.needs_split()
    }

    pub fn is_randomized(self) -> bool {
        self.combiner_kind().is_some_and(CombinerKind::needs_u)
    }

    /// Rejects combinations that lose their guarantee with unequal folds.
    pub fn check_fold_sizes(self, equal_sizes: bool) -> Result<()> {
        if !equal_sizes && matches!(self, Method::ECross | Method::EuCross) {
            return Err(invalid_config(format!(
                "{} needs equal fold sizes; only u-cross is available with varying folds",
                self.name()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let canonical = s.strip_suffix("-cross").filter(|b| b.ends_with("mod")).unwrap_or(s);
        Method::ALL
            .into_iter()
            .find(|m| m.name() == canonical)
            .ok_or_else(|| invalid_config(format!("unknown method `{s}`")))
    }
}

/// Parses a comma separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(invalid_config("method list is empty"));
    }
    Ok(methods)
}

/// Options shared by every method when producing a set.
#[derive(Debug, Clone, Copy)]
pub struct MethodOptions {
    pub alpha: f64,
    pub draws: RandomDraws,
    pub pvalues: PValueKind,
    pub hull: bool,
}

/// Builds `method`'s set at `x`. Fold methods need `cross`; split methods
/// need `split`.
pub fn method_set(
    method: Method,
    x: &[f64],
    cross: Option<&TestPoint<'_>>,
    split: Option<&SplitConformal>,
    opts: &MethodOptions,
) -> Result<PredictionSet> {
    let set = match method {
        Method::Split | Method::Split2Alpha => {
            let split = split.ok_or_else(|| invalid_config("split state missing"))?;
            let alpha = if method == Method::Split2Alpha {
                2.0 * opts.alpha
            } else {
                opts.alpha
            };
            split.set(x, alpha)
        }
        Method::Cross => cross.ok_or_else(|| invalid_config("fold state missing"))?.cross_set(opts.alpha),
        Method::CvPlus => cross.ok_or_else(|| invalid_config("fold state missing"))?.cv_plus(opts.alpha),
        _ => {
            let tp = cross.ok_or_else(|| invalid_config("fold state missing"))?;
            let folds = tp.state.folds();
            let equal = folds.has_equal_sizes();
            method.check_fold_sizes(equal)?;
            let kind = method.combiner_kind().expect("merging method");
            let threshold = if method.uses_alpha_prime() {
                alpha_prime(opts.alpha, folds.k(), folds.n_used())
            } else {
                opts.alpha
            };
            let combiner = CombinerSpec::new(kind, threshold, Some(opts.draws))
                .with_pvalues(opts.pvalues)
                .weighted(method == Method::UCross && !equal);
            tp.variant_set(&combiner)?
        }
    };
    Ok(if opts.hull { set.hull() } else { set })
}
