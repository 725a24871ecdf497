//! Containers shared by every other module: datasets, fold assignments and
//! seeded randomness.
//!
//! All randomness flows through [`RandomSource`], a `(seed, stream_id)` pair
//! that deterministically opens a ChaCha20 stream. Consumers derive their own
//! named substreams so adding a consumer never shifts another one's draws.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_data, Error, Result};

/// Feature matrix plus response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    responses: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(invalid_data(format!(
                "dataset must have n >= 1 and p >= 1 (got {}x{})",
                features.nrows(),
                features.ncols()
            )));
        }
        if features.nrows() != responses.len() {
            return Err(invalid_data(format!(
                "{} feature rows but {} responses",
                features.nrows(),
                responses.len()
            )));
        }
        if features.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(invalid_data("dataset contains non-finite values"));
        }
        Ok(Self {
            features,
            responses,
        })
    }

    /// Builds a dataset from row-major feature rows.
    pub fn from_rows(rows: &[Vec<f64>], responses: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid_data("feature rows have different lengths"));
        }
        let features = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(features, DVector::from_vec(responses))
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    /// Copy of feature row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            responses: self.responses.select_rows(idx),
        }
    }

    /// Appends a constant column of ones (a linear intercept).
    pub fn with_intercept(&self) -> Dataset {
        let n = self.n();
        let features = self.features.clone().insert_column(self.p(), 1.0);
        debug_assert_eq!(features.nrows(), n);
        Dataset {
            features,
            responses: self.responses.clone(),
        }
    }

    /// Reads a headed CSV. The `target` column becomes the response and
    /// every other column must be numeric.
    pub fn from_csv_reader<R: Read>(reader: R, target: &str) -> Result<(Dataset, Vec<String>)> {
        let table = NumericTable::from_reader(reader)?;
        let target_idx = table
            .columns
            .iter()
            .position(|c| c == target)
            .ok_or_else(|| Error::MissingColumn(target.to_string()))?;
        let names: Vec<String> = table
            .columns
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target_idx)
            .map(|(_, c)| c.clone())
            .collect();
        let responses: Vec<f64> = table.rows.iter().map(|r| r[target_idx]).collect();
        let rows: Vec<Vec<f64>> = table
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != target_idx)
                    .map(|(_, v)| *v)
                    .collect()
            })
            .collect();
        if rows.is_empty() {
            return Err(invalid_data("csv has no data rows"));
        }
        Ok((Dataset::from_rows(&rows, responses)?, names))
    }

    pub fn from_csv_path(path: impl AsRef<Path>, target: &str) -> Result<(Dataset, Vec<String>)> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, target)
    }
}

/// A headed CSV whose every cell parsed as a finite number.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(columns.len());
            for (j, cell) in record.iter().enumerate() {
                let value = cell.parse::<f64>().ok().filter(|v| v.is_finite());
                match value {
                    Some(v) => row.push(v),
                    None => {
                        return Err(Error::NonNumericColumn {
                            column: columns.get(j).cloned().unwrap_or_default(),
                            row: r + 1,
                            value: cell.to_string(),
                        })
                    }
                }
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Every fold has `floor(n/K)` points; `n mod K` random points are dropped.
    Equal,
    /// All points are kept; fold sizes differ by at most one and the larger
    /// folds sit at uniformly random fold indices.
    Varying,
}

impl std::str::FromStr for FoldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(FoldMode::Equal),
            "varying" => Ok(FoldMode::Varying),
            other => Err(invalid_config(format!("unknown fold mode `{other}`"))),
        }
    }
}

/// Partition of `[n]` into K folds (plus discarded points in equal mode).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
    discarded: Vec<usize>,
    mode: FoldMode,
}

impl FoldAssignment {
    /// Builds an assignment from explicit member lists, validating the
    /// partition and the size rules of `mode`.
    pub fn from_members(
        n: usize,
        members: Vec<Vec<usize>>,
        discarded: Vec<usize>,
        mode: FoldMode,
    ) -> Result<Self> {
        let k = members.len();
        if k == 0 {
            return Err(invalid_config("at least one fold is required"));
        }
        let mut fold_of = vec![None; n];
        let mut seen = vec![false; n];
        for (f, fold) in members.iter().enumerate() {
            if fold.is_empty() {
                return Err(invalid_config(format!("fold {f} is empty")));
            }
            for &i in fold {
                if i >= n || seen[i] {
                    return Err(invalid_config(format!("index {i} out of range or repeated")));
                }
                seen[i] = true;
                fold_of[i] = Some(f);
            }
        }
        for &i in &discarded {
            if i >= n || seen[i] {
                return Err(invalid_config(format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid_config("folds and discarded points do not cover [n]"));
        }
        let min = members.iter().map(Vec::len).min().unwrap_or(0);
        let max = members.iter().map(Vec::len).max().unwrap_or(0);
        match mode {
            FoldMode::Equal if min != max || discarded.len() >= k => {
                return Err(invalid_config("equal mode needs equal folds and fewer than K discarded"))
            }
            FoldMode::Varying if max - min > 1 || !discarded.is_empty() => {
                return Err(invalid_config("varying mode needs sizes within one and no discards"))
            }
            _ => {}
        }
        Ok(Self {
            fold_of,
            members,
            discarded,
            mode,
        })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Size of the original index range `[n]`.
    pub fn n_total(&self) -> usize {
        self.fold_of.len()
    }

    /// Number of points that belong to some fold.
    pub fn n_used(&self) -> usize {
        self.fold_of.len() - self.discarded.len()
    }

    pub fn fold_of(&self, i: usize) -> Option<usize> {
        self.fold_of[i]
    }

    pub fn members(&self, fold: usize) -> &[usize] {
        &self.members[fold]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn discarded(&self) -> &[usize] {
        &self.discarded
    }

    pub fn mode(&self) -> FoldMode {
        self.mode
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn has_equal_sizes(&self) -> bool {
        self.members.windows(2).all(|w| w[0].len() == w[1].len())
    }

    /// Used points outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| matches!(self.fold_of[i], Some(f) if f != fold))
            .collect()
    }
}

/// Uniformly random partition of `[n]` into `k` folds.
pub fn assign_folds(n: usize, k: usize, mode: FoldMode, rng: &RandomSource) -> Result<FoldAssignment> {
    if k == 0 || k > n {
        return Err(invalid_config(format!("need 1 <= K <= n (got K={k}, n={n})")));
    }
    let mut rng = rng.rng();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let m = n / k;
    let extra = n % k;
    let (sizes, discarded) = match mode {
        FoldMode::Equal => (vec![m; k], order[..extra].to_vec()),
        FoldMode::Varying => {
            let mut fold_ids: Vec<usize> = (0..k).collect();
            fold_ids.shuffle(&mut rng);
            let mut sizes = vec![m; k];
            for &f in &fold_ids[..extra] {
                sizes[f] += 1;
            }
            (sizes, Vec::new())
        }
    };
    let mut cursor = discarded.len();
    let mut members = Vec::with_capacity(k);
    for size in sizes {
        let mut fold = order[cursor..cursor + size].to_vec();
        fold.sort_unstable();
        members.push(fold);
        cursor += size;
    }
    let mut discarded = discarded;
    discarded.sort_unstable();
    FoldAssignment::from_members(n, members, discarded, mode)
}

/// A reproducible randomness stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    /// Derives an independent stream named `name`, indexed by `index`
    /// (typically a trial number).
    pub fn substream(&self, name: &str, index: u64) -> Self {
        // FNV-1a over the parent id, the name and the index, then a
        // splitmix64 finalizer.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        self.stream_id.to_le_bytes().into_iter().for_each(&mut eat);
        name.bytes().for_each(&mut eat);
        eat(0xff);
        index.to_le_bytes().into_iter().for_each(&mut eat);
        Self {
            seed: self.seed,
            stream_id: splitmix64(h),
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draws shared by one prediction task: `tau` smooths the p-values of
/// every fold, `u` drives the `1/(2-U)` factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomDraws {
    pub tau: f64,
    pub u: f64,
}

impl RandomDraws {
    pub fn new(tau: f64, u: f64) -> Result<Self> {
        for (name, v) in [("tau", tau), ("u", u)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid_config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        Ok(Self { tau, u })
    }
}

pub fn draw_randomization(rng: &RandomSource) -> RandomDraws {
    let mut rng = rng.rng();
    let tau: f64 = rng.sample(Open01);
    let u: f64 = rng.sample(Open01);
    RandomDraws { tau, u }
}
