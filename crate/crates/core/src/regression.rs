//! Symmetric regression algorithms.
//!
//! Every fit here is invariant to the order of the training rows, which is
//! what makes the residual score symmetric in its training set.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid_config, invalid_data, Error, Result};

/// Relative cut-off below which singular values are treated as zero.
pub const PINV_RELATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegressorSpec {
    /// Least squares, minimum-norm solution when underdetermined.
    MinNormOls,
    Ridge { lambda: f64 },
    Knn { k: usize },
}

impl RegressorSpec {
    pub fn fit(&self, train: &Dataset) -> Result<FittedModel> {
        match *self {
            RegressorSpec::MinNormOls => fit_min_norm_ols(train),
            RegressorSpec::Ridge { lambda } => fit_ridge(train, lambda),
            RegressorSpec::Knn { k } => fit_knn(train, k),
        }
    }
}

impl fmt::Display for RegressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressorSpec::MinNormOls => write!(f, "ols"),
            RegressorSpec::Ridge { lambda } => write!(f, "ridge:{lambda}"),
            RegressorSpec::Knn { k } => write!(f, "knn:{k}"),
        }
    }
}

impl FromStr for RegressorSpec {
    type Err = Error;

    /// Parses `ols`, `ridge:<lambda>` or `knn:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("ols", None) => Ok(RegressorSpec::MinNormOls),
            ("ridge", Some(a)) => {
                let lambda: f64 = a
                    .parse()
                    .map_err(|_| invalid_config(format!("bad ridge penalty `{a}`")))?;
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(invalid_config("ridge penalty must be finite and >= 0"));
                }
                Ok(RegressorSpec::Ridge { lambda })
            }
            ("knn", Some(a)) => {
                let k: usize = a
                    .parse()
                    .map_err(|_| invalid_config(format!("bad neighbour count `{a}`")))?;
                if k == 0 {
                    return Err(invalid_config("knn needs k >= 1"));
                }
                Ok(RegressorSpec::Knn { k })
            }
            _ => Err(invalid_config(format!("unknown regressor `{s}`"))),
        }
    }
}

/// A trained regression function.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Linear { coefficients: DVector<f64> },
    Knn(KnnModel),
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Linear { coefficients } => {
                debug_assert_eq!(x.len(), coefficients.len());
                coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
            }
            FittedModel::Knn(model) => model.predict(x),
        }
    }

    pub fn coefficients(&self) -> Option<&DVector<f64>> {
        match self {
            FittedModel::Linear { coefficients } => Some(coefficients),
            FittedModel::Knn(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    rows: Vec<Vec<f64>>,
    responses: Vec<f64>,
}

impl KnnModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut order: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        // Ties are broken by response, then by feature values, never by
        // storage position.
        order.sort_by(|&(da, a), &(db, b)| {
            da.total_cmp(&db)
                .then_with(|| self.responses[a].total_cmp(&self.responses[b]))
                .then_with(|| lexicographic(&self.rows[a], &self.rows[b]))
        });
        let total: f64 = order[..self.k].iter().map(|&(_, i)| self.responses[i]).sum();
        total / self.k as f64
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn svd_of(m: &DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

fn cutoff(singular_values: &DVector<f64>) -> f64 {
    singular_values.iter().copied().fold(0.0, f64::max) * PINV_RELATIVE_TOL
}

/// Moore–Penrose pseudoinverse by SVD.
pub fn pseudoinverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = svd_of(m)?;
    let eps = cutoff(&svd.singular_values);
    svd.pseudo_inverse(eps).map_err(|e| Error::Numerical(e.to_string()))
}

fn check_finite(train: &Dataset) -> Result<()> {
    let finite = train.features().iter().chain(train.responses().iter()).all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(invalid_data("non-finite training values"))
    }
}

/// `β = X⁺ y`.
pub fn fit_min_norm_ols(train: &Dataset) -> Result<FittedModel> {
    check_finite(train)?;
    let svd = svd_of(train.features())?;
    let eps = cutoff(&svd.singular_values);
    let coefficients = svd
        .solve(train.responses(), eps)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite least-squares coefficients".into()));
    }
    Ok(FittedModel::Linear { coefficients })
}

/// `β = (XᵀX + λI)⁻¹ Xᵀ y`, falling back to the minimum-norm solution when
/// `λ = 0` and `X` is rank deficient.
pub fn fit_ridge(train: &Dataset, lambda: f64) -> Result<FittedModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid_config(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    check_finite(train)?;
    if lambda == 0.0 {
        // Unpenalized normal equations are singular exactly when the
        // minimum-norm solution differs from plain least squares.
        return fit_min_norm_ols(train);
    }
    let x = train.features();
    let mut gram = x.transpose() * x;
    for j in 0..gram.nrows() {
        gram[(j, j)] += lambda;
    }
    let rhs = x.transpose() * train.responses();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?;
    let coefficients = chol.solve(&rhs);
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite ridge coefficients".into()));
    }
    Ok(FittedModel::Linear { coefficients })
}

pub fn fit_knn(train: &Dataset, k: usize) -> Result<FittedModel> {
    if k == 0 || k > train.n() {
        return Err(invalid_config(format!(
            "knn needs 1 <= k <= n (got k={k}, n={})",
            train.n()
        )));
    }
    check_finite(train)?;
    Ok(FittedModel::Knn(KnnModel {
        k,
        rows: (0..train.n()).map(|i| train.row(i)).collect(),
        responses: train.responses().iter().copied().collect(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn coef(m: &FittedModel) -> Vec<f64> {
        m.coefficients().unwrap().iter().copied().collect()
    }

    #[test]
    fn identity_design() {
        let ds = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![2.0, 3.0]).unwrap();
        let b = coef(&fit_min_norm_ols(&ds).unwrap());
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_single_row() {
        // pinv([1 1]) = [1/2; 1/2], so β = (1, 1).
        let ds = Dataset::from_rows(&[vec![1.0, 1.0]], vec![2.0]).unwrap();
        let b = coef(&fit_min_norm_ols(&ds).unwrap());
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12, "{b:?}");
    }

    #[test]
    fn matches_normal_equations_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 50, 5);
        let y = DVector::from_fn(50, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(x.clone(), y.clone()).unwrap();
        let b = fit_min_norm_ols(&ds).unwrap();
        let oracle = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
        let got = b.coefficients().unwrap();
        let rel = (got - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-8, "relative error {rel}");
    }

    #[test]
    fn pseudoinverse_penrose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(r, c) in &[(1, 1), (3, 7), (20, 20), (40, 10), (100, 150), (150, 100)] {
            let x = random_matrix(&mut rng, r, c);
            let pinv = pseudoinverse(&x).unwrap();
            let back = &x * &pinv * &x;
            assert!((back - &x).amax() < 1e-8, "{r}x{c}");
        }
        // rank-deficient: duplicated columns
        let base = random_matrix(&mut rng, 30, 4);
        let x = DMatrix::from_fn(30, 8, |i, j| base[(i, j % 4)]);
        let pinv = pseudoinverse(&x).unwrap();
        assert!((&x * &pinv * &x - &x).amax() < 1e-8);
    }

    #[test]
    fn ridge_examples() {
        let ds = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![2.0, 3.0]).unwrap();
        let b = coef(&fit_ridge(&ds, 1.0).unwrap());
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 40, 6);
        let y = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(x, y).unwrap();
        let ridge0 = coef(&fit_ridge(&ds, 0.0).unwrap());
        let ols = coef(&fit_min_norm_ols(&ds).unwrap());
        for (a, b) in ridge0.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8);
        }
        let big = coef(&fit_ridge(&ds, 1e12).unwrap());
        assert!(big.iter().all(|c| c.abs() < 1e-6));
        assert!(fit_ridge(&ds, -1.0).is_err());
    }

    #[test]
    fn ridge_zero_rank_deficient_falls_back() {
        let ds = Dataset::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]], vec![2.0, 4.0]).unwrap();
        let b = coef(&fit_ridge(&ds, 0.0).unwrap());
        assert!((b[0] - 1.0).abs() < 1e-9 && (b[1] - 1.0).abs() < 1e-9, "{b:?}");
    }

    #[test]
    fn knn_examples() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![10.0, 20.0, 30.0]).unwrap();
        let m = fit_knn(&ds, 2).unwrap();
        assert_eq!(m.predict(&[0.0]), 15.0);
        let all = fit_knn(&ds, 3).unwrap();
        assert_eq!(all.predict(&[-40.0]), 20.0);
        assert_eq!(all.predict(&[7.5]), 20.0);
        let one = fit_knn(&ds, 1).unwrap();
        assert_eq!(one.predict(&[2.0]), 20.0);
        assert!(matches!(fit_knn(&ds, 4), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn knn_ties_use_response() {
        // Two rows equidistant from the query; the smaller response wins.
        let ds = Dataset::from_rows(&[vec![1.0], vec![-1.0]], vec![5.0, 3.0]).unwrap();
        assert_eq!(fit_knn(&ds, 1).unwrap().predict(&[0.0]), 3.0);
        let swapped = ds.subset(&[1, 0]);
        assert_eq!(fit_knn(&swapped, 1).unwrap().predict(&[0.0]), 3.0);
    }

    #[test]
    fn spec_strings() {
        assert_eq!("ols".parse::<RegressorSpec>().unwrap(), RegressorSpec::MinNormOls);
        assert_eq!("ridge:0.2".parse::<RegressorSpec>().unwrap(), RegressorSpec::Ridge { lambda: 0.2 });
        assert_eq!("knn:25".parse::<RegressorSpec>().unwrap(), RegressorSpec::Knn { k: 25 });
        for bad in ["", "ridge", "ridge:-1", "knn:0", "knn:x", "lasso:1"] {
            assert!(bad.parse::<RegressorSpec>().is_err(), "{bad}");
        }
        let spec = RegressorSpec::Ridge { lambda: 0.5 };
        assert_eq!(spec.to_string().parse::<RegressorSpec>().unwrap(), spec);
    }
}
