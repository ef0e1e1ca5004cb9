//! OLS at fixed theta, Gaussian log-likelihood, information criteria and F
//! tests between nested fits.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelMatrix;
use crate::stats;

/// A fit whose residual norm is below this fraction of the response norm is
/// treated as exact (rss = 0).
pub const PERFECT_FIT_RELATIVE: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    /// `None` for columns dropped as collinear.
    pub coefficients: Vec<Option<f64>>,
    pub dropped: Vec<String>,
    pub rss: f64,
    pub n: usize,
    /// Number of estimated coefficients (rank of the model matrix).
    pub p: usize,
    pub sigma2_mle: f64,
    /// `+inf` when `perfect_fit`.
    #[serde(serialize_with = "serialize_loglik")]
    pub loglik: f64,
    pub perfect_fit: bool,
    pub theta_used: f64,
    pub theta_was_estimated: bool,
}

fn serialize_loglik<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .and_then(|i| self.coefficients[i])
    }

    /// Parameter count used by AIC/BIC: coefficients, sigma^2, and theta when
    /// it was estimated.
    pub fn k(&self) -> usize {
        self.p + 1 + usize::from(self.theta_was_estimated)
    }

    pub fn with_theta_estimated(mut self, estimated: bool) -> Self {
        self.theta_was_estimated = estimated;
        self
    }
}

/// Gaussian log-likelihood at the ML variance `rss / n`.
pub fn gaussian_loglik(rss: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * PI).ln() + (rss / n).ln() + 1.0)
}

pub fn ols(matrix: &ModelMatrix, response: &[f64]) -> Result<FitResult> {
    if matrix.n != response.len() {
        return Err(Error::DimensionMismatch(format!(
            "model matrix has {} rows, response has {}",
            matrix.n,
            response.len()
        )));
    }
    if matrix.n == 0 {
        return Err(Error::DimensionMismatch("no observations".into()));
    }
    if let Some(i) = response.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFiniteResponse(i + 1));
    }
    Ok(ols_unchecked(&matrix.data, &matrix.names, matrix.n, response, matrix.theta_used))
}

pub(crate) fn ols_unchecked(
    data: &[f64],
    names: &[String],
    n: usize,
    response: &[f64],
    theta: f64,
) -> FitResult {
    let p = names.len();
    let ls = linalg::least_squares(data, n, p, response);
    let yy: f64 = response.iter().map(|y| y * y).sum();
    let perfect = ls.rss <= PERFECT_FIT_RELATIVE * PERFECT_FIT_RELATIVE * yy;
    let rss = if perfect { 0.0 } else { ls.rss };
    FitResult {
        names: names.to_vec(),
        coefficients: ls.coefficients,
        dropped: ls.dropped.iter().map(|&j| names[j].clone()).collect(),
        rss,
        n,
        p: ls.rank,
        sigma2_mle: rss / n as f64,
        loglik: if perfect {
            f64::INFINITY
        } else {
            gaussian_loglik(rss, n)
        },
        perfect_fit: perfect,
        theta_used: theta,
        theta_was_estimated: false,
    }
}

pub fn aic(fit: &FitResult) -> Result<f64> {
    if fit.perfect_fit {
        return Err(Error::PerfectFit);
    }
    Ok(-2.0 * fit.loglik + 2.0 * fit.k() as f64)
}

pub fn bic(fit: &FitResult) -> Result<f64> {
    if fit.perfect_fit {
        return Err(Error::PerfectFit);
    }
    Ok(-2.0 * fit.loglik + fit.k() as f64 * (fit.n as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FTest {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
}

/// F test of `reduced` against the larger `full` model fitted to the same
/// data.
pub fn f_test(reduced: &FitResult, full: &FitResult) -> Result<FTest> {
    if reduced.n != full.n {
        return Err(Error::NotNested(format!(
            "fits use {} and {} observations",
            reduced.n, full.n
        )));
    }
    if full.p <= reduced.p {
        return Err(Error::NotNested(format!(
            "full model has {} coefficients, reduced has {}",
            full.p, reduced.p
        )));
    }
    if full.n <= full.p {
        return Err(Error::ZeroResidualDf);
    }
    if full.perfect_fit {
        return Err(Error::PerfectFit);
    }
    let df1 = full.p - reduced.p;
    let df2 = full.n - full.p;
    let f = (((reduced.rss - full.rss) / df1 as f64) / (full.rss / df2 as f64)).max(0.0);
    Ok(FTest {
        f,
        df1,
        df2,
        p_value: stats::f_sf(f, df1 as f64, df2 as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ColumnKind;

    fn matrix(cols: &[Vec<f64>]) -> ModelMatrix {
        let n = cols[0].len();
        ModelMatrix {
            names: (0..cols.len()).map(|i| format!("x{i}")).collect(),
            kinds: vec![ColumnKind::Identity; cols.len()],
            n,
            data: cols.concat(),
            theta_used: 1.0,
            rank_warning: false,
        }
    }

    fn fake_fit(rss: f64, n: usize, p: usize) -> FitResult {
        FitResult {
            names: vec![],
            coefficients: vec![],
            dropped: vec![],
            rss,
            n,
            p,
            sigma2_mle: rss / n as f64,
            loglik: gaussian_loglik(rss, n),
            perfect_fit: false,
            theta_used: 1.0,
            theta_was_estimated: false,
        }
    }

    #[test]
    fn intercept_only_perfect_fit() {
        let m = matrix(&[vec![1.0; 3]]);
        let fit = ols(&m, &[5.0, 5.0, 5.0]).unwrap();
        assert!((fit.coefficients[0].unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(fit.rss, 0.0);
        assert!(fit.perfect_fit);
        assert_eq!(fit.loglik, f64::INFINITY);
        assert!(matches!(aic(&fit), Err(Error::PerfectFit)));
    }

    #[test]
    fn dimension_mismatch() {
        let m = matrix(&[vec![1.0; 3]]);
        assert!(matches!(ols(&m, &[1.0, 2.0]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(ols(&m, &[1.0, f64::NAN, 2.0]), Err(Error::NonFiniteResponse(2))));
    }

    #[test]
    fn aic_algebra() {
        let n = 10;
        let a = fake_fit(1.0, n, 3);
        let b = fake_fit((-2.0f64).exp(), n, 3);
        let diff = aic(&a).unwrap() - aic(&b).unwrap();
        assert!((diff - 20.0).abs() < 1e-12);

        let est = a.clone().with_theta_estimated(true);
        assert!((aic(&est).unwrap() - aic(&a).unwrap() - 2.0).abs() < 1e-12);

        let f = fake_fit(100.0, 100, 10);
        let expect = 100.0 * ((2.0 * PI).ln() + 1.0) + 2.0 * 11.0;
        assert!((aic(&f).unwrap() - expect).abs() < 1e-10);
        let expect_bic = 100.0 * ((2.0 * PI).ln() + 1.0) + 11.0 * 100f64.ln();
        assert!((bic(&f).unwrap() - expect_bic).abs() < 1e-10);
    }

    #[test]
    fn f_test_edges() {
        let r = fake_fit(4.0, 12, 2);
        let f = fake_fit(4.0, 12, 4);
        let t = f_test(&r, &f).unwrap();
        assert_eq!(t.f, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!((t.df1, t.df2), (2, 8));
        assert!(matches!(f_test(&r, &r), Err(Error::NotNested(_))));
        let saturated = fake_fit(1.0, 4, 4);
        assert!(matches!(f_test(&fake_fit(2.0, 4, 2), &saturated), Err(Error::ZeroResidualDf)));
    }
}
