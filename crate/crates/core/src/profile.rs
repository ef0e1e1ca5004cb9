//! Profile likelihood for theta: estimation, confidence intervals and the
//! likelihood-ratio test of theta = 1.
//!
//! For a fixed theta the model is linear, so the profile log-likelihood
//! `l(theta)` is the Gaussian log-likelihood of the OLS fit at that theta.
//! Replicated rows share a model-matrix row, so the fit is computed on
//! community means weighted by multiplicity plus the pure-error sum of
//! squares, which gives the same rss with fewer rows.

use serde::{Serialize, Serializer};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::fit::{self, FitResult, PERFECT_FIT_RELATIVE};
use crate::linalg;
use crate::model::{InteractionSpec, MatrixBuilder, THETA_MIN};
use crate::optim;
use crate::stats;

pub const DEFAULT_BOUNDS: (f64, f64) = (0.01, 2.5);
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const GRID_POINTS: usize = 101;
/// Absolute tolerance on confidence bounds.
pub const CI_TOL: f64 = 1e-6;
const CI_FIRST_STEP: f64 = 1e-3;
/// Relative residual below which the golden-section search keeps
/// narrowing past `tol` (near-noiseless data has a very sharp peak).
const SHARP_PEAK_RELATIVE: f64 = 1e-6;
const SHARP_PEAK_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    pub bounds: (f64, f64),
    pub tol: f64,
    pub alpha: f64,
    pub compute_ci: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            bounds: DEFAULT_BOUNDS,
            tol: DEFAULT_TOL,
            alpha: DEFAULT_ALPHA,
            compute_ci: true,
        }
    }
}

impl EstimateOptions {
    pub fn without_ci(mut self) -> Self {
        self.compute_ci = false;
        self
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo >= THETA_MIN && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidBounds(lo, hi));
        }
        Ok(())
    }
}

/// One side of a profile-likelihood interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiBound {
    Bound(f64),
    /// No crossing of the cut-off inside the search bounds.
    NonConvergent,
}

impl CiBound {
    pub fn value(self) -> Option<f64> {
        match self {
            CiBound::Bound(v) => Some(v),
            CiBound::NonConvergent => None,
        }
    }
}

impl Serialize for CiBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CiBound::Bound(v) => s.serialize_f64(*v),
            CiBound::NonConvergent => s.serialize_str("non_convergent"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: CiBound,
    pub upper: CiBound,
}

impl ConfidenceInterval {
    pub fn converged(&self) -> bool {
        matches!((self.lower, self.upper), (CiBound::Bound(_), CiBound::Bound(_)))
    }

    pub fn contains(&self, theta: f64) -> Option<bool> {
        match (self.lower, self.upper) {
            (CiBound::Bound(lo), CiBound::Bound(hi)) => Some(lo <= theta && theta <= hi),
            _ => None,
        }
    }

    pub fn width(&self) -> Option<f64> {
        match (self.lower, self.upper) {
            (CiBound::Bound(lo), CiBound::Bound(hi)) => Some(hi - lo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrTest {
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl LrTest {
    pub fn from_statistic(statistic: f64, alpha: f64) -> LrTest {
        let statistic = if statistic.is_nan() { 0.0 } else { statistic.max(0.0) };
        let p_value = if statistic.is_infinite() {
            0.0
        } else {
            stats::chi2_sf(statistic, 1.0)
        };
        LrTest {
            statistic,
            p_value,
            significant: p_value < alpha,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaEstimate {
    pub theta_hat: f64,
    #[serde(serialize_with = "serialize_inf")]
    pub loglik_max: f64,
    pub ci: ConfidenceInterval,
    pub alpha: f64,
    pub lr_vs_one: LrTest,
    /// theta_hat within `tol` of a search bound.
    pub boundary_maximum: bool,
    /// The profile reached an exact fit; the interval is not meaningful.
    pub degenerate: bool,
    pub evaluations: usize,
    /// OLS fit at theta_hat.
    pub fit: FitResult,
}

fn serialize_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

/// Profile log-likelihood of one (design, response, spec) triple.
pub struct Profile<'a> {
    design: &'a Design,
    response: &'a [f64],
    spec: InteractionSpec,
    collapsed: MatrixBuilder,
    sqrt_weights: Vec<f64>,
    scaled_means: Vec<f64>,
    pure_error: f64,
    yy: f64,
}

impl<'a> Profile<'a> {
    pub fn new(design: &'a Design, response: &'a [f64], spec: &InteractionSpec) -> Result<Profile<'a>> {
        if response.len() != design.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                design.n_rows(),
                response.len()
            )));
        }
        if let Some(i) = response.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFiniteResponse(i + 1));
        }
        let collapsed_design = design.with_replicates(1)?;
        let collapsed = MatrixBuilder::new(&collapsed_design, spec)?;
        let mut sqrt_weights = Vec::with_capacity(design.replicates().len());
        let mut scaled_means = Vec::with_capacity(design.replicates().len());
        let mut pure_error = 0.0;
        let mut start = 0;
        for &r in design.replicates() {
            let ys = &response[start..start + r];
            let mean = ys.iter().sum::<f64>() / r as f64;
            pure_error += ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
            let w = (r as f64).sqrt();
            sqrt_weights.push(w);
            scaled_means.push(w * mean);
            start += r;
        }
        Ok(Profile {
            design,
            response,
            spec: spec.clone(),
            collapsed,
            sqrt_weights,
            scaled_means,
            pure_error,
            yy: response.iter().map(|y| y * y).sum(),
        })
    }

    pub fn has_interactions(&self) -> bool {
        self.collapsed.has_interactions()
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    /// Residual sum of squares at `theta`.
    pub fn rss(&self, theta: f64) -> f64 {
        let m = self.sqrt_weights.len();
        let p = self.collapsed.p();
        let mut data = vec![0.0; m * p];
        self.collapsed.fill(theta, &mut data);
        for col in data.chunks_exact_mut(m) {
            for (v, w) in col.iter_mut().zip(&self.sqrt_weights) {
                *v *= w;
            }
        }
        let ls = linalg::least_squares(&data, m, p, &self.scaled_means);
        ls.rss + self.pure_error
    }

    /// `l(theta)`; `+inf` for an exact fit.
    pub fn loglik(&self, theta: f64) -> f64 {
        let rss = self.rss(theta);
        if rss <= PERFECT_FIT_RELATIVE * PERFECT_FIT_RELATIVE * self.yy {
            f64::INFINITY
        } else {
            fit::gaussian_loglik(rss, self.n())
        }
    }

    /// Full OLS fit at `theta` on the replicated rows.
    pub fn fit(&self, theta: f64) -> Result<FitResult> {
        let m = MatrixBuilder::new(self.design, &self.spec)?.build(theta)?;
        fit::ols(&m, self.response)
    }
}

pub fn profile_loglik(
    design: &Design,
    response: &[f64],
    spec: &InteractionSpec,
    theta: f64,
) -> Result<f64> {
    crate::model::check_theta(theta)?;
    Ok(Profile::new(design, response, spec)?.loglik(theta))
}

/// Evenly spaced grid of `points` values over `bounds`.
pub fn theta_grid(bounds: (f64, f64), points: usize) -> Vec<f64> {
    let (lo, hi) = bounds;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
        .collect()
}

/// Grid pre-scan over the bounds, then golden-section refinement inside the
/// cell around the best grid point. Grid ties go to the smaller theta.
pub fn maximize_profile<F: FnMut(f64) -> f64>(
    mut l: F,
    bounds: (f64, f64),
    tol: f64,
) -> (f64, f64, usize) {
    let grid = theta_grid(bounds, GRID_POINTS);
    let mut best = (grid[0], l(grid[0]));
    let mut best_idx = 0;
    for (i, &t) in grid.iter().enumerate().skip(1) {
        let v = l(t);
        if v > best.1 {
            best = (t, v);
            best_idx = i;
        }
        if best.1 == f64::INFINITY {
            return (best.0, best.1, i + 1);
        }
    }
    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(grid.len() - 1)];
    let refined = optim::golden_section_max(&mut l, lo, hi, tol);
    if refined.fx > best.1 {
        best = (refined.x, refined.fx);
    }
    (best.0, best.1, grid.len() + refined.evaluations)
}

/// One interval side: the first crossing of `l = cutoff` moving from
/// `theta_hat` toward `limit`, bracketed by doubling steps and then
/// bisected.
fn ci_side<F: FnMut(f64) -> f64>(l: &mut F, theta_hat: f64, cutoff: f64, limit: f64) -> (CiBound, usize) {
    let dir = if limit >= theta_hat { 1.0 } else { -1.0 };
    let mut evals = 0;
    let mut prev = theta_hat;
    let mut step = CI_FIRST_STEP;
    loop {
        let mut cand = theta_hat + dir * step;
        let at_limit = (cand - limit) * dir >= 0.0;
        if at_limit {
            cand = limit;
        }
        if (cand - prev) * dir <= 0.0 {
            return (CiBound::NonConvergent, evals);
        }
        let g = l(cand) - cutoff;
        evals += 1;
        if g < 0.0 {
            let root = optim::bisect(
                |t| {
                    evals += 1;
                    l(t) - cutoff
                },
                prev,
                cand,
                CI_TOL,
            );
            return (CiBound::Bound(root), evals);
        }
        if at_limit {
            return (CiBound::NonConvergent, evals);
        }
        prev = cand;
        step *= 2.0;
    }
}

/// Profile-likelihood interval `{theta : l(theta) > l_max - q/2}` with `q`
/// the `1 - alpha` quantile of chi-squared(1).
pub fn ci_from_profile<F: FnMut(f64) -> f64>(
    mut l: F,
    theta_hat: f64,
    loglik_max: f64,
    alpha: f64,
    bounds: (f64, f64),
) -> (ConfidenceInterval, usize) {
    let q = stats::chi2_quantile(1.0 - alpha, 1.0);
    let cutoff = loglik_max - 0.5 * q;
    let (lower, e1) = ci_side(&mut l, theta_hat, cutoff, bounds.0);
    let (upper, e2) = ci_side(&mut l, theta_hat, cutoff, bounds.1);
    (ConfidenceInterval { lower, upper }, e1 + e2)
}

pub fn estimate_theta(
    design: &Design,
    response: &[f64],
    spec: &InteractionSpec,
    opts: &EstimateOptions,
) -> Result<ThetaEstimate> {
    let profile = Profile::new(design, response, spec)?;
    estimate_on_profile(&profile, opts)
}

pub fn estimate_on_profile(profile: &Profile<'_>, opts: &EstimateOptions) -> Result<ThetaEstimate> {
    opts.validate()?;
    if !profile.has_interactions() {
        return Err(Error::NoInteractionTerms(profile.spec.family.name()));
    }
    let mut evals = 0;
    let mut l = |t: f64| {
        evals += 1;
        profile.loglik(t)
    };
    let (mut theta_hat, mut lmax, _) = maximize_profile(&mut l, opts.bounds, opts.tol);

    if lmax.is_finite() {
        let rss = profile.rss(theta_hat);
        if rss.sqrt() < SHARP_PEAK_RELATIVE * profile.yy.sqrt() {
            let lo = (theta_hat - opts.tol).max(opts.bounds.0);
            let hi = (theta_hat + opts.tol).min(opts.bounds.1);
            let sharp = optim::golden_section_max(&mut l, lo, hi, SHARP_PEAK_TOL);
            if sharp.fx > lmax {
                theta_hat = sharp.x;
                lmax = sharp.fx;
            }
        }
    }
    let degenerate = lmax == f64::INFINITY;

    let l_one = l(1.0);
    let statistic = if degenerate && l_one == f64::INFINITY {
        0.0
    } else {
        2.0 * (lmax - l_one)
    };
    let lr_vs_one = if theta_hat == 1.0 {
        LrTest::from_statistic(0.0, opts.alpha)
    } else {
        LrTest::from_statistic(statistic, opts.alpha)
    };

    let ci = if opts.compute_ci && !degenerate {
        ci_from_profile(&mut l, theta_hat, lmax, opts.alpha, opts.bounds).0
    } else {
        ConfidenceInterval {
            lower: CiBound::NonConvergent,
            upper: CiBound::NonConvergent,
        }
    };
    let boundary_maximum =
        theta_hat - opts.bounds.0 <= opts.tol || opts.bounds.1 - theta_hat <= opts.tol;

    let fit = profile.fit(theta_hat)?.with_theta_estimated(true);
    Ok(ThetaEstimate {
        theta_hat,
        loglik_max: lmax,
        ci,
        alpha: opts.alpha,
        lr_vs_one,
        boundary_maximum,
        degenerate,
        evaluations: evals,
        fit,
    })
}

pub fn theta_ci(
    design: &Design,
    response: &[f64],
    spec: &InteractionSpec,
    theta_hat: f64,
    alpha: f64,
    bounds: (f64, f64),
) -> Result<ConfidenceInterval> {
    let profile = Profile::new(design, response, spec)?;
    let lmax = profile.loglik(theta_hat);
    Ok(ci_from_profile(|t| profile.loglik(t), theta_hat, lmax, alpha, bounds).0)
}

pub fn lr_test_theta(
    design: &Design,
    response: &[f64],
    spec: &InteractionSpec,
    theta_hat: f64,
    alpha: f64,
) -> Result<LrTest> {
    let profile = Profile::new(design, response, spec)?;
    if theta_hat == 1.0 {
        return Ok(LrTest::from_statistic(0.0, alpha));
    }
    let l_hat = profile.loglik(theta_hat);
    let l_one = profile.loglik(1.0);
    let stat = if l_hat == f64::INFINITY && l_one == f64::INFINITY {
        0.0
    } else {
        2.0 * (l_hat - l_one)
    };
    Ok(LrTest::from_statistic(stat, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_profile_interval() {
        let q = stats::chi2_quantile(0.95, 1.0);
        let (ci, _) = ci_from_profile(|t| -(t - 1.0).powi(2), 1.0, 0.0, 0.05, (-5.0, 5.0));
        let half = (q / 2.0).sqrt();
        assert!((ci.lower.value().unwrap() - (1.0 - half)).abs() < 2e-6);
        assert!((ci.upper.value().unwrap() - (1.0 + half)).abs() < 2e-6);
    }

    #[test]
    fn interval_side_hitting_bound_is_non_convergent() {
        // peak at 0.05, curvature too low to cross the cut-off before 0.01
        let (ci, _) = ci_from_profile(|t| -(t - 0.05).powi(2), 0.05, 0.0, 0.05, (0.01, 2.5));
        assert_eq!(ci.lower, CiBound::NonConvergent);
        assert!(ci.upper.value().is_some());
        assert!(!ci.converged());
        assert_eq!(ci.contains(0.05), None);
    }

    #[test]
    fn lr_statistic_at_critical_value() {
        let t = LrTest::from_statistic(3.841_459, 0.05);
        assert!((t.p_value - 0.05).abs() < 1e-4);
        let z = LrTest::from_statistic(0.0, 0.05);
        assert_eq!(z.p_value, 1.0);
        assert!(!z.significant);
        let inf = LrTest::from_statistic(f64::INFINITY, 0.05);
        assert!(inf.significant);
    }

    #[test]
    fn grid_covers_bounds() {
        let g = theta_grid((0.01, 2.5), 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[100], 2.5);
    }

    #[test]
    fn maximize_ties_prefer_smaller_theta() {
        let (t, _, _) = maximize_profile(|_| 1.0, (0.01, 2.5), 1e-5);
        assert!(t < 0.05);
    }
}
