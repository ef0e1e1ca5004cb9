//! Model-selection procedures over a list of interaction structures, and
//! the lack-of-fit test against the community-factor model.
//!
//! * `a`: fit every candidate at theta = 1, pick by criterion, then estimate
//!   and test theta for the winner only.
//! * `b`: estimate and test theta once on a reference structure, refit all
//!   candidates at that theta (or at 1 when not significant), pick.
//! * `c`: estimate and test theta separately for every candidate, pick.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::fit::{self, FTest, FitResult};
use crate::model::{Family, InteractionSpec, MatrixBuilder};
use crate::profile::{self, EstimateOptions, LrTest, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    A,
    B,
    C,
}

impl Procedure {
    pub const ALL: [Procedure; 3] = [Procedure::A, Procedure::B, Procedure::C];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::A => "a",
            Procedure::B => "b",
            Procedure::C => "c",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Procedure::A),
            "b" => Ok(Procedure::B),
            "c" => Ok(Procedure::C),
            other => Err(format!("unknown procedure `{other}` (expected a, b or c)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        }
    }

    /// Criterion value, `-inf` for an exact fit.
    pub fn value(self, fit: &FitResult) -> f64 {
        let v = match self {
            Criterion::Aic => fit::aic(fit),
            Criterion::Bic => fit::bic(fit),
        };
        v.unwrap_or(f64::NEG_INFINITY)
    }
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(format!("unknown criterion `{other}` (expected aic or bic)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub criterion: Criterion,
    /// Significance level of the likelihood-ratio test of theta = 1.
    pub alpha: f64,
    /// Reference structure for procedure `b`.
    pub reference: InteractionSpec,
    pub estimate: EstimateOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            criterion: Criterion::Aic,
            alpha: profile::DEFAULT_ALPHA,
            reference: InteractionSpec::new(Family::AveragePairwise),
            estimate: EstimateOptions::default().without_ci(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateResult {
    pub spec: InteractionSpec,
    pub label: String,
    #[serde(serialize_with = "serialize_extended")]
    pub aic: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub bic: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub loglik: f64,
    pub coefficients: usize,
    pub theta_used: f64,
    pub theta_estimated: bool,
    /// Per-candidate estimate (procedure `c`, and the winner of `a`).
    pub theta_hat: Option<f64>,
    pub theta_test: Option<LrTest>,
}

fn serialize_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    pub procedure: Procedure,
    pub criterion: Criterion,
    pub chosen: InteractionSpec,
    pub chosen_label: String,
    /// 1 when theta was not significantly different from 1.
    pub theta_final: f64,
    /// The estimate that was tested against 1, when one was made.
    pub theta_hat: Option<f64>,
    pub theta_test: Option<LrTest>,
    pub per_candidate: Vec<CandidateResult>,
    /// Fit of the chosen structure at `theta_final`.
    pub chosen_fit: FitResult,
    /// Procedure `b` could not estimate theta on its reference and ran `a`.
    pub fell_back: bool,
    pub elapsed: f64,
}

impl SelectionResult {
    pub fn chosen_family(&self) -> Family {
        self.chosen.family
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["procedure", "criterion", "chosen", "theta_final", "fell_back"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in &self.per_candidate {
            h.push(format!("{}_{}", self.criterion.name(), c.label));
        }
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.procedure.to_string(),
            self.criterion.name().to_string(),
            self.chosen_label.clone(),
            self.theta_final.to_string(),
            self.fell_back.to_string(),
        ];
        for c in &self.per_candidate {
            r.push(self.criterion_of(c).to_string());
        }
        r
    }

    fn criterion_of(&self, c: &CandidateResult) -> f64 {
        match self.criterion {
            Criterion::Aic => c.aic,
            Criterion::Bic => c.bic,
        }
    }

    /// One-row CSV summary (plus header).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        w.write_record(self.csv_row())?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

struct Scored {
    result: CandidateResult,
    fit: FitResult,
    value: f64,
}

fn score(spec: &InteractionSpec, fit: FitResult, criterion: Criterion) -> Scored {
    let value = criterion.value(&fit);
    let result = CandidateResult {
        spec: spec.clone(),
        label: spec.label(),
        aic: Criterion::Aic.value(&fit),
        bic: Criterion::Bic.value(&fit),
        loglik: fit.loglik,
        coefficients: fit.p,
        theta_used: fit.theta_used,
        theta_estimated: fit.theta_was_estimated,
        theta_hat: None,
        theta_test: None,
    };
    Scored { result, fit, value }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    if !(a.is_finite() && b.is_finite()) {
        return a == b;
    }
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Index of the minimum criterion value; ties go to fewer coefficients,
/// then to the earlier candidate.
fn pick(scored: &[Scored]) -> usize {
    let mut best = 0;
    for (i, s) in scored.iter().enumerate().skip(1) {
        let b = &scored[best];
        let better = if nearly_equal(s.value, b.value) {
            s.result.coefficients < b.result.coefficients
        } else {
            s.value < b.value
        };
        if better {
            best = i;
        }
    }
    best
}

fn fit_at(design: &Design, response: &[f64], spec: &InteractionSpec, theta: f64) -> Result<FitResult> {
    let m = MatrixBuilder::new(design, spec)?.build(theta)?;
    fit::ols(&m, response)
}

fn check_candidates(design: &Design, candidates: &[InteractionSpec]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    for c in candidates {
        c.validate(design.species_count())?;
    }
    Ok(())
}

fn finish(
    procedure: Procedure,
    opts: &SelectOptions,
    scored: Vec<Scored>,
    theta_final: f64,
    theta_hat: Option<f64>,
    theta_test: Option<LrTest>,
    chosen_fit: Option<FitResult>,
    start: Instant,
) -> SelectionResult {
    let best = pick(&scored);
    let chosen = scored[best].result.spec.clone();
    let chosen_fit = chosen_fit.unwrap_or_else(|| scored[best].fit.clone());
    SelectionResult {
        procedure,
        criterion: opts.criterion,
        chosen_label: chosen.label(),
        chosen,
        theta_final,
        theta_hat,
        theta_test,
        per_candidate: scored.into_iter().map(|s| s.result).collect(),
        chosen_fit,
        fell_back: false,
        elapsed: start.elapsed().as_secs_f64(),
    }
}

pub fn procedure_a(
    design: &Design,
    response: &[f64],
    candidates: &[InteractionSpec],
    opts: &SelectOptions,
) -> Result<SelectionResult> {
    let start = Instant::now();
    check_candidates(design, candidates)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for spec in candidates {
        scored.push(score(spec, fit_at(design, response, spec, 1.0)?, opts.criterion));
    }
    let best = pick(&scored);
    let winner = scored[best].result.spec.clone();
    let profile = Profile::new(design, response, &winner)?;
    if !profile.has_interactions() {
        return Ok(finish(Procedure::A, opts, scored, 1.0, None, None, None, start));
    }
    let est = profile::estimate_on_profile(&profile, &opts.estimate)?;
    let test = profile::LrTest::from_statistic(est.lr_vs_one.statistic, opts.alpha);
    scored[best].result.theta_hat = Some(est.theta_hat);
    scored[best].result.theta_test = Some(test);
    let (theta_final, chosen_fit) = if test.significant {
        (est.theta_hat, est.fit)
    } else {
        (1.0, scored[best].fit.clone())
    };
    Ok(finish(
        Procedure::A,
        opts,
        scored,
        theta_final,
        Some(est.theta_hat),
        Some(test),
        Some(chosen_fit),
        start,
    ))
}

pub fn procedure_b(
    design: &Design,
    response: &[f64],
    candidates: &[InteractionSpec],
    opts: &SelectOptions,
) -> Result<SelectionResult> {
    let start = Instant::now();
    check_candidates(design, candidates)?;
    let est = Profile::new(design, response, &opts.reference)
        .and_then(|p| profile::estimate_on_profile(&p, &opts.estimate));
    let est = match est {
        Ok(e) => e,
        Err(_) => {
            let mut r = procedure_a(design, response, candidates, opts)?;
            r.fell_back = true;
            r.elapsed = start.elapsed().as_secs_f64();
            return Ok(r);
        }
    };
    let test = profile::LrTest::from_statistic(est.lr_vs_one.statistic, opts.alpha);
    let theta = if test.significant { est.theta_hat } else { 1.0 };
    let mut scored = Vec::with_capacity(candidates.len());
    for spec in candidates {
        let estimated = test.significant && spec.family.uses_theta();
        let fit = fit_at(design, response, spec, theta)?.with_theta_estimated(estimated);
        scored.push(score(spec, fit, opts.criterion));
    }
    Ok(finish(
        Procedure::B,
        opts,
        scored,
        theta,
        Some(est.theta_hat),
        Some(test),
        None,
        start,
    ))
}

pub fn procedure_c(
    design: &Design,
    response: &[f64],
    candidates: &[InteractionSpec],
    opts: &SelectOptions,
) -> Result<SelectionResult> {
    let start = Instant::now();
    check_candidates(design, candidates)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for spec in candidates {
        let profile = Profile::new(design, response, spec)?;
        if !profile.has_interactions() {
            scored.push(score(spec, fit_at(design, response, spec, 1.0)?, opts.criterion));
            continue;
        }
        let est = profile::estimate_on_profile(&profile, &opts.estimate)?;
        let test = profile::LrTest::from_statistic(est.lr_vs_one.statistic, opts.alpha);
        let fit = if test.significant {
            est.fit
        } else {
            fit_at(design, response, spec, 1.0)?
        };
        let mut s = score(spec, fit, opts.criterion);
        s.result.theta_hat = Some(est.theta_hat);
        s.result.theta_test = Some(test);
        scored.push(s);
    }
    let best = pick(&scored);
    let theta_final = scored[best].result.theta_used;
    let theta_hat = scored[best].result.theta_hat;
    let theta_test = scored[best].result.theta_test;
    Ok(finish(
        Procedure::C,
        opts,
        scored,
        theta_final,
        theta_hat,
        theta_test,
        None,
        start,
    ))
}

pub fn select(
    procedure: Procedure,
    design: &Design,
    response: &[f64],
    candidates: &[InteractionSpec],
    opts: &SelectOptions,
) -> Result<SelectionResult> {
    match procedure {
        Procedure::A => procedure_a(design, response, candidates, opts),
        Procedure::B => procedure_b(design, response, candidates, opts),
        Procedure::C => procedure_c(design, response, candidates, opts),
    }
}

/// The four structures compared throughout: average pairwise, functional
/// group (when a grouping is given), additive species and full pairwise.
pub fn default_candidates(grouping: Option<crate::model::Grouping>) -> Vec<InteractionSpec> {
    let mut v = vec![InteractionSpec::new(Family::AveragePairwise)];
    if let Some(g) = grouping {
        v.push(InteractionSpec::functional_group(g));
    }
    v.push(InteractionSpec::new(Family::AdditiveSpecies));
    v.push(InteractionSpec::new(Family::FullPairwise));
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct LackOfFit {
    pub spec: String,
    pub theta: f64,
    pub test: FTest,
    pub rss_model: f64,
    pub rss_pure_error: f64,
}

/// F test of `spec` at `theta` against one mean per distinct community.
pub fn lack_of_fit(design: &Design, response: &[f64], spec: &InteractionSpec, theta: f64) -> Result<LackOfFit> {
    let reduced = fit_at(design, response, spec, theta)?;
    let full = fit_at(design, response, &InteractionSpec::new(Family::CommunityFactor), 1.0)?;
    if full.n <= full.p {
        return Err(Error::NoReplication);
    }
    let test = fit::f_test(&reduced, &full)?;
    Ok(LackOfFit {
        spec: spec.label(),
        theta,
        test,
        rss_model: reduced.rss,
        rss_pure_error: full.rss,
    })
}
