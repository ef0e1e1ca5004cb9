//! Simulation from a known full-pairwise truth and the three Monte Carlo
//! studies: theta robustness across interaction structures, selection
//! efficacy of the three procedures, and the effect of reparameterization
//! on the theta/delta estimator correlation.
//!
//! A study is a grid of (theta, sigma) cells with `replicates` datasets
//! each. Dataset `(t, s, r)` draws its noise from the substream
//! `[t, s, r]` of the master seed and every enabled study is run on the
//! same response, so studies are directly comparable dataset by dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{self, Covariate, Design};
use crate::error::{Error, Result};
use crate::model::{pair_term, Family, Grouping, InteractionSpec, THETA_MIN};
use crate::profile::{self, CiBound, EstimateOptions, Profile};
use crate::rng;
use crate::select::{self, Criterion, Procedure, SelectOptions};
use crate::stats;

pub const DEFAULT_THETAS: [f64; 10] = [0.05, 0.19, 0.35, 0.48, 0.63, 0.77, 0.91, 1.0, 1.17, 1.33];
pub const DEFAULT_SIGMAS: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];
pub const DEFAULT_REPLICATES: usize = 200;

/// Effect of one structure covariate on the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructureEffect {
    /// Multiplies a numeric covariate.
    Slope(f64),
    /// Added for rows at the given level; unlisted levels add nothing.
    Levels(BTreeMap<String, f64>),
}

/// `y = sum beta_i p_i + sum_{i<j} delta_ij (p_i p_j)^theta + structures + e`,
/// `e ~ N(0, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthModel {
    pub identity_effects: Vec<f64>,
    /// Upper triangle by rows: entry `[i][k]` is `delta_{i, i+k+1}`.
    pub pairwise_effects: Vec<Vec<f64>>,
    pub theta_true: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub structure_effects: BTreeMap<String, StructureEffect>,
}

const TABLE_2A_BETA: [f64; 4] = [5.0, 7.0, 6.0, 3.0];
const TABLE_2A_DELTA: [&[f64]; 3] = [&[4.68, 13.74, 8.52], &[3.89, 16.22], &[10.32]];

const TABLE_2B_BETA: [f64; 9] = [7.0, 8.0, 6.0, 9.0, 5.0, 6.0, 6.0, 6.0, 7.0];
const TABLE_2B_DELTA: [&[f64]; 8] = [
    &[11.99, 7.64, 8.42, -2.6, 7.89, 8.32, 10.25, 4.06],
    &[4.18, -1.03, 10.08, 5.22, 13.04, 8.19, 13.42],
    &[5.13, 18.75, 12.41, 8.86, 19.61, 1.64],
    &[5.98, 9.67, 11.22, 18.76, 4.6],
    &[9.0, 9.85, 7.37, 12.59],
    &[14.59, 14.98, 9.58],
    &[-1.57, 8.21],
    &[8.8],
];

impl TruthModel {
    pub fn new(
        identity_effects: Vec<f64>,
        pairwise_effects: Vec<Vec<f64>>,
        theta_true: f64,
        sigma: f64,
    ) -> Result<TruthModel> {
        let t = TruthModel {
            identity_effects,
            pairwise_effects,
            theta_true,
            sigma,
            structure_effects: BTreeMap::new(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Build the triangle from `delta(i, j)` for `i < j`.
    pub fn from_fn(
        identity_effects: Vec<f64>,
        theta_true: f64,
        sigma: f64,
        delta: impl Fn(usize, usize) -> f64,
    ) -> Result<TruthModel> {
        let s = identity_effects.len();
        let tri = (0..s.saturating_sub(1))
            .map(|i| (i + 1..s).map(|j| delta(i, j)).collect())
            .collect();
        TruthModel::new(identity_effects, tri, theta_true, sigma)
    }

    /// Four-species coefficients used throughout the simulations.
    pub fn four_species(theta_true: f64, sigma: f64) -> TruthModel {
        let tri = TABLE_2A_DELTA.iter().map(|r| r.to_vec()).collect();
        TruthModel::new(TABLE_2A_BETA.to_vec(), tri, theta_true, sigma).expect("valid table")
    }

    /// Nine-species coefficients used throughout the simulations.
    pub fn nine_species(theta_true: f64, sigma: f64) -> TruthModel {
        let tri = TABLE_2B_DELTA.iter().map(|r| r.to_vec()).collect();
        TruthModel::new(TABLE_2B_BETA.to_vec(), tri, theta_true, sigma).expect("valid table")
    }

    /// Every pair shares `delta_av`.
    pub fn average_pairwise(identity: Vec<f64>, delta_av: f64, theta: f64, sigma: f64) -> Result<TruthModel> {
        TruthModel::from_fn(identity, theta, sigma, |_, _| delta_av)
    }

    /// `delta_ij = lambda_i + lambda_j`.
    pub fn additive(identity: Vec<f64>, lambda: &[f64], theta: f64, sigma: f64) -> Result<TruthModel> {
        if lambda.len() != identity.len() {
            return Err(Error::SpeciesCountMismatch {
                expected: identity.len(),
                found: lambda.len(),
            });
        }
        TruthModel::from_fn(identity, theta, sigma, |i, j| lambda[i] + lambda[j])
    }

    /// `delta_ij = omega[g(i)][g(j)]` with `omega` symmetric over the groups
    /// in first-appearance order.
    pub fn functional_group(
        identity: Vec<f64>,
        grouping: &Grouping,
        omega: &[Vec<f64>],
        theta: f64,
        sigma: f64,
    ) -> Result<TruthModel> {
        if grouping.species_count() != identity.len() {
            return Err(Error::GroupingMismatch {
                expected: identity.len(),
                found: grouping.species_count(),
            });
        }
        let k = grouping.n_groups();
        if omega.len() != k || omega.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!("omega must be {k} x {k}")));
        }
        TruthModel::from_fn(identity, theta, sigma, |i, j| {
            let (a, b) = (grouping.group_of(i), grouping.group_of(j));
            omega[a.min(b)][a.max(b)]
        })
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta_true = theta;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_structure(mut self, name: impl Into<String>, effect: StructureEffect) -> Self {
        self.structure_effects.insert(name.into(), effect);
        self
    }

    pub fn species_count(&self) -> usize {
        self.identity_effects.len()
    }

    pub fn delta(&self, i: usize, j: usize) -> f64 {
        let (i, j) = (i.min(j), i.max(j));
        self.pairwise_effects[i][j - i - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.identity_effects.len();
        if s < 2 {
            return Err(Error::SpeciesCountTooSmall(s));
        }
        let shape_ok = self.pairwise_effects.len() == s - 1
            && self
                .pairwise_effects
                .iter()
                .enumerate()
                .all(|(i, r)| r.len() == s - 1 - i);
        if !shape_ok {
            return Err(Error::DimensionMismatch(format!(
                "pairwise effects must be an upper triangle for {s} species"
            )));
        }
        if !(self.theta_true >= THETA_MIN) {
            return Err(Error::NonPositiveTheta {
                theta: self.theta_true,
                min: THETA_MIN,
            });
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "sigma must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Noise-free response of one community.
    pub fn mean_response(&self, community: &design::Community) -> f64 {
        let p = community.proportions();
        let s = p.len();
        let mut y: f64 = self.identity_effects.iter().zip(p).map(|(b, p)| b * p).sum();
        for i in 0..s {
            for j in i + 1..s {
                let term = pair_term(p[i], p[j], self.theta_true).expect("theta validated");
                y += self.delta(i, j) * term;
            }
        }
        for (name, effect) in &self.structure_effects {
            let value = community.structures().get(name);
            y += match (effect, value) {
                (StructureEffect::Slope(b), Some(Covariate::Numeric(x))) => b * x,
                (StructureEffect::Levels(m), Some(v)) => m.get(&v.to_string()).copied().unwrap_or(0.0),
                _ => 0.0,
            };
        }
        y
    }
}

/// One response per design row (community-major order). One normal deviate
/// is drawn per row even when `sigma = 0`.
pub fn simulate_response<R: Rng + ?Sized>(design: &Design, truth: &TruthModel, rng: &mut R) -> Result<Vec<f64>> {
    truth.validate()?;
    if truth.species_count() != design.species_count() {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} species, design has {}",
            truth.species_count(),
            design.species_count()
        )));
    }
    let mut y = Vec::with_capacity(design.n_rows());
    for (c, &r) in design.communities().iter().zip(design.replicates()) {
        let mu = truth.mean_response(c);
        for _ in 0..r {
            y.push(mu + truth.sigma * rng::normal_draw(rng));
        }
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Study configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Robustness,
    Selection,
    Reparam,
}

impl StudyKind {
    pub const ALL: [StudyKind; 3] = [StudyKind::Robustness, StudyKind::Selection, StudyKind::Reparam];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquiproportionalConfig {
    pub species: usize,
    pub levels: Vec<usize>,
    pub counts: Vec<usize>,
    #[serde(default = "one_rep")]
    pub reps: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn one_rep() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// `four` or `nine`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equiproportional: Option<EquiproportionalConfig>,
    /// Override the per-community replicate count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// Species grouping for the functional-group structure, e.g. `1,1,2,2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_effects: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairwise_effects: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub structure_effects: BTreeMap<String, StructureEffect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_thetas() -> Vec<f64> {
    DEFAULT_THETAS.to_vec()
}
fn default_sigmas() -> Vec<f64> {
    DEFAULT_SIGMAS.to_vec()
}
fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            thetas: default_thetas(),
            sigmas: default_sigmas(),
            replicates: DEFAULT_REPLICATES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProceduresConfig {
    #[serde(default = "all_studies")]
    pub studies: Vec<StudyKind>,
    #[serde(default = "default_candidate_names")]
    pub candidates: Vec<String>,
    #[serde(default = "all_procedures")]
    pub selection: Vec<Procedure>,
    #[serde(default = "default_reference")]
    pub reference: String,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Structure fitted under both parameterizations.
    #[serde(default = "default_reference")]
    pub reparam_family: String,
    #[serde(default = "default_bounds")]
    pub bounds: [f64; 2],
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn all_studies() -> Vec<StudyKind> {
    StudyKind::ALL.to_vec()
}
fn default_candidate_names() -> Vec<String> {
    ["average_pairwise", "functional_group", "additive_species", "full_pairwise"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn all_procedures() -> Vec<Procedure> {
    Procedure::ALL.to_vec()
}
fn default_reference() -> String {
    "average_pairwise".into()
}
fn default_alpha() -> f64 {
    profile::DEFAULT_ALPHA
}
fn default_bounds() -> [f64; 2] {
    [profile::DEFAULT_BOUNDS.0, profile::DEFAULT_BOUNDS.1]
}
fn default_tol() -> f64 {
    profile::DEFAULT_TOL
}

impl Default for ProceduresConfig {
    fn default() -> Self {
        ProceduresConfig {
            studies: all_studies(),
            candidates: default_candidate_names(),
            selection: all_procedures(),
            reference: default_reference(),
            criterion: Criterion::Aic,
            alpha: default_alpha(),
            reparam_family: default_reference(),
            bounds: default_bounds(),
            tol: default_tol(),
        }
    }
}

/// Study description, as read from TOML (or JSON).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub procedures: ProceduresConfig,
}

impl StudyConfig {
    pub fn builtin(name: &str) -> StudyConfig {
        StudyConfig {
            design: DesignConfig {
                builtin: Some(name.into()),
                ..DesignConfig::default()
            },
            ..StudyConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<StudyConfig> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<StudyConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(vec![e.to_string()]))?
        } else {
            StudyConfig::from_toml(&text)?
        };
        if let (Some(csv), Some(dir)) = (&cfg.design.csv, path.parent()) {
            if csv.is_relative() {
                cfg.design.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn parse_spec(name: &str, grouping: &Option<Grouping>) -> std::result::Result<InteractionSpec, String> {
    let family = Family::from_name(name).ok_or_else(|| format!("unknown family `{name}`"))?;
    if !family.uses_theta() {
        return Err(format!("family `{name}` has no theta to estimate"));
    }
    if family == Family::FunctionalGroup {
        let g = grouping
            .clone()
            .ok_or_else(|| "functional_group requires [design] grouping".to_string())?;
        return Ok(InteractionSpec::functional_group(g));
    }
    Ok(InteractionSpec::new(family))
}

/// A validated study ready to run.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub design: Design,
    /// Truth with `theta_true` and `sigma` set per cell.
    pub truth: TruthModel,
    pub candidates: Vec<InteractionSpec>,
    pub reparam_spec: InteractionSpec,
    pub select_options: SelectOptions,
    pub estimate_options: EstimateOptions,
}

impl Study {
    /// Validate `config`, reporting every problem found.
    pub fn new(config: StudyConfig) -> Result<Study> {
        let mut errs = Vec::new();
        let d = &config.design;
        let sources = [d.builtin.is_some(), d.csv.is_some(), d.equiproportional.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources != 1 {
            errs.push(format!(
                "[design] needs exactly one of builtin, csv, equiproportional (found {sources})"
            ));
        }
        let mut default_grouping = None;
        let design = match (&d.builtin, &d.csv, &d.equiproportional) {
            (Some(b), None, None) => match b.as_str() {
                "four" | "4" => {
                    default_grouping = Some("1,1,2,2");
                    Some(design::four_species_design())
                }
                "nine" | "9" => {
                    default_grouping = Some("1,1,1,1,1,2,2,3,3");
                    Some(design::nine_species_design())
                }
                other => {
                    errs.push(format!("[design] unknown builtin `{other}` (expected four or nine)"));
                    None
                }
            },
            (None, Some(path), None) => match design::load_design_csv(path) {
                Ok(d) => Some(d),
                Err(e) => {
                    errs.push(format!("[design] {e}"));
                    None
                }
            },
            (None, None, Some(e)) => {
                match design::equiproportional_design(e.species, &e.levels, &e.counts, &e.reps, e.seed) {
                    Ok(d) => Some(d),
                    Err(err) => {
                        errs.push(format!("[design] {err}"));
                        None
                    }
                }
            }
            _ => None,
        };
        let design = match (design, d.replicates) {
            (Some(des), Some(0)) => {
                errs.push("[design] replicates must be at least 1".into());
                Some(des)
            }
            (Some(des), Some(r)) => Some(des.with_replicates(r)?),
            (des, _) => des,
        };
        let species = design.as_ref().map(Design::species_count);

        let grouping = d.grouping.as_deref().or(default_grouping).map(Grouping::parse);
        if let (Some(g), Some(s)) = (&grouping, species) {
            if g.species_count() != s {
                errs.push(format!(
                    "[design] grouping has {} entries for {s} species",
                    g.species_count()
                ));
            }
        }

        let t = &config.truth;
        let truth = match (species, &t.identity_effects, &t.pairwise_effects) {
            (Some(s), Some(beta), Some(delta)) => {
                match TruthModel::new(beta.clone(), delta.clone(), 1.0, 0.0) {
                    Ok(m) if m.species_count() == s => Some(m),
                    Ok(m) => {
                        errs.push(format!(
                            "[truth] has {} species, design has {s}",
                            m.species_count()
                        ));
                        None
                    }
                    Err(e) => {
                        errs.push(format!("[truth] {e}"));
                        None
                    }
                }
            }
            (Some(4), None, None) => Some(TruthModel::four_species(1.0, 0.0)),
            (Some(9), None, None) => Some(TruthModel::nine_species(1.0, 0.0)),
            (Some(s), None, None) => {
                errs.push(format!(
                    "[truth] identity_effects and pairwise_effects are required for {s} species"
                ));
                None
            }
            (Some(_), _, _) => {
                errs.push("[truth] identity_effects and pairwise_effects must be given together".into());
                None
            }
            (None, _, _) => None,
        }
        .map(|m| TruthModel {
            structure_effects: t.structure_effects.clone(),
            ..m
        });

        let g = &config.grid;
        if g.thetas.is_empty() {
            errs.push("[grid] thetas is empty".into());
        }
        for &th in &g.thetas {
            if !(th >= THETA_MIN && th.is_finite()) {
                errs.push(format!("[grid] theta {th} is below {THETA_MIN} or not finite"));
            }
        }
        if g.sigmas.is_empty() {
            errs.push("[grid] sigmas is empty".into());
        }
        for &s in &g.sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                errs.push(format!("[grid] sigma {s} must be finite and non-negative"));
            }
        }
        if g.replicates < 1 {
            errs.push("[grid] replicates must be at least 1".into());
        }

        let p = &config.procedures;
        if p.studies.is_empty() {
            errs.push("[procedures] studies is empty".into());
        }
        if p.candidates.is_empty() {
            errs.push("[procedures] candidates is empty".into());
        }
        let mut candidates = Vec::new();
        for name in &p.candidates {
            match parse_spec(name, &grouping) {
                Ok(s) => candidates.push(s),
                Err(e) => errs.push(format!("[procedures] candidates: {e}")),
            }
        }
        if p.studies.contains(&StudyKind::Selection) && p.selection.is_empty() {
            errs.push("[procedures] selection is empty but the selection study is enabled".into());
        }
        let reference = parse_spec(&p.reference, &grouping)
            .map_err(|e| errs.push(format!("[procedures] reference: {e}")))
            .ok();
        let reparam_spec = parse_spec(&p.reparam_family, &grouping)
            .map_err(|e| errs.push(format!("[procedures] reparam_family: {e}")))
            .ok();
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            errs.push(format!("[procedures] alpha {} must lie in (0, 1)", p.alpha));
        }
        let [lo, hi] = p.bounds;
        if !(lo >= THETA_MIN && hi > lo && hi.is_finite()) {
            errs.push(format!("[procedures] bounds [{lo}, {hi}] are invalid"));
        }
        if !(p.tol > 0.0 && p.tol.is_finite()) {
            errs.push(format!("[procedures] tol {} must be positive", p.tol));
        }

        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let estimate_options = EstimateOptions {
            bounds: (lo, hi),
            tol: p.tol,
            alpha: p.alpha,
            compute_ci: true,
        };
        let select_options = SelectOptions {
            criterion: p.criterion,
            alpha: p.alpha,
            reference: reference.expect("validated"),
            estimate: estimate_options.without_ci(),
        };
        Ok(Study {
            design: design.expect("validated"),
            truth: truth.expect("validated"),
            candidates,
            reparam_spec: reparam_spec.expect("validated"),
            select_options,
            estimate_options,
            config,
        })
    }

    fn runs(&self, kind: StudyKind) -> bool {
        self.config.procedures.studies.contains(&kind)
    }

    pub fn with_studies(&self, kinds: &[StudyKind]) -> Study {
        let mut s = self.clone();
        s.config.procedures.studies = kinds.to_vec();
        s
    }

    pub fn n_datasets(&self) -> usize {
        let g = &self.config.grid;
        g.thetas.len() * g.sigmas.len() * g.replicates
    }

    /// Response of dataset `(t, s, r)`, regenerable in isolation.
    pub fn dataset(&self, t: usize, s: usize, r: usize) -> Result<Vec<f64>> {
        let g = &self.config.grid;
        let truth = self.truth.clone().with_theta(g.thetas[t]).with_sigma(g.sigmas[s]);
        let mut rng = rng::substream(g.seed, &[t as u64, s as u64, r as u64]);
        simulate_response(&self.design, &truth, &mut rng)
    }
}

// ---------------------------------------------------------------------------
// Per-dataset records

#[derive(Debug, Clone, Serialize)]
pub struct SpecEstimate {
    pub label: String,
    pub theta_hat: Option<f64>,
    pub lower: Option<CiBound>,
    pub upper: Option<CiBound>,
    pub error: Option<String>,
}

impl SpecEstimate {
    pub fn converged(&self) -> bool {
        matches!((self.lower, self.upper), (Some(CiBound::Bound(_)), Some(CiBound::Bound(_))))
    }

    pub fn covers(&self, theta: f64) -> Option<bool> {
        match (self.lower, self.upper) {
            (Some(CiBound::Bound(lo)), Some(CiBound::Bound(hi))) => Some(lo <= theta && theta <= hi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionRecord {
    pub procedure: Procedure,
    pub chosen: Option<String>,
    pub theta_final: Option<f64>,
    pub fell_back: bool,
    /// Wall-clock seconds; excluded from the deterministic outputs.
    pub elapsed: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReparamRecord {
    pub theta_old: Option<f64>,
    pub theta_new: Option<f64>,
    pub delta_old: Option<f64>,
    pub delta_new: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetRecord {
    pub theta_index: usize,
    pub sigma_index: usize,
    pub replicate: usize,
    pub theta_true: f64,
    pub sigma: f64,
    pub estimates: Vec<SpecEstimate>,
    pub selections: Vec<SelectionRecord>,
    pub reparam: Option<ReparamRecord>,
}

impl DatasetRecord {
    /// Max minus min of theta-hat across structures, when all succeeded.
    pub fn theta_range(&self) -> Option<f64> {
        if self.estimates.is_empty() {
            return None;
        }
        let vals: Option<Vec<f64>> = self.estimates.iter().map(|e| e.theta_hat).collect();
        let vals = vals?;
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    pub fn selection(&self, p: Procedure) -> Option<&SelectionRecord> {
        self.selections.iter().find(|s| s.procedure == p)
    }
}

fn first_interaction(fit: &crate::fit::FitResult, species: usize) -> Option<f64> {
    fit.coefficients.get(species).copied().flatten()
}

fn run_dataset(study: &Study, t: usize, s: usize, r: usize) -> DatasetRecord {
    let g = &study.config.grid;
    let theta_true = g.thetas[t];
    let mut rec = DatasetRecord {
        theta_index: t,
        sigma_index: s,
        replicate: r,
        theta_true,
        sigma: g.sigmas[s],
        estimates: Vec::new(),
        selections: Vec::new(),
        reparam: None,
    };
    let y = match study.dataset(t, s, r) {
        Ok(y) => y,
        Err(e) => {
            let msg = e.to_string();
            rec.estimates = study
                .candidates
                .iter()
                .map(|c| SpecEstimate {
                    label: c.label(),
                    theta_hat: None,
                    lower: None,
                    upper: None,
                    error: Some(msg.clone()),
                })
                .collect();
            return rec;
        }
    };
    let design = &study.design;

    if study.runs(StudyKind::Robustness) {
        for spec in &study.candidates {
            let est = profile::estimate_theta(design, &y, spec, &study.estimate_options);
            rec.estimates.push(match est {
                Ok(e) => SpecEstimate {
                    label: spec.label(),
                    theta_hat: Some(e.theta_hat),
                    lower: Some(e.ci.lower),
                    upper: Some(e.ci.upper),
                    error: None,
                },
                Err(e) => SpecEstimate {
                    label: spec.label(),
                    theta_hat: None,
                    lower: None,
                    upper: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    if study.runs(StudyKind::Selection) {
        for &p in &study.config.procedures.selection {
            let res = select::select(p, design, &y, &study.candidates, &study.select_options);
            rec.selections.push(match res {
                Ok(sel) => SelectionRecord {
                    procedure: p,
                    chosen: Some(sel.chosen_label),
                    theta_final: Some(sel.theta_final),
                    fell_back: sel.fell_back,
                    elapsed: sel.elapsed,
                    error: None,
                },
                Err(e) => SelectionRecord {
                    procedure: p,
                    chosen: None,
                    theta_final: None,
                    fell_back: false,
                    elapsed: 0.0,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    if study.runs(StudyKind::Reparam) {
        let opts = study.estimate_options.without_ci();
        let species = design.species_count();
        let one = |reparam: bool| {
            let spec = study.reparam_spec.clone().reparameterized(reparam);
            Profile::new(design, &y, &spec)
                .and_then(|p| profile::estimate_on_profile(&p, &opts))
                .ok()
                .map(|e| (e.theta_hat, first_interaction(&e.fit, species)))
        };
        let old = one(false);
        let new = one(true);
        rec.reparam = Some(ReparamRecord {
            theta_old: old.map(|o| o.0),
            theta_new: new.map(|n| n.0),
            delta_old: old.and_then(|o| o.1),
            delta_new: new.and_then(|n| n.1),
        });
    }
    rec
}

// ---------------------------------------------------------------------------
// Aggregation

/// One row of the long-format summary. `sigma = None` marks rows pooled
/// over all sigma values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub theta_true: f64,
    pub sigma: Option<f64>,
    pub key: String,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
}

impl StudySummary {
    pub fn get(&self, theta: f64, sigma: Option<f64>, key: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.theta_true == theta && r.sigma == sigma && r.key == key && r.metric == metric)
            .and_then(|r| r.value)
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub records: Vec<DatasetRecord>,
    pub summary: StudySummary,
}

impl StudyResult {
    pub fn cell(&self, theta_index: usize, sigma_index: usize) -> impl Iterator<Item = &DatasetRecord> + '_ {
        self.records
            .iter()
            .filter(move |r| r.theta_index == theta_index && r.sigma_index == sigma_index)
    }
}

fn push(rows: &mut Vec<SummaryRow>, theta: f64, sigma: Option<f64>, key: &str, metric: &str, value: Option<f64>) {
    rows.push(SummaryRow {
        theta_true: theta,
        sigma,
        key: key.to_string(),
        metric: metric.to_string(),
        value,
    });
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn summarize_estimates(rows: &mut Vec<SummaryRow>, study: &Study, theta: f64, sigma: f64, cell: &[&DatasetRecord]) {
    for (k, spec) in study.candidates.iter().enumerate() {
        let label = spec.label();
        let ests: Vec<&SpecEstimate> = cell.iter().filter_map(|r| r.estimates.get(k)).collect();
        let thetas: Vec<f64> = ests.iter().filter_map(|e| e.theta_hat).collect();
        let converged: Vec<&&SpecEstimate> = ests.iter().filter(|e| e.converged()).collect();
        let covered = converged.iter().filter(|e| e.covers(theta) == Some(true)).count();
        let sd = stats::sample_sd(&thetas);
        let iqr = match (stats::quantile(&thetas, 0.75), stats::quantile(&thetas, 0.25)) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        let scaled = match (sd, iqr) {
            (Some(s), Some(i)) if i > 0.0 => Some(s / i),
            _ => None,
        };
        let s = Some(sigma);
        push(rows, theta, s, &label, "n_datasets", Some(ests.len() as f64));
        push(rows, theta, s, &label, "n_failed", Some((ests.len() - thetas.len()) as f64));
        push(rows, theta, s, &label, "mean_theta_hat", stats::mean(&thetas));
        push(rows, theta, s, &label, "sd_theta_hat", sd);
        push(rows, theta, s, &label, "iqr_theta_hat", iqr);
        push(rows, theta, s, &label, "scaled_sd_theta_hat", scaled);
        push(rows, theta, s, &label, "coverage", ratio(covered, converged.len()));
        push(rows, theta, s, &label, "convergence_rate", ratio(converged.len(), thetas.len()));
    }
    let ranges: Vec<f64> = cell.iter().filter_map(|r| r.theta_range()).collect();
    push(rows, theta, Some(sigma), "all_structures", "theta_range_median", stats::median(&ranges));
    push(rows, theta, Some(sigma), "all_structures", "theta_range_p95", stats::quantile(&ranges, 0.95));
}

fn summarize_selection(rows: &mut Vec<SummaryRow>, study: &Study, theta: f64, sigma: f64, cell: &[&DatasetRecord]) {
    let s = Some(sigma);
    for &p in &study.config.procedures.selection {
        let recs: Vec<&SelectionRecord> = cell.iter().filter_map(|r| r.selection(p)).collect();
        let n = recs.len();
        let key = format!("procedure_{p}");
        for spec in &study.candidates {
            let label = spec.label();
            let k = recs.iter().filter(|r| r.chosen.as_deref() == Some(label.as_str())).count();
            push(rows, theta, s, &key, &format!("selected_{label}"), ratio(k, n));
        }
        let failed = recs.iter().filter(|r| r.chosen.is_none()).count();
        push(rows, theta, s, &key, "selected_none", ratio(failed, n));
        let fell_back = recs.iter().filter(|r| r.fell_back).count();
        push(rows, theta, s, &key, "fell_back_rate", ratio(fell_back, n));
        let finals: Vec<f64> = recs.iter().filter_map(|r| r.theta_final).collect();
        let kept = finals.iter().filter(|&&t| t != 1.0).count();
        push(rows, theta, s, &key, "theta_retained_rate", ratio(kept, finals.len()));
    }
    let procs = &study.config.procedures.selection;
    if procs.contains(&Procedure::B) && procs.contains(&Procedure::C) {
        let pairs: Vec<bool> = cell
            .iter()
            .filter_map(|r| {
                let b = r.selection(Procedure::B)?.chosen.as_ref()?;
                let c = r.selection(Procedure::C)?.chosen.as_ref()?;
                Some(b == c)
            })
            .collect();
        let agree = pairs.iter().filter(|&&a| a).count();
        push(rows, theta, s, "procedure_b_vs_c", "agreement", ratio(agree, pairs.len()));
    }
}

fn summarize_reparam(rows: &mut Vec<SummaryRow>, study: &Study, theta: f64, sigma: Option<f64>, cell: &[&DatasetRecord]) {
    let key = study.reparam_spec.label();
    let recs: Vec<&ReparamRecord> = cell.iter().filter_map(|r| r.reparam.as_ref()).collect();
    let old: Vec<(f64, f64)> = recs
        .iter()
        .filter_map(|r| Some((r.theta_old?, r.delta_old?)))
        .collect();
    let new: Vec<(f64, f64)> = recs
        .iter()
        .filter_map(|r| Some((r.theta_new?, r.delta_new?)))
        .collect();
    let corr = |v: &[(f64, f64)]| {
        let (a, b): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
        stats::pearson(&a, &b)
    };
    let diffs: Vec<f64> = recs
        .iter()
        .filter_map(|r| Some((r.theta_old? - r.theta_new?).abs()))
        .collect();
    let max_diff = diffs.iter().copied().reduce(f64::max);
    push(rows, theta, sigma, &key, "n_reparam", Some(diffs.len() as f64));
    push(rows, theta, sigma, &key, "corr_theta_delta_old", corr(&old));
    push(rows, theta, sigma, &key, "corr_theta_delta_new", corr(&new));
    push(rows, theta, sigma, &key, "max_abs_theta_diff", max_diff);
}

fn summarize(study: &Study, records: &[DatasetRecord]) -> StudySummary {
    let g = &study.config.grid;
    let mut rows = Vec::new();
    for (t, &theta) in g.thetas.iter().enumerate() {
        for (s, &sigma) in g.sigmas.iter().enumerate() {
            let cell: Vec<&DatasetRecord> = records
                .iter()
                .filter(|r| r.theta_index == t && r.sigma_index == s)
                .collect();
            if study.runs(StudyKind::Robustness) {
                summarize_estimates(&mut rows, study, theta, sigma, &cell);
            }
            if study.runs(StudyKind::Selection) {
                summarize_selection(&mut rows, study, theta, sigma, &cell);
            }
            if study.runs(StudyKind::Reparam) {
                summarize_reparam(&mut rows, study, theta, Some(sigma), &cell);
            }
        }
        if study.runs(StudyKind::Reparam) {
            let pooled: Vec<&DatasetRecord> = records.iter().filter(|r| r.theta_index == t).collect();
            summarize_reparam(&mut rows, study, theta, None, &pooled);
        }
    }
    StudySummary { rows }
}

/// Run every enabled study over the whole grid. Datasets are processed in
/// parallel on the current rayon pool; results are in grid order.
pub fn run_study(study: &Study) -> StudyResult {
    let g = &study.config.grid;
    let work: Vec<(usize, usize, usize)> = (0..g.thetas.len())
        .flat_map(|t| (0..g.sigmas.len()).flat_map(move |s| (0..g.replicates).map(move |r| (t, s, r))))
        .collect();
    let records: Vec<DatasetRecord> = work
        .par_iter()
        .map(|&(t, s, r)| run_dataset(study, t, s, r))
        .collect();
    let summary = summarize(study, &records);
    StudyResult { records, summary }
}

pub fn run_robustness_study(study: &Study) -> StudyResult {
    run_study(&study.with_studies(&[StudyKind::Robustness]))
}

pub fn run_selection_study(study: &Study) -> StudyResult {
    run_study(&study.with_studies(&[StudyKind::Selection]))
}

pub fn run_reparam_study(study: &Study) -> StudyResult {
    run_study(&study.with_studies(&[StudyKind::Reparam]))
}

// ---------------------------------------------------------------------------
// Output

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        Some(x) if x > 0.0 => "inf".into(),
        Some(_) => "-inf".into(),
        None => "NA".into(),
    }
}

fn fmt_sigma(s: Option<f64>) -> String {
    s.map_or_else(|| "pooled".into(), |v| v.to_string())
}

fn fmt_bound(b: Option<CiBound>) -> String {
    match b {
        Some(CiBound::Bound(v)) => v.to_string(),
        Some(CiBound::NonConvergent) => "non_convergent".into(),
        None => "NA".into(),
    }
}

/// Provenance lines written at the top of every output file.
pub fn header_lines(study: &Study) -> Vec<String> {
    vec![
        format!("tool: gdi {}", env!("CARGO_PKG_VERSION")),
        format!("config_hash: {}", study.config.hash()),
        format!("master_seed: {}", study.config.grid.seed),
        format!("rng: {}", rng::ALGORITHM),
    ]
}

fn write_comments<W: Write>(out: &mut W, lines: &[String], path: &Path) -> Result<()> {
    for l in lines {
        writeln!(out, "# {l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(study: &Study, summary: &StudySummary, mut out: W) -> Result<()> {
    let path = Path::new("<summary>");
    write_comments(&mut out, &header_lines(study), path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_true", "sigma", "spec_or_procedure", "metric", "value"])?;
    for r in &summary.rows {
        w.write_record([
            r.theta_true.to_string(),
            fmt_sigma(r.sigma),
            r.key.clone(),
            r.metric.clone(),
            fmt_opt(r.value),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-dataset results in long format
/// (`theta_true,sigma,replicate,spec_or_procedure,field,value`).
pub fn write_datasets_csv<W: Write>(study: &Study, records: &[DatasetRecord], mut out: W) -> Result<()> {
    let path = Path::new("<datasets>");
    write_comments(&mut out, &header_lines(study), path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_true", "sigma", "replicate", "spec_or_procedure", "field", "value"])?;
    for r in records {
        let mut row = |key: &str, field: &str, value: String| {
            w.write_record([
                r.theta_true.to_string(),
                r.sigma.to_string(),
                r.replicate.to_string(),
                key.to_string(),
                field.to_string(),
                value,
            ])
        };
        for e in &r.estimates {
            row(&e.label, "theta_hat", fmt_opt(e.theta_hat))?;
            row(&e.label, "ci_lower", fmt_bound(e.lower))?;
            row(&e.label, "ci_upper", fmt_bound(e.upper))?;
            if let Some(err) = &e.error {
                row(&e.label, "error", err.clone())?;
            }
        }
        for s in &r.selections {
            let key = format!("procedure_{}", s.procedure);
            row(&key, "chosen", s.chosen.clone().unwrap_or_else(|| "NA".into()))?;
            row(&key, "theta_final", fmt_opt(s.theta_final))?;
            if s.fell_back {
                row(&key, "fell_back", "true".into())?;
            }
            if let Some(err) = &s.error {
                row(&key, "error", err.clone())?;
            }
        }
        if let Some(p) = &r.reparam {
            let key = study.reparam_spec.label();
            row(&key, "theta_old", fmt_opt(p.theta_old))?;
            row(&key, "theta_new", fmt_opt(p.theta_new))?;
            row(&key, "delta_old", fmt_opt(p.delta_old))?;
            row(&key, "delta_new", fmt_opt(p.delta_new))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Wall-clock selection times per cell and procedure. Kept apart from the
/// summary because timings differ between runs.
pub fn write_timings_csv<W: Write>(study: &Study, records: &[DatasetRecord], mut out: W) -> Result<()> {
    let path = Path::new("<timings>");
    write_comments(&mut out, &header_lines(study), path)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_true", "sigma", "spec_or_procedure", "metric", "value"])?;
    let g = &study.config.grid;
    let mut emit = |theta: String, sigma: String, subset: Vec<&DatasetRecord>| -> Result<()> {
        for &p in &study.config.procedures.selection {
            let times: Vec<f64> = subset
                .iter()
                .filter_map(|r| r.selection(p))
                .filter(|s| s.error.is_none())
                .map(|s| s.elapsed)
                .collect();
            let key = format!("procedure_{p}");
            for (metric, v) in [
                ("median_seconds", stats::median(&times)),
                ("mean_seconds", stats::mean(&times)),
                ("p95_seconds", stats::quantile(&times, 0.95)),
            ] {
                w.write_record([theta.clone(), sigma.clone(), key.clone(), metric.into(), fmt_opt(v)])?;
            }
        }
        Ok(())
    };
    for (t, &theta) in g.thetas.iter().enumerate() {
        for (s, &sigma) in g.sigmas.iter().enumerate() {
            let cell = records.iter().filter(|r| r.theta_index == t && r.sigma_index == s).collect();
            emit(theta.to_string(), sigma.to_string(), cell)?;
        }
    }
    emit("all".into(), "pooled".into(), records.iter().collect())?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    master_seed: u64,
    rng: &'static str,
    species: usize,
    communities: usize,
    rows: usize,
    datasets: usize,
    candidates: Vec<String>,
    config: &'a StudyConfig,
}

pub fn metadata_json(study: &Study) -> String {
    let m = Metadata {
        tool: "gdi",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: study.config.hash(),
        master_seed: study.config.grid.seed,
        rng: rng::ALGORITHM,
        species: study.design.species_count(),
        communities: study.design.communities().len(),
        rows: study.design.n_rows(),
        datasets: study.n_datasets(),
        candidates: study.candidates.iter().map(InteractionSpec::label).collect(),
        config: &study.config,
    };
    let mut s = serde_json::to_string_pretty(&m).expect("metadata serializes");
    s.push('\n');
    s
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const DATASETS_FILE: &str = "datasets.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const TIMINGS_FILE: &str = "timings.csv";

/// Write summary, per-dataset results, metadata and timings into `dir`.
pub fn write_outputs(study: &Study, result: &StudyResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| -> Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
        let p = dir.join(name);
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, std::io::BufWriter::new(f)))
    };
    let (p1, f) = open(SUMMARY_FILE)?;
    write_summary_csv(study, &result.summary, f)?;
    let (p2, f) = open(DATASETS_FILE)?;
    write_datasets_csv(study, &result.records, f)?;
    let (p3, mut f) = open(METADATA_FILE)?;
    f.write_all(metadata_json(study).as_bytes()).map_err(|e| Error::io(&p3, e))?;
    f.flush().map_err(|e| Error::io(&p3, e))?;
    let mut paths = vec![p1, p2, p3];
    if study.runs(StudyKind::Selection) {
        let (p4, f) = open(TIMINGS_FILE)?;
        write_timings_csv(study, &result.records, f)?;
        paths.push(p4);
    }
    Ok(paths)
}

/// Human-readable digest of the robustness rows.
pub fn describe(summary: &StudySummary) -> String {
    let mut s = String::new();
    for r in summary.rows.iter().filter(|r| r.metric == "mean_theta_hat") {
        let sd = summary.get(r.theta_true, r.sigma, &r.key, "sd_theta_hat");
        let cov = summary.get(r.theta_true, r.sigma, &r.key, "coverage");
        let _ = writeln!(
            s,
            "theta={:<5} sigma={:<4} {:<20} mean={} sd={} coverage={}",
            r.theta_true,
            fmt_sigma(r.sigma),
            r.key,
            fmt_opt(r.value.map(|v| (v * 1e4).round() / 1e4)),
            fmt_opt(sd.map(|v| (v * 1e4).round() / 1e4)),
            fmt_opt(cov),
        );
    }
    s
}
