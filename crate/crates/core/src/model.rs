//! Interaction structures and design-matrix construction.
//!
//! Every interaction column is a non-negative combination of the pairwise
//! terms `(p_i p_j)^theta`; a [`Layout`] records, for each species pair,
//! which columns it feeds. Identity columns are the raw proportions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::design::{CommunityKey, Covariate, Design};
use crate::error::{Error, Result};
use crate::linalg;

/// Smallest admissible theta.
pub const THETA_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Null,
    Identity,
    AveragePairwise,
    FunctionalGroup,
    AdditiveSpecies,
    FullPairwise,
    CommunityFactor,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Null,
        Family::Identity,
        Family::AveragePairwise,
        Family::FunctionalGroup,
        Family::AdditiveSpecies,
        Family::FullPairwise,
        Family::CommunityFactor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Null => "null",
            Family::Identity => "identity",
            Family::AveragePairwise => "average_pairwise",
            Family::FunctionalGroup => "functional_group",
            Family::AdditiveSpecies => "additive_species",
            Family::FullPairwise => "full_pairwise",
            Family::CommunityFactor => "community_factor",
        }
    }

    pub fn from_name(s: &str) -> Option<Family> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match s.as_str() {
            "avg" | "av" | "ap" => "average_pairwise",
            "fg" => "functional_group",
            "add" | "additive" | "as" => "additive_species",
            "full" | "fp" => "full_pairwise",
            "cf" | "community" => "community_factor",
            other => other,
        };
        Family::ALL.into_iter().find(|f| f.name() == alias)
    }

    /// Whether the family has theta-dependent interaction columns.
    pub fn uses_theta(self) -> bool {
        matches!(
            self,
            Family::AveragePairwise
                | Family::FunctionalGroup
                | Family::AdditiveSpecies
                | Family::FullPairwise
        )
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Partition of species into functional groups, by label.
///
/// Groups are numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Grouping {
    labels: Vec<String>,
    groups: Vec<String>,
    member_of: Vec<usize>,
}

impl From<Vec<String>> for Grouping {
    fn from(labels: Vec<String>) -> Self {
        let mut groups: Vec<String> = Vec::new();
        let member_of = labels
            .iter()
            .map(|l| match groups.iter().position(|g| g == l) {
                Some(i) => i,
                None => {
                    groups.push(l.clone());
                    groups.len() - 1
                }
            })
            .collect();
        Grouping {
            labels,
            groups,
            member_of,
        }
    }
}

impl From<Grouping> for Vec<String> {
    fn from(g: Grouping) -> Self {
        g.labels
    }
}

impl Grouping {
    /// One label per species, e.g. `["1", "1", "2", "2"]`.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Grouping::from(labels.into_iter().map(Into::into).collect::<Vec<_>>())
    }

    /// Parse `1,1,2,2` style syntax.
    pub fn parse(s: &str) -> Grouping {
        Grouping::new(s.split(',').map(|t| t.trim().to_string()))
    }

    pub fn species_count(&self) -> usize {
        self.labels.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, species: usize) -> usize {
        self.member_of[species]
    }

    pub fn group_labels(&self) -> &[String] {
        &self.groups
    }

    /// True when every group of `self` lies inside a single group of `coarser`.
    pub fn refines(&self, coarser: &Grouping) -> bool {
        if self.species_count() != coarser.species_count() {
            return false;
        }
        let mut image: HashMap<usize, usize> = HashMap::new();
        (0..self.species_count()).all(|i| {
            let target = coarser.group_of(i);
            *image.entry(self.group_of(i)).or_insert(target) == target
        })
    }
}

/// Which interaction structure to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Grouping>,
    #[serde(default)]
    pub reparameterized: bool,
}

impl InteractionSpec {
    pub fn new(family: Family) -> Self {
        InteractionSpec {
            family,
            grouping: None,
            reparameterized: false,
        }
    }

    pub fn functional_group(grouping: Grouping) -> Self {
        InteractionSpec {
            family: Family::FunctionalGroup,
            grouping: Some(grouping),
            reparameterized: false,
        }
    }

    pub fn reparameterized(mut self, on: bool) -> Self {
        self.reparameterized = on;
        self
    }

    pub fn with_grouping(mut self, grouping: Option<Grouping>) -> Self {
        self.grouping = grouping;
        self
    }

    /// Short label, e.g. `functional_group` or `average_pairwise(reparam)`.
    pub fn label(&self) -> String {
        if self.reparameterized {
            format!("{}(reparam)", self.family)
        } else {
            self.family.to_string()
        }
    }

    pub fn validate(&self, species: usize) -> Result<()> {
        if self.family == Family::FunctionalGroup {
            let g = self.grouping.as_ref().ok_or(Error::MissingGrouping)?;
            if g.species_count() != species {
                return Err(Error::GroupingMismatch {
                    expected: species,
                    found: g.species_count(),
                });
            }
        }
        Ok(())
    }
}

/// `(p_i p_j)^theta`, zero when either proportion is zero.
pub fn pair_term(p_i: f64, p_j: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(pair_unchecked(p_i, p_j, theta))
}

#[inline]
fn pair_unchecked(p_i: f64, p_j: f64, theta: f64) -> f64 {
    if p_i == 0.0 || p_j == 0.0 {
        0.0
    } else if theta == 1.0 {
        p_i * p_j
    } else {
        (p_i * p_j).powf(theta)
    }
}

pub fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= THETA_MIN) || !theta.is_finite() {
        return Err(Error::NonPositiveTheta {
            theta,
            min: THETA_MIN,
        });
    }
    Ok(())
}

/// `2 s^(2 theta) / (s (s - 1))`: makes the centroid's summed pair term
/// independent of theta.
pub fn scaling_factor(species: usize, theta: f64) -> Result<f64> {
    if species < 2 {
        return Err(Error::SpeciesCountTooSmall(species));
    }
    check_theta(theta)?;
    let s = species as f64;
    Ok(2.0 * s.powf(2.0 * theta) / (s * (s - 1.0)))
}

/// Interaction column layout for one (species count, spec) pair.
#[derive(Debug, Clone)]
pub struct Layout {
    species: usize,
    names: Vec<String>,
    /// For each pair `(i, j)` with `i < j`, the columns it adds into.
    pair_targets: Vec<(usize, usize, Vec<usize>)>,
    reparameterized: bool,
}

impl Layout {
    pub fn new(species: usize, spec: &InteractionSpec) -> Result<Layout> {
        spec.validate(species)?;
        let pairs = || (0..species).flat_map(move |i| (i + 1..species).map(move |j| (i, j)));
        let (names, pair_targets): (Vec<String>, Vec<(usize, usize, Vec<usize>)>) = match spec.family {
            Family::Null | Family::Identity | Family::CommunityFactor => (vec![], vec![]),
            Family::AveragePairwise => (
                vec!["delta_AV".into()],
                pairs().map(|(i, j)| (i, j, vec![0])).collect(),
            ),
            Family::FullPairwise => (
                pairs().map(|(i, j)| format!("delta_{}_{}", i + 1, j + 1)).collect(),
                pairs().enumerate().map(|(c, (i, j))| (i, j, vec![c])).collect(),
            ),
            Family::AdditiveSpecies => (
                (1..=species).map(|i| format!("lambda_{i}")).collect(),
                pairs().map(|(i, j)| (i, j, vec![i, j])).collect(),
            ),
            Family::FunctionalGroup => {
                let g = spec.grouping.as_ref().expect("validated");
                let t = g.n_groups();
                let labels = g.group_labels();
                let mut names: Vec<String> =
                    labels.iter().map(|l| format!("omega_{l}_{l}")).collect();
                let mut between = HashMap::new();
                for q in 0..t {
                    for r in q + 1..t {
                        between.insert((q, r), names.len());
                        names.push(format!("omega_{}_{}", labels[q], labels[r]));
                    }
                }
                let targets = pairs()
                    .map(|(i, j)| {
                        let (q, r) = (g.group_of(i), g.group_of(j));
                        let col = if q == r {
                            q
                        } else {
                            between[&(q.min(r), q.max(r))]
                        };
                        (i, j, vec![col])
                    })
                    .collect();
                (names, targets)
            }
        };
        Ok(Layout {
            species,
            names,
            pair_targets,
            reparameterized: spec.reparameterized,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Interaction values for one community, written into `out`.
    pub fn fill(&self, proportions: &[f64], theta: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, cols) in &self.pair_targets {
            let t = pair_unchecked(proportions[*i], proportions[*j], theta);
            if t != 0.0 {
                for &c in cols {
                    out[c] += t;
                }
            }
        }
        if self.reparameterized && self.species >= 2 && !self.names.is_empty() {
            let s = self.species as f64;
            let f = 2.0 * s.powf(2.0 * theta) / (s * (s - 1.0));
            out.iter_mut().for_each(|v| *v *= f);
        }
    }
}

/// Named interaction values for a single community.
///
/// Null, Identity and CommunityFactor give an empty list; the community
/// indicators of the latter only exist relative to a design and are built by
/// [`design_matrix`].
pub fn interaction_columns(
    community: &crate::design::Community,
    spec: &InteractionSpec,
    theta: f64,
) -> Result<Vec<(String, f64)>> {
    let layout = Layout::new(community.species_count(), spec)?;
    if layout.width() == 0 {
        return Ok(vec![]);
    }
    check_theta(theta)?;
    if spec.reparameterized {
        scaling_factor(community.species_count(), theta)?;
    }
    let mut vals = vec![0.0; layout.width()];
    layout.fill(community.proportions(), theta, &mut vals);
    Ok(layout.names.iter().cloned().zip(vals).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Intercept,
    Identity,
    Interaction,
    Community,
    Structure,
}

/// Dense column-major model matrix.
#[derive(Debug, Clone)]
pub struct ModelMatrix {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub n: usize,
    pub data: Vec<f64>,
    pub theta_used: f64,
    /// Set by [`design_matrix`] when some columns are exactly collinear.
    pub rank_warning: bool,
}

impl ModelMatrix {
    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n + row]
    }
}

enum StructureEncoding {
    Numeric(String),
    Levels(String, Vec<String>),
}

/// Precomputed, theta-independent parts of a design matrix; rebuilding for a
/// new theta only refills the interaction block.
#[derive(Debug, Clone)]
pub struct MatrixBuilder {
    family: Family,
    layout: Layout,
    n: usize,
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    /// Community index of each row.
    row_community: Vec<usize>,
    proportions: Vec<Vec<f64>>,
    /// Columns that do not depend on theta, already expanded to rows,
    /// stored as (column index, values).
    fixed: Vec<(usize, Vec<f64>)>,
    interaction_offset: usize,
}

impl MatrixBuilder {
    pub fn new(design: &Design, spec: &InteractionSpec) -> Result<MatrixBuilder> {
        let s = design.species_count();
        let layout = Layout::new(s, spec)?;
        let n = design.n_rows();
        let row_community: Vec<usize> = design
            .replicates()
            .iter()
            .enumerate()
            .flat_map(|(c, &r)| std::iter::repeat_n(c, r))
            .collect();
        let proportions: Vec<Vec<f64>> = design
            .communities()
            .iter()
            .map(|c| c.proportions().to_vec())
            .collect();

        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut fixed = Vec::new();
        let mut push_fixed = |name: String, kind: ColumnKind, values: Vec<f64>, names: &mut Vec<String>, kinds: &mut Vec<ColumnKind>| {
            fixed.push((names.len(), values));
            names.push(name);
            kinds.push(kind);
        };

        match spec.family {
            Family::Null => push_fixed("beta".into(), ColumnKind::Intercept, vec![1.0; n], &mut names, &mut kinds),
            Family::CommunityFactor => {
                let mut ids: Vec<CommunityKey> = Vec::new();
                let mut row_level = Vec::with_capacity(n);
                for c in design.rows() {
                    let key = c.key();
                    let id = match ids.iter().position(|k| *k == key) {
                        Some(i) => i,
                        None => {
                            ids.push(key);
                            ids.len() - 1
                        }
                    };
                    row_level.push(id);
                }
                for id in 0..ids.len() {
                    let col = row_level.iter().map(|&l| if l == id { 1.0 } else { 0.0 }).collect();
                    push_fixed(format!("community_{}", id + 1), ColumnKind::Community, col, &mut names, &mut kinds);
                }
            }
            _ => {
                for i in 0..s {
                    let col = row_community.iter().map(|&c| proportions[c][i]).collect();
                    push_fixed(format!("beta_{}", i + 1), ColumnKind::Identity, col, &mut names, &mut kinds);
                }
            }
        }
        let interaction_offset = names.len();
        for name in layout.names() {
            names.push(name.clone());
            kinds.push(ColumnKind::Interaction);
        }

        for enc in structure_encodings(design) {
            match enc {
                StructureEncoding::Numeric(name) => {
                    let col = design
                        .rows()
                        .map(|c| match c.structures().get(&name) {
                            Some(Covariate::Numeric(v)) => *v,
                            _ => unreachable!("numeric encoding requires numeric values"),
                        })
                        .collect();
                    push_fixed(format!("alpha_{name}"), ColumnKind::Structure, col, &mut names, &mut kinds);
                }
                StructureEncoding::Levels(name, levels) => {
                    for level in levels.iter().skip(1) {
                        let col = design
                            .rows()
                            .map(|c| {
                                let v = c.structures().get(&name).map(|v| v.to_string());
                                if v.as_deref() == Some(level.as_str()) {
                                    1.0
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        push_fixed(
                            format!("alpha_{name}_{level}"),
                            ColumnKind::Structure,
                            col,
                            &mut names,
                            &mut kinds,
                        );
                    }
                }
            }
        }

        Ok(MatrixBuilder {
            family: spec.family,
            layout,
            n,
            names,
            kinds,
            row_community,
            proportions,
            fixed,
            interaction_offset,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn has_interactions(&self) -> bool {
        self.layout.width() > 0
    }

    /// Fill a column-major buffer of length `n * p` for `theta`.
    pub fn fill(&self, theta: f64, data: &mut [f64]) {
        let n = self.n;
        assert_eq!(data.len(), n * self.p());
        for (j, values) in &self.fixed {
            data[j * n..(j + 1) * n].copy_from_slice(values);
        }
        let w = self.layout.width();
        if w == 0 {
            return;
        }
        let per_community: Vec<Vec<f64>> = self
            .proportions
            .iter()
            .map(|p| {
                let mut v = vec![0.0; w];
                self.layout.fill(p, theta, &mut v);
                v
            })
            .collect();
        for k in 0..w {
            let col = &mut data[(self.interaction_offset + k) * n..(self.interaction_offset + k + 1) * n];
            for (row, &c) in self.row_community.iter().enumerate() {
                col[row] = per_community[c][k];
            }
        }
    }

    pub fn build(&self, theta: f64) -> Result<ModelMatrix> {
        if self.has_interactions() {
            check_theta(theta)?;
        }
        let mut data = vec![0.0; self.n * self.p()];
        self.fill(theta, &mut data);
        Ok(ModelMatrix {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            n: self.n,
            data,
            theta_used: theta,
            rank_warning: false,
        })
    }
}

fn structure_encodings(design: &Design) -> Vec<StructureEncoding> {
    let mut names: Vec<String> = Vec::new();
    for c in design.communities() {
        for k in c.structures().keys() {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let numeric = design
                .communities()
                .iter()
                .all(|c| matches!(c.structures().get(&name), Some(Covariate::Numeric(_))));
            if numeric {
                StructureEncoding::Numeric(name)
            } else {
                let mut levels: Vec<String> = Vec::new();
                for c in design.rows() {
                    let v = c
                        .structures()
                        .get(&name)
                        .map(|v| v.to_string())
                        .unwrap_or_default();
                    if !levels.contains(&v) {
                        levels.push(v);
                    }
                }
                StructureEncoding::Levels(name, levels)
            }
        })
        .collect()
}

/// Model matrix for `design` under `spec` at `theta`.
///
/// Columns: identity effects `beta_1..beta_s` (or `beta` for Null, or one
/// indicator per distinct community for CommunityFactor), then interaction
/// columns, then structure effects. Categorical structures use the first
/// level seen as reference.
pub fn design_matrix(design: &Design, spec: &InteractionSpec, theta: f64) -> Result<ModelMatrix> {
    let builder = MatrixBuilder::new(design, spec)?;
    let mut m = builder.build(theta)?;
    let (rank, _) = linalg::rank(&m.data, m.n, m.p());
    m.rank_warning = rank < m.p();
    Ok(m)
}

fn family_rank(f: Family) -> Option<u8> {
    match f {
        Family::Null => Some(0),
        Family::Identity => Some(1),
        Family::AveragePairwise => Some(2),
        _ => None,
    }
}

/// Whether every model of `a` is also a model of `b` (column space of `a`
/// contained in that of `b` for any design and theta).
pub fn nested(a: &InteractionSpec, b: &InteractionSpec) -> bool {
    use Family::*;
    if a.family == b.family {
        return match (a.family, &a.grouping, &b.grouping) {
            (FunctionalGroup, Some(ga), Some(gb)) => gb.refines(ga),
            (FunctionalGroup, _, _) => false,
            _ => true,
        };
    }
    match (a.family, b.family) {
        (_, CommunityFactor) => true,
        (CommunityFactor, _) => false,
        (x, y) if family_rank(x).is_some() && family_rank(y).is_some() => {
            family_rank(x) < family_rank(y)
        }
        (x, _) if family_rank(x).is_some() => true,
        (FunctionalGroup | AdditiveSpecies, FullPairwise) => true,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{four_species_design, nine_species_design, Community};

    fn centroid4() -> Community {
        Community::from_proportions(&[0.25; 4]).unwrap()
    }

    #[test]
    fn pair_term_values() {
        assert_eq!(pair_term(0.5, 0.5, 1.0).unwrap(), 0.25);
        assert!((pair_term(0.5, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let t = 0.62;
        assert!((pair_term(0.75, 0.25, t).unwrap() - 0.1875f64.powf(t)).abs() < 1e-15);
        assert_eq!(pair_term(0.0, 0.7, 0.05).unwrap(), 0.0);
        assert!(matches!(pair_term(0.5, 0.5, 0.0), Err(Error::NonPositiveTheta { .. })));
        assert!(matches!(pair_term(0.5, 0.5, -1.0), Err(Error::NonPositiveTheta { .. })));
    }

    #[test]
    fn scaling_factor_values() {
        assert!((scaling_factor(4, 1.0).unwrap() - 8.0 / 3.0).abs() < 1e-14);
        assert!((scaling_factor(9, 1.0).unwrap() - 2.25).abs() < 1e-14);
        assert!((scaling_factor(4, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert!(matches!(scaling_factor(1, 1.0), Err(Error::SpeciesCountTooSmall(1))));
    }

    #[test]
    fn scaled_centroid_is_theta_free() {
        for s in [2usize, 4, 9, 16] {
            let c = Community::from_proportions(&vec![1.0 / s as f64; s]).unwrap();
            let spec = InteractionSpec::new(Family::AveragePairwise).reparameterized(true);
            for theta in [0.05, 0.5, 1.0, 1.33] {
                let v = interaction_columns(&c, &spec, theta).unwrap()[0].1;
                // each of the C(s,2) pairs contributes 2/(s(s-1)) after scaling
                assert!((v - 1.0).abs() < 1e-12, "s={s} theta={theta} v={v}");
            }
        }
    }

    #[test]
    fn centroid_average_pairwise() {
        let v = interaction_columns(&centroid4(), &InteractionSpec::new(Family::AveragePairwise), 1.0).unwrap();
        assert_eq!(v, vec![("delta_AV".to_string(), 0.375)]);
    }

    #[test]
    fn monoculture_full_pairwise_is_zero() {
        let mono = Community::from_proportions(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        for theta in [0.01, 0.3, 1.0, 2.5] {
            let v = interaction_columns(&mono, &InteractionSpec::new(Family::FullPairwise), theta).unwrap();
            assert_eq!(v.len(), 6);
            assert!(v.iter().all(|(_, x)| *x == 0.0));
        }
    }

    #[test]
    fn centroid_functional_groups() {
        let spec = InteractionSpec::functional_group(Grouping::parse("1,1,2,2"));
        let v = interaction_columns(&centroid4(), &spec, 1.0).unwrap();
        // pairs: (1,2) within FG1; (3,4) within FG2; (1,3),(1,4),(2,3),(2,4) between
        let expected = vec![
            ("omega_1_1".to_string(), 1.0 / 16.0),
            ("omega_2_2".to_string(), 1.0 / 16.0),
            ("omega_1_2".to_string(), 4.0 / 16.0),
        ];
        assert_eq!(v, expected);
    }

    #[test]
    fn additive_species_column() {
        let c = Community::from_proportions(&[0.5, 0.3, 0.2]).unwrap();
        let v = interaction_columns(&c, &InteractionSpec::new(Family::AdditiveSpecies), 1.0).unwrap();
        assert_eq!(v[0].0, "lambda_1");
        assert!((v[0].1 - (0.15 + 0.10)).abs() < 1e-15);
        assert!((v[1].1 - (0.15 + 0.06)).abs() < 1e-15);
        assert!((v[2].1 - (0.10 + 0.06)).abs() < 1e-15);
    }

    #[test]
    fn missing_grouping() {
        let spec = InteractionSpec::new(Family::FunctionalGroup);
        assert!(matches!(
            interaction_columns(&centroid4(), &spec, 1.0),
            Err(Error::MissingGrouping)
        ));
        let bad = InteractionSpec::functional_group(Grouping::parse("1,2"));
        assert!(matches!(
            interaction_columns(&centroid4(), &bad, 1.0),
            Err(Error::GroupingMismatch { .. })
        ));
    }

    #[test]
    fn matrix_shapes() {
        let m = design_matrix(&four_species_design(), &InteractionSpec::new(Family::FullPairwise), 1.0).unwrap();
        assert_eq!((m.n, m.p()), (111, 10));
        assert!(!m.rank_warning);
        assert_eq!(&m.names[..5], &["beta_1", "beta_2", "beta_3", "beta_4", "delta_1_2"]);

        let m = design_matrix(&nine_species_design(), &InteractionSpec::new(Family::AdditiveSpecies), 0.77).unwrap();
        assert_eq!((m.n, m.p()), (300, 18));

        let d = four_species_design();
        let m = design_matrix(&d, &InteractionSpec::new(Family::Identity), 0.3).unwrap();
        assert_eq!(m.p(), 4);
        for (row, c) in d.rows().enumerate() {
            for i in 0..4 {
                assert_eq!(m.get(row, i), c.proportions()[i]);
            }
        }

        let m = design_matrix(&d, &InteractionSpec::new(Family::Null), 1.0).unwrap();
        assert_eq!(m.names, vec!["beta"]);
        let m = design_matrix(&d, &InteractionSpec::new(Family::CommunityFactor), 1.0).unwrap();
        assert_eq!(m.p(), 37);
    }

    #[test]
    fn structure_columns_use_reference_level() {
        let d = four_species_design().crossed_with("trt", &["A", "B"]).unwrap();
        let m = design_matrix(&d, &InteractionSpec::new(Family::AveragePairwise), 1.0).unwrap();
        assert_eq!(m.names.last().unwrap(), "alpha_trt_B");
        assert_eq!(m.p(), 6);
        let col = m.column_by_name("alpha_trt_B").unwrap();
        assert_eq!(col.iter().sum::<f64>(), 111.0);
    }

    #[test]
    fn rank_warning_on_collinear_design() {
        // only monocultures: all interaction columns are zero
        let d = four_species_design().filter(|c| c.richness() == 1).unwrap();
        let m = design_matrix(&d, &InteractionSpec::new(Family::AveragePairwise), 1.0).unwrap();
        assert!(m.rank_warning);
    }

    #[test]
    fn nesting_hierarchy() {
        use Family::*;
        let g = Grouping::parse("1,1,2,2");
        let s = |f: Family| {
            if f == FunctionalGroup {
                InteractionSpec::functional_group(g.clone())
            } else {
                InteractionSpec::new(f)
            }
        };
        assert!(nested(&s(Identity), &s(FullPairwise)));
        assert!(nested(&s(Null), &s(Identity)));
        assert!(nested(&s(AveragePairwise), &s(FunctionalGroup)));
        assert!(nested(&s(AveragePairwise), &s(AdditiveSpecies)));
        assert!(nested(&s(FunctionalGroup), &s(FullPairwise)));
        assert!(!nested(&s(FunctionalGroup), &s(AdditiveSpecies)));
        assert!(!nested(&s(AdditiveSpecies), &s(FunctionalGroup)));
        assert!(!nested(&s(FullPairwise), &s(AveragePairwise)));
        for f in Family::ALL {
            assert!(nested(&s(f), &s(f)), "{f} reflexive");
            assert!(nested(&s(f), &s(CommunityFactor)));
        }
        let coarse = InteractionSpec::functional_group(Grouping::parse("a,a,a,a"));
        assert!(nested(&coarse, &s(FunctionalGroup)));
        assert!(!nested(&s(FunctionalGroup), &coarse));
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::from_name(f.name()), Some(f));
        }
        assert_eq!(Family::from_name("avg"), Some(Family::AveragePairwise));
        assert_eq!(Family::from_name("full"), Some(Family::FullPairwise));
        assert_eq!(Family::from_name("bogus"), None);
    }
}
