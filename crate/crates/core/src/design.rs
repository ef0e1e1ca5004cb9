//! Simplex experimental designs: communities, replication, the built-in
//! four- and nine-species designs, a generic equi-proportional generator,
//! and the CSV design format.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Proportions must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Decimal places used for community identity (design tables are printed at
/// this precision).
pub const KEY_DECIMALS: i32 = 6;

/// Value of an experimental-structure covariate attached to a community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariate {
    Numeric(f64),
    Level(String),
}

impl std::fmt::Display for Covariate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Covariate::Numeric(v) => write!(f, "{v}"),
            Covariate::Level(s) => f.write_str(s),
        }
    }
}

/// A point on the species simplex plus optional structure covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Community {
    proportions: Vec<f64>,
    structures: BTreeMap<String, Covariate>,
}

/// Proportions rounded to [`KEY_DECIMALS`], in integer micro-units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CommunityKey(pub Vec<i64>);

impl Community {
    pub fn new(proportions: Vec<f64>, structures: BTreeMap<String, Covariate>) -> Result<Self> {
        Self::checked(proportions, structures, 0)
    }

    /// Community without structure covariates.
    pub fn from_proportions(proportions: &[f64]) -> Result<Self> {
        Self::new(proportions.to_vec(), BTreeMap::new())
    }

    fn checked(
        proportions: Vec<f64>,
        structures: BTreeMap<String, Covariate>,
        row: usize,
    ) -> Result<Self> {
        if proportions.is_empty() {
            return Err(Error::EmptyCommunity);
        }
        for (i, &p) in proportions.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::NegativeProportion {
                    row,
                    species: i + 1,
                    value: p,
                });
            }
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::SumNotOne { row, sum });
        }
        Ok(Community {
            proportions,
            structures,
        })
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn structures(&self) -> &BTreeMap<String, Covariate> {
        &self.structures
    }

    pub fn species_count(&self) -> usize {
        self.proportions.len()
    }

    /// Number of species with strictly positive proportion.
    pub fn richness(&self) -> usize {
        self.proportions.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn key(&self) -> CommunityKey {
        let scale = 10f64.powi(KEY_DECIMALS);
        CommunityKey(
            self.proportions
                .iter()
                .map(|p| (p * scale).round() as i64)
                .collect(),
        )
    }

    pub fn with_structure(mut self, name: impl Into<String>, value: Covariate) -> Self {
        self.structures.insert(name.into(), value);
        self
    }
}

/// An ordered list of communities, each with a replicate multiplicity.
///
/// Rows of the replicated design are community-major: all replicates of the
/// first community, then the second, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    species_count: usize,
    communities: Vec<Community>,
    replicates: Vec<usize>,
}

impl Design {
    pub fn new(entries: Vec<(Community, usize)>) -> Result<Self> {
        let first = entries.first().ok_or(Error::EmptyDesign)?;
        let species_count = first.0.species_count();
        let mut communities = Vec::with_capacity(entries.len());
        let mut replicates = Vec::with_capacity(entries.len());
        for (c, r) in entries {
            if c.species_count() != species_count {
                return Err(Error::SpeciesCountMismatch {
                    expected: species_count,
                    found: c.species_count(),
                });
            }
            if r == 0 {
                return Err(Error::DimensionMismatch(
                    "replicate multiplicity must be positive".into(),
                ));
            }
            communities.push(c);
            replicates.push(r);
        }
        Ok(Design {
            species_count,
            communities,
            replicates,
        })
    }

    /// Every community replicated `reps` times.
    pub fn uniform(communities: Vec<Community>, reps: usize) -> Result<Self> {
        Self::new(communities.into_iter().map(|c| (c, reps)).collect())
    }

    pub fn species_count(&self) -> usize {
        self.species_count
    }

    pub fn communities(&self) -> &[Community] {
        &self.communities
    }

    pub fn replicates(&self) -> &[usize] {
        &self.replicates
    }

    pub fn n_rows(&self) -> usize {
        self.replicates.iter().sum()
    }

    /// Communities in row order after replication.
    pub fn rows(&self) -> impl Iterator<Item = &Community> + '_ {
        self.communities
            .iter()
            .zip(&self.replicates)
            .flat_map(|(c, &r)| std::iter::repeat_n(c, r))
    }

    /// Keep only communities matching `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Community) -> bool) -> Result<Design> {
        Design::new(
            self.communities
                .iter()
                .zip(&self.replicates)
                .filter(|(c, _)| keep(c))
                .map(|(c, &r)| (c.clone(), r))
                .collect(),
        )
    }

    pub fn with_replicates(&self, reps: usize) -> Result<Design> {
        Design::uniform(self.communities.clone(), reps)
    }

    /// Attach each categorical level to every community (a crossed
    /// treatment), replicating the design once per level.
    pub fn crossed_with(&self, name: &str, levels: &[&str]) -> Result<Design> {
        let mut entries = Vec::new();
        for level in levels {
            for (c, &r) in self.communities.iter().zip(&self.replicates) {
                let c = c
                    .clone()
                    .with_structure(name, Covariate::Level((*level).to_string()));
                entries.push((c, r));
            }
        }
        Design::new(entries)
    }

    /// Set of rounded proportion tuples, for order-insensitive comparison.
    pub fn key_set(&self) -> HashSet<CommunityKey> {
        self.communities.iter().map(Community::key).collect()
    }
}

fn equal_share(species: usize, members: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; species];
    let share = 1.0 / members.len() as f64;
    for &m in members {
        p[m] = share;
    }
    p
}

fn community(p: Vec<f64>) -> Community {
    Community::new(p, BTreeMap::new()).expect("built-in community is on the simplex")
}

/// The 37-community four-species design, each community replicated three
/// times.
pub fn four_species_design() -> Design {
    let third = 1.0 / 3.0;
    let minor = 0.1 / 3.0;
    let rows: [[f64; 4]; 37] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.5, 0.5, 0.0, 0.0],
        [0.5, 0.0, 0.5, 0.0],
        [0.5, 0.0, 0.0, 0.5],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.5, 0.0, 0.5],
        [0.0, 0.0, 0.5, 0.5],
        [third, third, third, 0.0],
        [third, third, 0.0, third],
        [third, 0.0, third, third],
        [0.0, third, third, third],
        [0.7, 0.1, 0.1, 0.1],
        [0.4, 0.4, 0.1, 0.1],
        [0.4, 0.2, 0.2, 0.2],
        [0.4, 0.1, 0.4, 0.1],
        [0.4, 0.1, 0.1, 0.4],
        [0.3, 0.3, 0.3, 0.1],
        [0.3, 0.3, 0.1, 0.3],
        [0.3, 0.1, 0.3, 0.3],
        [0.25, 0.25, 0.25, 0.25],
        [0.2, 0.4, 0.2, 0.2],
        [0.2, 0.2, 0.4, 0.2],
        [0.2, 0.2, 0.2, 0.4],
        [0.1, 0.7, 0.1, 0.1],
        [0.1, 0.4, 0.4, 0.1],
        [0.1, 0.4, 0.1, 0.4],
        [0.1, 0.3, 0.3, 0.3],
        [0.1, 0.1, 0.7, 0.1],
        [0.1, 0.1, 0.4, 0.4],
        [0.1, 0.1, 0.1, 0.7],
        [0.9, minor, minor, minor],
        [minor, 0.9, minor, minor],
        [minor, minor, 0.9, minor],
        [minor, minor, minor, 0.9],
    ];
    let communities = rows.iter().map(|r| community(r.to_vec())).collect();
    Design::uniform(communities, 3).expect("four-species design is valid")
}

// 1-based species sets of the nine-species design.
const NINE_TRIPLES: [[usize; 3]; 24] = [
    [4, 8, 9],
    [2, 8, 9],
    [6, 7, 9],
    [4, 7, 9],
    [1, 6, 9],
    [3, 5, 9],
    [2, 5, 9],
    [1, 3, 9],
    [6, 7, 8],
    [3, 7, 8],
    [2, 6, 8],
    [4, 5, 8],
    [1, 5, 8],
    [1, 3, 8],
    [4, 5, 7],
    [1, 5, 7],
    [2, 3, 7],
    [1, 2, 7],
    [3, 5, 6],
    [2, 5, 6],
    [3, 4, 6],
    [1, 4, 6],
    [2, 3, 4],
    [1, 2, 4],
];

const NINE_QUADS: [[usize; 4]; 18] = [
    [2, 7, 8, 9],
    [1, 5, 8, 9],
    [2, 3, 8, 9],
    [5, 6, 7, 9],
    [1, 3, 7, 9],
    [3, 4, 6, 9],
    [2, 4, 6, 9],
    [1, 4, 5, 9],
    [5, 6, 7, 8],
    [3, 4, 7, 8],
    [1, 4, 6, 8],
    [1, 2, 6, 8],
    [3, 4, 5, 8],
    [1, 3, 6, 7],
    [2, 3, 5, 6],
    [1, 2, 3, 5],
    [1, 2, 4, 7],
    [2, 4, 5, 7],
];

const NINE_SIXES: [[usize; 6]; 12] = [
    [3, 5, 6, 7, 8, 9],
    [1, 2, 5, 7, 8, 9],
    [1, 3, 4, 7, 8, 9],
    [1, 4, 5, 6, 8, 9],
    [2, 3, 4, 6, 8, 9],
    [2, 4, 5, 6, 7, 9],
    [1, 2, 3, 6, 7, 9],
    [1, 2, 3, 4, 5, 9],
    [1, 2, 4, 6, 7, 8],
    [2, 3, 4, 5, 7, 8],
    [1, 2, 3, 5, 6, 8],
    [1, 3, 4, 5, 6, 7],
];

/// The 100-community equi-proportional nine-species design (9 monocultures,
/// all 36 pairs, 24 triples, 18 four-species, 12 six-species mixtures and
/// the centroid), each replicated three times.
pub fn nine_species_design() -> Design {
    const S: usize = 9;
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(100);
    sets.extend((0..S).map(|i| vec![i]));
    for i in 0..S {
        for j in i + 1..S {
            sets.push(vec![i, j]);
        }
    }
    sets.extend(NINE_TRIPLES.iter().map(|t| t.iter().map(|&i| i - 1).collect()));
    sets.extend(NINE_QUADS.iter().map(|t| t.iter().map(|&i| i - 1).collect()));
    sets.extend(NINE_SIXES.iter().map(|t| t.iter().map(|&i| i - 1).collect()));
    sets.push((0..S).collect());
    let communities = sets.iter().map(|m| community(equal_share(S, m))).collect();
    Design::uniform(communities, 3).expect("nine-species design is valid")
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

const ENUMERATION_LIMIT: u128 = 200_000;

fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn sample_subsets<R: Rng>(n: usize, k: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let total = binomial(n, k);
    let mut chosen = if total <= ENUMERATION_LIMIT {
        let all = all_subsets(n, k);
        index::sample(rng, all.len(), count)
            .into_iter()
            .map(|i| all[i].clone())
            .collect::<Vec<_>>()
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut subset = index::sample(rng, n, k).into_vec();
            subset.sort_unstable();
            if seen.insert(subset.clone()) {
                out.push(subset);
            }
        }
        out
    };
    chosen.sort();
    chosen
}

/// Equi-proportional communities at the requested richness levels.
///
/// `reps` is either a single multiplicity for every community or one per
/// richness level. When fewer than all `C(s, r)` subsets are requested for a
/// level they are sampled without replacement from a generator seeded by
/// `seed`; exhaustive levels are enumerated lexicographically and do not
/// depend on the seed.
pub fn equiproportional_design(
    species: usize,
    richness_levels: &[usize],
    counts: &[usize],
    reps: &[usize],
    seed: u64,
) -> Result<Design> {
    if richness_levels.len() != counts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} richness levels but {} counts",
            richness_levels.len(),
            counts.len()
        )));
    }
    if reps.len() != 1 && reps.len() != richness_levels.len() {
        return Err(Error::DimensionMismatch(format!(
            "reps must have 1 or {} entries, got {}",
            richness_levels.len(),
            reps.len()
        )));
    }
    let mut entries = Vec::new();
    for (level_idx, (&r, &count)) in richness_levels.iter().zip(counts).enumerate() {
        if r == 0 || r > species {
            return Err(Error::RichnessExceedsSpecies {
                richness: r,
                species,
            });
        }
        let available = binomial(species, r);
        if count as u128 > available {
            return Err(Error::CountExceedsSubsets {
                richness: r,
                requested: count,
                available,
            });
        }
        let subsets = if count as u128 == available {
            all_subsets(species, r)
        } else {
            let mut rng = rng::substream(seed, &[r as u64]);
            sample_subsets(species, r, count, &mut rng)
        };
        let rep = if reps.len() == 1 { reps[0] } else { reps[level_idx] };
        entries.extend(
            subsets
                .iter()
                .map(|m| (community(equal_share(species, m)), rep)),
        );
    }
    Design::new(entries)
}

/// A design plus (optionally) a response column, as read from CSV.
#[derive(Debug, Clone)]
pub struct Table {
    pub design: Design,
    pub response: Option<Vec<f64>>,
}

enum Column {
    Proportion,
    Structure(String),
    Response,
}

fn parse_header(headers: &csv::StringRecord, allow_response: bool) -> Result<(usize, Vec<Column>)> {
    let mut columns = Vec::with_capacity(headers.len());
    let mut species = 0;
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        let col = if let Some(name) = h.strip_prefix("struct:") {
            if name.is_empty() {
                return Err(parse_err(1, i + 1, "empty structure column name"));
            }
            Column::Structure(name.to_string())
        } else if h == "y" && allow_response {
            Column::Response
        } else if let Some(idx) = h.strip_prefix('p').and_then(|s| s.parse::<usize>().ok()) {
            if idx != species + 1 {
                return Err(parse_err(
                    1,
                    i + 1,
                    &format!("expected proportion column p{}, found {h}", species + 1),
                ));
            }
            species += 1;
            Column::Proportion
        } else {
            return Err(parse_err(1, i + 1, &format!("unrecognized column '{h}'")));
        };
        columns.push(col);
    }
    if species == 0 {
        return Err(parse_err(1, 1, "no proportion columns (p1..ps)"));
    }
    Ok((species, columns))
}

fn parse_err(row: usize, column: usize, message: &str) -> Error {
    Error::Parse {
        row,
        column,
        message: message.to_string(),
    }
}

/// Sum tolerance for proportions printed at six decimals (half a unit in the
/// last place per species).
fn rounding_tolerance(species: usize) -> f64 {
    species as f64 * 0.5 * 10f64.powi(-KEY_DECIMALS) + SUM_TOLERANCE
}

/// Read a design (and response column `y` when `allow_response`) from CSV.
///
/// Rows whose proportions sum to one only to table precision (e.g.
/// `0.333333` x 3) are renormalized; anything further off is `SumNotOne`.
/// Consecutive identical rows become one community with a multiplicity.
pub fn read_table<R: Read>(reader: R, allow_response: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_err(0, 0, "empty file"));
    }
    let (species, columns) = parse_header(&headers, allow_response)?;
    let has_response = columns.iter().any(|c| matches!(c, Column::Response));

    let mut raw_rows: Vec<(Vec<f64>, Vec<(String, String)>, Option<f64>, usize)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut props = Vec::with_capacity(species);
        let mut structs = Vec::new();
        let mut y = None;
        for (i, (field, col)) in record.iter().zip(&columns).enumerate() {
            match col {
                Column::Proportion => {
                    let v = if field.is_empty() {
                        0.0
                    } else {
                        field.parse::<f64>().map_err(|_| {
                            parse_err(line, i + 1, &format!("invalid proportion '{field}'"))
                        })?
                    };
                    props.push(v);
                }
                Column::Structure(name) => structs.push((name.clone(), field.to_string())),
                Column::Response => {
                    let v = field.parse::<f64>().map_err(|_| {
                        parse_err(line, i + 1, &format!("invalid response '{field}'"))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::NonFiniteResponse(line));
                    }
                    y = Some(v);
                }
            }
        }
        raw_rows.push((props, structs, y, line));
    }
    if raw_rows.is_empty() {
        return Err(parse_err(0, 0, "no data rows"));
    }

    // A structure column is numeric iff every value parses as a number.
    let numeric: BTreeMap<String, bool> = columns
        .iter()
        .filter_map(|c| match c {
            Column::Structure(n) => Some(n.clone()),
            _ => None,
        })
        .map(|name| {
            let all_num = raw_rows.iter().all(|(_, s, _, _)| {
                s.iter()
                    .find(|(n, _)| *n == name)
                    .is_some_and(|(_, v)| v.parse::<f64>().is_ok())
            });
            (name, all_num)
        })
        .collect();

    let mut entries: Vec<(Community, usize)> = Vec::new();
    let mut response = Vec::with_capacity(raw_rows.len());
    for (mut props, structs, y, line) in raw_rows {
        let sum: f64 = props.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE && (sum - 1.0).abs() <= rounding_tolerance(species) {
            props.iter_mut().for_each(|p| *p /= sum);
        }
        let structures = structs
            .into_iter()
            .map(|(name, v)| {
                let cov = if numeric[&name] {
                    Covariate::Numeric(v.parse().expect("checked numeric"))
                } else {
                    Covariate::Level(v)
                };
                (name, cov)
            })
            .collect();
        let c = Community::checked(props, structures, line)?;
        if let Some(y) = y {
            response.push(y);
        }
        match entries.last_mut() {
            Some((last, r)) if *last == c => *r += 1,
            _ => entries.push((c, 1)),
        }
    }
    Ok(Table {
        design: Design::new(entries)?,
        response: has_response.then_some(response),
    })
}

pub fn read_design<R: Read>(reader: R) -> Result<Design> {
    Ok(read_table(reader, false)?.design)
}

pub fn load_design_csv(path: impl AsRef<Path>) -> Result<Design> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_design(file)
}

/// Write `design` (and optional response, one value per replicated row) as
/// CSV. Lines of `comments` are emitted first, each prefixed by `# `.
pub fn write_table<W: Write>(
    design: &Design,
    response: Option<&[f64]>,
    comments: &[String],
    mut out: W,
) -> Result<()> {
    if let Some(y) = response {
        if y.len() != design.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {} rows",
                y.len(),
                design.n_rows()
            )));
        }
    }
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| Error::io("<output>", e))?;
    }
    let struct_names: Vec<&String> = design.communities()[0].structures().keys().collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=design.species_count()).map(|i| format!("p{i}")).collect();
    header.extend(struct_names.iter().map(|n| format!("struct:{n}")));
    if response.is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for (row, c) in design.rows().enumerate() {
        let mut rec: Vec<String> = c.proportions().iter().map(|p| format!("{p}")).collect();
        for name in &struct_names {
            rec.push(
                c.structures()
                    .get(*name)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        if let Some(y) = response {
            rec.push(format!("{}", y[row]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn save_design_csv(design: &Design, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_table(design, None, &[], std::io::BufWriter::new(file))
}
