//! Command-line front end: `design`, `fit`, `select` and `study`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::design::{self, Design, Table};
use crate::error::{Error, Result};
use crate::fit::{self, FitResult};
use crate::model::{Family, Grouping, InteractionSpec, MatrixBuilder};
use crate::profile::{self, EstimateOptions, ThetaEstimate};
use crate::select::{self, Criterion, Procedure, SelectOptions};
use crate::simulate::{self, Study, StudyConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "gdi", version, about = "Generalized diversity-interaction models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a design as CSV.
    Design(DesignArgs),
    /// Fit one interaction structure to a dataset.
    Fit(FitArgs),
    /// Choose an interaction structure with procedure a, b or c.
    Select(SelectArgs),
    /// Run a simulation study from a TOML config.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["builtin", "equiproportional"])))]
pub struct DesignArgs {
    /// Built-in design: `four` (37 communities) or `nine` (100 communities).
    #[arg(long, value_parser = ["four", "nine"])]
    pub builtin: Option<String>,
    /// Equi-proportional design, e.g. `s=16 levels=1,2,4 counts=16,120,16 reps=1 seed=3`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub equiproportional: Option<Vec<String>>,
    /// Override the number of replicates per community.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with columns p1..ps, optional struct:<name> columns, and y.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub family: String,
    /// Species-to-group labels, e.g. `1,1,2,2`.
    #[arg(long)]
    pub grouping: Option<String>,
    /// `estimate`, or a fixed value such as `1`.
    #[arg(long, default_value = "estimate")]
    pub theta: String,
    /// Scale interaction terms so the centroid effect does not depend on theta.
    #[arg(long)]
    pub reparam: bool,
    #[arg(long, default_value_t = profile::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// JSON report destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "b")]
    pub procedure: Procedure,
    #[arg(long, default_value = "aic")]
    pub criterion: Criterion,
    /// Reference structure for procedure b: `avg` or `full`.
    #[arg(long, default_value = "avg")]
    pub reference: String,
    #[arg(long)]
    pub grouping: Option<String>,
    /// Comma-separated candidate families (default: average pairwise,
    /// functional group when a grouping is given, additive species, full
    /// pairwise).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    #[arg(long, default_value_t = profile::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// JSON report destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One-row CSV summary destination.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Study config (TOML, or JSON by extension). Defaults to the
    /// four-species study.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "GDI_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Replace the sigma grid, e.g. `--sigma 0` or `--sigma 0.8,1.2`.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Replace the theta grid.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, default_value = "study_out")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design(a) => cmd_design(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Study(a) => cmd_study(&a),
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_kv(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .flat_map(|s| s.split_whitespace())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Config(vec![format!("expected KEY=VALUE, got `{kv}`")]))
        })
        .collect()
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(vec![format!("`{key}`: cannot parse `{x}`")]))
        })
        .collect()
}

fn equiproportional_from_args(items: &[String]) -> Result<(Design, u64)> {
    let mut species = None;
    let mut levels = None;
    let mut counts = None;
    let mut reps = vec![1];
    let mut seed = 0;
    let mut errs = Vec::new();
    for (k, v) in parse_kv(items)? {
        match k.as_str() {
            "s" | "species" => species = parse_list::<usize>(&k, &v)?.first().copied(),
            "levels" => levels = Some(parse_list(&k, &v)?),
            "counts" => counts = Some(parse_list(&k, &v)?),
            "reps" => reps = parse_list(&k, &v)?,
            "seed" => seed = parse_list::<u64>(&k, &v)?.first().copied().unwrap_or(0),
            other => errs.push(format!("unknown key `{other}`")),
        }
    }
    if species.is_none() {
        errs.push("missing `s=`".into());
    }
    if levels.is_none() {
        errs.push("missing `levels=`".into());
    }
    if counts.is_none() {
        errs.push("missing `counts=`".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let d = design::equiproportional_design(
        species.unwrap(),
        &levels.unwrap(),
        &counts.unwrap(),
        &reps,
        seed,
    )?;
    Ok((d, seed))
}

fn provenance(hash: &str, seed: Option<u64>) -> Vec<String> {
    vec![
        format!("tool: gdi {VERSION}"),
        format!("config_hash: {hash}"),
        format!(
            "master_seed: {}",
            seed.map_or_else(|| "none".to_string(), |s| s.to_string())
        ),
    ]
}

pub fn cmd_design(a: &DesignArgs) -> Result<()> {
    let (mut design, seed, descr) = match (&a.builtin, &a.equiproportional) {
        (Some(b), _) if b == "four" => (design::four_species_design(), None, "builtin=four".to_string()),
        (Some(_), _) => (design::nine_species_design(), None, "builtin=nine".to_string()),
        (None, Some(items)) => {
            let (d, seed) = equiproportional_from_args(items)?;
            (d, Some(seed), format!("equiproportional {}", items.join(" ")))
        }
        (None, None) => unreachable!("clap requires a design source"),
    };
    if let Some(r) = a.replicates {
        design = design.with_replicates(r)?;
    }
    let descr = format!("{descr} replicates={:?}", a.replicates);
    let comments = provenance(&sha256_hex(&[descr.as_bytes()]), seed);
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            design::write_table(&design, None, &comments, &mut w)?;
            w.flush().map_err(|e| Error::io(p, e))
        }
        None => design::write_table(&design, None, &comments, io::stdout().lock()),
    }
}

fn load_table(path: &Path) -> Result<(Table, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = design::read_table(bytes.as_slice(), true)?;
    if table.response.is_none() {
        return Err(Error::MissingResponse);
    }
    Ok((table, bytes))
}

fn spec_from_args(family: &str, grouping: &Option<String>, reparam: bool) -> Result<InteractionSpec> {
    let family = Family::from_name(family).ok_or_else(|| {
        Error::Config(vec![format!(
            "unknown family `{family}` (expected one of {})",
            Family::ALL.map(Family::name).join(", ")
        )])
    })?;
    let grouping = grouping.as_deref().map(Grouping::parse);
    let spec = InteractionSpec::new(family).with_grouping(grouping);
    if family == Family::FunctionalGroup && spec.grouping.is_none() {
        return Err(Error::MissingGrouping);
    }
    Ok(spec.reparameterized(reparam))
}

fn print_fit<W: Write>(out: &mut W, fit: &FitResult) -> io::Result<()> {
    writeln!(out, "{:<28} {:>16}", "term", "estimate")?;
    for (name, c) in fit.names.iter().zip(&fit.coefficients) {
        match c {
            Some(v) => writeln!(out, "{name:<28} {v:>16.6}")?,
            None => writeln!(out, "{name:<28} {:>16}", "(dropped)")?,
        }
    }
    writeln!(out)?;
    writeln!(out, "n = {}, coefficients = {}, rss = {:.6}", fit.n, fit.p, fit.rss)?;
    writeln!(
        out,
        "theta = {} ({})",
        fit.theta_used,
        if fit.theta_was_estimated { "estimated" } else { "fixed" }
    )?;
    if fit.perfect_fit {
        writeln!(out, "exact fit: log-likelihood is unbounded")?;
    } else {
        let aic = fit::aic(fit).unwrap_or(f64::NEG_INFINITY);
        let bic = fit::bic(fit).unwrap_or(f64::NEG_INFINITY);
        writeln!(out, "loglik = {:.4}, AIC = {aic:.4}, BIC = {bic:.4}", fit.loglik)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct FitReport<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    master_seed: Option<u64>,
    spec: &'a InteractionSpec,
    theta_mode: &'static str,
    fit: &'a FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    aic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_estimate: Option<&'a ThetaEstimate>,
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let spec = spec_from_args(&a.family, &a.grouping, a.reparam)?;
    let (table, bytes) = load_table(&a.data)?;
    spec.validate(table.design.species_count())?;
    let y = table.response.as_deref().expect("checked");
    let args = format!("{}|{:?}|{}|{}|{}", a.family, a.grouping, a.theta, a.reparam, a.alpha);
    let hash = sha256_hex(&[args.as_bytes(), &bytes]);

    let estimate_theta = a.theta.eq_ignore_ascii_case("estimate");
    let (fit, est) = if estimate_theta && spec.family.uses_theta() {
        let opts = EstimateOptions {
            alpha: a.alpha,
            ..EstimateOptions::default()
        };
        let est = profile::estimate_theta(&table.design, y, &spec, &opts)?;
        (est.fit.clone(), Some(est))
    } else {
        let theta: f64 = if estimate_theta {
            1.0
        } else {
            a.theta.parse().map_err(|_| {
                Error::Config(vec![format!("--theta must be `estimate` or a number, got `{}`", a.theta)])
            })?
        };
        let m = MatrixBuilder::new(&table.design, &spec)?.build(theta)?;
        (fit::ols(&m, y)?, None)
    };

    let mut out = io::stdout().lock();
    let w = |e| Error::io("<stdout>", e);
    writeln!(out, "{} fit to {}", spec.label(), a.data.display()).map_err(w)?;
    print_fit(&mut out, &fit).map_err(w)?;
    if let Some(e) = &est {
        writeln!(
            out,
            "theta_hat = {:.6}, {:.0}% CI = ({}, {}), LR vs theta = 1: stat = {:.4}, p = {:.4}",
            e.theta_hat,
            100.0 * (1.0 - e.alpha),
            bound_str(e.ci.lower),
            bound_str(e.ci.upper),
            e.lr_vs_one.statistic,
            e.lr_vs_one.p_value
        )
        .map_err(w)?;
    }
    if let Some(path) = &a.out {
        let report = FitReport {
            tool: "gdi",
            version: VERSION,
            config_hash: hash,
            master_seed: None,
            spec: &spec,
            theta_mode: if est.is_some() { "estimated" } else { "fixed" },
            fit: &fit,
            aic: fit::aic(&fit).ok(),
            bic: fit::bic(&fit).ok(),
            theta_estimate: est.as_ref(),
        };
        write_json(path, &report)?;
    }
    Ok(())
}

fn bound_str(b: profile::CiBound) -> String {
    match b {
        profile::CiBound::Bound(v) => format!("{v:.6}"),
        profile::CiBound::NonConvergent => "non-convergent".into(),
    }
}

pub fn cmd_select(a: &SelectArgs) -> Result<()> {
    let (table, bytes) = load_table(&a.data)?;
    let grouping = a.grouping.as_deref().map(Grouping::parse);
    let candidates = match &a.candidates {
        None => select::default_candidates(grouping.clone()),
        Some(names) => names
            .iter()
            .map(|n| spec_from_args(n, &a.grouping, false))
            .collect::<Result<Vec<_>>>()?,
    };
    let reference = match a.reference.as_str() {
        "avg" | "average_pairwise" => Family::AveragePairwise,
        "full" | "full_pairwise" => Family::FullPairwise,
        other => {
            return Err(Error::Config(vec![format!(
                "--reference must be `avg` or `full`, got `{other}`"
            )]))
        }
    };
    let opts = SelectOptions {
        criterion: a.criterion,
        alpha: a.alpha,
        reference: InteractionSpec::new(reference),
        ..SelectOptions::default()
    };
    let y = table.response.as_deref().expect("checked");
    let result = select::select(a.procedure, &table.design, y, &candidates, &opts)?;
    let lof = match select::lack_of_fit(&table.design, y, &result.chosen, result.theta_final) {
        Ok(l) => Some(l),
        Err(Error::NoReplication) => None,
        Err(e) => {
            eprintln!("lack-of-fit test skipped: {e}");
            None
        }
    };
    let args = format!(
        "{}|{}|{}|{:?}|{:?}|{}",
        a.procedure,
        a.criterion.name(),
        a.reference,
        a.grouping,
        a.candidates,
        a.alpha
    );
    let hash = sha256_hex(&[args.as_bytes(), &bytes]);

    let mut out = io::stdout().lock();
    let w = |e| Error::io("<stdout>", e);
    writeln!(
        out,
        "procedure {} ({}): chosen {} at theta = {}",
        result.procedure,
        result.criterion.name(),
        result.chosen_label,
        result.theta_final
    )
    .map_err(w)?;
    if result.fell_back {
        writeln!(out, "note: theta could not be estimated on the reference; ran procedure a").map_err(w)?;
    }
    writeln!(
        out,
        "{:<24} {:>14} {:>14} {:>8} {:>10}",
        "structure", "AIC", "BIC", "theta", "theta_hat"
    )
    .map_err(w)?;
    for c in &result.per_candidate {
        writeln!(
            out,
            "{:<24} {:>14.4} {:>14.4} {:>8.4} {:>10}",
            c.label,
            c.aic,
            c.bic,
            c.theta_used,
            c.theta_hat.map_or_else(|| "-".to_string(), |t| format!("{t:.4}"))
        )
        .map_err(w)?;
    }
    if let Some(l) = &lof {
        writeln!(
            out,
            "lack of fit vs community means: F({}, {}) = {:.4}, p = {:.4}",
            l.test.df1, l.test.df2, l.test.f, l.test.p_value
        )
        .map_err(w)?;
    }
    writeln!(out).map_err(w)?;
    print_fit(&mut out, &result.chosen_fit).map_err(w)?;

    if let Some(path) = &a.out {
        let report = json!({
            "tool": "gdi",
            "version": VERSION,
            "config_hash": hash,
            "master_seed": null,
            "selection": result,
            "lack_of_fit": lof,
        });
        write_json(path, &report)?;
    }
    if let Some(path) = &a.csv {
        let mut f = create(path)?;
        for line in provenance(&hash, None) {
            writeln!(f, "# {line}").map_err(|e| Error::io(path, e))?;
        }
        result.write_csv(&mut f)?;
        f.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn study_config(a: &StudyArgs) -> Result<StudyConfig> {
    let mut cfg = match &a.config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::builtin("four"),
    };
    if let Some(r) = a.replicates {
        cfg.grid.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.grid.seed = s;
    }
    if let Some(s) = &a.sigma {
        cfg.grid.sigmas = s.clone();
    }
    if let Some(t) = &a.theta {
        cfg.grid.thetas = t.clone();
    }
    Ok(cfg)
}

pub fn cmd_study(a: &StudyArgs) -> Result<()> {
    let study = Study::new(study_config(a)?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| Error::Config(vec![format!("thread pool: {e}")]))?;
    eprintln!(
        "running {} datasets on {} threads",
        study.n_datasets(),
        pool.current_num_threads()
    );
    let result = pool.install(|| simulate::run_study(&study));
    let paths = simulate::write_outputs(&study, &result, &a.out)?;
    eprint!("{}", simulate::describe(&result.summary));
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
