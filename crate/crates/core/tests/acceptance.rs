//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gdi::design::four_species_design;
use gdi::fit;
use gdi::model::{design_matrix, Family, Grouping, InteractionSpec};
use gdi::profile::{self, EstimateOptions, Profile};
use gdi::rng;
use gdi::select::{self, Procedure, SelectOptions};
use gdi::simulate::{self, simulate_response, Study, StudyConfig, StudyKind, StudyResult, TruthModel};
use gdi::stats;

const REPLICATES: usize = 200;
const SEED: u64 = 20_240_501;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id:>2} {}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn study(builtin: &str, thetas: &[f64], sigmas: &[f64], reps: usize, kinds: &[StudyKind]) -> Study {
    let mut cfg = StudyConfig::builtin(builtin);
    cfg.grid.thetas = thetas.to_vec();
    cfg.grid.sigmas = sigmas.to_vec();
    cfg.grid.replicates = reps;
    cfg.grid.seed = SEED;
    cfg.procedures.studies = kinds.to_vec();
    Study::new(cfg).expect("valid study")
}

fn binomial_cdf(k: i64, n: u64, p: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if p >= 1.0 {
        return if k as u64 >= n { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for i in 0..=(k as u64).min(n) {
        let ln = stats::ln_gamma(n as f64 + 1.0) - stats::ln_gamma(i as f64 + 1.0) - stats::ln_gamma((n - i) as f64 + 1.0)
            + i as f64 * p.ln()
            + (n - i) as f64 * (1.0 - p).ln();
        total += ln.exp();
    }
    total.min(1.0)
}

/// Central 99% acceptance region of Binomial(n, p).
fn binomial_region(n: u64, p: f64) -> (u64, u64) {
    let lo = (0..=n).find(|&k| binomial_cdf(k as i64, n, p) > 0.005).unwrap_or(0);
    let hi = (0..=n)
        .rev()
        .find(|&k| 1.0 - binomial_cdf(k as i64 - 1, n, p) > 0.005)
        .unwrap_or(n);
    (lo, hi)
}

/// Table 4(a): (mean, sd, coverage) per structure at theta 0.35, 0.77, 1.17.
const TABLE_4A: [(f64, [(&str, f64, f64, f64); 4]); 3] = [
    (
        0.35,
        [
            ("average_pairwise", 0.352, 0.0129, 1.0),
            ("functional_group", 0.351, 0.0129, 0.99),
            ("additive_species", 0.351, 0.0128, 0.99),
            ("full_pairwise", 0.351, 0.0128, 0.895),
        ],
    ),
    (
        0.77,
        [
            ("average_pairwise", 0.776, 0.0450, 0.975),
            ("functional_group", 0.776, 0.0448, 0.97),
            ("additive_species", 0.776, 0.0445, 0.97),
            ("full_pairwise", 0.775, 0.0445, 0.945),
        ],
    ),
    (
        1.17,
        [
            ("average_pairwise", 1.183, 0.1065, 0.955),
            ("functional_group", 1.184, 0.1060, 0.95),
            ("additive_species", 1.185, 0.1055, 0.94),
            ("full_pairwise", 1.184, 0.1054, 0.93),
        ],
    ),
];

fn criterion_1_and_3(report: &mut Report) {
    let thetas: Vec<f64> = TABLE_4A.iter().map(|t| t.0).collect();
    let s = study("four", &thetas, &[1.0], REPLICATES, &[StudyKind::Robustness]);
    let res = simulate::run_study(&s);

    let mut ok = true;
    let mut lines = Vec::new();
    for (ti, (theta, rows)) in TABLE_4A.iter().enumerate() {
        for (k, (label, _mean, sd_ref, cov_ref)) in rows.iter().enumerate() {
            let ests: Vec<_> = res.cell(ti, 0).map(|r| &r.estimates[k]).collect();
            let vals: Vec<f64> = ests.iter().filter_map(|e| e.theta_hat).collect();
            let mean = stats::mean(&vals).unwrap_or(f64::NAN);
            let sd = stats::sample_sd(&vals).unwrap_or(f64::NAN);
            let conv: Vec<_> = ests.iter().filter(|e| e.converged()).collect();
            let covered = conv.iter().filter(|e| e.covers(*theta) == Some(true)).count() as u64;
            let n_conv = conv.len() as u64;
            let (lo, hi) = binomial_region(n_conv, *cov_ref);
            let mean_ok = (mean - theta).abs() <= 2.0 * sd_ref / (REPLICATES as f64).sqrt();
            let sd_ok = (sd - sd_ref).abs() <= 0.3 * sd_ref;
            let cov_ok = (lo..=hi).contains(&covered);
            ok &= mean_ok && sd_ok && cov_ok && vals.len() == REPLICATES;
            lines.push(format!(
                "theta={theta} {label}: mean={mean:.4}{} sd={sd:.4}{} coverage={covered}/{n_conv}{} (region {lo}..={hi})",
                if mean_ok { "" } else { "(x)" },
                if sd_ok { "" } else { "(x)" },
                if cov_ok { "" } else { "(x)" },
            ));
        }
    }
    report.check(1, ok, format!("four-species robustness at sigma=1, {REPLICATES} replicates"));
    for l in lines {
        println!("      {l}");
    }

    let ranges: Vec<f64> = res.records.iter().filter_map(|r| r.theta_range()).collect();
    let median = stats::median(&ranges).unwrap_or(f64::NAN);
    let p95 = stats::quantile(&ranges, 0.95).unwrap_or(f64::NAN);
    report.check(
        3,
        median < 0.01 && p95 < 0.03 && ranges.len() == res.records.len(),
        format!(
            "per-dataset theta range across structures: median={median:.5} p95={p95:.5} over {} datasets",
            ranges.len()
        ),
    );
}

fn coverage(res: &StudyResult, k: usize, theta: f64) -> (usize, usize) {
    let conv: Vec<_> = res.records.iter().map(|r| &r.estimates[k]).filter(|e| e.converged()).collect();
    let covered = conv.iter().filter(|e| e.covers(theta) == Some(true)).count();
    (covered, conv.len())
}

fn criterion_2(report: &mut Report) {
    let s = study("nine", &[0.05], &[1.0], REPLICATES, &[StudyKind::Robustness]);
    let res = simulate::run_study(&s);
    let idx = |label: &str| s.candidates.iter().position(|c| c.label() == label).unwrap();
    let (fc, fn_) = coverage(&res, idx("full_pairwise"), 0.05);
    let (ac, an) = coverage(&res, idx("average_pairwise"), 0.05);
    let fp = fc as f64 / fn_.max(1) as f64;
    let ap = ac as f64 / an.max(1) as f64;
    report.check(
        2,
        fn_ > 0 && an > 0 && fp < 0.5 && ap > 0.9,
        format!("nine-species theta=0.05: full pairwise coverage {fc}/{fn_}={fp:.3}, average pairwise {ac}/{an}={ap:.3}"),
    );
}

fn proportion(res: &StudyResult, ti: usize, si: usize, p: Procedure, label: &str) -> f64 {
    let recs: Vec<_> = res.cell(ti, si).filter_map(|r| r.selection(p)).collect();
    let k = recs.iter().filter(|s| s.chosen.as_deref() == Some(label)).count();
    k as f64 / recs.len() as f64
}

fn criterion_4(report: &mut Report) {
    let mut s = study("four", &[0.05, 0.19, 1.17], &[1.0], REPLICATES, &[StudyKind::Selection]);
    s.config.procedures.selection = vec![Procedure::A];
    let res = simulate::run_study(&s);
    let ap05 = proportion(&res, 0, 0, Procedure::A, "average_pairwise");
    let ap19 = proportion(&res, 1, 0, Procedure::A, "average_pairwise");
    let props: Vec<(String, f64)> = s
        .candidates
        .iter()
        .map(|c| (c.label(), proportion(&res, 2, 0, Procedure::A, &c.label())))
        .collect();
    let modal = props
        .iter()
        .fold(None::<&(String, f64)>, |best, p| match best {
            Some(b) if b.1 >= p.1 => Some(b),
            _ => Some(p),
        })
        .unwrap();
    report.check(
        4,
        ap05 >= 0.95 && ap19 >= 0.95 && modal.0 == "full_pairwise",
        format!(
            "procedure a: average pairwise at theta 0.05 = {ap05:.3}, at 0.19 = {ap19:.3}; at 1.17 modal = {} ({:.3})",
            modal.0, modal.1
        ),
    );
}

fn criterion_5(report: &mut Report) {
    let mut s = study("four", &[0.77, 1.0], &[0.8, 1.2], REPLICATES, &[StudyKind::Selection]);
    s.config.procedures.selection = vec![Procedure::B, Procedure::C];
    let res = simulate::run_study(&s);
    let mut ok = true;
    let mut parts = Vec::new();
    for (ti, theta) in [0.77, 1.0].iter().enumerate() {
        for (si, sigma) in [0.8, 1.2].iter().enumerate() {
            let b = proportion(&res, ti, si, Procedure::B, "full_pairwise");
            let c = proportion(&res, ti, si, Procedure::C, "full_pairwise");
            ok &= b > 0.5 && c > 0.5;
            parts.push(format!("theta={theta} sigma={sigma}: b={b:.3} c={c:.3}"));
        }
    }
    let pairs: Vec<bool> = res
        .records
        .iter()
        .filter_map(|r| Some(r.selection(Procedure::B)?.chosen.as_ref()? == r.selection(Procedure::C)?.chosen.as_ref()?))
        .collect();
    let agree = pairs.iter().filter(|&&a| a).count() as f64 / pairs.len() as f64;
    ok &= agree >= 0.9 && pairs.len() == res.records.len();
    report.check(
        5,
        ok,
        format!("full pairwise selected [{}]; b/c agreement {agree:.3}", parts.join("; ")),
    );
}

fn criterion_6(report: &mut Report) {
    let design = gdi::design::nine_species_design();
    let candidates = select::default_candidates(Some(Grouping::parse("1,1,1,1,1,2,2,3,3")));
    let opts = SelectOptions::default();
    let mut tb = Vec::new();
    let mut tc = Vec::new();
    for (t, theta) in [0.35, 0.77, 1.17].iter().enumerate() {
        let truth = TruthModel::nine_species(*theta, 1.0);
        for r in 0..50u64 {
            let mut rng = rng::substream(SEED, &[6, t as u64, r]);
            let y = simulate_response(&design, &truth, &mut rng).unwrap();
            let start = Instant::now();
            select::procedure_b(&design, &y, &candidates, &opts).unwrap();
            tb.push(start.elapsed().as_secs_f64());
            let start = Instant::now();
            select::procedure_c(&design, &y, &candidates, &opts).unwrap();
            tc.push(start.elapsed().as_secs_f64());
        }
    }
    let mb = stats::median(&tb).unwrap();
    let mc = stats::median(&tc).unwrap();
    report.check(
        6,
        mc / mb >= 2.0,
        format!(
            "nine-species median selection time b={:.2}ms c={:.2}ms ratio={:.2}",
            mb * 1e3,
            mc * 1e3,
            mc / mb
        ),
    );
}

fn criterion_7(report: &mut Report) {
    let s = study("four", &[0.77], &simulate::DEFAULT_SIGMAS, REPLICATES, &[StudyKind::Reparam]);
    let res = simulate::run_study(&s);
    let recs: Vec<_> = res.records.iter().filter_map(|r| r.reparam.as_ref()).collect();
    let complete: Vec<_> = recs
        .iter()
        .filter_map(|r| Some((r.theta_old?, r.theta_new?, r.delta_old?, r.delta_new?)))
        .collect();
    let max_diff = complete.iter().map(|c| (c.0 - c.1).abs()).fold(0.0, f64::max);
    let to = |f: fn(&(f64, f64, f64, f64)) -> f64| complete.iter().map(f).collect::<Vec<f64>>();
    let old = stats::pearson(&to(|c| c.0), &to(|c| c.2)).unwrap_or(f64::NAN);
    let new = stats::pearson(&to(|c| c.1), &to(|c| c.3)).unwrap_or(f64::NAN);
    report.check(
        7,
        complete.len() == 5 * REPLICATES && max_diff <= 1e-6 && old > 0.85 && new.abs() < 0.3,
        format!(
            "{} pooled datasets: max |theta_old - theta_new| = {max_diff:.2e}, corr old = {old:.4}, new = {new:.4}",
            complete.len()
        ),
    );
}

/// Coefficients from the normal equations, solved by Gaussian elimination
/// with partial pivoting.
fn normal_equations(x: &[f64], n: usize, p: usize, y: &[f64]) -> Vec<f64> {
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..n).map(|r| x[i * n + r] * x[j * n + r]).sum();
        }
        a[i][p] = (0..n).map(|r| x[i * n + r] * y[r]).sum();
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            for k in col..=p {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut b = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| a[i][k] * b[k]).sum();
        b[i] = (a[i][p] - s) / a[i][i];
    }
    b
}

fn criterion_8(report: &mut Report) {
    let design = four_species_design();
    let specs = [
        InteractionSpec::new(Family::AveragePairwise),
        InteractionSpec::functional_group(Grouping::parse("1,1,2,2")),
        InteractionSpec::new(Family::AdditiveSpecies),
        InteractionSpec::new(Family::FullPairwise),
    ];
    let thetas = simulate::DEFAULT_THETAS;
    let mut worst_grid: f64 = 0.0;
    let mut worst_ols: f64 = 0.0;
    for d in 0..50usize {
        let theta = thetas[d % thetas.len()];
        let truth = TruthModel::four_species(theta, 1.0);
        let mut rng = rng::substream(SEED, &[8, d as u64]);
        let y = simulate_response(&design, &truth, &mut rng).unwrap();
        let spec = &specs[d % specs.len()];

        let est = profile::estimate_theta(&design, &y, spec, &EstimateOptions::default().without_ci()).unwrap();
        let prof = Profile::new(&design, &y, spec).unwrap();
        let (mut best_t, mut best_l) = (0.01, f64::NEG_INFINITY);
        let steps = ((2.5 - 0.01) / 0.0005_f64).round() as usize;
        for i in 0..=steps {
            let t = 0.01 + 0.0005 * i as f64;
            let l = prof.loglik(t);
            if l > best_l {
                best_l = l;
                best_t = t;
            }
        }
        worst_grid = worst_grid.max((est.theta_hat - best_t).abs());

        let m = design_matrix(&design, spec, theta).unwrap();
        let f = fit::ols(&m, &y).unwrap();
        let oracle = normal_equations(&m.data, m.n, m.p(), &y);
        for (c, o) in f.coefficients.iter().zip(&oracle) {
            let c = c.expect("full rank");
            worst_ols = worst_ols.max((c - o).abs() / o.abs().max(1e-300));
        }
    }
    report.check(
        8,
        worst_grid <= 0.002 && worst_ols <= 1e-8,
        format!("50 datasets: max |theta_hat - grid argmax| = {worst_grid:.2e}, max OLS relative error = {worst_ols:.2e}"),
    );
}

/// Truth of `family` with known coefficients, in that family's own
/// parameterization.
fn family_truth(family: Family, theta: f64) -> (TruthModel, InteractionSpec, Vec<(String, f64)>) {
    let beta = vec![5.0, 7.0, 6.0, 3.0];
    let mut coefs: Vec<(String, f64)> = beta.iter().enumerate().map(|(i, b)| (format!("beta_{}", i + 1), *b)).collect();
    let grouping = Grouping::parse("1,1,2,2");
    match family {
        Family::AveragePairwise => {
            coefs.push(("delta_AV".into(), 8.0));
            let t = TruthModel::average_pairwise(beta, 8.0, theta, 0.0).unwrap();
            (t, InteractionSpec::new(family), coefs)
        }
        Family::FunctionalGroup => {
            let omega = vec![vec![4.0, 11.0], vec![11.0, 6.5]];
            let t = TruthModel::functional_group(beta, &grouping, &omega, theta, 0.0).unwrap();
            let spec = InteractionSpec::functional_group(grouping);
            (t, spec, coefs)
        }
        Family::AdditiveSpecies => {
            let lambda = [2.0, 5.0, 3.5, 4.25];
            for (i, l) in lambda.iter().enumerate() {
                coefs.push((format!("lambda_{}", i + 1), *l));
            }
            let t = TruthModel::additive(beta, &lambda, theta, 0.0).unwrap();
            (t, InteractionSpec::new(family), coefs)
        }
        _ => {
            let t = TruthModel::four_species(theta, 0.0);
            for i in 0..4 {
                for j in i + 1..4 {
                    coefs.push((format!("delta_{}_{}", i + 1, j + 1), t.delta(i, j)));
                }
            }
            (t, InteractionSpec::new(Family::FullPairwise), coefs)
        }
    }
}

fn criterion_9(report: &mut Report) {
    let design = four_species_design();
    let candidates = select::default_candidates(Some(Grouping::parse("1,1,2,2")));
    let opts = SelectOptions::default();
    let families = [
        Family::AveragePairwise,
        Family::FunctionalGroup,
        Family::AdditiveSpecies,
        Family::FullPairwise,
    ];
    let thetas = [0.05, 0.35, 0.77, 1.0, 1.33];
    let mut worst_theta: f64 = 0.0;
    let mut worst_coef: f64 = 0.0;
    let mut wrong = Vec::new();
    for family in families {
        for &theta in &thetas {
            let (truth, spec, mut coefs) = family_truth(family, theta);
            let mut rng = rng::substream(SEED, &[9]);
            let y = simulate_response(&design, &truth, &mut rng).unwrap();
            let est = profile::estimate_theta(&design, &y, &spec, &EstimateOptions::default().without_ci()).unwrap();
            worst_theta = worst_theta.max((est.theta_hat - theta).abs());
            if family == Family::FunctionalGroup {
                // omega labels follow the grouping's label names
                let names: Vec<&String> = est.fit.names.iter().filter(|n| n.starts_with("omega")).collect();
                let values = [4.0, 11.0, 6.5];
                let mut expected = Vec::new();
                for n in names {
                    let v = match n.as_str() {
                        "omega_1_1" => values[0],
                        "omega_1_2" => values[1],
                        "omega_2_2" => values[2],
                        other => panic!("unexpected column {other}"),
                    };
                    expected.push((n.clone(), v));
                }
                coefs.extend(expected);
            }
            for (name, want) in &coefs {
                let got = est.fit.coefficient(name).unwrap_or(f64::NAN);
                worst_coef = worst_coef.max((got - want).abs() / want.abs());
            }
            for p in Procedure::ALL {
                let r = select::select(p, &design, &y, &candidates, &opts).unwrap();
                if r.chosen_family() != family {
                    wrong.push(format!("{p}:{}@{theta}->{}", family.name(), r.chosen_label));
                }
            }
        }
    }
    report.check(
        9,
        worst_theta < 1e-4 && worst_coef < 1e-8 && wrong.is_empty(),
        format!(
            "sigma=0: max theta error {worst_theta:.2e}, max relative coefficient error {worst_coef:.2e}, {} wrong selections{}",
            wrong.len(),
            if wrong.is_empty() { String::new() } else { format!(" [{}]", wrong.join(", ")) }
        ),
    );
}

fn criterion_10(report: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(
        &cfg,
        "[design]\nbuiltin = \"four\"\n\n[grid]\nthetas = [0.35, 1.17]\nsigmas = [0.8, 1.2]\nreplicates = 12\nseed = 77\n",
    )
    .unwrap();
    let run = |threads: usize| {
        let out = dir.path().join(format!("out{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_gdi"))
            .args(["study", "--config"])
            .arg(&cfg)
            .args(["--threads", &threads.to_string(), "--out"])
            .arg(&out)
            .output()
            .expect("run gdi");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        out
    };
    let outs: Vec<_> = [1, 4, 8].iter().map(|&t| run(t)).collect();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let mut same = true;
    for f in [simulate::SUMMARY_FILE, simulate::DATASETS_FILE, simulate::METADATA_FILE] {
        let base = read(&outs[0], f);
        same &= outs[1..].iter().all(|d| read(d, f) == base);
    }
    report.check(
        10,
        same,
        "study outputs at 1, 4 and 8 threads are byte-identical".into(),
    );
}

fn main() {
    let start = Instant::now();
    let mut report = Report { failures: 0 };
    criterion_1_and_3(&mut report);
    criterion_2(&mut report);
    criterion_4(&mut report);
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report);
    criterion_10(&mut report);
    println!(
        "acceptance: {} failed, {:.1}s",
        report.failures,
        start.elapsed().as_secs_f64()
    );
    if report.failures > 0 {
        std::process::exit(1);
    }
}

