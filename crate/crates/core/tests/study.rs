use gdi::simulate::{
    run_study, write_datasets_csv, write_summary_csv, Study, StudyConfig, StudyKind,
};

fn robustness(sigmas: Vec<f64>, replicates: usize) -> Study {
    let mut cfg = StudyConfig::builtin("four");
    cfg.grid.thetas = vec![0.5];
    cfg.grid.sigmas = sigmas;
    cfg.grid.replicates = replicates;
    cfg.grid.seed = 31;
    cfg.procedures.studies = vec![StudyKind::Robustness];
    Study::new(cfg).unwrap()
}

#[test]
fn estimates_spread_more_with_more_noise() {
    let study = robustness(vec![0.8, 1.2], 150);
    let res = run_study(&study);
    for spec in &study.candidates {
        let label = spec.label();
        let lo = res.summary.get(0.5, Some(0.8), &label, "sd_theta_hat").unwrap();
        let hi = res.summary.get(0.5, Some(1.2), &label, "sd_theta_hat").unwrap();
        assert!(hi > lo, "{label}: {lo} vs {hi}");
    }
}

#[test]
fn scaled_spread_is_similar_across_structures() {
    let study = robustness(vec![1.0], 150);
    let res = run_study(&study);
    let scaled: Vec<f64> = study
        .candidates
        .iter()
        .map(|s| res.summary.get(0.5, Some(1.0), &s.label(), "scaled_sd_theta_hat").unwrap())
        .collect();
    let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min < 2.0, "{scaled:?}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut cfg = StudyConfig::builtin("four");
    cfg.grid.thetas = vec![0.35, 1.0];
    cfg.grid.sigmas = vec![1.0];
    cfg.grid.replicates = 6;
    cfg.grid.seed = 77;
    let study = Study::new(cfg).unwrap();
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let res = pool.install(|| run_study(&study));
        let mut summary = Vec::new();
        write_summary_csv(&study, &res.summary, &mut summary).unwrap();
        let mut datasets = Vec::new();
        write_datasets_csv(&study, &res.records, &mut datasets).unwrap();
        (summary, datasets)
    };
    assert_eq!(render(1), render(4));
}

#[test]
fn any_dataset_can_be_regenerated_alone() {
    let study = robustness(vec![0.9, 1.1], 5);
    let a = study.dataset(0, 1, 3).unwrap();
    let b = study.with_studies(&[StudyKind::Reparam]).dataset(0, 1, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, study.dataset(0, 1, 2).unwrap());
}
