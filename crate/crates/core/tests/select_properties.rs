use std::collections::BTreeMap;

use gdi::design::{four_species_design, nine_species_design};
use gdi::rng::substream;
use gdi::select::{default_candidates, lack_of_fit, select, Procedure, SelectOptions};
use gdi::simulate::{simulate_response, StructureEffect, TruthModel};
use gdi::{Family, Grouping, InteractionSpec};

#[test]
fn reference_choice_barely_matters_for_procedure_b() {
    let d = nine_species_design();
    let candidates = default_candidates(Some(Grouping::parse("1,1,1,1,1,2,2,3,3")));
    let avg = SelectOptions::default();
    let full = SelectOptions {
        reference: InteractionSpec::new(Family::FullPairwise),
        ..SelectOptions::default()
    };
    let mut agree = 0;
    let mut total = 0;
    for (t, theta) in [0.35, 1.0].into_iter().enumerate() {
        for (s, sigma) in [0.8, 1.0].into_iter().enumerate() {
            let truth = TruthModel::nine_species(theta, sigma);
            for r in 0..25 {
                let y = simulate_response(&d, &truth, &mut substream(5, &[t as u64, s as u64, r])).unwrap();
                let a = select(Procedure::B, &d, &y, &candidates, &avg).unwrap();
                let b = select(Procedure::B, &d, &y, &candidates, &full).unwrap();
                agree += usize::from(a.chosen_label == b.chosen_label);
                total += 1;
            }
        }
    }
    assert!(agree as f64 / total as f64 >= 0.95, "{agree} of {total}");
}

#[test]
fn procedures_a_and_c_agree_when_theta_is_one() {
    let d = four_species_design();
    let candidates = default_candidates(Some(Grouping::parse("1,1,2,2")));
    let truth = TruthModel::four_species(1.0, 1.0);
    let opts = SelectOptions::default();
    let reps = 60;
    let agree = (0..reps)
        .filter(|&r| {
            let y = simulate_response(&d, &truth, &mut substream(6, &[r])).unwrap();
            let a = select(Procedure::A, &d, &y, &candidates, &opts).unwrap();
            let c = select(Procedure::C, &d, &y, &candidates, &opts).unwrap();
            a.chosen_label == c.chosen_label
        })
        .count();
    assert!(agree as f64 / reps as f64 >= 0.9, "{agree} of {reps}");
}

#[test]
fn lack_of_fit_test_has_nominal_size() {
    let d = four_species_design();
    let truth = TruthModel::four_species(0.6, 1.0);
    let spec = InteractionSpec::new(Family::FullPairwise);
    let reps = 400;
    let rejected = (0..reps)
        .filter(|&r| {
            let y = simulate_response(&d, &truth, &mut substream(8, &[r])).unwrap();
            lack_of_fit(&d, &y, &spec, 0.6).unwrap().test.p_value < 0.05
        })
        .count();
    let rate = rejected as f64 / reps as f64;
    assert!((0.02..=0.09).contains(&rate), "rejection rate {rate}");
}

#[test]
fn treatment_effect_is_estimated_alongside_interactions() {
    let d = four_species_design().crossed_with("treatment", &["A", "B"]).unwrap();
    let levels = BTreeMap::from([("A".to_string(), 5.0), ("B".to_string(), 8.0)]);
    let truth = TruthModel::additive(vec![10.0, 12.0, 9.0, 11.0], &[2.0, 6.0, 4.0, 8.0], 1.0, 0.5)
        .unwrap()
        .with_structure("treatment", StructureEffect::Levels(levels));
    let y = simulate_response(&d, &truth, &mut substream(9, &[0])).unwrap();
    let candidates = default_candidates(None);
    let res = select(Procedure::B, &d, &y, &candidates, &SelectOptions::default()).unwrap();
    assert_eq!(res.chosen_label, "additive_species");
    let shift = res.chosen_fit.coefficient("alpha_treatment_B").unwrap();
    assert!((shift - 3.0).abs() < 0.3, "{shift}");
    // level A is absorbed by the identity effects
    let beta1 = res.chosen_fit.coefficient("beta_1").unwrap();
    assert!((beta1 - 15.0).abs() < 1.0, "{beta1}");
}

#[test]
fn procedure_c_reports_an_estimate_for_every_candidate() {
    let d = nine_species_design();
    let y = simulate_response(&d, &TruthModel::nine_species(0.35, 1.0), &mut substream(10, &[0])).unwrap();
    let candidates = default_candidates(Some(Grouping::parse("1,1,1,1,1,2,2,3,3")));
    let res = select(Procedure::C, &d, &y, &candidates, &SelectOptions::default()).unwrap();
    assert_eq!(res.per_candidate.len(), 4);
    assert!(res.per_candidate.iter().all(|c| c.theta_hat.is_some()));
    assert_eq!(res.chosen_label, "full_pairwise");
}
