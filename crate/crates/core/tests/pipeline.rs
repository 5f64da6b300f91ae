use std::fs::File;

use distreg::evalcv::{
    biomarkers, crossvalidate, fit_functional, fit_scalar, spearman_matrix, CvSpec, ModelConfig, Outcome, Transform,
    BIOMARKER_KINDS,
};
use distreg::ingest::{join_outcomes, load_epochs, synthetic_start, write_epochs, write_outcomes, EpochWindow};
use distreg::represent::{barycenter, represent_cohort, GridSpec, RepresentOptions};
use distreg::synthgen::{simulate_cohort, CohortDesign, ExpWeibullParams, HazardShape};
use distreg::{Execution, RepresentationKind};

/// Two exponential groups whose scales differ by 10%: informative but not
/// separable, so small logistic fits stay finite.
fn overlapping(n: usize, m: usize) -> CohortDesign {
    let mut d = CohortDesign::null(n, m, HazardShape::Constant.params());
    d.groups[1].params = ExpWeibullParams { scale: 22.0, ..d.groups[1].params };
    d
}

#[test]
fn files_on_disk_round_trip_into_the_same_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let design = CohortDesign { round_counts: true, ..CohortDesign::mean_matched(20, 300).unwrap() };
    let cohort = simulate_cohort(&design, 17).unwrap();
    let (epochs, outcomes) = (dir.path().join("epochs.csv"), dir.path().join("outcomes.csv"));
    write_epochs(File::create(&epochs).unwrap(), &cohort, EpochWindow::default(), synthetic_start()).unwrap();
    write_outcomes(File::create(&outcomes).unwrap(), &cohort).unwrap();

    let table = load_epochs(&epochs, EpochWindow::default()).unwrap();
    let joined = join_outcomes(&table, &outcomes, 60).unwrap();
    assert_eq!(joined, cohort);
}

#[test]
fn execution_modes_agree_bit_for_bit() {
    let cohort = simulate_cohort(&overlapping(25, 200), 3).unwrap();
    let spec = CvSpec { replications: 3, seed: 9, ..CvSpec::default() };
    let config = ModelConfig::default();
    for kind in [RepresentationKind::ScalarMean, RepresentationKind::Quantile, RepresentationKind::Hazard] {
        let a = crossvalidate(&cohort, kind, Transform::Log1, Outcome::Binary, &spec, &config, Execution::Sequential)
            .unwrap();
        let b = crossvalidate(&cohort, kind, Transform::Log1, Outcome::Binary, &spec, &config, Execution::Parallel)
            .unwrap();
        assert_eq!(a, b, "{kind}");
        assert!(a.per_replication.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn continuous_outcome_cross_validates() {
    let cohort = simulate_cohort(&CohortDesign::mean_matched(30, 200).unwrap(), 4).unwrap();
    let spec = CvSpec { replications: 2, seed: 1, stratified: false, ..CvSpec::default() };
    let r = crossvalidate(
        &cohort,
        RepresentationKind::Quantile,
        Transform::Raw,
        Outcome::Continuous,
        &spec,
        &ModelConfig::default(),
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(r.per_replication.len(), 2);
    // EDSS carries the group effect, and the quantile curve separates groups
    assert!(r.metric_mean > 0.3, "{r:?}");
}

#[test]
fn group_barycenters_differ_for_the_mean_matched_design() {
    let cohort = simulate_cohort(&CohortDesign::mean_matched(30, 400).unwrap(), 5).unwrap();
    let (_, curves) = represent_cohort(
        &cohort,
        &GridSpec::default(),
        RepresentationKind::Quantile,
        &RepresentOptions::default(),
        Execution::Parallel,
    )
    .unwrap();
    let split = |g: u8| {
        let members: Vec<_> =
            cohort.iter().zip(&curves).filter(|(s, _)| s.outcome_binary == Some(g)).map(|(_, c)| c.clone()).collect();
        barycenter(&members).unwrap()
    };
    let (low, high) = (split(0), split(1));
    // equal means, different shapes: the curves must cross
    let diff: Vec<f64> = low.values.iter().zip(&high.values).map(|(a, b)| a - b).collect();
    assert!(diff.iter().any(|d| *d > 0.0) && diff.iter().any(|d| *d < 0.0));
}

#[test]
fn biomarkers_and_their_correlations_are_well_formed() {
    let cohort = simulate_cohort(&overlapping(40, 300), 6).unwrap();
    let config = ModelConfig::default();
    let models: Vec<_> = BIOMARKER_KINDS
        .iter()
        .map(|&k| fit_functional(&cohort, k, Outcome::Binary, &config, Execution::Parallel).unwrap())
        .collect();
    let scalar = fit_scalar(&cohort, Outcome::Binary, &config).unwrap();
    let table = biomarkers(&cohort, &models, &scalar, &RepresentOptions::default(), Execution::Parallel).unwrap();
    assert_eq!(table.subject_ids.len(), 80);
    let rho = spearman_matrix(&table).unwrap();
    for i in 0..6 {
        assert_eq!(rho.values[i][i], Some(1.0));
        for j in 0..6 {
            assert_eq!(rho.values[i][j], rho.values[j][i]);
            if let Some(r) = rho.values[i][j] {
                assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}

#[test]
fn null_cohort_has_no_systematic_signal() {
    let design = CohortDesign::null(30, 200, HazardShape::Increasing.params());
    let cohort = simulate_cohort(&design, 8).unwrap();
    let spec = CvSpec { replications: 10, seed: 2, ..CvSpec::default() };
    let r = crossvalidate(
        &cohort,
        RepresentationKind::ScalarMean,
        Transform::Raw,
        Outcome::Binary,
        &spec,
        &ModelConfig::default(),
        Execution::Parallel,
    )
    .unwrap();
    assert!((0.25..0.75).contains(&r.metric_mean), "{}", r.metric_mean);
}
