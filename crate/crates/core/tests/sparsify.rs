use sparsyn::linalg::Mat;
use sparsyn::model::GeneralizedPlant;
use sparsyn::sparsify::*;
use sparsyn::synth::{Mode, SynthOptions, SynthesisSpec};
use sparsyn::Error;

fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// Unstable scalar state driven by two identical actuators.
fn duplicate_actuators() -> GeneralizedPlant {
    GeneralizedPlant::new(s(1.0), Mat::from_row_slice(1, 2, &[1.0, 1.0]), s(1.0), s(1.0), Mat::zeros(1, 2), s(0.0), s(1.0), s(0.0))
        .unwrap()
}

/// Three decoupled unstable states, one actuator each; the third is barely
/// unstable so its actuator is used far less than the others.
fn three_needed() -> GeneralizedPlant {
    let a = Mat::from_diagonal(&sparsyn::linalg::Vector::from_vec(vec![1.0, 1.0, 0.05]));
    let i = Mat::identity(3, 3);
    GeneralizedPlant::new(a, i.clone(), i.clone(), i.clone(), Mat::zeros(3, 3), Mat::zeros(3, 3), i, Mat::zeros(3, 3)).unwrap()
}

fn opts() -> SynthOptions {
    SynthOptions::default()
}

#[test]
fn duplicates_collapse_to_one_channel() {
    for mode in Mode::ALL {
        let spec = SynthesisSpec::new(duplicate_actuators(), mode, 4.0);
        let t = sparsify(&spec, &ReweightPolicy::default(), &opts()).unwrap();
        assert_eq!(t.final_active_actuators().len(), 1, "{mode:?}");
        let last = t.iterations.last().unwrap();
        let mags = t.last.actuator_magnitudes();
        let max = mags.iter().copied().fold(0.0, f64::max);
        let off = 1 - last.active_actuators[0];
        assert!(mags[off] <= 1e-3 * max, "{mode:?}: {mags:?}");
        let pruned = t.pruned.as_ref().unwrap();
        assert!(pruned.result.verification.passed);
        assert!(pruned.result.verification.performance.value < 4.0);
        assert_eq!(pruned.plant.dims().nu, 1);
    }
}

#[test]
fn single_outer_iteration() {
    let spec = SynthesisSpec::new(duplicate_actuators(), Mode::SfHinf, 4.0);
    let policy = ReweightPolicy { max_outer: 1, ..Default::default() };
    let t = reweight_iterate(&spec, &policy, &opts()).unwrap();
    assert_eq!(t.iterations.len(), 1);
    assert_eq!(t.stop, StopReason::MaxOuter);
    assert!(t.iterations[0].previous_under_weights.is_none());
}

#[test]
fn already_sparse_reaches_fixed_point() {
    let p = duplicate_actuators().select_actuators(&[0]);
    let t = reweight_iterate(&SynthesisSpec::new(p, Mode::SfH2, 4.0), &ReweightPolicy::default(), &opts()).unwrap();
    assert_eq!(t.stop, StopReason::FixedPoint);
    assert_eq!(t.iterations.len(), 2);
}

#[test]
fn reweighted_objective_never_increases() {
    let p = sparsyn::bench::make_plant(&sparsyn::bench::PlantFamily::mass_spring_chain(3)).unwrap();
    for mode in [Mode::SfH2, Mode::SfHinf] {
        let g0 = if mode == Mode::SfH2 { 3.0 } else { 2.0 };
        let t = reweight_iterate(&SynthesisSpec::new(p.clone(), mode, g0), &ReweightPolicy::default(), &opts()).unwrap();
        for it in &t.iterations[1..] {
            let bound = it.previous_under_weights.unwrap();
            assert!(it.objective <= bound * (1.0 + 1e-5) + 1e-9, "{mode:?} #{}: {} > {bound}", it.index, it.objective);
        }
    }
}

#[test]
fn pruning_nothing_keeps_the_objective() {
    let spec = SynthesisSpec::new(three_needed(), Mode::SfHinf, 4.0);
    let policy = ReweightPolicy { max_outer: 1, threshold_ratio: 0.0, ..Default::default() };
    let t = sparsify(&spec, &policy, &opts()).unwrap();
    let pruned = t.pruned.unwrap();
    assert_eq!(pruned.kept_actuators, vec![0, 1, 2]);
    let (a, b) = (t.iterations[0].objective, pruned.result.objective);
    assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn aggressive_threshold_prunes_a_needed_actuator() {
    let spec = SynthesisSpec::new(three_needed(), Mode::SfHinf, 4.0);
    let policy = ReweightPolicy { max_outer: 1, threshold_ratio: 0.5, ..Default::default() };
    let e = sparsify(&spec, &policy, &opts()).unwrap_err();
    assert!(matches!(e, Error::ReducedInfeasible { threshold, .. } if threshold == 0.5), "{e}");
}

#[test]
fn runs_are_deterministic() {
    let spec = SynthesisSpec::new(duplicate_actuators(), Mode::OfHinf, 4.0);
    let a = sparsify(&spec, &ReweightPolicy::default(), &opts()).unwrap();
    let b = sparsify(&spec, &ReweightPolicy::default(), &opts()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn invalid_policies_rejected() {
    let spec = SynthesisSpec::new(duplicate_actuators(), Mode::SfHinf, 4.0);
    for bad in [
        ReweightPolicy { epsilon: 0.0, ..Default::default() },
        ReweightPolicy { max_outer: 0, ..Default::default() },
        ReweightPolicy { threshold_ratio: 1.0, ..Default::default() },
    ] {
        assert!(matches!(reweight_iterate(&spec, &bad, &opts()), Err(Error::InvalidParameter(_))));
    }
}

#[test]
fn weight_update_breaks_ties_and_normalizes() {
    let w = update_weights(&[1.0, 1.0, 0.0], &[0, 1], 1e-4);
    assert_eq!(w[2], 1.0);
    assert!((w[1] / w[0] - TIE_BREAK).abs() < 1e-9);
    let w = update_weights(&[2.0, 1.0], &[0, 1], 1e-4);
    assert!((w[0] - (1.0 + 1e-4) / (2.0 + 1e-4)).abs() < 1e-12);
    assert_eq!(w[1], 1.0);
}

#[test]
fn infeasible_first_solve_reports_iteration() {
    let mut p = duplicate_actuators();
    p.bu.fill(0.0);
    let spec = SynthesisSpec::new(p, Mode::SfHinf, 4.0);
    match reweight_iterate(&spec, &ReweightPolicy::default(), &opts()) {
        Err(Error::Iteration { iteration, source }) => {
            assert_eq!(iteration, 1);
            assert!(source.is_infeasible());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn trace_csv_has_one_row_per_iteration() {
    let spec = SynthesisSpec::new(duplicate_actuators(), Mode::JointHinf, 4.0);
    let t = reweight_iterate(&spec, &ReweightPolicy::default(), &opts()).unwrap();
    assert_eq!(t.to_csv().lines().count(), t.iterations.len() + 1);
}
