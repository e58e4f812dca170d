use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsyn::analysis::{self, freq_response_gap};
use sparsyn::linalg::Mat;
use sparsyn::model::{DynamicController, GeneralizedPlant, StateSpace};
use sparsyn::synth::*;
use sparsyn::Error;

fn m(r: usize, c: usize, v: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, v)
}

fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// A = 1, Bw = 1, Cz = 1, Du = Dw = 0, Cy = cy, Dyw = 0 with the given Bu.
fn scalar(bu: &[f64], cy: f64) -> GeneralizedPlant {
    let nu = bu.len();
    GeneralizedPlant::new(s(1.0), m(1, nu, bu), s(1.0), s(1.0), Mat::zeros(1, nu), s(0.0), s(cy), s(0.0)).unwrap()
}

/// z = [x; u] so the H2 infimum is positive: the LQR cost with Q = R = 1.
fn scalar_with_effort() -> GeneralizedPlant {
    GeneralizedPlant::new(s(1.0), s(1.0), s(1.0), m(2, 1, &[1.0, 0.0]), m(2, 1, &[0.0, 1.0]), Mat::zeros(2, 1), s(1.0), s(0.0))
        .unwrap()
}

fn sf(p: GeneralizedPlant, kind: PerformanceKind, g0: f64) -> SfSpec {
    SfSpec::new(p, kind, g0)
}

fn opts() -> SynthOptions {
    SynthOptions::default()
}

#[test]
fn scalar_hinf_matches_oracle() {
    let r = synth_sf_hinf(&sf(scalar(&[1.0], 1.0), PerformanceKind::Hinf, 2.0), &opts()).unwrap();
    // min (1+a)²/(2a) over a ≥ 1/2 is 2 at a = 1, i.e. K = −2
    assert!((r.k.k[(0, 0)] + 2.0).abs() < 1e-3, "{}", r.k.k);
    assert!((r.gamma[0] - 2.0).abs() < 1e-3);
    assert!(r.verification.performance.value < 2.0);
    assert!(r.verification.channels[0].value <= r.gamma[0].sqrt() * (1.0 + 1e-5));
}

#[test]
fn scalar_h2_with_loose_bound() {
    let r = synth_sf_h2(&sf(scalar(&[1.0], 1.0), PerformanceKind::H2, 10.0), &opts()).unwrap();
    assert!(r.verification.performance.value < 10.0);
    assert!((r.gamma[0] - 2.0).abs() < 1e-3);
}

#[test]
fn no_actuation_is_infeasible() {
    let e = synth_sf_hinf(&sf(scalar(&[0.0], 1.0), PerformanceKind::Hinf, 2.0), &opts()).unwrap_err();
    assert!(matches!(e, Error::InfeasiblePerformance(_)), "{e}");
}

#[test]
fn h2_rejects_feedthrough() {
    let mut p = scalar(&[1.0], 1.0);
    p.dw = s(0.1);
    let e = synth_sf_h2(&sf(p.clone(), PerformanceKind::H2, 10.0), &opts()).unwrap_err();
    assert!(matches!(e, Error::NonzeroFeedthrough { .. }));
    let e = synth_of_h2(&sf(p, PerformanceKind::H2, 10.0), &opts()).unwrap_err();
    assert!(matches!(e, Error::NonzeroFeedthrough { .. }));
}

#[test]
fn channel_caps_hold_and_cost() {
    let p = scalar(&[1.0, 1.0], 1.0);
    let mut spec = sf(p, PerformanceKind::Hinf, 2.0);
    spec.rho = vec![1.0, 3.0];
    let free = synth_sf_hinf(&spec, &opts()).unwrap();
    let caps = vec![0.5 * free.gamma[0], 10.0];
    spec.gamma_max = Some(caps.clone());
    let capped = synth_sf_hinf(&spec, &opts()).unwrap();
    for (g, c) in capped.gamma.iter().zip(&caps) {
        assert!(g <= c, "{g} > {c}");
    }
    assert!(capped.objective >= free.objective * (1.0 - 1e-6));
    assert!(capped.objective > free.objective * 1.01, "the cap binds");
}

#[test]
fn looser_performance_never_costs_more() {
    let p = sparsyn::bench::make_plant(&sparsyn::bench::PlantFamily::mass_spring_chain(2)).unwrap();
    let mut last = f64::INFINITY;
    for g0 in [2.0, 3.0, 5.0, 10.0] {
        let r = synth_sf_h2(&sf(p.clone(), PerformanceKind::H2, g0), &opts()).unwrap();
        assert!(r.objective <= last * (1.0 + 1e-5), "γ0 = {g0}: {} after {last}", r.objective);
        last = r.objective;
    }
}

#[test]
fn recovered_gain_keeps_half_margin() {
    for (kind, g0) in [(PerformanceKind::Hinf, 2.0), (PerformanceKind::H2, 10.0)] {
        let spec = sf(scalar(&[1.0], 1.0), kind, g0);
        let r = match kind {
            PerformanceKind::Hinf => synth_sf_hinf(&spec, &opts()),
            PerformanceKind::H2 => synth_sf_h2(&spec, &opts()),
        }
        .unwrap();
        for (name, slack) in recovery_margins(&spec, &r).unwrap() {
            assert!(slack >= 0.5e-7, "{name}: {slack}");
        }
    }
}

#[test]
fn tight_gamma_never_exceeds_gamma() {
    let spec = sf(scalar(&[1.0, 1.0], 1.0), PerformanceKind::Hinf, 2.0);
    let r = synth_sf_hinf(&spec, &opts()).unwrap();
    for (t, g) in r.gamma_tight.iter().zip(&r.gamma) {
        assert!(*t <= *g && *t >= 0.0);
    }
}

#[test]
fn output_feedback_near_state_feedback_optimum() {
    let r = synth_of_hinf(&sf(scalar(&[1.0], 1.0), PerformanceKind::Hinf, 2.0), &opts()).unwrap();
    assert!(r.verification.performance.value < 2.0);
    // state feedback is a lower bound: 2
    assert!(r.gamma[0] >= 2.0 * (1.0 - 1e-4) && r.gamma[0] <= 2.2, "{}", r.gamma[0]);
}

#[test]
fn output_feedback_h2_scalar() {
    let r = synth_of_h2(&sf(scalar(&[1.0], 1.0), PerformanceKind::H2, 10.0), &opts()).unwrap();
    assert!(r.verification.performance.value < 10.0);
}

#[test]
fn output_feedback_h2_respects_lqr_infimum() {
    // Riccati 2P − P² + 1 = 0 gives P = 1 + √2 and the optimal H2 norm √P
    let inf = (1.0 + 2f64.sqrt()).sqrt();
    let below = synth_of_h2(&sf(scalar_with_effort(), PerformanceKind::H2, 0.95 * inf), &opts()).unwrap_err();
    assert!(matches!(below, Error::InfeasiblePerformance(_)), "{below}");
    let above = synth_of_h2(&sf(scalar_with_effort(), PerformanceKind::H2, 1.05 * inf), &opts()).unwrap();
    assert!(above.verification.performance.value < 1.05 * inf);
    let sfr = synth_sf_h2(&sf(scalar_with_effort(), PerformanceKind::H2, 0.95 * inf), &opts()).unwrap_err();
    assert!(matches!(sfr, Error::InfeasiblePerformance(_)));
}

#[test]
fn measurement_noise_forces_zero_dk() {
    let mut p = scalar(&[1.0], 1.0);
    p.dyw = s(1.0);
    let r = synth_of_hinf(&sf(p, PerformanceKind::Hinf, 4.0), &opts()).unwrap();
    assert_eq!(r.hat.dk[(0, 0)], 0.0);
    assert_eq!(r.controller.dk[(0, 0)], 0.0);
    assert!(r.verification.performance.value < 4.0);
}

#[test]
fn undetectable_plant_is_infeasible() {
    let e = synth_of_hinf(&sf(scalar(&[1.0], 0.0), PerformanceKind::Hinf, 2.0), &opts()).unwrap_err();
    assert!(matches!(e, Error::InfeasiblePerformance(_)), "{e}");
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let a = random_mat(rng, n, n);
    &a * a.transpose() + Mat::identity(n, n) * 0.5
}

fn random_plant(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize) -> GeneralizedPlant {
    GeneralizedPlant::new(
        random_mat(rng, nx, nx),
        random_mat(rng, nx, nu),
        random_mat(rng, nx, 2),
        random_mat(rng, 2, nx),
        Mat::zeros(2, nu),
        Mat::zeros(2, 2),
        random_mat(rng, ny, nx),
        Mat::zeros(ny, 2),
    )
    .unwrap()
}

fn as_system(c: &DynamicController) -> StateSpace {
    StateSpace::new(c.ak.clone(), c.bk.clone(), c.ck.clone(), c.dk.clone()).unwrap()
}

#[test]
fn reconstruction_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (nx, nu, ny) = (3, 2, 2);
        let p = random_plant(&mut rng, nx, nu, ny);
        let ctrl = DynamicController {
            ak: random_mat(&mut rng, nx, nx),
            bk: random_mat(&mut rng, nx, ny),
            ck: random_mat(&mut rng, nu, nx),
            dk: random_mat(&mut rng, nu, ny),
        };
        let (x, y) = (random_spd(&mut rng, nx), random_spd(&mut rng, nx));
        let Ok((mm, nn)) = output_feedback_factor(&x, &y) else { continue };
        let hat = hat_transform(&ctrl, &p, &x, &y, &mm, &nn).unwrap();
        let back = reconstruct_controller(&hat, &p).unwrap();
        let gap = freq_response_gap(&as_system(&ctrl), &as_system(&back), &analysis::default_grid()).unwrap();
        let scale = 1.0 + ctrl.ak.norm() + ctrl.bk.norm() + ctrl.ck.norm() + ctrl.dk.norm();
        assert!(gap.max_gap <= 1e-8 * scale, "{}", gap.max_gap);
    }
}

fn output_feedback_factor(x: &Mat, y: &Mat) -> sparsyn::Result<(Mat, Mat)> {
    sparsyn::synth::output_feedback::factor_mn(x, y)
}

#[test]
fn zero_hat_reconstructs_to_zero_gains() {
    let p = random_plant(&mut ChaCha8Rng::seed_from_u64(2), 2, 1, 1);
    let half = Mat::identity(2, 2) * 0.5;
    let hat = HatController {
        ak: Mat::zeros(2, 2),
        bk: Mat::zeros(2, 1),
        ck: Mat::zeros(1, 2),
        dk: Mat::zeros(1, 1),
        x: half.clone(),
        y: half,
    };
    let c = reconstruct_controller(&hat, &p).unwrap();
    assert_eq!(c.dk.amax(), 0.0);
    assert_eq!(c.ck.amax(), 0.0);
    assert_eq!(c.bk.amax(), 0.0);
}

#[test]
fn inverse_pair_cannot_be_factored() {
    let p = random_plant(&mut ChaCha8Rng::seed_from_u64(3), 2, 1, 1);
    let hat = HatController {
        ak: Mat::zeros(2, 2),
        bk: Mat::zeros(2, 1),
        ck: Mat::zeros(1, 2),
        dk: Mat::zeros(1, 1),
        x: Mat::identity(2, 2) * 2.0,
        y: Mat::identity(2, 2) * 0.5,
    };
    assert!(matches!(reconstruct_controller(&hat, &p), Err(Error::ReconstructionFailure(_))));
}

#[test]
fn hat_transform_substitutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_plant(&mut rng, 3, 2, 2);
    let (x, y) = (random_spd(&mut rng, 3), random_spd(&mut rng, 3));
    let (mm, nn) = (random_mat(&mut rng, 3, 3), random_mat(&mut rng, 3, 3));
    let zero = DynamicController::zeros(3, 2, 2);
    let h = hat_transform(&zero, &p, &x, &y, &mm, &nn).unwrap();
    assert!((&h.ak - &y * &p.a * &x).amax() < 1e-12);
    assert_eq!((h.bk.amax(), h.ck.amax(), h.dk.amax()), (0.0, 0.0, 0.0));

    let mut d_only = zero;
    d_only.dk = random_mat(&mut rng, 2, 2);
    let h = hat_transform(&d_only, &p, &x, &y, &mm, &nn).unwrap();
    assert!((&h.bk - &y * &p.bu * &d_only.dk).amax() < 1e-12);
    assert!((&h.ck - &d_only.dk * &p.cy * &x).amax() < 1e-12);
}

#[test]
fn joint_without_actuator_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = random_plant(&mut rng, 2, 2, 2);
    p.a -= Mat::identity(2, 2) * 2.0;
    let mut spec = JointSpec::new(p, PerformanceKind::H2, 10.0);
    spec.mu = vec![0.0, 0.0];
    let r = synth_joint(&spec, &opts()).unwrap();
    assert!(r.verification.passed);
    // only sensor norms enter the objective
    let sensor_sum: f64 = r.norms.col_norms.iter().sum();
    assert!((r.objective - sensor_sum).abs() <= 1e-9 * (1.0 + sensor_sum));
}

#[test]
fn joint_scalar_keeps_both_channels() {
    for kind in [PerformanceKind::H2, PerformanceKind::Hinf] {
        let r = synth_joint(&JointSpec::new(scalar(&[1.0], 1.0), kind, 4.0), &opts()).unwrap();
        assert_eq!(r.norms.active_actuators, vec![0]);
        assert_eq!(r.norms.active_sensors, vec![0]);
    }
}

#[test]
fn joint_penalized_duplicate_sensor_is_dropped() {
    let p = GeneralizedPlant::new(s(1.0), s(1.0), s(1.0), s(1.0), s(0.0), s(0.0), m(2, 1, &[1.0, 1.0]), Mat::zeros(2, 1))
        .unwrap();
    let mut spec = JointSpec::new(p, PerformanceKind::Hinf, 4.0);
    spec.mu = vec![0.0];
    spec.nu = vec![0.0, 1.0];
    let r = synth_joint(&spec, &opts()).unwrap();
    let max = r.norms.col_norms.iter().copied().fold(0.0, f64::max);
    assert!(r.norms.col_norms[1] <= 1e-6 * max, "{:?}", r.norms.col_norms);
}

#[test]
fn joint_all_zero_weights_rejected() {
    let mut spec = JointSpec::new(scalar(&[1.0], 1.0), PerformanceKind::H2, 4.0);
    spec.mu = vec![0.0];
    spec.nu = vec![0.0];
    assert!(matches!(synth_joint(&spec, &opts()), Err(Error::InvalidParameter(_))));
}

fn random_hat(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize) -> HatController {
    loop {
        let hat = HatController {
            ak: random_mat(rng, nx, nx),
            bk: random_mat(rng, nx, ny),
            ck: random_mat(rng, nu, nx),
            dk: random_mat(rng, nu, ny),
            x: random_spd(rng, nx),
            y: random_spd(rng, nx),
        };
        if sparsyn::synth::output_feedback::factor_mn(&hat.x, &hat.y).is_ok() {
            return hat;
        }
    }
}

#[test]
fn zero_hat_row_reconstructs_to_zero_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = random_plant(&mut rng, 3, 3, 3);
    let mut hat = random_hat(&mut rng, 3, 3, 3);
    hat.ck.row_mut(1).fill(0.0);
    hat.dk.row_mut(1).fill(0.0);
    let rep = verify_sparsity_preservation(&hat, &p, 0.0);
    assert_eq!(rep.zero_rows, vec![1]);
    assert!(rep.ok(), "{:?}", rep.violations);
    let c = reconstruct_controller(&hat, &p).unwrap();
    assert!(c.output_map().row(1).amax() <= 1e-12 * c.output_map().amax().max(1.0));
}

#[test]
fn zero_hat_column_reconstructs_to_zero_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let p = random_plant(&mut rng, 3, 2, 4);
    let mut hat = random_hat(&mut rng, 3, 2, 4);
    hat.bk.column_mut(2).fill(0.0);
    hat.dk.column_mut(2).fill(0.0);
    let rep = verify_sparsity_preservation(&hat, &p, 0.0);
    assert_eq!(rep.zero_cols, vec![2]);
    assert!(rep.ok(), "{:?}", rep.violations);
}

#[test]
fn random_zero_groups_survive_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let (nx, nu, ny) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..4));
        let p = random_plant(&mut rng, nx, nu, ny);
        let mut hat = random_hat(&mut rng, nx, nu, ny);
        for i in 0..nu {
            if rng.gen_bool(0.4) {
                hat.ck.row_mut(i).fill(0.0);
                hat.dk.row_mut(i).fill(0.0);
            }
        }
        for j in 0..ny {
            if rng.gen_bool(0.4) {
                hat.bk.column_mut(j).fill(0.0);
                hat.dk.column_mut(j).fill(0.0);
            }
        }
        let rep = verify_sparsity_preservation(&hat, &p, 0.0);
        assert!(rep.ok(), "{:?}", rep.violations);
    }
}

#[test]
fn unified_entry_point_dispatches() {
    let p = scalar(&[1.0], 1.0);
    for mode in Mode::ALL {
        let r = synthesize(&SynthesisSpec::new(p.clone(), mode, 4.0), &opts()).unwrap();
        assert_eq!(r.mode, mode);
        assert!(r.verification.passed);
        assert_eq!(r.active_actuators, vec![0]);
        assert_eq!(mode.name().parse::<Mode>().unwrap(), mode);
    }
}
