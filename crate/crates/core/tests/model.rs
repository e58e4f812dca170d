use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsyn::analysis::freq_response;
use sparsyn::linalg::Mat;
use sparsyn::model::{validate_plant, Controller, DynamicController, GeneralizedPlant, StateFeedbackGain};

type CMat = DMatrix<Complex<f64>>;

fn rnd(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn cx(m: &Mat) -> CMat {
    m.map(|v| Complex::new(v, 0.0))
}

/// `C (jw I − A)⁻¹ B + D`, computed directly.
fn tf(a: &Mat, b: &Mat, c: &Mat, d: &Mat, w: f64) -> CMat {
    let n = a.nrows();
    let res = (CMat::identity(n, n) * Complex::new(0.0, w) - cx(a)).try_inverse().unwrap();
    cx(c) * res * cx(b) + cx(d)
}

fn plant(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize) -> GeneralizedPlant {
    GeneralizedPlant::new(
        rnd(rng, nx, nx),
        rnd(rng, nx, nu),
        rnd(rng, nx, 2),
        rnd(rng, 3, nx),
        rnd(rng, 3, nu),
        rnd(rng, 3, 2),
        rnd(rng, ny, nx),
        rnd(rng, ny, 2),
    )
    .unwrap()
}

#[test]
fn closed_loop_matches_lft_in_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let (nx, nu, ny, nk) = (3, 2, 2, 2);
        let p = plant(&mut rng, nx, nu, ny);
        let k = DynamicController {
            ak: rnd(&mut rng, nk, nk),
            bk: rnd(&mut rng, nk, ny),
            ck: rnd(&mut rng, nu, nk),
            dk: rnd(&mut rng, nu, ny) * 0.3,
        };
        let cl = Controller::Dynamic(k.clone()).close(&p).unwrap();
        for w in [0.1, 1.0, 7.0] {
            let p11 = tf(&p.a, &p.bw, &p.cz, &p.dw, w);
            let p12 = tf(&p.a, &p.bu, &p.cz, &p.du, w);
            let p21 = tf(&p.a, &p.bw, &p.cy, &p.dyw, w);
            let p22 = tf(&p.a, &p.bu, &p.cy, &Mat::zeros(ny, nu), w);
            let kk = tf(&k.ak, &k.bk, &k.ck, &k.dk, w);
            let loop_inv = (CMat::identity(nu, nu) - &kk * &p22).try_inverse().unwrap();
            let lft = p11 + p12 * loop_inv * kk * p21;
            let got = freq_response(&cl.performance(), w).unwrap();
            assert!((&got - &lft).norm() <= 1e-9 * (1.0 + lft.norm()), "w = {w}");
        }
    }
}

#[test]
fn state_feedback_closed_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = GeneralizedPlant::state_feedback(rnd(&mut rng, 3, 3), rnd(&mut rng, 3, 2), rnd(&mut rng, 3, 1), rnd(&mut rng, 2, 3))
        .unwrap();
    let k = rnd(&mut rng, 2, 3);
    let cl = Controller::StateFeedback(StateFeedbackGain::new(k.clone())).close(&p).unwrap();
    assert!((&cl.a - (&p.a + &p.bu * &k)).amax() < 1e-14);
    assert!((&cl.c - (&p.cz + &p.du * &k)).amax() < 1e-14);
    assert_eq!(cl.num_actuators(), 2);
}

#[test]
fn json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = plant(&mut rng, 3, 2, 2).with_names(vec!["left".into(), "right".into()], vec!["a".into(), "b".into()]).unwrap();
    let back = GeneralizedPlant::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(p, back);
}

#[test]
fn json_rejects_ragged_and_mismatched() {
    assert!(GeneralizedPlant::from_json(r#"{"A":[[1,2],[3]],"Bu":[[1],[1]],"Bw":[[1],[1]],"Cz":[[1,1]]}"#).is_err());
    assert!(GeneralizedPlant::from_json(r#"{"A":[[1]],"Bu":[[1],[1]],"Bw":[[1]],"Cz":[[1]]}"#).is_err());
}

#[test]
fn channel_selection_keeps_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = plant(&mut rng, 3, 3, 3);
    let q = p.select_actuators(&[2, 0]).select_sensors(&[1]);
    assert_eq!(q.bu.column(0), p.bu.column(2));
    assert_eq!(q.du.column(1), p.du.column(0));
    assert_eq!(q.cy.row(0), p.cy.row(1));
    assert_eq!(q.actuator_names, vec![p.actuator_names[2].clone(), p.actuator_names[0].clone()]);
    assert!(validate_plant(&q).is_ok());
}
