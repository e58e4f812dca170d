use sparsyn::linalg::Mat;
use sparsyn::lmi::{evaluate, Affine, Model, Sense, Target};
use sparsyn::sdp::{check_certificate, solve_sdp, SdpOptions, SdpStatus};

#[test]
fn two_by_two_from_blocks_solves_to_one() {
    let mut m = Model::new();
    let x = Affine::var(m.scalar("x"));
    let blk = Affine::block_sym(&[vec![Some(x.clone()), Some(Affine::scalar(1.0))], vec![None, Some(x.clone())]]).unwrap();
    m.constrain("pair", blk, Sense::Psd, false);
    m.minimize(x);
    let c = m.compile().unwrap();
    assert_eq!(c.problem.block_dims(), vec![2]);
    let sol = solve_sdp(&c.problem, &SdpOptions::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-6);
}

#[test]
fn symmetric_variable_contributes_triangle() {
    for n in 1..6 {
        let mut m = Model::new();
        let x = m.symmetric("X", n);
        m.positive("psd", Affine::var(x));
        m.minimize(Affine::var(x).trace().unwrap());
        let c = m.compile().unwrap();
        assert_eq!(c.problem.num_vars, n * (n + 1) / 2);
    }
}

/// Lyapunov-type model `sym(A X) + I ≺ 0`, `X ≻ 0`, `min tr X`.
fn lyapunov_model() -> (Model, Mat) {
    let a = Mat::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
    let mut m = Model::new();
    let x = m.symmetric("X", 3);
    let xa = Affine::var(x);
    m.negative("lyap", xa.lmul(&a).unwrap().sym().unwrap().add_const(&Mat::identity(3, 3)).unwrap());
    m.positive("pos", xa.clone());
    m.minimize(xa.trace().unwrap());
    (m, a)
}

#[test]
fn evaluation_matches_certificate() {
    let (m, _) = lyapunov_model();
    let c = m.compile().unwrap();
    let opts = SdpOptions::default();
    let sol = solve_sdp(&c.problem, &opts).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    let cert = check_certificate(&c.problem, &sol, &opts);
    let asg = c.assignment(&sol.x);
    for (con, cc) in m.constraints().iter().zip(&c.constraints) {
        let ev = evaluate(&con.expr, &asg).unwrap();
        let Target::Block(k) = cc.target else { panic!("inequality compiled to equalities") };
        let from_expr = match con.sense {
            Sense::Psd => ev.min_eig.unwrap(),
            Sense::Nsd => -ev.max_eig.unwrap(),
            Sense::Zero => unreachable!(),
        } - cc.margin;
        assert!((from_expr - cert.primal_min_eigs[k]).abs() <= 1e-12 * (1.0 + ev.value.norm()), "{}", con.name);
    }
}

#[test]
fn inequality_values_are_symmetric() {
    let (m, _) = lyapunov_model();
    let c = m.compile().unwrap();
    let sol = solve_sdp(&c.problem, &SdpOptions::default()).unwrap();
    let asg = c.assignment(&sol.x);
    for con in m.constraints() {
        let v = evaluate(&con.expr, &asg).unwrap().value;
        assert!((&v - v.transpose()).norm() <= 1e-12 * v.norm().max(1.0));
    }
}

#[test]
fn strict_constraint_keeps_its_margin() {
    let (m, a) = lyapunov_model();
    let c = m.compile().unwrap();
    let sol = solve_sdp(&c.problem, &SdpOptions::default()).unwrap();
    let x = c.assignment(&sol.x);
    let lyap = &m.constraints()[0];
    let ev = evaluate(&lyap.expr, &x).unwrap();
    let eps = c.constraints[0].margin;
    assert!(eps > 0.0);
    assert!(ev.max_eig.unwrap() <= -eps / 2.0, "{} vs {eps}", ev.max_eig.unwrap());
    assert_eq!(a.nrows(), 3);
}

#[test]
fn sym_of_scaled_variable() {
    let mut m = Model::new();
    let x = m.scalar("x");
    let e = Affine::var(x).lmul(&Mat::from_element(1, 1, 1.0)).unwrap().sym().unwrap();
    let mut asg = sparsyn::lmi::Assignment::default();
    asg.set(x, Mat::from_element(1, 1, 2.0));
    assert_eq!(evaluate(&e, &asg).unwrap().value[(0, 0)], 4.0);
}
