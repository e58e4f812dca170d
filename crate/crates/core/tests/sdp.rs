use sparsyn::linalg::{self, Mat};
use sparsyn::sdp::{
    check_certificate, read_dump, solve_sdp, write_dump, LinearEquality, SdpBlock, SdpOptions, SdpProblem,
    SdpSolution, SdpStatus,
};

/// min x s.t. [[x, 1], [1, x]] ⪰ 0
fn two_by_two() -> SdpProblem {
    let mut p = SdpProblem::new(1);
    p.objective[0] = 1.0;
    let mut b = SdpBlock::new(2);
    b.push(Some(0), 0, 0, 1.0);
    b.push(Some(0), 1, 1, 1.0);
    b.push(None, 0, 1, 1.0);
    p.blocks.push(b);
    p
}

fn solve(p: &SdpProblem) -> SdpSolution {
    solve_sdp(p, &SdpOptions::default()).unwrap()
}

fn assert_weak_duality(sol: &SdpSolution) {
    for r in &sol.log {
        let scale = 1.0 + r.primal_objective.abs() + r.dual_objective.abs();
        assert!(
            r.primal_objective >= r.dual_objective - 1e-7 * scale,
            "iterate {}: primal {} < dual {}",
            r.iteration,
            r.primal_objective,
            r.dual_objective
        );
    }
}

#[test]
fn two_by_two_solves_to_one() {
    let p = two_by_two();
    let sol = solve(&p);
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-6, "x = {}", sol.x[0]);
    let rep = check_certificate(&p, &sol, &SdpOptions::default());
    assert!(rep.ok(), "{:?}", rep.violations);
    assert!(rep.equality_residual <= 1e-8 && rep.dual_residual <= 1e-8);
    assert!(rep.relative_gap.abs() <= 1e-8);
    assert_weak_duality(&sol);
}

#[test]
fn nonnegative_scalar_goes_to_zero() {
    let mut p = SdpProblem::new(1);
    p.objective[0] = 1.0;
    let mut b = SdpBlock::new(1);
    b.push(Some(0), 0, 0, 1.0);
    p.blocks.push(b);
    let sol = solve(&p);
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!(sol.x[0].abs() < 1e-7);
    assert_weak_duality(&sol);
}

#[test]
fn corrupted_primal_is_flagged() {
    let p = two_by_two();
    let mut sol = solve(&p);
    sol.x[0] = 0.5;
    let rep = check_certificate(&p, &sol, &SdpOptions::default());
    assert!(!rep.ok());
    assert!((rep.primal_min_eigs[0] + 0.5).abs() < 1e-12);
    assert!(rep.violations.iter().any(|v| v.contains("primal block 0")));
}

#[test]
fn interior_point_flags_only_gap() {
    use rand::{Rng, SeedableRng};
    let p = two_by_two();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let mut sol = solve(&p);
        sol.x[0] = 1.5 + rng.gen::<f64>();
        // dual: Z ⪰ 0 projected onto trace(Z) = 1
        let g = Mat::from_fn(2, 2, |_, _| rng.gen::<f64>() - 0.5);
        let mut z = &g * g.transpose() + Mat::identity(2, 2) * 0.1;
        z /= z.trace();
        sol.z = vec![z];
        let rep = check_certificate(&p, &sol, &SdpOptions::default());
        assert_eq!(rep.violations.len(), 1, "{:?}", rep.violations);
        assert!(rep.violations[0].contains("gap"));
    }
}

/// min ⟨C, X⟩ over X ⪰ 0, trace X = 1 with X symmetric 4x4.
fn spectraplex(c: &Mat) -> (SdpProblem, Vec<(usize, usize)>) {
    let n = c.nrows();
    let mut idx = Vec::new();
    for i in 0..n {
        for j in i..n {
            idx.push((i, j));
        }
    }
    let mut p = SdpProblem::new(idx.len());
    let mut b = SdpBlock::new(n);
    let mut tr = LinearEquality { coeffs: vec![], rhs: 1.0 };
    for (v, &(i, j)) in idx.iter().enumerate() {
        p.objective[v] = if i == j { c[(i, i)] } else { 2.0 * c[(i, j)] };
        b.push(Some(v), i, j, 1.0);
        if i == j {
            tr.coeffs.push((v, 1.0));
        }
    }
    p.blocks.push(b);
    p.equalities.push(tr);
    (p, idx)
}

fn project_spectraplex(x: &Mat) -> Mat {
    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(x));
    // Euclidean projection of the eigenvalues onto the simplex
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let mut theta = 0.0;
    let mut acc = 0.0;
    for (k, &vk) in v.iter().enumerate() {
        acc += vk;
        let t = (acc - 1.0) / (k + 1) as f64;
        if vk - t > 0.0 {
            theta = t;
        }
    }
    let lam = eig.eigenvalues.map(|l| (l - theta).max(0.0));
    &eig.eigenvectors * Mat::from_diagonal(&lam) * eig.eigenvectors.transpose()
}

#[test]
fn random_trace_objective_matches_projected_subgradient() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let g = Mat::from_fn(4, 4, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let c = linalg::symmetrize(&g);
    let (p, _) = spectraplex(&c);
    let sol = solve(&p);
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert_weak_duality(&sol);

    let mut x = Mat::identity(4, 4) / 4.0;
    let mut best = f64::INFINITY;
    for k in 0..20_000 {
        let step = 0.5 / (1.0 + k as f64).sqrt();
        x = project_spectraplex(&(&x - &c * step));
        best = best.min(c.dot(&x));
    }
    assert!((sol.primal_objective - best).abs() < 1e-5, "{} vs {}", sol.primal_objective, best);
}

#[test]
fn objective_scaling_is_equivariant() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let g = Mat::from_fn(4, 4, |_, _| rng.gen::<f64>() - 0.5);
    let (p, _) = spectraplex(&linalg::symmetrize(&g));
    let mut p10 = p.clone();
    for c in &mut p10.objective {
        *c *= 10.0;
    }
    let a = solve(&p);
    let b = solve(&p10);
    assert!((b.primal_objective - 10.0 * a.primal_objective).abs() < 1e-6 * (1.0 + b.primal_objective.abs()));
    let dx = a.x.iter().zip(&b.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(dx < 1e-6, "argmin moved by {dx}");
}

#[test]
fn deterministic() {
    let (p, _) = spectraplex(&Mat::from_fn(4, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0 + (i == j) as u8 as f64));
    let a = solve(&p);
    let b = solve(&p);
    assert_eq!(a, b);
}

#[test]
fn infeasible_detected_with_certificate() {
    // x ≥ 0 and −1 − x ≥ 0
    let mut p = SdpProblem::new(1);
    p.objective[0] = 1.0;
    let mut b1 = SdpBlock::new(1);
    b1.push(Some(0), 0, 0, 1.0);
    let mut b2 = SdpBlock::new(1);
    b2.push(None, 0, 0, -1.0);
    b2.push(Some(0), 0, 0, -1.0);
    p.blocks = vec![b1, b2];
    let sol = solve(&p);
    assert_eq!(sol.status, SdpStatus::Infeasible);
    let rep = check_certificate(&p, &sol, &SdpOptions::default());
    assert!(rep.ok(), "{:?}", rep.violations);
    // normalized ray: ⟨F0, Z⟩ + bᵀy = −1
    assert!((rep.dual_objective - 1.0).abs() < 1e-6);
}

#[test]
fn unbounded_detected() {
    let mut p = SdpProblem::new(1);
    p.objective[0] = -1.0;
    let mut b = SdpBlock::new(1);
    b.push(Some(0), 0, 0, 1.0);
    p.blocks.push(b);
    let sol = solve(&p);
    assert_eq!(sol.status, SdpStatus::Unbounded);
    assert!(check_certificate(&p, &sol, &SdpOptions::default()).ok());
}

#[test]
fn redundant_and_inconsistent_equalities() {
    // min x0 + x1 s.t. x0, x1 ≥ 0, x0 − x1 = 1 (stated twice)
    let mut p = SdpProblem::new(2);
    p.objective = vec![1.0, 1.0];
    let mut b = SdpBlock::new(2);
    b.push(Some(0), 0, 0, 1.0);
    b.push(Some(1), 1, 1, 1.0);
    p.blocks.push(b);
    let eq = LinearEquality { coeffs: vec![(0, 1.0), (1, -1.0)], rhs: 1.0 };
    p.equalities = vec![eq.clone(), eq.clone()];
    let sol = solve(&p);
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-7 && sol.x[1].abs() < 1e-7);
    assert!(check_certificate(&p, &sol, &SdpOptions::default()).ok());

    p.equalities[1].rhs = 2.0;
    assert_eq!(solve(&p).status, SdpStatus::Infeasible);
}

#[test]
fn malformed_problem_rejected() {
    let mut p = two_by_two();
    p.blocks[0].entries[0].var = Some(3);
    assert!(solve_sdp(&p, &SdpOptions::default()).is_err());
}

#[test]
fn dump_round_trip() {
    let (mut p, _) = spectraplex(&Mat::identity(3, 3));
    p.objective_offset = 0.25;
    let text = write_dump(&p);
    assert!(text.starts_with("# sdp vars=6 blocks=3 equalities=1"));
    let q = read_dump(&text).unwrap();
    assert_eq!(p, q);
}
