//! Recomputes the residuals of a solution from the problem data alone.

use serde::{Deserialize, Serialize};

use super::{SdpOptions, SdpProblem, SdpSolution, SdpStatus};
use crate::linalg::{self, Mat};

/// Violations beyond this multiple of the solver tolerances are flagged.
const SLACK: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `(primal − dual) / (1 + |primal|)`.
    pub relative_gap: f64,
    /// Minimum eigenvalue of `F_k0 + Σ x_i F_ki` per block.
    pub primal_min_eigs: Vec<f64>,
    pub dual_min_eigs: Vec<f64>,
    /// Largest `|a_jᵀx − b_j| / (1 + |b_j|)`.
    pub equality_residual: f64,
    /// `‖c − Σ⟨F_ki, Z_k⟩ + Aᵀy‖ / max(1, ‖c‖)`.
    pub dual_residual: f64,
    pub violations: Vec<String>,
}

impl CertificateReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn dual_map(problem: &SdpProblem, sol: &SdpSolution) -> (Vec<f64>, f64) {
    // Σ_k ⟨F_ki, Z_k⟩ − (Aᵀy)_i, and Σ_k ⟨F_k0, Z_k⟩ + bᵀy
    let mut g = vec![0.0; problem.num_vars];
    let mut h = 0.0;
    for (blk, z) in problem.blocks.iter().zip(&sol.z) {
        blk.adjoint_into(z, &mut g);
        h += blk.constant_dot(z);
    }
    for (eq, &y) in problem.equalities.iter().zip(&sol.y) {
        for &(i, a) in &eq.coeffs {
            g[i] -= a * y;
        }
        h += eq.rhs * y;
    }
    (g, h)
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check_certificate(problem: &SdpProblem, sol: &SdpSolution, opts: &SdpOptions) -> CertificateReport {
    let feas = SLACK * opts.feas_tol;
    let mut violations = Vec::new();

    let primal_blocks: Vec<Mat> = problem.blocks.iter().map(|b| b.evaluate(&sol.x)).collect();
    let primal_min_eigs: Vec<f64> = primal_blocks.iter().map(linalg::min_sym_eig).collect();
    let dual_min_eigs: Vec<f64> = sol.z.iter().map(linalg::min_sym_eig).collect();
    let equality_residual = problem
        .equalities
        .iter()
        .map(|eq| {
            let ax: f64 = eq.coeffs.iter().map(|&(i, a)| a * sol.x[i]).sum();
            (ax - eq.rhs).abs() / (1.0 + eq.rhs.abs())
        })
        .fold(0.0, f64::max);
    let (g, h) = dual_map(problem, sol);
    let c_norm = l2(problem.objective.iter().copied()).max(1.0);
    let dual_residual = l2(problem.objective.iter().zip(&g).map(|(c, g)| c - g)) / c_norm;
    let primal_objective = problem.objective_value(&sol.x);
    let dual_objective = -h + problem.objective_offset;
    let relative_gap = (primal_objective - dual_objective) / (1.0 + primal_objective.abs());

    let check_psd = |mats: &[Mat], eigs: &[f64], what: &str, violations: &mut Vec<String>| {
        for (k, (m, &e)) in mats.iter().zip(eigs).enumerate() {
            if e < -feas * (1.0 + m.norm()) {
                violations.push(format!("{what} block {k} has eigenvalue {e:.3e}"));
            }
        }
    };

    match sol.status {
        SdpStatus::Optimal | SdpStatus::MaxIter => {
            check_psd(&primal_blocks, &primal_min_eigs, "primal", &mut violations);
            check_psd(&sol.z, &dual_min_eigs, "dual", &mut violations);
            if equality_residual > feas {
                violations.push(format!("equality residual {equality_residual:.3e}"));
            }
            if dual_residual > feas {
                violations.push(format!("dual residual {dual_residual:.3e}"));
            }
            if relative_gap.abs() > SLACK * opts.gap_tol {
                violations.push(format!("duality gap {relative_gap:.3e}"));
            }
        }
        SdpStatus::Infeasible => {
            // dual ray: Σ⟨F_ki, Z⟩ = (Aᵀy)_i, Z ⪰ 0, ⟨F_0, Z⟩ + bᵀy < 0
            check_psd(&sol.z, &dual_min_eigs, "dual ray", &mut violations);
            let r = l2(g.iter().copied());
            if r > feas * (-h).max(1e-300) {
                violations.push(format!("dual ray residual {r:.3e}"));
            }
            if h >= 0.0 {
                violations.push(format!("dual ray does not improve ({h:.3e})"));
            }
        }
        SdpStatus::Unbounded => {
            let homogeneous: Vec<Mat> = problem
                .blocks
                .iter()
                .map(|b| {
                    let mut m = b.evaluate(&sol.x);
                    let c = b.evaluate(&vec![0.0; problem.num_vars]);
                    m -= c;
                    m
                })
                .collect();
            let eigs: Vec<f64> = homogeneous.iter().map(linalg::min_sym_eig).collect();
            check_psd(&homogeneous, &eigs, "primal ray", &mut violations);
            let cx = primal_objective - problem.objective_offset;
            if cx >= 0.0 {
                violations.push(format!("primal ray does not improve ({cx:.3e})"));
            }
        }
    }

    CertificateReport {
        primal_objective,
        dual_objective,
        relative_gap,
        primal_min_eigs,
        dual_min_eigs,
        equality_residual,
        dual_residual,
        violations,
    }
}
