//! Dense semidefinite programming.
//!
//! Problems are stated over free scalar variables `x ∈ Rⁿ`:
//!
//! ```text
//! minimize    cᵀx + offset
//! subject to  F_k0 + Σ_i x_i F_ki ⪰ 0     for every block k
//!             a_jᵀ x = b_j                for every equality j
//! ```
//!
//! Blocks are given as sparse symmetric triplets (upper triangle). The dual
//! is `maximize −Σ⟨F_k0, Z_k⟩ − bᵀy + offset` subject to
//! `c_i − Σ_k ⟨F_ki, Z_k⟩ + (Aᵀy)_i = 0`, `Z_k ⪰ 0`.

mod certificate;
mod dump;
mod solver;

pub use certificate::{check_certificate, CertificateReport};
pub use dump::{read_dump, write_dump};
pub use solver::solve_sdp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// One nonzero of a block: `var = None` is the constant term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub var: Option<usize>,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SdpBlock {
    pub dim: usize,
    /// Upper-triangle entries; duplicates are summed.
    pub entries: Vec<BlockEntry>,
}

impl SdpBlock {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Adds `value` at `(row, col)` and, implicitly, at `(col, row)`.
    pub fn push(&mut self, var: Option<usize>, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            let (row, col) = if row <= col { (row, col) } else { (col, row) };
            self.entries.push(BlockEntry { var, row, col, value });
        }
    }

    /// Dense `F_k0 + Σ x_i F_ki`.
    pub fn evaluate(&self, x: &[f64]) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for e in &self.entries {
            let v = match e.var {
                None => e.value,
                Some(i) => e.value * x[i],
            };
            m[(e.row, e.col)] += v;
            if e.row != e.col {
                m[(e.col, e.row)] += v;
            }
        }
        m
    }

    /// `⟨F_ki, Z⟩` for every variable, accumulated into `out`.
    pub(crate) fn adjoint_into(&self, z: &Mat, out: &mut [f64]) {
        for e in &self.entries {
            if let Some(i) = e.var {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                out[i] += w * e.value * z[(e.row, e.col)];
            }
        }
    }

    /// `⟨F_k0, Z⟩`.
    pub(crate) fn constant_dot(&self, z: &Mat) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.var.is_none())
            .map(|e| {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                w * e.value * z[(e.row, e.col)]
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearEquality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub blocks: Vec<SdpBlock>,
    pub equalities: Vec<LinearEquality>,
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            ..Self::default()
        }
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        if self.objective.len() != n {
            return Err(Error::Dimension(format!(
                "objective has {} coefficients for {n} variables",
                self.objective.len()
            )));
        }
        if self.objective.iter().any(|v| !v.is_finite()) || !self.objective_offset.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.dim == 0 {
                return Err(Error::Dimension(format!("block {k} has dimension 0")));
            }
            for e in &b.entries {
                if e.row >= b.dim || e.col >= b.dim {
                    return Err(Error::Dimension(format!(
                        "block {k}: entry ({}, {}) outside {}x{}",
                        e.row, e.col, b.dim, b.dim
                    )));
                }
                if e.var.is_some_and(|i| i >= n) {
                    return Err(Error::UnknownVariable(format!("block {k} references x{}", e.var.unwrap())));
                }
                if !e.value.is_finite() {
                    return Err(Error::NonFinite(format!("block {k}")));
                }
            }
        }
        for (j, eq) in self.equalities.iter().enumerate() {
            if eq.coeffs.iter().any(|&(i, _)| i >= n) {
                return Err(Error::UnknownVariable(format!("equality {j}")));
            }
            if !eq.rhs.is_finite() || eq.coeffs.iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite(format!("equality {j}")));
            }
        }
        Ok(())
    }

    /// Primal objective `cᵀx + offset`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.objective_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    /// Primal infeasible; `y`, `z` hold a normalized dual improving ray.
    Infeasible,
    /// Dual infeasible; `x` holds a primal improving ray.
    Unbounded,
    /// Iteration cap reached or numerical breakdown.
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// One interior-point iterate, in the unembedded scale (divided by τ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `⟨S, Z⟩ / τ²`.
    pub complementarity: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    /// One multiplier per equality, in the problem's order.
    pub y: Vec<f64>,
    /// One dual matrix per block.
    #[serde(with = "mat_list")]
    pub z: Vec<Mat>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Relative primal infeasibility.
    pub primal_residual: f64,
    /// Relative dual infeasibility.
    pub dual_residual: f64,
    /// `⟨S, Z⟩ / (1 + |cᵀx|)`.
    pub gap: f64,
    pub iterations: usize,
    pub message: String,
    pub log: Vec<IterationRecord>,
}

mod mat_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::io::{mat_to_nested, nested_to_mat};
    use crate::linalg::Mat;

    pub fn serialize<S: Serializer>(m: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(mat_to_nested).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .iter()
            .map(|r| nested_to_mat(r, "dual block").map_err(serde::de::Error::custom))
            .collect()
    }
}
