//! Controller synthesis: state feedback, dynamic output feedback and joint
//! sparse sensing/actuation, each followed by independent verification.

pub mod joint;
pub mod output_feedback;
pub mod state_feedback;

pub use joint::{synth_joint, verify_sparsity_preservation, GroupNormReport, JointResult, JointSpec, SparsityReport};
pub use output_feedback::{
    hat_transform, reconstruct_controller, synth_of_h2, synth_of_hinf, HatController, OfResult,
};
pub use state_feedback::{recovery_margins, synth_sf_h2, synth_sf_hinf, SfResult, SfSpec};

use serde::{Deserialize, Serialize};

use crate::analysis::{self, NormReport, DEFAULT_HINF_TOL};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::lmi::{Compiled, Model};
use crate::model::{ClosedLoop, Controller, GeneralizedPlant};
use crate::sdp::{self, SdpOptions, SdpSolution, SdpStatus};

/// Relative slack allowed when checking verified norms against bounds.
pub const VERIFY_SLACK: f64 = 1e-5;
/// Eigenvalue slack tolerated on a stalled solve's primal blocks.
const STALL_EIG_TOL: f64 = 1e-8;
/// Default active-set threshold on `sqrt(γi)` or group norms, relative to the max.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerformanceKind {
    H2,
    Hinf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    SfHinf,
    SfH2,
    OfHinf,
    OfH2,
    JointH2,
    JointHinf,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::SfHinf, Mode::SfH2, Mode::OfHinf, Mode::OfH2, Mode::JointH2, Mode::JointHinf];

    pub fn kind(self) -> PerformanceKind {
        match self {
            Mode::SfHinf | Mode::OfHinf | Mode::JointHinf => PerformanceKind::Hinf,
            _ => PerformanceKind::H2,
        }
    }

    pub fn is_joint(self) -> bool {
        matches!(self, Mode::JointH2 | Mode::JointHinf)
    }

    pub fn is_state_feedback(self) -> bool {
        matches!(self, Mode::SfHinf | Mode::SfH2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::SfHinf => "sf-hinf",
            Mode::SfH2 => "sf-h2",
            Mode::OfHinf => "of-hinf",
            Mode::OfH2 => "of-h2",
            Mode::JointH2 => "joint-h2",
            Mode::JointHinf => "joint-hinf",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub sdp: SdpOptions,
    /// Keep the packed SDP as a triplet dump in the result.
    pub dump_sdp: bool,
    /// Upper bound `Y ⪯ y_bound·I` in output-feedback problems, relative to
    /// the plant scale. Keeps `Y` finite when measurements are noise free.
    pub y_bound: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            sdp: SdpOptions::default(),
            dump_sdp: false,
            y_bound: 1e4,
        }
    }
}

/// Solver outcome summary carried by every synthesis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub status: SdpStatus,
    pub iterations: usize,
    pub num_vars: usize,
    pub block_dims: Vec<usize>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump: Option<String>,
}

/// Solves a compiled model. Primal infeasibility maps to
/// `InfeasiblePerformance`; an iteration cap is accepted only when the best
/// iterate is primal feasible, since every result is verified afterwards.
pub(crate) fn solve_model(model: &Model, opts: &SynthOptions, what: &str) -> Result<(Compiled, SdpSolution, SolveInfo)> {
    let compiled = model.compile()?;
    let sol = sdp::solve_sdp(&compiled.problem, &opts.sdp)?;
    let info = SolveInfo {
        status: sol.status,
        iterations: sol.iterations,
        num_vars: compiled.problem.num_vars,
        block_dims: compiled.problem.block_dims(),
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
        dump: opts.dump_sdp.then(|| sdp::write_dump(&compiled.problem)),
    };
    match sol.status {
        SdpStatus::Optimal => Ok((compiled, sol, info)),
        SdpStatus::Infeasible => Err(Error::InfeasiblePerformance(format!("{what}: the LMIs are infeasible"))),
        SdpStatus::Unbounded => Err(Error::Numerical(format!("{what}: SDP reported dual infeasibility"))),
        SdpStatus::MaxIter => {
            // Stalls near the optimum usually leave the dual residual behind
            // while the primal point is fine. Strict LMIs carry a 1e-7 margin,
            // so tiny negative eigenvalues do not break strictness.
            let cert = sdp::check_certificate(&compiled.problem, &sol, &opts.sdp);
            let mut tol = vec![STALL_EIG_TOL; cert.primal_min_eigs.len()];
            for c in &compiled.constraints {
                if let crate::lmi::Target::Block(k) = c.target {
                    tol[k] = tol[k].max(0.5 * c.margin);
                }
            }
            let primal_ok = cert.primal_min_eigs.iter().zip(&tol).all(|(&e, &t)| e >= -t)
                && cert.equality_residual <= 1e-8
                && sol.primal_residual <= 1e-7;
            if primal_ok && sol.gap.abs() <= 1e-4 && sol.dual_residual <= 1e-3 {
                Ok((compiled, sol, info))
            } else {
                Err(Error::Numerical(format!(
                    "{what}: solver stopped ({}) with primal residual {:.2e}, dual residual {:.2e}, gap {:.2e}",
                    sol.message, sol.primal_residual, sol.dual_residual, sol.gap
                )))
            }
        }
    }
}

/// Verified closed-loop norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub performance: NormReport,
    pub channels: Vec<NormReport>,
    pub gamma0: f64,
    pub passed: bool,
}

pub(crate) fn performance_norm(cl: &ClosedLoop, kind: PerformanceKind) -> Result<NormReport> {
    let sys = cl.performance();
    match kind {
        PerformanceKind::H2 => analysis::h2_norm(&sys),
        PerformanceKind::Hinf => analysis::hinf_norm(&sys, DEFAULT_HINF_TOL),
    }
}

/// Checks the closed loop against `γ0` and, when given, the channel bounds
/// `sqrt(γi)`. Fails with `VerificationFailed` on any violation.
pub fn verify(
    plant: &GeneralizedPlant,
    controller: &Controller,
    kind: PerformanceKind,
    gamma0: f64,
    gamma: Option<&[f64]>,
) -> Result<Verification> {
    let cl = controller.close(plant)?;
    if !analysis::is_hurwitz(&cl.a)? {
        return Err(Error::VerificationFailed(format!(
            "closed loop is not Hurwitz (spectral abscissa {:.3e})",
            crate::linalg::spectral_abscissa(&cl.a)?
        )));
    }
    let performance = performance_norm(&cl, kind)?;
    if performance.value >= gamma0 * (1.0 + VERIFY_SLACK) {
        return Err(Error::VerificationFailed(format!(
            "closed-loop norm {:.9} exceeds γ0 = {gamma0}",
            performance.value
        )));
    }
    let channels = analysis::closed_loop_channel_h2_norms(&cl)?;
    if let Some(g) = gamma {
        for (i, (c, &gi)) in channels.iter().zip(g).enumerate() {
            if c.value >= gi.max(0.0).sqrt() * (1.0 + VERIFY_SLACK) {
                return Err(Error::VerificationFailed(format!(
                    "channel {} norm {:.9} exceeds sqrt(γ) = {:.9}",
                    i + 1,
                    c.value,
                    gi.max(0.0).sqrt()
                )));
            }
        }
    }
    Ok(Verification { performance, channels, gamma0, passed: true })
}

/// Values at or below this are inactive whatever the ratio: a controller
/// whose largest group is at solver noise level uses no channel.
pub const ACTIVE_FLOOR: f64 = 1e-9;

/// Indices whose value exceeds `ratio·max` and [`ACTIVE_FLOOR`].
pub fn active_set(values: &[f64], ratio: f64) -> Vec<usize> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let cut = (ratio * max).max(ACTIVE_FLOOR);
    (0..values.len()).filter(|&i| values[i] > cut).collect()
}

pub(crate) fn check_weights(w: &[f64], n: usize, what: &str, strictly_positive: bool) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!("{what} has {} entries, expected {n}", w.len())));
    }
    for &v in w {
        if !v.is_finite() || v < 0.0 || (strictly_positive && v == 0.0) {
            return Err(Error::InvalidParameter(format!("{what} entries must be positive, got {v}")));
        }
    }
    Ok(())
}

pub(crate) fn check_gamma0(gamma0: f64) -> Result<()> {
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::InvalidParameter(format!("γ0 must be positive, got {gamma0}")));
    }
    Ok(())
}

/// `r P⁻¹ rᵀ` for each row `r` of `rows`: the smallest γ for which
/// `[[γ, r], [rᵀ, P]] ⪰ 0`. Falls back to `fallback[i]` when `P` is not
/// positive definite.
pub(crate) fn schur_bounds(rows: &Mat, p: &Mat, fallback: &[f64]) -> Vec<f64> {
    match crate::linalg::symmetrize(p).cholesky() {
        Some(ch) => (0..rows.nrows())
            .map(|i| {
                let r = rows.row(i).transpose();
                r.dot(&ch.solve(&r)).max(0.0)
            })
            .collect(),
        None => fallback.to_vec(),
    }
}

/// Reads the diagonal of a `Diagonal` variable value.
pub(crate) fn diag_values(m: &Mat) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)]).collect()
}

/// Unified request covering every mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub plant: GeneralizedPlant,
    pub mode: Mode,
    pub gamma0: f64,
    /// Channel weights ρ (state and output feedback).
    pub rho: Option<Vec<f64>>,
    /// Per-channel bounds on γi.
    pub gamma_max: Option<Vec<f64>>,
    /// Actuator and sensor group weights (joint modes).
    pub mu: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
}

impl SynthesisSpec {
    pub fn new(plant: GeneralizedPlant, mode: Mode, gamma0: f64) -> Self {
        Self { plant, mode, gamma0, rho: None, gamma_max: None, mu: None, nu: None }
    }

    pub fn rho_or_default(&self) -> Vec<f64> {
        self.rho.clone().unwrap_or_else(|| vec![1.0; self.plant.dims().nu])
    }

    pub fn mu_or_default(&self) -> Vec<f64> {
        self.mu.clone().unwrap_or_else(|| vec![1.0; self.plant.dims().nu])
    }

    pub fn nu_or_default(&self) -> Vec<f64> {
        self.nu.clone().unwrap_or_else(|| vec![1.0; self.plant.dims().ny])
    }
}

/// Unified synthesis outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub mode: Mode,
    pub controller: Controller,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hat: Option<HatController>,
    /// Γ for state/output feedback modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    /// Smallest Γ the returned Lyapunov variables certify; free of the
    /// strictness margin, so unused channels read as zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_tight: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_norms: Option<GroupNormReport>,
    pub objective: f64,
    pub verification: Verification,
    pub active_actuators: Vec<usize>,
    pub active_sensors: Vec<usize>,
    pub solve: SolveInfo,
    /// Notes on extensions applied beyond the plain formulation.
    pub notes: Vec<String>,
}

impl SynthesisResult {
    /// Per-actuator values the reweighting acts on: γi, or row group norms.
    pub fn actuator_values(&self) -> Vec<f64> {
        match (&self.gamma, &self.group_norms) {
            (Some(g), _) => g.clone(),
            (None, Some(r)) => r.row_norms.clone(),
            _ => Vec::new(),
        }
    }

    /// `sqrt` of the tight Γ, or row group norms: what the active threshold
    /// sees.
    pub fn actuator_magnitudes(&self) -> Vec<f64> {
        match (&self.gamma_tight, &self.gamma, &self.group_norms) {
            (Some(g), _, _) | (None, Some(g), _) => g.iter().map(|v| v.max(0.0).sqrt()).collect(),
            (None, None, Some(r)) => r.row_norms.clone(),
            _ => Vec::new(),
        }
    }

    pub fn sensor_values(&self) -> Vec<f64> {
        self.group_norms.as_ref().map(|r| r.col_norms.clone()).unwrap_or_default()
    }
}

/// Runs the synthesis selected by `spec.mode`.
pub fn synthesize(spec: &SynthesisSpec, opts: &SynthOptions) -> Result<SynthesisResult> {
    let plant = &spec.plant;
    match spec.mode {
        Mode::SfHinf | Mode::SfH2 => {
            let sf = SfSpec {
                plant: plant.clone(),
                kind: spec.mode.kind(),
                gamma0: spec.gamma0,
                rho: spec.rho_or_default(),
                gamma_max: spec.gamma_max.clone(),
            };
            let r = match spec.mode {
                Mode::SfHinf => synth_sf_hinf(&sf, opts)?,
                _ => synth_sf_h2(&sf, opts)?,
            };
            Ok(SynthesisResult {
                mode: spec.mode,
                controller: Controller::StateFeedback(r.k.clone()),
                hat: None,
                active_actuators: r.active_set.clone(),
                active_sensors: (0..plant.dims().ny).collect(),
                gamma: Some(r.gamma),
                gamma_tight: Some(r.gamma_tight),
                group_norms: None,
                objective: r.objective,
                verification: r.verification,
                solve: r.solve,
                notes: Vec::new(),
            })
        }
        Mode::OfHinf | Mode::OfH2 => {
            let sf = SfSpec {
                plant: plant.clone(),
                kind: spec.mode.kind(),
                gamma0: spec.gamma0,
                rho: spec.rho_or_default(),
                gamma_max: spec.gamma_max.clone(),
            };
            let r = match spec.mode {
                Mode::OfHinf => synth_of_hinf(&sf, opts)?,
                _ => synth_of_h2(&sf, opts)?,
            };
            Ok(SynthesisResult {
                mode: spec.mode,
                controller: Controller::Dynamic(r.controller.clone()),
                hat: Some(r.hat),
                active_actuators: r.active_set.clone(),
                active_sensors: (0..plant.dims().ny).collect(),
                gamma: Some(r.gamma),
                gamma_tight: Some(r.gamma_tight),
                group_norms: None,
                objective: r.objective,
                verification: r.verification,
                solve: r.solve,
                notes: r.notes,
            })
        }
        Mode::JointH2 | Mode::JointHinf => {
            let js = JointSpec {
                plant: plant.clone(),
                kind: spec.mode.kind(),
                gamma0: spec.gamma0,
                mu: spec.mu_or_default(),
                nu: spec.nu_or_default(),
            };
            let r = synth_joint(&js, opts)?;
            Ok(SynthesisResult {
                mode: spec.mode,
                controller: Controller::Dynamic(r.controller.clone()),
                hat: Some(r.hat),
                active_actuators: r.norms.active_actuators.clone(),
                active_sensors: r.norms.active_sensors.clone(),
                gamma: None,
                gamma_tight: None,
                group_norms: Some(r.norms),
                objective: r.objective,
                verification: r.verification,
                solve: r.solve,
                notes: r.notes,
            })
        }
    }
}
