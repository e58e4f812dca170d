//! Static state feedback `u = Kx` with per-actuator channel bounds Γ.

use serde::{Deserialize, Serialize};

use super::{
    active_set, check_gamma0, check_weights, diag_values, schur_bounds, solve_model, verify, PerformanceKind, SolveInfo,
    SynthOptions, Verification, DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lmi::{self, Affine, Assignment, Model, Sense, Var};
use crate::model::{Controller, GeneralizedPlant, StateFeedbackGain};

/// Refuse to form `K = W X⁻¹` beyond this condition number of `X`.
pub const MAX_COND_X: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfSpec {
    pub plant: GeneralizedPlant,
    pub kind: PerformanceKind,
    pub gamma0: f64,
    pub rho: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<Vec<f64>>,
}

impl SfSpec {
    pub fn new(plant: GeneralizedPlant, kind: PerformanceKind, gamma0: f64) -> Self {
        let nu = plant.dims().nu;
        Self { plant, kind, gamma0, rho: vec![1.0; nu], gamma_max: None }
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.plant.check()?;
        check_gamma0(self.gamma0)?;
        let nu = self.plant.dims().nu;
        check_weights(&self.rho, nu, "rho", true)?;
        if let Some(g) = &self.gamma_max {
            check_weights(g, nu, "gamma_max", true)?;
        }
        if self.kind == PerformanceKind::H2 {
            let norm = self.plant.dw.amax();
            if norm > 0.0 {
                return Err(Error::NonzeroFeedthrough { norm });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfResult {
    #[serde(flatten)]
    pub k: StateFeedbackGain,
    pub gamma: Vec<f64>,
    /// `wi X⁻¹ wiᵀ`, the channel bound `(X, W)` certify without margin.
    pub gamma_tight: Vec<f64>,
    pub objective: f64,
    #[serde(with = "crate::io::nested")]
    pub x: Mat,
    #[serde(with = "crate::io::nested")]
    pub w: Mat,
    pub verification: Verification,
    pub active_set: Vec<usize>,
    pub solve: SolveInfo,
}

pub(crate) struct SfLmi {
    pub model: Model,
    pub x: Var,
    pub w: Var,
    pub g: Var,
    pub z: Option<Var>,
}

fn c(m: &Mat) -> Affine {
    Affine::constant(m.clone())
}

/// Builds the LMI family for `spec.kind`.
pub(crate) fn build(spec: &SfSpec) -> Result<SfLmi> {
    let p = &spec.plant;
    let d = p.dims();
    let g0 = spec.gamma0;
    let mut m = Model::new();
    let x = m.symmetric("X", d.nx);
    let w = m.rectangular("W", d.nu, d.nx);
    let g = m.diagonal("Gamma", d.nu);
    let (xa, wa, ga) = (Affine::var(x), Affine::var(w), Affine::var(g));

    // A X + Bu W and Cz X + Du W
    let ax = xa.lmul(&p.a)?.add(&wa.lmul(&p.bu)?)?;
    let cx = xa.lmul(&p.cz)?.add(&wa.lmul(&p.du)?)?;
    let lyap = ax.sym()?.add_const(&(&p.bw * p.bw.transpose()))?;
    m.negative("lyapunov", lyap);

    let mut z = None;
    match spec.kind {
        PerformanceKind::Hinf => {
            let blk = Affine::block_sym(&[
                vec![Some(ax.sym()?), Some(c(&p.bw)), Some(cx.transpose())],
                vec![None, Some(c(&(-g0 * Mat::identity(d.nw, d.nw)))), Some(c(&p.dw.transpose()))],
                vec![None, None, Some(c(&(-g0 * Mat::identity(d.nz, d.nz))))],
            ])?;
            m.negative("bounded-real", blk);
        }
        PerformanceKind::H2 => {
            let zv = m.symmetric("Z", d.nz);
            let za = Affine::var(zv);
            let blk = Affine::block_sym(&[vec![Some(za.neg()), Some(cx)], vec![None, Some(xa.neg())]])?;
            m.negative("h2-output", blk);
            m.positive("h2-trace", za.trace()?.neg().add_const(&Mat::from_element(1, 1, g0 * g0))?);
            z = Some(zv);
        }
    }

    for i in 0..d.nu {
        let gi = ga.row(i)?.col(i)?;
        let blk = Affine::block_sym(&[vec![Some(gi.neg()), Some(wa.row(i)?)], vec![None, Some(xa.neg())]])?;
        m.negative(&format!("channel-{}", i + 1), blk);
        if let Some(gmax) = &spec.gamma_max {
            m.positive(&format!("gamma-max-{}", i + 1), gi.neg().add_const(&Mat::from_element(1, 1, gmax[i]))?);
        }
    }

    let rho = Mat::from_row_slice(1, d.nu, &spec.rho);
    m.minimize(ga.lmul(&rho)?.rmul(&Mat::from_element(d.nu, 1, 1.0))?);
    Ok(SfLmi { model: m, x, w, g, z })
}

/// `K = W X⁻¹` with the conditioning guard.
pub(crate) fn recover_gain(x: &Mat, w: &Mat) -> Result<Mat> {
    let cond = linalg::cond(x);
    if !(cond <= MAX_COND_X) {
        return Err(Error::SingularLyapunov { cond });
    }
    let xt = linalg::symmetrize(x);
    let chol = xt
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("X is not positive definite".into()))?;
    Ok(chol.solve(&w.transpose()).transpose())
}

fn synth(spec: &SfSpec, opts: &SynthOptions, what: &str) -> Result<SfResult> {
    spec.check()?;
    let lmi = build(spec)?;
    let (compiled, sol, info) = solve_model(&lmi.model, opts, what)?;
    let x = compiled.read(lmi.x, &sol);
    let w = compiled.read(lmi.w, &sol);
    let gamma = diag_values(&compiled.read(lmi.g, &sol));
    let k = recover_gain(&x, &w)?;
    let objective = gamma.iter().zip(&spec.rho).map(|(g, r)| g * r).sum();
    let ctrl = Controller::StateFeedback(StateFeedbackGain::new(k.clone()));
    let verification = verify(&spec.plant, &ctrl, spec.kind, spec.gamma0, Some(&gamma))?;
    let gamma_tight = schur_bounds(&w, &x, &gamma);
    let roots: Vec<f64> = gamma_tight.iter().map(|g| g.sqrt()).collect();
    Ok(SfResult {
        k: StateFeedbackGain::new(k),
        active_set: active_set(&roots, DEFAULT_THRESHOLD),
        gamma,
        gamma_tight,
        objective,
        x,
        w,
        verification,
        solve: info,
    })
}

/// H∞ performance with minimal weighted channel bounds.
pub fn synth_sf_hinf(spec: &SfSpec, opts: &SynthOptions) -> Result<SfResult> {
    if spec.kind != PerformanceKind::Hinf {
        return Err(Error::InvalidParameter("synth_sf_hinf needs the H∞ kind".into()));
    }
    synth(spec, opts, "state-feedback H∞")
}

/// H2 performance with minimal weighted channel bounds.
pub fn synth_sf_h2(spec: &SfSpec, opts: &SynthOptions) -> Result<SfResult> {
    if spec.kind != PerformanceKind::H2 {
        return Err(Error::InvalidParameter("synth_sf_h2 needs the H2 kind".into()));
    }
    synth(spec, opts, "state-feedback H2")
}

/// Slack of each LMI at `(X, W = K X, Γ)`: the smallest eigenvalue of the
/// side required to be positive. `Z` (H2) is rebuilt as its tightest value
/// plus the margin split evenly.
pub fn recovery_margins(spec: &SfSpec, result: &SfResult) -> Result<Vec<(String, f64)>> {
    let lmi = build(spec)?;
    let mut asg = Assignment::default();
    asg.set(lmi.x, result.x.clone());
    asg.set(lmi.w, &result.k.k * &result.x);
    asg.set(lmi.g, Mat::from_diagonal(&nalgebra::DVector::from_vec(result.gamma.clone())));
    if let Some(z) = lmi.z {
        let p = &spec.plant;
        let cx = &p.cz * &result.x + &p.du * &result.k.k * &result.x;
        let zmin = linalg::symmetrize(&(&cx * result.x.clone().try_inverse().unwrap_or_else(|| Mat::zeros(0, 0)) * cx.transpose()));
        // split the remaining trace budget evenly so both Z-constraints keep slack
        let nz = zmin.nrows();
        let spare = (spec.gamma0 * spec.gamma0 - zmin.trace()) / (2.0 * nz as f64);
        asg.set(z, zmin + Mat::identity(nz, nz) * spare.max(0.0));
    }
    let mut out = Vec::new();
    for con in lmi.model.constraints() {
        let ev = lmi::evaluate(&con.expr, &asg)?;
        let slack = match con.sense {
            Sense::Nsd => -ev.max_eig.unwrap_or(f64::NAN),
            Sense::Psd => ev.min_eig.unwrap_or(f64::NAN),
            Sense::Zero => -ev.value.amax(),
        };
        out.push((con.name.clone(), slack));
    }
    Ok(out)
}
