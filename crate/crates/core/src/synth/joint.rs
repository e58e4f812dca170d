//! Simultaneous sparse sensing and actuation: weighted group norms of the
//! transformed controller's rows (actuators) and columns (sensors).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::output_feedback::{check_plant, clean_dk, reconstruct_controller, HatController, HatVars};
use super::{active_set, check_gamma0, solve_model, verify, PerformanceKind, SolveInfo, SynthOptions, Verification};
use super::DEFAULT_THRESHOLD;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::Mat;
use crate::lmi::{Affine, Model, Sense};
use crate::model::{Controller, DynamicController, GeneralizedPlant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub plant: GeneralizedPlant,
    pub kind: PerformanceKind,
    pub gamma0: f64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl JointSpec {
    pub fn new(plant: GeneralizedPlant, kind: PerformanceKind, gamma0: f64) -> Self {
        let d = plant.dims();
        Self { plant, kind, gamma0, mu: vec![1.0; d.nu], nu: vec![1.0; d.ny] }
    }

    fn check(&self) -> Result<()> {
        check_plant(&self.plant, self.kind)?;
        check_gamma0(self.gamma0)?;
        let d = self.plant.dims();
        super::check_weights(&self.mu, d.nu, "mu", false)?;
        super::check_weights(&self.nu, d.ny, "nu", false)?;
        if self.mu.iter().chain(&self.nu).all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter("mu and nu are both identically zero".into()));
        }
        Ok(())
    }
}

/// Row norms of `[ĈK D̂K]` and column norms of `[B̂K; D̂K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNormReport {
    pub row_norms: Vec<f64>,
    pub col_norms: Vec<f64>,
    pub active_actuators: Vec<usize>,
    pub active_sensors: Vec<usize>,
}

impl GroupNormReport {
    pub fn from_hat(hat: &HatController, threshold_ratio: f64) -> Self {
        let out = hat.output_map();
        let inp = hat.input_map();
        let row_norms: Vec<f64> = (0..out.nrows()).map(|i| out.row(i).norm()).collect();
        let col_norms: Vec<f64> = (0..inp.ncols()).map(|j| inp.column(j).norm()).collect();
        Self {
            active_actuators: active_set(&row_norms, threshold_ratio),
            active_sensors: active_set(&col_norms, threshold_ratio),
            row_norms,
            col_norms,
        }
    }

    /// `kind,index,name,norm,active` with one line per actuator and sensor.
    pub fn to_csv(&self, actuator_names: &[String], sensor_names: &[String]) -> String {
        let mut s = String::from("kind,index,name,norm,active\n");
        let groups = [
            ("actuator", &self.row_norms, &self.active_actuators, actuator_names),
            ("sensor", &self.col_norms, &self.active_sensors, sensor_names),
        ];
        for (kind, norms, active, names) in groups {
            for (i, &n) in norms.iter().enumerate() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("{kind}{}", i + 1));
                let _ = writeln!(s, "{kind},{},{name},{},{}", i + 1, fmt_f64(n), active.contains(&i));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResult {
    pub controller: DynamicController,
    pub hat: HatController,
    pub norms: GroupNormReport,
    /// `Σ μi‖c̄i‖ + Σ νj‖b̄j‖` at the returned hat controller.
    pub objective: f64,
    pub verification: Verification,
    pub solve: SolveInfo,
    pub notes: Vec<String>,
}

/// Epigraph `t ≥ ‖v‖` as `[[t, v], [vᵀ, t I]] ⪰ 0` for a row `v`.
fn arrow(t: &Affine, v: &Affine) -> Result<Affine> {
    Affine::block_sym(&[vec![Some(t.clone()), Some(v.clone())], vec![None, Some(t.times_identity(v.cols())?)]])
}

pub fn synth_joint(spec: &JointSpec, opts: &SynthOptions) -> Result<JointResult> {
    spec.check()?;
    let p = &spec.plant;
    let d = p.dims();
    let mut m = Model::new();
    let hv = HatVars::declare(&mut m, p);
    match spec.kind {
        PerformanceKind::Hinf => m.negative("bounded-real", hv.hinf_block(p, spec.gamma0)?),
        PerformanceKind::H2 => {
            m.negative("gramian", hv.gramian_block(p)?);
            let q = m.symmetric("Q", d.nz);
            m.positive("h2-output", hv.h2_output_block(p, q)?);
            let tr = Affine::var(q).trace()?.neg().add_const(&Mat::from_element(1, 1, spec.gamma0 * spec.gamma0))?;
            m.positive("h2-trace", tr);
        }
    }
    let mut notes = hv.add_common(&mut m, p, opts)?;
    if p.dyw.amax() > 0.0 {
        notes.push("D̂K·Dyw = 0 imposed so channel norms stay finite".into());
    }

    let (ck, dk, bk) = (Affine::var(hv.ck), Affine::var(hv.dk), Affine::var(hv.bk));
    let mut objective = Affine::scalar(0.0);
    for i in 0..d.nu {
        if spec.mu[i] == 0.0 {
            continue;
        }
        let t = Affine::var(m.scalar(&format!("t{}", i + 1)));
        let row = Affine::block(&[vec![Some(ck.row(i)?), Some(dk.row(i)?)]])?;
        m.constrain(&format!("actuator-{}", i + 1), arrow(&t, &row)?, Sense::Psd, false);
        objective = objective.add(&t.scale(spec.mu[i]))?;
    }
    for j in 0..d.ny {
        if spec.nu[j] == 0.0 {
            continue;
        }
        let s = Affine::var(m.scalar(&format!("s{}", j + 1)));
        let col = Affine::block(&[vec![Some(bk.col(j)?)], vec![Some(dk.col(j)?)]])?.transpose();
        m.constrain(&format!("sensor-{}", j + 1), arrow(&s, &col)?, Sense::Psd, false);
        objective = objective.add(&s.scale(spec.nu[j]))?;
    }
    m.minimize(objective);

    let (compiled, sol, info) = solve_model(&m, opts, "joint sensing/actuation")?;
    let mut hat = hv.read(&compiled, &sol);
    clean_dk(&mut hat, p);
    let controller = reconstruct_controller(&hat, p)?;
    let verification = verify(p, &Controller::Dynamic(controller.clone()), spec.kind, spec.gamma0, None)?;
    let norms = GroupNormReport::from_hat(&hat, DEFAULT_THRESHOLD);
    let objective = norms.row_norms.iter().zip(&spec.mu).map(|(a, b)| a * b).sum::<f64>()
        + norms.col_norms.iter().zip(&spec.nu).map(|(a, b)| a * b).sum::<f64>();
    Ok(JointResult { controller, hat, norms, objective, verification, solve: info, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub zero_rows: Vec<usize>,
    pub zero_cols: Vec<usize>,
    pub violations: Vec<String>,
}

impl SparsityReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that hat groups with norm ≤ `threshold` reconstruct to controller
/// groups with norm ≤ 1e-9 relative to the largest controller group.
pub fn verify_sparsity_preservation(hat: &HatController, plant: &GeneralizedPlant, threshold: f64) -> SparsityReport {
    let norms = GroupNormReport::from_hat(hat, 0.0);
    let zero_rows: Vec<usize> = (0..norms.row_norms.len()).filter(|&i| norms.row_norms[i] <= threshold).collect();
    let zero_cols: Vec<usize> = (0..norms.col_norms.len()).filter(|&j| norms.col_norms[j] <= threshold).collect();
    let mut violations = Vec::new();
    match reconstruct_controller(hat, plant) {
        Err(e) => violations.push(format!("reconstruction failed: {e}")),
        Ok(ctrl) => {
            let out = ctrl.output_map();
            let inp = ctrl.input_map();
            let rows: Vec<f64> = (0..out.nrows()).map(|i| out.row(i).norm()).collect();
            let cols: Vec<f64> = (0..inp.ncols()).map(|j| inp.column(j).norm()).collect();
            let scale_r = rows.iter().copied().fold(1.0, f64::max);
            let scale_c = cols.iter().copied().fold(1.0, f64::max);
            for &i in &zero_rows {
                if rows[i] > 1e-9 * scale_r {
                    violations.push(format!("row {} of [CK DK] has norm {:.3e}", i + 1, rows[i]));
                }
            }
            for &j in &zero_cols {
                if cols[j] > 1e-9 * scale_c {
                    violations.push(format!("column {} of [BK; DK] has norm {:.3e}", j + 1, cols[j]));
                }
            }
        }
    }
    SparsityReport { zero_rows, zero_cols, violations }
}
