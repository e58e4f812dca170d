//! Plant and controller records, well-posedness checks and closed-loop
//! assembly.
//!
//! The generalized plant is
//!
//! ```text
//! ẋ = A x + Bu u + Bw w
//! z = Cz x + Du u + Dw w
//! y = Cy x + Dyw w          (Dyu = 0)
//! ```

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{mat_to_nested, nested_to_mat};
use crate::linalg::{self, hstack, vstack, Complex64, Mat};

/// Dimensions of a generalized plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub nw: usize,
    pub nz: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantJson", into = "PlantJson")]
pub struct GeneralizedPlant {
    pub a: Mat,
    pub bu: Mat,
    pub bw: Mat,
    pub cz: Mat,
    pub du: Mat,
    pub dw: Mat,
    pub cy: Mat,
    pub dyu: Mat,
    pub dyw: Mat,
    pub actuator_names: Vec<String>,
    pub sensor_names: Vec<String>,
}

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !linalg::is_finite(m) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

impl GeneralizedPlant {
    /// Builds a plant with `Dyu = 0` and default channel names.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Mat,
        bu: Mat,
        bw: Mat,
        cz: Mat,
        du: Mat,
        dw: Mat,
        cy: Mat,
        dyw: Mat,
    ) -> Result<Self> {
        let nu = bu.ncols();
        let ny = cy.nrows();
        let plant = Self {
            dyu: Mat::zeros(ny, nu),
            a,
            bu,
            bw,
            cz,
            du,
            dw,
            cy,
            dyw,
            actuator_names: default_names("u", nu),
            sensor_names: default_names("y", ny),
        };
        plant.check()?;
        Ok(plant)
    }

    /// State-feedback style plant: `Du = 0`, `Dw = 0`, full-state measurement.
    pub fn state_feedback(a: Mat, bu: Mat, bw: Mat, cz: Mat) -> Result<Self> {
        let (nx, nu, nw, nz) = (a.nrows(), bu.ncols(), bw.ncols(), cz.nrows());
        Self::new(
            a,
            bu,
            bw,
            cz,
            Mat::zeros(nz, nu),
            Mat::zeros(nz, nw),
            Mat::identity(nx, nx),
            Mat::zeros(nx, nw),
        )
    }

    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.a.nrows(),
            nu: self.bu.ncols(),
            nw: self.bw.ncols(),
            nz: self.cz.nrows(),
            ny: self.cy.nrows(),
        }
    }

    /// Dimensional consistency and finiteness.
    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        check_shape("A", &self.a, d.nx, d.nx)?;
        check_shape("Bu", &self.bu, d.nx, d.nu)?;
        check_shape("Bw", &self.bw, d.nx, d.nw)?;
        check_shape("Cz", &self.cz, d.nz, d.nx)?;
        check_shape("Du", &self.du, d.nz, d.nu)?;
        check_shape("Dw", &self.dw, d.nz, d.nw)?;
        check_shape("Cy", &self.cy, d.ny, d.nx)?;
        check_shape("Dyu", &self.dyu, d.ny, d.nu)?;
        check_shape("Dyw", &self.dyw, d.ny, d.nw)?;
        if self.actuator_names.len() != d.nu {
            return Err(Error::Dimension(format!(
                "{} actuator names for {} actuators",
                self.actuator_names.len(),
                d.nu
            )));
        }
        if self.sensor_names.len() != d.ny {
            return Err(Error::Dimension(format!(
                "{} sensor names for {} sensors",
                self.sensor_names.len(),
                d.ny
            )));
        }
        Ok(())
    }

    pub fn with_names(mut self, actuators: Vec<String>, sensors: Vec<String>) -> Result<Self> {
        self.actuator_names = actuators;
        self.sensor_names = sensors;
        self.check()?;
        Ok(self)
    }

    /// Keeps only the listed actuators (columns of `Bu`, `Du`, `Dyu`).
    pub fn select_actuators(&self, keep: &[usize]) -> Self {
        let mut p = self.clone();
        p.bu = linalg::select_columns(&self.bu, keep);
        p.du = linalg::select_columns(&self.du, keep);
        p.dyu = linalg::select_columns(&self.dyu, keep);
        p.actuator_names = keep.iter().map(|&i| self.actuator_names[i].clone()).collect();
        p
    }

    /// Keeps only the listed sensors (rows of `Cy`, `Dyw`, `Dyu`).
    pub fn select_sensors(&self, keep: &[usize]) -> Self {
        let mut p = self.clone();
        p.cy = linalg::select_rows(&self.cy, keep);
        p.dyw = linalg::select_rows(&self.dyw, keep);
        p.dyu = linalg::select_rows(&self.dyu, keep);
        p.sensor_names = keep.iter().map(|&i| self.sensor_names[i].clone()).collect();
        p
    }

    /// Open-loop realization from `w` to `z`.
    pub fn open_loop(&self) -> StateSpace {
        StateSpace {
            a: self.a.clone(),
            b: self.bw.clone(),
            c: self.cz.clone(),
            d: self.dw.clone(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: PlantJson = serde_json::from_str(s)?;
        raw.into_plant()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PlantJson::from_plant(self))?)
    }
}

/// On-disk plant format. `Dw`, `Dyw`, `Du` default to zero, `Cy` to the
/// identity (full-state measurement).
#[derive(Debug, Serialize, Deserialize)]
struct PlantJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "Bu")]
    bu: Vec<Vec<f64>>,
    #[serde(rename = "Bw")]
    bw: Vec<Vec<f64>>,
    #[serde(rename = "Cz")]
    cz: Vec<Vec<f64>>,
    #[serde(rename = "Du", default, skip_serializing_if = "Option::is_none")]
    du: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dw", default, skip_serializing_if = "Option::is_none")]
    dw: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Cy", default, skip_serializing_if = "Option::is_none")]
    cy: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dyu", default, skip_serializing_if = "Option::is_none")]
    dyu: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dyw", default, skip_serializing_if = "Option::is_none")]
    dyw: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actuator_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensor_names: Option<Vec<String>>,
}

impl TryFrom<PlantJson> for GeneralizedPlant {
    type Error = Error;

    fn try_from(raw: PlantJson) -> Result<Self> {
        raw.into_plant()
    }
}

impl From<GeneralizedPlant> for PlantJson {
    fn from(p: GeneralizedPlant) -> Self {
        PlantJson::from_plant(&p)
    }
}

impl PlantJson {
    fn into_plant(self) -> Result<GeneralizedPlant> {
        let a = nested_to_mat(&self.a, "A")?;
        let nx = a.nrows();
        // An all-empty input matrix loses its row count; restore it from A.
        let fix = |m: Mat, rows: usize| if m.nrows() == 0 { Mat::zeros(rows, 0) } else { m };
        let bu = fix(nested_to_mat(&self.bu, "Bu")?, nx);
        let bw = fix(nested_to_mat(&self.bw, "Bw")?, nx);
        let cz = nested_to_mat(&self.cz, "Cz")?;
        let (nu, nw, nz) = (bu.ncols(), bw.ncols(), cz.nrows());
        let opt = |m: Option<Vec<Vec<f64>>>, name: &str, default: Mat| -> Result<Mat> {
            match m {
                Some(rows) => nested_to_mat(&rows, name),
                None => Ok(default),
            }
        };
        let du = opt(self.du, "Du", Mat::zeros(nz, nu))?;
        let dw = opt(self.dw, "Dw", Mat::zeros(nz, nw))?;
        let cy = opt(self.cy, "Cy", Mat::identity(nx, nx))?;
        let ny = cy.nrows();
        let dyw = opt(self.dyw, "Dyw", Mat::zeros(ny, nw))?;
        let dyu = opt(self.dyu, "Dyu", Mat::zeros(ny, nu))?;
        let mut plant = GeneralizedPlant::new(a, bu, bw, cz, du, dw, cy, dyw)?;
        plant.dyu = dyu;
        if let Some(n) = self.actuator_names {
            plant.actuator_names = n;
        }
        if let Some(n) = self.sensor_names {
            plant.sensor_names = n;
        }
        plant.check()?;
        Ok(plant)
    }

    fn from_plant(p: &GeneralizedPlant) -> Self {
        Self {
            a: mat_to_nested(&p.a),
            bu: mat_to_nested(&p.bu),
            bw: mat_to_nested(&p.bw),
            cz: mat_to_nested(&p.cz),
            du: Some(mat_to_nested(&p.du)),
            dw: Some(mat_to_nested(&p.dw)),
            cy: Some(mat_to_nested(&p.cy)),
            dyu: (p.dyu.iter().any(|v| *v != 0.0)).then(|| mat_to_nested(&p.dyu)),
            dyw: Some(mat_to_nested(&p.dyw)),
            actuator_names: Some(p.actuator_names.clone()),
            sensor_names: Some(p.sensor_names.clone()),
        }
    }
}

/// Static state-feedback gain `u = K x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeedbackGain {
    #[serde(rename = "K", with = "crate::io::nested")]
    pub k: Mat,
}

impl StateFeedbackGain {
    pub fn new(k: Mat) -> Self {
        Self { k }
    }

    pub fn zeros(nu: usize, nx: usize) -> Self {
        Self::new(Mat::zeros(nu, nx))
    }
}

/// Dynamic output-feedback controller
/// `ẋK = AK xK + BK y`, `u = CK xK + DK y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicController {
    #[serde(rename = "AK", with = "crate::io::nested")]
    pub ak: Mat,
    #[serde(rename = "BK", with = "crate::io::nested")]
    pub bk: Mat,
    #[serde(rename = "CK", with = "crate::io::nested")]
    pub ck: Mat,
    #[serde(rename = "DK", with = "crate::io::nested")]
    pub dk: Mat,
}

impl DynamicController {
    pub fn zeros(nk: usize, nu: usize, ny: usize) -> Self {
        Self {
            ak: Mat::zeros(nk, nk),
            bk: Mat::zeros(nk, ny),
            ck: Mat::zeros(nu, nk),
            dk: Mat::zeros(nu, ny),
        }
    }

    pub fn order(&self) -> usize {
        self.ak.nrows()
    }

    /// `[CK DK]`, whose rows drive the actuators.
    pub fn output_map(&self) -> Mat {
        hstack(&[&self.ck, &self.dk])
    }

    /// `[BK; DK]`, whose columns read the sensors.
    pub fn input_map(&self) -> Mat {
        vstack(&[&self.bk, &self.dk])
    }

    fn check(&self, plant: &GeneralizedPlant) -> Result<()> {
        let d = plant.dims();
        let nk = self.order();
        check_shape("AK", &self.ak, nk, nk)?;
        check_shape("BK", &self.bk, nk, d.ny)?;
        check_shape("CK", &self.ck, d.nu, nk)?;
        check_shape("DK", &self.dk, d.nu, d.ny)?;
        Ok(())
    }
}

/// Either kind of controller; used by the file formats and `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Controller {
    Dynamic(DynamicController),
    StateFeedback(StateFeedbackGain),
}

impl Controller {
    pub fn close(&self, plant: &GeneralizedPlant) -> Result<ClosedLoop> {
        match self {
            Controller::StateFeedback(k) => close_state_feedback(plant, k),
            Controller::Dynamic(c) => close_output_feedback(plant, c),
        }
    }
}

/// A state-space realization `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        let (p, m) = (c.nrows(), b.ncols());
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, m)?;
        check_shape("C", &c, p, n)?;
        check_shape("D", &d, p, m)?;
        Ok(Self { a, b, c, d })
    }

    /// Pure gain with no dynamics.
    pub fn gain(d: Mat) -> Self {
        let (p, m) = d.shape();
        Self {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, m),
            c: Mat::zeros(p, 0),
            d,
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Realization of `T⁻¹ A T, T⁻¹ B, C T, D`.
    pub fn similarity(&self, t: &Mat) -> Result<Self> {
        let ti = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular similarity transform".into()))?;
        Ok(Self {
            a: &ti * &self.a * t,
            b: &ti * &self.b,
            c: &self.c * t,
            d: self.d.clone(),
        })
    }
}

/// Closed-loop realization plus the per-actuator output maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    /// Maps the closed-loop state to `u`.
    pub c_tilde: Mat,
    /// Feedthrough from `w` to `u`.
    pub d_tilde: Mat,
}

impl ClosedLoop {
    /// `w → z`.
    pub fn performance(&self) -> StateSpace {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }

    /// `w → u_i`.
    pub fn channel(&self, i: usize) -> StateSpace {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c_tilde.rows(i, 1).into_owned(),
            d: self.d_tilde.rows(i, 1).into_owned(),
        }
    }

    /// `w → u`, all actuators.
    pub fn control(&self) -> StateSpace {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c_tilde.clone(),
            d: self.d_tilde.clone(),
        }
    }

    pub fn num_actuators(&self) -> usize {
        self.c_tilde.nrows()
    }
}

pub fn close_state_feedback(plant: &GeneralizedPlant, gain: &StateFeedbackGain) -> Result<ClosedLoop> {
    let d = plant.dims();
    check_shape("K", &gain.k, d.nu, d.nx)?;
    let k = &gain.k;
    Ok(ClosedLoop {
        a: &plant.a + &plant.bu * k,
        b: plant.bw.clone(),
        c: &plant.cz + &plant.du * k,
        d: plant.dw.clone(),
        c_tilde: k.clone(),
        d_tilde: Mat::zeros(d.nu, d.nw),
    })
}

pub fn close_output_feedback(plant: &GeneralizedPlant, ctrl: &DynamicController) -> Result<ClosedLoop> {
    ctrl.check(plant)?;
    let p = plant;
    let (bu_dk, du_dk) = (&p.bu * &ctrl.dk, &p.du * &ctrl.dk);
    let a11 = &p.a + &bu_dk * &p.cy;
    let a12 = &p.bu * &ctrl.ck;
    let a21 = &ctrl.bk * &p.cy;
    let a = vstack(&[&hstack(&[&a11, &a12]), &hstack(&[&a21, &ctrl.ak])]);
    let b = vstack(&[&(&p.bw + &bu_dk * &p.dyw), &(&ctrl.bk * &p.dyw)]);
    let c = hstack(&[&(&p.cz + &du_dk * &p.cy), &(&p.du * &ctrl.ck)]);
    let dcl = &p.dw + &du_dk * &p.dyw;
    let c_tilde = hstack(&[&(&ctrl.dk * &p.cy), &ctrl.ck]);
    let d_tilde = &ctrl.dk * &p.dyw;
    Ok(ClosedLoop {
        a,
        b,
        c,
        d: dcl,
        c_tilde,
        d_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    Unstabilizable,
    Undetectable,
    NonzeroDyu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub eigenvalue: Option<(f64, f64)>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn fmt_mode(l: Complex64) -> String {
    let round = |v: f64| (v * 1e6).round() / 1e6 + 0.0;
    if l.im.abs() < 1e-12 {
        format!("{:+}", round(l.re))
    } else {
        format!("{:+}±{}i", round(l.re), round(l.im.abs()))
    }
}

/// PBH rank test: is `[λI − A, B]` (or its dual) rank deficient?
fn pbh_deficient(a: &Mat, b: &Mat, l: Complex64) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let mut pencil = DMatrix::<Complex64>::zeros(n, n + m);
    for i in 0..n {
        for j in 0..n {
            let diag = if i == j { l } else { Complex64::new(0.0, 0.0) };
            pencil[(i, j)] = diag - Complex64::new(a[(i, j)], 0.0);
        }
        for j in 0..m {
            pencil[(i, n + j)] = Complex64::new(b[(i, j)], 0.0);
        }
    }
    let sv = pencil.svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = 1e-8 * max.max(f64::MIN_POSITIVE);
    sv.iter().filter(|s| **s > tol).count() < n
}

/// Stabilizability of `(A, Bu)`, detectability of `(A, Cy)` and `Dyu = 0`.
pub fn validate_plant(plant: &GeneralizedPlant) -> Result<Vec<Diagnostic>> {
    plant.check()?;
    let mut out = Vec::new();
    let eigs = linalg::eigenvalues(&plant.a)?;
    let ct = plant.cy.transpose();
    let at = plant.a.transpose();
    for l in eigs.iter().filter(|l| l.re >= -1e-9 && l.im >= 0.0) {
        if pbh_deficient(&plant.a, &plant.bu, *l) {
            out.push(Diagnostic {
                kind: DiagnosticKind::Unstabilizable,
                eigenvalue: Some((l.re, l.im)),
                message: format!("unstabilizable mode at {}", fmt_mode(*l)),
            });
        }
        if pbh_deficient(&at, &ct, *l) {
            out.push(Diagnostic {
                kind: DiagnosticKind::Undetectable,
                eigenvalue: Some((l.re, l.im)),
                message: format!("undetectable mode at {}", fmt_mode(*l)),
            });
        }
    }
    let dyu = plant.dyu.amax();
    if dyu != 0.0 {
        out.push(Diagnostic {
            kind: DiagnosticKind::NonzeroDyu,
            eigenvalue: None,
            message: format!("Dyu must be zero (max |entry| {dyu:.3e})"),
        });
    }
    Ok(out)
}
