//! Full-order dynamic output feedback through the linearizing change of
//! variables `(X, Y, ÂK, B̂K, ĈK, D̂K)` and controller reconstruction.

use serde::{Deserialize, Serialize};

use super::state_feedback::SfSpec;
use super::{
    active_set, diag_values, schur_bounds, solve_model, verify, PerformanceKind, SolveInfo, SynthOptions, Verification,
    DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lmi::{Affine, Compiled, Model, Var};
use crate::model::{Controller, DynamicController, GeneralizedPlant};
use crate::sdp::SdpSolution;

/// Refuse reconstruction beyond this condition number of `I − XY`.
pub const MAX_COND_IXY: f64 = 1e12;

/// Controller in transformed coordinates together with the Lyapunov blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatController {
    #[serde(rename = "AKhat", with = "crate::io::nested")]
    pub ak: Mat,
    #[serde(rename = "BKhat", with = "crate::io::nested")]
    pub bk: Mat,
    #[serde(rename = "CKhat", with = "crate::io::nested")]
    pub ck: Mat,
    #[serde(rename = "DKhat", with = "crate::io::nested")]
    pub dk: Mat,
    #[serde(rename = "X", with = "crate::io::nested")]
    pub x: Mat,
    #[serde(rename = "Y", with = "crate::io::nested")]
    pub y: Mat,
}

impl HatController {
    /// `[ĈK D̂K]`; row `i` is actuator `i`'s group.
    pub fn output_map(&self) -> Mat {
        linalg::hstack(&[&self.ck, &self.dk])
    }

    /// `[B̂K; D̂K]`; column `j` is sensor `j`'s group.
    pub fn input_map(&self) -> Mat {
        linalg::vstack(&[&self.bk, &self.dk])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfResult {
    pub controller: DynamicController,
    pub hat: HatController,
    pub gamma: Vec<f64>,
    /// Smallest Γ certified by the hat variables without margin.
    pub gamma_tight: Vec<f64>,
    pub objective: f64,
    pub verification: Verification,
    pub active_set: Vec<usize>,
    pub solve: SolveInfo,
    pub notes: Vec<String>,
}

/// Decision variables shared by the output-feedback and joint problems.
pub(crate) struct HatVars {
    pub x: Var,
    pub y: Var,
    pub ak: Var,
    pub bk: Var,
    pub ck: Var,
    pub dk: Var,
}

fn c(m: &Mat) -> Affine {
    Affine::constant(m.clone())
}

fn v(var: Var) -> Affine {
    Affine::var(var)
}

impl HatVars {
    pub fn declare(m: &mut Model, p: &GeneralizedPlant) -> Self {
        let d = p.dims();
        Self {
            x: m.symmetric("X", d.nx),
            y: m.symmetric("Y", d.nx),
            ak: m.rectangular("AKhat", d.nx, d.nx),
            bk: m.rectangular("BKhat", d.nx, d.ny),
            ck: m.rectangular("CKhat", d.nu, d.nx),
            dk: m.rectangular("DKhat", d.nu, d.ny),
        }
    }

    pub fn read(&self, compiled: &Compiled, sol: &SdpSolution) -> HatController {
        HatController {
            ak: compiled.read(self.ak, sol),
            bk: compiled.read(self.bk, sol),
            ck: compiled.read(self.ck, sol),
            dk: compiled.read(self.dk, sol),
            x: compiled.read(self.x, sol),
            y: compiled.read(self.y, sol),
        }
    }

    /// `M1 + M2 D̂K M3`
    fn dk_affine(&self, m1: &Mat, m2: &Mat, m3: &Mat) -> Result<Affine> {
        v(self.dk).lmul(m2)?.rmul(m3)?.add_const(m1)
    }

    /// The upper-left 2×2 block structure plus the disturbance column, i.e.
    /// the first three block rows/cols shared by the H∞ and H2 families.
    fn state_rows(&self, p: &GeneralizedPlant) -> Result<[[Affine; 3]; 2]> {
        let (x, y) = (v(self.x), v(self.y));
        let ax = x.lmul(&p.a)?.add(&v(self.ck).lmul(&p.bu)?)?.sym()?;
        let off = v(self.ak).transpose().add(&self.dk_affine(&p.a, &p.bu, &p.cy)?)?;
        let ya = y.rmul(&p.a)?.add(&v(self.bk).rmul(&p.cy)?)?.sym()?;
        let w1 = self.dk_affine(&p.bw, &p.bu, &p.dyw)?;
        let w2 = y.rmul(&p.bw)?.add(&v(self.bk).rmul(&p.dyw)?)?;
        let z = Affine::zeros(0, 0);
        Ok([[ax, off, w1], [z.clone(), ya, w2]])
    }

    /// 4×4 bounded-real block (must be ≺ 0).
    pub fn hinf_block(&self, p: &GeneralizedPlant, gamma0: f64) -> Result<Affine> {
        let d = p.dims();
        let [[ax, off, w1], [_, ya, w2]] = self.state_rows(p)?;
        let z1 = v(self.x).lmul(&p.cz)?.add(&v(self.ck).lmul(&p.du)?)?.transpose();
        let z2 = self.dk_affine(&p.cz, &p.du, &p.cy)?.transpose();
        let z3 = self.dk_affine(&p.dw, &p.du, &p.dyw)?.transpose();
        Affine::block_sym(&[
            vec![Some(ax), Some(off), Some(w1), Some(z1)],
            vec![None, Some(ya), Some(w2), Some(z2)],
            vec![None, None, Some(c(&(-gamma0 * Mat::identity(d.nw, d.nw)))), Some(z3)],
            vec![None, None, None, Some(c(&(-gamma0 * Mat::identity(d.nz, d.nz))))],
        ])
    }

    /// 3×3 Gramian block with `−I` in the disturbance slot (must be ≺ 0).
    pub fn gramian_block(&self, p: &GeneralizedPlant) -> Result<Affine> {
        let nw = p.dims().nw;
        let [[ax, off, w1], [_, ya, w2]] = self.state_rows(p)?;
        Affine::block_sym(&[
            vec![Some(ax), Some(off), Some(w1)],
            vec![None, Some(ya), Some(w2)],
            vec![None, None, Some(c(&(-Mat::identity(nw, nw))))],
        ])
    }

    /// `[[X, I, (CzX+DuĈK)ᵀ], [∗, Y, (Cz+DuD̂KCy)ᵀ], [∗, ∗, Q]]` (must be ≻ 0).
    pub fn h2_output_block(&self, p: &GeneralizedPlant, q: Var) -> Result<Affine> {
        let nx = p.dims().nx;
        let z1 = v(self.x).lmul(&p.cz)?.add(&v(self.ck).lmul(&p.du)?)?.transpose();
        let z2 = self.dk_affine(&p.cz, &p.du, &p.cy)?.transpose();
        Affine::block_sym(&[
            vec![Some(v(self.x)), Some(Affine::identity(nx)), Some(z1)],
            vec![None, Some(v(self.y)), Some(z2)],
            vec![None, None, Some(v(q))],
        ])
    }

    /// `[[X, I], [I, Y]]` (must be ≻ 0).
    pub fn positivity(&self, nx: usize) -> Result<Affine> {
        Affine::block_sym(&[
            vec![Some(v(self.x)), Some(Affine::identity(nx))],
            vec![None, Some(v(self.y))],
        ])
    }

    /// `[[γ, row_i(ĈK), row_i(D̂K Cy)], [∗, X, I], [∗, ∗, Y]]` (must be ≻ 0).
    pub fn channel_block(&self, p: &GeneralizedPlant, gamma_i: Affine, i: usize) -> Result<Affine> {
        let nx = p.dims().nx;
        Affine::block_sym(&[
            vec![Some(gamma_i), Some(v(self.ck).row(i)?), Some(v(self.dk).rmul(&p.cy)?.row(i)?)],
            vec![None, Some(v(self.x)), Some(Affine::identity(nx))],
            vec![None, None, Some(v(self.y))],
        ])
    }

    /// Adds the common structural constraints: positivity, `D̂K Dyw = 0`
    /// when `Dyw ≠ 0`, and the optional bound on `Y`.
    pub fn add_common(&self, m: &mut Model, p: &GeneralizedPlant, opts: &SynthOptions) -> Result<Vec<String>> {
        let nx = p.dims().nx;
        let mut notes = Vec::new();
        m.positive("positivity", self.positivity(nx)?);
        if p.dyw.amax() > 0.0 {
            m.zero("dk-dyw", v(self.dk).rmul(&p.dyw)?);
        }
        if opts.y_bound > 0.0 && opts.y_bound.is_finite() {
            let b = opts.y_bound * y_scale(p);
            m.constrain(
                "y-bound",
                v(self.y).neg().add_const(&(Mat::identity(nx, nx) * b))?,
                crate::lmi::Sense::Psd,
                false,
            );
            notes.push(format!("Y bounded by {b:.3e}·I"));
        }
        Ok(notes)
    }
}

/// Scale used for the `Y` bound: grows with the plant data so the bound is
/// unit-consistent for moderately scaled models.
fn y_scale(p: &GeneralizedPlant) -> f64 {
    let s = [&p.a, &p.bw, &p.cz, &p.cy]
        .iter()
        .map(|m| linalg::spectral_norm(m))
        .fold(1.0, f64::max);
    s * s
}

pub(crate) fn check_plant(p: &GeneralizedPlant, kind: PerformanceKind) -> Result<()> {
    p.check()?;
    if p.dyu.amax() > 0.0 {
        return Err(Error::InvalidParameter("output feedback requires Dyu = 0".into()));
    }
    if kind == PerformanceKind::H2 {
        let norm = p.dw.amax();
        if norm > 0.0 {
            return Err(Error::NonzeroFeedthrough { norm });
        }
    }
    Ok(())
}

/// Projects `D̂K` onto `{D : D Dyw = 0}` to strip solver-level residue so the
/// channel feedthrough is exactly zero.
pub(crate) fn clean_dk(hat: &mut HatController, p: &GeneralizedPlant) {
    if p.dyw.amax() == 0.0 {
        return;
    }
    let svd = p.dyw.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let tol = svd.singular_values.iter().copied().fold(0.0, f64::max) * 1e-12;
    let mut proj = Mat::identity(p.dyw.nrows(), p.dyw.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let col = u.column(k);
            proj -= col * col.transpose();
        }
    }
    hat.dk = &hat.dk * proj;
}

fn synth(spec: &SfSpec, opts: &SynthOptions, what: &str) -> Result<OfResult> {
    let p = &spec.plant;
    check_plant(p, spec.kind)?;
    super::check_gamma0(spec.gamma0)?;
    let d = p.dims();
    super::check_weights(&spec.rho, d.nu, "rho", true)?;
    if let Some(g) = &spec.gamma_max {
        super::check_weights(g, d.nu, "gamma_max", true)?;
    }

    let mut m = Model::new();
    let hv = HatVars::declare(&mut m, p);
    let g = m.diagonal("Gamma", d.nu);
    match spec.kind {
        PerformanceKind::Hinf => m.negative("bounded-real", hv.hinf_block(p, spec.gamma0)?),
        PerformanceKind::H2 => {
            let q = m.symmetric("Q", d.nz);
            m.positive("h2-output", hv.h2_output_block(p, q)?);
            let tr = Affine::var(q).trace()?.neg().add_const(&Mat::from_element(1, 1, spec.gamma0 * spec.gamma0))?;
            m.positive("h2-trace", tr);
        }
    }
    m.negative("gramian", hv.gramian_block(p)?);
    let ga = Affine::var(g);
    for i in 0..d.nu {
        let gi = ga.row(i)?.col(i)?;
        m.positive(&format!("channel-{}", i + 1), hv.channel_block(p, gi.clone(), i)?);
        if let Some(gmax) = &spec.gamma_max {
            m.positive(&format!("gamma-max-{}", i + 1), gi.neg().add_const(&Mat::from_element(1, 1, gmax[i]))?);
        }
    }
    let notes = hv.add_common(&mut m, p, opts)?;
    let rho = Mat::from_row_slice(1, d.nu, &spec.rho);
    m.minimize(ga.lmul(&rho)?.rmul(&Mat::from_element(d.nu, 1, 1.0))?);

    let (compiled, sol, info) = solve_model(&m, opts, what)?;
    let mut hat = hv.read(&compiled, &sol);
    clean_dk(&mut hat, p);
    let gamma = diag_values(&compiled.read(g, &sol));
    let controller = reconstruct_controller(&hat, p)?;
    let verification = verify(p, &Controller::Dynamic(controller.clone()), spec.kind, spec.gamma0, Some(&gamma))?;
    let objective = gamma.iter().zip(&spec.rho).map(|(g, r)| g * r).sum();
    let nx = p.dims().nx;
    let pos = linalg::vstack(&[
        &linalg::hstack(&[&hat.x, &Mat::identity(nx, nx)]),
        &linalg::hstack(&[&Mat::identity(nx, nx), &hat.y]),
    ]);
    let gamma_tight = schur_bounds(&linalg::hstack(&[&hat.ck, &(&hat.dk * &p.cy)]), &pos, &gamma);
    let roots: Vec<f64> = gamma_tight.iter().map(|g| g.sqrt()).collect();
    Ok(OfResult {
        controller,
        hat,
        active_set: active_set(&roots, DEFAULT_THRESHOLD),
        gamma,
        gamma_tight,
        objective,
        verification,
        solve: info,
        notes,
    })
}

pub fn synth_of_hinf(spec: &SfSpec, opts: &SynthOptions) -> Result<OfResult> {
    if spec.kind != PerformanceKind::Hinf {
        return Err(Error::InvalidParameter("synth_of_hinf needs the H∞ kind".into()));
    }
    synth(spec, opts, "output-feedback H∞")
}

pub fn synth_of_h2(spec: &SfSpec, opts: &SynthOptions) -> Result<OfResult> {
    if spec.kind != PerformanceKind::H2 {
        return Err(Error::InvalidParameter("synth_of_h2 needs the H2 kind".into()));
    }
    synth(spec, opts, "output-feedback H2")
}

/// `M Nᵀ = I − XY` by LU with partial pivoting: `M = Pᵀ L`, `N = Uᵀ`.
pub fn factor_mn(x: &Mat, y: &Mat) -> Result<(Mat, Mat)> {
    let n = x.nrows();
    let ixy = Mat::identity(n, n) - x * y;
    let cond = linalg::cond(&ixy);
    if !(cond <= MAX_COND_IXY) {
        return Err(Error::ReconstructionFailure(format!("I − XY has condition number {cond:.3e}")));
    }
    let lu = ixy.lu();
    let mut l = lu.l();
    lu.p().inv_permute_rows(&mut l);
    Ok((l, lu.u().transpose()))
}

fn solve_or_fail(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::ReconstructionFailure(format!("{what} is singular")))
}

/// Inverts the change of variables.
pub fn reconstruct_controller(hat: &HatController, p: &GeneralizedPlant) -> Result<DynamicController> {
    let (x, y) = (&hat.x, &hat.y);
    let (m, n) = factor_mn(x, y)?;
    let dk = hat.dk.clone();
    // CK = (ĈK − DK Cy X) M⁻ᵀ
    let ck = solve_or_fail(&m, &(&hat.ck - &dk * &p.cy * x).transpose(), "M")?.transpose();
    // BK = N⁻¹ (B̂K − Y Bu DK)
    let bk = solve_or_fail(&n, &(&hat.bk - y * &p.bu * &dk), "N")?;
    let inner = &hat.ak - &n * &bk * &p.cy * x - y * &p.bu * &ck * m.transpose() - y * (&p.a + &p.bu * &dk * &p.cy) * x;
    let left = solve_or_fail(&n, &inner, "N")?;
    let ak = solve_or_fail(&m, &left.transpose(), "M")?.transpose();
    let ctrl = DynamicController { ak, bk, ck, dk };
    if ![&ctrl.ak, &ctrl.bk, &ctrl.ck, &ctrl.dk].iter().all(|m| linalg::is_finite(m)) {
        return Err(Error::ReconstructionFailure("non-finite controller".into()));
    }
    Ok(ctrl)
}

/// Forward change of variables for a given controller and factorization.
pub fn hat_transform(
    ctrl: &DynamicController,
    p: &GeneralizedPlant,
    x: &Mat,
    y: &Mat,
    m: &Mat,
    n: &Mat,
) -> Result<HatController> {
    let d = p.dims();
    let nx = d.nx;
    for (name, mat, r, cc) in [
        ("X", x, nx, nx),
        ("Y", y, nx, nx),
        ("M", m, nx, nx),
        ("N", n, nx, nx),
        ("AK", &ctrl.ak, nx, nx),
        ("BK", &ctrl.bk, nx, d.ny),
        ("CK", &ctrl.ck, d.nu, nx),
        ("DK", &ctrl.dk, d.nu, d.ny),
    ] {
        if mat.shape() != (r, cc) {
            return Err(Error::Dimension(format!("{name} is {:?}, expected ({r}, {cc})", mat.shape())));
        }
    }
    let (ak, bk, ck, dk) = (&ctrl.ak, &ctrl.bk, &ctrl.ck, &ctrl.dk);
    Ok(HatController {
        ak: n * ak * m.transpose() + n * bk * &p.cy * x + y * &p.bu * ck * m.transpose()
            + y * (&p.a + &p.bu * dk * &p.cy) * x,
        bk: n * bk + y * &p.bu * dk,
        ck: ck * m.transpose() + dk * &p.cy * x,
        dk: dk.clone(),
        x: x.clone(),
        y: y.clone(),
    })
}
