//! Primal-dual interior-point method on the homogeneous self-dual embedding
//! with Nesterov–Todd scaling and a Mehrotra predictor-corrector step.
//!
//! Internally the problem is put in the conic form
//! `min cᵀx  s.t.  Gx + s = h, Ax = b, s ⪰ 0` with `h = F_0`, `G = −F`.

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use super::{IterationRecord, SdpOptions, SdpProblem, SdpSolution, SdpStatus};
use crate::error::Result;
use crate::linalg::{self, Mat, Vector};

const STEP: f64 = 0.99;

/// Coefficient matrix of one variable inside one block, restricted to the
/// rows it touches: `F = E small Eᵀ` with `E` selecting `idx`.
struct Coef {
    var: usize,
    idx: Vec<usize>,
    small: Mat,
}

struct Block {
    dim: usize,
    f0: Mat,
    coefs: Vec<Coef>,
}

struct Data {
    n: usize,
    blocks: Vec<Block>,
    c: Vector,
    /// Equalities after removing dependent rows; rows are orthonormal.
    a: Mat,
    b: Vector,
    /// Maps reduced multipliers back to the original equality rows.
    y_map: Mat,
    /// Orthonormal basis of `ker A`, present when there are equalities.
    null: Option<Mat>,
    offset: f64,
    degree: usize,
}

enum Prepared {
    Ready(Data),
    /// The equality system itself is inconsistent; carries a ray `y` with
    /// `Aᵀy = 0`, `bᵀy = −1`.
    InconsistentEqualities(Vector),
}

fn prepare(p: &SdpProblem) -> Prepared {
    let n = p.num_vars;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for blk in &p.blocks {
        let d = blk.dim;
        let mut f0 = Mat::zeros(d, d);
        let mut per_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> =
            Default::default();
        for e in &blk.entries {
            match e.var {
                None => {
                    f0[(e.row, e.col)] += e.value;
                    if e.row != e.col {
                        f0[(e.col, e.row)] += e.value;
                    }
                }
                Some(i) => per_var.entry(i).or_default().push((e.row, e.col, e.value)),
            }
        }
        let coefs = per_var
            .into_iter()
            .map(|(var, ents)| {
                let mut idx: Vec<usize> = ents.iter().flat_map(|&(r, c, _)| [r, c]).collect();
                idx.sort_unstable();
                idx.dedup();
                let pos = |r: usize| idx.binary_search(&r).unwrap();
                let mut small = Mat::zeros(idx.len(), idx.len());
                for &(r, c, v) in &ents {
                    let (i, j) = (pos(r), pos(c));
                    small[(i, j)] += v;
                    if i != j {
                        small[(j, i)] += v;
                    }
                }
                Coef { var, idx, small }
            })
            .collect();
        blocks.push(Block { dim: d, f0, coefs });
    }

    let m = p.equalities.len();
    let mut a_full = Mat::zeros(m, n);
    let mut b_full = Vector::zeros(m);
    for (j, eq) in p.equalities.iter().enumerate() {
        for &(i, v) in &eq.coeffs {
            a_full[(j, i)] += v;
        }
        b_full[j] = eq.rhs;
    }
    let (a, b, y_map, null) = if m == 0 {
        (Mat::zeros(0, n), Vector::zeros(0), Mat::zeros(0, 0), None)
    } else {
        let svd = a_full.clone().svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let sv = &svd.singular_values;
        let tol = 1e-12 * sv.max().max(1e-300) * (m.max(n) as f64);
        let keep: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] > tol).collect();
        let ur = linalg::select_columns(&u, &keep);
        let a_orth = linalg::select_rows(&v_t, &keep);
        let inv_s = Vector::from_iterator(keep.len(), keep.iter().map(|&k| 1.0 / sv[k]));
        let proj = ur.transpose() * &b_full;
        let miss = &b_full - &ur * &proj;
        if miss.norm() > 1e-9 * (1.0 + b_full.norm()) {
            let scale = miss.dot(&b_full);
            return Prepared::InconsistentEqualities(-miss / scale);
        }
        let b_orth = proj.component_mul(&inv_s);
        let y_map = &ur * Mat::from_diagonal(&inv_s);
        let comp = Mat::identity(n, n) - a_orth.transpose() * &a_orth;
        let eig = SymmetricEigen::new(linalg::symmetrize(&comp));
        let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        let null = linalg::select_columns(&eig.eigenvectors, &cols);
        (a_orth, b_orth, y_map, Some(null))
    };

    Prepared::Ready(Data {
        n,
        degree: blocks.iter().map(|b| b.dim).sum(),
        blocks,
        c: Vector::from_column_slice(&p.objective),
        a,
        b,
        y_map,
        null,
        offset: p.objective_offset,
    })
}

type Blocks = Vec<Mat>;

fn inner(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &[Mat]) -> f64 {
    inner(a, a).sqrt()
}

fn axpy(y: &mut [Mat], alpha: f64, x: &[Mat]) {
    for (yk, xk) in y.iter_mut().zip(x) {
        *yk += xk * alpha;
    }
}

fn scaled(a: &[Mat], alpha: f64) -> Blocks {
    a.iter().map(|m| m * alpha).collect()
}

impl Data {
    fn h(&self) -> Blocks {
        self.blocks.iter().map(|b| b.f0.clone()).collect()
    }

    fn g(&self, x: &Vector) -> Blocks {
        self.blocks
            .iter()
            .map(|blk| {
                let mut m = Mat::zeros(blk.dim, blk.dim);
                for cf in &blk.coefs {
                    let xi = x[cf.var];
                    if xi == 0.0 {
                        continue;
                    }
                    for (p, &r) in cf.idx.iter().enumerate() {
                        for (q, &c) in cf.idx.iter().enumerate() {
                            m[(r, c)] -= xi * cf.small[(p, q)];
                        }
                    }
                }
                m
            })
            .collect()
    }

    fn gt(&self, z: &[Mat]) -> Vector {
        let mut out = Vector::zeros(self.n);
        for (blk, zk) in self.blocks.iter().zip(z) {
            for cf in &blk.coefs {
                let mut acc = 0.0;
                for (p, &r) in cf.idx.iter().enumerate() {
                    for (q, &c) in cf.idx.iter().enumerate() {
                        acc += cf.small[(p, q)] * zk[(r, c)];
                    }
                }
                out[cf.var] -= acc;
            }
        }
        out
    }

    fn identity(&self) -> Blocks {
        self.blocks.iter().map(|b| Mat::identity(b.dim, b.dim)).collect()
    }

    /// `H_ij = Σ_k tr(F_ki Q_k F_kj Q_k)`.
    fn schur_matrix(&self, q: &[Mat]) -> Mat {
        let mut h = Mat::zeros(self.n, self.n);
        for (blk, qk) in self.blocks.iter().zip(q) {
            let ms: Vec<Mat> = blk
                .coefs
                .iter()
                .map(|cf| {
                    let qe = linalg::select_columns(qk, &cf.idx);
                    &qe * &cf.small * qe.transpose()
                })
                .collect();
            for (a, ci) in blk.coefs.iter().enumerate() {
                let mi = &ms[a];
                for cj in &blk.coefs[a..] {
                    let mut v = 0.0;
                    for (p, &r) in cj.idx.iter().enumerate() {
                        for (s, &c) in cj.idx.iter().enumerate() {
                            v += cj.small[(p, s)] * mi[(r, c)];
                        }
                    }
                    h[(ci.var, cj.var)] += v;
                    if ci.var != cj.var {
                        h[(cj.var, ci.var)] += v;
                    }
                }
            }
        }
        h
    }
}

/// NT scaling of one block: `S = R Λ Rᵀ`, `Z = R⁻ᵀ Λ R⁻¹`.
struct Scaling {
    rinv: Mat,
    lambda: Vector,
}

fn nt_scaling(s: &Mat, z: &Mat) -> Option<Scaling> {
    let ls = Cholesky::new(linalg::symmetrize(s))?.l();
    let lz = Cholesky::new(linalg::symmetrize(z))?.l();
    let svd = (lz.transpose() * &ls).svd(true, false);
    let u = svd.u?;
    let sv = svd.singular_values;
    if sv.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let isq = Mat::from_diagonal(&sv.map(|l| 1.0 / l.sqrt()));
    let rinv = &isq * u.transpose() * lz.transpose();
    Some(Scaling { rinv, lambda: sv })
}

/// Largest `α` with `Λ + α dX̃ ⪰ 0` (infinite if unconstrained).
fn max_step(lambda: &Vector, dx: &Mat) -> f64 {
    let d = lambda.len();
    let m = Mat::from_fn(d, d, |i, j| dx[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    let lmin = SymmetricEigen::new(linalg::symmetrize(&m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

/// Factored reduced KKT system `[[H, Aᵀ], [A, 0]]`. With equalities present
/// the step is split as `dx = Aᵀr + Nξ` over an orthonormal null-space basis
/// `N`, so `A dx = r` holds to rounding no matter how badly `H` is scaled.
struct Kkt<'a> {
    data: &'a Data,
    rinv: Vec<Mat>,
    h: Mat,
    /// `Nᵀ H N` (or `H` without equalities) and its Cholesky factor.
    hn: Mat,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl<'a> Kkt<'a> {
    fn new(data: &'a Data, rinv: Vec<Mat>) -> Option<Self> {
        let q: Vec<Mat> = rinv.iter().map(|r| r.transpose() * r).collect();
        let h = data.schur_matrix(&q);
        let hn = match &data.null {
            None => h.clone(),
            Some(nb) => linalg::symmetrize(&(nb.transpose() * &h * nb)),
        };
        let k = hn.nrows();
        if k == 0 {
            return Some(Self { data, rinv, h, hn, chol: None });
        }
        let diag_max = (0..k).map(|i| hn[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut delta = 1e-15 * diag_max;
        let chol = loop {
            let mut hr = hn.clone();
            for i in 0..k {
                hr[(i, i)] += delta;
            }
            if let Some(c) = Cholesky::new(hr) {
                break c;
            }
            delta *= 100.0;
            if delta > 1e-4 * diag_max {
                return None;
            }
        };
        Some(Self { data, rinv, h, hn, chol: Some(chol) })
    }

    /// Solves `hn ξ = r` with a few steps of iterative refinement.
    fn solve_hn(&self, r: &Vector) -> Vector {
        let Some(chol) = &self.chol else {
            return Vector::zeros(0);
        };
        let mut xi = chol.solve(r);
        let scale = r.norm();
        for _ in 0..3 {
            let e = r - &self.hn * &xi;
            if e.norm() <= 1e-15 * scale {
                break;
            }
            xi += chol.solve(&e);
        }
        xi
    }

    fn solve_reduced(&self, rx: &Vector, ry: &Vector) -> (Vector, Vector) {
        let d = self.data;
        match &d.null {
            None => (self.solve_hn(rx), Vector::zeros(0)),
            Some(nb) => {
                let dxp = d.a.transpose() * ry;
                let xi = self.solve_hn(&(nb.transpose() * (rx - &self.h * &dxp)));
                let dx = dxp + nb * xi;
                let dy = &d.a * (rx - &self.h * &dx);
                (dx, dy)
            }
        }
    }

    /// Solves `Aᵀdy + Gᵀdz = r1`, `A dx = r2`, `G dx − W dz W = r3 − R U Rᵀ`.
    /// Returns `dx`, `dy` and the scaled `dz̃ = Rᵀ dz R`. Working with `dz̃`
    /// avoids the cancellation in `Q (G dx − r3) Q` once `Q` is huge.
    fn solve(&self, r1: &Vector, r2: &Vector, r3: &[Mat], u: Option<&[Mat]>) -> (Vector, Vector, Blocks) {
        let d = self.data;
        let mut w3: Blocks = self.rinv.iter().zip(r3).map(|(ri, r)| ri * r * ri.transpose()).collect();
        if let Some(u) = u {
            axpy(&mut w3, -1.0, u);
        }
        let rx = r1 + d.gt(&self.unscale(&w3));
        let (mut dx, mut dy) = self.solve_reduced(&rx, r2);
        let scale = r1.norm() + r2.norm() + norm(&w3);
        let mut dzt = self.dual_direction(&dx, &w3);
        for _ in 0..3 {
            let e1 = r1 - d.gt(&self.unscale(&dzt)) - d.a.transpose() * &dy;
            let e2 = r2 - &d.a * &dx;
            if e1.norm() + e2.norm() <= 1e-15 * scale {
                break;
            }
            let (cx, cy) = self.solve_reduced(&e1, &e2);
            dx += cx;
            dy += cy;
            dzt = self.dual_direction(&dx, &w3);
        }
        (dx, dy, dzt)
    }

    /// `dz̃ = R⁻¹ (G dx) R⁻ᵀ − w3`.
    fn dual_direction(&self, dx: &Vector, w3: &[Mat]) -> Blocks {
        self.data
            .g(dx)
            .iter()
            .zip(self.rinv.iter().zip(w3))
            .map(|(g, (ri, w))| linalg::symmetrize(&(ri * g * ri.transpose() - w)))
            .collect()
    }

    /// `R⁻ᵀ M R⁻¹`, the unscaled dual matrix.
    fn unscale(&self, m: &[Mat]) -> Blocks {
        self.rinv
            .iter()
            .zip(m)
            .map(|(ri, x)| linalg::symmetrize(&(ri.transpose() * x * ri)))
            .collect()
    }
}

struct Residuals {
    f1: Vector,
    f2: Vector,
    f3: Blocks,
    f4: f64,
}

#[derive(Clone)]
struct Iterate {
    x: Vector,
    y: Vector,
    s: Blocks,
    z: Blocks,
    tau: f64,
    kappa: f64,
}

impl Data {
    fn residuals(&self, it: &Iterate, h: &[Mat]) -> Residuals {
        let f1 = self.a.transpose() * &it.y + self.gt(&it.z) + &self.c * it.tau;
        let f2 = &self.a * &it.x - &self.b * it.tau;
        let mut f3 = self.g(&it.x);
        axpy(&mut f3, 1.0, &it.s);
        axpy(&mut f3, -it.tau, h);
        let f4 = self.c.dot(&it.x) + self.b.dot(&it.y) + inner(h, &it.z) + it.kappa;
        Residuals { f1, f2, f3, f4 }
    }

    fn shift_into_cone(&self, m: &mut Blocks) {
        let nrm = norm(m).max(1.0);
        let ts = m
            .iter()
            .map(|b| -linalg::min_sym_eig(b))
            .fold(f64::NEG_INFINITY, f64::max);
        if ts >= -1e-8 * nrm {
            for b in m.iter_mut() {
                let d = b.nrows();
                *b += Mat::identity(d, d) * (1.0 + ts);
            }
        }
    }
}

fn ray_solution(p: &SdpProblem, status: SdpStatus, message: String) -> SdpSolution {
    SdpSolution {
        status,
        x: vec![0.0; p.num_vars],
        y: vec![0.0; p.equalities.len()],
        z: p.blocks.iter().map(|b| Mat::zeros(b.dim, b.dim)).collect(),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations: 0,
        message,
        log: Vec::new(),
    }
}

/// Solves an SDP. Malformed problems are errors; everything else, including
/// numerical trouble, is reported through [`SdpStatus`].
pub fn solve_sdp(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    problem.validate()?;
    let data = match prepare(problem) {
        Prepared::Ready(d) => d,
        Prepared::InconsistentEqualities(y) => {
            let mut sol = ray_solution(problem, SdpStatus::Infeasible, "equalities are inconsistent".into());
            sol.y = y.iter().copied().collect();
            return Ok(sol);
        }
    };
    if data.blocks.is_empty() {
        return Err(crate::Error::InvalidParameter("problem has no PSD blocks".into()));
    }
    Ok(Solver::new(&data, opts).run(problem))
}

struct Solver<'a> {
    data: &'a Data,
    opts: SdpOptions,
    h: Blocks,
    resx0: f64,
    resy0: f64,
    resz0: f64,
}

/// Relative certificate quality accepted when the solver stalls before
/// reaching `feas_tol`.
const INEXACT_RAY: f64 = 1e-5;
/// `τ/κ` below which the embedding is taken to be heading for a ray.
const RAY_TAU_RATIO: f64 = 1e-3;

#[derive(Clone, Copy)]
enum Ray {
    Primal,
    Dual,
}

struct Certificate {
    kind: Ray,
    quality: f64,
    scale: f64,
    iterate: Iterate,
    iteration: usize,
}

/// Best approximate infeasibility certificate seen so far.
#[derive(Default)]
struct Certificates {
    best: Option<Certificate>,
}

impl Certificates {
    /// Keeps the candidate if it beats the current best; asks to stop once
    /// the certificate has clearly started to degrade, which happens when the
    /// Newton systems lose accuracy along a diverging ray.
    fn record(&mut self, kind: Ray, quality: f64, scale: f64, it: &Iterate, iteration: usize) -> Option<Outcome> {
        if let Some(b) = &self.best {
            if quality > 100.0 * b.quality {
                return Some(Outcome::Stopped("infeasibility certificate degrading".into()));
            }
        }
        let candidate = it.tau <= RAY_TAU_RATIO * it.kappa && quality <= INEXACT_RAY;
        if candidate && self.best.as_ref().is_none_or(|b| quality < b.quality) {
            self.best = Some(Certificate { kind, quality, scale, iterate: it.clone(), iteration });
        }
        None
    }
}

enum Outcome {
    Optimal,
    PrimalInfeasible(f64),
    DualInfeasible(f64),
    Stopped(String),
}

impl<'a> Solver<'a> {
    fn new(data: &'a Data, opts: &SdpOptions) -> Self {
        let h = data.h();
        Self {
            resx0: data.c.norm().max(1.0),
            resy0: data.b.norm().max(1.0),
            resz0: norm(&h).max(1.0),
            data,
            opts: *opts,
            h,
        }
    }

    fn initial_point(&self) -> Option<Iterate> {
        let d = self.data;
        let kkt = Kkt::new(d, d.identity())?;
        let zero_blocks: Blocks = d.blocks.iter().map(|b| Mat::zeros(b.dim, b.dim)).collect();
        // least-squares primal start: s = h − Gx
        let (x, _, v) = kkt.solve(&Vector::zeros(d.n), &d.b, &self.h, None);
        let mut s = scaled(&v, -1.0);
        // least-norm dual start: Gᵀz + Aᵀy = −c
        let (_, y, mut z) = kkt.solve(&-&d.c, &Vector::zeros(d.b.len()), &zero_blocks, None);
        d.shift_into_cone(&mut s);
        d.shift_into_cone(&mut z);
        Some(Iterate { x, y, s, z, tau: 1.0, kappa: 1.0 })
    }

    fn run(&self, problem: &SdpProblem) -> SdpSolution {
        let d = self.data;
        let mut it = match self.initial_point() {
            Some(it) => it,
            None => {
                return ray_solution(problem, SdpStatus::MaxIter, "numerical breakdown at initialization".into())
            }
        };
        let mut log: Vec<IterationRecord> = Vec::new();
        let mut last_step = 0.0;
        let mut tiny_steps = 0;
        // best iterate by max(pres, dres, gap), returned if we stop early
        let mut best: Option<(f64, Iterate, IterationRecord, f64)> = None;
        let mut certs = Certificates::default();
        let mut iter = 0;
        let outcome = loop {
            let res = d.residuals(&it, &self.h);
            let tau = it.tau;
            let cx = d.c.dot(&it.x);
            let hz_by = inner(&self.h, &it.z) + d.b.dot(&it.y);
            let pcost = cx / tau + d.offset;
            let dcost = -hz_by / tau + d.offset;
            let sz = inner(&it.s, &it.z);
            let pres = (res.f2.norm() / self.resy0).max(norm(&res.f3) / self.resz0) / tau;
            let dres = res.f1.norm() / self.resx0 / tau;
            let gap = sz / (tau * tau) / (1.0 + pcost.abs().min(dcost.abs()));
            let rec = IterationRecord {
                iteration: iter,
                primal_objective: pcost,
                dual_objective: dcost,
                primal_residual: pres,
                dual_residual: dres,
                complementarity: sz / (tau * tau),
                tau,
                kappa: it.kappa,
                step: last_step,
            };
            log.push(rec);
            let merit = (pres / self.opts.feas_tol)
                .max(dres / self.opts.feas_tol)
                .max(gap / self.opts.gap_tol);
            if best.as_ref().map_or(true, |b| merit <= b.0) {
                best = Some((merit, it.clone(), rec, gap));
            }

            if pres <= self.opts.feas_tol && dres <= self.opts.feas_tol && gap <= self.opts.gap_tol {
                break Outcome::Optimal;
            }
            if hz_by < 0.0 {
                let ray = (&res.f1 - &d.c * tau).norm() / self.resx0 / -hz_by;
                if ray <= self.opts.feas_tol {
                    break Outcome::PrimalInfeasible(-hz_by);
                }
                if let Some(stop) = certs.record(Ray::Primal, ray, -hz_by, &it, iter) {
                    break stop;
                }
            }
            if cx < 0.0 {
                let ax = (&res.f2 + &d.b * tau).norm() / self.resy0;
                let mut gxs = res.f3.clone();
                axpy(&mut gxs, tau, &self.h);
                let ray = ax.max(norm(&gxs) / self.resz0) / -cx;
                if ray <= self.opts.feas_tol {
                    break Outcome::DualInfeasible(-cx);
                }
                if let Some(stop) = certs.record(Ray::Dual, ray, -cx, &it, iter) {
                    break stop;
                }
            }
            if iter >= self.opts.max_iter {
                break Outcome::Stopped(format!("iteration cap {} reached", self.opts.max_iter));
            }
            match self.step(&mut it, &res) {
                Some(alpha) => {
                    last_step = alpha;
                    tiny_steps = if alpha < 1e-8 { tiny_steps + 1 } else { 0 };
                    if tiny_steps >= 3 {
                        break Outcome::Stopped("step length collapsed".into());
                    }
                }
                None => break Outcome::Stopped(format!("numerical breakdown at iteration {iter}")),
            }
            iter += 1;
        };

        let n_eq = problem.equalities.len();
        let last = log.len() - 1;
        let (status, scale, message, rec_at) = match outcome {
            Outcome::Optimal => (SdpStatus::Optimal, it.tau, "optimal".to_string(), last),
            Outcome::PrimalInfeasible(s) => (SdpStatus::Infeasible, s, "primal infeasible".into(), last),
            Outcome::DualInfeasible(s) => (SdpStatus::Unbounded, s, "dual infeasible".into(), last),
            Outcome::Stopped(m) if certs.best.is_some() => {
                let c = certs.best.take().expect("checked");
                it = c.iterate;
                let what = match c.kind {
                    Ray::Primal => (SdpStatus::Infeasible, "primal infeasible"),
                    Ray::Dual => (SdpStatus::Unbounded, "dual infeasible"),
                };
                let msg = format!("{} at reduced accuracy (certificate {:.1e} at iteration {}; {m})", what.1, c.quality, c.iteration);
                (what.0, c.scale, msg, c.iteration)
            }
            Outcome::Stopped(m) => {
                let (_, b, _, _) = best.as_ref().unwrap();
                it = b.clone();
                (SdpStatus::MaxIter, it.tau, m, last)
            }
        };
        let rec = match status {
            SdpStatus::MaxIter => best.as_ref().unwrap().2,
            _ => log[rec_at],
        };
        let gap = match status {
            SdpStatus::MaxIter => best.as_ref().unwrap().3,
            _ => rec.complementarity / (1.0 + rec.primal_objective.abs().min(rec.dual_objective.abs())),
        };
        let x = &it.x / scale;
        let y = &it.y / scale;
        SdpSolution {
            status,
            x: x.iter().copied().collect(),
            y: if n_eq == 0 { Vec::new() } else { (&d.y_map * y).iter().copied().collect() },
            z: scaled(&it.z, 1.0 / scale),
            primal_objective: rec.primal_objective,
            dual_objective: rec.dual_objective,
            primal_residual: rec.primal_residual,
            dual_residual: rec.dual_residual,
            gap,
            iterations: iter,
            message,
            log,
        }
    }

    /// One predictor-corrector step; `None` on numerical breakdown.
    fn step(&self, it: &mut Iterate, res: &Residuals) -> Option<f64> {
        let d = self.data;
        let sc: Vec<Scaling> = it
            .s
            .iter()
            .zip(&it.z)
            .map(|(s, z)| nt_scaling(s, z))
            .collect::<Option<_>>()?;
        let kkt = Kkt::new(d, sc.iter().map(|s| s.rinv.clone()).collect())?;
        let mu = (inner(&it.s, &it.z) + it.tau * it.kappa) / (d.degree as f64 + 1.0);
        let h_scaled: Blocks = sc.iter().zip(&self.h).map(|(s, h)| &s.rinv * h * s.rinv.transpose()).collect();

        let (dxb, dyb, dztb) = kkt.solve(&-&d.c, &d.b, &self.h, None);
        let denom = d.c.dot(&dxb) + d.b.dot(&dyb) + inner(&h_scaled, &dztb) - it.kappa / it.tau;

        let mut sigma = 0.0;
        // scaled affine directions for the Mehrotra correction
        let mut aff: Option<(Blocks, Blocks, f64, f64)> = None;
        for pass in 0..2 {
            let eta = 1.0 - sigma;
            let mut u_blocks = Vec::with_capacity(sc.len());
            for (k, s) in sc.iter().enumerate() {
                let dim = s.lambda.len();
                let mut rc = Mat::zeros(dim, dim);
                for i in 0..dim {
                    rc[(i, i)] = sigma * mu - s.lambda[i] * s.lambda[i];
                }
                if let Some((dsa, dza, _, _)) = &aff {
                    let prod = &dsa[k] * &dza[k];
                    rc -= (&prod + prod.transpose()) * 0.5;
                }
                u_blocks.push(Mat::from_fn(dim, dim, |i, j| {
                    2.0 * rc[(i, j)] / (s.lambda[i] + s.lambda[j])
                }));
            }
            let r5 = sigma * mu - it.tau * it.kappa - aff.as_ref().map_or(0.0, |a| a.2 * a.3);
            let r1 = &res.f1 * -eta;
            let r2 = &res.f2 * -eta;
            let r3 = scaled(&res.f3, -eta);
            let r4 = -eta * res.f4;
            let (dxa, dya, dzta) = kkt.solve(&r1, &r2, &r3, Some(&u_blocks));
            let num = r4 - r5 / it.tau - (d.c.dot(&dxa) + d.b.dot(&dya) + inner(&h_scaled, &dzta));
            let dtau = num / denom;
            let dkappa = (r5 - it.kappa * dtau) / it.tau;
            let dx = dxa + &dxb * dtau;
            let mut dzt = dzta;
            axpy(&mut dzt, dtau, &dztb);
            let dst: Blocks = u_blocks.iter().zip(&dzt).map(|(u, m)| u - m).collect();

            let mut amax = f64::INFINITY;
            for (s, (a, b)) in sc.iter().zip(dst.iter().zip(&dzt)) {
                amax = amax.min(max_step(&s.lambda, a)).min(max_step(&s.lambda, b));
            }
            if dtau < 0.0 {
                amax = amax.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                amax = amax.min(-it.kappa / dkappa);
            }
            if amax.is_nan() || !dtau.is_finite() {
                return None;
            }
            if pass == 0 {
                sigma = (1.0 - amax.min(1.0)).powi(3);
                aff = Some((dst, dzt, dtau, dkappa));
                continue;
            }

            let alpha = (STEP * amax).min(1.0);
            let dy = dya + &dyb * dtau;
            if !dx.iter().chain(dy.iter()).all(|v| v.is_finite()) {
                return None;
            }
            // ds = −η f3 − G dx + h dτ, computed without going through R
            let mut ds = scaled(&res.f3, -eta);
            axpy(&mut ds, -1.0, &d.g(&dx));
            axpy(&mut ds, dtau, &self.h);
            let dz = kkt.unscale(&dzt);
            it.x += dx * alpha;
            it.y += dy * alpha;
            axpy(&mut it.s, alpha, &ds);
            axpy(&mut it.z, alpha, &dz);
            for m in it.s.iter_mut().chain(it.z.iter_mut()) {
                *m = linalg::symmetrize(m);
            }
            it.tau += alpha * dtau;
            it.kappa += alpha * dkappa;
            return Some(alpha);
        }
        None
    }
}
