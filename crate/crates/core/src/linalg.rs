//! Dense linear-algebra helpers shared by the analysis, solver and synthesis
//! modules. Everything here works on `DMatrix<f64>`.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type Complex64 = Complex<f64>;

const SCHUR_MAX_ITER: usize = 10_000;

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Eigenvalues of a general real square matrix (through the real Schur form).
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::EigenFailure(n))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Real Schur decomposition `A = Q T Qᵀ`, `T` upper quasi-triangular.
pub fn real_schur(a: &Mat) -> Result<(Mat, Mat)> {
    let n = a.nrows();
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::EigenFailure(n))?;
    Ok(schur.unpack())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vector {
    if m.nrows() == 0 {
        return Vector::zeros(0);
    }
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_sym_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_sym_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value (0 for empty matrices).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// 2-norm condition number; `inf` when singular.
pub fn cond(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn hstack(parts: &[&Mat]) -> Mat {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        assert_eq!(p.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, p.ncols())).copy_from(*p);
        c += p.ncols();
    }
    out
}

pub fn vstack(parts: &[&Mat]) -> Mat {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        assert_eq!(p.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(*p);
        r += p.nrows();
    }
    out
}

pub fn block_diag(parts: &[&Mat]) -> Mat {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for p in parts {
        out.view_mut((r, c), (p.nrows(), p.ncols())).copy_from(*p);
        r += p.nrows();
        c += p.ncols();
    }
    out
}

/// Diagonal block boundaries of a quasi upper-triangular Schur factor.
fn schur_blocks(t: &Mat) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-14 * scale {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves the small Sylvester system `T11 Y + Y T22ᵀ = C` through its
/// Kronecker form (blocks are at most 2x2).
fn small_sylvester(t11: &Mat, t22: &Mat, c: &Mat) -> Result<Mat> {
    let (p, q) = (t11.nrows(), t22.nrows());
    let mut k = Mat::zeros(p * q, p * q);
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for l in 0..p {
                k[(row, j * p + l)] += t11[(i, l)];
            }
            for m in 0..q {
                k[(row, m * p + i)] += t22[(j, m)];
            }
        }
    }
    let rhs = DVector::from_iterator(p * q, c.iter().copied());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov operator is singular".into()))?;
    Ok(Mat::from_iterator(p, q, sol.iter().copied()))
}

/// Solves `A X + X Aᵀ + Q = 0` with the Bartels–Stewart method on the real
/// Schur form of `A`.
pub fn lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let (u, t) = real_schur(a)?;
    let f = -(u.transpose() * q * &u);
    let blocks = schur_blocks(&t);
    let mut y = Mat::zeros(n, n);

    for (jb, &(j0, jn)) in blocks.iter().enumerate().rev() {
        let mut rhs = f.columns(j0, jn).into_owned();
        for &(k0, kn) in &blocks[jb + 1..] {
            rhs -= y.columns(k0, kn) * t.view((j0, k0), (jn, kn)).transpose();
        }
        let tjj = t.view((j0, j0), (jn, jn)).into_owned();
        for (ib, &(i0, in_)) in blocks.iter().enumerate().rev() {
            let mut r = rhs.rows(i0, in_).into_owned();
            for &(l0, ln) in &blocks[ib + 1..] {
                r -= t.view((i0, l0), (in_, ln)) * y.view((l0, j0), (ln, jn));
            }
            let tii = t.view((i0, i0), (in_, in_)).into_owned();
            let yij = small_sylvester(&tii, &tjj, &r)?;
            y.view_mut((i0, j0), (in_, jn)).copy_from(&yij);
        }
    }
    Ok(symmetrize(&(&u * y * u.transpose())))
}

/// Relative residual of a Lyapunov solution, `‖AX + XAᵀ + Q‖ / (‖A‖‖X‖ + ‖Q‖)`.
pub fn lyapunov_residual(a: &Mat, x: &Mat, q: &Mat) -> f64 {
    let r = a * x + x * a.transpose() + q;
    let scale = a.norm() * x.norm() + q.norm();
    if scale == 0.0 {
        r.norm()
    } else {
        r.norm() / scale
    }
}

pub fn unit_row(n: usize, i: usize) -> Mat {
    let mut m = Mat::zeros(1, n);
    m[(0, i)] = 1.0;
    m
}

pub fn unit_col(n: usize, i: usize) -> Mat {
    let mut m = Mat::zeros(n, 1);
    m[(i, 0)] = 1.0;
    m
}

/// Keeps the listed columns, in order.
pub fn select_columns(m: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(m.nrows(), idx.len());
    for (k, &j) in idx.iter().enumerate() {
        out.set_column(k, &m.column(j));
    }
    out
}

pub fn select_rows(m: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), m.ncols());
    for (k, &i) in idx.iter().enumerate() {
        out.set_row(k, &m.row(i));
    }
    out
}
