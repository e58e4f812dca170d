//! Matrix decision variables, affine block expressions and their
//! compilation into an [`SdpProblem`].
//!
//! An [`Affine`] expression is `C + Σ L·V·R` (or `L·Vᵀ·R`), each term placed
//! at an offset inside the expression. Products of two expressions that both
//! contain variables are bilinear and rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::sdp::{LinearEquality, SdpBlock, SdpProblem, SdpSolution};

/// Relative strictness margin for strict LMIs.
pub const STRICT_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    Symmetric,
    Rectangular,
    Diagonal,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
}

impl MatVar {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, structure: Structure) -> Result<Self> {
        let name = name.into();
        let ok = match structure {
            Structure::Symmetric | Structure::Diagonal => rows == cols,
            Structure::Scalar => rows == 1 && cols == 1,
            Structure::Rectangular => true,
        };
        if !ok {
            return Err(Error::Dimension(format!(
                "{name}: {structure:?} variable cannot be {rows}x{cols}"
            )));
        }
        Ok(Self { name, rows, cols, structure })
    }

    /// Number of scalar unknowns.
    pub fn num_scalars(&self) -> usize {
        match self.structure {
            Structure::Symmetric => self.rows * (self.rows + 1) / 2,
            Structure::Rectangular => self.rows * self.cols,
            Structure::Diagonal => self.rows,
            Structure::Scalar => 1,
        }
    }

    /// Scalar index (relative to the variable) of entry `(i, j)`, if free.
    fn scalar_at(&self, i: usize, j: usize) -> Option<usize> {
        match self.structure {
            Structure::Symmetric => {
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                // row-major upper triangle
                Some(i * self.rows - i * (i + 1) / 2 + j)
            }
            Structure::Rectangular => Some(i * self.cols + j),
            Structure::Diagonal => (i == j).then_some(i),
            Structure::Scalar => Some(0),
        }
    }

    fn assemble(&self, scalars: &[f64]) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| self.scalar_at(i, j).map_or(0.0, |k| scalars[k]))
    }
}

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Var {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    row_off: usize,
    col_off: usize,
    left: Mat,
    var: Var,
    transposed: bool,
    right: Mat,
}

impl Term {
    fn shape(&self) -> (usize, usize) {
        (self.left.nrows(), self.right.ncols())
    }

    fn transpose(&self) -> Term {
        Term {
            row_off: self.col_off,
            col_off: self.row_off,
            left: self.right.transpose(),
            var: self.var,
            transposed: !self.transposed,
            right: self.left.transpose(),
        }
    }
}

/// Affine matrix expression in the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    constant: Mat,
    terms: Vec<Term>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { constant: Mat::zeros(rows, cols), terms: Vec::new() }
    }

    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: Vec::new() }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Mat::from_element(1, 1, v))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    pub fn var(v: Var) -> Self {
        Self {
            constant: Mat::zeros(v.rows, v.cols),
            terms: vec![Term {
                row_off: 0,
                col_off: 0,
                left: Mat::identity(v.rows, v.rows),
                var: v,
                transposed: false,
                right: Mat::identity(v.cols, v.cols),
            }],
        }
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    fn check_same_shape(&self, other: &Affine, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Affine) -> Result<Affine> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        out.constant += &other.constant;
        out.terms.extend(other.terms.iter().cloned());
        Ok(out)
    }

    pub fn sub(&self, other: &Affine) -> Result<Affine> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Affine {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Affine {
        let mut out = self.clone();
        out.constant *= s;
        for t in &mut out.terms {
            t.left *= s;
        }
        out
    }

    pub fn add_const(&self, m: &Mat) -> Result<Affine> {
        self.add(&Affine::constant(m.clone()))
    }

    pub fn transpose(&self) -> Affine {
        Affine {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(Term::transpose).collect(),
        }
    }

    /// `M + Mᵀ`.
    pub fn sym(&self) -> Result<Affine> {
        self.add(&self.transpose())
    }

    /// `L · self`.
    pub fn lmul(&self, l: &Mat) -> Result<Affine> {
        if l.ncols() != self.rows() {
            return Err(Error::Dimension(format!(
                "left factor is {}x{}, expression has {} rows",
                l.nrows(),
                l.ncols(),
                self.rows()
            )));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let (p, _) = t.shape();
                Term {
                    row_off: 0,
                    left: l.columns(t.row_off, p) * &t.left,
                    ..t.clone()
                }
            })
            .collect();
        Ok(Affine { constant: l * &self.constant, terms })
    }

    /// `self · R`.
    pub fn rmul(&self, r: &Mat) -> Result<Affine> {
        if r.nrows() != self.cols() {
            return Err(Error::Dimension(format!(
                "expression has {} columns, right factor is {}x{}",
                self.cols(),
                r.nrows(),
                r.ncols()
            )));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let (_, q) = t.shape();
                Term {
                    col_off: 0,
                    right: &t.right * r.rows(t.col_off, q),
                    ..t.clone()
                }
            })
            .collect();
        Ok(Affine { constant: &self.constant * r, terms })
    }

    /// Product of two expressions; at most one may contain variables.
    pub fn mul(&self, other: &Affine) -> Result<Affine> {
        match (self.is_constant(), other.is_constant()) {
            (true, _) => other.lmul(&self.constant),
            (_, true) => self.rmul(&other.constant),
            _ => {
                let names = |e: &Affine| {
                    let mut ids: Vec<usize> = e.terms.iter().map(|t| t.var.id).collect();
                    ids.dedup();
                    ids
                };
                Err(Error::Bilinear(format!(
                    "product of two variable expressions (variables {:?} and {:?}); \
                     introduce a change of variables such as W = K·X",
                    names(self),
                    names(other)
                )))
            }
        }
    }

    /// Row `i` as a 1×cols expression.
    pub fn row(&self, i: usize) -> Result<Affine> {
        self.lmul(&linalg::unit_row(self.rows(), i))
    }

    /// Column `j` as a rows×1 expression.
    pub fn col(&self, j: usize) -> Result<Affine> {
        self.rmul(&linalg::unit_col(self.cols(), j))
    }

    /// Trace as a 1×1 expression.
    pub fn trace(&self) -> Result<Affine> {
        if self.rows() != self.cols() {
            return Err(Error::Dimension("trace of a non-square expression".into()));
        }
        let n = self.rows();
        let mut out = Affine::scalar(self.constant.trace());
        for i in 0..n {
            let e = self.row(i)?.col(i)?;
            out.terms.extend(e.terms);
        }
        Ok(out)
    }

    /// `s · I_n` for a 1×1 expression `s`.
    pub fn times_identity(&self, n: usize) -> Result<Affine> {
        if self.shape() != (1, 1) {
            return Err(Error::Dimension("times_identity needs a 1x1 expression".into()));
        }
        let mut out = Affine::constant(Mat::identity(n, n) * self.constant[(0, 0)]);
        for i in 0..n {
            let e = self.lmul(&linalg::unit_col(n, i))?.rmul(&linalg::unit_row(n, i))?;
            out.terms.extend(e.terms);
        }
        Ok(out)
    }

    /// Assembles a block matrix; `None` entries are zero. Every block row and
    /// column needs at least one `Some` to fix its size.
    pub fn block(grid: &[Vec<Option<Affine>>]) -> Result<Affine> {
        let nr = grid.len();
        let nc = grid.first().map_or(0, Vec::len);
        if grid.iter().any(|r| r.len() != nc) {
            return Err(Error::Dimension("ragged block grid".into()));
        }
        let mut heights = vec![None; nr];
        let mut widths = vec![None; nc];
        for (i, row) in grid.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    for (slot, v, what) in [(&mut heights[i], b.rows(), "row"), (&mut widths[j], b.cols(), "column")] {
                        match slot {
                            Some(s) if *s != v => {
                                return Err(Error::Dimension(format!(
                                    "block ({i}, {j}) breaks {what} size {s} with {v}"
                                )))
                            }
                            _ => *slot = Some(v),
                        }
                    }
                }
            }
        }
        let sizes = |v: Vec<Option<usize>>, what: &str| -> Result<Vec<usize>> {
            v.into_iter()
                .enumerate()
                .map(|(k, s)| s.ok_or_else(|| Error::Dimension(format!("block {what} {k} has no sized entry"))))
                .collect()
        };
        let heights = sizes(heights, "row")?;
        let widths = sizes(widths, "column")?;
        let mut out = Affine::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out.constant.view_mut((r0, c0), b.shape()).copy_from(&b.constant);
                    out.terms.extend(b.terms.iter().map(|t| Term {
                        row_off: t.row_off + r0,
                        col_off: t.col_off + c0,
                        ..t.clone()
                    }));
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        Ok(out)
    }

    /// Symmetric block matrix from its upper triangle: entries below the
    /// diagonal (the `∗` blocks) are ignored and filled by transposition.
    pub fn block_sym(upper: &[Vec<Option<Affine>>]) -> Result<Affine> {
        let n = upper.len();
        let mut grid: Vec<Vec<Option<Affine>>> = vec![vec![None; n]; n];
        for i in 0..n {
            if upper[i].len() != n {
                return Err(Error::Dimension("block_sym needs a square grid".into()));
            }
            for j in i..n {
                if let Some(b) = &upper[i][j] {
                    if j > i {
                        grid[j][i] = Some(b.transpose());
                    }
                    grid[i][j] = Some(b.clone());
                }
            }
        }
        Affine::block(&grid)
    }
}

impl From<Var> for Affine {
    fn from(v: Var) -> Self {
        Affine::var(v)
    }
}

impl From<Mat> for Affine {
    fn from(m: Mat) -> Self {
        Affine::constant(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `expr ⪰ 0`.
    Psd,
    /// `expr ⪯ 0`.
    Nsd,
    /// `expr = 0`, entrywise.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: Affine,
    pub sense: Sense,
    /// Strict inequalities get the margin `ε = 1e-7·(1 + ‖constant‖)`.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Block(usize),
    /// Half-open range of equality rows.
    Equalities(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledConstraint {
    pub name: String,
    pub sense: Sense,
    pub margin: f64,
    pub target: Target,
}

/// A compiled problem plus the reverse map from SDP scalars to variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    pub problem: SdpProblem,
    pub vars: Vec<MatVar>,
    offsets: Vec<usize>,
    pub constraints: Vec<CompiledConstraint>,
}

impl Compiled {
    pub fn value(&self, v: Var, x: &[f64]) -> Mat {
        let mv = &self.vars[v.id];
        let off = self.offsets[v.id];
        mv.assemble(&x[off..off + mv.num_scalars()])
    }

    pub fn assignment(&self, x: &[f64]) -> Assignment {
        Assignment {
            values: (0..self.vars.len())
                .map(|id| {
                    let mv = &self.vars[id];
                    let off = self.offsets[id];
                    Some(mv.assemble(&x[off..off + mv.num_scalars()]))
                })
                .collect(),
        }
    }

    pub fn read(&self, v: Var, sol: &SdpSolution) -> Mat {
        self.value(v, &sol.x)
    }
}

/// Numeric values for variables, indexed by variable id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    values: Vec<Option<Mat>>,
}

impl Assignment {
    pub fn set(&mut self, v: Var, value: Mat) {
        if self.values.len() <= v.id {
            self.values.resize(v.id + 1, None);
        }
        self.values[v.id] = Some(value);
    }

    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.values.get(v.id).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: Mat,
    /// Extreme eigenvalues of the symmetric part (square expressions only).
    pub min_eig: Option<f64>,
    pub max_eig: Option<f64>,
}

pub fn evaluate(expr: &Affine, assignment: &Assignment) -> Result<Evaluation> {
    let mut value = expr.constant.clone();
    for t in &expr.terms {
        let v = assignment
            .get(t.var)
            .ok_or_else(|| Error::MissingValue(format!("variable #{}", t.var.id)))?;
        if v.shape() != (t.var.rows, t.var.cols) {
            return Err(Error::Dimension(format!("value for variable #{} has wrong shape", t.var.id)));
        }
        let piece = if t.transposed {
            &t.left * v.transpose() * &t.right
        } else {
            &t.left * v * &t.right
        };
        let mut view = value.view_mut((t.row_off, t.col_off), piece.shape());
        view += &piece;
    }
    let (min_eig, max_eig) = if value.is_square() {
        let ev = linalg::sym_eigenvalues(&value);
        (ev.iter().copied().reduce(f64::min), ev.iter().copied().reduce(f64::max))
    } else {
        (None, None)
    };
    Ok(Evaluation { value, min_eig, max_eig })
}

/// Builder holding variables, constraints and the objective.
#[derive(Debug, Clone, Default)]
pub struct Model {
    vars: Vec<MatVar>,
    constraints: Vec<Constraint>,
    objective: Option<Affine>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, var: MatVar) -> Var {
        let v = Var { id: self.vars.len(), rows: var.rows, cols: var.cols };
        self.vars.push(var);
        v
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.add_var(MatVar::new(name, n, n, Structure::Symmetric).unwrap())
    }

    pub fn rectangular(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.add_var(MatVar::new(name, rows, cols, Structure::Rectangular).unwrap())
    }

    pub fn diagonal(&mut self, name: &str, n: usize) -> Var {
        self.add_var(MatVar::new(name, n, n, Structure::Diagonal).unwrap())
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.add_var(MatVar::new(name, 1, 1, Structure::Scalar).unwrap())
    }

    pub fn vars(&self) -> &[MatVar] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn constrain(&mut self, name: &str, expr: Affine, sense: Sense, strict: bool) {
        self.constraints.push(Constraint { name: name.into(), expr, sense, strict });
    }

    /// Strict `expr ≺ 0`.
    pub fn negative(&mut self, name: &str, expr: Affine) {
        self.constrain(name, expr, Sense::Nsd, true);
    }

    /// Strict `expr ≻ 0`.
    pub fn positive(&mut self, name: &str, expr: Affine) {
        self.constrain(name, expr, Sense::Psd, true);
    }

    pub fn zero(&mut self, name: &str, expr: Affine) {
        self.constrain(name, expr, Sense::Zero, false);
    }

    pub fn minimize(&mut self, objective: Affine) {
        self.objective = Some(objective);
    }

    pub fn compile(&self) -> Result<Compiled> {
        let objective = self.objective.clone().unwrap_or_else(|| Affine::scalar(0.0));
        compile(&self.vars, &self.constraints, &objective)
    }
}

/// Accumulates `coef · x_k` contributions at matrix positions.
type Coeffs = BTreeMap<(Option<usize>, usize, usize), f64>;

fn expand(expr: &Affine, vars: &[MatVar], offsets: &[usize]) -> Result<Coeffs> {
    let mut map = Coeffs::new();
    let c = &expr.constant;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            if c[(i, j)] != 0.0 {
                *map.entry((None, i, j)).or_insert(0.0) += c[(i, j)];
            }
        }
    }
    for t in &expr.terms {
        let mv = vars
            .get(t.var.id)
            .ok_or_else(|| Error::UnknownVariable(format!("variable #{} is not declared", t.var.id)))?;
        let (vr, vc) = if t.transposed { (mv.cols, mv.rows) } else { (mv.rows, mv.cols) };
        if t.left.ncols() != vr || t.right.nrows() != vc || (t.var.rows, t.var.cols) != (mv.rows, mv.cols) {
            return Err(Error::Dimension(format!("term in {} does not match its shape", mv.name)));
        }
        // position (a, b) of the effective variable V' = V or Vᵀ
        for a in 0..vr {
            let lc = t.left.column(a);
            if lc.iter().all(|&x| x == 0.0) {
                continue;
            }
            for b in 0..vc {
                let (i, j) = if t.transposed { (b, a) } else { (a, b) };
                let Some(k) = mv.scalar_at(i, j) else { continue };
                let k = offsets[t.var.id] + k;
                let rr = t.right.row(b);
                for (p, &l) in lc.iter().enumerate() {
                    if l == 0.0 {
                        continue;
                    }
                    for (q, &r) in rr.iter().enumerate() {
                        if r != 0.0 {
                            *map.entry((Some(k), t.row_off + p, t.col_off + q)).or_insert(0.0) += l * r;
                        }
                    }
                }
            }
        }
    }
    Ok(map)
}

pub fn compile(vars: &[MatVar], constraints: &[Constraint], objective: &Affine) -> Result<Compiled> {
    let mut offsets = Vec::with_capacity(vars.len());
    let mut n = 0;
    for v in vars {
        offsets.push(n);
        n += v.num_scalars();
    }
    let mut problem = SdpProblem::new(n);

    if objective.shape() != (1, 1) {
        return Err(Error::Dimension("objective must be 1x1".into()));
    }
    for ((k, _, _), v) in expand(objective, vars, &offsets)? {
        match k {
            None => problem.objective_offset += v,
            Some(k) => problem.objective[k] += v,
        }
    }

    let mut compiled = Vec::with_capacity(constraints.len());
    for c in constraints {
        let map = expand(&c.expr, vars, &offsets)?;
        let scale = map.values().fold(0.0f64, |m, v| m.max(v.abs()));
        let drop = 1e-15 * scale;
        match c.sense {
            Sense::Zero => {
                let (r, cols) = c.expr.shape();
                let first = problem.equalities.len();
                let mut rows: Vec<LinearEquality> = (0..r * cols).map(|_| LinearEquality::default()).collect();
                for (&(k, i, j), &v) in &map {
                    if v.abs() <= drop {
                        continue;
                    }
                    let eq = &mut rows[i * cols + j];
                    match k {
                        None => eq.rhs -= v,
                        Some(k) => eq.coeffs.push((k, v)),
                    }
                }
                for eq in rows {
                    if eq.coeffs.is_empty() {
                        if eq.rhs.abs() > drop {
                            return Err(Error::InfeasiblePerformance(format!(
                                "{}: constant equality {} = 0",
                                c.name, -eq.rhs
                            )));
                        }
                        continue;
                    }
                    problem.equalities.push(eq);
                }
                compiled.push(CompiledConstraint {
                    name: c.name.clone(),
                    sense: c.sense,
                    margin: 0.0,
                    target: Target::Equalities(first, problem.equalities.len()),
                });
            }
            Sense::Psd | Sense::Nsd => {
                let (r, cols) = c.expr.shape();
                if r != cols {
                    return Err(Error::Dimension(format!("{}: inequality on a {r}x{cols} expression", c.name)));
                }
                for (&(k, i, j), &v) in &map {
                    let w = map.get(&(k, j, i)).copied().unwrap_or(0.0);
                    if (v - w).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                        return Err(Error::Asymmetric(format!(
                            "{}: entry ({i}, {j}) differs from ({j}, {i}) by {:.3e}",
                            c.name,
                            v - w
                        )));
                    }
                }
                let sign = if c.sense == Sense::Psd { 1.0 } else { -1.0 };
                let margin = if c.strict {
                    STRICT_MARGIN * (1.0 + c.expr.constant.norm())
                } else {
                    0.0
                };
                let mut block = SdpBlock::new(r);
                for (&(k, i, j), &v) in &map {
                    if i <= j && v.abs() > drop {
                        block.push(k, i, j, sign * v);
                    }
                }
                if margin > 0.0 {
                    for i in 0..r {
                        block.push(None, i, i, -margin);
                    }
                }
                compiled.push(CompiledConstraint {
                    name: c.name.clone(),
                    sense: c.sense,
                    margin,
                    target: Target::Block(problem.blocks.len()),
                });
                problem.blocks.push(block);
            }
        }
    }
    problem.validate()?;
    Ok(Compiled { problem, vars: vars.to_vec(), offsets, constraints: compiled })
}
