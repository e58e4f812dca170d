//! Benchmark plants, closed-loop time simulation and γ0 sweeps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, fmt_index_set, CsvTable};
use crate::linalg::{self, block_diag, hstack, vstack, Mat};
use crate::model::{Controller, GeneralizedPlant};
use crate::sparsify::{reweight_iterate, ReweightPolicy, SparsifyTrace};
use crate::synth::{Mode, SynthOptions, SynthesisSpec};

/// Geometry and material data of the planar six-bar, nine-cable cantilever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensegrityParams {
    /// Tip angles (degrees from horizontal) of the right-hand bars; the
    /// left-hand bars are their mirror images.
    pub tip_angles_deg: [f64; 3],
    /// Heights of the right/left pivot pairs.
    pub pivot_heights: [f64; 3],
    /// Horizontal offset of each pivot from the symmetry axis.
    pub pivot_offset: f64,
    pub bar_length: f64,
    pub bar_radius: f64,
    pub bar_density: f64,
    pub cable_diameter: f64,
    pub cable_modulus: f64,
    /// Force density every cable carries in the trimmed configuration (N/m).
    pub prestress: f64,
    /// Torsional pivot stiffness added on top of the cable stiffness (N·m/rad).
    pub pivot_stiffness: f64,
    /// Damping ratio of the slowest mode (stiffness-proportional damping).
    pub damping_ratio: f64,
    /// Disturbance scaling `Wd = wd·I`.
    pub wd: f64,
}

impl Default for TensegrityParams {
    fn default() -> Self {
        Self {
            tip_angles_deg: [55.0, -45.0, 23.0],
            pivot_heights: [0.0, 0.7, 1.4],
            pivot_offset: 0.25,
            bar_length: 1.0,
            bar_radius: 5e-3,
            bar_density: 2700.0,
            cable_diameter: 2e-3,
            cable_modulus: 0.26e9,
            prestress: 20.0,
            pivot_stiffness: 1.0,
            damping_ratio: 0.02,
            wd: 0.1,
        }
    }
}

/// Cable end points: tips 0..3 right, 3..6 left; anchors are fixed pivots.
#[derive(Debug, Clone, Copy)]
enum Node {
    Tip(usize),
    Pivot(usize),
}

const CABLES: [(Node, Node); 9] = [
    (Node::Tip(0), Node::Tip(1)),
    (Node::Tip(0), Node::Tip(2)),
    (Node::Tip(3), Node::Tip(4)),
    (Node::Tip(3), Node::Tip(5)),
    (Node::Tip(0), Node::Tip(3)),
    (Node::Tip(1), Node::Tip(4)),
    (Node::Tip(2), Node::Tip(5)),
    (Node::Tip(1), Node::Pivot(5)),
    (Node::Tip(4), Node::Pivot(2)),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlantFamily {
    ScalarOracle,
    /// `n` unit masses joined by unit springs (first one to a wall), dampers
    /// of coefficient `damping` in parallel with every spring, a force
    /// actuator and a force disturbance (scaled by `wd`) on each mass.
    MassSpringChain { n: usize, damping: f64, wd: f64 },
    TensegrityApprox(TensegrityParams),
}

impl PlantFamily {
    pub fn mass_spring_chain(n: usize) -> Self {
        PlantFamily::MassSpringChain { n, damping: 0.01, wd: 1.0 }
    }

    pub fn tensegrity() -> Self {
        PlantFamily::TensegrityApprox(TensegrityParams::default())
    }

    /// Coefficient of the optional cubic stiffening used by the simulator:
    /// equal to the mean linear stiffness per unit inertia, so the cubic term
    /// matches the linear one at one unit of displacement.
    pub fn cubic_coefficient(&self) -> Result<f64> {
        let p = make_plant(self)?;
        let n = p.a.nrows() / 2;
        if n == 0 {
            return Ok(0.0);
        }
        let k = p.a.view((n, 0), (n, n));
        Ok(-(0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64)
    }
}

impl std::str::FromStr for PlantFamily {
    type Err = Error;

    /// `scalar`, `chain:<n>` or `tensegrity`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(PlantFamily::ScalarOracle),
            "tensegrity" => Ok(PlantFamily::tensegrity()),
            _ => match s.strip_prefix("chain:").map(str::parse::<usize>) {
                Some(Ok(n)) => Ok(PlantFamily::mass_spring_chain(n)),
                _ => Err(Error::InvalidParameter(format!(
                    "unknown plant family `{s}` (expected scalar, chain:<n> or tensegrity)"
                ))),
            },
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
    }
}

pub fn make_plant(family: &PlantFamily) -> Result<GeneralizedPlant> {
    match family {
        PlantFamily::ScalarOracle => {
            let one = || Mat::from_element(1, 1, 1.0);
            let zero = || Mat::zeros(1, 1);
            GeneralizedPlant::new(one(), one(), one(), one(), zero(), zero(), one(), zero())
        }
        PlantFamily::MassSpringChain { n, damping, wd } => chain(*n, *damping, *wd),
        PlantFamily::TensegrityApprox(p) => tensegrity(p),
    }
}

/// Second-order plant `M q̈ + C q̇ + K q = Bf u + Wf d` with unit-inertia
/// scaling already applied, `z = [q; 0.1 u]` and `y = [q; q̇]`.
fn second_order(k: &Mat, c: &Mat, bf: &Mat, wf: &Mat) -> Result<GeneralizedPlant> {
    let n = k.nrows();
    let (nu, nw) = (bf.ncols(), wf.ncols());
    let a = vstack(&[&hstack(&[&Mat::zeros(n, n), &Mat::identity(n, n)]), &hstack(&[&-k, &-c])]);
    let bu = vstack(&[&Mat::zeros(n, nu), bf]);
    let bw = vstack(&[&Mat::zeros(n, nw), wf]);
    let cz = vstack(&[&hstack(&[&Mat::identity(n, n), &Mat::zeros(n, n)]), &Mat::zeros(nu, 2 * n)]);
    let du = vstack(&[&Mat::zeros(n, nu), &(Mat::identity(nu, nu) * 0.1)]);
    let dw = Mat::zeros(n + nu, nw);
    let cy = Mat::identity(2 * n, 2 * n);
    let dyw = Mat::zeros(2 * n, nw);
    GeneralizedPlant::new(a, bu, bw, cz, du, dw, cy, dyw)
}

fn chain(n: usize, damping: f64, wd: f64) -> Result<GeneralizedPlant> {
    if n == 0 {
        return Err(Error::InvalidParameter("a chain needs at least one mass".into()));
    }
    positive(damping, "damping")?;
    positive(wd, "wd")?;
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = if i + 1 < n { 2.0 } else { 1.0 };
        if i + 1 < n {
            k[(i, i + 1)] = -1.0;
            k[(i + 1, i)] = -1.0;
        }
    }
    let c = &k * damping;
    let plant = second_order(&k, &c, &Mat::identity(n, n), &(Mat::identity(n, n) * wd))?;
    let names = |p: &str| (1..=n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let sensors = names("q").into_iter().chain(names("v")).collect();
    plant.with_names(names("f"), sensors)
}

struct Tensegrity {
    pivots: [[f64; 2]; 6],
    lever: f64,
    rest: [f64; 9],
    stiffness: [f64; 9],
}

impl Tensegrity {
    fn node(&self, n: Node, theta: &[f64]) -> [f64; 2] {
        match n {
            Node::Tip(i) => [
                self.pivots[i][0] + self.lever * theta[i].cos(),
                self.pivots[i][1] + self.lever * theta[i].sin(),
            ],
            Node::Pivot(i) => self.pivots[i],
        }
    }

    /// Pivot torques from the cables at angles `theta` and force-density
    /// perturbations `u`.
    fn torques(&self, theta: &[f64], u: &[f64]) -> [f64; 6] {
        let mut tau = [0.0; 6];
        for (c, &(a, b)) in CABLES.iter().enumerate() {
            let (pa, pb) = (self.node(a, theta), self.node(b, theta));
            let s = [pb[0] - pa[0], pb[1] - pa[1]];
            let len = s[0].hypot(s[1]);
            let sigma = self.stiffness[c] * (len - self.rest[c]) / len + u[c];
            // force σ·s pulls a toward b and b toward a
            for (node, sign) in [(a, 1.0), (b, -1.0)] {
                if let Node::Tip(i) = node {
                    let r = [self.lever * theta[i].cos(), self.lever * theta[i].sin()];
                    let f = [sign * sigma * s[0], sign * sigma * s[1]];
                    tau[i] += r[0] * f[1] - r[1] * f[0];
                }
            }
        }
        tau
    }
}

fn tensegrity(p: &TensegrityParams) -> Result<GeneralizedPlant> {
    for (v, what) in [
        (p.bar_length, "bar_length"),
        (p.bar_radius, "bar_radius"),
        (p.bar_density, "bar_density"),
        (p.cable_diameter, "cable_diameter"),
        (p.cable_modulus, "cable_modulus"),
        (p.prestress, "prestress"),
        (p.damping_ratio, "damping_ratio"),
        (p.wd, "wd"),
    ] {
        positive(v, what)?;
    }
    if !(p.pivot_stiffness >= 0.0) {
        return Err(Error::InvalidParameter("pivot_stiffness must be non-negative".into()));
    }
    let mut pivots = [[0.0; 2]; 6];
    let mut theta0 = [0.0; 6];
    for i in 0..3 {
        pivots[i] = [p.pivot_offset, p.pivot_heights[i]];
        pivots[i + 3] = [-p.pivot_offset, p.pivot_heights[i]];
        theta0[i] = p.tip_angles_deg[i].to_radians();
        theta0[i + 3] = PI - theta0[i];
    }
    let ea = p.cable_modulus * PI * (p.cable_diameter / 2.0).powi(2);
    let mut t = Tensegrity { pivots, lever: p.bar_length, rest: [0.0; 9], stiffness: [0.0; 9] };
    for (c, &(a, b)) in CABLES.iter().enumerate() {
        let (pa, pb) = (t.node(a, &theta0), t.node(b, &theta0));
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        // σ·len = (EA/l0)(len − l0) solved for the rest length
        let l0 = ea * len / (p.prestress * len + ea);
        t.rest[c] = l0;
        t.stiffness[c] = ea / l0;
    }

    // Pivot preloads trim the configuration, so only the derivatives matter.
    let h = 1e-6;
    let zero_u = [0.0; 9];
    let mut k = Mat::zeros(6, 6);
    for j in 0..6 {
        let (mut tp, mut tm) = (theta0, theta0);
        tp[j] += h;
        tm[j] -= h;
        let (fp, fm) = (t.torques(&tp, &zero_u), t.torques(&tm, &zero_u));
        for i in 0..6 {
            k[(i, j)] = -(fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let k = linalg::symmetrize(&k);
    let cable_min = linalg::min_sym_eig(&k);
    let k = k + Mat::identity(6, 6) * (p.pivot_stiffness + (-cable_min).max(0.0));
    let mut bf = Mat::zeros(6, 9);
    for c in 0..9 {
        let mut e = [0.0; 9];
        e[c] = 1.0;
        let tau = t.torques(&theta0, &e);
        let base = t.torques(&theta0, &zero_u);
        for i in 0..6 {
            bf[(i, c)] = tau[i] - base[i];
        }
    }

    let mass = p.bar_density * PI * p.bar_radius.powi(2) * p.bar_length;
    let inertia = mass * p.bar_length.powi(2) / 3.0;
    let k = k / inertia;
    let omega1 = linalg::min_sym_eig(&k).sqrt();
    let c = &k * (2.0 * p.damping_ratio / omega1);
    // States are ω·θ and θ̇ with ω the top natural frequency; in raw angles
    // the state matrix spans four decades and the synthesis SDPs stall.
    let omega = linalg::max_sym_eig(&k).sqrt();
    let mut plant = second_order(&k, &c, &(bf / inertia), &(Mat::identity(6, 6) * (p.wd / inertia)))?;
    let t = block_diag(&[&(Mat::identity(6, 6) * omega), &Mat::identity(6, 6)]);
    let ti = block_diag(&[&(Mat::identity(6, 6) / omega), &Mat::identity(6, 6)]);
    plant.a = &t * &plant.a * &ti;
    plant.bu = &t * &plant.bu;
    plant.bw = &t * &plant.bw;
    plant.cz = &plant.cz * &ti;
    plant.cy = &plant.cy * &ti;
    let actuators = (1..=9).map(|i| format!("cable{i}")).collect();
    let sensors = (1..=6).map(|i| format!("theta{i}")).chain((1..=6).map(|i| format!("omega{i}"))).collect();
    plant.with_names(actuators, sensors)
}

/// Disturbance signal descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Disturbance {
    Zero,
    /// Constant `d(t) = v/‖v‖`.
    Direction(Vec<f64>),
    /// `d(t) = v/(‖v‖·sqrt(T))` on `[0, T)`, zero after: unit energy.
    Pulse { direction: Vec<f64>, duration: f64 },
    /// `d(t) = v/‖v‖·sin(φ(t))` with the frequency swept linearly from
    /// `omega_start` to `omega_end` over the horizon.
    Sweep { direction: Vec<f64>, omega_start: f64, omega_end: f64 },
    /// Sum of `components` random sinusoids per channel with frequencies
    /// below `bandwidth`, normalized so `‖d(t)‖ = 1` pointwise.
    Noise { seed: u64, bandwidth: f64, components: usize },
}

impl Disturbance {
    pub fn noise(seed: u64) -> Self {
        Disturbance::Noise { seed, bandwidth: 10.0, components: 16 }
    }

    pub fn describe(&self) -> String {
        match self {
            Disturbance::Zero => "zero".into(),
            Disturbance::Direction(v) => format!("direction {v:?}"),
            Disturbance::Pulse { direction, duration } => format!("pulse {direction:?} over {duration}"),
            Disturbance::Sweep { direction, omega_start, omega_end } => {
                format!("sweep {direction:?} from {omega_start} to {omega_end} rad/s")
            }
            Disturbance::Noise { seed, bandwidth, components } => {
                format!("noise seed {seed} bandwidth {bandwidth} rad/s, {components} components")
            }
        }
    }
}

/// Evaluates a disturbance descriptor; random draws happen once up front.
struct Signal {
    kind: Disturbance,
    nw: usize,
    horizon: f64,
    unit: Vec<f64>,
    /// (amplitude, frequency, phase) per channel for noise.
    tones: Vec<Vec<(f64, f64, f64)>>,
}

fn unit(v: &[f64], nw: usize) -> Result<Vec<f64>> {
    if v.len() != nw {
        return Err(Error::Dimension(format!("disturbance direction has {} entries, expected {nw}", v.len())));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter("disturbance direction must be nonzero".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

impl Signal {
    fn new(kind: &Disturbance, nw: usize, horizon: f64) -> Result<Self> {
        let mut s = Signal { kind: kind.clone(), nw, horizon, unit: vec![0.0; nw], tones: Vec::new() };
        match kind {
            Disturbance::Zero => {}
            Disturbance::Direction(v) => s.unit = unit(v, nw)?,
            Disturbance::Pulse { direction, duration } => {
                positive(*duration, "pulse duration")?;
                s.unit = unit(direction, nw)?;
            }
            Disturbance::Sweep { direction, omega_start, omega_end } => {
                if !(*omega_start >= 0.0 && *omega_end >= 0.0) {
                    return Err(Error::InvalidParameter("sweep frequencies must be non-negative".into()));
                }
                s.unit = unit(direction, nw)?;
            }
            Disturbance::Noise { seed, bandwidth, components } => {
                positive(*bandwidth, "noise bandwidth")?;
                if *components == 0 {
                    return Err(Error::InvalidParameter("noise needs at least one component".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                s.tones = (0..nw)
                    .map(|_| {
                        (0..*components)
                            .map(|_| (rng.gen_range(0.5..1.0), rng.gen_range(0.0..*bandwidth), rng.gen_range(0.0..2.0 * PI)))
                            .collect()
                    })
                    .collect();
            }
        }
        Ok(s)
    }

    fn at(&self, t: f64) -> Vec<f64> {
        match &self.kind {
            Disturbance::Zero => vec![0.0; self.nw],
            Disturbance::Direction(_) => self.unit.clone(),
            Disturbance::Pulse { duration, .. } => {
                let a = if t < *duration { 1.0 / duration.sqrt() } else { 0.0 };
                self.unit.iter().map(|x| a * x).collect()
            }
            Disturbance::Sweep { omega_start, omega_end, .. } => {
                let rate = (omega_end - omega_start) / self.horizon;
                let s = (omega_start * t + 0.5 * rate * t * t).sin();
                self.unit.iter().map(|x| s * x).collect()
            }
            Disturbance::Noise { .. } => {
                let v: Vec<f64> =
                    self.tones.iter().map(|ch| ch.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-300 {
                    v.iter().map(|x| x / n).collect()
                } else {
                    let mut e = vec![0.0; self.nw];
                    e[0] = 1.0;
                    e
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    /// Initial closed-loop state (plant then controller); zero when absent.
    pub x0: Option<Vec<f64>>,
    /// Adds `−c·qi³` to each acceleration of a second-order plant
    /// (`x = [q; q̇]`).
    pub cubic_stiffening: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { horizon: 20.0, dt: 1e-3, x0: None, cubic_stiffening: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub time: Vec<f64>,
    /// Closed-loop state at each time (plant states first).
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// `max_t |ui(t)|` over the stored grid.
    pub peaks: Vec<f64>,
    pub disturbance: String,
    pub actuator_names: Vec<String>,
}

impl SimResult {
    /// `t`, the states, then one column per actuator.
    pub fn to_csv(&self) -> String {
        let nx = self.states.first().map_or(0, Vec::len);
        let header = std::iter::once("t".to_string())
            .chain((1..=nx).map(|i| format!("x{i}")))
            .chain(self.actuator_names.iter().cloned());
        let mut t = CsvTable::new(header);
        for (k, &tk) in self.time.iter().enumerate() {
            let row = std::iter::once(tk).chain(self.states[k].iter().copied()).chain(self.controls[k].iter().copied());
            t.push(row.map(fmt_f64).collect());
        }
        t.to_csv()
    }

    pub fn peaks_csv(&self) -> String {
        let mut t = CsvTable::new(self.actuator_names.iter().cloned());
        t.push(self.peaks.iter().map(|&p| fmt_f64(p)).collect());
        t.to_csv()
    }
}

/// Fixed-step RK4 of the closed loop driven by `disturbance`.
pub fn simulate_closed_loop(
    plant: &GeneralizedPlant,
    controller: &Controller,
    disturbance: &Disturbance,
    opts: &SimOptions,
) -> Result<SimResult> {
    positive(opts.dt, "dt")?;
    positive(opts.horizon, "horizon")?;
    let cl = controller.close(plant)?;
    if !analysis::is_hurwitz(&cl.a)? {
        return Err(Error::NonHurwitz { max_real: linalg::spectral_abscissa(&cl.a)? });
    }
    let n = cl.a.nrows();
    let nw = cl.b.ncols();
    let signal = Signal::new(disturbance, nw, opts.horizon)?;
    let x0 = match &opts.x0 {
        Some(v) if v.len() != n => {
            return Err(Error::Dimension(format!("x0 has {} entries, expected {n}", v.len())));
        }
        Some(v) => nalgebra::DVector::from_column_slice(v),
        None => nalgebra::DVector::zeros(n),
    };
    let npos = plant.dims().nx / 2;
    let cubic = opts.cubic_stiffening.unwrap_or(0.0);
    if cubic != 0.0 && plant.dims().nx % 2 != 0 {
        return Err(Error::InvalidParameter("cubic stiffening needs a second-order plant".into()));
    }
    let rhs = |x: &nalgebra::DVector<f64>, t: f64| {
        let d = nalgebra::DVector::from_vec(signal.at(t));
        let mut dx = &cl.a * x + &cl.b * d;
        if cubic != 0.0 {
            for i in 0..npos {
                dx[npos + i] -= cubic * x[i].powi(3);
            }
        }
        dx
    };
    // Blowup reference: initial energy plus a generous static response.
    let static_gain = cl.a.clone().lu().solve(&cl.b).map_or(1.0, |g| g.norm_squared());
    let limit = 1e6 * (1.0 + x0.norm_squared()).max(100.0 * static_gain);

    let steps = (opts.horizon / opts.dt).round() as usize;
    let mut time = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps + 1);
    let mut peaks = vec![0.0f64; cl.num_actuators()];
    let mut x = x0;
    for k in 0..=steps {
        let t = k as f64 * opts.dt;
        let d = nalgebra::DVector::from_vec(signal.at(t));
        let u = &cl.c_tilde * &x + &cl.d_tilde * d;
        for (p, v) in peaks.iter_mut().zip(u.iter()) {
            *p = p.max(v.abs());
        }
        time.push(t);
        states.push(x.iter().copied().collect());
        controls.push(u.iter().copied().collect());
        if k == steps {
            break;
        }
        let h = opts.dt;
        let k1 = rhs(&x, t);
        let k2 = rhs(&(&x + &k1 * (h / 2.0)), t + h / 2.0);
        let k3 = rhs(&(&x + &k2 * (h / 2.0)), t + h / 2.0);
        let k4 = rhs(&(&x + &k3 * h), t + h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let e = x.norm_squared();
        if !e.is_finite() || e > limit {
            return Err(Error::SimulationBlowup { t: t + h });
        }
    }
    Ok(SimResult {
        time,
        states,
        controls,
        peaks,
        disturbance: disturbance.describe(),
        actuator_names: plant.actuator_names.clone(),
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            for &i in &idx[s..=e] {
                r[i] = (s + e) as f64 / 2.0;
            }
            s = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepStatus {
    Ok,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma0: f64,
    pub status: SweepStatus,
    pub message: String,
    pub iterations: usize,
    pub objective: Option<f64>,
    /// Verified closed-loop performance norm of the last iterate.
    pub performance: Option<f64>,
    pub active_actuators: Vec<usize>,
    pub active_sensors: Vec<usize>,
    /// Γ or group norms of the last iterate.
    pub actuator_values: Vec<f64>,
    pub sensor_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: Mode,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self, nu: usize, ny: usize) -> String {
        let mut header: Vec<String> = [
            "gamma0",
            "status",
            "iterations",
            "objective",
            "performance",
            "active_actuators",
            "active_sensors",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=nu).map(|i| format!("value_u{i}")));
        header.extend((1..=ny).map(|j| format!("value_y{j}")));
        header.push("message".into());
        let mut t = CsvTable::new(header);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            let mut row = vec![
                fmt_f64(r.gamma0),
                format!("{:?}", r.status).to_lowercase(),
                r.iterations.to_string(),
                opt(r.objective),
                opt(r.performance),
                fmt_index_set(&r.active_actuators),
                fmt_index_set(&r.active_sensors),
            ];
            let cells = |v: &[f64], n: usize| (0..n).map(|i| opt(v.get(i).copied())).collect::<Vec<_>>();
            row.extend(cells(&r.actuator_values, nu));
            row.extend(cells(&r.sensor_values, ny));
            row.push(r.message.clone());
            t.push(row);
        }
        t.to_csv()
    }
}

fn sweep_row(gamma0: f64, outcome: Result<SparsifyTrace>) -> SweepRow {
    match outcome {
        Ok(tr) => {
            let it = tr.iterations.last().expect("trace is never empty");
            SweepRow {
                gamma0,
                status: SweepStatus::Ok,
                message: format!("{:?}", tr.stop),
                iterations: tr.iterations.len(),
                objective: Some(it.objective),
                performance: Some(tr.last.verification.performance.value),
                active_actuators: it.active_actuators.clone(),
                active_sensors: it.active_sensors.clone(),
                actuator_values: it.actuator_values.clone(),
                sensor_values: it.sensor_values.clone(),
            }
        }
        Err(e) => SweepRow {
            gamma0,
            status: if e.is_infeasible() { SweepStatus::Infeasible } else { SweepStatus::Failed },
            message: e.to_string(),
            iterations: 0,
            objective: None,
            performance: None,
            active_actuators: Vec::new(),
            active_sensors: Vec::new(),
            actuator_values: Vec::new(),
            sensor_values: Vec::new(),
        },
    }
}

/// Reweighted synthesis at each γ0, solved in parallel. Failures become rows.
pub fn gamma_sweep(
    plant: &GeneralizedPlant,
    mode: Mode,
    gamma0_list: &[f64],
    policy: &ReweightPolicy,
    opts: &SynthOptions,
) -> Result<SweepTable> {
    if gamma0_list.is_empty() {
        return Err(Error::InvalidParameter("γ0 list is empty".into()));
    }
    policy.check()?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(gamma0_list.len());
    let mut rows: Vec<Option<SweepRow>> = vec![None; gamma0_list.len()];
    std::thread::scope(|s| {
        let chunks: Vec<_> = rows.chunks_mut(gamma0_list.len().div_ceil(workers)).collect();
        let mut start = 0;
        for chunk in chunks {
            let gammas = &gamma0_list[start..start + chunk.len()];
            start += chunk.len();
            s.spawn(move || {
                for (slot, &g) in chunk.iter_mut().zip(gammas) {
                    let spec = SynthesisSpec::new(plant.clone(), mode, g);
                    *slot = Some(sweep_row(g, reweight_iterate(&spec, policy, opts)));
                }
            });
        }
    });
    Ok(SweepTable { mode, rows: rows.into_iter().map(|r| r.expect("every slot is filled")).collect() })
}
