//! Reweighted ℓ1 outer loop, pruning of inactive channels and re-solve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::GeneralizedPlant;
use crate::synth::{active_set, synthesize, Mode, SynthOptions, SynthesisResult, SynthesisSpec};

/// Weight multiplier applied to tied channels other than the lowest index.
/// Exact duplicates give identical values and the update alone can never
/// separate them.
pub const TIE_BREAK: f64 = 100.0;
const TIE_TOL: f64 = 1e-5;
/// Largest relative weight change on active channels that still counts as a
/// settled active set; inactive weights can keep drifting at noise level.
const SETTLED_WEIGHT_TOL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightPolicy {
    pub epsilon: f64,
    pub max_outer: usize,
    pub stall_tol: f64,
    pub threshold_ratio: f64,
}

impl Default for ReweightPolicy {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_outer: 10, stall_tol: 1e-4, threshold_ratio: 1e-3 }
    }
}

impl ReweightPolicy {
    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_outer < 1 {
            return Err(Error::InvalidParameter("max_outer must be at least 1".into()));
        }
        if !(self.stall_tol >= 0.0) {
            return Err(Error::InvalidParameter("stall_tol must be non-negative".into()));
        }
        if !(self.threshold_ratio >= 0.0 && self.threshold_ratio < 1.0) {
            return Err(Error::InvalidParameter("threshold_ratio must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub index: usize,
    /// ρ (state/output feedback) or μ (joint) used in this solve.
    pub actuator_weights: Vec<f64>,
    /// ν in joint modes, empty otherwise.
    pub sensor_weights: Vec<f64>,
    /// Weighted objective of this solve.
    pub objective: f64,
    /// The previous iterate's values under this iteration's weights. Since the
    /// previous solution is feasible here, `objective` may not exceed it.
    pub previous_under_weights: Option<f64>,
    /// γi or actuator group norms.
    pub actuator_values: Vec<f64>,
    pub sensor_values: Vec<f64>,
    pub active_actuators: Vec<usize>,
    pub active_sensors: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Same active sets and unchanged weights: a fixed point.
    FixedPoint,
    /// Active sets unchanged across two consecutive updates and the active
    /// weights moving by at most 10%.
    ActiveSetStable,
    ObjectiveStall,
    MaxOuter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyTrace {
    pub mode: Mode,
    pub policy: ReweightPolicy,
    pub iterations: Vec<Iteration>,
    pub stop: StopReason,
    /// Result of the last solve.
    pub last: SynthesisResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruned: Option<PrunedResult>,
}

impl SparsifyTrace {
    pub fn final_active_actuators(&self) -> &[usize] {
        &self.iterations.last().expect("trace is never empty").active_actuators
    }

    pub fn final_active_sensors(&self) -> &[usize] {
        &self.iterations.last().expect("trace is never empty").active_sensors
    }

    /// One row per iteration: weights then values for every channel.
    pub fn to_csv(&self) -> String {
        let first = &self.iterations[0];
        let (nu, ny) = (first.actuator_weights.len(), first.sensor_weights.len());
        let mut s = String::from("iteration,objective,previous_under_weights,active_actuators,active_sensors");
        for i in 1..=nu {
            let _ = write!(s, ",w_u{i}");
        }
        for j in 1..=ny {
            let _ = write!(s, ",w_y{j}");
        }
        for i in 1..=nu {
            let _ = write!(s, ",value_u{i}");
        }
        for j in 1..=ny {
            let _ = write!(s, ",value_y{j}");
        }
        s.push('\n');
        let list = |v: &[usize]| v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ");
        for it in &self.iterations {
            let _ = write!(
                s,
                "{},{},{},{},{}",
                it.index,
                fmt_f64(it.objective),
                it.previous_under_weights.map(fmt_f64).unwrap_or_default(),
                list(&it.active_actuators),
                list(&it.active_sensors)
            );
            for v in it.actuator_weights.iter().chain(&it.sensor_weights) {
                let _ = write!(s, ",{}", fmt_f64(*v));
            }
            for v in it.actuator_values.iter().chain(&it.sensor_values) {
                let _ = write!(s, ",{}", fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }
}

/// `1/(v + ε)` normalized to max 1, with ties among active channels broken
/// toward the lowest index.
pub fn update_weights(values: &[f64], active: &[usize], epsilon: f64) -> Vec<f64> {
    let mut w: Vec<f64> = values.iter().map(|&v| 1.0 / (v.max(0.0) + epsilon)).collect();
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[..a] {
            let (vi, vj) = (values[i], values[j]);
            if (vi - vj).abs() <= TIE_TOL * vi.abs().max(vj.abs()) {
                w[i] *= TIE_BREAK;
                break;
            }
        }
    }
    normalize(&mut w);
    w
}

fn normalize(w: &mut [f64]) {
    let max = w.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in w.iter_mut() {
            *v /= max;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the reweighted sequence. The update acts on γi for state/output
/// feedback and on the group norms for joint modes.
pub fn reweight_iterate(spec: &SynthesisSpec, policy: &ReweightPolicy, opts: &SynthOptions) -> Result<SparsifyTrace> {
    policy.check()?;
    let joint = spec.mode.is_joint();
    let ny = spec.plant.dims().ny;
    let (mut wa, mut ws) = if joint {
        (spec.mu_or_default(), spec.nu_or_default())
    } else {
        (spec.rho_or_default(), Vec::new())
    };
    // zero weights (joint modes) stay zero: those groups are not penalized
    let mask_a: Vec<bool> = wa.iter().map(|&w| w > 0.0).collect();
    let mask_s: Vec<bool> = ws.iter().map(|&w| w > 0.0).collect();

    let mut iterations: Vec<Iteration> = Vec::new();
    let mut last = None;
    let mut stop = StopReason::MaxOuter;
    for k in 1..=policy.max_outer {
        let mut sk = spec.clone();
        if joint {
            sk.mu = Some(wa.clone());
            sk.nu = Some(ws.clone());
        } else {
            sk.rho = Some(wa.clone());
        }
        let res = synthesize(&sk, opts).map_err(|e| Error::Iteration { iteration: k, source: Box::new(e) })?;
        let va = res.actuator_values();
        let vs = res.sensor_values();
        let active_actuators = active_set(&res.actuator_magnitudes(), policy.threshold_ratio);
        let active_sensors = if joint {
            active_set(&vs, policy.threshold_ratio)
        } else {
            (0..ny).collect()
        };
        let previous_under_weights = iterations
            .last()
            .map(|p| dot(&wa, &p.actuator_values) + dot(&ws, &p.sensor_values));
        let it = Iteration {
            index: k,
            actuator_weights: wa.clone(),
            sensor_weights: ws.clone(),
            objective: res.objective,
            previous_under_weights,
            actuator_values: va.clone(),
            sensor_values: vs.clone(),
            active_actuators,
            active_sensors,
        };
        last = Some(res);

        let mut next_a = update_weights(&va, &it.active_actuators, policy.epsilon);
        let mut next_s = if joint { update_weights(&vs, &it.active_sensors, policy.epsilon) } else { Vec::new() };
        for (w, &m) in next_a.iter_mut().zip(&mask_a) {
            if !m {
                *w = 0.0;
            }
        }
        for (w, &m) in next_s.iter_mut().zip(&mask_s) {
            if !m {
                *w = 0.0;
            }
        }
        normalize(&mut next_a);
        normalize(&mut next_s);

        let prev = iterations.last();
        let same = |p: &Iteration| p.active_actuators == it.active_actuators && p.active_sensors == it.active_sensors;
        let same_sets = prev.is_some_and(same);
        let active_change = |next: &[f64], cur: &[f64], idx: &[usize]| {
            idx.iter().filter(|&&i| i < next.len()).map(|&i| max_rel_change(&next[i..=i], &cur[i..=i])).fold(0.0, f64::max)
        };
        let active_settled = active_change(&next_a, &wa, &it.active_actuators)
            .max(active_change(&next_s, &ws, &it.active_sensors))
            <= SETTLED_WEIGHT_TOL;
        let settled =
            active_settled && iterations.len() >= 2 && iterations[iterations.len() - 2..].iter().all(same);
        let weights_fixed = max_rel_change(&next_a, &wa).max(max_rel_change(&next_s, &ws)) <= policy.stall_tol;
        let stalled = prev.is_some_and(|p| {
            (it.objective - p.objective).abs() <= policy.stall_tol * p.objective.abs().max(f64::MIN_POSITIVE)
        });
        iterations.push(it);
        if same_sets && weights_fixed {
            stop = StopReason::FixedPoint;
            break;
        }
        if settled {
            stop = StopReason::ActiveSetStable;
            break;
        }
        if stalled && same_sets {
            stop = StopReason::ObjectiveStall;
            break;
        }
        wa = next_a;
        ws = next_s;
    }
    Ok(SparsifyTrace {
        mode: spec.mode,
        policy: *policy,
        iterations,
        stop,
        last: last.expect("at least one iteration"),
        pruned: None,
    })
}

fn max_rel_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedResult {
    /// Original indices of the retained actuators and sensors.
    pub kept_actuators: Vec<usize>,
    pub kept_sensors: Vec<usize>,
    pub plant: GeneralizedPlant,
    pub result: SynthesisResult,
}

/// Removes inactive actuators (and, in joint modes, sensors) and re-solves
/// with uniform weights on the reduced plant.
pub fn prune_and_resolve(
    trace: &SparsifyTrace,
    spec: &SynthesisSpec,
    opts: &SynthOptions,
) -> Result<PrunedResult> {
    let threshold = trace.policy.threshold_ratio;
    let keep_a = trace.final_active_actuators().to_vec();
    let keep_s = if spec.mode.is_joint() {
        trace.final_active_sensors().to_vec()
    } else {
        (0..spec.plant.dims().ny).collect()
    };
    if keep_a.is_empty() || keep_s.is_empty() {
        return Err(Error::ReducedInfeasible { threshold, reason: "no channel left active".into() });
    }
    let plant = spec.plant.select_actuators(&keep_a).select_sensors(&keep_s);
    let pick = |w: &Option<Vec<f64>>, keep: &[usize]| w.as_ref().map(|w| keep.iter().map(|&i| w[i]).collect::<Vec<_>>());
    let uniform = |w: Option<Vec<f64>>, n: usize| {
        Some(w.map_or(vec![1.0; n], |w| w.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect()))
    };
    let mut reduced = SynthesisSpec::new(plant.clone(), spec.mode, spec.gamma0);
    reduced.gamma_max = pick(&spec.gamma_max, &keep_a);
    if spec.mode.is_joint() {
        reduced.mu = uniform(pick(&spec.mu, &keep_a), keep_a.len());
        reduced.nu = uniform(pick(&spec.nu, &keep_s), keep_s.len());
        if reduced.mu.iter().chain(&reduced.nu).flatten().all(|&w| w == 0.0) {
            reduced.mu = Some(vec![1.0; keep_a.len()]);
        }
    }
    let result = synthesize(&reduced, opts).map_err(|e| match e {
        Error::InfeasiblePerformance(_) | Error::VerificationFailed(_) | Error::Numerical(_) | Error::ReconstructionFailure(_) => {
            Error::ReducedInfeasible { threshold, reason: e.to_string() }
        }
        other => other,
    })?;
    Ok(PrunedResult { kept_actuators: keep_a, kept_sensors: keep_s, plant, result })
}

/// Reweighting followed by pruning.
pub fn sparsify(spec: &SynthesisSpec, policy: &ReweightPolicy, opts: &SynthOptions) -> Result<SparsifyTrace> {
    let mut trace = reweight_iterate(spec, policy, opts)?;
    trace.pruned = Some(prune_and_resolve(&trace, spec, opts)?);
    Ok(trace)
}
