//! `sparsyn` command-line front end.
//!
//! Exit status: 0 on success, 2 when the performance level is infeasible,
//! 1 on usage or any other error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sparsyn::analysis;
use sparsyn::bench::{self, Disturbance, PlantFamily, SimOptions};
use sparsyn::sparsify::{self, ReweightPolicy, SparsifyTrace};
use sparsyn::synth::{self, Mode, SynthOptions, SynthesisResult, SynthesisSpec};
use sparsyn::{Controller, GeneralizedPlant};

#[derive(Parser)]
#[command(name = "sparsyn", version, about = "Sparse H2/H-infinity controller synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one synthesis problem (optionally reweighted) and write the controller.
    Synth(SynthArgs),
    /// Closed-loop norms of a plant and controller.
    Verify(VerifyArgs),
    /// Reweighted synthesis over a list of performance levels.
    Sweep(SweepArgs),
    /// Reweighting, pruning of inactive channels and re-solve.
    Prune(SynthArgs),
    /// End-to-end study on a built-in plant family.
    Demo(DemoArgs),
}

/// Comma-separated list of floats.
#[derive(Clone, Debug)]
struct List(Vec<f64>);

impl FromStr for List {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
            .collect::<Result<Vec<_>, _>>()?;
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err("entries must be finite and non-negative".into());
        }
        Ok(List(v))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be positive".into()),
        Err(_) => Err(format!("`{s}` is not a number")),
    }
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file `{s}`"))
    }
}

#[derive(Args)]
struct Common {
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for every random choice (disturbance realizations).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the packed SDP of the last solve as sparse triplets.
    #[arg(long)]
    dump_sdp: bool,
}

#[derive(Args)]
struct PolicyArgs {
    /// Largest number of reweighted solves.
    #[arg(long)]
    reweight_max: Option<usize>,
    /// Reweighting offset ε.
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    /// Relative activity threshold.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
}

impl PolicyArgs {
    fn policy(&self, default_outer: usize) -> anyhow::Result<ReweightPolicy> {
        let d = ReweightPolicy::default();
        let p = ReweightPolicy {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            max_outer: self.reweight_max.unwrap_or(default_outer),
            threshold_ratio: self.threshold.unwrap_or(d.threshold_ratio),
            ..d
        };
        if p.max_outer == 0 {
            bail!(Usage("--reweight-max: must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&p.threshold_ratio) {
            bail!(Usage("--threshold: must lie in [0, 1)".into()));
        }
        Ok(p)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Plant JSON.
    #[arg(long, value_parser = existing_file)]
    model: PathBuf,
    /// sf-hinf | sf-h2 | of-hinf | of-h2 | joint-h2 | joint-hinf
    #[arg(long)]
    mode: Mode,
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    gamma0: f64,
    /// Per-actuator bounds on γi.
    #[arg(long)]
    gamma_max: Option<List>,
    /// Actuator channel weights (state and output feedback).
    #[arg(long)]
    rho: Option<List>,
    /// Actuator group weights (joint modes).
    #[arg(long)]
    mu: Option<List>,
    /// Sensor group weights (joint modes).
    #[arg(long)]
    nu: Option<List>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = existing_file)]
    model: PathBuf,
    /// Controller JSON: either `{"K": ...}` or `{"AK","BK","CK","DK"}`.
    #[arg(long, value_parser = existing_file)]
    controller: PathBuf,
    /// Check the performance norm of this mode against --gamma0.
    #[arg(long, requires = "gamma0")]
    mode: Option<Mode>,
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    gamma0: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = existing_file)]
    model: PathBuf,
    #[arg(long)]
    mode: Mode,
    /// Performance levels to solve at.
    #[arg(long)]
    gamma0: List,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DemoArgs {
    /// scalar | chain:<n> | tensegrity
    #[arg(long, default_value = "chain:3")]
    family: PlantFamily,
    #[arg(long, default_value = "sf-h2")]
    mode: Mode,
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    gamma0: f64,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Simulate with the family's cubic stiffening.
    #[arg(long)]
    nonlinear_sim: bool,
    /// Simulation horizon in seconds.
    #[arg(long, value_parser = positive, allow_negative_numbers = true, default_value_t = 10.0)]
    horizon: f64,
    #[command(flatten)]
    common: Common,
}

/// Usage error raised after parsing (cross-flag checks).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<Usage>() {
                eprintln!("usage: {u}");
                return ExitCode::from(1);
            }
            match e.downcast_ref::<sparsyn::Error>() {
                // library errors already embed their causes in the message
                Some(se) => {
                    eprintln!("error: {se}");
                    ExitCode::from(if se.is_infeasible() { 2 } else { 1 })
                }
                None => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Synth(a) => synth_cmd(&a, false),
        Command::Prune(a) => synth_cmd(&a, true),
        Command::Verify(a) => verify_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Demo(a) => demo_cmd(&a),
    }
}

fn load_plant(path: &Path) -> anyhow::Result<GeneralizedPlant> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GeneralizedPlant::from_json(&s)?)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn check_len(flag: &str, v: &Option<List>, n: usize) -> anyhow::Result<Option<Vec<f64>>> {
    match v {
        Some(List(v)) if v.len() != n => bail!(Usage(format!("--{flag}: expected {n} entries, got {}", v.len()))),
        Some(List(v)) => Ok(Some(v.clone())),
        None => Ok(None),
    }
}

fn build_spec(a: &SynthArgs, plant: GeneralizedPlant) -> anyhow::Result<SynthesisSpec> {
    let d = plant.dims();
    let mut spec = SynthesisSpec::new(plant, a.mode, a.gamma0);
    spec.gamma_max = check_len("gamma-max", &a.gamma_max, d.nu)?;
    if a.mode.is_joint() {
        if a.rho.is_some() {
            bail!(Usage("--rho: only used by state- and output-feedback modes".into()));
        }
        spec.mu = check_len("mu", &a.mu, d.nu)?;
        spec.nu = check_len("nu", &a.nu, d.ny)?;
    } else {
        if a.mu.is_some() || a.nu.is_some() {
            bail!(Usage(format!("--{}: only used by joint modes", if a.mu.is_some() { "mu" } else { "nu" })));
        }
        spec.rho = check_len("rho", &a.rho, d.nu)?;
    }
    Ok(spec)
}

fn synth_options(common: &Common) -> SynthOptions {
    SynthOptions { dump_sdp: common.dump_sdp, ..SynthOptions::default() }
}

/// Moves the SDP dump (if any) out of the result into its own file.
fn write_result(dir: &Path, name: &str, mut res: SynthesisResult) -> anyhow::Result<()> {
    if let Some(d) = res.solve.dump.take() {
        write(dir, &format!("{}.sdp.txt", name.trim_end_matches(".json")), &d)?;
    }
    write(dir, name, &to_json(&res)?)
}

fn synth_cmd(a: &SynthArgs, prune: bool) -> anyhow::Result<()> {
    let plant = load_plant(&a.model)?;
    let spec = build_spec(a, plant)?;
    let policy = a.policy.policy(if prune { ReweightPolicy::default().max_outer } else { 1 })?;
    let opts = synth_options(&a.common);
    let trace = if prune {
        sparsify::sparsify(&spec, &policy, &opts)?
    } else {
        sparsify::reweight_iterate(&spec, &policy, &opts)?
    };
    // every result was verified inside synthesis; re-check the written controller
    let final_res = trace.pruned.as_ref().map_or(&trace.last, |p| &p.result);
    let final_plant = trace.pruned.as_ref().map_or(&spec.plant, |p| &p.plant);
    let gamma = final_res.gamma.as_deref();
    synth::verify(final_plant, &final_res.controller, spec.mode.kind(), spec.gamma0, gamma)?;

    let out = &a.common.out;
    write(out, "controller.json", &to_json(&final_res.controller)?)?;
    write(out, "trace.csv", &trace.to_csv())?;
    write_result(out, "result.json", final_res.clone())?;
    if let Some(p) = &trace.pruned {
        write(out, "reduced_plant.json", &(p.plant.to_json()? + "\n"))?;
        write_result(out, "reweighted_result.json", trace.last.clone())?;
    }
    print_summary(&trace, final_res);
    Ok(())
}

fn print_summary(trace: &SparsifyTrace, res: &SynthesisResult) {
    let summary = json!({
        "mode": res.mode.name(),
        "iterations": trace.iterations.len(),
        "stop": trace.stop,
        "objective": res.objective,
        "performance": res.verification.performance.value,
        "active_actuators": trace.final_active_actuators().iter().map(|i| i + 1).collect::<Vec<_>>(),
        "active_sensors": trace.final_active_sensors().iter().map(|i| i + 1).collect::<Vec<_>>(),
        "kept_actuators": trace.pruned.as_ref().map(|p| p.kept_actuators.iter().map(|i| i + 1).collect::<Vec<_>>()),
        "kept_sensors": trace.pruned.as_ref().map(|p| p.kept_sensors.iter().map(|i| i + 1).collect::<Vec<_>>()),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain values"));
}

fn verify_cmd(a: &VerifyArgs) -> anyhow::Result<()> {
    let plant = load_plant(&a.model)?;
    let text = fs::read_to_string(&a.controller).with_context(|| format!("reading {}", a.controller.display()))?;
    let ctrl: Controller = serde_json::from_str(&text).context("controller JSON")?;
    let cl = ctrl.close(&plant)?;
    let hurwitz = analysis::is_hurwitz(&cl.a)?;
    let mut report = json!({ "hurwitz": hurwitz });
    if hurwitz {
        let perf = cl.performance();
        report["hinf"] = serde_json::to_value(analysis::hinf_norm(&perf, 1e-9)?)?;
        report["h2"] = match analysis::h2_norm(&perf) {
            Ok(r) => serde_json::to_value(r)?,
            Err(e) => json!({ "error": e.to_string() }),
        };
        report["channels"] = serde_json::to_value(analysis::closed_loop_channel_h2_norms(&cl)?)?;
    }
    let checked = match (a.mode, a.gamma0) {
        (Some(mode), Some(g0)) => {
            let r = synth::verify(&plant, &ctrl, mode.kind(), g0, None);
            report["gamma0"] = json!(g0);
            report["passed"] = json!(r.is_ok());
            if let Err(e) = &r {
                report["reason"] = json!(e.to_string());
            }
            Some(r)
        }
        _ => None,
    };
    let text = to_json(&report)?;
    write(&a.common.out, "verify.json", &text)?;
    print!("{text}");
    if !hurwitz {
        bail!(sparsyn::Error::VerificationFailed("closed loop is not Hurwitz".into()));
    }
    if let Some(Err(e)) = checked {
        return Err(e.into());
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> anyhow::Result<()> {
    let plant = load_plant(&a.model)?;
    if a.gamma0.0.iter().any(|&g| g <= 0.0) {
        bail!(Usage("--gamma0: entries must be positive".into()));
    }
    let policy = a.policy.policy(ReweightPolicy::default().max_outer)?;
    let table = bench::gamma_sweep(&plant, a.mode, &a.gamma0.0, &policy, &synth_options(&a.common))?;
    let d = plant.dims();
    let csv = table.to_csv(d.nu, d.ny);
    write(&a.common.out, "sweep.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn demo_cmd(a: &DemoArgs) -> anyhow::Result<()> {
    let plant = bench::make_plant(&a.family)?;
    let out = &a.common.out;
    write(out, "plant.json", &(plant.to_json()? + "\n"))?;
    let spec = SynthesisSpec::new(plant.clone(), a.mode, a.gamma0);
    let policy = a.policy.policy(ReweightPolicy::default().max_outer)?;
    let trace = sparsify::sparsify(&spec, &policy, &synth_options(&a.common))?;
    let pruned = trace.pruned.as_ref().expect("sparsify always prunes");
    write(out, "trace.csv", &trace.to_csv())?;
    write(out, "controller.json", &to_json(&pruned.result.controller)?)?;
    write_result(out, "result.json", pruned.result.clone())?;

    let sim = SimOptions {
        horizon: a.horizon,
        cubic_stiffening: if a.nonlinear_sim { Some(a.family.cubic_coefficient()?) } else { None },
        ..SimOptions::default()
    };
    let dist = Disturbance::noise(a.common.seed);
    let run = bench::simulate_closed_loop(&pruned.plant, &pruned.result.controller, &dist, &sim)?;
    write(out, "simulation.csv", &run.to_csv())?;
    write(out, "peaks.csv", &run.peaks_csv())?;
    print_summary(&trace, &pruned.result);
    Ok(())
}
