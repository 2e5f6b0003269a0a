use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use daedvfs_core::clock::{enumerate_configs, group_iso_frequency, min_power_config, ClockSweep};
use daedvfs_core::cost::{self, write_profiles};
use daedvfs_core::mckp::DEFAULT_QUANTUM_US;
use daedvfs_core::pareto::pareto_front_all;
use daedvfs_core::pipeline::{self, PlannerOptions, DEFAULT_MAX_SYSCLK_MHZ, DEFAULT_SLACKS};
use daedvfs_core::sim::{qos_from_slack, simulate, ComparisonTable};
use daedvfs_core::{Calibration, Frequency, IdlePolicy, LayerProfile, Schedule, SimReport};

/// Flag combination clap cannot reject on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub enum Outcome {
    Done,
    Infeasible,
}

/// DVFS planner for decoupled access-execute CNN kernels on STM32 MCUs.
///
/// Output files are written into the directory given by --out.
/// Exit codes: 0 success, 2 infeasible QoS budget, 3 invalid input.
#[derive(Debug, Parser)]
#[command(name = "daedvfs", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate PLL configurations with their frequency and modeled power (clocks.csv).
    ExploreClocks(ExploreArgs),
    /// Synthesize operating points for a network description (profiles.jsonl).
    SynthProfiles(SynthArgs),
    /// Validate and normalize a measured profile file (profiles.jsonl).
    Ingest(IngestArgs),
    /// Extract per-layer Pareto frontiers (pareto.csv).
    Pareto(SourceArgs),
    /// Solve for the minimum-energy schedule under a QoS budget (schedule.json, report.json).
    Optimize(OptimizeArgs),
    /// Re-simulate a stored schedule (simulation.json).
    Simulate(SimulateArgs),
    /// Compare baseline, clock-gated baseline and planned schedule per slack level (comparison.csv).
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory receiving every output file.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    /// HSE crystal frequencies in MHz.
    #[arg(long, value_delimiter = ',', default_values_t = vec![50u32])]
    pub hse: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = daedvfs_core::clock::DEFAULT_PLLM.to_vec())]
    pub pllm: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = daedvfs_core::clock::DEFAULT_PLLN.to_vec())]
    pub plln: Vec<u32>,
    #[arg(long, default_value_t = daedvfs_core::clock::DEFAULT_PLLP)]
    pub pllp: u32,
    /// Lower VCO output bound in MHz.
    #[arg(long)]
    pub vco_min: Option<u64>,
    /// Upper VCO output bound in MHz.
    #[arg(long)]
    pub vco_max: Option<u64>,
    /// Drop configs above this SYSCLK in MHz.
    #[arg(long)]
    pub max_sysclk_mhz: Option<u64>,
    /// Calibration JSON; built-in defaults when omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Network description (JSON list of layers).
    #[arg(long)]
    pub network: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Measured profile file (JSON Lines).
    #[arg(long)]
    pub profiles: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Calibration JSON; built-in defaults when omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Seed for synthetic cycle-count jitter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Uniform +/- jitter applied to synthetic cycle counts, in percent.
    #[arg(long, default_value_t = 0.0)]
    pub jitter_pct: f64,
    /// Highest HFO frequency in MHz; 0 removes the ceiling.
    #[arg(long, default_value_t = DEFAULT_MAX_SYSCLK_MHZ)]
    pub max_sysclk_mhz: u64,
}

impl ModelArgs {
    fn calibration(&self) -> Result<Calibration> {
        match &self.calibration {
            Some(path) => Calibration::load(path)
                .with_context(|| format!("reading calibration {}", path.display())),
            None => Ok(Calibration::default()),
        }
    }

    fn max_sysclk(&self) -> Option<Frequency> {
        (self.max_sysclk_mhz > 0).then(|| Frequency::from_mhz(self.max_sysclk_mhz))
    }
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["network", "profiles"])]
pub struct SourceArgs {
    /// Network description; profiles are synthesized from it.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Measured profile file (JSON Lines).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum IdleArg {
    Gated,
    Constant,
}

impl From<IdleArg> for IdlePolicy {
    fn from(a: IdleArg) -> Self {
        match a {
            IdleArg::Gated => IdlePolicy::ClockGatedIdle,
            IdleArg::Constant => IdlePolicy::ConstantClockIdle,
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Absolute latency budget in microseconds.
    #[arg(long, conflicts_with = "qos_slack_pct", required_unless_present = "qos_slack_pct")]
    pub qos_us: Option<f64>,
    /// Budget as percent latency inflation over the constant-clock baseline.
    #[arg(long)]
    pub qos_slack_pct: Option<f64>,
    /// DP time step in microseconds.
    #[arg(long, default_value_t = DEFAULT_QUANTUM_US)]
    pub quantum_us: f64,
    /// Idle behaviour after the last layer.
    #[arg(long, value_enum, default_value_t = IdleArg::Gated)]
    pub idle_policy: IdleArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// schedule.json written by `optimize`.
    #[arg(long)]
    pub schedule: PathBuf,
    /// Override the stored QoS budget.
    #[arg(long)]
    pub qos_us: Option<f64>,
    /// Override the stored idle policy.
    #[arg(long, value_enum)]
    pub idle_policy: Option<IdleArg>,
    /// Override the stored calibration.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Slack levels in percent.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SLACKS.to_vec())]
    pub slack: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_QUANTUM_US)]
    pub quantum_us: f64,
    /// Idle behaviour of the planned schedule.
    #[arg(long, value_enum, default_value_t = IdleArg::Gated)]
    pub planned_idle: IdleArg,
}

/// Inputs and settings of a run, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub network: Option<String>,
    pub profiles: Option<String>,
    pub calibration: Option<String>,
    pub qos: Option<QosSpec>,
    pub quantum_us: Option<f64>,
    pub seed: u64,
    pub jitter_pct: f64,
    pub max_sysclk_mhz: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum QosSpec {
    Us(f64),
    SlackPct(Vec<f64>),
}

/// Contents of schedule.json.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduleFile {
    pub qos_us: f64,
    pub idle_policy: IdlePolicy,
    pub calibration: Calibration,
    pub feasible: bool,
    pub planned_latency_us: f64,
    pub planned_energy_uj: f64,
    pub dp_cells: usize,
    pub schedule: Schedule,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::ExploreClocks(a) => explore_clocks(a),
        Command::SynthProfiles(a) => synth_profiles(a),
        Command::Ingest(a) => ingest(a),
        Command::Pareto(a) => pareto(a),
        Command::Optimize(a) => optimize(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    }
}

fn out_file(out: &OutArgs, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&out.out)
        .map_err(daedvfs_core::Error::from)
        .with_context(|| format!("creating {}", out.out.display()))?;
    Ok(out.out.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(daedvfs_core::Error::from)
        .with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn check_finite_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(UsageError(format!("--{name} must be a positive number")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct ClockRow {
    source: &'static str,
    hse_mhz: u32,
    pllm: u32,
    plln: u32,
    pllp: u32,
    sysclk_mhz: String,
    vco_mhz: String,
    power_mw: f64,
    /// Lowest-power config of its iso-frequency group.
    selected: bool,
}

fn explore_clocks(a: ExploreArgs) -> Result<Outcome> {
    let cal = match &a.calibration {
        Some(p) => Calibration::load(p).with_context(|| format!("reading calibration {}", p.display()))?,
        None => Calibration::default(),
    };
    if a.hse.is_empty() || a.pllm.is_empty() || a.plln.is_empty() {
        return Err(UsageError("--hse, --pllm and --plln need at least one value".into()).into());
    }
    let vco_bounds = match (a.vco_min, a.vco_max) {
        (None, None) => None,
        (lo, hi) => Some((
            Frequency::from_mhz(lo.unwrap_or(0)),
            Frequency::from_mhz(hi.unwrap_or(u64::MAX / 1024)),
        )),
    };
    let sweep = ClockSweep {
        hse_mhz: a.hse,
        pllm: a.pllm,
        plln: a.plln,
        pllp: a.pllp,
        vco_bounds,
        max_sysclk: a.max_sysclk_mhz.map(Frequency::from_mhz),
    };
    let configs = enumerate_configs(&sweep)?;
    let plain: Vec<_> = configs.iter().map(|(c, _)| *c).collect();
    let selected = group_iso_frequency(&plain)
        .into_iter()
        .map(|(f, group)| min_power_config(f, &group, &cal.power))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = configs.iter().map(|(c, f)| ClockRow {
        source: "pll",
        hse_mhz: c.hse_mhz(),
        pllm: c.pllm().unwrap_or(0),
        plln: c.plln().unwrap_or(0),
        pllp: c.pllp().unwrap_or(0),
        sysclk_mhz: f.render(),
        vco_mhz: c.vco_frequency().render(),
        power_mw: cal.power.power_mw(c),
        selected: selected.contains(c),
    });
    write_csv(&out_file(&a.out, "clocks.csv")?, rows)?;
    Ok(Outcome::Done)
}

fn synthetic_profiles(network: &Path, model: &ModelArgs, cal: &Calibration) -> Result<Vec<LayerProfile>> {
    if !(model.jitter_pct.is_finite() && model.jitter_pct >= 0.0) {
        return Err(UsageError("--jitter-pct must be non-negative".into()).into());
    }
    let layers = cost::load_network(network)
        .with_context(|| format!("reading network {}", network.display()))?;
    let layers = cost::jitter_layers(&layers, model.jitter_pct, model.seed);
    let opts = PlannerOptions { max_sysclk: model.max_sysclk(), ..PlannerOptions::default() };
    Ok(pipeline::synthesize_profiles(&layers, cal, &opts)?)
}

fn load_profiles(src: &SourceArgs, cal: &Calibration) -> Result<Vec<LayerProfile>> {
    match (&src.network, &src.profiles) {
        (Some(net), None) => synthetic_profiles(net, &src.model, cal),
        (None, Some(path)) => Ok(cost::ingest_profiles(path)
            .with_context(|| format!("reading profiles {}", path.display()))?),
        _ => Err(UsageError("exactly one of --network and --profiles is required".into()).into()),
    }
}

fn manifest(command: &str, src: &SourceArgs, qos: Option<QosSpec>, quantum_us: Option<f64>) -> RunManifest {
    RunManifest {
        command: command.into(),
        network: path_string(&src.network),
        profiles: path_string(&src.profiles),
        calibration: path_string(&src.model.calibration),
        qos,
        quantum_us,
        seed: src.model.seed,
        jitter_pct: src.model.jitter_pct,
        max_sysclk_mhz: src.model.max_sysclk_mhz,
    }
}

fn synth_profiles(a: SynthArgs) -> Result<Outcome> {
    let cal = a.model.calibration()?;
    let profiles = synthetic_profiles(&a.network, &a.model, &cal)?;
    write_text(&out_file(&a.out, "profiles.jsonl")?, &write_profiles(&profiles))?;
    let src = SourceArgs {
        network: Some(a.network),
        profiles: None,
        model: a.model,
        out: OutArgs { out: a.out.out.clone() },
    };
    write_json(&out_file(&a.out, "manifest.json")?, &manifest("synth-profiles", &src, None, None))?;
    Ok(Outcome::Done)
}

fn ingest(a: IngestArgs) -> Result<Outcome> {
    let profiles = cost::ingest_profiles(&a.profiles)
        .with_context(|| format!("reading profiles {}", a.profiles.display()))?;
    let points: usize = profiles.iter().map(|p| p.points.len()).sum();
    write_text(&out_file(&a.out, "profiles.jsonl")?, &write_profiles(&profiles))?;
    println!("{} layers, {} operating points", profiles.len(), points);
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct ParetoRow {
    layer: usize,
    g: u32,
    hfo_mhz: String,
    latency_us: f64,
    energy_uj: f64,
}

fn pareto(a: SourceArgs) -> Result<Outcome> {
    let cal = a.model.calibration()?;
    let profiles = load_profiles(&a, &cal)?;
    let fronts = pareto_front_all(&profiles)?;
    let rows = fronts.iter().flat_map(|f| {
        f.points.iter().map(|p| ParetoRow {
            layer: p.layer_index,
            g: p.g.get(),
            hfo_mhz: p.hfo.frequency().render(),
            latency_us: p.latency_us,
            energy_uj: p.energy_uj,
        })
    });
    write_csv(&out_file(&a.out, "pareto.csv")?, rows)?;
    Ok(Outcome::Done)
}

fn optimize(a: OptimizeArgs) -> Result<Outcome> {
    let src = &a.source;
    let cal = src.model.calibration()?;
    check_finite_positive("quantum-us", a.quantum_us)?;
    let profiles = load_profiles(src, &cal)?;
    let max_sysclk = src.model.max_sysclk();
    let (qos_us, spec) = match (a.qos_us, a.qos_slack_pct) {
        (Some(us), None) => {
            check_finite_positive("qos-us", us)?;
            (us, QosSpec::Us(us))
        }
        (None, Some(pct)) => {
            if !(pct.is_finite() && pct >= 0.0) {
                return Err(UsageError("--qos-slack-pct must be non-negative".into()).into());
            }
            (qos_from_slack(&profiles, pct, &cal, max_sysclk)?, QosSpec::SlackPct(vec![pct]))
        }
        _ => return Err(UsageError("exactly one of --qos-us and --qos-slack-pct is required".into()).into()),
    };
    let opts = PlannerOptions { max_sysclk, quantum_us: a.quantum_us, planned_idle: a.idle_policy.into() };
    let plan = pipeline::plan(&profiles, qos_us, &opts)?;
    let report = simulate(&plan.schedule, qos_us, &cal, opts.planned_idle)?;

    let file = ScheduleFile {
        qos_us,
        idle_policy: opts.planned_idle,
        calibration: cal,
        feasible: plan.solution.feasible,
        planned_latency_us: plan.solution.total_latency_us,
        planned_energy_uj: plan.solution.total_energy_uj,
        dp_cells: plan.solution.dp_cells,
        schedule: plan.schedule,
    };
    write_json(&out_file(&src.out, "schedule.json")?, &file)?;
    write_json(&out_file(&src.out, "report.json")?, &report)?;
    write_json(
        &out_file(&src.out, "manifest.json")?,
        &manifest("optimize", src, Some(spec), Some(a.quantum_us)),
    )?;
    if plan.solution.feasible {
        Ok(Outcome::Done)
    } else {
        eprintln!(
            "QoS budget of {qos_us} us is infeasible; the fastest schedule needs {} us",
            plan.solution.total_latency_us
        );
        Ok(Outcome::Infeasible)
    }
}

fn simulate_cmd(a: SimulateArgs) -> Result<Outcome> {
    let text = fs::read_to_string(&a.schedule)
        .map_err(daedvfs_core::Error::from)
        .with_context(|| format!("reading {}", a.schedule.display()))?;
    let file: ScheduleFile = serde_json::from_str(&text)
        .map_err(daedvfs_core::Error::from)
        .with_context(|| format!("parsing {}", a.schedule.display()))?;
    file.calibration.validate()?;
    let cal = match &a.calibration {
        Some(p) => Calibration::load(p).with_context(|| format!("reading calibration {}", p.display()))?,
        None => file.calibration,
    };
    let qos_us = a.qos_us.unwrap_or(file.qos_us);
    check_finite_positive("qos-us", qos_us)?;
    let policy = a.idle_policy.map(IdlePolicy::from).unwrap_or(file.idle_policy);
    let report: SimReport = simulate(&file.schedule, qos_us, &cal, policy)?;
    write_json(&out_file(&a.out, "simulation.json")?, &report)?;
    Ok(Outcome::Done)
}

fn compare_cmd(a: CompareArgs) -> Result<Outcome> {
    let src = &a.source;
    let cal = src.model.calibration()?;
    check_finite_positive("quantum-us", a.quantum_us)?;
    if a.slack.is_empty() || a.slack.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(UsageError("--slack needs non-negative percentages".into()).into());
    }
    let profiles = load_profiles(src, &cal)?;
    let opts = PlannerOptions {
        max_sysclk: src.model.max_sysclk(),
        quantum_us: a.quantum_us,
        planned_idle: a.planned_idle.into(),
    };
    let mut table = ComparisonTable::default();
    for &slack in &a.slack {
        table.extend(pipeline::compare_at_slack(&profiles, slack, &cal, &opts)?.table());
    }
    write_csv(&out_file(&src.out, "comparison.csv")?, &table.rows)?;
    write_json(
        &out_file(&src.out, "manifest.json")?,
        &manifest("compare", src, Some(QosSpec::SlackPct(a.slack.clone())), Some(a.quantum_us)),
    )?;
    Ok(Outcome::Done)
}
