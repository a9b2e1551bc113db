//! `deferral`: command-line front end for building activity profiles,
//! solving deferral strategies, analyzing buffers, simulating them and
//! running population studies.
//!
//! Every command writes machine-readable output (JSON or CSV). On failure the
//! process exits with status 2 and prints `{"error": kind, "message": ...}`
//! on stderr.

mod grid;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use deferral_core::buffer::SteadyStatePattern;
use deferral_core::ingest::{ingest, IngestOptions, InputFormat, UserProfile};
use deferral_core::population::{self, SynthConfig};
use deferral_core::{
    critical_rate, delay_distribution, empirical_vs_analytic, entropy, run_simulation, solve_numerical_oracle,
    solve_optimal, steady_state, ActivityProfile, DeferralStrategy, Discipline, OutflowPolicy, Period, SimConfig,
    SlotScheme,
};

#[derive(Parser)]
#[command(name = "deferral", version, about = "Entropy-maximizing message deferral experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Activity profiles.
    Profile {
        #[command(subcommand)]
        command: ProfileCommand,
    },
    /// Deferral strategies.
    Strategy {
        #[command(subcommand)]
        command: StrategyCommand,
    },
    /// Privacy-deferral curve as CSV.
    Curve(CurveArgs),
    /// Buffer analysis.
    Buffer {
        #[command(subcommand)]
        command: BufferCommand,
    },
    /// Monte Carlo simulation of a strategy.
    Simulate(SimulateArgs),
    /// Population experiments.
    Population {
        #[command(subcommand)]
        command: PopulationCommand,
    },
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Build a profile from a timestamp log.
    Build(ProfileBuildArgs),
}

#[derive(Subcommand)]
enum StrategyCommand {
    /// Entropy-maximizing strategy at one rate.
    Solve(SolveArgs),
}

#[derive(Subcommand)]
enum BufferCommand {
    /// Starting index, occupancy, capacity and delay distribution.
    Analyze(AnalyzeArgs),
}

#[derive(Subcommand)]
enum PopulationCommand {
    /// Per-user and aggregate analyses over a common rate grid.
    Study(StudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => InputFormat::Csv,
            FormatArg::Jsonl => InputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PeriodArg {
    Day,
    Week,
}

#[derive(Clone, Copy, ValueEnum)]
enum DisciplineArg {
    Uniform,
    Fifo,
    Lifo,
}

impl From<DisciplineArg> for Discipline {
    fn from(d: DisciplineArg) -> Self {
        match d {
            DisciplineArg::Uniform => Discipline::UniformRandom,
            DisciplineArg::Fifo => Discipline::Fifo,
            DisciplineArg::Lifo => Discipline::Lifo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutflowArg {
    Hazard,
    Quota,
}

impl From<OutflowArg> for OutflowPolicy {
    fn from(o: OutflowArg) -> Self {
        match o {
            OutflowArg::Hazard => OutflowPolicy::Hazard,
            OutflowArg::Quota => OutflowPolicy::Quota,
        }
    }
}

#[derive(Args)]
struct SchemeArgs {
    /// Slots per period.
    #[arg(long, default_value_t = 24)]
    slots: usize,
    #[arg(long, value_enum, default_value_t = PeriodArg::Day)]
    period: PeriodArg,
}

impl SchemeArgs {
    fn scheme(&self) -> Result<SlotScheme> {
        let period = match self.period {
            PeriodArg::Day => Period::Day,
            PeriodArg::Week => Period::Week,
        };
        Ok(SlotScheme::new(self.slots, period)?)
    }
}

#[derive(Args)]
struct LogArgs {
    /// Users with fewer messages are skipped.
    #[arg(long, default_value_t = 1)]
    min_messages: u64,
    /// Seconds added to every timestamp before binning (local = UTC + offset).
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    tz_offset: i64,
}

impl LogArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            min_messages: self.min_messages,
            tz_offset_seconds: self.tz_offset,
        }
    }
}

#[derive(Args)]
struct ProfileBuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// User to profile; required when the log holds several users.
    #[arg(long)]
    user: Option<String>,
    #[command(flatten)]
    log: LogArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    phi: f64,
    /// Use the generic projected-gradient solver instead of water-filling.
    #[arg(long)]
    oracle: bool,
    /// Duality-gap tolerance of the generic solver.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    profile: PathBuf,
    /// `start:stop:points` or a comma-separated list of rates.
    #[arg(long)]
    phi_grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    phi: f64,
    /// Messages per period.
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    phi: f64,
    /// Messages per period.
    #[arg(long)]
    alpha: u64,
    #[arg(long, default_value_t = 200)]
    cycles: u64,
    #[arg(long, default_value_t = 2)]
    warmup: u64,
    #[arg(long, value_enum, default_value_t = DisciplineArg::Uniform)]
    discipline: DisciplineArg,
    #[arg(long, value_enum, default_value_t = OutflowArg::Hazard)]
    outflow: OutflowArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare against the analytic delay distribution and capacity.
    #[arg(long)]
    compare: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Timestamp log with one or more users.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Generate this many synthetic users instead of reading a log.
    #[arg(long)]
    synth: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long, default_value_t = population::DEFAULT_MEAN_MESSAGES)]
    mean_messages: f64,
    /// Observation window of synthetic users, in periods.
    #[arg(long, default_value_t = population::DEFAULT_PERIODS)]
    periods: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    log: LogArgs,
    /// `start:stop:points` or a comma-separated list of rates.
    #[arg(long)]
    phi_grid: String,
    #[arg(long)]
    out_dir: PathBuf,
}

fn read_profile(path: &Path) -> Result<ActivityProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(deferral_core::Error::from)?)
}

/// Writes to a temporary sibling and renames, so readers never observe a
/// partially written file.
fn write_output(path: &Path, body: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(body.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_output(path, &body)
}

fn profile_build(args: ProfileBuildArgs) -> Result<()> {
    let report = ingest(&args.input, args.format.into(), args.scheme.scheme()?, &args.log.options())?;
    if !report.row_errors.is_empty() {
        log::warn!("{} malformed rows skipped", report.row_errors.len());
    }
    let user = match &args.user {
        Some(id) => report
            .users
            .iter()
            .find(|u| &u.user_id == id)
            .with_context(|| format!("user {id:?} not found (or below the minimum message count)"))?,
        None if report.users.len() == 1 => &report.users[0],
        None => bail!(
            "log holds {} users; choose one with --user (first: {:?})",
            report.users.len(),
            report.users[0].user_id
        ),
    };
    write_json(&args.out, &user.profile)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    solver: &'static str,
    n: usize,
    phi: f64,
    phi_requested: f64,
    clamped: bool,
    phi_crit: f64,
    s: &'a [f64],
    r: &'a [f64],
    apparent: Vec<f64>,
    entropy_bits: f64,
    profile_entropy_bits: f64,
    gain_pct: Option<f64>,
}

fn gain(h: f64, h0: f64) -> Option<f64> {
    (h0 > 0.0).then(|| 100.0 * (h - h0) / h0)
}

fn strategy_solve(args: SolveArgs) -> Result<()> {
    let q = read_profile(&args.profile)?;
    let (solver, strat): (_, DeferralStrategy) = if args.oracle {
        ("projected_gradient", solve_numerical_oracle(&q, args.phi, args.tol)?)
    } else {
        ("water_filling", solve_optimal(&q, args.phi)?)
    };
    let h0 = entropy(q.q())?;
    let h = strat.entropy_bits();
    write_json(
        &args.out,
        &SolveOutput {
            solver,
            n: q.n(),
            phi: strat.phi,
            phi_requested: strat.phi_requested,
            clamped: strat.clamped,
            phi_crit: critical_rate(&q),
            s: &strat.s,
            r: &strat.r,
            apparent: strat.apparent(),
            entropy_bits: h,
            profile_entropy_bits: h0,
            gain_pct: gain(h, h0),
        },
    )
}

fn curve(args: CurveArgs) -> Result<()> {
    let q = read_profile(&args.profile)?;
    let phis = grid::parse(&args.phi_grid)?;
    let h0 = entropy(q.q())?;
    let mut out = String::from("phi,entropy_bits,gain_pct\n");
    for phi in phis {
        let h = solve_optimal(&q, phi)?.entropy_bits();
        let g = gain(h, h0).map(|g| g.to_string()).unwrap_or_default();
        out.push_str(&format!("{phi},{h},{g}\n"));
    }
    write_output(&args.out, &out)
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    phi: f64,
    phi_crit: f64,
    alpha: f64,
    start_index: usize,
    b: &'a [f64],
    s_prime: &'a [f64],
    r_prime: &'a [f64],
    capacity: f64,
    relative_capacity_pct: f64,
    delay_pmf: &'a [f64],
    conditional_delay_pmf: Vec<f64>,
    expected_delay_slots: f64,
    expected_conditional_delay_slots: f64,
    expected_delay_hours: f64,
    expected_conditional_delay_hours: f64,
}

fn buffer_analyze(args: AnalyzeArgs) -> Result<()> {
    let q = read_profile(&args.profile)?;
    let phi_crit = critical_rate(&q);
    if args.phi > phi_crit {
        return Err(deferral_core::Error::AboveCriticalRate {
            phi: args.phi,
            phi_crit,
        }
        .into());
    }
    let strat = solve_optimal(&q, args.phi)?;
    let pattern: SteadyStatePattern = steady_state(&strat, args.alpha)?;
    let dist = delay_distribution(&pattern)?;
    let max_b = pattern.b.iter().copied().fold(0.0, f64::max);
    write_json(
        &args.out,
        &AnalyzeOutput {
            phi: strat.phi,
            phi_crit,
            alpha: args.alpha,
            start_index: pattern.start_index,
            b: &pattern.b,
            s_prime: &pattern.s_prime,
            r_prime: &pattern.r_prime,
            capacity: deferral_core::capacity(&pattern),
            relative_capacity_pct: 100.0 * max_b,
            delay_pmf: &dist.pmf,
            conditional_delay_pmf: dist.conditional_pmf(),
            expected_delay_slots: dist.expected_unconditional,
            expected_conditional_delay_slots: dist.expected_conditional,
            expected_delay_hours: dist.expected_unconditional_hours(),
            expected_conditional_delay_hours: dist.expected_conditional_hours(),
        },
    )
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let q = read_profile(&args.profile)?;
    let strat = solve_optimal(&q, args.phi)?;
    if strat.clamped {
        log::warn!("rate {} clamped to the critical rate {}", args.phi, strat.phi);
    }
    let cfg = SimConfig {
        warmup_cycles: args.warmup,
        discipline: args.discipline.into(),
        outflow: args.outflow.into(),
        ..SimConfig::new(strat, args.alpha, args.cycles, args.seed)
    };
    if args.compare {
        let cmp = empirical_vs_analytic(&cfg)?;
        if !cmp.flags.is_empty() {
            log::warn!("simulation disagrees with the analysis: {}", cmp.flags.join(", "));
        }
        write_json(&args.out, &cmp)
    } else {
        write_json(&args.out, &run_simulation(&cfg)?)
    }
}

#[derive(Serialize)]
struct StudySummary<'a> {
    users: usize,
    fingerprint: String,
    phi_grid: &'a [f64],
    max_phi_crit: f64,
    excluded_from_gains: &'a [String],
    files: Vec<String>,
}

fn population_study(args: StudyArgs) -> Result<()> {
    let scheme = args.scheme.scheme()?;
    let phis = grid::parse(&args.phi_grid)?;
    let users: Vec<UserProfile> = match (&args.input, args.synth) {
        (Some(path), _) => {
            let report = ingest(path, args.format.into(), scheme, &args.log.options())?;
            if !report.row_errors.is_empty() {
                log::warn!("{} malformed rows skipped", report.row_errors.len());
            }
            report.users
        }
        (None, Some(n_users)) => population::synth_population(&SynthConfig {
            n_users,
            scheme,
            concentration: args.concentration,
            mean_messages: args.mean_messages,
            periods: args.periods,
            base: None,
            seed: args.seed,
        })?,
        (None, None) => bail!("either --input or --synth is required"),
    };
    let st = population::study(&users, &phis)?;
    let mut files = st.write(&args.out_dir)?;
    files.push("summary.json".into());
    write_json(
        &args.out_dir.join("summary.json"),
        &StudySummary {
            users: users.len(),
            fingerprint: population::fingerprint(&users),
            phi_grid: &phis,
            max_phi_crit: st.max_phi_crit(),
            excluded_from_gains: &st.excluded_from_gains,
            files,
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile {
            command: ProfileCommand::Build(a),
        } => profile_build(a),
        Command::Strategy {
            command: StrategyCommand::Solve(a),
        } => strategy_solve(a),
        Command::Curve(a) => curve(a),
        Command::Buffer {
            command: BufferCommand::Analyze(a),
        } => buffer_analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Population {
            command: PopulationCommand::Study(a),
        } => population_study(a),
    }
}

fn error_json(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<deferral_core::Error>())
        .map_or("cli", deferral_core::Error::kind);
    serde_json::json!({ "error": kind, "message": format!("{err:#}") }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(2)
        }
    }
}
