//! `softpeg`: run single trials, benchmark suites, replay logs and render images.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use softpeg::bench::{
    emit_reports, make_backend, metrics_json, run_suite, trial_scene, write_plot_data, BenchConfig, Condition,
    RecoveryMode, SuiteMetrics, DEFAULT_SEED,
};
use softpeg::executor::{goal_image, Executor, TaskContext};
use softpeg::perception::{render_pose, RasterImage};
use softpeg::recovery::{RemoteConfig, TOKEN_ENV, URL_ENV};
use softpeg::scene::{default_scenario_file, PegShape, Scenario};
use softpeg::trial_log::{read_trial_log, replay_file, write_trial_log, TrialHeader};

#[derive(Parser)]
#[command(name = "softpeg", version, about = "Soft-wrist peg-in-hole simulator and benchmark")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print its outcome as JSON.
    Run(RunArgs),
    /// Run seeded suites and write reports.
    Bench(BenchArgs),
    /// Re-execute a logged trial and compare it line by line with the log.
    Replay {
        /// Trial log (JSONL) written by `run` or `bench`.
        log: PathBuf,
    },
    /// Write PNG images of the states recorded in a trial log.
    Render(RenderArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file; the built-in default when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// off, rule or remote.
    #[arg(long, default_value = "rule")]
    recovery: RecoveryMode,
    /// Remote planner endpoint, for `--recovery remote`.
    #[arg(long, env = URL_ENV)]
    planner_url: Option<String>,
    /// Planner request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    planner_timeout: u64,
    /// Where planner request/response pairs are appended.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Directory for per-trial JSONL logs.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// circular, square or rectangular.
    #[arg(long, default_value = "circular")]
    shape: PegShape,
    /// none, friction, pose or all.
    #[arg(long, default_value = "none")]
    condition: Condition,
    /// Directory for a PNG of every executed skill's terminal state.
    #[arg(long)]
    dump_images: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Repeat to run several shapes.
    #[arg(long, default_value = "circular")]
    shape: Vec<PegShape>,
    /// Repeat to run several conditions.
    #[arg(long, default_value = "all")]
    condition: Vec<Condition>,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    /// Report directory; each suite gets its own subdirectory when several run.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Only this execution (0-based); every execution when absent.
    #[arg(long)]
    execution: Option<usize>,
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("loading scenario {}", p.display())),
        None => Ok(default_scenario_file()),
    }
}

fn remote_config(c: &Common, fallback_dir: Option<&Path>) -> Option<RemoteConfig> {
    if c.recovery != RecoveryMode::Remote {
        return None;
    }
    let mut cfg = RemoteConfig::new(c.planner_url.clone()?);
    cfg.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    cfg.timeout = Duration::from_secs(c.planner_timeout);
    cfg.transcript = c
        .transcript
        .clone()
        .or_else(|| fallback_dir.map(|d| d.join("planner_transcript.jsonl")));
    Some(cfg)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_png(image: &RasterImage, path: &Path) -> Result<()> {
    let bytes = image.to_png().with_context(|| format!("encoding {}", path.display()))?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let c = &args.common;
    let scenario = load_scenario(c.config.as_deref())?;
    let mut cfg = BenchConfig::new(args.condition, args.shape, c.recovery);
    cfg.seed = c.seed;
    let (scene, draws) = trial_scene(&scenario, &cfg, c.seed);
    let remote = remote_config(c, c.log_dir.as_deref());
    if c.recovery == RecoveryMode::Remote && remote.is_none() {
        log::warn!("no planner URL (--planner-url or {URL_ENV}); using rules");
    }
    let backend = make_backend(c.recovery, remote.as_ref());
    let id = format!("{}-{}-{}-seed{}", args.shape, args.condition, c.recovery, c.seed);
    let mut exec = Executor::new(&scenario, scene).keep_images(args.dump_images.is_some());
    if let Some(b) = backend.as_deref() {
        exec = exec.with_recovery(b);
    }
    let mut ctx = TaskContext::new(&id, c.seed, &scenario);
    let result = exec.run_task(&mut ctx);
    if let Some(dir) = &c.log_dir {
        let header = TrialHeader::new(&id, 0, c.seed, &cfg, &scenario, scene);
        let path = dir.join(format!("{id}.jsonl"));
        write_trial_log(&path, &header, &result).with_context(|| format!("writing {}", path.display()))?;
        log::info!("log written to {}", path.display());
    }
    if let Some(dir) = &args.dump_images {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_png(&exec.goal_image, &dir.join("goal.png"))?;
        for (i, r) in ctx.history.iter().enumerate() {
            if let Some(img) = &r.terminal_image {
                write_png(img, &dir.join(format!("{i:03}_{}.png", r.cf)))?;
            }
        }
    }
    let summary = match &result {
        Ok(rec) => serde_json::json!({"trial_id": id, "seed": c.seed, "draws": draws, "outcome": rec.outcome}),
        Err(e) => serde_json::json!({"trial_id": id, "seed": c.seed, "draws": draws, "aborted": e.to_string()}),
    };
    emit(&format!("{}\n", serde_json::to_string_pretty(&summary)?))
}

fn bench(args: BenchArgs) -> Result<()> {
    let c = &args.common;
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let scenario = load_scenario(c.config.as_deref())?;
    let many = args.shape.len() * args.condition.len() > 1;
    let mut all: Vec<SuiteMetrics> = Vec::new();
    for &shape in &args.shape {
        for &condition in &args.condition {
            let mut cfg = BenchConfig::new(condition, shape, c.recovery);
            cfg.trials = args.trials;
            cfg.seed = c.seed;
            let name = format!("{shape}-{condition}-{}", c.recovery);
            let out = args.out.as_ref().map(|o| if many { o.join(&name) } else { o.clone() });
            cfg.log_dir = c.log_dir.as_ref().map(|d| if many { d.join(&name) } else { d.clone() });
            cfg.remote = remote_config(c, out.as_deref().or(cfg.log_dir.as_deref()));
            let result = run_suite(&scenario, &cfg).with_context(|| format!("suite {name}"))?;
            let m = &result.metrics;
            eprintln!(
                "{name}: F {:.1}% G {:.1}% aborts {} timeouts {} fallbacks {}",
                m.success_f, m.success_g, m.abort_count, m.timeout_count, m.fallback_count
            );
            match &out {
                Some(dir) => {
                    let paths = emit_reports(&result, dir)?;
                    log::info!("reports in {}", paths.metrics.parent().unwrap_or(dir).display());
                }
                None => emit(&metrics_json(m))?,
            }
            all.push(result.metrics);
        }
    }
    if let (true, Some(out)) = (many, &args.out) {
        write_plot_data(&all, &out.join("success_rates.dat"))?;
    }
    Ok(())
}

fn replay(log: &Path) -> Result<()> {
    let report = replay_file(log)?;
    match report.mismatch {
        None => {
            emit(&format!("identical: {} lines\n", report.lines_compared))
        }
        Some((line, logged, fresh)) => {
            eprintln!("line {line} differs\n  logged: {logged}\n  replay: {fresh}");
            bail!("replay of {} diverged at line {line}", log.display())
        }
    }
}

fn render(args: RenderArgs) -> Result<()> {
    let log = read_trial_log(&args.log)?;
    let scenario = &log.header.scenario;
    let skills: Vec<_> = log.skills().collect();
    if let Some(i) = args.execution {
        if i >= skills.len() {
            bail!("{} has {} executions, no execution {i}", args.log.display(), skills.len());
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_png(&goal_image(scenario, &scenario.scene), &args.out.join("goal.png"))?;
    for (i, r) in skills.iter().enumerate() {
        if args.execution.is_some_and(|e| e != i) {
            continue;
        }
        let img = render_pose(&scenario.scene, r.terminal_pose, r.deflection, &scenario.camera);
        let path = args.out.join(format!("{i:03}_{}.png", r.cf));
        write_png(&img, &path)?;
        emit(&format!("{}\n", path.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Replay { log } => replay(&log),
        Command::Render(a) => render(a),
    }
}
