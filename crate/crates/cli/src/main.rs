//! `cfn`: scenario generation, training, benchmarking and planning dumps.
//!
//! Exit codes: 0 success, 1 unexpected, 2 configuration or usage,
//! 3 I/O or file format, 4 simulation or planning, 5 training divergence.

mod render;

use anyhow::{bail, Context, Result};
use cfn_core::config::{load_benchmark, RunConfig};
use cfn_core::eval::{
    compute_metrics, family_csv, load_traces, metrics_csv, run_benchmark, write_charts,
    write_traces, AgentPolicy, Metrics, PolicyKind,
};
use cfn_core::hybrid::{rulebook_candidates, Tracker};
use cfn_core::risk::RiskScene;
use cfn_core::rulebook::select_path;
use cfn_core::sac::{load_checkpoint, save_checkpoint, train, Learner, Networks, TrainParams};
use cfn_core::world::{
    detect_events, episode_rng, generate_scenarios, BenchmarkConfig, EventKind, Policy, Scenario, ScenarioFamily,
    SpeedAction, WorldState,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "cfn", version, about = "Collision-free navigation among crossing pedestrians")]
struct Cli {
    /// Run configuration (TOML, format = 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a benchmark scenario file and one file per family.
    GenerateScenarios(GenerateArgs),
    /// Train the speed policy by interposed learning.
    Train(TrainArgs),
    /// Run benchmark policies and write metrics, traces and charts.
    Evaluate(EvaluateArgs),
    /// Show the candidate paths (and optionally speed values) at one moment of a scenario.
    Plan(PlanArgs),
    /// Recompute metrics and charts from stored traces.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenarioSource {
    /// Scenario file or directory of family files; overrides the config.
    #[arg(long)]
    scenarios: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Twelve families on a 50 x 50 grid (30,000 scenes).
    #[arg(long, conflicts_with_all = ["families", "speeds", "distances"])]
    full_scale: bool,
    /// Comma-separated family names (default: all).
    #[arg(long, value_delimiter = ',')]
    families: Vec<String>,
    /// Pedestrian speeds (m/s).
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 1.2, 1.5, 1.8])]
    speeds: Vec<f64>,
    /// Crossing distances from the car start (m).
    #[arg(long, value_delimiter = ',', default_values_t = [26.0, 30.0, 34.0, 38.0])]
    distances: Vec<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Overrides train.steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from these weights.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Learner weights; required for hylear and learner-only.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated policies (default: from config).
    #[arg(long, value_delimiter = ',')]
    policies: Vec<String>,
    /// Disable wall-clock decision timing (fully reproducible output).
    #[arg(long)]
    no_timing: bool,
    /// Run episodes on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Scenario id or index into the benchmark.
    #[arg(long, default_value = "0")]
    scenario: String,
    /// Simulated time (s) to advance before planning.
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    /// Policy driving the car up to --time.
    #[arg(long, default_value = "always-accelerate")]
    policy: String,
    /// Learner weights, for --policy hylear or learner-only.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write each cost map as PGM plus metadata.
    #[arg(long)]
    dump_maps: bool,
    /// Also run the speed planner and print its root action values.
    #[arg(long)]
    speed: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory with one trace subdirectory per policy (default: <out>/traces).
    #[arg(long)]
    traces: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<cfn_core::Error>())
                .map_or(1, cfn_core::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    cfn_core::Error::Config(msg.into()).into()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&cli.out).map_err(cfn_core::Error::from)?;
    match cli.command {
        Command::GenerateScenarios(a) => generate(&cfg, &cli.out, a),
        Command::Train(a) => train_cmd(cfg, &cli.out, a),
        Command::Evaluate(a) => evaluate(cfg, &cli.out, a),
        Command::Plan(a) => plan(&cfg, &cli.out, a),
        Command::Report(a) => report(&cfg, &cli.out, a),
    }
}

fn parse_families(names: &[String]) -> Result<Vec<ScenarioFamily>> {
    if names.is_empty() {
        return Ok(ScenarioFamily::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| ScenarioFamily::from_name(n).ok_or_else(|| config_error(format!("unknown scenario family {n:?}"))))
        .collect()
}

fn parse_policies(names: &[String]) -> Result<Vec<PolicyKind>> {
    names
        .iter()
        .map(|n| PolicyKind::from_name(n).ok_or_else(|| config_error(format!("unknown policy {n:?}"))))
        .collect()
}

/// Scenario source: flag, then config, then the default grid under the run seed.
fn benchmark(cfg: &RunConfig, source: &ScenarioSource) -> Result<Vec<Scenario>> {
    let bench = match source.scenarios.as_ref().or(cfg.scenarios.as_ref()) {
        Some(p) => load_benchmark(p).with_context(|| format!("loading scenarios from {}", p.display()))?,
        None => BenchmarkConfig::uniform(cfg.seed, &[0.9, 1.2, 1.5, 1.8], &[26.0, 30.0, 34.0, 38.0]),
    };
    Ok(generate_scenarios(&bench)?)
}

fn read_checkpoint(path: &Path) -> Result<Networks> {
    let f = fs::File::open(path).map_err(cfn_core::Error::from).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_checkpoint(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?)
}

fn write_checkpoint(path: &Path, nets: &Networks) -> cfn_core::Result<()> {
    let mut buf = vec![];
    save_checkpoint(nets, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(cfn_core::Error::from)?;
    }
    fs::write(path, text).map_err(cfn_core::Error::from).with_context(|| format!("writing {}", path.display()))
}

fn generate(cfg: &RunConfig, out: &Path, a: GenerateArgs) -> Result<()> {
    let bench = if a.full_scale {
        BenchmarkConfig::full_scale(cfg.seed)
    } else {
        BenchmarkConfig::for_families(&parse_families(&a.families)?, cfg.seed, &a.speeds, &a.distances)
    };
    let scenarios = generate_scenarios(&bench)?;
    let path = out.join("scenarios.toml");
    bench.save(&path)?;
    for f in bench.family_files() {
        write(&out.join("scenarios").join(format!("{}.toml", f.grid.family.name())), &f.to_toml()?)?;
    }
    println!(
        "{} scenarios in {} families, base seed {} -> {}",
        scenarios.len(),
        bench.families.len(),
        bench.base_seed,
        path.display()
    );
    Ok(())
}

fn train_cmd(mut cfg: RunConfig, out: &Path, a: TrainArgs) -> Result<()> {
    let scenarios = benchmark(&cfg, &a.source)?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = match &a.init {
        Some(p) => Learner::from_networks(read_checkpoint(p)?, cfg.sac.clone()),
        None => Learner::new(cfg.sac.clone(), &mut rng)?,
    };
    write(&out.join("run.toml"), &cfg.to_toml()?)?;
    let dir = out.join("checkpoints");
    fs::create_dir_all(&dir).map_err(cfn_core::Error::from)?;
    let started = Instant::now();
    let params: &TrainParams = &cfg.train;
    let report = train(&mut learner, &scenarios, &cfg.agent, params, &mut |step, nets| {
        write_checkpoint(&dir.join(format!("step_{step:07}.ckpt")), nets)?;
        eprintln!("step {step}: checkpoint ({:.0} s)", started.elapsed().as_secs_f64());
        Ok(())
    })?;
    let final_path = out.join("policy.ckpt");
    write_checkpoint(&final_path, &learner.nets)?;
    write(&out.join("train.csv"), &report.to_csv())?;
    let goals = report.rows.iter().filter(|r| r.outcome == "goal").count();
    let crashes = report.rows.iter().filter(|r| r.outcome == "crash").count();
    println!(
        "{} steps, {} updates, {} episodes ({goals} goal, {crashes} crash) in {:.1} s -> {}",
        report.steps,
        report.updates,
        report.rows.len(),
        started.elapsed().as_secs_f64(),
        final_path.display()
    );
    Ok(())
}

fn write_results(out: &Path, rows: &[(String, &Metrics)]) -> Result<String> {
    let csv = metrics_csv(rows);
    write(&out.join("metrics.csv"), &csv)?;
    write(&out.join("families.csv"), &family_csv(rows))?;
    write_charts(&out.join("charts"), rows)?;
    Ok(csv)
}

fn evaluate(mut cfg: RunConfig, out: &Path, a: EvaluateArgs) -> Result<()> {
    let scenarios = benchmark(&cfg, &a.source)?;
    if !a.policies.is_empty() {
        cfg.eval.policies = parse_policies(&a.policies)?;
    }
    if a.no_timing {
        cfg.eval.time_decisions = false;
    }
    if a.sequential {
        cfg.eval.parallel = false;
    }
    let nets = match a.checkpoint.as_ref().or(cfg.checkpoint.as_ref()) {
        Some(p) => Some(Arc::new(read_checkpoint(p)?)),
        None => None,
    };
    let results = run_benchmark(&scenarios, &cfg.agent, nets, &cfg.eval)?;
    for r in &results {
        write_traces(&out.join("traces").join(r.kind.name()), &r.traces)?;
    }
    let rows: Vec<(String, &Metrics)> = results.iter().map(|r| (r.kind.name().to_string(), &r.metrics)).collect();
    print!("{}", write_results(out, &rows)?);
    Ok(())
}

fn report(cfg: &RunConfig, out: &Path, a: ReportArgs) -> Result<()> {
    let root = a.traces.unwrap_or_else(|| out.join("traces"));
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(cfn_core::Error::from)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    dirs.sort_by_key(|p| {
        let n = name(p);
        (PolicyKind::from_name(&n).map_or(usize::MAX, |k| k as usize), n)
    });
    if dirs.is_empty() {
        bail!(config_error(format!("no policy trace directories under {}", root.display())));
    }
    let mut computed = vec![];
    for d in &dirs {
        let traces = load_traces(d)?;
        let mut families: Vec<ScenarioFamily> = traces.iter().map(|t| t.family).collect();
        families.sort();
        families.dedup();
        computed.push((name(d), compute_metrics(&traces, &families, &cfg.eval.metrics)?));
    }
    let rows: Vec<(String, &Metrics)> = computed.iter().map(|(n, m)| (n.clone(), m)).collect();
    print!("{}", write_results(out, &rows)?);
    Ok(())
}

fn plan(cfg: &RunConfig, out: &Path, a: PlanArgs) -> Result<()> {
    let scenarios = benchmark(cfg, &a.source)?;
    let scenario = match a.scenario.parse::<usize>() {
        Ok(i) => scenarios.get(i),
        Err(_) => scenarios.iter().find(|s| s.id == a.scenario),
    }
    .ok_or_else(|| config_error(format!("no scenario {:?} among {}", a.scenario, scenarios.len())))?;
    let kind = parse_policies(std::slice::from_ref(&a.policy))?[0];
    let nets = match &a.checkpoint {
        Some(p) => Some(Arc::new(read_checkpoint(p)?)),
        None => None,
    };
    let agent = Arc::new(cfg.agent.clone());
    let mut driver = AgentPolicy::new(kind, agent.clone(), nets)?;
    driver.reset(scenario);

    let mut rng = episode_rng(scenario);
    let mut world = WorldState::initial(scenario);
    let steps = (a.time / agent.sim.dt).round() as usize;
    for _ in 0..steps {
        let d = driver.decide(&world.observe()).map_err(|message| cfn_core::Error::Policy { time: world.time, message })?;
        world = world.step(&d.action, &agent.sim, &mut rng);
        let ev = detect_events(&world, &agent.sim);
        if ev.contains(&EventKind::Crash) || ev.contains(&EventKind::Goal) {
            println!("episode ended ({ev:?}) at t={:.1} s", world.time);
            break;
        }
    }

    let obs = world.observe();
    println!(
        "{} t={:.1} s car=({:.2}, {:.2}) heading={:.3} speed={:.2} m/s, {} visible pedestrians",
        scenario.id,
        obs.time,
        obs.car.pose.x,
        obs.car.pose.y,
        obs.car.pose.heading,
        obs.car.speed,
        obs.pedestrians.len()
    );
    let maps = cfn_core::costmap::PlanningMaps::build(&obs, &agent.cost)?;
    let candidates = rulebook_candidates(&obs, &maps, &agent);
    let selected = select_path(&candidates, &agent.rulebook)
        .and_then(|c| candidates.iter().position(|x| std::ptr::eq(x, c)));
    println!("map         poses  length_m  cost      risk_mean  risk_max  violations [sidewalk_m, risk_excess, lane_dev, length]");
    for (k, c) in candidates.iter().enumerate() {
        let v = c.violations;
        println!(
            "{:<11} {:>5}  {:>8.2}  {:>8.2}  {:>9.4}  {:>8.4}  [{:.3}, {:.4}, {:.3}, {:.2}]{}",
            c.path.source_map.name(),
            c.path.poses.len(),
            c.path.length,
            c.path.total_cost,
            c.risk.mean,
            c.risk.aggregate,
            v.sidewalk_meters,
            v.risk_excess,
            v.lane_deviation,
            v.path_length,
            if selected == Some(k) { "  <- selected" } else { "" }
        );
    }
    if candidates.is_empty() {
        println!("no feasible path on any map");
    }

    if a.speed {
        let mut tracker = Tracker::new(&obs, &agent);
        tracker.observe(&obs, &agent);
        tracker.replan(&obs, kind.path_mode(), &agent)?;
        let t = Instant::now();
        let p = tracker.plan_speed(&obs, &agent.speed, &agent, scenario.seed);
        let ms = t.elapsed().as_secs_f64() * 1e3;
        for action in SpeedAction::ALL {
            println!(
                "{:<11} {:>10.3}{}",
                format!("{action:?}"),
                p.values[action.index()],
                if action == p.action { "  <- chosen" } else { "" }
            );
        }
        println!("{} expansions, {ms:.1} ms", p.expansions);
    }

    let dir = out.join("maps");
    fs::create_dir_all(&dir).map_err(cfn_core::Error::from)?;
    if a.dump_maps {
        for kind in cfn_core::costmap::MapKind::ALL {
            let m = maps.get(kind);
            let mut buf = vec![];
            m.write_pgm(&mut buf)?;
            fs::write(dir.join(format!("{}.pgm", kind.name())), buf).map_err(cfn_core::Error::from)?;
            write(&dir.join(format!("{}.txt", kind.name())), &m.pgm_metadata(kind))?;
        }
    }
    let scene = RiskScene::from_observation(&obs, &maps.prediction, (agent.sim.car_length, agent.sim.car_width), &agent.risk);
    let svg = render::Overlay {
        map: &maps.predictive,
        obs: &obs,
        candidates: &candidates,
        selected,
        scene: &scene,
        risk: &agent.risk,
        sim: &agent.sim,
    }
    .svg();
    let path = dir.join("overlay.svg");
    write(&path, &svg)?;
    println!("overlay -> {}", path.display());
    Ok(())
}
