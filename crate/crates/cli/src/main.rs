use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neurorescue::export::{self, ExportError};
use neurorescue::heuristic_planner::{plan_via_matrix, PlanError, PlanQuery};
use neurorescue::neural_field::ParamError;
use neurorescue::scenario::{builtin, load_scenario, ScenarioError, World};
use neurorescue::sim::{
    self, clearance_field, run_benchmark, run_rescue, run_sweep, Method, RunOptions, SimError, SweepParam, SweepSpec,
};
use neurorescue::{NeuralField, Point, ShuntingParams};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "neurorescue", version, about = "Neural-field multi-robot rescue planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one rescue mission.
    Run(RunArgs),
    /// Compare binn and flbbinn on one or more scenarios.
    Benchmark(BenchArgs),
    /// Vary one field parameter over a list of values.
    Sweep(SweepArgs),
    /// Answer a single query over a saved feature model.
    Plan(PlanArgs),
    /// Write the converged target landscape and obstacle clearance field.
    Export(ExportArgs),
}

#[derive(Args)]
struct WorldArgs {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Passive decay rate A.
    #[arg(long = "a-decay")]
    a_decay: Option<f64>,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Replace existing output files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pgm,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Binn,
    Flbbinn,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Binn => Method::Binn,
            MethodArg::Flbbinn => Method::Flbbinn,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Binn)]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save an activity snapshot of every robot's field every N ticks.
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    ticks_max: Option<u64>,
    /// Plan with a saved feature model instead of learning one.
    #[arg(long)]
    features_in: Option<PathBuf>,
    /// Save the learned feature model to this directory.
    #[arg(long)]
    features_out: Option<PathBuf>,
    /// After the last rescue, keep exploring until the feature set is complete.
    #[arg(long)]
    explore: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario files or built-in names; defaults to the built-in suite.
    #[arg(long)]
    scenario: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// A, mu or sigma.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    features_in: PathBuf,
    /// Start point "x,y"; defaults to the scenario probe.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    from: Option<Point>,
    /// Target point "x,y"; defaults to the scenario probe.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    to: Option<Point>,
    /// Obstacles as they stand at this tick.
    #[arg(long, default_value_t = 0)]
    tick: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Also re-export a saved feature model.
    #[arg(long)]
    features_in: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let f = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok(Point::new(f(x)?, f(y)?))
}

fn load_world(args: &WorldArgs) -> Result<World> {
    let path = Path::new(&args.scenario);
    let mut world = if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        load_scenario(&text).with_context(|| format!("loading {}", path.display()))?
    } else if let Some(w) = builtin(&args.scenario) {
        w
    } else {
        return Err(ExportError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or built-in scenario"),
        }
        .into());
    };
    let p = &mut world.params;
    if let Some(v) = args.sigma {
        p.sigma = v;
    }
    if let Some(v) = args.mu {
        p.mu = v;
    }
    if let Some(v) = args.a_decay {
        p.a = v;
    }
    p.validate()?;
    Ok(world)
}

fn out_dir(out: &OutArgs) -> Result<Option<&Path>> {
    if let Some(dir) = &out.out {
        std::fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    Ok(out.out.as_deref())
}

fn write_field(dir: &Path, stem: &str, field: &NeuralField, params: &ShuntingParams, out: &OutArgs) -> Result<()> {
    match out.format {
        Format::Csv => export::write_file(
            &dir.join(format!("{stem}.csv")),
            export::field_csv(field).as_bytes(),
            out.overwrite,
        )?,
        Format::Pgm => export::write_file(
            &dir.join(format!("{stem}.pgm")),
            &export::field_pgm(field, params),
            out.overwrite,
        )?,
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<u8> {
    let world = load_world(&args.world)?;
    let mut opts = RunOptions::new(args.method.into());
    opts.seed = args.seed;
    opts.ticks_max = args.ticks_max;
    opts.snapshot_every = args.snapshot_every;
    opts.explore = args.explore;
    if let Some(dir) = &args.features_in {
        if opts.method != Method::Flbbinn {
            bail!(SimError::Model("a feature model needs --method flbbinn".into()));
        }
        opts.model = Some(export::load_model(dir)?);
    }
    let outcome = run_rescue(&world, &opts)?;
    let report = serde_json::to_string_pretty(&outcome.report)?;
    emit(&report)?;
    if let Some(dir) = out_dir(&args.out)? {
        export::write_file(&dir.join("report.json"), report.as_bytes(), args.out.overwrite)?;
        export::write_file(
            &dir.join("trajectory.csv"),
            export::trajectory_csv(&outcome.trajectory).as_bytes(),
            args.out.overwrite,
        )?;
        let grid = world.env.grid;
        for s in &outcome.snapshots {
            let mut field = NeuralField::new(grid);
            for (i, &z) in s.activity.iter().enumerate() {
                field.set_activity(grid.cell_at(i), z);
            }
            write_field(
                dir,
                &format!("snapshot_t{:05}_r{}", s.tick, s.robot),
                &field,
                &world.params,
                &args.out,
            )?;
        }
    }
    if let Some(dir) = &args.features_out {
        match &outcome.model {
            Some(model) => export::save_model(dir, model, args.out.overwrite)?,
            None => eprintln!("no feature model learned; nothing written to {}", dir.display()),
        }
    }
    Ok(if outcome.report.complete { 0 } else { EXIT_INCOMPLETE })
}

fn benchmark(args: BenchArgs) -> Result<u8> {
    let names = if args.scenario.is_empty() {
        ["static", "moving", "sudden", "house_open", "house_closed"]
            .map(String::from)
            .to_vec()
    } else {
        args.scenario
    };
    let worlds = names
        .iter()
        .map(|n| {
            load_world(&WorldArgs {
                scenario: n.clone(),
                sigma: None,
                mu: None,
                a_decay: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = run_benchmark(&worlds, args.seed)?;
    let mut csv =
        String::from("scenario,method,neurons,path_length_m,steps,idle_steps,rescue_path_length_m,rescued,targets,collisions,complete");
    for r in &rows {
        csv.push_str(&format!(
            "\n{},{},{},{:.6},{},{},{:.6},{},{},{},{}",
            r.scenario,
            r.method,
            r.neurons,
            r.path_length_m,
            r.steps,
            r.idle_steps,
            r.rescue_path_length_m,
            r.rescued,
            r.targets,
            r.collisions,
            r.complete
        ));
    }
    emit(&csv)?;
    if let Some(dir) = out_dir(&args.out)? {
        export::write_file(&dir.join("benchmark.csv"), csv.as_bytes(), args.out.overwrite)?;
    }
    Ok(if rows.iter().all(|r| r.complete) { 0 } else { EXIT_INCOMPLETE })
}

fn sweep(args: SweepArgs) -> Result<u8> {
    let base = load_world(&args.world)?;
    let params = base.params;
    let spec = SweepSpec {
        param: args.param,
        values: args.values,
        base,
    };
    let entries = run_sweep(&spec, args.seed);
    let dir = out_dir(&args.out)?;
    emit("value,path_length_m,idle_steps,complete,saturated_fraction,min_clearance_cells,error")?;
    for e in &entries {
        let (len, idle, complete) = e.outcome.as_ref().map_or((f64::NAN, 0, false), |o| {
            (o.report.path_length, o.report.idle_steps, o.report.complete)
        });
        emit(&format!(
            "{},{:.6},{},{},{:.6},{},{}",
            e.value,
            len,
            idle,
            complete,
            e.saturated_fraction,
            e.min_clearance.map_or(String::new(), |c| format!("{c:.6}")),
            e.error.as_deref().unwrap_or("")
        ))?;
        if let (Some(dir), Some(field)) = (dir, &e.landscape) {
            let p = spec.param.apply(&params, e.value);
            write_field(dir, &format!("landscape_{}", e.value), field, &p, &args.out)?;
        }
    }
    Ok(0)
}

fn plan(args: PlanArgs) -> Result<u8> {
    let world = load_world(&args.world)?;
    let model = export::load_model(&args.features_in)?;
    let probe = world.probe;
    let (from, to) = match (args.from, args.to, probe) {
        (Some(a), Some(b), _) => (a, b),
        (a, b, Some((pa, pb))) => (a.unwrap_or(pa), b.unwrap_or(pb)),
        _ => bail!(SimError::NoProbe),
    };
    let grid = world.env.grid;
    let cell = |p: Point| grid.cell_of(p).ok_or(SimError::OutOfGrid);
    let blocked = world.env.occupancy_at(args.tick);
    let field = clearance_field(grid, &blocked, &world.params)?;
    let path = plan_via_matrix(&PlanQuery {
        start: cell(from)?,
        target: cell(to)?,
        features: &model.cells,
        matrix: &model.matrix,
        field: &field,
    })?;
    let csv = export::plan_csv(&path);
    emit(&csv)?;
    if let Some(dir) = out_dir(&args.out)? {
        export::write_file(&dir.join("plan.csv"), csv.as_bytes(), args.out.overwrite)?;
    }
    Ok(0)
}

fn export_cmd(args: ExportArgs) -> Result<u8> {
    let world = load_world(&args.world)?;
    let Some(dir) = out_dir(&args.out)? else {
        bail!(ExportError::Io {
            path: PathBuf::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "export needs --out"),
        });
    };
    let landscape = sim::converged_landscape(&world, &world.params)?;
    write_field(dir, "landscape", &landscape, &world.params, &args.out)?;
    let blocked = world.env.occupancy();
    let clearance = clearance_field(world.env.grid, &blocked, &world.params)?;
    write_field(dir, "clearance", &clearance, &world.params, &args.out)?;
    if let Some(src) = &args.features_in {
        export::save_model(dir, &export::load_model(src)?, args.out.overwrite)?;
    }
    Ok(0)
}

/// Validation problems exit with 2, file problems with 4.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExportError>() {
            return match e {
                ExportError::Parse { .. } | ExportError::Matrix { .. } => EXIT_VALIDATION,
                ExportError::Io { .. } | ExportError::Exists(_) => EXIT_IO,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if cause.is::<ScenarioError>() || cause.is::<ParamError>() || cause.is::<SimError>() || cause.is::<PlanError>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Sweep(a) => sweep(a),
        Command::Plan(a) => plan(a),
        Command::Export(a) => export_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
