use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcm_selector::data::{read_csv, write_csv};
use pcm_selector::error::{Error, Result};
use pcm_selector::estimators::{pcm_total_effect, CdOptions, Moments};
use pcm_selector::experiment::{
    resolve_workers, run_monte_carlo, write_outputs, ExperimentConfig, ExperimentModel, WORKERS_ENV,
};
use pcm_selector::graph::{VertexSet, DEFAULT_SEARCH_BUDGET};
use pcm_selector::methods::{self, preset, Method, MethodContext, MethodParams};
use pcm_selector::scm::{build_experiment_scm, Setting};
use pcm_selector::tuning::{cross_validate, write_cv_table, ParamGrid};
use pcm_selector::{Dag, Dataset, RoleNames};

#[derive(Parser)]
#[command(name = "pcm", version, about = "Total-effect estimation with the PCM Selector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample data from an SCM file or a built-in setting (A or B).
    Simulate {
        #[arg(long)]
        scm: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check identification criteria on a causal diagram.
    Check(CheckArgs),
    /// Estimate the total effect of x on y.
    Estimate(EstimateArgs),
    /// Choose parameters by cross-validation.
    Tune {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Write the score table here instead of standard output.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Overrides the output directory of the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// TOML file naming x, y, z, zbar, s and sbar.
    #[arg(long)]
    roles: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Edge-list file, or A / B for the built-in experiment diagrams.
    #[arg(long)]
    graph: String,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    /// Comma-separated back-door set.
    #[arg(long)]
    backdoor: Option<String>,
    /// Comma-separated mediator set.
    #[arg(long = "frontdoor-like")]
    frontdoor_like: Option<String>,
    #[arg(long, default_value = "")]
    z1: String,
    #[arg(long, default_value = "")]
    z2: String,
    #[arg(long = "minimal-mediators")]
    minimal_mediators: bool,
    /// Covariates the minimal-mediator search may condition on.
    #[arg(long, default_value = "")]
    candidates: String,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    method: Method,
    /// TOML table overriding the preset parameters.
    #[arg(long, conflicts_with = "cv")]
    params: Option<PathBuf>,
    /// Choose parameters by cross-validation first.
    #[arg(long)]
    cv: bool,
    #[arg(long, requires = "cv")]
    grid: Option<PathBuf>,
    /// Setting whose presets to start from.
    #[arg(long, default_value = "A")]
    preset: Setting,
    /// Causal diagram (edge list) for the minimal front-door search.
    #[arg(long)]
    graph: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { scm, n, seed, out } => simulate(&scm, n, seed, &out),
        Command::Check(args) => check(&args),
        Command::Estimate(args) => estimate(&args),
        Command::Tune {
            input,
            method,
            grid,
            table,
        } => tune(&input, method, grid.as_deref(), table.as_deref()),
        Command::Experiment {
            config,
            workers,
            output,
        } => experiment(&config, workers, output),
    }
}

fn simulate(scm: &str, n: usize, seed: u64, out: &Path) -> Result<()> {
    let (setting, file) = match scm.parse::<Setting>() {
        Ok(s) => (Some(s), None),
        Err(_) => (None, Some(PathBuf::from(scm))),
    };
    let config = ExperimentConfig {
        setting,
        scm: file,
        n,
        replications: 1,
        seed,
        output: PathBuf::new(),
        workers: None,
        methods: Vec::new(),
    };
    let model = ExperimentModel::build(&config)?;
    let raw = model.sample_raw(n, seed, 1)?;
    write_csv(fs::File::create(out)?, &model.names, &raw)?;
    println!("wrote {n} rows to {} (true total effect {})", out.display(), model.tau);
    Ok(())
}

fn names_to_set(dag: &Dag, list: &str) -> Result<VertexSet> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| dag.vertex(s))
        .collect()
}

fn set_text(dag: &Dag, set: &VertexSet) -> String {
    let names: Vec<&str> = set.iter().map(|&v| dag.name(v)).collect();
    format!("{{{}}}", names.join(", "))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "satisfied"
    } else {
        "not satisfied"
    }
}

fn load_graph(spec: &str) -> Result<Dag> {
    match spec.parse::<Setting>() {
        Ok(setting) => {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            Ok(build_experiment_scm(setting, &mut rng)?.causal_diagram())
        }
        Err(_) => Dag::parse_edge_list(&fs::read_to_string(spec)?),
    }
}

fn check(args: &CheckArgs) -> Result<()> {
    let dag = load_graph(&args.graph)?;
    let x = dag.vertex(&args.x)?;
    let y = dag.vertex(&args.y)?;
    let mut any = false;
    if let Some(z) = &args.backdoor {
        any = true;
        let z = names_to_set(&dag, z)?;
        println!("back-door: {}", verdict(dag.satisfies_back_door(x, y, &z)?));
    }
    if let Some(s) = &args.frontdoor_like {
        any = true;
        let s = names_to_set(&dag, s)?;
        let z1 = names_to_set(&dag, &args.z1)?;
        let z2 = names_to_set(&dag, &args.z2)?;
        println!(
            "front-door-like: {}",
            verdict(dag.satisfies_front_door_like(x, y, &s, &z1, &z2)?)
        );
    }
    if args.minimal_mediators {
        any = true;
        let candidates = names_to_set(&dag, &args.candidates)?;
        let sets = dag.minimal_mediator_sets(x, y, &candidates, DEFAULT_SEARCH_BUDGET)?;
        if sets.is_empty() {
            println!("minimal mediator sets: none");
        }
        for m in &sets {
            println!(
                "minimal mediator set: {} z1={} z2={}",
                set_text(&dag, &m.mediators),
                set_text(&dag, &m.z1),
                set_text(&dag, &m.z2)
            );
        }
    }
    if !any {
        return Err(Error::ConfigInvalid(
            "nothing to check: give --backdoor, --frontdoor-like or --minimal-mediators".into(),
        ));
    }
    Ok(())
}

fn load_input(input: &InputArgs) -> Result<(Dataset, pcm_selector::RolePartition)> {
    let (names, raw) = read_csv(fs::File::open(&input.data)?)?;
    let data = Dataset::from_raw(names, &raw)?;
    let roles: RoleNames = toml::from_str(&fs::read_to_string(&input.roles)?)
        .map_err(|e| Error::ConfigInvalid(format!("roles: {e}")))?;
    let roles = roles.resolve(data.names())?;
    Ok((data, roles))
}

fn load_grid(path: Option<&Path>) -> Result<ParamGrid> {
    match path {
        Some(p) => ParamGrid::parse(&fs::read_to_string(p)?),
        None => Ok(ParamGrid::default()),
    }
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let (data, roles) = load_input(&args.input)?;
    let options = CdOptions::default();
    let params = if args.cv {
        cross_validate(&data, &roles, args.method, &load_grid(args.grid.as_deref())?, &options)?.params
    } else {
        let base = preset(args.method, args.preset);
        match &args.params {
            Some(p) => {
                let over: toml::Table = toml::from_str(&fs::read_to_string(p)?)
                    .map_err(|e| Error::ConfigInvalid(format!("params: {e}")))?;
                base.with_overrides(&over, args.method)?
            }
            None => base,
        }
    };
    let moments = Moments::new(data.matrix());
    if let MethodParams::Pcm(p) = &params {
        let fit = pcm_total_effect(&moments, &roles, p, &options)?;
        println!("estimate: {}", fit.tau_hat);
        let doc = serde_json::to_string_pretty(&fit.to_json(&roles, data.names()))
            .expect("fit documents serialize");
        println!("{doc}");
        return Ok(());
    }
    let minimal = match (&args.graph, args.method) {
        (Some(g), Method::FrontDoorMinimal) => {
            let dag = Dag::parse_edge_list(&fs::read_to_string(g)?)?;
            Some(minimal_from_graph(&dag, &data, &roles)?)
        }
        _ => None,
    };
    let ctx = MethodContext {
        names: data.names(),
        minimal_mediators: minimal.as_deref(),
    };
    let value = methods::estimate(args.method, &params, &moments, &roles, &ctx, &options)?;
    println!("estimate: {value}");
    Ok(())
}

fn minimal_from_graph(dag: &Dag, data: &Dataset, roles: &pcm_selector::RolePartition) -> Result<Vec<usize>> {
    let to_dag = |c: usize| dag.vertex(&data.names()[c]);
    let candidates: VertexSet = roles.c().into_iter().map(to_dag).collect::<Result<_>>()?;
    let sets = dag.minimal_mediator_sets(to_dag(roles.x)?, to_dag(roles.y)?, &candidates, DEFAULT_SEARCH_BUDGET)?;
    let best = sets
        .iter()
        .filter(|s| s.z1.is_empty() && s.z2.is_empty())
        .min_by_key(|s| s.mediators.len())
        .ok_or_else(|| Error::ConfigInvalid("the graph has no front-door mediator set".into()))?;
    let wanted: BTreeSet<&str> = best.mediators.iter().map(|&v| dag.name(v)).collect();
    wanted.into_iter().map(|n| data.column(n)).collect()
}

fn tune(input: &InputArgs, method: Method, grid: Option<&Path>, table: Option<&Path>) -> Result<()> {
    let (data, roles) = load_input(input)?;
    let result = cross_validate(&data, &roles, method, &load_grid(grid)?, &CdOptions::default())?;
    println!("# chosen parameters for {method}");
    print!("{}", toml::to_string(&result.params.to_table()).expect("plain table"));
    match table {
        Some(path) => write_cv_table(fs::File::create(path)?, &result.table)?,
        None => {
            println!();
            write_cv_table(io::stdout().lock(), &result.table)?;
        }
    }
    Ok(())
}

fn experiment(config: &Path, workers: Option<usize>, output: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    let workers = resolve_workers(workers.or(cfg.workers))?;
    let result = run_monte_carlo(&cfg, workers)?;
    write_outputs(&cfg.output, &cfg, &result)?;
    let mut out = io::stdout().lock();
    writeln!(out, "true total effect: {}", result.tau)?;
    writeln!(out, "{:<34} {:>8} {:>8} {:>8} {:>6} {:>8}", "method", "mean", "sd", "bias", "sign", "failures")?;
    for row in &result.summary {
        match row.stats {
            Some(s) => writeln!(
                out,
                "{:<34} {:>8.3} {:>8.3} {:>8.3} {:>6.3} {:>8}",
                row.method.label(),
                s.mean,
                s.sd,
                s.bias,
                s.sign,
                row.failures
            )?,
            None => writeln!(out, "{:<34} {:>8} {:>8} {:>8} {:>6} {:>8}", row.method.label(), "-", "-", "-", "-", row.failures)?,
        }
    }
    writeln!(out, "wrote {}", cfg.output.display())?;
    Ok(())
}
