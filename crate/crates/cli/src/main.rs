use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use panelbreak::dgp::{self, DeltaLaw, ErrorModel, FactorDynamics, FactorSpec, LoadingRule};
use panelbreak::harness::{self, ExperimentConfig, OutputFormat, Scale};
use panelbreak::limitdist::{CritKey, CritSettings, CritStore, GridSpec, DEFAULT_GRID, DEFAULT_PATHS, DEFAULT_SEED};
use panelbreak::panel::{load_panel, Layout, PanelMatrix};
use panelbreak::{run_test, BootstrapConfig, Calibration, Estimator, Functional, SchemeKind, TestOutcome, TestSpec};

#[derive(Parser)]
#[command(name = "panelbreak", version, about = "Tests for a break in the cross-sectional mean of panel data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and write it as CSV.
    Simulate(SimulateArgs),
    /// Run one test with asymptotic or bootstrap calibration.
    Test(TestArgs),
    /// Run one test calibrated by the factor-model wild bootstrap.
    BootstrapTest(TestArgs),
    /// Simulate (or load from the cache) critical-value tables.
    Critvals(CritvalsArgs),
    /// Run a Monte Carlo experiment from a config file.
    Montecarlo(MontecarloArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ar1,
    Arma21,
}

#[derive(Clone, Copy, ValueEnum)]
enum FactorArg {
    None,
    Weak,
    Strong,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibrationArg {
    Asymptotic,
    Bootstrap,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "ar1")]
    model: ModelArg,
    /// AR coefficient for `--model ar1`.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(short = 'n', long = "panels")]
    n_panels: usize,
    #[arg(short = 't', long = "time")]
    n_time: usize,
    /// Break fraction; the break happens after `floor(theta*T)`.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// `none`, `uniform:<low>,<high>` or `constant:<value>`.
    #[arg(long, default_value = "none")]
    delta_law: String,
    /// Share of panels that break.
    #[arg(long, default_value_t = 0.5)]
    change_fraction: f64,
    /// Loading rule for common factors.
    #[arg(long, value_enum, default_value = "none")]
    lambda_rule: FactorArg,
    /// Number of factors when a loading rule is set.
    #[arg(short = 'p', long, default_value_t = 1)]
    factors: usize,
    #[arg(long, default_value_t = dgp::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_parser = parse_layout, default_value = "rows")]
    layout: Layout,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CritArgs {
    /// Directory of cached critical-value tables.
    #[arg(long, env = "PANELBREAK_CRIT_DIR")]
    crit_dir: Option<PathBuf>,
    /// Interior grid points of the simulated limit process.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    crit_seed: u64,
}

impl CritArgs {
    fn settings(&self) -> CritSettings {
        CritSettings {
            grid: self.grid,
            n_paths: self.paths,
            seed: self.crit_seed,
        }
    }

    fn store(&self) -> CritStore {
        match &self.crit_dir {
            Some(dir) => CritStore::with_dir(dir),
            None => CritStore::in_memory(),
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// CSV panel file.
    input: PathBuf,
    #[arg(long, value_parser = parse_layout, default_value = "rows")]
    layout: Layout,
    /// `ols`, `wls`, `tau:<v>` or `custom:<w1;w2;...>`; repeat for several tests.
    #[arg(long = "weights", value_parser = parse_scheme, default_value = "ols")]
    weights: Vec<SchemeKind>,
    #[arg(long, value_parser = parse_estimator, default_value = "hat")]
    estimator: Estimator,
    #[arg(long, value_parser = parse_functional, default_value = "sup")]
    functional: Functional,
    #[arg(long, value_enum, default_value = "asymptotic")]
    calibration: CalibrationArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bootstrap replications.
    #[arg(long, default_value_t = panelbreak::bootstrap::DEFAULT_REPS)]
    reps: usize,
    /// Largest number of factors considered by the bootstrap.
    #[arg(long)]
    pmax: Option<usize>,
    /// Bartlett bandwidth for the factor long-run covariance.
    #[arg(long)]
    hac_bandwidth: Option<usize>,
    #[command(flatten)]
    crit: CritArgs,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
}

#[derive(Args)]
struct CritvalsArgs {
    /// `ols`, `wls`, `tau:<v>` or `custom:<w1;...>`; repeatable.
    #[arg(long = "weights", value_parser = parse_scheme, default_value = "ols")]
    weights: Vec<SchemeKind>,
    /// Restrict to one functional; both are produced otherwise.
    #[arg(long, value_parser = parse_functional)]
    functional: Option<Functional>,
    /// Sample size, needed for custom weights.
    #[arg(long)]
    time: Option<usize>,
    #[command(flatten)]
    crit: CritArgs,
}

#[derive(Args)]
struct MontecarloArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_scale, default_value = "desk")]
    scale: Scale,
    /// Output directory; defaults to the config's `output` or `results/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated list of `text`, `json`, `csv`.
    #[arg(long, value_delimiter = ',', value_parser = parse_format, default_value = "text,json,csv")]
    formats: Vec<OutputFormat>,
    /// Worker threads; all cores by default.
    #[arg(long, env = "PANELBREAK_THREADS")]
    threads: Option<usize>,
    /// Directory of cached critical-value tables.
    #[arg(long, env = "PANELBREAK_CRIT_DIR")]
    crit_dir: Option<PathBuf>,
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    s.parse().map_err(|e: panelbreak::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    s.parse().map_err(|e: panelbreak::Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: panelbreak::Error| e.to_string())
}

fn parse_functional(s: &str) -> Result<Functional, String> {
    s.parse().map_err(|e: panelbreak::Error| e.to_string())
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse().map_err(|e: panelbreak::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: panelbreak::Error| e.to_string())
}

fn parse_delta_law(s: &str) -> Result<DeltaLaw> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "none" => Ok(DeltaLaw::None),
        "constant" => Ok(DeltaLaw::Constant {
            value: rest.parse().with_context(|| format!("bad constant break '{rest}'"))?,
        }),
        "uniform" => {
            let (a, b) = rest
                .split_once(',')
                .with_context(|| format!("uniform law needs 'uniform:<low>,<high>', got '{s}'"))?;
            Ok(DeltaLaw::Uniform {
                low: a.trim().parse()?,
                high: b.trim().parse()?,
            })
        }
        other => bail!("unknown break law '{other}'"),
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let model = match args.model {
        ModelArg::Ar1 => ErrorModel::Ar1 { rho: args.rho },
        ModelArg::Arma21 => ErrorModel::Arma21,
    };
    let law = parse_delta_law(&args.delta_law)?;
    let seed = |k: u64| panelbreak::rng::derive(args.seed, &[k]);
    let mut panel = dgp::gen_errors(model, args.n_panels, args.n_time, args.burn_in, seed(0))?;
    let loadings = match args.lambda_rule {
        FactorArg::None => None,
        FactorArg::Weak => Some(LoadingRule::weak(args.n_panels)),
        FactorArg::Strong => Some(LoadingRule::strong(args.n_panels)),
    };
    if let Some(loadings) = loadings {
        let spec = FactorSpec {
            n_factors: args.factors,
            loadings,
            dynamics: FactorDynamics::Iid,
        };
        panel = dgp::add_factors(&panel, &spec, seed(1))?.panel;
    }
    let brk = dgp::draw_break(law, args.change_fraction, args.theta, args.n_panels, args.n_time, seed(2))?;
    if !brk.is_null() {
        panel = dgp::inject_break(&panel, &brk)?;
    }
    let csv = panel.to_csv(args.layout);
    match &args.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn render_outcome(o: &TestOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "test          {}", o.test);
    let _ = writeln!(s, "panels x time {} x {}", o.n_panels, o.n_time);
    let _ = writeln!(s, "statistic     {:.6}", o.statistic);
    let _ = writeln!(s, "kappa         {:.6}", o.kappa);
    let _ = writeln!(s, "normalized    {:.6}", o.normalized);
    if let Some(s2) = o.sigma2_hat {
        let _ = writeln!(s, "sigma2_hat    {s2:.6}");
    }
    let _ = writeln!(s, "argmax u      {:.4}", o.argmax_u);
    if let Some(cv) = o.critical_value {
        let _ = writeln!(s, "critical val  {cv:.6} (alpha {})", o.alpha);
    }
    if let Some(p) = o.p_value {
        let _ = writeln!(s, "p-value       {p:.4} (alpha {})", o.alpha);
    }
    let _ = writeln!(s, "decision      {}", if o.reject { "reject" } else { "do not reject" });
    s
}

fn run_tests(args: &TestArgs, force_bootstrap: bool) -> Result<()> {
    let panel: PanelMatrix = load_panel(&args.input, args.layout)?;
    let store = args.crit.store();
    let mut boot = BootstrapConfig::new(args.reps, args.seed);
    boot.p_max = args.pmax;
    boot.hac_bandwidth = args.hac_bandwidth;
    let bootstrap = force_bootstrap || args.calibration == CalibrationArg::Bootstrap;
    let mut outcomes = Vec::new();
    for scheme in &args.weights {
        let spec = TestSpec::new(scheme.clone(), args.estimator, args.functional);
        let calibration = if bootstrap {
            Calibration::Bootstrap(&boot)
        } else {
            Calibration::Asymptotic {
                store: &store,
                settings: args.crit.settings(),
            }
        };
        outcomes.push(run_test(&panel, &spec, calibration, args.alpha)?);
    }
    match args.format {
        FormatArg::Json if outcomes.len() == 1 => println!("{}", serde_json::to_string_pretty(&outcomes[0])?),
        FormatArg::Json => println!("{}", serde_json::to_string_pretty(&outcomes)?),
        FormatArg::Text => {
            let blocks: Vec<String> = outcomes.iter().map(render_outcome).collect();
            print!("{}", blocks.join("\n"));
        }
    }
    Ok(())
}

fn critvals(args: &CritvalsArgs) -> Result<()> {
    let store = args.crit.store();
    let functionals = match args.functional {
        Some(f) => vec![f],
        None => vec![Functional::Sup, Functional::Integral],
    };
    let mut tables = Vec::new();
    for scheme in &args.weights {
        for &functional in &functionals {
            let spec = TestSpec::new(scheme.clone(), Estimator::Hat, functional);
            let n_time = match (scheme, args.time) {
                (SchemeKind::Custom(w), t) => t.unwrap_or(w.len()),
                (_, t) => t.unwrap_or(0),
            };
            let key = CritKey::for_test(&spec, n_time, args.crit.settings())?;
            if let GridSpec::Sample(t) = key.grid {
                info!("custom weights use the finite-sample kernel at T = {t}");
            }
            tables.push(store.fetch(&key)?);
        }
    }
    if let Some(dir) = store.dir() {
        info!("tables cached in {}", dir.display());
    }
    println!("{}", serde_json::to_string_pretty(&tables)?);
    Ok(())
}

fn montecarlo(args: &MontecarloArgs) -> Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = ExperimentConfig::load(&args.config)?;
    let work = cfg.work(args.scale);
    if work > cfg.work_warning {
        warn!("estimated work {work:.2e} exceeds {:.2e}; expect a long run", cfg.work_warning);
    }
    let store = match &args.crit_dir {
        Some(dir) => CritStore::with_dir(dir),
        None => CritStore::in_memory(),
    };
    let table = harness::run_experiment(&cfg, args.scale, &store)?;
    print!("{}", harness::render_text(&table));
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| Path::new("results").to_path_buf());
    for path in harness::emit_outputs(&table, &out, &args.formats)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => run_tests(a, false),
        Command::BootstrapTest(a) => run_tests(a, true),
        Command::Critvals(a) => critvals(a),
        Command::Montecarlo(a) => montecarlo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = if msg.is_empty() { cause } else { format!("{msg}: {cause}") };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
