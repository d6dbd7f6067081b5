//! The `seedplan` command line: generate data, train models, build and
//! serve the solution atlas, and report on it.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use seedplan_core::data::{write_atomic, Catalog, VarietyId};
use seedplan_core::datagen::{generate, GenConfig};
use seedplan_core::optimizer::{tau_grid, Divisor};
use seedplan_core::pipeline::{
    build_atlas, compare_solutions, evaluate_yield, split_experiments, train_forecast_models, train_yield_model,
    ComparisonReport, ForecastModels, PipelineConfig, SolutionAtlas,
};
use seedplan_core::yieldmodel::YieldModel;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "seedplan", version, about = "Seed-variety mix planning")]
struct Cli {
    /// Cap on worker threads for parallel stages.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (region.csv, experiments.csv).
    Gen(GenArgs),
    /// Train the weather sequence models.
    TrainForecast(TrainArgs),
    /// Train the yield forest and report held-out error.
    TrainYield(TrainArgs),
    /// Build the differentiated solution atlas.
    BuildAtlas(BuildArgs),
    /// Serve the HTTP API over an atlas.
    Serve(ServeArgs),
    /// Print region averages and the differentiated vs common comparison.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    subregions: usize,
    #[arg(long, default_value_t = 20)]
    varieties: usize,
    #[arg(long, default_value_t = 2000)]
    start_year: i32,
    #[arg(long, default_value_t = 2015)]
    end_year: i32,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    experiments_per_pair: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DivisorArg {
    Five,
    EntryCount,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Key/value configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with region.csv and experiments.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    radius_miles: Option<f64>,
    #[arg(long, value_enum)]
    divisor: Option<DivisorArg>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    forecast_seed: Option<u64>,
    #[arg(long)]
    forest_seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Pre-trained forecast models; trained on the fly when absent.
    #[arg(long)]
    forecast_model: Option<PathBuf>,
    /// Pre-trained yield model; trained on the fly when absent.
    #[arg(long)]
    yield_model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory of static UI assets served outside /api.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    atlas: PathBuf,
    /// Comma-separated varieties for the common solution; defaults to the
    /// five most prevalent.
    #[arg(long, value_delimiter = ',')]
    varieties: Option<Vec<String>>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

/// The configuration file: every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub forecast_model: Option<PathBuf>,
    pub yield_model: Option<PathBuf>,
    pub top_k: Option<usize>,
    pub bins: Option<usize>,
    pub radius_miles: Option<f64>,
    pub tau_grid: Option<Vec<f64>>,
    pub divisor: Option<Divisor>,
    pub split: Option<[f64; 3]>,
    pub split_seed: Option<u64>,
    pub hidden_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub forecast_seed: Option<u64>,
    pub n_trees: Option<usize>,
    pub forest_seed: Option<u64>,
    pub min_leaf: Option<usize>,
    pub bootstrap: Option<bool>,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data: PathBuf,
    pub forecast_model: Option<PathBuf>,
    pub yield_model: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Applies the file on top of the defaults; relative paths resolve
    /// against `base`.
    pub fn resolve(self, base: &Path) -> Result<Settings, CliError> {
        let mut p = PipelineConfig::default();
        if let Some(grid) = &self.tau_grid {
            let fixed = tau_grid();
            if grid.len() != fixed.len() || grid.iter().zip(fixed).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(CliError::Usage("tau_grid is fixed at 0.1, 0.2, ..., 1.0".into()));
            }
        }
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src { p.$($dst).+ = v; })*
            };
        }
        set!(
            top_k => top_k,
            bins => bins,
            radius_miles => radius_miles,
            divisor => divisor,
            split => split,
            split_seed => split_seed,
            hidden_size => forecast.hidden_size,
            epochs => forecast.epochs,
            learning_rate => forecast.learning_rate,
            forecast_seed => forecast.seed,
            n_trees => forest.n_trees,
            forest_seed => forest.seed,
            min_leaf => forest.min_leaf,
            bootstrap => forest.bootstrap,
        );
        let rel = |path: PathBuf| if path.is_absolute() { path } else { base.join(path) };
        Ok(Settings {
            data: rel(self.data.unwrap_or_else(|| PathBuf::from("data"))),
            forecast_model: self.forecast_model.map(rel),
            yield_model: self.yield_model.map(rel),
            pipeline: p,
        })
    }
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut settings = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                FileConfig::parse(&text)?.resolve(&base)?
            }
            None => FileConfig::default().resolve(Path::new(""))?,
        };
        let p = &mut settings.pipeline;
        if let Some(d) = &self.data {
            settings.data = d.clone();
        }
        if let Some(v) = self.top_k {
            p.top_k = v;
        }
        if let Some(v) = self.bins {
            p.bins = v;
        }
        if let Some(v) = self.radius_miles {
            p.radius_miles = v;
        }
        if let Some(v) = self.divisor {
            p.divisor = match v {
                DivisorArg::Five => Divisor::Five,
                DivisorArg::EntryCount => Divisor::EntryCount,
            };
        }
        if let Some(v) = self.n_trees {
            p.forest.n_trees = v;
        }
        if let Some(v) = self.epochs {
            p.forecast.epochs = v;
        }
        if let Some(v) = self.forecast_seed {
            p.forecast.seed = v;
        }
        if let Some(v) = self.forest_seed {
            p.forest.seed = v;
        }
        if let Some(v) = self.split_seed {
            p.split_seed = v;
        }
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(settings)
    }
}

fn progress(event: &str, detail: impl std::fmt::Display) {
    eprintln!("seedplan: {event}: {detail}");
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes).map_err(runtime)?;
    progress("wrote", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    write_output(path, &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| runtime(format!("cannot parse {}: {e}", path.display())))
}

fn load_catalog(settings: &Settings) -> Result<Catalog, CliError> {
    let catalog = Catalog::load_dir(&settings.data).map_err(runtime)?;
    progress(
        "loaded",
        format!(
            "{} sub-regions, {} varieties, {} experiments from {}",
            catalog.sub_regions.len(),
            catalog.varieties.len(),
            catalog.experiments.len(),
            settings.data.display()
        ),
    );
    Ok(catalog)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let config = GenConfig {
        n_subregions: args.subregions,
        n_varieties: args.varieties,
        start_year: args.start_year,
        end_year: args.end_year,
        seed: args.seed,
        noise_scale: args.noise,
        experiments_per_pair: args.experiments_per_pair,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = generate(&config).map_err(runtime)?;
    ds.catalog.write_dir(&args.out).map_err(runtime)?;
    progress("wrote", args.out.display());
    print_json(&json!({
        "out": args.out,
        "sub_regions": ds.catalog.sub_regions.len(),
        "varieties": ds.catalog.varieties.len(),
        "experiments": ds.catalog.experiments.len(),
    }));
    Ok(())
}

fn train_forecasts(catalog: &Catalog, settings: &Settings) -> Result<ForecastModels, CliError> {
    progress(
        "training",
        format!("forecast models, {} epochs", settings.pipeline.forecast.epochs),
    );
    train_forecast_models(&catalog.sub_regions, &settings.pipeline.forecast).map_err(runtime)
}

fn cmd_train_forecast(args: &TrainArgs) -> Result<(), CliError> {
    let settings = args.cfg.settings()?;
    let catalog = load_catalog(&settings)?;
    let models = train_forecasts(&catalog, &settings)?;
    write_json(&args.out, &models)?;
    print_json(&json!({
        "out": args.out,
        "attributes": models.models.keys().collect::<Vec<_>>(),
        "window": models.window,
        "last_year": models.last_year,
    }));
    Ok(())
}

fn train_yield(catalog: &Catalog, settings: &Settings) -> Result<(YieldModel, serde_json::Value), CliError> {
    let (train, _, test) = split_experiments(catalog, &settings.pipeline).map_err(runtime)?;
    progress(
        "training",
        format!("yield forest, {} trees on {} records", settings.pipeline.forest.n_trees, train.len()),
    );
    let model = train_yield_model(&train, &settings.pipeline).map_err(runtime)?;
    let eval = if test.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::to_value(evaluate_yield(&model, &test).map_err(runtime)?).map_err(runtime)?
    };
    Ok((model, eval))
}

fn cmd_train_yield(args: &TrainArgs) -> Result<(), CliError> {
    let settings = args.cfg.settings()?;
    let catalog = load_catalog(&settings)?;
    let (model, eval) = train_yield(&catalog, &settings)?;
    write_json(&args.out, &model)?;
    print_json(&json!({ "out": args.out, "test": eval }));
    Ok(())
}

fn cmd_build_atlas(args: &BuildArgs) -> Result<(), CliError> {
    let mut settings = args.cfg.settings()?;
    if args.forecast_model.is_some() {
        settings.forecast_model.clone_from(&args.forecast_model);
    }
    if args.yield_model.is_some() {
        settings.yield_model.clone_from(&args.yield_model);
    }
    let catalog = load_catalog(&settings)?;
    let forecasts = match &settings.forecast_model {
        Some(path) => read_json(path)?,
        None => train_forecasts(&catalog, &settings)?,
    };
    let model: YieldModel = match &settings.yield_model {
        Some(path) => read_json(path)?,
        None => train_yield(&catalog, &settings)?.0,
    };
    progress("building", format!("atlas for {} sub-regions", catalog.sub_regions.len()));
    let atlas = build_atlas(&catalog, &forecasts, &model, &settings.pipeline).map_err(runtime)?;
    write_output(&args.out, &atlas.to_json().map_err(runtime)?)?;
    print_json(&json!({ "out": args.out, "summary": atlas.summary }));
    Ok(())
}

fn cmd_serve(args: &ServeArgs, threads: Option<u16>) -> Result<(), CliError> {
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    builder.enable_all();
    if let Some(n) = threads {
        builder.worker_threads(n as usize);
    }
    let rt = builder.build().map_err(runtime)?;
    progress("serving", format!("{} on http://{}", args.atlas.display(), args.bind));
    rt.block_on(seedplan_service::serve(seedplan_service::ApiConfig {
        bind: args.bind,
        atlas: args.atlas.clone(),
        static_dir: args.static_dir.clone(),
    }))
    .map_err(runtime)
}

/// Region averages recomputed from the per-sub-region records.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RegionAverages {
    pub n_sub_regions: usize,
    pub n_solved: usize,
    pub average_yield: Option<f64>,
    pub average_sd: Option<f64>,
    pub average_offset_pct: Option<f64>,
}

pub fn region_averages(atlas: &SolutionAtlas) -> RegionAverages {
    let solved: Vec<_> = atlas.sub_regions.iter().filter_map(|r| r.default_solution.as_ref()).collect();
    let avg = |values: Vec<f64>| (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    RegionAverages {
        n_sub_regions: atlas.sub_regions.len(),
        n_solved: solved.len(),
        average_yield: avg(solved.iter().map(|s| s.expected_yield).collect()),
        average_sd: avg(solved.iter().map(|s| s.sd).collect()),
        average_offset_pct: avg(solved.iter().filter_map(|s| s.offset_pct).collect()),
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_report(avg: &RegionAverages, cmp: &ComparisonReport) -> String {
    let mix: Vec<String> = cmp
        .common_weights
        .iter()
        .map(|(v, w)| format!("{v} {:.1}%", w * 100.0))
        .collect();
    let row = |name: &str, s: &seedplan_core::pipeline::SolutionStats| {
        format!(
            "{name:<16}{:>12.3}{:>16.3}{:>12.3}\n",
            s.mean_yield, s.yield_variance, s.mean_sd
        )
    };
    let mut out = String::new();
    out.push_str(&format!("sub-regions       {} ({} solved)\n", avg.n_sub_regions, avg.n_solved));
    out.push_str(&format!("average yield     {}\n", fmt_opt(avg.average_yield, 3)));
    out.push_str(&format!("average S.D.      {}\n", fmt_opt(avg.average_sd, 3)));
    out.push_str(&format!("average offset %  {}\n", fmt_opt(avg.average_offset_pct, 3)));
    out.push_str(&format!("\ncommon mix: {}\n", mix.join(", ")));
    out.push_str(&format!("{:<16}{:>12}{:>16}{:>12}\n", "solution", "mean yield", "yield variance", "mean S.D."));
    out.push_str(&row("differentiated", &cmp.differentiated));
    out.push_str(&row("common", &cmp.common));
    out
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let atlas = seedplan_service::load_atlas(&args.atlas).map_err(runtime)?;
    let chosen = args
        .varieties
        .as_ref()
        .map(|list| {
            list.iter()
                .map(|v| VarietyId::new(v.trim()).map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    if let Some(bad) = chosen.iter().flatten().find(|v| !atlas.knows_variety(v)) {
        return Err(CliError::Usage(format!("unknown variety {bad}")));
    }
    let averages = region_averages(&atlas);
    let comparison = compare_solutions(&atlas, chosen.as_deref()).map_err(|e| match e {
        seedplan_core::pipeline::PipelineError::Argument(m) => CliError::Usage(m),
        other => runtime(other),
    })?;
    if args.json {
        print_json(&json!({ "region": averages, "comparison": comparison }));
    } else {
        print!("{}", render_report(&averages, &comparison));
    }
    Ok(())
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        // a pool already built in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::TrainForecast(a) => cmd_train_forecast(a),
        Command::TrainYield(a) => cmd_train_yield(a),
        Command::BuildAtlas(a) => cmd_build_atlas(a),
        Command::Serve(a) => cmd_serve(a, cli.threads),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("seedplan: error: {e}");
            e.exit_code()
        }
    }
}
