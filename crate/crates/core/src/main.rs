use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mobiscope::config::PipelineConfig;
use mobiscope::ingest::FixFormat;
use mobiscope::pipeline::{self, default_input_paths};
use mobiscope::poi::DayType;
use mobiscope::synth::{generate, SynthSpec};
use mobiscope::Error;

/// GPS trajectories to mobility features, user clusters and per-cluster
/// place analytics.
#[derive(Parser, Debug)]
#[command(name = "mobiscope", version)]
struct Cli {
    /// TOML configuration file. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    dump_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Default)]
struct Inputs {
    /// Directory holding fixes.csv and optionally catalog.csv and
    /// subzones.geojson, as written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    fixes: Option<PathBuf>,
    #[arg(long)]
    format: Option<FixFormat>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    subzones: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DayTypeArg {
    Workday,
    Offday,
    Both,
}

impl DayTypeArg {
    fn day_types(self) -> Vec<DayType> {
        match self {
            DayTypeArg::Workday => vec![DayType::Workday],
            DayTypeArg::Offday => vec![DayType::Offday],
            DayTypeArg::Both => DayType::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse fixes and keep users with enough valid days.
    Ingest {
        #[command(flatten)]
        inputs: Inputs,
        /// Local time offset from UTC in minutes.
        #[arg(long, allow_negative_numbers = true)]
        tz_offset: Option<i32>,
        #[arg(long)]
        min_valid_days: Option<u32>,
        #[arg(long)]
        min_coverage: Option<f64>,
    },
    /// Stay points, POIs, Home and Work per user.
    Pois,
    /// Attach place categories and subzones to POIs.
    Label(Inputs),
    /// Workday and Offday feature vectors.
    Features(EdgeArgs),
    /// k-means per day type, with the SSE curve and suggested k.
    Cluster {
        #[arg(long, value_enum, default_value = "both")]
        day_type: DayTypeArg,
    },
    /// Heatmaps, violin data and the Home-Work correlation.
    Analyze {
        #[arg(long, value_enum, default_value = "both")]
        day_type: DayTypeArg,
        /// Write chart specifications (overrides the config).
        #[arg(long)]
        plot_spec: bool,
    },
    /// Generate a synthetic population into --out.
    Synth(SynthArgs),
    /// Every stage in order, plus a manifest of content hashes.
    RunAll(Inputs),
}

/// Bin edges in km, comma separated and ascending. Each overrides the
/// matching `[features]` key.
#[derive(Args, Debug)]
struct EdgeArgs {
    /// Two edges for the daily characteristic distance bins.
    #[arg(long, value_delimiter = ',')]
    dcd_edges: Option<Vec<f64>>,
    /// Two edges for the Workday origin-destination bins.
    #[arg(long, value_delimiter = ',')]
    od_workday_edges: Option<Vec<f64>>,
    /// Three edges for the Offday origin-destination bins.
    #[arg(long, value_delimiter = ',')]
    od_offday_edges: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    homebody: usize,
    #[arg(long, default_value_t = 10)]
    short: usize,
    #[arg(long, default_value_t = 10)]
    long: usize,
    #[arg(long, default_value_t = 60)]
    days: u32,
    #[arg(long, default_value_t = 0.75, allow_negative_numbers = true)]
    target_r: f64,
    #[arg(long, default_value_t = 0.5)]
    working_fraction: f64,
    #[arg(long, default_value_t = 15.0)]
    gps_jitter_m: f64,
    #[arg(long, default_value_t = 20.0)]
    schedule_jitter_min: f64,
}

fn apply_inputs(cfg: &mut PipelineConfig, inputs: &Inputs) {
    if let Some(dir) = &inputs.data {
        default_input_paths(cfg, dir);
    }
    if let Some(p) = &inputs.fixes {
        cfg.input.fixes = Some(p.clone());
    }
    if let Some(f) = inputs.format {
        cfg.input.format = f;
    }
    if let Some(p) = &inputs.catalog {
        cfg.input.catalog = Some(p.clone());
    }
    if let Some(p) = &inputs.subzones {
        cfg.input.subzones = Some(p.clone());
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn report(files: &[String], out: &Path) {
    for f in files {
        println!("{}", out.join(f).display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Ingest { inputs, tz_offset, min_valid_days, min_coverage } => {
            apply_inputs(&mut cfg, &inputs);
            if let Some(tz) = tz_offset {
                cfg.input.tz_offset_minutes = tz;
            }
            if let Some(n) = min_valid_days {
                cfg.validity.min_valid_days = n;
            }
            if let Some(c) = min_coverage {
                cfg.validity.min_coverage = c;
            }
            cfg.validate()?;
            report(&pipeline::stage_ingest(&cfg, out).map_err(|e| e.in_stage("ingest"))?, out);
        }
        Command::Pois => report(&pipeline::stage_pois(&cfg, out).map_err(|e| e.in_stage("pois"))?, out),
        Command::Label(inputs) => {
            apply_inputs(&mut cfg, &inputs);
            report(&pipeline::stage_label(&cfg, out).map_err(|e| e.in_stage("label"))?, out);
        }
        Command::Features(edges) => {
            let f = &mut cfg.features;
            for (slot, given) in [
                (&mut f.dcd_edges, edges.dcd_edges),
                (&mut f.od_workday_edges, edges.od_workday_edges),
                (&mut f.od_offday_edges, edges.od_offday_edges),
            ] {
                if let Some(v) = given {
                    *slot = v;
                }
            }
            cfg.validate()?;
            report(&pipeline::stage_features(&cfg, out).map_err(|e| e.in_stage("features"))?, out);
        }
        Command::Cluster { day_type } => {
            let files = pipeline::stage_cluster(&cfg, out, &day_type.day_types()).map_err(|e| e.in_stage("cluster"))?;
            report(&files, out);
        }
        Command::Analyze { day_type, plot_spec } => {
            cfg.analysis.plot_spec |= plot_spec;
            let files = pipeline::stage_analyze(&cfg, out, &day_type.day_types()).map_err(|e| e.in_stage("analyze"))?;
            report(&files, out);
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                seed: cli.seed.unwrap_or(SynthSpec::default().seed),
                homebody: a.homebody,
                short: a.short,
                long: a.long,
                days: a.days,
                target_r: a.target_r,
                working_fraction: a.working_fraction,
                gps_jitter_m: a.gps_jitter_m,
                schedule_jitter_min: a.schedule_jitter_min,
                tz_offset_minutes: cfg.input.tz_offset_minutes,
                ..SynthSpec::default()
            };
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            generate(&spec).and_then(|o| o.write_to_dir(out)).map_err(|e| e.in_stage("synth"))?;
            println!("{}", out.display());
        }
        Command::RunAll(inputs) => {
            apply_inputs(&mut cfg, &inputs);
            cfg.validate()?;
            if cfg.input.fixes.is_none() {
                return Err(Error::Config("no fixes file: set input.fixes or pass --fixes/--data".into()));
            }
            let manifest = pipeline::run_all(&cfg, out)?;
            println!("{} files, manifest at {}", manifest.files.len(), out.join(pipeline::MANIFEST_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if cli.dump_default_config {
        return match PipelineConfig::default().to_toml() {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
