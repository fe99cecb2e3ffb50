//! `passynth` command line. Exit codes: 0 success, 1 failed or infeasible
//! verdict, 2 usage or parse error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::flow::{FlowConfig, Termination};
use crate::io::{self, IoError, PlantSpec, RunLedger};
use crate::linalg::{self, Mat};
use crate::passivity::{self, CertifyOptions, PassivityError, PassivityMode, Strictness};
use crate::pipeline::{self, PipelineError, PipelineOptions, Stage};
use crate::plant::{self, LtiPlant};
use crate::plot::{self, PlotConfig, PlotInput};
use crate::polytope::GainPolytope;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SYNTH_THREADS";

#[derive(Parser, Debug)]
#[command(name = "passynth", version, about = "Passivity-constrained LQR gain synthesis")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Strict,
    Nonstrict,
}

#[derive(Args, Debug)]
struct PlantArgs {
    /// Plant description (TOML).
    #[arg(long)]
    plant: PathBuf,
    /// Overrides the mode stored in the plant file.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Seed for every randomized search.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// Learning rate of the flow.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Projected-gradient tolerance; defaults to 1e-8·(1 + f at the start).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 1e4)]
    max_time: f64,
}

impl FlowArgs {
    fn config(&self) -> FlowConfig {
        FlowConfig { alpha: self.alpha, tol_grad: self.tol, max_time: self.max_time, ..FlowConfig::default() }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify one gain.
    Check {
        #[command(flatten)]
        plant: PlantArgs,
        /// Gain as an inline array, e.g. "[-0.5, 0]" or "[[2, 2], [0.5, 2]]".
        #[arg(long, allow_hyphen_values = true)]
        gain: String,
    },
    /// Find some passivating gain.
    FindGain {
        #[command(flatten)]
        plant: PlantArgs,
    },
    /// Flood-fill verified cubes around a seed gain and write atlas.csv.
    Explore {
        #[command(flatten)]
        plant: PlantArgs,
        /// Seed gain; searched for when omitted.
        #[arg(long, allow_hyphen_values = true)]
        gain: Option<String>,
        #[arg(long, default_value_t = 0.4)]
        edge: f64,
        /// Limits on cube centers, e.g. "-3..1,-2..2".
        #[arg(long = "box", allow_hyphen_values = true)]
        search_box: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        max_cubes: usize,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
    },
    /// Inscribe a box in an atlas and write polytope.toml.
    Approx {
        #[command(flatten)]
        plant: PlantArgs,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
    },
    /// Run the projected gradient flow and write trajectory.csv.
    Optimize {
        #[command(flatten)]
        plant: PlantArgs,
        /// Constraint box; the flow is unconstrained when omitted.
        #[arg(long)]
        polytope: Option<PathBuf>,
        /// Initial gain; defaults to the polytope center.
        #[arg(long, allow_hyphen_values = true)]
        gain: Option<String>,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
    },
    /// Run every stage and write the artifacts and ledger.toml.
    Pipeline {
        #[command(flatten)]
        plant: PlantArgs,
        #[arg(long, default_value_t = 0.4)]
        edge: f64,
        #[arg(long = "box", allow_hyphen_values = true)]
        search_box: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        max_cubes: usize,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
        /// Also render plot.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Render an SVG from a ledger and its artifacts.
    Plot {
        #[arg(long)]
        ledger: PathBuf,
        /// Output file; defaults to plot.svg next to the ledger.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the passivity raster.
        #[arg(long)]
        no_raster: bool,
        /// Plot window, e.g. "-3..1,-2..2".
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Fail(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Fail(e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Fail(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn threads() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                Ok(Some(n))
            }
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

struct Loaded {
    spec: PlantSpec,
    plant: LtiPlant,
    mode: PassivityMode,
}

fn load(args: &PlantArgs) -> Result<Loaded, CliError> {
    let spec = PlantSpec::load(&args.plant)?;
    let plant = spec.to_plant()?;
    let kind = match args.mode {
        Some(ModeArg::Strict) => Strictness::Strict,
        Some(ModeArg::Nonstrict) => Strictness::Nonstrict,
        None => spec.mode,
    };
    Ok(Loaded { spec, plant, mode: PassivityMode::from_kind(kind) })
}

fn parse_box(text: &str, dim: usize) -> Result<Vec<(f64, f64)>, CliError> {
    let bad = || CliError::Usage(format!("box `{text}` must look like lo..hi,lo..hi with {dim} ranges"));
    let ranges = text
        .split(',')
        .map(|r| {
            let (lo, hi) = r.split_once("..").ok_or_else(bad)?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            if lo <= hi { Ok((lo, hi)) } else { Err(bad()) }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ranges.len() != dim {
        return Err(bad());
    }
    Ok(ranges)
}

fn rows(m: &Mat) -> String {
    format!("{:?}", io::matrix_rows(m))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Usage(IoError::File { path: dir.to_path_buf(), source }.to_string()))
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    let workers = threads()?;
    match command {
        Command::Check { plant, gain } => {
            let l = load(&plant)?;
            let k = io::parse_gain(&gain, l.plant.m(), l.plant.n())?;
            let abscissa = linalg::spectral_abscissa(&l.plant.closed_loop(&k)).map_err(fail)?;
            match passivity::certify_gain(&l.plant, &k, &l.mode, &CertifyOptions::with_seed(plant.seed)) {
                Ok(cert) => {
                    println!("PASS");
                    println!("P = {}", rows(&cert.p));
                    println!("lambda_max = {:e}", cert.lambda_max_constraint);
                    println!("lambda_min_p = {:e}", cert.lambda_min_p);
                    println!("equality_residual = {:e}", cert.equality_residual);
                    println!("spectral_abscissa = {abscissa:e}");
                    if cert.port_degenerate {
                        println!("warning: port pair is nearly uncontrollable or unobservable");
                    }
                    Ok(0)
                }
                Err(PassivityError::Infeasible { best_lambda_max }) => {
                    println!("FAIL");
                    println!("best_lambda_max = {best_lambda_max:e}");
                    println!("spectral_abscissa = {abscissa:e}");
                    Ok(1)
                }
                Err(PassivityError::EqualityInconsistent { residual }) => {
                    println!("FAIL");
                    println!("equality_residual = {residual:e}");
                    Ok(1)
                }
                Err(e) => Err(fail(e)),
            }
        }
        Command::FindGain { plant } => {
            let l = load(&plant)?;
            match pipeline::seed_gain(&l.plant, &l.mode, plant.seed) {
                Ok(pair) => {
                    println!("K = {}", rows(&pair.k));
                    println!("Z = {}", rows(&pair.z));
                    println!("W = {}", rows(&pair.w));
                    println!("lambda_max = {:e}", pair.certificate.lambda_max_constraint);
                    Ok(0)
                }
                Err(PassivityError::Infeasible { best_lambda_max }) => {
                    println!("INFEASIBLE");
                    println!("best_lambda_max = {best_lambda_max:e}");
                    Ok(1)
                }
                Err(e) => Err(fail(e)),
            }
        }
        Command::Explore { plant, gain, edge, search_box, max_cubes, out } => {
            let l = load(&plant)?;
            let dim = l.plant.gain_dim();
            let seed = match gain {
                Some(g) => plant::vec(&io::parse_gain(&g, l.plant.m(), l.plant.n())?),
                None => plant::vec(&pipeline::seed_gain(&l.plant, &l.mode, plant.seed).map_err(fail)?.k),
            };
            let k_star = linalg::solve_care(&l.plant.a, &l.plant.b_u, &l.plant.q, &l.plant.r)
                .map(|(_, k)| plant::vec(&k))
                .unwrap_or_else(|_| seed.clone());
            let mut options = PipelineOptions::new(l.mode, edge);
            options.seed = plant.seed;
            options.max_cubes = max_cubes;
            options.threads = workers;
            options.search_box = search_box.map(|b| parse_box(&b, dim)).transpose()?;
            let region = pipeline::explore_region(&l.plant, &seed, &k_star, &options).map_err(fail)?;
            ensure_dir(&out)?;
            let path = out.join(pipeline::ATLAS_FILE);
            io::write_atlas(&path, &region)?;
            println!("verified = {}", region.cubes.len());
            println!("rejected = {}", region.rejected.len());
            println!("atlas = {}", path.display());
            Ok(0)
        }
        Command::Approx { plant, atlas, out } => {
            let l = load(&plant)?;
            let region = io::read_atlas(&atlas)?;
            let poly = pipeline::approximate(&l.plant, &region).map_err(fail)?;
            ensure_dir(&out)?;
            let path = out.join(pipeline::POLYTOPE_FILE);
            io::write_polytope(&path, &poly)?;
            if let Some((lo, hi)) = poly.box_bounds() {
                println!("lo = {lo:?}");
                println!("hi = {hi:?}");
            }
            println!("center = {:?}", poly.chebyshev_center);
            println!("polytope = {}", path.display());
            Ok(0)
        }
        Command::Optimize { plant, polytope, gain, flow, out } => {
            let l = load(&plant)?;
            let dim = l.plant.gain_dim();
            let poly = match &polytope {
                Some(p) => io::read_polytope(p)?,
                None => GainPolytope::unconstrained(dim),
            };
            let k0 = match (&gain, &polytope) {
                (Some(g), _) => io::parse_gain(g, l.plant.m(), l.plant.n())?,
                (None, Some(_)) => l.plant.gain_from_vec(&poly.chebyshev_center),
                (None, None) => return Err(CliError::Usage("--gain is required without --polytope".into())),
            };
            let traj = crate::flow::integrate_flow(&l.plant, &poly, &k0, &flow.config()).map_err(fail)?;
            ensure_dir(&out)?;
            let path = out.join(pipeline::TRAJECTORY_FILE);
            io::write_trajectory(&path, &traj.samples)?;
            let last = traj.terminal();
            println!("K = {}", rows(&traj.terminal_gain));
            println!("f = {}", last.f);
            println!("proj_grad_norm = {:e}", last.proj_grad_norm);
            println!("termination = {:?}", traj.termination);
            println!("trajectory = {}", path.display());
            Ok(if traj.termination == Termination::Converged { 0 } else { 1 })
        }
        Command::Pipeline { plant, edge, search_box, max_cubes, flow, out, plot } => {
            let l = load(&plant)?;
            let dim = l.plant.gain_dim();
            let mut options = PipelineOptions::new(l.mode, edge);
            options.seed = plant.seed;
            options.max_cubes = max_cubes;
            options.flow = flow.config();
            options.threads = workers;
            options.search_box = search_box.map(|b| parse_box(&b, dim)).transpose()?;
            if plot {
                if dim == 2 {
                    options.plot = Some(PlotConfig::default());
                } else {
                    log::warn!("skipping plot: gains have {dim} parameters");
                }
            }
            match pipeline::run_pipeline(&l.spec, &options, &out) {
                Ok(run) => {
                    let g = &run.ledger;
                    println!("short_circuit = {}", g.short_circuit);
                    println!("k_star = {:?}", g.k_star);
                    println!("f_k_star = {}", g.f_k_star);
                    println!("terminal_gain = {:?}", g.terminal_gain);
                    println!("f_k_hat = {}", g.f_k_hat);
                    println!("ledger = {}", run.ledger_path.display());
                    Ok(0)
                }
                Err(PipelineError { stage: Stage::Load, source }) => Err(CliError::Usage(source.to_string())),
                Err(e) => Err(fail(e)),
            }
        }
        Command::Plot { ledger, out, no_raster, window } => {
            let dir = ledger.parent().map(Path::to_path_buf).unwrap_or_default();
            let g = RunLedger::load(&ledger)?;
            let spec = PlantSpec::load(&g.resolve(&dir, &g.artifacts.plant))?;
            let plant = spec.to_plant()?;
            let region = g.artifacts.atlas.as_ref().map(|a| io::read_atlas(&g.resolve(&dir, a))).transpose()?;
            let poly = g.artifacts.polytope.as_ref().map(|p| io::read_polytope(&g.resolve(&dir, p))).transpose()?;
            let traj = g.artifacts.trajectory.as_ref().map(|t| io::read_trajectory(&g.resolve(&dir, t))).transpose()?;
            let vec_of = |rows: &[Vec<f64>]| io::rows_to_matrix("gain", rows).map(|m| plant::vec(&m));
            let input = PlotInput {
                region: region.as_ref(),
                polytope: poly.as_ref(),
                trajectories: traj.iter().map(|t| t.iter().map(|s| s.k.clone()).collect()).collect(),
                k_star: vec_of(&g.k_star)?,
                k_hat: vec_of(&g.terminal_gain)?,
                f_k_star: g.f_k_star,
            };
            let mut config = PlotConfig::default();
            config.certify.seed = g.seed;
            if no_raster {
                config.passivity_resolution = None;
            }
            if let Some(w) = window {
                let b = parse_box(&w, 2)?;
                config.window = Some([b[0], b[1]]);
            }
            let svg = plot::render_run(&plant, &PassivityMode::from_kind(g.mode), &input, &config)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let path = out.unwrap_or_else(|| dir.join(pipeline::PLOT_FILE));
            std::fs::write(&path, svg).map_err(|source| IoError::File { path: path.clone(), source })?;
            println!("plot = {}", path.display());
            Ok(0)
        }
    }
}
