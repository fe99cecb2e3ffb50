//! End-to-end synthesis: check the LQR optimum, find a passivating seed,
//! explore the verified region around it, inscribe a box and run the
//! projected flow inside it. Every stage writes its artifact as soon as it
//! finishes, so a failing run leaves the earlier results on disk.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::flow::{self, FlowConfig, FlowError, FlowTrajectory};
use crate::io::{self, ArtifactPaths, IoError, PlantSpec, RunLedger, StageTimings};
use crate::linalg::Mat;
use crate::passivity::{self, CertifyOptions, FeasiblePair, PassivityError, PassivityMode};
use crate::plant::{self, LtiPlant};
use crate::plot::{self, PlotConfig, PlotError};
use crate::polytope::{self, GainPolytope, PolytopeError};
use crate::region::{self, ExploreConfig, Precheck, RegionError, VerifiedRegion};

pub const PLANT_FILE: &str = "plant.toml";
pub const ATLAS_FILE: &str = "atlas.csv";
pub const POLYTOPE_FILE: &str = "polytope.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const LEDGER_FILE: &str = "ledger.toml";
pub const PLOT_FILE: &str = "plot.svg";

/// Seeds are searched until the normalized `λ_max` reaches this depth so the
/// first cube around them has room to verify.
pub const SEED_TARGET: f64 = -1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Precheck,
    FindGain,
    Explore,
    Approx,
    Optimize,
    Plot,
    Ledger,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Precheck => "precheck",
            Stage::FindGain => "find-gain",
            Stage::Explore => "explore",
            Stage::Approx => "approx",
            Stage::Optimize => "optimize",
            Stage::Plot => "plot",
            Stage::Ledger => "ledger",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Passivity(#[from] PassivityError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, source: e.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub mode: PassivityMode,
    pub edge: f64,
    /// Cube-center limits; defaults to the hull of `seed ± 10·edge` and `K* ± 10·edge`.
    pub search_box: Option<Vec<(f64, f64)>>,
    pub seed: u64,
    pub max_cubes: usize,
    pub flow: FlowConfig,
    pub threads: Option<usize>,
    pub plot: Option<PlotConfig>,
}

impl PipelineOptions {
    pub fn new(mode: PassivityMode, edge: f64) -> Self {
        Self {
            mode,
            edge,
            search_box: None,
            seed: 0,
            max_cubes: 10_000,
            flow: FlowConfig::default(),
            threads: None,
            plot: None,
        }
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions::with_seed(self.seed)
    }

    /// Everything that can change results; the worker count is left out.
    fn fingerprint(&self) -> String {
        format!(
            "mode={:?};edge={:?};box={:?};seed={};max_cubes={};flow={:?};plot={:?}",
            self.mode, self.edge, self.search_box, self.seed, self.max_cubes, self.flow, self.plot
        )
    }
}

/// Finds a passivating seed gain with some depth to spare.
pub fn seed_gain(plant: &LtiPlant, mode: &PassivityMode, seed: u64) -> Result<FeasiblePair, PassivityError> {
    let opts = CertifyOptions { target: Some(SEED_TARGET), ..CertifyOptions::with_seed(seed) };
    passivity::find_passivating_gain(plant, mode, &opts)
}

/// Hull of `seed ± 10·edge` and `k_star ± 10·edge`.
pub fn default_search_box(seed: &[f64], k_star: &[f64], edge: f64) -> Vec<(f64, f64)> {
    let r = 10.0 * edge;
    seed.iter().zip(k_star).map(|(s, k)| (s.min(*k) - r, s.max(*k) + r)).collect()
}

/// LQR cost at a vectorized gain, `+∞` where it is not stabilizing.
pub fn lqr_score(plant: &LtiPlant) -> impl Fn(&[f64]) -> f64 + '_ {
    move |k: &[f64]| flow::evaluate_cost(plant, &plant.gain_from_vec(k)).map_or(f64::INFINITY, |e| e.f)
}

/// Explores the verified region around `seed`.
pub fn explore_region(
    plant: &LtiPlant,
    seed: &[f64],
    k_star: &[f64],
    options: &PipelineOptions,
) -> Result<VerifiedRegion, RegionError> {
    let config = ExploreConfig {
        seed_gain: seed.to_vec(),
        edge: options.edge,
        max_cubes: options.max_cubes,
        search_box: Some(options.search_box.clone().unwrap_or_else(|| default_search_box(seed, k_star, options.edge))),
        certify: options.certify_options(),
        threads: options.threads,
    };
    region::explore(plant, &options.mode, &config)
}

/// Inscribes a box in `region`, started from the cube with the lowest LQR cost.
pub fn approximate(plant: &LtiPlant, region: &VerifiedRegion) -> Result<GainPolytope, PolytopeError> {
    polytope::inscribe_polytope(region, lqr_score(plant))
}

/// Runs the projected flow from the polytope's Chebyshev center.
pub fn optimize(plant: &LtiPlant, poly: &GainPolytope, config: &FlowConfig) -> Result<FlowTrajectory, FlowError> {
    flow::integrate_flow(plant, poly, &plant.gain_from_vec(&poly.chebyshev_center), config)
}

/// In-memory results of a run alongside its ledger.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub ledger: RunLedger,
    pub ledger_path: PathBuf,
    pub seed_pair: Option<FeasiblePair>,
    pub region: Option<VerifiedRegion>,
    pub polytope: Option<GainPolytope>,
    pub trajectory: Option<FlowTrajectory>,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot = start.elapsed().as_secs_f64();
    out
}

/// Runs every stage and writes the artifacts and `ledger.toml` into `out_dir`.
pub fn run_pipeline(spec: &PlantSpec, options: &PipelineOptions, out_dir: &Path) -> Result<PipelineRun, PipelineError> {
    let plant = spec.to_plant().map_err(at(Stage::Load))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|source| IoError::File { path: out_dir.to_path_buf(), source })
        .map_err(at(Stage::Load))?;
    spec.save(&out_dir.join(PLANT_FILE)).map_err(at(Stage::Load))?;
    let config_hash = io::sha256_hex(format!("{}\n{}", spec.to_toml(), options.fingerprint()).as_bytes());
    let certify = options.certify_options();
    let mut timings = StageTimings::default();
    let mut artifacts = ArtifactPaths { plant: PLANT_FILE.into(), ..Default::default() };

    let pre = timed(&mut timings.precheck, || region::precheck_optimal(&plant, &options.mode, &certify))
        .map_err(at(Stage::Precheck))?;
    let k_star = pre.k_star().clone();
    let f_k_star = flow::evaluate_cost(&plant, &k_star).map_err(at(Stage::Precheck))?.f;
    log::info!("K* = {:?}, f(K*) = {f_k_star}", plant::vec(&k_star));

    let mut ledger = RunLedger {
        config_hash,
        result_hash: String::new(),
        seed: options.seed,
        mode: options.mode.kind,
        short_circuit: false,
        k_star: io::matrix_rows(&k_star),
        f_k_star,
        terminal_gain: io::matrix_rows(&k_star),
        f_k_hat: f_k_star,
        seed_gain: None,
        termination: None,
        edge: options.edge,
        verified_cubes: 0,
        rejected_cubes: 0,
        seed_lambda_max: None,
        terminal_lambda_max: None,
        terminal_lambda_min_p: None,
        terminal_min_g: None,
        timings: StageTimings::default(),
        artifacts: ArtifactPaths::default(),
    };
    let mut run = PipelineRun {
        ledger: ledger.clone(),
        ledger_path: out_dir.join(LEDGER_FILE),
        seed_pair: None,
        region: None,
        polytope: None,
        trajectory: None,
    };

    if let Precheck::AlreadyPassive { certificate, .. } = &pre {
        log::info!("K* already passivates; skipping the constrained search");
        ledger.short_circuit = true;
        ledger.terminal_lambda_max = Some(certificate.lambda_max_constraint);
        ledger.terminal_lambda_min_p = Some(certificate.lambda_min_p);
    } else {
        let pair = timed(&mut timings.find_gain, || seed_gain(&plant, &options.mode, options.seed))
            .map_err(at(Stage::FindGain))?;
        let seed = plant::vec(&pair.k);
        log::info!("seed gain {seed:?}");
        ledger.seed_gain = Some(io::matrix_rows(&pair.k));
        ledger.seed_lambda_max = Some(pair.certificate.lambda_max_constraint);

        let region = timed(&mut timings.explore, || explore_region(&plant, &seed, &plant::vec(&k_star), options))
            .map_err(at(Stage::Explore))?;
        io::write_atlas(&out_dir.join(ATLAS_FILE), &region).map_err(at(Stage::Explore))?;
        artifacts.atlas = Some(ATLAS_FILE.into());
        ledger.verified_cubes = region.cubes.len();
        ledger.rejected_cubes = region.rejected.len();
        log::info!("verified {} cubes, rejected {}", region.cubes.len(), region.rejected.len());

        let poly = timed(&mut timings.approx, || approximate(&plant, &region)).map_err(at(Stage::Approx))?;
        io::write_polytope(&out_dir.join(POLYTOPE_FILE), &poly).map_err(at(Stage::Approx))?;
        artifacts.polytope = Some(POLYTOPE_FILE.into());

        let traj = timed(&mut timings.optimize, || optimize(&plant, &poly, &options.flow)).map_err(at(Stage::Optimize))?;
        io::write_trajectory(&out_dir.join(TRAJECTORY_FILE), &traj.samples).map_err(at(Stage::Optimize))?;
        artifacts.trajectory = Some(TRAJECTORY_FILE.into());
        let terminal = traj.terminal();
        ledger.terminal_gain = io::matrix_rows(&traj.terminal_gain);
        ledger.f_k_hat = terminal.f;
        ledger.termination = Some(traj.termination);
        ledger.terminal_min_g = Some(terminal.min_g);
        if let Some(cell) = region.cubes.iter().find(|c| c.cube.contains(&terminal.k)) {
            if let Some(cert) = &cell.cube.certificate {
                ledger.terminal_lambda_max = Some(cert.lambda_max_constraint);
                ledger.terminal_lambda_min_p = Some(cert.lambda_min_p);
            }
        }
        log::info!("K^ = {:?}, f(K^) = {} ({:?})", terminal.k, terminal.f, traj.termination);

        run.seed_pair = Some(pair);
        run.region = Some(region);
        run.polytope = Some(poly);
        run.trajectory = Some(traj);
    }

    ledger.result_hash = ledger.compute_result_hash();
    if let Some(config) = &options.plot {
        let svg = timed(&mut timings.plot, || {
            plot::render_run(&plant, &options.mode, &run_view(&run, &k_star, &ledger), config)
        })
        .map_err(at(Stage::Plot))?;
        io::write_text(&out_dir.join(PLOT_FILE), &svg).map_err(at(Stage::Plot))?;
        artifacts.plot = Some(PLOT_FILE.into());
    }
    ledger.timings = timings;
    ledger.artifacts = artifacts;
    ledger.save(&run.ledger_path).map_err(at(Stage::Ledger))?;
    ledger.check_artifacts(out_dir).map_err(at(Stage::Ledger))?;
    run.ledger = ledger;
    Ok(run)
}

fn run_view<'a>(run: &'a PipelineRun, k_star: &Mat, ledger: &RunLedger) -> plot::PlotInput<'a> {
    plot::PlotInput {
        region: run.region.as_ref(),
        polytope: run.polytope.as_ref(),
        trajectories: run.trajectory.iter().map(|t| t.samples.iter().map(|s| s.k.clone()).collect()).collect(),
        k_star: plant::vec(k_star),
        k_hat: run.trajectory.as_ref().map_or_else(|| plant::vec(k_star), |t| plant::vec(&t.terminal_gain)),
        f_k_star: ledger.f_k_star,
    }
}
