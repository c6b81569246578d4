//! Command orchestration: resolve flags against the config, drive the core
//! workflows (with optional adaptive refinement), and emit artifacts.
//!
//! Error discipline: everything that can be blamed on the config or flags
//! maps to exit code 2, everything that fails while computing or writing
//! maps to exit code 3.

use std::path::{Path, PathBuf};

use cse_core::designs::ztest_rejection_rate;
use cse_core::special::{norm_pdf, norm_quantile};
use cse_core::tilt::{pinsker_bound, taylor_bound};
use cse_core::{
    bootstrap_bias, build_platten, calibrate, confidence_set, forward_bound, optimize_forward,
    refine, validate, BoundQuery, CalibrationResult, Design, ModelFamily, OutcomeMatrix,
    ParamPoint, Platten, SeedSpec, Threshold, ValidationSettings,
};
use thiserror::Error;

use crate::config::{from_json_str, CommandKind, ConfigError, DesignSpec, RunConfig};
use crate::emit::{
    self, CalibrationArtifact, ConfsetArtifact, GridArtifact, Provenance, ValidationArtifact,
};
use crate::{Cli, Command};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(err: ConfigError) -> AppError {
        AppError::Config(err.to_string())
    }
}

fn runtime(err: impl std::fmt::Display) -> AppError {
    AppError::Runtime(err.to_string())
}

fn config_err(err: impl std::fmt::Display) -> AppError {
    AppError::Config(err.to_string())
}

pub fn dispatch(cli: &Cli) -> Result<(), AppError> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Validate => run_validate(cli),
        Command::Calibrate => run_calibrate(cli),
        Command::Bound => run_bound(cli),
        Command::Grid => run_grid(cli),
        Command::Confset { calibration, data } => run_confset(cli, calibration, data),
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), AppError> {
    let requested = match flag {
        Some(n) => Some(n),
        None => match std::env::var("CSE_THREADS") {
            Ok(text) => Some(text.trim().parse::<usize>().map_err(|_| {
                AppError::Config(format!("CSE_THREADS must be a positive integer, got {text:?}"))
            })?),
            Err(_) => None,
        },
    };
    let Some(threads) = requested else {
        return Ok(());
    };
    if threads == 0 {
        return Err(AppError::Config("--threads must be at least 1".into()));
    }
    // Worker count is purely a performance knob: the engine assigns one
    // seeded stream per simulation index, so results cannot depend on it.
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(runtime)?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn load_config(cli: &Cli, command: CommandKind) -> Result<RunConfig, AppError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| AppError::Config("--config PATH is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        // Provenance must describe the run that actually happened, so the
        // override lands in the config before anything is emitted.
        config.master_seed = seed;
    }
    config.check_for(command)?;
    Ok(config)
}

fn resolve_out_dir(cli: &Cli, config: &RunConfig) -> Result<PathBuf, AppError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    Ok(dir)
}

struct Setup {
    config: RunConfig,
    family: ModelFamily,
    design: Box<dyn Design>,
    platten: Platten,
    seed: SeedSpec,
    out_dir: PathBuf,
}

fn setup(cli: &Cli, command: CommandKind) -> Result<Setup, AppError> {
    let config = load_config(cli, command)?;
    let family = config.family.clone();
    family.validate().map_err(config_err)?;
    let design = config.design.build().map_err(config_err)?;
    design.check_family(&family).map_err(config_err)?;
    let platten = build_platten(
        &config.grid.lower,
        &config.grid.upper,
        &config.grid.cells,
        &config.grid.hypotheses,
        config.sim_count,
    )
    .map_err(config_err)?;
    let seed = SeedSpec {
        master_seed: config.master_seed,
    };
    let out_dir = resolve_out_dir(cli, &config)?;
    Ok(Setup {
        config,
        family,
        design,
        platten,
        seed,
        out_dir,
    })
}

struct AdaptivePlan {
    rounds: u32,
    budget: usize,
    sim_growth: f64,
}

/// When the config names no budget, each round splits the worst quarter of
/// the tiling: enough to chase a boundary without doubling the tile count
/// every round.
const DEFAULT_BUDGET_DIVISOR: usize = 4;

fn adaptive_plan(config: &RunConfig, flag_rounds: Option<u32>, tiles: usize) -> AdaptivePlan {
    let spec = config.adaptive.as_ref();
    AdaptivePlan {
        rounds: flag_rounds.or(spec.map(|s| s.rounds)).unwrap_or(0),
        budget: spec
            .map(|s| s.budget)
            .unwrap_or((tiles / DEFAULT_BUDGET_DIVISOR).max(1)),
        sim_growth: spec.map(|s| s.sim_growth).unwrap_or(1.0),
    }
}

fn run_validate(cli: &Cli) -> Result<(), AppError> {
    let mut setup = setup(cli, CommandKind::Validate)?;
    let settings = ValidationSettings {
        delta: setup.config.delta.expect("checked by check_for"),
        design_lambda: setup.config.design.lambda().expect("checked by check_for"),
        lower_band: setup.config.lower_band,
    };
    let plan = adaptive_plan(&setup.config, cli.adaptive_rounds, setup.platten.tiles.len());
    let mut report = validate(
        &setup.platten,
        setup.design.as_ref(),
        &setup.family,
        settings,
        setup.seed,
    )
    .map_err(runtime)?;
    for round in 1..=plan.rounds {
        // Refine where extending the pointwise interval to the whole tile
        // costs the most; that slack is exactly what splitting shrinks.
        let scores: Vec<f64> = report
            .tiles
            .iter()
            .map(|tile| tile.tile_upper - tile.point_upper)
            .collect();
        setup.platten =
            refine(&setup.platten, &scores, plan.budget, plan.sim_growth).map_err(runtime)?;
        report = validate(
            &setup.platten,
            setup.design.as_ref(),
            &setup.family,
            settings,
            setup.seed,
        )
        .map_err(runtime)?;
        println!(
            "round {round}: {} tiles, {} total simulations",
            setup.platten.tiles.len(),
            setup.platten.total_sims()
        );
    }

    let provenance = Provenance::new("validate", &setup.config);
    let max_band = report
        .tiles
        .iter()
        .map(|tile| tile.tile_upper)
        .fold(f64::NEG_INFINITY, f64::max);
    let artifact = ValidationArtifact {
        provenance: provenance.clone(),
        platten: setup.platten,
        report,
    };
    emit::write_json(&setup.out_dir.join("validation.json"), &artifact).map_err(runtime)?;
    let header = emit::validation_header(artifact.platten.dim(), settings.lower_band);
    let rows = emit::validation_rows(&artifact.report, settings.lower_band);
    emit::write_csv(&setup.out_dir.join("validation.csv"), &provenance, &header, &rows)
        .map_err(runtime)?;
    println!(
        "validate: {} tiles, {} simulations, max band {max_band:.6}; wrote validation.json and validation.csv in {}",
        artifact.platten.tiles.len(),
        artifact.platten.total_sims(),
        setup.out_dir.display()
    );
    Ok(())
}

fn run_calibrate(cli: &Cli) -> Result<(), AppError> {
    let mut setup = setup(cli, CommandKind::Calibrate)?;
    let alpha = setup.config.alpha.expect("checked by check_for");
    let plan = adaptive_plan(&setup.config, cli.adaptive_rounds, setup.platten.tiles.len());
    let mut run = calibrate(
        &setup.platten,
        setup.design.as_ref(),
        &setup.family,
        alpha,
        setup.seed,
    )
    .map_err(runtime)?;
    for round in 1..=plan.rounds {
        let scores = calibration_scores(&run.result);
        setup.platten =
            refine(&setup.platten, &scores, plan.budget, plan.sim_growth).map_err(runtime)?;
        run = calibrate(
            &setup.platten,
            setup.design.as_ref(),
            &setup.family,
            alpha,
            setup.seed,
        )
        .map_err(runtime)?;
        println!(
            "round {round}: {} tiles, {} total simulations",
            setup.platten.tiles.len(),
            setup.platten.total_sims()
        );
    }
    warn_about_thresholds(&run.result);

    let bootstrap = match setup.config.bootstrap_reps {
        Some(reps) => {
            let diagnostic =
                bootstrap_bias(&run.result, &run.batches, reps, setup.seed).map_err(runtime)?;
            println!(
                "bootstrap: mean slack {:.6}, sd {:.6} over {} replicates",
                diagnostic.mean_slack, diagnostic.sd_slack, diagnostic.reps
            );
            Some(diagnostic)
        }
        None => None,
    };

    let provenance = Provenance::new("calibrate", &setup.config);
    let artifact = CalibrationArtifact {
        provenance: provenance.clone(),
        platten: setup.platten,
        result: run.result,
        bootstrap,
    };
    emit::write_json(&setup.out_dir.join("calibration.json"), &artifact).map_err(runtime)?;
    let header = emit::calibration_header(artifact.platten.dim());
    let rows = emit::calibration_rows(&artifact.result, &artifact.platten);
    emit::write_csv(&setup.out_dir.join("calibration.csv"), &provenance, &header, &rows)
        .map_err(runtime)?;
    emit::write_batches(&setup.out_dir.join("batches.bin"), &run.batches).map_err(runtime)?;
    let lambda_text = match artifact.result.lambda_star {
        Threshold::RejectNothing => emit::REJECT_NOTHING_CELL.to_string(),
        Threshold::Value(x) => format!("{x:.6}"),
    };
    println!(
        "calibrate: lambda_star = {lambda_text} at alpha = {alpha} over {} tiles; wrote calibration.json, calibration.csv, batches.bin in {}",
        artifact.platten.tiles.len(),
        setup.out_dir.display()
    );
    Ok(())
}

/// Refinement priority for calibration: the tiles pinning the region-wide
/// minimum threshold are the only ones whose splitting can raise it.
fn calibration_scores(result: &CalibrationResult) -> Vec<f64> {
    result
        .tiles
        .iter()
        .map(|tile| match (tile.lambda, result.lambda_star) {
            (Threshold::Value(lambda), Threshold::Value(star)) => -(lambda - star).abs(),
            // A sentinel tile is binding whenever one exists, because the
            // minimum is then the sentinel itself.
            (Threshold::RejectNothing, _) => 0.0,
            // Unreachable: a real threshold cannot sit above a sentinel
            // minimum. Kept total so refine always gets a full score list.
            (Threshold::Value(_), Threshold::RejectNothing) => f64::NEG_INFINITY,
        })
        .collect()
}

/// The order-statistic index floors (N+1) alpha'; a large fractional part
/// means almost one full rejection of level is being discarded per tile.
const DISCRETIZATION_WARN_DISTANCE: f64 = 0.25;

fn warn_about_thresholds(result: &CalibrationResult) {
    let mut worst: Option<(u64, f64, f64)> = None;
    for tile in &result.tiles {
        let target = (tile.n + 1) as f64 * tile.alpha_prime;
        let distance = (target - target.round()).abs();
        if distance > DISCRETIZATION_WARN_DISTANCE
            && worst.map_or(true, |(_, _, d)| distance > d)
        {
            worst = Some((tile.tile_id, target, distance));
        }
    }
    if let Some((tile, target, distance)) = worst {
        eprintln!(
            "warning: (N+1)*alpha' = {target:.3} on tile {tile} sits {distance:.2} from an integer; \
             the floor to an order-statistic index discards that fraction of the level, so a small \
             change to sim_count would buy a sharper threshold"
        );
    }
    if result.lambda_star.is_reject_nothing() {
        eprintln!(
            "warning: calibrated threshold is {} because floor((N+1)*alpha') = 0 on the binding \
             tile; raise sim_count, raise alpha, or shrink tiles",
            emit::REJECT_NOTHING_CELL
        );
    }
}

/// |f''| bound handed to the quadratic-remainder baseline. One is loose for
/// every shipped design (the z-test's true sup is phi(1), about 0.242) but
/// keeps the baseline honest without per-design analysis, which is the
/// point of comparing against it.
const TAYLOR_HESSIAN_SUP: f64 = 1.0;

fn run_bound(cli: &Cli) -> Result<(), AppError> {
    let config = load_config(cli, CommandKind::Bound)?;
    let family = config.family.clone();
    family.validate().map_err(config_err)?;
    let scan = config.bound_scan.clone().expect("checked by check_for");
    if scan.theta0.len() != family.dim() {
        return Err(AppError::Config(format!(
            "schema violation at /bound_scan/theta0: expected {} coordinates, got {}",
            family.dim(),
            scan.theta0.len()
        )));
    }
    if !(scan.level > 0.0 && scan.level < 1.0) {
        return Err(AppError::Config(format!(
            "schema violation at /bound_scan/level: {} outside (0, 1)",
            scan.level
        )));
    }
    if scan.v_count < 2 {
        return Err(AppError::Config(
            "schema violation at /bound_scan/v_count: need at least two scan points".into(),
        ));
    }
    if !(scan.v_max.is_finite() && scan.v_max > 0.0) {
        return Err(AppError::Config(format!(
            "schema violation at /bound_scan/v_max: {} must be positive",
            scan.v_max
        )));
    }
    let direction = match &scan.direction {
        Some(direction) => {
            if direction.len() != family.dim()
                || direction.iter().any(|d| !d.is_finite())
                || direction.iter().all(|d| *d == 0.0)
            {
                return Err(AppError::Config(
                    "schema violation at /bound_scan/direction: need a finite nonzero vector of the family's dimension"
                        .into(),
                ));
            }
            direction.clone()
        }
        None => {
            let mut unit = vec![0.0; family.dim()];
            unit[0] = 1.0;
            unit
        }
    };
    for q in &scan.fixed_qs {
        if !(q.is_finite() && *q >= 1.0) {
            return Err(AppError::Config(format!(
                "schema violation at /bound_scan/fixed_qs: exponent {q} must be >= 1"
            )));
        }
    }
    let theta0 = ParamPoint::new(scan.theta0.clone()).map_err(config_err)?;
    let out_dir = resolve_out_dir(cli, &config)?;

    // Analytic reference and gradient are only known for the plain z-test
    // on the one-dimensional normal family; other columns stay blank.
    let analytic_lambda = match (&config.design, &family) {
        (DesignSpec::Ztest(p), ModelFamily::NormalLocation { dim: 1 }) => p.lambda,
        _ => None,
    };
    let a = scan.level;

    let mut header: Vec<String> =
        ["theta", "v", "true_f", "tilt_opt", "taylor", "pinsker", "q_star"]
            .map(str::to_string)
            .into();
    header.extend(scan.fixed_qs.iter().map(|q| format!("u_q{q}")));

    let mut rows = Vec::with_capacity(scan.v_count);
    for i in 0..scan.v_count {
        let t = scan.v_max * i as f64 / (scan.v_count - 1) as f64;
        let v: Vec<f64> = direction.iter().map(|d| d * t).collect();
        let tilt = optimize_forward(&BoundQuery {
            family: &family,
            theta0: &theta0,
            vertices: std::slice::from_ref(&v),
            value: a,
        })
        .map_err(runtime)?;

        let theta_cell = if family.dim() == 1 {
            emit::float_cell(theta0.coords()[0] + v[0])
        } else {
            String::new()
        };
        let true_cell = analytic_lambda
            .map(|lambda| {
                emit::float_cell(ztest_rejection_rate(lambda, theta0.coords()[0] + v[0]))
            })
            .unwrap_or_default();
        let taylor_cell = analytic_lambda
            .map(|lambda| {
                let slope = norm_pdf(theta0.coords()[0] + norm_quantile(lambda));
                let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
                emit::float_cell(taylor_bound(a, slope * v[0], TAYLOR_HESSIAN_SUP, v_norm_sq))
            })
            .unwrap_or_default();
        let pinsker_cell = match family.kl_divergence(&v) {
            Some(kl) => emit::float_cell(pinsker_bound(a, kl).map_err(runtime)?),
            None => String::new(),
        };

        let mut row = vec![
            theta_cell,
            emit::float_cell(t),
            true_cell,
            emit::float_cell(tilt.bound),
            taylor_cell,
            pinsker_cell,
            emit::float_cell(tilt.q_star),
        ];
        for &q in &scan.fixed_qs {
            row.push(emit::float_cell(
                forward_bound(&family, &theta0, &v, q, a).map_err(runtime)?,
            ));
        }
        rows.push(row);
    }

    let provenance = Provenance::new("bound", &config);
    emit::write_csv(&out_dir.join("bound.csv"), &provenance, &header, &rows).map_err(runtime)?;
    println!(
        "bound: {} scan points from {:?} out to displacement {}; wrote bound.csv in {}",
        scan.v_count,
        scan.theta0,
        scan.v_max,
        out_dir.display()
    );
    Ok(())
}

fn run_grid(cli: &Cli) -> Result<(), AppError> {
    let setup = setup(cli, CommandKind::Grid)?;
    let provenance = Provenance::new("grid", &setup.config);
    let artifact = GridArtifact {
        provenance: provenance.clone(),
        platten: setup.platten,
    };
    emit::write_json(&setup.out_dir.join("grid.json"), &artifact).map_err(runtime)?;
    let header = emit::grid_header(artifact.platten.dim());
    let rows = emit::grid_rows(&artifact.platten);
    emit::write_csv(&setup.out_dir.join("grid.csv"), &provenance, &header, &rows)
        .map_err(runtime)?;
    println!(
        "grid: {} tiles, {} planned simulations, volume {:.6}; wrote grid.json and grid.csv in {}",
        artifact.platten.tiles.len(),
        artifact.platten.total_sims(),
        artifact.platten.volume(),
        setup.out_dir.display()
    );
    Ok(())
}

fn run_confset(cli: &Cli, calibration_path: &Path, data_path: &Path) -> Result<(), AppError> {
    let calibration_text = std::fs::read_to_string(calibration_path).map_err(|err| {
        AppError::Config(format!("cannot read {}: {err}", calibration_path.display()))
    })?;
    let artifact: CalibrationArtifact = from_json_str(&calibration_text)?;
    let mut config = artifact.provenance.config.clone();
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    // The estimand normally travels inside the calibration artifact; an
    // explicit --config can supply or replace it without recalibrating.
    if let Some(path) = cli.config.as_deref() {
        let override_config = RunConfig::load(path)?;
        if override_config.estimand.is_some() {
            config.estimand = override_config.estimand;
        }
    }
    config.check_for(CommandKind::Confset)?;
    let estimand = config.estimand.clone().expect("checked by check_for");
    let family = config.family.clone();
    family.validate().map_err(config_err)?;
    let design = config.design.build().map_err(config_err)?;
    design.check_family(&family).map_err(config_err)?;
    let data_text = std::fs::read_to_string(data_path)
        .map_err(|err| AppError::Config(format!("cannot read {}: {err}", data_path.display())))?;
    let data: OutcomeMatrix = from_json_str(&data_text)?;
    let out_dir = resolve_out_dir(cli, &config)?;

    let platten = &artifact.platten;
    let mut thresholds = vec![Threshold::RejectNothing; platten.tiles.len()];
    for tile in &artifact.result.tiles {
        let slot = thresholds
            .get_mut(tile.tile_id as usize)
            .ok_or_else(|| runtime(format!("tile id {} outside the platten", tile.tile_id)))?;
        *slot = tile.lambda;
    }
    let mut scratch = Vec::new();
    let mut observed = Vec::with_capacity(platten.tiles.len());
    for tile in &platten.tiles {
        observed.push(
            design
                .tile_statistic(&data, tile, &mut scratch)
                .map_err(runtime)?,
        );
    }
    let set = confidence_set(platten, &observed, &thresholds, &estimand).map_err(runtime)?;

    let provenance = Provenance::new("confset", &config);
    let output = ConfsetArtifact {
        provenance,
        estimand,
        confidence_set: set,
    };
    emit::write_json(&out_dir.join("confset.json"), &output).map_err(runtime)?;
    match output.confidence_set.image {
        Some((lo, hi)) => println!(
            "confset: retained {} of {} tiles, estimand range [{lo:.6}, {hi:.6}]; wrote confset.json in {}",
            output.confidence_set.retained.len(),
            platten.tiles.len(),
            out_dir.display()
        ),
        None => println!(
            "confset: empty set (every tile rejected); wrote confset.json in {}",
            out_dir.display()
        ),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cse_core::calibration::TileCalibration;

    fn tile_cal(tile_id: u64, lambda: Threshold) -> TileCalibration {
        TileCalibration {
            tile_id,
            alpha_prime: 0.02,
            q_star: 2.0,
            k: 20,
            lambda,
            n: 999,
        }
    }

    #[test]
    fn calibration_scores_rank_the_binding_tile_highest() {
        let result = CalibrationResult {
            alpha: 0.025,
            tiles: vec![
                tile_cal(0, Threshold::Value(0.030)),
                tile_cal(1, Threshold::Value(0.021)),
                tile_cal(2, Threshold::Value(0.021)),
            ],
            lambda_star: Threshold::Value(0.021),
            argmin_tile: Some(1),
        };
        let scores = calibration_scores(&result);
        assert_eq!(scores[1], 0.0);
        assert_eq!(scores[2], 0.0);
        assert!(scores[0] < 0.0);
    }

    #[test]
    fn sentinel_tiles_outrank_real_thresholds() {
        let result = CalibrationResult {
            alpha: 0.025,
            tiles: vec![
                tile_cal(0, Threshold::Value(0.030)),
                tile_cal(1, Threshold::RejectNothing),
            ],
            lambda_star: Threshold::RejectNothing,
            argmin_tile: None,
        };
        let scores = calibration_scores(&result);
        assert_eq!(scores[1], 0.0);
        assert_eq!(scores[0], f64::NEG_INFINITY);
    }

    #[test]
    fn adaptive_plan_defaults_are_conservative() {
        let config: RunConfig = from_json_str(
            &serde_json::json!({
                "family": {"kind": "normal_location", "dim": 1},
                "design": {"name": "ztest", "params": {"lambda": 0.025}},
                "grid": {
                    "lower": [-1.0],
                    "upper": [0.0],
                    "cells": [8],
                    "hypotheses": [{"axis": 0, "threshold": 0.0, "direction": "leq"}]
                },
                "sim_count": 100,
                "delta": 0.05,
                "master_seed": 7
            })
            .to_string(),
        )
        .unwrap();
        let plan = adaptive_plan(&config, None, 8);
        assert_eq!(plan.rounds, 0);
        assert_eq!(plan.budget, 2);
        assert_eq!(plan.sim_growth, 1.0);
        let plan = adaptive_plan(&config, Some(3), 2);
        assert_eq!(plan.rounds, 3);
        assert_eq!(plan.budget, 1);
    }
}
