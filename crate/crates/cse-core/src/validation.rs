//! Pointwise confidence bands for an operating characteristic over the
//! whole parameter region.
//!
//! Per tile: simulate at the sim point, count false rejections, wrap the
//! unknown rejection probability in an exact binomial (Clopper-Pearson)
//! bound, then push that bound across the tile with the optimized tilt
//! bound. The result is, for every theta, a (1 - delta) upper confidence
//! bound on the true Type I Error at theta; lower bands follow by symmetry.

use serde::{Deserialize, Serialize};

use crate::designs::Design;
use crate::engine::{run_batch, SeedSpec};
use crate::error::{Error, Result};
use crate::exec::map_collect;
use crate::grid::Platten;
use crate::model::{ModelFamily, ParamPoint};
use crate::special::beta_cdf;
use crate::tilt::{optimize_forward, BoundQuery};

/// Bisection steps for Beta quantiles: the bracket shrinks to 2^-40 < 1e-12,
/// below the resolution anyone reads a Type I Error bound at.
const QUANTILE_BISECTIONS: u32 = 40;

fn check_binomial_args(r: u64, n: u64, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("need at least one simulation"));
    }
    if r > n {
        return Err(Error::invalid(format!("{r} successes out of {n} trials")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    Ok(())
}

/// Beta(a, b) quantile by bisection. `round_up` picks which bracket end to
/// report, so callers keep a one-sided guarantee despite the finite
/// tolerance: upper bounds round up, lower bounds round down.
fn beta_quantile(p: f64, a: f64, b: f64, round_up: bool) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..QUANTILE_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if beta_cdf(mid, a, b) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if round_up {
        hi
    } else {
        lo
    }
}

/// Exact (1 - delta) upper confidence bound for a binomial proportion with
/// `r` successes in `n` trials: the 1 - delta quantile of Beta(r+1, n-r).
pub fn clopper_pearson_upper(r: u64, n: u64, delta: f64) -> Result<f64> {
    check_binomial_args(r, n, delta)?;
    if r == n {
        return Ok(1.0);
    }
    if r == 0 {
        // Beta(1, n) is a power distribution with explicit quantiles.
        return Ok(-(delta.powf(1.0 / n as f64) - 1.0));
    }
    Ok(beta_quantile(
        1.0 - delta,
        (r + 1) as f64,
        (n - r) as f64,
        true,
    ))
}

/// Exact (1 - delta) lower confidence bound: the delta quantile of
/// Beta(r, n-r+1), zero when nothing was observed.
pub fn clopper_pearson_lower(r: u64, n: u64, delta: f64) -> Result<f64> {
    check_binomial_args(r, n, delta)?;
    if r == 0 {
        return Ok(0.0);
    }
    if r == n {
        return Ok(delta.powf(1.0 / n as f64));
    }
    Ok(beta_quantile(delta, r as f64, (n - r + 1) as f64, false))
}

/// One-sided Hoeffding band for the mean of a [0, range_width]-bounded
/// score, clamped to the range. Distribution-free; looser than the binomial
/// bound but applies to non-indicator estimators.
pub fn hoeffding_upper(sample_mean: f64, n: u64, delta: f64, range_width: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("need at least one simulation"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    if !(range_width.is_finite() && range_width > 0.0) {
        return Err(Error::invalid(format!("range width {range_width} must be positive")));
    }
    if !(0.0..=range_width).contains(&sample_mean) {
        return Err(Error::invalid(format!(
            "mean {sample_mean} outside [0, {range_width}]"
        )));
    }
    let slack = (range_width * range_width * (1.0 / delta).ln() / (2.0 * n as f64)).sqrt();
    Ok((sample_mean + slack).min(range_width))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValidationSettings {
    /// Band miscoverage per tile.
    pub delta: f64,
    /// The design's fixed rejection threshold during validation.
    pub design_lambda: f64,
    /// Also compute the lower band (the upper band alone answers most
    /// validation questions at half the bound work).
    pub lower_band: bool,
}

/// Per-tile band pieces. `point_*` bound the error at the sim point;
/// `tile_*` extend them to the whole tile and are the values the band
/// reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileValidation {
    pub tile_id: u64,
    pub sim_point: Vec<f64>,
    pub n: u64,
    pub false_rejections: u64,
    pub point_upper: f64,
    pub tile_upper: f64,
    pub q_star: f64,
    pub point_lower: Option<f64>,
    pub tile_lower: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub delta: f64,
    pub design_lambda: f64,
    pub tiles: Vec<TileValidation>,
}

impl ValidationReport {
    /// The band's upper value at `theta`: the largest bound among tiles
    /// containing it (boundary points belong to every touching tile), or
    /// None outside the tiling.
    pub fn bound_at(&self, platten: &Platten, theta: &[f64]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for idx in platten.tiles_containing(theta) {
            let u = self.tiles[idx].tile_upper;
            best = Some(best.map_or(u, |b| b.max(u)));
        }
        best
    }
}

/// Validate a design over a platten: a (1 - delta) upper confidence band
/// on the probability of rejecting any true null, flat on each tile.
pub fn validate(
    platten: &Platten,
    design: &dyn Design,
    family: &ModelFamily,
    settings: ValidationSettings,
    seed: SeedSpec,
) -> Result<ValidationReport> {
    if !(settings.delta > 0.0 && settings.delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta {} outside (0, 1)",
            settings.delta
        )));
    }
    if !settings.design_lambda.is_finite() {
        return Err(Error::invalid("design lambda must be finite"));
    }
    if platten.tiles.is_empty() {
        return Err(Error::Empty("platten"));
    }
    design.check_family(family)?;

    let tiles: Vec<Result<TileValidation>> = map_collect(platten.tiles.len(), |i| {
        let tile = &platten.tiles[i];
        let batch = run_batch(
            design,
            family,
            tile,
            i as u64,
            seed,
            Some(settings.design_lambda),
        )?;
        let r = batch.false_rejections(tile.config_mask());
        let theta0 = ParamPoint::new(tile.sim_point.clone())?;
        let displacements = tile.vertex_displacements()?;

        let point_upper = clopper_pearson_upper(r, batch.n, settings.delta)?;
        let extended = optimize_forward(&BoundQuery {
            family,
            theta0: &theta0,
            vertices: &displacements,
            value: point_upper,
        })?;

        let (point_lower, tile_lower) = if settings.lower_band {
            let lower = clopper_pearson_lower(r, batch.n, settings.delta)?;
            // f >= 1 - U(1 - lower) everywhere on the tile: the upper
            // machinery applied to the complementary probability.
            let complement = optimize_forward(&BoundQuery {
                family,
                theta0: &theta0,
                vertices: &displacements,
                value: 1.0 - lower,
            })?;
            (Some(lower), Some(1.0 - complement.bound))
        } else {
            (None, None)
        };

        Ok(TileValidation {
            tile_id: i as u64,
            sim_point: tile.sim_point.clone(),
            n: batch.n,
            false_rejections: r,
            point_upper,
            tile_upper: extended.bound,
            q_star: extended.q_star,
            point_lower,
            tile_lower,
        })
    });

    Ok(ValidationReport {
        delta: settings.delta,
        design_lambda: settings.design_lambda,
        tiles: tiles.into_iter().collect::<Result<Vec<_>>>()?,
    })
}
