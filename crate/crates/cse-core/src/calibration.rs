//! Threshold calibration: choose the rejection cutoff from simulation so
//! the design is provably level-alpha over the whole null region.
//!
//! Each tile inverts the tilt bound to get a stricter pointwise level
//! alpha' < alpha, then takes the k-th smallest simulated statistic with
//! k = floor((N+1) alpha') as its threshold. The region-wide threshold is
//! the minimum over tiles: rejecting below it keeps the Type I Error at or
//! under alpha everywhere, with no asymptotics and no continuity
//! assumptions beyond the exponential-family model itself.

use std::cmp::Ordering;

use rand_chacha::rand_core::RngCore;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::designs::Design;
use crate::engine::{run_batch, SeedSpec, SimBatch, StreamDomain};
use crate::error::{Error, Result};
use crate::exec::map_collect;
use crate::grid::{Platten, Tile};
use crate::model::{ModelFamily, ParamPoint};
use crate::tilt::{optimize_inverse, BoundQuery, BoundResult};

/// A calibrated rejection cutoff. `RejectNothing` appears when the
/// simulation budget cannot support any rejection at the target level
/// (k = 0); it orders below every real threshold so that minima over tiles
/// stay conservative.
#[derive(Debug, Clone, Copy)]
pub enum Threshold {
    RejectNothing,
    Value(f64),
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::RejectNothing => None,
            Threshold::Value(x) => Some(x),
        }
    }

    pub fn is_reject_nothing(self) -> bool {
        matches!(self, Threshold::RejectNothing)
    }
}

impl PartialEq for Threshold {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Threshold {}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Threshold {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Threshold::RejectNothing, Threshold::RejectNothing) => Ordering::Equal,
            (Threshold::RejectNothing, Threshold::Value(_)) => Ordering::Less,
            (Threshold::Value(_), Threshold::RejectNothing) => Ordering::Greater,
            (Threshold::Value(a), Threshold::Value(b)) => a.total_cmp(b),
        }
    }
}

const REJECT_NOTHING_TOKEN: &str = "REJECT_NOTHING";

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::RejectNothing => serializer.serialize_str(REJECT_NOTHING_TOKEN),
            Threshold::Value(x) => serializer.serialize_f64(*x),
        }
    }
}

struct ThresholdVisitor;

impl Visitor<'_> for ThresholdVisitor {
    type Value = Threshold;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        write!(f, "a number or the string \"{REJECT_NOTHING_TOKEN}\"")
    }

    fn visit_f64<E: de::Error>(self, x: f64) -> std::result::Result<Threshold, E> {
        Ok(Threshold::Value(x))
    }

    fn visit_u64<E: de::Error>(self, x: u64) -> std::result::Result<Threshold, E> {
        Ok(Threshold::Value(x as f64))
    }

    fn visit_i64<E: de::Error>(self, x: i64) -> std::result::Result<Threshold, E> {
        Ok(Threshold::Value(x as f64))
    }

    fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<Threshold, E> {
        if s == REJECT_NOTHING_TOKEN {
            Ok(Threshold::RejectNothing)
        } else {
            Err(E::invalid_value(de::Unexpected::Str(s), &self))
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Threshold, D::Error> {
        d.deserialize_any(ThresholdVisitor)
    }
}

/// The k = floor((N+1) alpha') smallest statistic, the largest cutoff whose
/// rejection probability provably stays at or below alpha' at the sampling
/// parameter. k = 0 means even one rejection would overshoot the level.
pub fn pointwise_threshold(sorted_stats: &[f64], alpha_prime: f64) -> Result<(Threshold, u64)> {
    if sorted_stats.is_empty() {
        return Err(Error::Empty("statistics"));
    }
    if !(0.0..=1.0).contains(&alpha_prime) {
        return Err(Error::invalid(format!(
            "per-tile level {alpha_prime} outside [0, 1]"
        )));
    }
    debug_assert!(
        sorted_stats.windows(2).all(|w| w[0] <= w[1]),
        "statistics must be sorted ascending"
    );
    let n = sorted_stats.len() as u64;
    let k = ((n + 1) as f64 * alpha_prime).floor() as u64;
    if k < 1 {
        return Ok((Threshold::RejectNothing, 0));
    }
    let k = k.min(n);
    Ok((Threshold::Value(sorted_stats[(k - 1) as usize]), k))
}

/// The tile's shrunken level: the largest alpha' such that a rejection
/// probability of alpha' at the sim point is guaranteed at most alpha at
/// every corner (hence everywhere) of the tile.
pub fn tile_alpha_target(family: &ModelFamily, tile: &Tile, alpha: f64) -> Result<BoundResult> {
    let theta0 = ParamPoint::new(tile.sim_point.clone())?;
    let displacements = tile.vertex_displacements()?;
    optimize_inverse(&BoundQuery {
        family,
        theta0: &theta0,
        vertices: &displacements,
        value: alpha,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileCalibration {
    pub tile_id: u64,
    /// Shrunken level from inverting the tilt bound on this tile.
    pub alpha_prime: f64,
    pub q_star: f64,
    /// Order-statistic index floor((n+1) alpha'); 0 when no rejection fits.
    pub k: u64,
    pub lambda: Threshold,
    pub n: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha: f64,
    pub tiles: Vec<TileCalibration>,
    /// Region-wide calibrated threshold: the minimum over tiles.
    pub lambda_star: Threshold,
    /// Tile attaining the minimum (lowest id on ties); None when the budget
    /// supports no rejections anywhere.
    pub argmin_tile: Option<u64>,
}

/// Calibration output together with the per-tile simulation batches backing
/// it, which downstream diagnostics resample.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub result: CalibrationResult,
    pub batches: Vec<SimBatch>,
}

/// Calibrate a design over a platten at family-wise level alpha.
pub fn calibrate(
    platten: &Platten,
    design: &dyn Design,
    family: &ModelFamily,
    alpha: f64,
    seed: SeedSpec,
) -> Result<CalibrationRun> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if platten.tiles.is_empty() {
        return Err(Error::Empty("platten"));
    }
    design.check_family(family)?;

    let per_tile: Vec<Result<(TileCalibration, SimBatch)>> =
        map_collect(platten.tiles.len(), |i| {
            let tile = &platten.tiles[i];
            let target = tile_alpha_target(family, tile, alpha)?;
            let batch = run_batch(design, family, tile, i as u64, seed, None)?;
            let (lambda, k) = pointwise_threshold(&batch.stats, target.bound)?;
            Ok((
                TileCalibration {
                    tile_id: i as u64,
                    alpha_prime: target.bound,
                    q_star: target.q_star,
                    k,
                    lambda,
                    n: batch.n,
                },
                batch,
            ))
        });

    let mut tiles = Vec::with_capacity(platten.tiles.len());
    let mut batches = Vec::with_capacity(platten.tiles.len());
    for item in per_tile {
        let (cal, batch) = item?;
        tiles.push(cal);
        batches.push(batch);
    }

    let lambda_star = tiles
        .iter()
        .map(|t| t.lambda)
        .min()
        .expect("platten checked non-empty");
    let argmin_tile = if lambda_star.is_reject_nothing() {
        None
    } else {
        tiles.iter().find(|t| t.lambda == lambda_star).map(|t| t.tile_id)
    };

    Ok(CalibrationRun {
        result: CalibrationResult {
            alpha,
            tiles,
            lambda_star,
            argmin_tile,
        },
        batches,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapDiagnostic {
    pub reps: u64,
    /// Mean of alpha minus the achieved (empirical) level at the replicated
    /// threshold: the calibration slack left by discretization, tile
    /// geometry, and the min-over-tiles selection.
    pub mean_slack: f64,
    pub sd_slack: f64,
    pub slacks: Vec<f64>,
}

/// Bootstrap the calibration: re-draw each tile's statistics with
/// replacement, recompute every threshold and the region-wide minimum, and
/// measure the achieved level alpha - slack on the original sample. A mean
/// slack far above the discretization floor flags tiles that are too wide.
pub fn bootstrap_bias(
    result: &CalibrationResult,
    batches: &[SimBatch],
    reps: u64,
    seed: SeedSpec,
) -> Result<BootstrapDiagnostic> {
    if reps < 2 {
        return Err(Error::invalid("need at least two bootstrap replicates"));
    }
    if batches.len() != result.tiles.len() {
        return Err(Error::DimensionMismatch {
            expected: result.tiles.len(),
            got: batches.len(),
        });
    }

    let slacks: Vec<Result<f64>> = map_collect(reps as usize, |b| {
        let mut rng = seed.labeled_stream(StreamDomain::Bootstrap, b as u64);
        let mut best = Threshold::Value(f64::INFINITY);
        let mut argmin: Option<usize> = None;
        let mut resampled = Vec::new();
        for (i, (cal, batch)) in result.tiles.iter().zip(batches).enumerate() {
            let n = batch.stats.len();
            resampled.clear();
            resampled.extend(
                (0..n).map(|_| batch.stats[(rng.next_u64() % n as u64) as usize]),
            );
            resampled.sort_by(f64::total_cmp);
            let (lambda, _) = pointwise_threshold(&resampled, cal.alpha_prime)?;
            if lambda < best {
                best = lambda;
                argmin = Some(i);
            }
        }
        let achieved = match best {
            Threshold::RejectNothing => 0.0,
            Threshold::Value(lambda) => {
                batches[argmin.expect("some tile set a real threshold")].empirical_cdf(lambda)
            }
        };
        Ok(result.alpha - achieved)
    });
    let slacks = slacks.into_iter().collect::<Result<Vec<f64>>>()?;

    let mean = slacks.iter().sum::<f64>() / slacks.len() as f64;
    let var = slacks.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
        / (slacks.len() - 1) as f64;
    Ok(BootstrapDiagnostic {
        reps,
        mean_slack: mean,
        sd_slack: var.sqrt(),
        slacks,
    })
}

/// What the confidence set reports an interval for.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    /// One coordinate of theta.
    Coordinate { axis: usize },
    /// An affine functional of theta.
    Affine { coeffs: Vec<f64>, offset: f64 },
}

impl Estimand {
    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        match self {
            Estimand::Coordinate { axis } => {
                point.get(*axis).copied().ok_or(Error::DimensionMismatch {
                    expected: *axis + 1,
                    got: point.len(),
                })
            }
            Estimand::Affine { coeffs, offset } => {
                if coeffs.len() != point.len() {
                    return Err(Error::DimensionMismatch {
                        expected: coeffs.len(),
                        got: point.len(),
                    });
                }
                Ok(coeffs.iter().zip(point).map(|(c, x)| c * x).sum::<f64>() + offset)
            }
        }
    }
}

/// Tiles whose null the observed data fail to reject, plus the estimand's
/// range over them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub retained: Vec<u64>,
    /// [min, max] of the estimand over the retained tiles' corners; None
    /// when everything was rejected (an empty set is a legitimate answer).
    pub image: Option<(f64, f64)>,
}

/// Invert calibrated tests into a confidence set: keep tile i when the
/// observed statistic for its null is at or above that tile's threshold.
/// `observed_stats[i]` must be the statistic the design assigns the real
/// data under tile i's null (boundary-referenced designs shift per tile).
pub fn confidence_set(
    platten: &Platten,
    observed_stats: &[f64],
    thresholds: &[Threshold],
    estimand: &Estimand,
) -> Result<ConfidenceSet> {
    if observed_stats.len() != platten.tiles.len() {
        return Err(Error::DimensionMismatch {
            expected: platten.tiles.len(),
            got: observed_stats.len(),
        });
    }
    if thresholds.len() != platten.tiles.len() {
        return Err(Error::DimensionMismatch {
            expected: platten.tiles.len(),
            got: thresholds.len(),
        });
    }
    if observed_stats.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("observed statistic is NaN".into()));
    }

    let mut retained = Vec::new();
    let mut image: Option<(f64, f64)> = None;
    for (i, tile) in platten.tiles.iter().enumerate() {
        let keep = match thresholds[i] {
            Threshold::RejectNothing => true,
            Threshold::Value(lambda) => observed_stats[i] >= lambda,
        };
        if !keep {
            continue;
        }
        retained.push(i as u64);
        for vertex in tile.vertices()? {
            let value = estimand.evaluate(&vertex)?;
            image = Some(match image {
                None => (value, value),
                Some((lo, hi)) => (lo.min(value), hi.max(value)),
            });
        }
    }
    Ok(ConfidenceSet { retained, image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{ShiftedBoundaryZTest, ZTest};
    use crate::grid::{build_platten, Direction, NullHypothesis};
    use approx::assert_relative_eq;

    const NORMAL_1D: ModelFamily = ModelFamily::NormalLocation { dim: 1 };

    fn leq_zero() -> NullHypothesis {
        NullHypothesis {
            axis: 0,
            threshold: 0.0,
            direction: Direction::Leq,
        }
    }

    fn line_platten(tiles: usize, sims: u64) -> Platten {
        build_platten(&[-0.5], &[0.0], &[tiles], &[leq_zero()], sims).unwrap()
    }

    #[test]
    fn order_statistic_selection() {
        let stats = [0.1, 0.2, 0.3];
        let (lambda, k) = pointwise_threshold(&stats, 0.5).unwrap();
        assert_eq!(k, 2);
        assert_eq!(lambda, Threshold::Value(0.2));

        let ladder: Vec<f64> = (1..=999).map(|i| i as f64 / 1000.0).collect();
        let (lambda, k) = pointwise_threshold(&ladder, 0.025).unwrap();
        assert_eq!(k, 25);
        assert_relative_eq!(lambda.value().unwrap(), 0.025, max_relative = 1e-15);

        // Budget too small for any rejection.
        let short = [0.4; 10];
        let (lambda, k) = pointwise_threshold(&short, 0.05).unwrap();
        assert_eq!(k, 0);
        assert!(lambda.is_reject_nothing());

        // alpha' = 1 caps k at n.
        let (lambda, k) = pointwise_threshold(&stats, 1.0).unwrap();
        assert_eq!(k, 3);
        assert_eq!(lambda, Threshold::Value(0.3));
    }

    #[test]
    fn threshold_ordering_and_min() {
        assert!(Threshold::RejectNothing < Threshold::Value(f64::NEG_INFINITY));
        assert!(Threshold::Value(0.01) < Threshold::Value(0.02));
        let min = [
            Threshold::Value(0.03),
            Threshold::RejectNothing,
            Threshold::Value(0.01),
        ]
        .into_iter()
        .min()
        .unwrap();
        assert!(min.is_reject_nothing());
    }

    #[test]
    fn threshold_serde_round_trip() {
        let v = serde_json::to_string(&Threshold::Value(0.25)).unwrap();
        assert_eq!(v, "0.25");
        let s = serde_json::to_string(&Threshold::RejectNothing).unwrap();
        assert_eq!(s, "\"REJECT_NOTHING\"");
        for json in [v, s] {
            let back: Threshold = serde_json::from_str(&json).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), json);
        }
        // Integer JSON is accepted and lands on the float variant.
        assert_eq!(
            serde_json::from_str::<Threshold>("3").unwrap(),
            Threshold::Value(3.0)
        );
        assert!(serde_json::from_str::<Threshold>("\"other\"").is_err());
    }

    #[test]
    fn zero_extent_tile_keeps_full_level() {
        let tile = Tile::new(vec![0.0], vec![0.0], vec![true], 100).unwrap();
        let target = tile_alpha_target(&NORMAL_1D, &tile, 0.025).unwrap();
        assert_eq!(target.bound, 0.025);
        assert!(target.q_star.is_infinite());
    }

    #[test]
    fn wider_tiles_demand_stricter_levels() {
        let mut prev = 0.025;
        for half in [0.05, 0.1, 0.2] {
            let tile = Tile::new(vec![-0.5 - half], vec![-0.5 + half], vec![true], 100).unwrap();
            let target = tile_alpha_target(&NORMAL_1D, &tile, 0.025).unwrap();
            assert!(target.bound < prev, "half width {half}");
            assert!(target.bound > 0.0);
            prev = target.bound;
        }
    }

    #[test]
    fn calibrate_composes_per_tile_pieces() {
        let platten = line_platten(4, 2000);
        let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.025, SeedSpec { master_seed: 8 })
            .unwrap();
        let result = &run.result;
        assert_eq!(result.tiles.len(), 4);
        assert_eq!(run.batches.len(), 4);
        for (i, cal) in result.tiles.iter().enumerate() {
            assert_eq!(cal.tile_id, i as u64);
            assert!(cal.alpha_prime < 0.025);
            assert_eq!(cal.k, (2001.0 * cal.alpha_prime).floor() as u64);
            assert_eq!(cal.n, 2000);
            // The reported lambda is exactly the k-th order statistic of
            // the batch kept alongside.
            let expect = run.batches[i].stats[(cal.k - 1) as usize];
            assert_eq!(cal.lambda, Threshold::Value(expect));
            assert!(result.lambda_star <= cal.lambda);
        }
        let argmin = result.argmin_tile.unwrap() as usize;
        assert_eq!(result.tiles[argmin].lambda, result.lambda_star);
    }

    #[test]
    fn identical_tiles_tie_to_lowest_id() {
        // Hand-built platten with two copies of the same tile: common
        // random numbers make their thresholds exactly equal.
        let tile = Tile::new(vec![-0.15], vec![-0.05], vec![true], 500).unwrap();
        let platten = Platten {
            lower: vec![-0.15],
            upper: vec![-0.05],
            hypotheses: vec![leq_zero()],
            tiles: vec![tile.clone(), tile],
        };
        let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.05, SeedSpec { master_seed: 5 })
            .unwrap();
        assert_eq!(run.result.tiles[0].lambda, run.result.tiles[1].lambda);
        assert_eq!(run.result.argmin_tile, Some(0));
    }

    #[test]
    fn starved_budget_rejects_nothing() {
        let platten = line_platten(2, 10);
        let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.025, SeedSpec { master_seed: 2 })
            .unwrap();
        assert!(run.result.lambda_star.is_reject_nothing());
        assert_eq!(run.result.argmin_tile, None);
        for cal in &run.result.tiles {
            assert_eq!(cal.k, 0);
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_sized() {
        let platten = line_platten(4, 400);
        let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.05, SeedSpec { master_seed: 4 })
            .unwrap();
        let seed = SeedSpec { master_seed: 4 };
        let a = bootstrap_bias(&run.result, &run.batches, 25, seed).unwrap();
        let b = bootstrap_bias(&run.result, &run.batches, 25, seed).unwrap();
        assert_eq!(a.slacks, b.slacks);
        assert_eq!(a.reps, 25);
        assert_eq!(a.slacks.len(), 25);
        assert!(a.sd_slack >= 0.0);
        assert_relative_eq!(
            a.mean_slack,
            a.slacks.iter().sum::<f64>() / 25.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn bootstrap_slack_positive_and_falls_with_budget() {
        // Coarse budgets leave big discretization slack (k = floor((N+1)a')
        // rounds hard at small N); big budgets approach the geometric floor
        // alpha - alpha'.
        let seed = SeedSpec { master_seed: 12 };
        let slack_at = |sims: u64| {
            let platten = build_platten(&[-1.0], &[0.0], &[8], &[leq_zero()], sims).unwrap();
            let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.025, seed).unwrap();
            bootstrap_bias(&run.result, &run.batches, 200, seed)
                .unwrap()
                .mean_slack
        };
        let coarse = slack_at(50);
        let rich = slack_at(4000);
        assert!(coarse > 0.0, "coarse slack {coarse}");
        assert!(rich > 0.0, "rich slack {rich}");
        assert!(
            coarse > rich,
            "slack should fall with budget: {coarse} vs {rich}"
        );
    }

    #[test]
    fn confidence_set_inverts_boundary_tests() {
        // One-sided z-test inversion on [-1, 1]: with every tile's cutoff
        // at 0.025, tile (with upper edge e) is retained iff
        // 1 - Phi(x - e) >= 0.025, i.e. e >= x - z_{0.975}. The textbook
        // lower confidence limit is recovered to within one tile width.
        let platten = build_platten(&[-1.0], &[1.0], &[8], &[leq_zero()], 10).unwrap();
        // The hypothesis theta <= 0 drops tiles right of zero; rebuild with
        // a hypothesis covering the whole box so all 8 tiles survive.
        let all = build_platten(
            &[-1.0],
            &[1.0],
            &[8],
            &[NullHypothesis {
                axis: 0,
                threshold: 1.0,
                direction: Direction::Leq,
            }],
            10,
        )
        .unwrap();
        assert_eq!(platten.tiles.len(), 4);
        assert_eq!(all.tiles.len(), 8);

        let thresholds = vec![Threshold::Value(0.025); 8];
        let design = ShiftedBoundaryZTest;
        let estimand = Estimand::Coordinate { axis: 0 };
        let mut scratch = Vec::new();
        let mut observe = |x: f64| -> Vec<f64> {
            all.tiles
                .iter()
                .map(|tile| {
                    design
                        .tile_statistic(
                            &crate::model::OutcomeMatrix::ZScores(vec![x]),
                            tile,
                            &mut scratch,
                        )
                        .unwrap()
                })
                .collect()
        };

        let x = 2.0;
        let set = confidence_set(&all, &observe(x), &thresholds, &estimand).unwrap();
        // Edges run -0.75, -0.5, ..., 1.0; cutoff edge is 2 - 1.96 = 0.04.
        assert_eq!(set.retained, vec![4, 5, 6, 7]);
        let (lo, hi) = set.image.unwrap();
        assert_relative_eq!(lo, 0.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-12);
        let textbook = x - 1.959_963_984_540_054_2;
        assert!(lo <= textbook && textbook <= lo + 0.25);

        // Data far above the box rejects every tile; empty set is legal.
        let empty = confidence_set(&all, &observe(3.5), &thresholds, &estimand).unwrap();
        assert!(empty.retained.is_empty());
        assert!(empty.image.is_none());
    }

    #[test]
    fn reject_nothing_thresholds_always_retain() {
        let platten = line_platten(2, 10);
        let thresholds = vec![Threshold::RejectNothing; 2];
        let set = confidence_set(
            &platten,
            &[0.0, 0.0],
            &thresholds,
            &Estimand::Coordinate { axis: 0 },
        )
        .unwrap();
        assert_eq!(set.retained, vec![0, 1]);
        let (lo, hi) = set.image.unwrap();
        assert_relative_eq!(lo, -0.5, epsilon = 1e-12);
        assert_relative_eq!(hi, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn estimand_evaluation() {
        let affine = Estimand::Affine {
            coeffs: vec![1.0, -1.0],
            offset: 0.5,
        };
        assert_relative_eq!(affine.evaluate(&[2.0, 0.5]).unwrap(), 2.0, max_relative = 1e-15);
        assert!(affine.evaluate(&[1.0]).is_err());
        let coord = Estimand::Coordinate { axis: 1 };
        assert_eq!(coord.evaluate(&[5.0, 7.0]).unwrap(), 7.0);
        assert!(coord.evaluate(&[5.0]).is_err());
    }

    #[test]
    fn calibrated_threshold_bounds_true_error() {
        // The whole point: the analytic rejection rate of the z-test at the
        // calibrated threshold stays at or below alpha across the region.
        let platten = line_platten(8, 4000);
        let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.025, SeedSpec { master_seed: 9 })
            .unwrap();
        let lambda = run.result.lambda_star.value().unwrap();
        // P(S < lambda) at theta is Phi(theta + Phi^{-1}(lambda)); the
        // region's worst case is theta = 0. Monte Carlo noise means this
        // holds with high probability, not surely; the fixed seed freezes
        // a passing draw and guards regressions.
        let worst = crate::designs::ztest_rejection_rate(lambda, 0.0);
        assert!(worst <= 0.025 + 0.004, "worst-case rate {worst}");
        assert!(worst >= 0.01, "threshold uselessly conservative: {worst}");
    }

    #[test]
    fn invalid_inputs_rejected() {
        let platten = line_platten(2, 100);
        assert!(calibrate(&platten, &ZTest, &NORMAL_1D, 0.0, SeedSpec { master_seed: 0 }).is_err());
        assert!(calibrate(&platten, &ZTest, &NORMAL_1D, 1.0, SeedSpec { master_seed: 0 }).is_err());
        let run = calibrate(&platten, &ZTest, &NORMAL_1D, 0.05, SeedSpec { master_seed: 0 })
            .unwrap();
        assert!(bootstrap_bias(&run.result, &run.batches, 1, SeedSpec { master_seed: 0 }).is_err());
        assert!(bootstrap_bias(&run.result, &run.batches[..1], 10, SeedSpec { master_seed: 0 })
            .is_err());
        assert!(confidence_set(
            &platten,
            &[f64::NAN, 0.1],
            &[Threshold::Value(0.1), Threshold::Value(0.1)],
            &Estimand::Coordinate { axis: 0 }
        )
        .is_err());
        assert!(pointwise_threshold(&[], 0.5).is_err());
        assert!(pointwise_threshold(&[0.1], 1.5).is_err());
    }
}
