//! Trial designs: from simulated outcomes to per-hypothesis test statistics.
//!
//! Every design reports one statistic per null hypothesis on a common scale
//! where *smaller favors rejection* (p-value-like). Hypothesis j is rejected
//! when its statistic falls strictly below the threshold lambda, so the
//! rejection sets are automatically nested as lambda moves. The scalar tile
//! statistic used for calibration is the smallest per-hypothesis statistic:
//! some null is rejected iff that minimum is below lambda.

use crate::error::{Error, Result};
use crate::grid::Tile;
use crate::model::{ModelFamily, OutcomeMatrix};
use crate::special::{beta_cdf, norm_cdf, norm_sf, sigmoid};

pub trait Design: Send + Sync {
    fn name(&self) -> &'static str;

    fn hypothesis_count(&self) -> usize;

    /// Whether `sample_outcomes` must keep per-subject rows instead of
    /// sufficient counts (stage-aware designs need draw order).
    fn needs_raw_outcomes(&self) -> bool {
        false
    }

    /// Reject combinations of design and model family that cannot be run.
    fn check_family(&self, family: &ModelFamily) -> Result<()>;

    /// Write one statistic per hypothesis into `out` (cleared first).
    /// Smaller favors rejection; +inf marks a hypothesis the realized data
    /// cannot reject (e.g. an arm that was not selected for stage two).
    fn hypothesis_stats(&self, outcomes: &OutcomeMatrix, out: &mut Vec<f64>) -> Result<()>;

    /// Scalar statistic whose sub-lambda event is "some null rejected".
    fn statistic(&self, outcomes: &OutcomeMatrix, scratch: &mut Vec<f64>) -> Result<f64> {
        self.hypothesis_stats(outcomes, scratch)?;
        scratch
            .iter()
            .copied()
            .min_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
            .ok_or(Error::Empty("hypothesis statistics"))
    }

    /// Statistic for simulations attributed to a specific tile. Most designs
    /// ignore the tile; boundary-referenced tests (confidence-set inversion)
    /// shift by the tile's edge.
    fn tile_statistic(
        &self,
        outcomes: &OutcomeMatrix,
        _tile: &Tile,
        scratch: &mut Vec<f64>,
    ) -> Result<f64> {
        self.statistic(outcomes, scratch)
    }

    /// Bit j set iff hypothesis j is rejected at threshold `lambda`.
    fn rejection_word(
        &self,
        outcomes: &OutcomeMatrix,
        lambda: f64,
        scratch: &mut Vec<f64>,
    ) -> Result<u64> {
        self.hypothesis_stats(outcomes, scratch)?;
        debug_assert!(scratch.len() <= 64);
        Ok(scratch
            .iter()
            .enumerate()
            .fold(0u64, |w, (j, &s)| if s < lambda { w | (1 << j) } else { w }))
    }
}

/// One-sided z-test of theta <= 0 from a single unit-variance observation:
/// the statistic is the upper-tail p-value 1 - Phi(x).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZTest;

impl Design for ZTest {
    fn name(&self) -> &'static str {
        "ztest"
    }

    fn hypothesis_count(&self) -> usize {
        1
    }

    fn check_family(&self, family: &ModelFamily) -> Result<()> {
        match family {
            ModelFamily::NormalLocation { dim: 1 } => Ok(()),
            other => Err(Error::DesignMismatch(format!(
                "ztest needs a 1-dimensional normal location family, got {other:?}"
            ))),
        }
    }

    fn hypothesis_stats(&self, outcomes: &OutcomeMatrix, out: &mut Vec<f64>) -> Result<()> {
        let x = single_z(outcomes)?;
        out.clear();
        out.push(norm_sf(x));
        Ok(())
    }
}

/// Probability that a one-sided z-test with statistic 1 - Phi(X), X ~
/// N(theta, 1), rejects at threshold lambda: Phi(theta + Phi^{-1}(lambda)).
pub fn ztest_rejection_rate(lambda: f64, theta: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda >= 1.0 {
        return 1.0;
    }
    norm_cdf(theta + crate::special::norm_quantile(lambda))
}

/// z-test variant for confidence-set inversion: each tile tests the null
/// that its own upper edge is the true mean, so the statistic is
/// 1 - Phi(x - edge). Simulations are drawn at the tile's sim point, making
/// the tile statistic's null distribution conservative for every point in
/// the tile at or below the edge.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShiftedBoundaryZTest;

impl Design for ShiftedBoundaryZTest {
    fn name(&self) -> &'static str {
        "boundary_ztest"
    }

    fn hypothesis_count(&self) -> usize {
        1
    }

    fn check_family(&self, family: &ModelFamily) -> Result<()> {
        ZTest.check_family(family)
    }

    fn hypothesis_stats(&self, outcomes: &OutcomeMatrix, out: &mut Vec<f64>) -> Result<()> {
        ZTest.hypothesis_stats(outcomes, out)
    }

    fn tile_statistic(
        &self,
        outcomes: &OutcomeMatrix,
        tile: &Tile,
        _scratch: &mut Vec<f64>,
    ) -> Result<f64> {
        let x = single_z(outcomes)?;
        let edge = tile.upper[0];
        Ok(norm_sf(x - edge))
    }
}

/// Independent binomial arms with conjugate Beta priors. Arm i tests the
/// null p_i <= p0_i; its statistic is the posterior probability of the null,
/// I_{p0_i}(a0 + y_i, b0 + n_i - y_i), which is small exactly when the data
/// favor the alternative.
#[derive(Debug, Clone)]
pub struct MultiArmBetaBinomial {
    /// Beta(a0, b0) prior shared across arms.
    pub prior: (f64, f64),
    /// Null boundary per arm, on the log-odds scale of the model parameter.
    pub null_log_odds: Vec<f64>,
}

impl MultiArmBetaBinomial {
    pub fn new(prior: (f64, f64), null_log_odds: Vec<f64>) -> Result<Self> {
        if !(prior.0.is_finite() && prior.0 > 0.0 && prior.1.is_finite() && prior.1 > 0.0) {
            return Err(Error::invalid("Beta prior parameters must be positive"));
        }
        if null_log_odds.is_empty() {
            return Err(Error::Empty("null log odds"));
        }
        if null_log_odds.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite null log odds"));
        }
        Ok(MultiArmBetaBinomial { prior, null_log_odds })
    }
}

impl Design for MultiArmBetaBinomial {
    fn name(&self) -> &'static str {
        "multiarm_beta_binomial"
    }

    fn hypothesis_count(&self) -> usize {
        self.null_log_odds.len()
    }

    fn check_family(&self, family: &ModelFamily) -> Result<()> {
        match family {
            ModelFamily::BernoulliArms { sizes } if sizes.len() == self.null_log_odds.len() => {
                Ok(())
            }
            other => Err(Error::DesignMismatch(format!(
                "multiarm design with {} arms cannot run on {other:?}",
                self.null_log_odds.len()
            ))),
        }
    }

    fn hypothesis_stats(&self, outcomes: &OutcomeMatrix, out: &mut Vec<f64>) -> Result<()> {
        let (successes, sizes) = match outcomes {
            OutcomeMatrix::ArmCounts { successes, sizes } => (successes, sizes),
            other => {
                return Err(Error::DesignMismatch(format!(
                    "multiarm design needs arm counts, got {other:?}"
                )))
            }
        };
        if successes.len() != self.null_log_odds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.null_log_odds.len(),
                got: successes.len(),
            });
        }
        let (a0, b0) = self.prior;
        out.clear();
        for ((&y, &n), &t0) in successes.iter().zip(sizes).zip(&self.null_log_odds) {
            let p0 = sigmoid(t0);
            out.push(beta_cdf(p0, a0 + y as f64, b0 + (n - y) as f64));
        }
        Ok(())
    }
}

/// Drop-the-loser phase II/III template: three Bernoulli arms, arm 0 the
/// control. Stage one enrolls `stage_one` subjects per arm, the treatment
/// arm with more stage-one successes continues (ties keep arm 1), and the
/// final pooled one-sided two-proportion z-test compares the selected arm
/// against control over all subjects from both stages. The hypothesis for
/// the unselected arm gets statistic +inf: the realized trial carries no
/// evidence against it.
#[derive(Debug, Clone, Copy)]
pub struct TwoStageSelection {
    pub stage_one: u64,
    pub stage_two: u64,
}

impl TwoStageSelection {
    pub fn new(stage_one: u64, stage_two: u64) -> Result<Self> {
        if stage_one == 0 || stage_two == 0 {
            return Err(Error::invalid("both stages need at least one subject"));
        }
        Ok(TwoStageSelection { stage_one, stage_two })
    }

    pub fn subjects_per_arm(&self) -> u64 {
        self.stage_one + self.stage_two
    }

    /// Selected treatment arm (1 or 2) from stage-one rows.
    pub fn select(&self, rows: &[Vec<u8>]) -> usize {
        let s1 = self.stage_one as usize;
        let wins = |arm: usize| rows[arm][..s1].iter().map(|&b| b as u64).sum::<u64>();
        if wins(2) > wins(1) {
            2
        } else {
            1
        }
    }

    /// Pooled one-sided two-proportion z statistic, selected arm vs control,
    /// over all subjects of both stages. A degenerate pooled rate (all
    /// successes or all failures) carries no direction, so z = 0 there.
    fn pooled_z(&self, rows: &[Vec<u8>], selected: usize) -> f64 {
        let n = self.subjects_per_arm() as f64;
        let count = |arm: usize| rows[arm].iter().map(|&b| b as u64).sum::<u64>() as f64;
        let (y_sel, y_ctl) = (count(selected), count(0));
        let pool = (y_sel + y_ctl) / (2.0 * n);
        if pool <= 0.0 || pool >= 1.0 {
            return 0.0;
        }
        let se = (pool * (1.0 - pool) * (2.0 / n)).sqrt();
        (y_sel / n - y_ctl / n) / se
    }
}

impl Design for TwoStageSelection {
    fn name(&self) -> &'static str {
        "two_stage_selection"
    }

    fn hypothesis_count(&self) -> usize {
        2
    }

    fn needs_raw_outcomes(&self) -> bool {
        true
    }

    fn check_family(&self, family: &ModelFamily) -> Result<()> {
        let per_arm = self.subjects_per_arm();
        match family {
            ModelFamily::BernoulliArms { sizes }
                if sizes.len() == 3 && sizes.iter().all(|&n| n == per_arm) =>
            {
                Ok(())
            }
            other => Err(Error::DesignMismatch(format!(
                "two-stage selection needs three Bernoulli arms of {per_arm} subjects, got {other:?}"
            ))),
        }
    }

    fn hypothesis_stats(&self, outcomes: &OutcomeMatrix, out: &mut Vec<f64>) -> Result<()> {
        let rows = match outcomes {
            OutcomeMatrix::ArmRows(rows) => rows,
            other => {
                return Err(Error::DesignMismatch(format!(
                    "two-stage selection needs per-subject rows, got {other:?}"
                )))
            }
        };
        let per_arm = self.subjects_per_arm() as usize;
        if rows.len() != 3 || rows.iter().any(|r| r.len() != per_arm) {
            return Err(Error::DesignMismatch(format!(
                "expected 3 arm rows of {per_arm} subjects"
            )));
        }
        let selected = self.select(rows);
        let p_value = norm_sf(self.pooled_z(rows, selected));
        out.clear();
        out.extend([f64::INFINITY, f64::INFINITY]);
        out[selected - 1] = p_value;
        Ok(())
    }
}

fn single_z(outcomes: &OutcomeMatrix) -> Result<f64> {
    match outcomes {
        OutcomeMatrix::ZScores(z) if z.len() == 1 => Ok(z[0]),
        other => Err(Error::DesignMismatch(format!(
            "expected a single z-score, got {other:?}"
        ))),
    }
}
