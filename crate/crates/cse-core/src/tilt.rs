//! The tilt bound: transferring a pointwise error value to a neighborhood.
//!
//! Let f(theta) = E_theta[F] for an indicator-like F in [0, 1], and suppose
//! f(theta0) <= a is known (say, from simulation at theta0). For any tilt
//! exponent q > 1 the bound
//!
//! ```text
//! f(theta0 + v) <= a^(1 - 1/q) * exp( psi(theta0, v, q)/q - psi(theta0, v, 1) )
//! ```
//!
//! holds, where psi is the tilt cumulant from [`crate::model`]. The right
//! side is what [`forward_bound`] computes. Solving it for `a` instead gives
//! [`inverse_bound`]: the pointwise level one may spend at theta0 so that the
//! transferred level anywhere in the region stays at alpha.
//!
//! Two structural facts drive the optimizers. Over a hyperrectangle of
//! displacements the bound's inner extremum over v is attained at a vertex
//! (the exponent is convex in v), so regions enter as vertex lists. And as a
//! function of q the vertex-maximized bound is quasi-convex with a unique
//! minimizer, so a golden-section search in log(q - 1) finds it without
//! derivative information.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelFamily, ParamPoint};

/// Golden-section search range for q - 1. Below the lower edge the bound is
/// numerically 1 regardless of the data; above the upper edge the exponent
/// ratio q/(q-1) is flat to double precision.
const Q_MINUS_ONE_LO: f64 = 1e-6;
const Q_MINUS_ONE_HI: f64 = 1e7;
const GOLDEN_MAX_ITERS: usize = 200;
/// Relative tolerance on the objective; checked only after the bracket has
/// collapsed enough that a symmetric early tie cannot stall the search.
const GOLDEN_REL_TOL: f64 = 1e-10;
const GOLDEN_MIN_ITERS: usize = 64;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// A region-transfer problem: carry `value` (an error rate at `theta0`) to
/// the hyperrectangle spanned by `vertices`, given as displacements from
/// `theta0`.
#[derive(Debug, Clone)]
pub struct BoundQuery<'a> {
    pub family: &'a ModelFamily,
    pub theta0: &'a ParamPoint,
    pub vertices: &'a [Vec<f64>],
    pub value: f64,
}

/// An optimized bound, the exponent that attained it, and which vertex was
/// binding there. `q_star` is infinite exactly when every displacement is
/// zero, where the q -> infinity limit recovers `value` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub bound: f64,
    pub q_star: f64,
    pub binding_vertex: usize,
}

fn check_tilt_args(family: &ModelFamily, theta0: &ParamPoint, v: &[f64]) -> Result<()> {
    if theta0.dim() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            got: theta0.dim(),
        });
    }
    if v.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// log of the forward bound, without the final clamp at 1. Kept in log space
/// so enormous tilts (q near 1e7) stay finite and comparable.
fn log_forward(
    family: &ModelFamily,
    theta0: &ParamPoint,
    v: &[f64],
    q: f64,
    ln_a: f64,
) -> Result<f64> {
    let psi_q = family.psi(theta0, v, q)?;
    let psi_1 = family.psi(theta0, v, 1.0)?;
    Ok((1.0 - 1.0 / q) * ln_a + psi_q / q - psi_1)
}

/// log of the inverse bound: q/(q-1) * (ln alpha - psi(q)/q + psi(1)).
fn log_inverse(
    family: &ModelFamily,
    theta0: &ParamPoint,
    v: &[f64],
    q: f64,
    ln_alpha: f64,
) -> Result<f64> {
    let psi_q = family.psi(theta0, v, q)?;
    let psi_1 = family.psi(theta0, v, 1.0)?;
    Ok(q / (q - 1.0) * (ln_alpha - psi_q / q + psi_1))
}

/// Upper bound on f(theta0 + v) given f(theta0) <= a, at a fixed exponent
/// q >= 1. Clamped above at 1. At q = 1 the bound degenerates to 1 for any
/// positive a; a = 0 transfers as 0.
pub fn forward_bound(
    family: &ModelFamily,
    theta0: &ParamPoint,
    v: &[f64],
    q: f64,
    a: f64,
) -> Result<f64> {
    check_tilt_args(family, theta0, v)?;
    if !(q.is_finite() && q >= 1.0) {
        return Err(Error::invalid(format!("forward bound needs q >= 1, got {q}")));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("value {a} outside [0, 1]")));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    Ok(log_forward(family, theta0, v, q, a.ln())?.exp().min(1.0))
}

/// The level to spend at theta0 so that the forward transfer at exponent q
/// lands at alpha on displacement v: `forward_bound(inverse_bound(alpha)) =
/// alpha` algebraically. Requires q > 1; alpha = 0 maps to 0.
pub fn inverse_bound(
    family: &ModelFamily,
    theta0: &ParamPoint,
    v: &[f64],
    q: f64,
    alpha: f64,
) -> Result<f64> {
    check_tilt_args(family, theta0, v)?;
    if !(q.is_finite() && q > 1.0) {
        return Err(Error::invalid(format!("inverse bound needs q > 1, got {q}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    Ok(log_inverse(family, theta0, v, q, alpha.ln())?.exp().min(1.0))
}

/// Forward transfer for a statistic with range [lo, hi] instead of [0, 1]:
/// rescale, bound, and map back.
pub fn rescale_bounded(
    family: &ModelFamily,
    theta0: &ParamPoint,
    v: &[f64],
    q: f64,
    a: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("bad range [{lo}, {hi}]")));
    }
    if !(lo..=hi).contains(&a) {
        return Err(Error::invalid(format!("value {a} outside [{lo}, {hi}]")));
    }
    let unit = forward_bound(family, theta0, v, q, (a - lo) / (hi - lo))?;
    Ok(lo + (hi - lo) * unit)
}

/// Lower bound on f(theta0 + v) given f(theta0) >= a, by transferring the
/// complement: f >= 1 - U(1 - a).
pub fn lower_bound(
    family: &ModelFamily,
    theta0: &ParamPoint,
    v: &[f64],
    q: f64,
    a: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("value {a} outside [0, 1]")));
    }
    Ok(1.0 - forward_bound(family, theta0, v, q, 1.0 - a)?)
}

/// Pinsker-style baseline: f(theta0 + v) <= a + sqrt(KL/2), where KL is the
/// divergence between the displaced and base distributions.
pub fn pinsker_bound(a: f64, kl: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid(format!("value {a} outside [0, 1]")));
    }
    if !(kl.is_finite() && kl >= 0.0) {
        return Err(Error::invalid(format!("KL divergence {kl} must be >= 0")));
    }
    Ok((a + (kl / 2.0).sqrt()).min(1.0))
}

/// Second-order Taylor baseline: f(theta0) + <grad f, v> + c |v|^2 / 2 with
/// c an upper bound on the Hessian operator norm over the segment.
pub fn taylor_bound(a: f64, grad_dot_v: f64, hessian_sup: f64, v_norm_sq: f64) -> f64 {
    a + grad_dot_v + 0.5 * hessian_sup * v_norm_sq
}

fn validate_query(query: &BoundQuery) -> Result<()> {
    if query.vertices.is_empty() {
        return Err(Error::Empty("vertex list"));
    }
    for v in query.vertices {
        check_tilt_args(query.family, query.theta0, v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite displacement"));
        }
    }
    if !(0.0..=1.0).contains(&query.value) {
        return Err(Error::invalid(format!("value {} outside [0, 1]", query.value)));
    }
    Ok(())
}

fn all_zero(vertices: &[Vec<f64>]) -> bool {
    vertices.iter().all(|v| v.iter().all(|&x| x == 0.0))
}

/// Golden-section minimization of g over [lo, hi]; returns (argmin, min).
/// Assumes g is quasi-convex. Runs a fixed shrink phase before allowing the
/// objective-tolerance early exit, because a quasi-convex profile can tie at
/// the two probes long before the bracket is small.
fn golden_min(lo0: f64, hi0: f64, mut g: impl FnMut(f64) -> f64) -> (f64, f64) {
    let (mut lo, mut hi) = (lo0, hi0);
    let mut b = hi - INV_PHI * (hi - lo);
    let mut c = lo + INV_PHI * (hi - lo);
    let (mut gb, mut gc) = (g(b), g(c));
    for iter in 0..GOLDEN_MAX_ITERS {
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if iter >= GOLDEN_MIN_ITERS {
            let scale = gb.abs().max(gc.abs()).max(1.0);
            if (gb - gc).abs() <= GOLDEN_REL_TOL * scale {
                break;
            }
        }
        if gb <= gc {
            hi = c;
            c = b;
            gc = gb;
            b = hi - INV_PHI * (hi - lo);
            gb = g(b);
        } else {
            lo = b;
            b = c;
            gb = gc;
            c = lo + INV_PHI * (hi - lo);
            gc = g(c);
        }
    }
    if gb <= gc {
        (b, gb)
    } else {
        (c, gc)
    }
}

/// Minimize over q the vertex-maximized forward bound.
///
/// Works on the unclamped log objective: the clamp at 1 would flatten the
/// profile's shoulders and defeat the quasi-convexity the search relies on.
/// The search interval's endpoints are checked as candidates because for
/// bounded families the objective can keep improving toward q = infinity, in
/// which case the upper endpoint stands in (any q gives a valid bound, so
/// this costs only slack, never correctness).
pub fn optimize_forward(query: &BoundQuery) -> Result<BoundResult> {
    validate_query(query)?;
    let a = query.value;
    if a == 0.0 || a == 1.0 {
        return Ok(BoundResult {
            bound: a,
            q_star: 1.0,
            binding_vertex: 0,
        });
    }
    if all_zero(query.vertices) {
        // a^(1 - 1/q) decreases to a as q grows; the infimum is the limit.
        return Ok(BoundResult {
            bound: a,
            q_star: f64::INFINITY,
            binding_vertex: 0,
        });
    }
    let ln_a = a.ln();
    let objective = |u: f64| -> f64 {
        let q = 1.0 + u.exp();
        query
            .vertices
            .iter()
            .map(|v| log_forward(query.family, query.theta0, v, q, ln_a).expect("validated"))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (u_lo, u_hi) = (Q_MINUS_ONE_LO.ln(), Q_MINUS_ONE_HI.ln());
    let (u_star, g_star) = golden_min(u_lo, u_hi, objective);
    let mut best = (u_star, g_star);
    for endpoint in [u_lo, u_hi] {
        let g = objective(endpoint);
        if g < best.1 {
            best = (endpoint, g);
        }
    }
    let q_star = 1.0 + best.0.exp();
    let binding_vertex = argmax_vertex(query, q_star, ln_a)?;
    Ok(BoundResult {
        bound: best.1.exp().min(1.0),
        q_star,
        binding_vertex,
    })
}

fn argmax_vertex(query: &BoundQuery, q: f64, ln_a: f64) -> Result<usize> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in query.vertices.iter().enumerate() {
        let g = log_forward(query.family, query.theta0, v, q, ln_a)?;
        if g > best.1 {
            best = (i, g);
        }
    }
    Ok(best.0)
}

/// Maximize over q the vertex-minimized inverse bound: the largest pointwise
/// level alpha' spendable at theta0 such that the transferred level at every
/// vertex stays at `query.value` (the target alpha). Always <= alpha, with
/// equality exactly when every displacement is zero.
pub fn optimize_inverse(query: &BoundQuery) -> Result<BoundResult> {
    validate_query(query)?;
    let alpha = query.value;
    if alpha == 0.0 {
        return Ok(BoundResult {
            bound: 0.0,
            q_star: 1.0,
            binding_vertex: 0,
        });
    }
    if all_zero(query.vertices) {
        return Ok(BoundResult {
            bound: alpha,
            q_star: f64::INFINITY,
            binding_vertex: 0,
        });
    }
    let ln_alpha = alpha.ln();
    // Negated for the minimizer; the inner extremum over vertices is a min.
    let objective = |u: f64| -> f64 {
        let q = 1.0 + u.exp();
        -query
            .vertices
            .iter()
            .map(|v| log_inverse(query.family, query.theta0, v, q, ln_alpha).expect("validated"))
            .fold(f64::INFINITY, f64::min)
    };
    let (u_lo, u_hi) = (Q_MINUS_ONE_LO.ln(), Q_MINUS_ONE_HI.ln());
    let (u_star, neg_g) = golden_min(u_lo, u_hi, objective);
    let mut best = (u_star, neg_g);
    for endpoint in [u_lo, u_hi] {
        let g = objective(endpoint);
        if g < best.1 {
            best = (endpoint, g);
        }
    }
    let q_star = 1.0 + best.0.exp();
    let mut binding = (0usize, f64::INFINITY);
    for (i, v) in query.vertices.iter().enumerate() {
        let g = log_inverse(query.family, query.theta0, v, q_star, ln_alpha)?;
        if g < binding.1 {
            binding = (i, g);
        }
    }
    Ok(BoundResult {
        bound: (-best.1).exp().min(1.0),
        q_star,
        binding_vertex: binding.0,
    })
}
