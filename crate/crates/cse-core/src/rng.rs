//! Low-level draw primitives on top of a counter-based word stream.
//!
//! Each primitive consumes a fixed number of 64-bit words regardless of the
//! values drawn, so a stream's position after a simulation depends only on
//! the model shape. That is what makes common-random-number reuse across
//! tiles exact: tile parameters shift the outcomes, never the randomness.

use rand_core::RngCore;

const U64_TO_UNIT: f64 = 1.0 / 9_007_199_254_740_992.0; // 2^-53

/// Uniform on [0, 1), one word.
pub(crate) fn unit_uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * U64_TO_UNIT
}

/// Uniform on (0, 1], one word; safe as a log argument.
fn unit_uniform_positive<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * U64_TO_UNIT
}

/// Standard normal via the cosine branch of Box-Muller, exactly two words.
///
/// The sine twin is discarded on purpose: pairing would make the number of
/// words per draw depend on draw parity, complicating stream accounting for
/// no measurable cost at this crate's batch sizes.
pub(crate) fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1 = unit_uniform_positive(rng);
    let u2 = unit_uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_stays_in_half_open_unit_interval() {
        let mut rng = ChaCha8Rng::from_seed([7u8; 32]);
        for _ in 0..10_000 {
            let u = unit_uniform(&mut rng);
            assert!((0.0..1.0).contains(&u));
            let v = unit_uniform_positive(&mut rng);
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn normal_moments_within_monte_carlo_error() {
        let mut rng = ChaCha8Rng::from_seed([3u8; 32]);
        let n = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // 4 standard errors: se(mean) = 1/sqrt(n), se(var) ~ sqrt(2/n).
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn normal_consumes_exactly_two_words() {
        let mut a = ChaCha8Rng::from_seed([9u8; 32]);
        let mut b = ChaCha8Rng::from_seed([9u8; 32]);
        let _ = standard_normal(&mut a);
        b.next_u64();
        b.next_u64();
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
