//! Log-space probability arithmetic.
//!
//! Every probability in the engine is carried as a natural log. Zero
//! probability is the explicit sentinel [`NEG_INF`] so exact oracles can tell
//! "impossible" apart from "merely unlikely".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log of probability zero.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Positive slack tolerated on a log-probability from accumulated rounding.
pub const POSITIVE_SLACK: f64 = 1e-12;

/// A natural-log probability: finite and `<= 0` (up to [`POSITIVE_SLACK`]), or [`NEG_INF`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LogProb(f64);

impl LogProb {
    pub const IMPOSSIBLE: LogProb = LogProb(NEG_INF);
    pub const CERTAIN: LogProb = LogProb(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::Data("log-probability is NaN".into()));
        }
        if value > POSITIVE_SLACK {
            return Err(Error::Data(format!("log-probability {value} is positive")));
        }
        Ok(LogProb(value))
    }

    /// Log of a probability in `[0, 1]`.
    pub fn from_prob(p: f64) -> Result<Self> {
        if !(0.0..=1.0 + POSITIVE_SLACK).contains(&p) {
            return Err(Error::Data(format!("probability {p} outside [0, 1]")));
        }
        Ok(LogProb(p.ln()))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    #[inline]
    pub fn is_impossible(self) -> bool {
        self.0 == NEG_INF
    }
}

impl TryFrom<f64> for LogProb {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        LogProb::new(value)
    }
}

impl From<LogProb> for f64 {
    fn from(lp: LogProb) -> f64 {
        lp.0
    }
}

/// Product of two probabilities.
impl std::ops::Add for LogProb {
    type Output = LogProb;

    fn add(self, rhs: LogProb) -> LogProb {
        LogProb(self.0 + rhs.0)
    }
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == NEG_INF {
        return NEG_INF;
    }
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(v)` with max-shift stabilization.
///
/// Returns exactly [`NEG_INF`] iff every input is [`NEG_INF`].
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Usage("log_sum_exp of an empty list".into()));
    }
    Ok(log_sum_exp_nonempty(values))
}

#[inline]
pub(crate) fn log_sum_exp_nonempty(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF || max == f64::INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax of a logit vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp_nonempty(logits);
    logits.iter().map(|&z| z - lse).collect()
}

/// Softmax of a logit vector. Invariant to adding a constant to every logit.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(NEG_INF, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Index of the maximum, breaking ties toward the lowest index.
///
/// Every entry within `tie_tolerance` of the maximum counts as tied.
pub fn argmax_with_ties(scores: &[f64], tie_tolerance: f64) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Usage("argmax of an empty list".into()));
    }
    if tie_tolerance.is_nan() || tie_tolerance < 0.0 {
        return Err(Error::Usage(format!("tie tolerance {tie_tolerance} must be >= 0")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("argmax over a NaN score".into()));
    }
    let max = scores.iter().copied().fold(NEG_INF, f64::max);
    // `max - tol` is NaN-free because max is never NaN; -inf - tol = -inf.
    let floor = max - tie_tolerance;
    Ok(scores.iter().position(|&s| s >= floor).unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halves_sum_to_one() {
        let v = log_sum_exp(&[0.5f64.ln(), 0.5f64.ln()]).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn all_impossible_stays_impossible() {
        assert_eq!(log_sum_exp(&[NEG_INF, NEG_INF]).unwrap(), NEG_INF);
        assert_eq!(log_add_exp(NEG_INF, NEG_INF), NEG_INF);
    }

    #[test]
    fn matches_naive_sum_at_small_magnitudes() {
        let naive = ((-1.0f64).exp() + (-2.0f64).exp() + (-3.0f64).exp()).ln();
        let v = log_sum_exp(&[-1.0, -2.0, -3.0]).unwrap();
        assert!((v - naive).abs() < 1e-12);
    }

    #[test]
    fn empty_is_usage_error() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn survives_large_magnitudes() {
        let v = log_sum_exp(&[-1234.0, -1232.0]).unwrap();
        let expected = -1232.0 + (1.0 + (-2.0f64).exp()).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!(((-1234.0f64).exp() + (-1232.0f64).exp()).ln().is_infinite());
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_with_ties(&[1.0, 3.0, 2.0], 0.0).unwrap(), 1);
        assert_eq!(argmax_with_ties(&[2.0, 2.0], 0.0).unwrap(), 0);
        assert_eq!(argmax_with_ties(&[5.0, 5.0 + 1e-12, 4.0], 1e-9).unwrap(), 0);
        assert_eq!(argmax_with_ties(&[NEG_INF, NEG_INF], 0.0).unwrap(), 0);
        assert!(argmax_with_ties(&[], 0.0).is_err());
        assert!(argmax_with_ties(&[1.0], -1.0).is_err());
    }

    #[test]
    fn logprob_guards() {
        assert!(LogProb::new(f64::NAN).is_err());
        assert!(LogProb::new(0.1).is_err());
        assert!(LogProb::new(1e-13).is_ok());
        assert!(LogProb::IMPOSSIBLE.is_impossible());
        let lp: LogProb = serde_json::from_str("-0.5").unwrap();
        assert_eq!(lp.value(), -0.5);
        assert!(serde_json::from_str::<LogProb>("0.5").is_err());
    }

    proptest! {
        #[test]
        fn singleton_is_identity(x in -500.0f64..500.0) {
            prop_assert_eq!(log_sum_exp(&[x]).unwrap(), x);
        }

        #[test]
        fn permutation_invariant(mut xs in prop::collection::vec(-50.0f64..50.0, 1..12), seed in any::<u64>()) {
            let a = log_sum_exp(&xs).unwrap();
            let mut rng = crate::rng::Rng::new(seed);
            rng.shuffle(&mut xs);
            let b = log_sum_exp(&xs).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn monotone_in_each_argument(xs in prop::collection::vec(-50.0f64..50.0, 1..12), i in 0usize..12, bump in 1e-3f64..5.0) {
            let i = i % xs.len();
            let mut ys = xs.clone();
            ys[i] += bump;
            let (before, after) = (log_sum_exp(&xs).unwrap(), log_sum_exp(&ys).unwrap());
            prop_assert!(after >= before);
            // Strict whenever the bumped term is not swamped below rounding.
            let max = xs.iter().copied().fold(NEG_INF, f64::max);
            if xs[i] > max - 20.0 {
                prop_assert!(after > before);
            }
        }

        #[test]
        fn softmax_shift_invariant(xs in prop::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            for (a, b) in softmax(&xs).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
