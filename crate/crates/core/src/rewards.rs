//! Reward functions over observed bus voltages.
//!
//! Two shapes are provided: the negated squared L1 deviation from the
//! nominal 1.0 p.u. profile, and a piecewise variant whose branch is chosen
//! by where the mid-range voltage `(max + min) / 2` sits relative to the
//! nominal band.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Observation;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward requested for a degenerate observation")]
    DegenerateInput,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    SquaredSum,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub band_low: f64,
    pub band_high: f64,
    /// Offset of the below-band branch.
    pub c_max: f64,
    pub degenerate_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            kind: RewardKind::SquaredSum,
            band_low: 0.95,
            band_high: 1.05,
            // 14 buses times the 0.10 p.u. gap between nominal and the lowest set point
            c_max: 1.4,
            degenerate_penalty: -10.0,
        }
    }
}

impl RewardConfig {
    pub fn with_kind(kind: RewardKind) -> Self {
        RewardConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: String| Err(RewardError::InvalidConfig(m));
        if !(self.band_low < self.band_high) {
            return bad(format!("band_low {} not below band_high {}", self.band_low, self.band_high));
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            return bad(format!("c_max must be positive, got {}", self.c_max));
        }
        if !(self.degenerate_penalty < 0.0 && self.degenerate_penalty.is_finite()) {
            return bad(format!(
                "degenerate_penalty must be finite and negative, got {}",
                self.degenerate_penalty
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandBracket {
    Above,
    Within,
    Below,
}

impl BandBracket {
    pub fn as_str(self) -> &'static str {
        match self {
            BandBracket::Above => "above",
            BandBracket::Within => "within",
            BandBracket::Below => "below",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "above" => Some(BandBracket::Above),
            "within" => Some(BandBracket::Within),
            "below" => Some(BandBracket::Below),
            _ => None,
        }
    }
}

fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn l1_deviation(v: &[f64]) -> f64 {
    v.iter().map(|x| (1.0 - x).abs()).sum()
}

fn live(s: &Observation) -> Result<&[f64], RewardError> {
    if s.degenerate {
        Err(RewardError::DegenerateInput)
    } else {
        Ok(&s.v)
    }
}

/// `-(sum |1 - v_i|)^2`; zero only at the all-ones profile.
pub fn squared_sum_reward(s: &Observation) -> Result<f64, RewardError> {
    let d = l1_deviation(live(s)?);
    Ok(-(d * d))
}

pub fn bracket(s: &Observation, cfg: &RewardConfig) -> Result<BandBracket, RewardError> {
    let (lo, hi) = extremes(live(s)?);
    let mid = (hi + lo) / 2.0;
    Ok(if mid > cfg.band_high {
        BandBracket::Above
    } else if mid >= cfg.band_low {
        BandBracket::Within
    } else {
        BandBracket::Below
    })
}

pub fn piecewise_reward(s: &Observation, cfg: &RewardConfig) -> Result<f64, RewardError> {
    let v = live(s)?;
    Ok(match bracket(s, cfg)? {
        BandBracket::Above => -l1_deviation(v),
        BandBracket::Within => {
            let (lo, hi) = extremes(v);
            -((hi - lo) * (hi - lo))
        }
        BandBracket::Below => {
            let worst = v.iter().map(|x| (1.0 - x).abs()).fold(0.0, f64::max);
            cfg.c_max - worst
        }
    })
}

/// Dispatches on `cfg.kind`; degenerate observations earn the penalty.
pub fn reward(s: &Observation, cfg: &RewardConfig) -> f64 {
    if s.degenerate {
        return cfg.degenerate_penalty;
    }
    match cfg.kind {
        RewardKind::SquaredSum => squared_sum_reward(s),
        RewardKind::Piecewise => piecewise_reward(s, cfg),
    }
    .expect("non-degenerate observation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(v: &[f64]) -> Observation {
        Observation { v: v.to_vec(), degenerate: false }
    }

    fn assert_near(got: f64, want: f64) {
        assert!((got - want).abs() <= 4.0 * f64::EPSILON * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn squared_sum_examples() {
        assert_eq!(squared_sum_reward(&obs(&[1.0; 14])).unwrap(), 0.0);
        let mut one_high = [1.0; 14];
        one_high[3] = 1.1;
        assert_near(squared_sum_reward(&obs(&one_high)).unwrap(), -0.01);
        assert_near(squared_sum_reward(&obs(&[1.02; 14])).unwrap(), -0.0784);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let d = Observation::degenerate(14);
        let cfg = RewardConfig::default();
        assert_eq!(squared_sum_reward(&d), Err(RewardError::DegenerateInput));
        assert_eq!(bracket(&d, &cfg), Err(RewardError::DegenerateInput));
        assert_eq!(piecewise_reward(&d, &cfg), Err(RewardError::DegenerateInput));
    }

    #[test]
    fn bracket_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(bracket(&obs(&[1.10, 1.04, 1.07]), &cfg).unwrap(), BandBracket::Above);
        assert_eq!(bracket(&obs(&[1.04, 0.98]), &cfg).unwrap(), BandBracket::Within);
        assert_eq!(bracket(&obs(&[0.92, 0.90]), &cfg).unwrap(), BandBracket::Below);
    }

    #[test]
    fn band_edges_are_inclusive() {
        let cfg = RewardConfig::default();
        assert_eq!(bracket(&obs(&[1.05, 1.05]), &cfg).unwrap(), BandBracket::Within);
        assert_eq!(bracket(&obs(&[0.95, 0.95]), &cfg).unwrap(), BandBracket::Within);
        let above = 1.05f64.next_up();
        assert_eq!(bracket(&obs(&[above, above]), &cfg).unwrap(), BandBracket::Above);
        let below = 0.95f64.next_down();
        assert_eq!(bracket(&obs(&[below, below]), &cfg).unwrap(), BandBracket::Below);
    }

    #[test]
    fn piecewise_examples() {
        let cfg = RewardConfig::default();
        assert_near(piecewise_reward(&obs(&[1.10, 1.04]), &cfg).unwrap(), -0.14);
        assert_near(piecewise_reward(&obs(&[1.04, 0.98]), &cfg).unwrap(), -0.0036);
        let c = RewardConfig { c_max: 0.5, ..cfg };
        assert_near(piecewise_reward(&obs(&[0.90, 0.92]), &c).unwrap(), 0.40);
    }

    #[test]
    fn dispatch() {
        let s = obs(&[1.03, 0.99, 1.01]);
        let sq = RewardConfig::default();
        let pw = RewardConfig::with_kind(RewardKind::Piecewise);
        assert_eq!(reward(&s, &sq), squared_sum_reward(&s).unwrap());
        assert_eq!(reward(&s, &pw), piecewise_reward(&s, &pw).unwrap());
        assert_eq!(reward(&Observation::degenerate(3), &pw), -10.0);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig { band_low: 1.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RewardConfig { c_max: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn profile() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.85f64..1.2, 1..20)
    }

    proptest! {
        #[test]
        fn squared_sum_zero_only_at_nominal(v in profile()) {
            let r = squared_sum_reward(&obs(&v)).unwrap();
            if v.iter().all(|&x| x == 1.0) {
                prop_assert_eq!(r, 0.0);
            } else {
                prop_assert!(r < 0.0);
            }
        }

        #[test]
        fn bracket_permutation_invariant(mut v in profile(), k in 0usize..20) {
            let cfg = RewardConfig::default();
            let b = bracket(&obs(&v), &cfg).unwrap();
            let k = k % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(bracket(&obs(&v), &cfg).unwrap(), b);
        }

        #[test]
        fn within_reward_zero_iff_flat(x in 0.95f64..1.05, n in 1usize..15) {
            let cfg = RewardConfig::with_kind(RewardKind::Piecewise);
            prop_assert_eq!(piecewise_reward(&obs(&vec![x; n]), &cfg).unwrap(), 0.0);
        }

        #[test]
        fn below_beats_above(v in prop::collection::vec(0.85f64..1.0, 14), w in prop::collection::vec(1.0f64..1.15, 14)) {
            // with the default C every below-band profile outranks every above-band one
            let cfg = RewardConfig::with_kind(RewardKind::Piecewise);
            let (sb, sa) = (obs(&v), obs(&w));
            prop_assume!(bracket(&sb, &cfg).unwrap() == BandBracket::Below);
            prop_assume!(bracket(&sa, &cfg).unwrap() == BandBracket::Above);
            prop_assert!(piecewise_reward(&sb, &cfg).unwrap() > piecewise_reward(&sa, &cfg).unwrap());
        }
    }
}
