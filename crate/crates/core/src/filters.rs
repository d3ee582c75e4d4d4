//! Mutual-information feature filters.
//!
//! * `F` includes a feature when the point estimate `I(π̂) >= ε`.
//! * `FF` (forward) includes it when `p(I > ε | N) >= p̄`.
//! * `BF` (backward) discards it only when `p(I <= ε | N) >= p̄`.
//!
//! Under the Gaussian approximation `FF` is `F` with the threshold raised to
//! `ε + z_p̄ σ`, and `BF` is `F` with it lowered to `ε - z_p̄ σ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::{lower_probability, tail_probability, MiSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterKind {
    #[serde(rename = "F")]
    F,
    #[serde(rename = "FF")]
    FF,
    #[serde(rename = "BF")]
    BF,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::F, FilterKind::FF, FilterKind::BF];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::F => "F",
            FilterKind::FF => "FF",
            FilterKind::BF => "BF",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F" => Ok(FilterKind::F),
            "FF" => Ok(FilterKind::FF),
            "BF" => Ok(FilterKind::BF),
            _ => Err(Error::InvalidArgument(format!("unknown filter '{s}' (F, FF or BF)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Threshold in nats.
    pub epsilon: f64,
    pub p_bar: f64,
}

impl FilterConfig {
    pub const DEFAULT_EPSILON: f64 = 0.003;
    pub const DEFAULT_P_BAR: f64 = 0.95;

    pub fn new(kind: FilterKind, epsilon: f64, p_bar: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be >= 0")));
        }
        if !(p_bar > 0.5 && p_bar < 1.0) {
            return Err(Error::InvalidArgument(format!("p_bar {p_bar} must lie in (0.5, 1)")));
        }
        Ok(Self { kind, epsilon, p_bar })
    }

    pub fn with_defaults(kind: FilterKind) -> Self {
        Self {
            kind,
            epsilon: Self::DEFAULT_EPSILON,
            p_bar: Self::DEFAULT_P_BAR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub include: bool,
    pub mi_mean: f64,
    pub mi_sd: f64,
    /// `p(I > ε)` for FF, `p(I <= ε)` for BF, absent for F.
    pub tail_prob: Option<f64>,
}

pub fn decide(config: &FilterConfig, summary: &MiSummary) -> FilterDecision {
    let (include, tail_prob) = match config.kind {
        FilterKind::F => (summary.mean >= config.epsilon, None),
        FilterKind::FF => {
            let p = tail_probability(summary, config.epsilon);
            (p >= config.p_bar, Some(p))
        }
        FilterKind::BF => {
            let p = lower_probability(summary, config.epsilon);
            (p < config.p_bar, Some(p))
        }
    };
    FilterDecision {
        include,
        mi_mean: summary.mean,
        mi_sd: summary.sd(),
        tail_prob,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Feature positions sorted by decreasing mean; ties keep input order.
    pub order: Vec<usize>,
    /// Included features, in ranked order.
    pub included: Vec<usize>,
    /// One decision per input feature, in input order.
    pub decisions: Vec<FilterDecision>,
}

pub fn rank_features(summaries: &[MiSummary], config: &FilterConfig) -> Ranking {
    let decisions: Vec<FilterDecision> = summaries.iter().map(|s| decide(config, s)).collect();
    let mut order: Vec<usize> = (0..summaries.len()).collect();
    order.sort_by(|&a, &b| summaries[b].mean.total_cmp(&summaries[a].mean));
    let included = order.iter().copied().filter(|&k| decisions[k].include).collect();
    Ranking {
        order,
        included,
        decisions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mean: f64, sd: f64) -> MiSummary {
        MiSummary::from_moments(mean, sd * sd, 2f64.ln())
    }

    fn all(s: &MiSummary) -> [bool; 3] {
        FilterKind::ALL.map(|k| decide(&FilterConfig::with_defaults(k), s).include)
    }

    #[test]
    fn clearly_positive_feature_passes_forward_filter() {
        // 0.05 - 1.6449 * 0.01 = 0.0336 > 0.003
        let d = decide(&FilterConfig::with_defaults(FilterKind::FF), &summary(0.05, 0.01));
        assert!(d.include);
        assert!(d.tail_prob.unwrap() > 0.95);
    }

    #[test]
    fn degenerate_variance_below_threshold() {
        assert_eq!(all(&summary(0.001, 0.0)), [false, false, false]);
    }

    #[test]
    fn boundary_semantics_at_epsilon() {
        let [f, ff, bf] = all(&summary(0.003, 0.001));
        assert!(f);
        assert!(!ff);
        assert!(bf);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::new(FilterKind::F, -0.1, 0.95).is_err());
        assert!(FilterConfig::new(FilterKind::F, 0.003, 0.5).is_err());
        assert!(FilterConfig::new(FilterKind::F, 0.003, 1.0).is_err());
        assert!(FilterConfig::new(FilterKind::F, 0.0, 0.9).is_ok());
        assert_eq!("ff".parse::<FilterKind>().unwrap(), FilterKind::FF);
        assert!("XF".parse::<FilterKind>().is_err());
    }

    #[test]
    fn ranking_is_stable_on_ties() {
        let s = vec![summary(0.01, 0.001); 4];
        let r = rank_features(&s, &FilterConfig::with_defaults(FilterKind::FF));
        assert_eq!(r.order, vec![0, 1, 2, 3]);
        assert!(r.decisions.iter().all(|d| *d == r.decisions[0]));
    }

    #[test]
    fn ranking_orders_by_mean() {
        let s = vec![summary(0.001, 0.002), summary(0.2, 0.02), summary(0.004, 0.002)];
        let r = rank_features(&s, &FilterConfig::with_defaults(FilterKind::F));
        assert_eq!(r.order, vec![1, 2, 0]);
        assert_eq!(r.included, vec![1, 2]);
    }

    #[test]
    fn empty_ranking() {
        let r = rank_features(&[], &FilterConfig::with_defaults(FilterKind::BF));
        assert!(r.order.is_empty() && r.included.is_empty() && r.decisions.is_empty());
    }
}
