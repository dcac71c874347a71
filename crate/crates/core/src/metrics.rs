//! Absolute PLCC, SROCC and KROCC between ground-truth and predicted scores.
//!
//! Ties: SROCC uses average ranks and Pearson on those ranks; KROCC is
//! tau-a, with tied pairs counted as neither concordant nor discordant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("score vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 score pairs, got {0}")]
    TooFew(usize),
    #[error("non-finite score")]
    NonFinite,
    #[error("constant score vector")]
    ConstantVector,
}

/// Ground truth `s` and prediction `s_hat`.
#[derive(Clone, Copy, Debug)]
pub struct ScorePairs<'a> {
    s: &'a [f64],
    s_hat: &'a [f64],
}

impl<'a> ScorePairs<'a> {
    pub fn new(s: &'a [f64], s_hat: &'a [f64]) -> Result<Self, MetricsError> {
        if s.len() != s_hat.len() {
            return Err(MetricsError::LengthMismatch(s.len(), s_hat.len()));
        }
        if s.len() < 3 {
            return Err(MetricsError::TooFew(s.len()));
        }
        if s.iter().chain(s_hat).any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(Self { s, s_hat })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantVector);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(v: &[f64]) -> bool {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).any(|w| w[0] == w[1])
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

pub fn plcc(p: &ScorePairs) -> Result<f64, MetricsError> {
    Ok(pearson(p.s, p.s_hat)?.abs())
}

pub fn srocc(p: &ScorePairs) -> Result<f64, MetricsError> {
    if is_constant(p.s) || is_constant(p.s_hat) {
        return Err(MetricsError::ConstantVector);
    }
    let (rs, rh) = (average_ranks(p.s), average_ranks(p.s_hat));
    if has_ties(p.s) || has_ties(p.s_hat) {
        return Ok(pearson(&rs, &rh)?.abs());
    }
    let m = p.len() as f64;
    let d2: f64 = rs.iter().zip(&rh).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((1.0 - 6.0 * d2 / (m * (m * m - 1.0))).abs())
}

pub fn krocc(p: &ScorePairs) -> Result<f64, MetricsError> {
    if is_constant(p.s) || is_constant(p.s_hat) {
        return Err(MetricsError::ConstantVector);
    }
    let m = p.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..m {
        for j in i + 1..m {
            let sign = (p.s[i] - p.s[j]).signum() * (p.s_hat[i] - p.s_hat[j]).signum();
            if p.s[i] == p.s[j] || p.s_hat[i] == p.s_hat[j] {
                continue;
            }
            if sign > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    Ok((2.0 * (concordant - discordant) as f64 / (m * (m - 1)) as f64).abs())
}

/// All three correlations and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub overall: f64,
}

pub fn overall(p: &ScorePairs) -> Result<f64, MetricsError> {
    Ok(summarize(p)?.overall)
}

pub fn summarize(p: &ScorePairs) -> Result<MetricSummary, MetricsError> {
    let (plcc, srocc, krocc) = (plcc(p)?, srocc(p)?, krocc(p)?);
    Ok(MetricSummary { plcc, srocc, krocc, overall: plcc + srocc + krocc })
}
