use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rule::GameRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no reports")]
    EmptyReports,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    /// Most frequent value after rounding to 2 decimals; smallest on ties.
    pub mode: f64,
}

pub fn mean(xs: &[f64]) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptyReports);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn compute_target(rule: &GameRule, reports: &[f64]) -> Result<f64, StatsError> {
    Ok(rule.step(mean(reports)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Winners<K> {
    pub exact: Vec<K>,
    pub band: Vec<K>,
}

/// Exact winners are every report at the minimum distance; band winners are
/// those within the closed interval `[target − band, target + band]`.
pub fn determine_winners<K: Clone>(reports: &[(K, f64)], target: f64, band: f64) -> Winners<K> {
    let best = reports.iter().map(|(_, r)| (r - target).abs()).fold(f64::INFINITY, f64::min);
    let exact = reports.iter().filter(|(_, r)| (r - target).abs() == best).map(|(k, _)| k.clone()).collect();
    let band = reports
        .iter()
        .filter(|(_, r)| *r >= target - band && *r <= target + band)
        .map(|(k, _)| k.clone())
        .collect();
    Winners { exact, band }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn summarize(reports: &[f64]) -> Result<Stats, StatsError> {
    let avg = mean(reports)?;
    let n = reports.len() as f64;
    let std = (reports.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = reports.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 };

    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for x in &sorted {
        *counts.entry((x * 100.0).round() as i64).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the smallest value.
    let (mode_key, _) = counts.iter().fold((0i64, 0usize), |acc, (k, c)| if *c > acc.1 { (*k, *c) } else { acc });
    let mode = round2(mode_key as f64 / 100.0);

    Ok(Stats { avg, min: sorted[0], max: sorted[sorted.len() - 1], std, median, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::rule::Ratio;

    #[test]
    fn small_examples() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.avg, 2.0);
        assert!((s.std - 0.816_496_580_927_726).abs() < 1e-12);
        assert_eq!(s.median, 2.0);
        assert_eq!(summarize(&[0.0, 0.0, 100.0]).unwrap().mode, 0.0);
        assert_eq!(summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
        assert_eq!(summarize(&[3.0, 1.0]).unwrap().mode, 1.0);
        assert_eq!(summarize(&[]), Err(StatsError::EmptyReports));
    }

    #[test]
    fn mode_uses_two_decimals() {
        assert_eq!(summarize(&[1.001, 1.004, 2.0]).unwrap().mode, 1.0);
    }

    #[test]
    fn targets() {
        let r = GameRule::classic();
        assert!((compute_target(&r, &[50.0; 7]).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!((compute_target(&r, &[0.0, 100.0]).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        let v = GameRule::with_ratio(Ratio::ONE_HALF).offset(5.0);
        assert_eq!(compute_target(&v, &[10.0; 4]).unwrap(), 10.0);
        assert_eq!(compute_target(&r, &[]), Err(StatsError::EmptyReports));
    }

    #[test]
    fn band_is_closed() {
        let reports = vec![("a", 10.5), ("b", 9.5), ("c", 10.51), ("d", 10.2)];
        let w = determine_winners(&reports, 10.0, 0.5);
        assert_eq!(w.exact, vec!["d"]);
        assert_eq!(w.band, vec!["a", "b", "d"]);
    }

    #[test]
    fn ties_are_all_exact_winners() {
        let reports = vec![("a", 0.0), ("b", 0.0), ("c", 0.0)];
        let w = determine_winners(&reports, 0.0, 0.5);
        assert_eq!(w.exact.len(), 3);
        assert_eq!(w.band.len(), 3);
    }
}
