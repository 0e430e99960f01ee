//! Consensus over corrected depth candidates.
//!
//! Each candidate is screened by its RMS deviation from the reference depth
//! (normalized by the reference's mean so the threshold is resolution- and
//! scale-independent); survivors are averaged per pixel.

use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};
use crate::geometry::{DepthMap, Raster};

/// Options for [`aggregate_candidates`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    /// Acceptance threshold on normalized RMS deviation from the reference.
    pub tau_d: f64,
    /// Fewer accepted candidates than this falls back to the reference.
    pub min_accepted: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            tau_d: 0.25,
            min_accepted: 1,
        }
    }
}

/// Outcome bookkeeping for one aggregation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Normalized RMS deviation of each candidate, in input order; infinite
    /// when a candidate shares no valid pixel with the reference.
    pub deviations: Vec<f64>,
    /// Acceptance flag per candidate, in input order.
    pub accepted: Vec<bool>,
    /// True when too few candidates survived and the reference was returned.
    pub fallback: bool,
}

/// Averages the accepted candidates per pixel.
///
/// A candidate is accepted iff its RMS deviation from `d0` over their jointly
/// valid pixels, divided by the mean of `d0`, is at most `tau_d`. The result
/// is valid wherever at least one accepted candidate is valid; contributions
/// are summed in value order so candidate order cannot change a single bit.
/// When fewer than `min_accepted` survive, `d0` is returned unchanged with a
/// warning and `fallback` set.
pub fn aggregate_candidates(
    candidates: &[DepthMap],
    d0: &DepthMap,
    config: &AggregationConfig,
) -> Result<(DepthMap, AggregateReport)> {
    if candidates.is_empty() {
        return Err(GbrError::Invalid(
            "aggregation needs at least one candidate depth map".into(),
        ));
    }
    if !(config.tau_d.is_finite() && config.tau_d > 0.0) {
        return Err(GbrError::Config(format!(
            "tau_d must be finite and positive, got {}",
            config.tau_d
        )));
    }
    for (k, c) in candidates.iter().enumerate() {
        if c.width() != d0.width() || c.height() != d0.height() {
            return Err(GbrError::Dimension(format!(
                "candidate {k} is {}x{} but the reference is {}x{}",
                c.width(),
                c.height(),
                d0.width(),
                d0.height()
            )));
        }
    }
    let mean_d0 = d0.mean_valid().ok_or_else(|| {
        GbrError::Invalid("reference depth has no valid pixels to aggregate against".into())
    })?;

    let deviations: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let mut sq = 0.0;
            let mut n = 0usize;
            for y in 0..d0.height() {
                for x in 0..d0.width() {
                    if let (Some(cv), Some(rv)) = (c.at(x, y), d0.at(x, y)) {
                        sq += (cv - rv) * (cv - rv);
                        n += 1;
                    }
                }
            }
            if n == 0 {
                f64::INFINITY
            } else {
                (sq / n as f64).sqrt() / mean_d0
            }
        })
        .collect();
    let accepted: Vec<bool> = deviations.iter().map(|d| *d <= config.tau_d).collect();
    let n_accepted = accepted.iter().filter(|a| **a).count();

    if n_accepted < config.min_accepted {
        log::warn!(
            "no depth candidate within tau_d = {} of the reference ({} of {} accepted); \
             falling back to the projected depth",
            config.tau_d,
            n_accepted,
            candidates.len()
        );
        return Ok((
            d0.clone(),
            AggregateReport {
                deviations,
                accepted,
                fallback: true,
            },
        ));
    }

    let (w, h) = (d0.width(), d0.height());
    let mut depth = Raster::filled(w, h, 0.0f64);
    let mut valid = Raster::filled(w, h, false);
    let mut values = Vec::with_capacity(n_accepted);
    for y in 0..h {
        for x in 0..w {
            values.clear();
            for (c, acc) in candidates.iter().zip(&accepted) {
                if *acc {
                    if let Some(v) = c.at(x, y) {
                        values.push(v);
                    }
                }
            }
            if values.is_empty() {
                continue;
            }
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            if mean.is_finite() && mean > 0.0 {
                *depth.get_mut(x, y) = mean;
                *valid.get_mut(x, y) = true;
            }
        }
    }

    Ok((
        DepthMap::new(depth, valid)?,
        AggregateReport {
            deviations,
            accepted,
            fallback: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DepthMap {
        DepthMap::new(Raster::from_fn(w, h, |x, y| f(x, y)), Raster::filled(w, h, true)).unwrap()
    }

    fn texture(x: usize, y: usize) -> f64 {
        2.0 + 0.2 * ((x as f64 * 0.7).sin() + (y as f64 * 0.9).cos())
    }

    #[test]
    fn identical_candidates_return_the_reference() {
        let d0 = map_from(8, 6, texture);
        let (out, report) =
            aggregate_candidates(&[d0.clone(), d0.clone()], &d0, &AggregationConfig::default())
                .unwrap();
        assert_eq!(out, d0);
        assert_eq!(report.accepted, vec![true, true]);
        assert!(!report.fallback);
        assert!(report.deviations.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn gross_outlier_is_rejected() {
        let d0 = map_from(8, 6, texture);
        let mean = d0.mean_valid().unwrap();
        let outlier = map_from(8, 6, |x, y| texture(x, y) + 10.0 * mean);
        let (out, report) =
            aggregate_candidates(&[d0.clone(), outlier], &d0, &AggregationConfig::default())
                .unwrap();
        assert_eq!(out, d0);
        assert_eq!(report.accepted, vec![true, false]);
        assert!((report.deviations[1] - 10.0).abs() < 1e-9);
        assert!(!report.fallback);
    }

    #[test]
    fn three_candidates_average_per_pixel() {
        let d0 = map_from(2, 2, |_, _| 2.0);
        let c1 = map_from(2, 2, |_, _| 2.1);
        let c2 = map_from(2, 2, |_, _| 1.8);
        let c3 = map_from(2, 2, |_, _| 2.4);
        let (out, report) =
            aggregate_candidates(&[c1, c2, c3], &d0, &AggregationConfig::default()).unwrap();
        assert_eq!(report.accepted, vec![true, true, true]);
        for y in 0..2 {
            for x in 0..2 {
                assert!((out.at(x, y).unwrap() - 2.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pixels_missing_from_all_accepted_candidates_are_invalid() {
        let d0 = map_from(3, 1, |_, _| 2.0);
        let holey = DepthMap::new(
            Raster::from_fn(3, 1, |x, _| if x < 2 { 2.2 } else { 0.0 }),
            Raster::from_fn(3, 1, |x, _| x < 2),
        )
        .unwrap();
        let (out, _) =
            aggregate_candidates(&[holey], &d0, &AggregationConfig::default()).unwrap();
        assert!(out.at(0, 0).is_some());
        assert!(out.at(2, 0).is_none());
    }

    #[test]
    fn candidate_order_does_not_change_a_bit() {
        let d0 = map_from(9, 7, texture);
        let mk = |s: f64| map_from(9, 7, |x, y| texture(x, y) + s * ((x * 3 + y) % 5) as f64 / 50.0);
        let (a, b, c) = (mk(0.013), mk(-0.021), mk(0.008));
        let base =
            aggregate_candidates(&[a.clone(), b.clone(), c.clone()], &d0, &AggregationConfig::default())
                .unwrap()
                .0;
        for perm in [
            vec![a.clone(), c.clone(), b.clone()],
            vec![b.clone(), a.clone(), c.clone()],
            vec![b.clone(), c.clone(), a.clone()],
            vec![c.clone(), a.clone(), b.clone()],
            vec![c, b, a],
        ] {
            let out = aggregate_candidates(&perm, &d0, &AggregationConfig::default())
                .unwrap()
                .0;
            assert_eq!(out, base, "permutation changed the aggregate bitwise");
        }
    }

    #[test]
    fn falls_back_to_reference_when_nothing_survives() {
        let d0 = map_from(6, 4, texture);
        let mean = d0.mean_valid().unwrap();
        let far = map_from(6, 4, |x, y| texture(x, y) + 3.0 * mean);
        let (out, report) =
            aggregate_candidates(&[far.clone()], &d0, &AggregationConfig::default()).unwrap();
        assert!(report.fallback);
        assert_eq!(out, d0);
        // With min_accepted = 0 the same input aggregates an empty set
        // instead: an all-invalid map, no fallback.
        let cfg = AggregationConfig {
            min_accepted: 0,
            ..AggregationConfig::default()
        };
        let (out, report) = aggregate_candidates(&[far], &d0, &cfg).unwrap();
        assert!(!report.fallback);
        assert_eq!(out.valid_count(), 0);
    }

    #[test]
    fn rejects_empty_input_and_dimension_mismatch() {
        let d0 = map_from(4, 4, texture);
        let err = aggregate_candidates(&[], &d0, &AggregationConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let other = map_from(5, 4, texture);
        let err =
            aggregate_candidates(&[other], &d0, &AggregationConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
