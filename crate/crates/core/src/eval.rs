//! Median-scaled depth metrics over full, dynamic and static regions.

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

/// Predictions are floored here before taking logarithms.
pub const PREDICTION_FLOOR: f64 = 1e-3;

/// Regions with fewer valid pixels are flagged as low confidence.
pub const LOW_CONFIDENCE_PIXELS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
    pub scale_applied: f64,
    pub prediction_floor: f64,
    pub low_confidence: bool,
}

impl MetricReport {
    /// `key=value` pairs, keys prefixed with `prefix.`.
    pub fn key_values(&self, prefix: &str) -> Vec<(String, String)> {
        let mut out = vec![
            ("abs_rel", self.abs_rel.to_string()),
            ("sq_rel", self.sq_rel.to_string()),
            ("rms", self.rms.to_string()),
            ("rms_log", self.rms_log.to_string()),
            ("delta1", self.delta1.to_string()),
            ("delta2", self.delta2.to_string()),
            ("delta3", self.delta3.to_string()),
            ("n_valid", self.n_valid.to_string()),
            ("scale_applied", self.scale_applied.to_string()),
            ("prediction_floor", self.prediction_floor.to_string()),
            ("low_confidence", self.low_confidence.to_string()),
        ];
        out.drain(..)
            .map(|(k, v)| (format!("{prefix}.{k}"), v))
            .collect()
    }
}

/// Median with the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

fn valid_indices(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    valid: Option<&ScalarGrid>,
    cap: f64,
) -> Result<Vec<usize>> {
    pred.ensure_same_shape(gt, "depth metrics")?;
    if let Some(v) = valid {
        v.ensure_same_shape(gt, "depth metrics mask")?;
    }
    Ok((0..gt.len())
        .filter(|&i| {
            let g = gt.values()[i];
            g > 0.0 && g <= cap && valid.map_or(true, |v| v.values()[i] != 0.0)
        })
        .collect())
}

fn scale_over(pred: &ScalarGrid, gt: &ScalarGrid, idx: &[usize]) -> Result<f64> {
    let p: Vec<f64> = idx.iter().map(|&i| pred.values()[i]).collect();
    let g: Vec<f64> = idx.iter().map(|&i| gt.values()[i]).collect();
    if let Some((k, v)) = idx.iter().zip(&p).find(|(_, v)| !(**v > 0.0)) {
        let (x, y) = pred.coords(*k);
        return Err(Error::NonPositiveDepth { x, y, value: *v });
    }
    match (median(&g), median(&p)) {
        (Some(mg), Some(mp)) => Ok(mg / mp),
        _ => Err(Error::EmptyValidSet),
    }
}

/// `median(gt) / median(pred)` over the valid pixels.
pub fn median_scale(pred: &ScalarGrid, gt: &ScalarGrid, valid: Option<&ScalarGrid>) -> Result<f64> {
    let idx = valid_indices(pred, gt, valid, f64::INFINITY)?;
    scale_over(pred, gt, &idx)
}

fn metrics_over(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    idx: &[usize],
    scale: f64,
) -> Result<MetricReport> {
    if idx.is_empty() {
        return Err(Error::EmptyValidSet);
    }
    let n = idx.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    for &i in idx {
        let p = scale * pred.values()[i];
        let g = gt.values()[i];
        let e = p - g;
        abs_rel += e.abs() / g;
        sq_rel += e * e / g;
        sq += e * e;
        let l = p.max(PREDICTION_FLOOR).ln() - g.ln();
        sq_log += l * l;
        let ratio = (p / g).max(g / p);
        for (k, w) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *w += 1;
            }
        }
    }
    Ok(MetricReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rms: (sq / n).sqrt(),
        rms_log: (sq_log / n).sqrt(),
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        n_valid: idx.len(),
        scale_applied: scale,
        prediction_floor: PREDICTION_FLOOR,
        low_confidence: idx.len() < LOW_CONFIDENCE_PIXELS,
    })
}

/// Metrics of `pred` as given; pixels with `gt <= 0` or `gt > cap` are excluded.
pub fn depth_metrics(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    valid: Option<&ScalarGrid>,
    cap: f64,
) -> Result<MetricReport> {
    let idx = valid_indices(pred, gt, valid, cap)?;
    metrics_over(pred, gt, &idx, 1.0)
}

/// Metrics after median scaling over the same pixels.
pub fn scaled_depth_metrics(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    valid: Option<&ScalarGrid>,
    cap: f64,
) -> Result<MetricReport> {
    let idx = valid_indices(pred, gt, valid, cap)?;
    let s = scale_over(pred, gt, &idx)?;
    metrics_over(pred, gt, &idx, s)
}

/// Full-image report plus dynamic and static subsets (`None` when a region is empty).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionReports {
    pub scale: f64,
    pub full: MetricReport,
    pub dynamic: Option<MetricReport>,
    pub fixed: Option<MetricReport>,
}

impl RegionReports {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![("scale".to_string(), self.scale.to_string())];
        out.extend(self.full.key_values("full"));
        for (name, r) in [("dynamic", &self.dynamic), ("static", &self.fixed)] {
            match r {
                Some(r) => out.extend(r.key_values(name)),
                None => out.push((format!("{name}.empty"), "true".to_string())),
            }
        }
        out
    }
}

/// One median scale from the full valid set, then metrics per region.
pub fn region_metrics(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    dynamic_mask: &ScalarGrid,
    valid: Option<&ScalarGrid>,
    cap: f64,
) -> Result<RegionReports> {
    dynamic_mask.ensure_same_shape(gt, "region mask")?;
    if !dynamic_mask.is_binary() {
        return Err(Error::Contract("dynamic mask must be binary".into()));
    }
    let idx = valid_indices(pred, gt, valid, cap)?;
    let scale = scale_over(pred, gt, &idx)?;
    let full = metrics_over(pred, gt, &idx, scale)?;
    let (dynamic, fixed): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| dynamic_mask.values()[i] == 1.0);
    let region = |r: &[usize]| {
        if r.is_empty() {
            Ok(None)
        } else {
            metrics_over(pred, gt, r, scale).map(Some)
        }
    };
    Ok(RegionReports {
        scale,
        full,
        dynamic: region(&dynamic)?,
        fixed: region(&fixed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ScalarGrid {
        ScalarGrid::from_fn(h, w, |x, y| 1.0 + 0.37 * x as f64 + 0.11 * y as f64)
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn scale_examples() {
        let gt = ramp(4, 5);
        assert_abs_diff_eq!(
            median_scale(&gt.map(|v| 2.0 * v), &gt, None).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(median_scale(&gt, &gt, None).unwrap(), 1.0);
    }

    #[test]
    fn analytic_cases() {
        let gt = ramp(4, 6);
        let r = depth_metrics(&gt, &gt, None, 80.0).unwrap();
        assert_eq!((r.abs_rel, r.delta1), (0.0, 1.0));
        let r = depth_metrics(&gt.map(|v| 1.1 * v), &gt, None, 80.0).unwrap();
        assert_abs_diff_eq!(r.abs_rel, 0.1, epsilon = 1e-12);
        assert_eq!(r.delta1, 1.0);
        let r = depth_metrics(&gt.map(|v| 1.3 * v), &gt, None, 80.0).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 1.0, 1.0));
    }

    #[test]
    fn cap_and_empty() {
        let gt = ramp(3, 3);
        assert!(matches!(
            depth_metrics(&gt, &gt, None, 0.5),
            Err(Error::EmptyValidSet)
        ));
        let r = depth_metrics(&gt, &gt, None, 1.5).unwrap();
        assert!(r.n_valid < 9 && r.low_confidence);
    }

    #[test]
    fn floor_keeps_log_finite() {
        let gt = ramp(4, 4);
        let pred = gt.map(|_| 0.0);
        let r = depth_metrics(&pred, &gt, None, 80.0).unwrap();
        assert!(r.rms_log.is_finite());
    }

    #[test]
    fn empty_dynamic_region() {
        let gt = ramp(5, 5);
        let pred = gt.map(|v| 1.2 * v);
        let r = region_metrics(&pred, &gt, &ScalarGrid::zeros(5, 5), None, 80.0).unwrap();
        assert!(r.dynamic.is_none());
        assert_eq!(r.fixed.unwrap(), r.full);
    }

    #[test]
    fn doubled_dynamic_region() {
        // 5 of 100 pixels doubled; the median is untouched so the scale is 1.
        let gt = ScalarGrid::from_fn(10, 10, |x, y| 2.0 + 0.1 * (x + 10 * y) as f64);
        let mask = ScalarGrid::from_fn(10, 10, |x, y| if y == 0 && x < 5 { 1.0 } else { 0.0 });
        let pred = ScalarGrid::from_fn(10, 10, |x, y| gt.get(x, y) * (1.0 + mask.get(x, y)));
        let r = region_metrics(&pred, &gt, &mask, None, 80.0).unwrap();
        let s = r.scale;
        // Direct computation from the constructed grids.
        let gt_sorted: Vec<f64> = gt.values().to_vec();
        let expected_scale = median(&gt_sorted).unwrap() / median(pred.values()).unwrap();
        assert_abs_diff_eq!(s, expected_scale, epsilon = 1e-15);
        assert_abs_diff_eq!(
            r.dynamic.unwrap().abs_rel,
            (2.0 * s - 1.0).abs(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(r.fixed.unwrap().abs_rel, (s - 1.0).abs(), epsilon = 1e-12);
        assert_eq!(
            r.dynamic.unwrap().n_valid + r.fixed.unwrap().n_valid,
            r.full.n_valid
        );
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(v in proptest::collection::vec(0.01f64..100.0, 1..60)) {
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = s.len();
            let expected = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
            prop_assert_eq!(median(&v).unwrap(), expected);
        }

        #[test]
        fn scaled_metrics_are_scale_invariant(
            seed in 0u64..1000, s in 0.01f64..100.0
        ) {
            let gt = ScalarGrid::from_fn(6, 7, |x, y| 1.0 + ((x * 7 + y * 13 + seed as usize) % 17) as f64);
            let pred = ScalarGrid::from_fn(6, 7, |x, y| 0.5 + ((x * 5 + y * 3 + seed as usize) % 11) as f64);
            let a = scaled_depth_metrics(&pred, &gt, None, 80.0).unwrap();
            let b = scaled_depth_metrics(&pred.map(|v| s * v), &gt, None, 80.0).unwrap();
            prop_assert!((a.abs_rel - b.abs_rel).abs() < 1e-12);
            prop_assert!((a.sq_rel - b.sq_rel).abs() < 1e-12);
            prop_assert!((a.rms - b.rms).abs() < 1e-12);
            prop_assert!((a.rms_log - b.rms_log).abs() < 1e-12);
            prop_assert_eq!(a.delta1, b.delta1);
        }

        #[test]
        fn symmetric_measures(seed in 0u64..1000) {
            let gt = ScalarGrid::from_fn(5, 5, |x, y| 1.0 + ((x * 3 + y * 7 + seed as usize) % 9) as f64);
            let pred = ScalarGrid::from_fn(5, 5, |x, y| 1.0 + ((x * 2 + y * 5 + seed as usize) % 7) as f64);
            let a = depth_metrics(&pred, &gt, None, 80.0).unwrap();
            let b = depth_metrics(&gt, &pred, None, 80.0).unwrap();
            prop_assert!((a.rms_log - b.rms_log).abs() < 1e-12);
            prop_assert_eq!(a.delta1, b.delta1);
            prop_assert!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3);
        }
    }
}
