//! Depth metrics and confidence curves.

use crate::{Error, Result};

/// Error statistics over the valid ground-truth pixels of one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub rmse: f64,
    /// Fraction of pixels with `max(p/g, g/p) < 1.25`.
    pub delta1: f64,
    pub count: usize,
}

impl MetricsReport {
    /// Tab-separated values in [`MetricsReport::HEADER`] order.
    pub fn tsv(&self) -> String {
        format!("{:.6}\t{:.6}\t{:.6}\t{}", self.abs_rel, self.rmse, self.delta1, self.count)
    }

    pub const HEADER: &'static str = "AbsRel\tRMSE\tdelta1\tcount";

    /// `key: value` lines.
    pub fn sidecar(&self) -> String {
        format!("abs_rel: {}\nrmse: {}\ndelta1: {}\ncount: {}\n", self.abs_rel, self.rmse, self.delta1, self.count)
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(':')).map(str::trim))
                .ok_or_else(|| Error::Format(format!("metrics sidecar lacks {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| Error::Format(format!("metrics sidecar: bad {key}")))
        };
        Ok(Self {
            abs_rel: num("abs_rel")?,
            rmse: num("rmse")?,
            delta1: num("delta1")?,
            count: get("count")?.parse().map_err(|_| Error::Format("metrics sidecar: bad count".into()))?,
        })
    }

    /// Unweighted mean over reports, one per image.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Empty("no metrics to average".into()));
        }
        let n = reports.len() as f64;
        Ok(Self {
            abs_rel: reports.iter().map(|r| r.abs_rel).sum::<f64>() / n,
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
            delta1: reports.iter().map(|r| r.delta1).sum::<f64>() / n,
            count: reports.iter().map(|r| r.count).sum(),
        })
    }
}

/// Lower median; `values` must be non-empty.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Indices of pixels with `0 < gt ≤ cap`.
fn valid_pixels(gt: &[f64], cap: f64) -> Vec<usize> {
    (0..gt.len()).filter(|&i| gt[i] > 0.0 && gt[i] <= cap).collect()
}

/// `median(gt)/median(pred)` over `pixels`.
fn alignment(pred: &[f64], gt: &[f64], pixels: &[usize]) -> f64 {
    let p: Vec<f64> = pixels.iter().map(|&i| pred[i]).collect();
    let g: Vec<f64> = pixels.iter().map(|&i| gt[i]).collect();
    lower_median(&g) / lower_median(&p)
}

/// `pred` rescaled so its median over valid pixels matches the ground truth.
pub fn scale_align(pred: &[f64], gt: &[f64], cap: f64) -> Result<Vec<f64>> {
    check(pred, gt)?;
    let pixels = valid_pixels(gt, cap);
    if pixels.is_empty() {
        return Err(Error::Empty("no valid ground-truth pixels".into()));
    }
    let s = alignment(pred, gt, &pixels);
    Ok(pred.iter().map(|p| p * s).collect())
}

fn check(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { what: "prediction and ground truth", left: pred.len(), right: gt.len() });
    }
    Ok(())
}

fn report(pred: &[f64], gt: &[f64], pixels: &[usize]) -> MetricsReport {
    let n = pixels.len() as f64;
    let (mut abs_rel, mut sq, mut good) = (0.0, 0.0, 0usize);
    for &i in pixels {
        let (p, g) = (pred[i], gt[i]);
        abs_rel += (p - g).abs() / g;
        sq += (p - g) * (p - g);
        if (p / g).max(g / p) < 1.25 {
            good += 1;
        }
    }
    MetricsReport { abs_rel: abs_rel / n, rmse: (sq / n).sqrt(), delta1: good as f64 / n, count: pixels.len() }
}

/// Metrics over pixels with `0 < gt ≤ cap` (`gt = 0` marks missing depth).
pub fn evaluate(pred: &[f64], gt: &[f64], cap: f64, align: bool) -> Result<MetricsReport> {
    check(pred, gt)?;
    let pixels = valid_pixels(gt, cap);
    if pixels.is_empty() {
        return Err(Error::Empty("no valid ground-truth pixels".into()));
    }
    if align {
        let s = alignment(pred, gt, &pixels);
        let scaled: Vec<f64> = pred.iter().map(|p| p * s).collect();
        return Ok(report(&scaled, gt, &pixels));
    }
    Ok(report(pred, gt, &pixels))
}

/// RMSE over the `⌈f·N⌉` valid pixels of lowest uncertainty, for each `f`.
/// Ties keep pixel order.
pub fn confidence_curve(
    pred: &[f64],
    uncertainty: &[f64],
    gt: &[f64],
    cap: f64,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check(pred, gt)?;
    check(uncertainty, gt)?;
    let mut pixels = valid_pixels(gt, cap);
    if pixels.is_empty() {
        return Err(Error::Empty("no valid ground-truth pixels".into()));
    }
    pixels.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]));
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("kept fraction {f} outside (0, 1]")));
            }
            let k = ((f * pixels.len() as f64).ceil() as usize).clamp(1, pixels.len());
            Ok((f, report(pred, gt, &pixels[..k]).rmse))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let gt = [1.0, 2.0, 0.0, 7.5];
        let r = evaluate(&gt, &gt, 200.0, false).unwrap();
        assert_eq!((r.abs_rel, r.rmse, r.delta1, r.count), (0.0, 0.0, 1.0, 3));
    }

    #[test]
    fn hand_computed_pair() {
        let r = evaluate(&[2.0, 4.0], &[1.0, 4.0], 200.0, false).unwrap();
        assert_eq!(r.abs_rel, 0.5);
        assert_eq!(r.rmse, 0.5f64.sqrt());
        assert_eq!(r.delta1, 0.5);
    }

    #[test]
    fn alignment_cancels_global_scale() {
        let gt = [1.0, 3.0, 8.0, 20.0];
        let pred: Vec<f64> = gt.iter().map(|g| 2.0 * g).collect();
        assert_eq!(evaluate(&pred, &gt, 200.0, true).unwrap().abs_rel, 0.0);
        assert!(evaluate(&pred, &gt, 200.0, false).unwrap().abs_rel > 0.9);
    }

    #[test]
    fn cap_and_empty_input() {
        let r = evaluate(&[1.0, 1.0], &[1.0, 300.0], 200.0, false).unwrap();
        assert_eq!(r.count, 1);
        assert!(evaluate(&[1.0], &[0.0], 200.0, false).is_err());
        assert!(evaluate(&[1.0], &[1.0, 2.0], 200.0, false).is_err());
    }

    #[test]
    fn confidence_curve_edges() {
        let gt = [1.0, 2.0, 3.0, 4.0];
        let pred = [1.5, 2.0, 3.0, 6.0];
        let full = evaluate(&pred, &gt, 200.0, false).unwrap().rmse;
        let c = confidence_curve(&pred, &[0.0; 4], &gt, 200.0, &[1.0, 0.5, 0.25]).unwrap();
        assert_eq!(c[0].1, full);
        // Equal uncertainty keeps pixel order: the first half is [1.5, 2.0].
        assert_eq!(c[1].1, (0.25f64 / 2.0).sqrt());
        let ranked = confidence_curve(&pred, &[3.0, 0.0, 0.1, 5.0], &gt, 200.0, &[0.5]).unwrap();
        assert_eq!(ranked[0].1, 0.0);
        assert!(confidence_curve(&pred, &[0.0; 4], &gt, 200.0, &[0.0]).is_err());
    }

    #[test]
    fn sidecar_roundtrip() {
        let r = MetricsReport { abs_rel: 0.125, rmse: 3.5, delta1: 0.75, count: 42 };
        assert_eq!(MetricsReport::from_sidecar(&r.sidecar()).unwrap(), r);
        assert!(MetricsReport::from_sidecar("rmse: 1").is_err());
    }

    fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.1f64..100.0, 0.1f64..100.0), 1..40)
    }

    proptest! {
        #[test]
        fn permutation_invariance(v in pairs(), rot in 0usize..40) {
            let (p, g): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let k = rot % v.len();
            let rp: Vec<f64> = p[k..].iter().chain(&p[..k]).copied().collect();
            let rg: Vec<f64> = g[k..].iter().chain(&g[..k]).copied().collect();
            let a = evaluate(&p, &g, 200.0, false).unwrap();
            let b = evaluate(&rp, &rg, 200.0, false).unwrap();
            prop_assert!((a.abs_rel - b.abs_rel).abs() <= 1e-12 * a.abs_rel.max(1.0));
            prop_assert_eq!(a.delta1, b.delta1);
        }

        #[test]
        fn squared_rmse_is_additive(v in pairs(), split in 1usize..40) {
            prop_assume!(v.len() >= 2);
            let s = 1 + split % (v.len() - 1);
            let (p, g): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let all = evaluate(&p, &g, 200.0, false).unwrap();
            let a = evaluate(&p[..s], &g[..s], 200.0, false).unwrap();
            let b = evaluate(&p[s..], &g[s..], 200.0, false).unwrap();
            let merged = (a.rmse.powi(2) * s as f64 + b.rmse.powi(2) * (v.len() - s) as f64) / v.len() as f64;
            prop_assert!((all.rmse.powi(2) - merged).abs() <= 1e-9 * merged.max(1.0));
        }

        #[test]
        fn alignment_is_idempotent(v in pairs()) {
            let (p, g): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let once = scale_align(&p, &g, 200.0).unwrap();
            let twice = scale_align(&once, &g, 200.0).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }
    }
}
