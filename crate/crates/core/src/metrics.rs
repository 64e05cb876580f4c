//! Pixel-level overlap metrics for binary masks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pixel confusion counts for one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Predictions are positive when `p >= threshold`; targets when `> 0.5`.
    pub fn count<T: Real>(pred: &[T], target: &[T], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(target) {
            match (p.as_f64() >= threshold, t.as_f64() > 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }
}

/// The four metrics, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `num / den`, or 1 when both masks are empty and 0 otherwise if `den == 0`.
fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty { 1.0 } else { 0.0 }
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let both_empty = c.tp + c.fp + c.fn_ == 0;
        Metrics {
            dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, both_empty),
            iou: ratio(c.tp, c.tp + c.fp + c.fn_, both_empty),
            precision: ratio(c.tp, c.tp + c.fp, both_empty),
            recall: ratio(c.tp, c.tp + c.fn_, both_empty),
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.dice, self.iou, self.precision, self.recall]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub metrics: Metrics,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("evaluate", format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(())
}

/// Metrics for every batch item of `pred` (probabilities) against `target`.
/// `ids` names the items in batch order.
pub fn evaluate<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    threshold: f64,
    ids: &[String],
) -> Result<Vec<ImageMetrics>> {
    check_threshold(threshold)?;
    let (a, b) = (pred.shape(), target.shape());
    if a != b {
        return Err(Error::shape("evaluate", format!("prediction {a} vs target {b}")));
    }
    if ids.len() != a.n {
        return Err(Error::invalid("evaluate", format!("{} ids for batch of {}", ids.len(), a.n)));
    }
    let per = a.c * a.h * a.w;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let r = i * per..(i + 1) * per;
            let c = Confusion::count(&pred.data()[r.clone()], &target.data()[r], threshold);
            ImageMetrics {
                id: id.clone(),
                metrics: Metrics::from_confusion(&c),
            }
        })
        .collect())
}

/// Per-image metrics and their unweighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Metrics,
}

/// `0.7946` -> `"79.46"`.
pub fn format_percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricsReport {
    pub fn new(threshold: f64, per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::invalid("metrics report", "no images to aggregate"));
        }
        let n = per_image.len() as f64;
        let mut sum = [0.0; 4];
        for m in &per_image {
            for (s, v) in sum.iter_mut().zip(m.metrics.as_array()) {
                *s += v;
            }
        }
        let aggregate = Metrics {
            dice: sum[0] / n,
            iou: sum[1] / n,
            precision: sum[2] / n,
            recall: sum[3] / n,
        };
        Ok(MetricsReport {
            threshold,
            per_image,
            aggregate,
        })
    }

    /// `id,dice,iou,precision,recall` in percent with two decimals, one row
    /// per image and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,dice,iou,precision,recall\n");
        let rows = self
            .per_image
            .iter()
            .map(|m| (m.id.as_str(), &m.metrics))
            .chain(std::iter::once(("mean", &self.aggregate)));
        for (id, m) in rows {
            let vals: Vec<String> = m.as_array().iter().map(|&v| format_percent(v)).collect();
            let _ = writeln!(s, "{id},{}", vals.join(","));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|m| m.id.len())
            .max()
            .unwrap_or(0)
            .max(4);
        let mut s = format!(
            "{:<width$}  {:>7}  {:>7}  {:>9}  {:>7}\n",
            "id", "dice", "iou", "precision", "recall"
        );
        let rows = self
            .per_image
            .iter()
            .map(|m| (m.id.as_str(), &m.metrics))
            .chain(std::iter::once(("mean", &self.aggregate)));
        for (id, m) in rows {
            let _ = writeln!(
                s,
                "{id:<width$}  {:>7}  {:>7}  {:>9}  {:>7}",
                format_percent(m.dice),
                format_percent(m.iou),
                format_percent(m.precision),
                format_percent(m.recall)
            );
        }
        let _ = writeln!(s, "(percent, threshold {})", self.threshold);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Shape;

    fn t(bits: &[u8]) -> Tensor<f64> {
        Tensor::new(Shape::new(1, 1, 1, bits.len()), bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    fn one(pred: &[u8], gt: &[u8]) -> Metrics {
        evaluate(&t(pred), &t(gt), 0.5, &["x".into()]).unwrap()[0].metrics
    }

    #[test]
    fn identical_masks() {
        let m = one(&[1, 0, 1, 1], &[1, 0, 1, 1]);
        assert_eq!(m.as_array(), [1.0; 4]);
    }

    #[test]
    fn half_overlap() {
        let m = one(&[1, 1, 1, 1, 0, 0, 0, 0], &[0, 0, 1, 1, 1, 1, 0, 0]);
        assert_eq!(m.dice, 0.5);
        assert!((m.iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
    }

    #[test]
    fn empty_mask_convention() {
        assert_eq!(one(&[0, 0], &[0, 0]).as_array(), [1.0; 4]);
        let m = one(&[1, 0], &[0, 0]);
        assert_eq!(m.as_array(), [0.0; 4]);
        let m = one(&[0, 0], &[0, 1]);
        assert_eq!(m.as_array(), [0.0; 4]);
    }

    #[test]
    fn percent_formatting_and_csv() {
        assert_eq!(format_percent(0.7946), "79.46");
        let per = vec![
            ImageMetrics { id: "a".into(), metrics: one(&[1, 1], &[1, 1]) },
            ImageMetrics { id: "b".into(), metrics: one(&[1, 0], &[0, 1]) },
        ];
        let r = MetricsReport::new(0.5, per).unwrap();
        assert_eq!(
            r.to_csv(),
            "id,dice,iou,precision,recall\na,100.00,100.00,100.00,100.00\nb,0.00,0.00,0.00,0.00\nmean,50.00,50.00,50.00,50.00\n"
        );
        assert!(r.to_table().contains("mean"));
        assert!(MetricsReport::new(0.5, vec![]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(evaluate(&t(&[1]), &t(&[1, 0]), 0.5, &["x".into()]).is_err());
        assert!(evaluate(&t(&[1]), &t(&[1]), 1.0, &["x".into()]).is_err());
        assert!(evaluate(&t(&[1]), &t(&[1]), 0.5, &[]).is_err());
    }
}
