//! Pixel-level precision, sensitivity, IoU and F1.
//!
//! Degenerate cases: when prediction and ground truth are both empty every
//! metric is 1; when `tp = 0` but something was predicted or missed the
//! affected metrics are 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `pred ≥ threshold → 1`, else 0.
pub fn binarize<T: Scalar>(pred: &Tensor4<T>, threshold: f64) -> Result<Tensor4<T>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} not in (0, 1)")));
    }
    let t = T::lit(threshold);
    pred.map("binarize", |p| if p >= t { T::one() } else { T::zero() })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn binary_index<T: Scalar>(t: &Tensor4<T>) -> Result<()> {
    match t.data().iter().position(|&v| v != T::zero() && v != T::one()) {
        Some(index) => Err(Error::NonBinaryMask {
            index,
            value: t.data()[index].as_f64(),
        }),
        None => Ok(()),
    }
}

pub fn confusion<T: Scalar>(pred_mask: &Tensor4<T>, gt_mask: &Tensor4<T>) -> Result<ConfusionCounts> {
    if pred_mask.shape() != gt_mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            left: pred_mask.shape(),
            right: gt_mask.shape(),
        });
    }
    binary_index(pred_mask)?;
    binary_index(gt_mask)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred_mask.data().iter().zip(gt_mask.data()) {
        match (p == T::one(), g == T::one()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, degenerate: f64) -> f64 {
    if den == 0 {
        degenerate
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn empty_vs_empty(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    fn degenerate(&self) -> f64 {
        if self.empty_vs_empty() {
            1.0
        } else {
            0.0
        }
    }

    /// `tp / (tp + fp)`.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.degenerate())
    }

    /// `tp / (tp + fn)`.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.degenerate())
    }

    /// `Pr·Se / (Pr + Se − Pr·Se)`.
    pub fn iou(&self) -> f64 {
        if self.empty_vs_empty() {
            return 1.0;
        }
        let (pr, se) = (self.precision(), self.sensitivity());
        let den = pr + se - pr * se;
        if den == 0.0 {
            0.0
        } else {
            pr * se / den
        }
    }

    /// `tp / (tp + fp + fn)`, equal to [`Self::iou`].
    pub fn iou_direct(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_, 1.0)
    }

    /// `2·Pr·Se / (Pr + Se)`.
    pub fn f1(&self) -> f64 {
        if self.empty_vs_empty() {
            return 1.0;
        }
        let (pr, se) = (self.precision(), self.sensitivity());
        if pr + se == 0.0 {
            0.0
        } else {
            2.0 * pr * se / (pr + se)
        }
    }

    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    c.iou()
}

pub fn f1(c: &ConfusionCounts) -> f64 {
    c.f1()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub counts: ConfusionCounts,
    pub pr: f64,
    pub se: f64,
    pub iou: f64,
    pub f1: f64,
}

impl ImageMetrics {
    pub fn new(id: impl Into<String>, counts: ConfusionCounts) -> Self {
        ImageMetrics {
            id: id.into(),
            counts,
            pr: counts.precision(),
            se: counts.sensitivity(),
            iou: counts.iou(),
            f1: counts.f1(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub per_image: Vec<ImageMetrics>,
    /// Mean of per-image IoU.
    pub mean_iou: f64,
    pub mean_f1: f64,
    /// Metrics of the summed confusion counts.
    pub pooled: ImageMetrics,
}

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageMetrics>, threshold: f64) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Empty("MetricsReport"));
        }
        let n = per_image.len() as f64;
        let mean_iou = per_image.iter().map(|m| m.iou).sum::<f64>() / n;
        let mean_f1 = per_image.iter().map(|m| m.f1).sum::<f64>() / n;
        let total = per_image.iter().fold(ConfusionCounts::default(), |a, m| a + m.counts);
        Ok(MetricsReport {
            threshold,
            per_image,
            mean_iou,
            mean_f1,
            pooled: ImageMetrics::new("__pooled__", total),
        })
    }

    /// Thresholds each prediction and scores it against its mask.
    pub fn evaluate<T: Scalar>(
        ids: &[String],
        preds: &[Tensor4<T>],
        masks: &[Tensor4<T>],
        threshold: f64,
    ) -> Result<Self> {
        if ids.len() != preds.len() || preds.len() != masks.len() {
            return Err(Error::Config(format!(
                "{} ids, {} predictions, {} masks",
                ids.len(),
                preds.len(),
                masks.len()
            )));
        }
        let per_image = ids
            .iter()
            .zip(preds.iter().zip(masks))
            .map(|(id, (p, m))| Ok(ImageMetrics::new(id.clone(), confusion(&binarize(p, threshold)?, m)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(per_image, threshold)
    }

    /// Per-image rows, then a `__mean__` row (mean of per-image metrics)
    /// and a `__pooled__` row (metrics of summed counts).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,tp,fp,fn,tn,precision,sensitivity,iou,f1\n");
        let row = |out: &mut String, m: &ImageMetrics| {
            let c = m.counts;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                m.id, c.tp, c.fp, c.fn_, c.tn, m.pr, m.se, m.iou, m.f1
            ));
        };
        for m in &self.per_image {
            row(&mut out, m);
        }
        let n = self.per_image.len() as f64;
        let mean_pr = self.per_image.iter().map(|m| m.pr).sum::<f64>() / n;
        let mean_se = self.per_image.iter().map(|m| m.se).sum::<f64>() / n;
        out.push_str(&format!(
            "__mean__,,,,,{mean_pr},{mean_se},{},{}\n",
            self.mean_iou, self.mean_f1
        ));
        row(&mut out, &self.pooled);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use proptest::prelude::*;

    fn row(v: Vec<f64>) -> Tensor4<f64> {
        let n = v.len();
        Tensor4::from_vec(Shape4::new(1, 1, 1, n).unwrap(), v).unwrap()
    }

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&row(vec![0.5; 3]), 0.5).unwrap().data(), &[1.0; 3]);
        assert_eq!(binarize(&row(vec![0.4, 0.6]), 0.5).unwrap().data(), &[0.0, 1.0]);
        assert!(binarize(&row(vec![0.4]), 1.0).is_err());
    }

    #[test]
    fn confusion_examples() {
        let gt = row(vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(confusion(&gt, &gt).unwrap(), counts(4, 0, 0, 3));
        let inv = gt.map("t", |v| 1.0 - v).unwrap();
        assert_eq!(confusion(&inv, &gt).unwrap().tp, 0);
        let pred = row(vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(confusion(&pred, &gt).unwrap(), counts(2, 1, 2, 2));
        assert!(matches!(
            confusion(&row(vec![0.5]), &row(vec![1.0])),
            Err(Error::NonBinaryMask { index: 0, .. })
        ));
    }

    #[test]
    fn hand_case() {
        let c = counts(2, 1, 2, 0);
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.sensitivity() - 0.5).abs() < 1e-15);
        assert!((c.iou() - 0.4).abs() < 1e-15);
        assert!((c.f1() - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        let empty = counts(0, 0, 0, 10);
        assert_eq!(
            (empty.iou(), empty.f1(), empty.precision(), empty.sensitivity()),
            (1.0, 1.0, 1.0, 1.0)
        );
        for c in [counts(0, 3, 0, 1), counts(0, 0, 2, 1), counts(0, 1, 1, 0)] {
            assert_eq!((c.iou(), c.f1(), c.iou_direct()), (0.0, 0.0, 0.0));
        }
        let perfect = counts(5, 0, 0, 4);
        assert_eq!((perfect.iou(), perfect.f1()), (1.0, 1.0));
    }

    #[test]
    fn report_rows_and_csv() {
        let preds = vec![row(vec![0.9, 0.1]), row(vec![0.2, 0.2])];
        let masks = vec![row(vec![1.0, 1.0]), row(vec![0.0, 0.0])];
        let ids = vec!["a".to_string(), "b".to_string()];
        let r = MetricsReport::evaluate(&ids, &preds, &masks, 0.5).unwrap();
        assert_eq!(r.per_image.len(), 2);
        assert_eq!(r.mean_iou, 0.75);
        assert_eq!(r.pooled.iou, 0.5);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("__mean__,"));
        assert!(lines[4].starts_with("__pooled__,1,0,1,2,"));
        let back: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn identities(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
            let c = counts(tp, fp, fn_, tn);
            let (iou, f1) = (c.iou(), c.f1());
            prop_assert!((iou - c.iou_direct()).abs() <= 1e-12);
            if tp + fp + fn_ > 0 {
                prop_assert!((iou - f1 / (2.0 - f1)).abs() <= 1e-12);
            }
            for v in [iou, f1, c.precision(), c.sensitivity()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(f1, c.swapped().f1());
        }

        #[test]
        fn raising_threshold_is_monotone(v in prop::collection::vec(0.0f64..1.0, 1..50), t1 in 0.01f64..0.99, dt in 0.0f64..0.5) {
            let t2 = (t1 + dt).min(0.99);
            let x = row(v);
            let (a, b) = (binarize(&x, t1).unwrap(), binarize(&x, t2).unwrap());
            for (lo, hi) in a.data().iter().zip(b.data()) {
                prop_assert!(hi <= lo);
            }
        }
    }
}
