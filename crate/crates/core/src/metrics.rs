//! Pixel-level precision-recall AUC, Dice and IoU, and the evaluation report.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::model::Pmcnet;
use crate::synth::{Mask, SegSample, CLASS_NAMES};
use crate::tensor::Tensor;

/// Area under the precision-recall curve by the average-precision rule.
///
/// Equal scores form one threshold group; each group adds
/// `(R_j - R_{j-1}) * P_j`.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid(format!(
            "pr_auc: {} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("pr_auc score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("pr_auc with no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let p = positives as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / p;
        if recall > prev_recall {
            auc += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
            prev_recall = recall;
        }
    }
    Ok(auc)
}

/// `(recall, precision)` at every threshold group, in descending score order.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(invalid("pr_curve: scores and labels differ in length"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("pr_curve with no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// Arithmetic mean of per-class AUCs.
pub fn mean_auc(aucs: &[f64]) -> Result<f64> {
    if aucs.is_empty() {
        return Err(Error::UndefinedMetric("mean_auc of no classes".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Dice and IoU from intersection `i` and set sizes `a`, `b`.
pub fn dice_iou_counts(i: usize, a: usize, b: usize) -> (f64, f64) {
    match (a, b) {
        (0, 0) => (1.0, 1.0),
        (0, _) | (_, 0) => (0.0, 0.0),
        _ => {
            let (i, a, b) = (i as f64, a as f64, b as f64);
            (2.0 * i / (a + b), i / (a + b - i))
        }
    }
}

/// Intersection, predicted and ground-truth pixel counts for one class.
fn overlap(pred: &Mask, gt: &Mask, class: u8) -> Result<(usize, usize, usize)> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(invalid(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut counts = (0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p == class, g == class);
        counts.0 += (p && g) as usize;
        counts.1 += p as usize;
        counts.2 += g as usize;
    }
    Ok(counts)
}

pub fn dice_iou(pred: &Mask, gt: &Mask, class: u8) -> Result<(f64, f64)> {
    let (i, a, b) = overlap(pred, gt, class)?;
    Ok(dice_iou_counts(i, a, b))
}

/// How pixels are aggregated over an evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Pooling {
    /// All pixels of the set enter one curve / one overlap count per class.
    #[default]
    Micro,
    /// Metrics per image, averaged over the images where the class is present.
    PerImage,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Pooling::Micro),
            "per_image" => Ok(Pooling::PerImage),
            _ => Err(invalid(format!("unknown pooling {s:?} (expected micro or per_image)"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Micro => "micro",
            Pooling::PerImage => "per_image",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    /// `None` when the class has no ground-truth pixels.
    pub auc: Option<f64>,
    pub dice: f64,
    pub iou: f64,
    pub positives: usize,
}

impl ClassMetrics {
    pub fn present(&self) -> bool {
        self.auc.is_some()
    }
}

/// Per-lesion-class metrics (background excluded) and their means over
/// present classes.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub mauc: f64,
    pub mean_dice: f64,
    pub mean_iou: f64,
}

fn class_name(c: u8) -> String {
    CLASS_NAMES
        .get(c as usize)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("C{c}"))
}

impl MetricsReport {
    fn from_classes(classes: Vec<ClassMetrics>) -> Result<Self> {
        let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.present()).collect();
        let aucs: Vec<f64> = present.iter().filter_map(|c| c.auc).collect();
        let mauc = mean_auc(&aucs)?;
        let n = present.len() as f64;
        Ok(MetricsReport {
            mean_dice: present.iter().map(|c| c.dice).sum::<f64>() / n,
            mean_iou: present.iter().map(|c| c.iou).sum::<f64>() / n,
            mauc,
            classes,
        })
    }

    pub fn auc(&self, class: u8) -> Option<f64> {
        self.classes.iter().find(|c| c.class == class).and_then(|c| c.auc)
    }

    /// `class<TAB>auc<TAB>dice<TAB>iou` rows at 4 decimals, then a `mean` row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("class\tauc\tdice\tiou\n");
        for c in &self.classes {
            let auc = c.auc.map_or_else(|| "absent".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(s, "{}\t{auc}\t{:.4}\t{:.4}", class_name(c.class), c.dice, c.iou);
        }
        let _ = writeln!(s, "mean\t{:.4}\t{:.4}\t{:.4}", self.mauc, self.mean_dice, self.mean_iou);
        s
    }

    /// Flat `key=value` form with full-precision values.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            let name = class_name(c.class);
            match c.auc {
                Some(a) => _ = writeln!(s, "auc.{name}={a}"),
                None => _ = writeln!(s, "auc.{name}=absent"),
            }
            let _ = writeln!(s, "dice.{name}={}", c.dice);
            let _ = writeln!(s, "iou.{name}={}", c.iou);
            let _ = writeln!(s, "positives.{name}={}", c.positives);
        }
        let _ = writeln!(s, "mauc={}", self.mauc);
        let _ = writeln!(s, "mean_dice={}", self.mean_dice);
        let _ = writeln!(s, "mean_iou={}", self.mean_iou);
        s
    }
}

fn check_pair(probs: &Tensor, gt: &Mask) -> Result<()> {
    let s = probs.shape();
    if s.n != 1 || s.h != gt.height() || s.w != gt.width() || s.c < 2 {
        return Err(invalid(format!(
            "probabilities {s} do not match a {}x{} mask",
            gt.height(),
            gt.width()
        )));
    }
    if let Some(&c) = gt.data().iter().find(|&&c| c as usize >= s.c) {
        return Err(invalid(format!("mask class {c} out of range for {} classes", s.c)));
    }
    Ok(())
}

fn argmax_mask(probs: &Tensor) -> Mask {
    let s = probs.shape();
    let data = probs.argmax_channels().into_iter().map(|c| c as u8).collect();
    Mask::new(s.h, s.w, data).expect("argmax has one entry per pixel")
}

/// Metrics from `(probabilities (1, k, H, W), ground-truth mask)` pairs.
pub fn evaluate_predictions(pairs: &[(Tensor, Mask)], pooling: Pooling) -> Result<MetricsReport> {
    let Some((first, _)) = pairs.first() else {
        return Err(invalid("evaluation set is empty"));
    };
    let k = first.shape().c;
    for (p, m) in pairs {
        check_pair(p, m)?;
        if p.shape().c != k {
            return Err(invalid("class count differs across predictions"));
        }
    }
    let preds: Vec<Mask> = pairs.iter().map(|(p, _)| argmax_mask(p)).collect();
    let mut classes = Vec::with_capacity(k - 1);
    for c in 1..k {
        let class = c as u8;
        let positives: usize = pairs.iter().map(|(_, m)| m.counts(k)[c]).sum();
        let scores_of = |p: &Tensor| p.slice_channels(c, c + 1).map(Tensor::into_data);
        let labels_of = |m: &Mask| m.data().iter().map(|&v| v == class).collect::<Vec<_>>();
        let metrics = match pooling {
            Pooling::Micro => {
                let mut scores = Vec::new();
                let mut labels = Vec::new();
                let (mut i, mut a, mut b) = (0, 0, 0);
                for ((p, m), pred) in pairs.iter().zip(&preds) {
                    scores.extend(scores_of(p)?);
                    labels.extend(labels_of(m));
                    let o = overlap(pred, m, class)?;
                    (i, a, b) = (i + o.0, a + o.1, b + o.2);
                }
                let (dice, iou) = dice_iou_counts(i, a, b);
                let auc = match pr_auc(&scores, &labels) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                };
                ClassMetrics { class, auc, dice, iou, positives }
            }
            Pooling::PerImage => {
                let (mut auc, mut dice, mut iou, mut n) = (0.0, 0.0, 0.0, 0usize);
                for ((p, m), pred) in pairs.iter().zip(&preds) {
                    let labels = labels_of(m);
                    match pr_auc(&scores_of(p)?, &labels) {
                        Ok(v) => auc += v,
                        Err(Error::UndefinedMetric(_)) => continue,
                        Err(e) => return Err(e),
                    }
                    let (d, j) = dice_iou(pred, m, class)?;
                    dice += d;
                    iou += j;
                    n += 1;
                }
                if n == 0 {
                    ClassMetrics { class, auc: None, dice: 1.0, iou: 1.0, positives }
                } else {
                    let n = n as f64;
                    ClassMetrics {
                        class,
                        auc: Some(auc / n),
                        dice: dice / n,
                        iou: iou / n,
                        positives,
                    }
                }
            }
        };
        classes.push(metrics);
    }
    MetricsReport::from_classes(classes)
}

/// Runs the network on every sample and scores the predictions.
pub fn evaluate(model: &Pmcnet, samples: &[SegSample], pooling: Pooling) -> Result<MetricsReport> {
    let pairs = samples
        .iter()
        .map(|s| Ok((model.predict(&s.image)?, s.mask.clone())))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&pairs, pooling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::onehot;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pr_curve_points() {
        let pts = pr_curve(&[0.9, 0.8, 0.8, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(pts, vec![(0.5, 1.0), (1.0, 2.0 / 3.0), (1.0, 0.5)]);
        assert!(pr_curve(&[0.2], &[false]).is_err());
    }

    #[test]
    fn pr_auc_examples() {
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.3, 0.3, 0.2], &[true, true, true]).unwrap(), 1.0);
        let v = pr_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert_abs_diff_eq!(v, 0.5 + 0.5 * 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pr_auc_ties_enter_together() {
        // one group: precision = prevalence
        let v = pr_auc(&[0.5; 4], &[true, false, false, false]).unwrap();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn pr_auc_needs_positives() {
        assert!(matches!(
            pr_auc(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(pr_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn mean_auc_table_rows() {
        assert_abs_diff_eq!(mean_auc(&[83.47, 59.33, 33.35, 56.53]).unwrap(), 58.17, epsilon = 0.005);
        assert_abs_diff_eq!(mean_auc(&[86.70, 61.16, 38.51, 65.56]).unwrap(), 62.98, epsilon = 0.005);
        assert_abs_diff_eq!(mean_auc(&[51.20, 30.60]).unwrap(), 40.90, epsilon = 0.005);
        assert!(mean_auc(&[]).is_err());
    }

    #[test]
    fn dice_iou_cases() {
        assert_eq!(dice_iou_counts(0, 0, 0), (1.0, 1.0));
        assert_eq!(dice_iou_counts(0, 3, 0), (0.0, 0.0));
        assert_eq!(dice_iou_counts(0, 3, 5), (0.0, 0.0));
        let (d, i) = dice_iou_counts(4, 8, 8);
        assert_eq!(d, 0.5);
        assert_abs_diff_eq!(i, 1.0 / 3.0, epsilon = 1e-15);
        let m = Mask::from_fn(4, 4, |y, _| (y % 3) as u8);
        assert_eq!(dice_iou(&m, &m, 1).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn oracle_predictions_score_one() {
        let masks = [
            Mask::from_fn(4, 4, |y, x| ((y + x) % 5) as u8),
            Mask::from_fn(4, 4, |y, x| ((y * x) % 5) as u8),
        ];
        let pairs: Vec<_> = masks.iter().map(|m| (onehot(m, 5).unwrap(), m.clone())).collect();
        for pooling in [Pooling::Micro, Pooling::PerImage] {
            let r = evaluate_predictions(&pairs, pooling).unwrap();
            assert_eq!(r.mauc, 1.0);
            assert_eq!(r.mean_dice, 1.0);
            assert_eq!(r.mean_iou, 1.0);
        }
    }

    #[test]
    fn absent_classes_excluded() {
        let m = Mask::from_fn(4, 4, |y, _| if y == 0 { 1 } else { 0 });
        let probs = Tensor::full(crate::Shape::new(1, 5, 4, 4), 0.2);
        let r = evaluate_predictions(&[(probs, m)], Pooling::Micro).unwrap();
        assert_abs_diff_eq!(r.mauc, 0.25, epsilon = 1e-15);
        assert_eq!(r.classes.iter().filter(|c| c.present()).count(), 1);
        assert!(r.to_table().contains("HE\tabsent"));
        assert!(r.to_kv().contains("auc.MA=absent\n"));
    }

    #[test]
    fn table_format() {
        let m = Mask::from_fn(2, 2, |_, x| x as u8);
        let pairs = vec![(onehot(&m, 2).unwrap(), m)];
        let r = evaluate_predictions(&pairs, Pooling::Micro).unwrap();
        assert_eq!(
            r.to_table(),
            "class\tauc\tdice\tiou\nEX\t1.0000\t1.0000\t1.0000\nmean\t1.0000\t1.0000\t1.0000\n"
        );
    }
}
