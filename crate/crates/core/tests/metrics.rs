mod common;

use common::brute_force_pr_auc;
use pmcnet::metrics::{dice_iou, dice_iou_counts, evaluate, evaluate_predictions, mean_auc, pr_auc, Pooling};
use pmcnet::model::{Pmcnet, PmcnetConfig};
use pmcnet::synth::{generate_sample, onehot, Mask, SynthSpec};
use pmcnet::{Error, Shape, Tensor};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 19.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("needs a positive", |(_, l)| l.iter().any(|&b| b))
}

#[test]
fn table_means() {
    let cases: [(&[f64], f64); 3] = [
        (&[83.47, 59.33, 33.35, 56.53], 58.17),
        (&[86.70, 61.16, 38.51, 65.56], 62.98),
        (&[51.20, 30.60], 40.90),
    ];
    for (aucs, want) in cases {
        assert!((mean_auc(aucs).unwrap() - want).abs() < 0.005);
    }
    assert_eq!(mean_auc(&[0.42]).unwrap(), 0.42);
    assert!(mean_auc(&[]).is_err());
}

#[test]
fn pr_auc_errors() {
    assert!(matches!(pr_auc(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedMetric(_))));
    assert!(pr_auc(&[0.1], &[true, false]).is_err());
    assert!(pr_auc(&[f64::NAN], &[true]).is_err());
}

#[test]
fn dice_iou_examples() {
    assert_eq!(dice_iou_counts(4, 8, 8), (0.5, 1.0 / 3.0));
    let m = Mask::from_fn(4, 4, |y, x| ((y + x) % 3) as u8);
    assert_eq!(dice_iou(&m, &m, 1).unwrap(), (1.0, 1.0));
    let other = Mask::from_fn(4, 4, |y, x| if (y + x) % 3 == 1 { 0 } else { 1 });
    assert_eq!(dice_iou(&other, &m, 1).unwrap(), (0.0, 0.0));
    assert_eq!(dice_iou(&m, &m, 4).unwrap(), (1.0, 1.0));
    assert!(dice_iou(&m, &Mask::background(4, 5), 1).is_err());
}

fn dataset(n: usize) -> Vec<pmcnet::synth::SegSample> {
    let spec = SynthSpec { n_images: n, ..SynthSpec::default() };
    (0..n).map(|i| generate_sample(&spec, 21, i)).collect()
}

#[test]
fn oracle_model_scores_one() {
    let data = dataset(6);
    let pairs: Vec<_> = data.iter().map(|s| (onehot(&s.mask, 5).unwrap(), s.mask.clone())).collect();
    for pooling in [Pooling::Micro, Pooling::PerImage] {
        let r = evaluate_predictions(&pairs, pooling).unwrap();
        assert_eq!(r.mauc, 1.0);
        assert_eq!(r.mean_dice, 1.0);
        assert_eq!(r.mean_iou, 1.0);
    }
}

#[test]
fn uniform_model_scores_prevalence() {
    let data = dataset(6);
    let pairs: Vec<_> = data
        .iter()
        .map(|s| (Tensor::full(Shape::new(1, 5, 32, 32), 0.2), s.mask.clone()))
        .collect();
    let r = evaluate_predictions(&pairs, Pooling::Micro).unwrap();
    let total = (6 * 32 * 32) as f64;
    for c in &r.classes {
        match c.auc {
            Some(auc) => assert!((auc - c.positives as f64 / total).abs() < 1e-12),
            None => assert_eq!(c.positives, 0),
        }
    }
}

#[test]
fn untrained_model_report_in_range() {
    let data = dataset(4);
    let net = Pmcnet::init(PmcnetConfig::default(), 2).unwrap();
    for pooling in [Pooling::Micro, Pooling::PerImage] {
        let r = evaluate(&net, &data, pooling).unwrap();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        assert!(unit(r.mauc) && unit(r.mean_dice) && unit(r.mean_iou));
        for c in &r.classes {
            assert!(c.auc.map_or(true, unit) && unit(c.dice) && unit(c.iou));
        }
        assert_eq!(r.to_table().lines().count(), 6);
        assert!(r.to_kv().contains("mauc="));
    }
    assert!(evaluate(&net, &[], Pooling::Micro).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pr_auc_matches_brute_force((scores, labels) in instance()) {
        let got = pr_auc(&scores, &labels).unwrap();
        prop_assert!((got - brute_force_pr_auc(&scores, &labels)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn pr_auc_rank_invariant((scores, labels) in instance()) {
        let a = pr_auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
        prop_assert_eq!(a, pr_auc(&warped, &labels).unwrap());
    }

    #[test]
    fn pr_auc_permutation_invariant((scores, labels) in instance(), rot in 0usize..200) {
        let a = pr_auc(&scores, &labels).unwrap();
        let k = rot % scores.len();
        let (mut s2, mut l2) = (scores.clone(), labels.clone());
        s2.rotate_left(k);
        l2.rotate_left(k);
        s2.reverse();
        l2.reverse();
        prop_assert!((a - pr_auc(&s2, &l2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dice_iou_identity(i in 0usize..500, extra_a in 0usize..500, extra_b in 0usize..500) {
        let (d, j) = dice_iou_counts(i, i + extra_a, i + extra_b);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
    }
}
