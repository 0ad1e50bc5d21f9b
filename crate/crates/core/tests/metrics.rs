use mrsnet::data_model::{AnnotationType, BinaryMask};
use mrsnet::metrics::{aggregate, sample_iou, split_table, MetricReport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pixel-by-pixel reference for one mask pair: (intersection, union).
fn count_pixels(pred: &BinaryMask, gt: &BinaryMask) -> (u64, u64) {
    let (mut i, mut u) = (0, 0);
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            let (p, g) = (pred.get(r, c), gt.get(r, c));
            i += u64::from(p && g);
            u += u64::from(p || g);
        }
    }
    (i, u)
}

fn random_pairs(n: usize, seed: u64) -> Vec<(BinaryMask, BinaryMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let density_p: f64 = rng.random_range(0.0..1.0);
            let density_g: f64 = rng.random_range(0.0..1.0);
            // Every tenth pair is both-empty to exercise the non-object rule.
            let empty = k % 10 == 9;
            let pred = BinaryMask::from_fn(h, w, |_, _| !empty && rng.random_bool(density_p));
            let gt = BinaryMask::from_fn(h, w, |_, _| !empty && rng.random_bool(density_g));
            (pred, gt)
        })
        .collect()
}

#[test]
fn aggregate_matches_pixel_counting_oracle() {
    let pairs = random_pairs(50, 2024);
    let thresholds = [0.5, 0.6, 0.7, 0.8, 0.9];
    let records: Vec<_> = pairs
        .iter()
        .enumerate()
        .map(|(k, (p, g))| {
            let kind = if g.is_empty() { AnnotationType::NonObject } else { AnnotationType::Single };
            sample_iou(format!("{k}"), p, g, kind).unwrap()
        })
        .collect();
    let report = aggregate(&records, &thresholds).unwrap();

    let (mut inter, mut union, mut ious) = (0u64, 0u64, Vec::new());
    for ((p, g), rec) in pairs.iter().zip(&records) {
        let (i, u) = count_pixels(p, g);
        assert_eq!((rec.intersection, rec.union), (i, u));
        inter += i;
        union += u;
        ious.push(if u == 0 { 1.0 } else { i as f64 / u as f64 });
    }
    let miou = 100.0 * ious.iter().sum::<f64>() / ious.len() as f64;
    let oiou = 100.0 * inter as f64 / union as f64;
    assert!((report.mean_iou - miou).abs() < 1e-9);
    assert!((report.overall_iou - oiou).abs() < 1e-9);
    for &t in &thresholds {
        let hits = ious.iter().filter(|&&x| x >= t).count();
        let expected = 100.0 * hits as f64 / ious.len() as f64;
        assert!((report.precision_at(t).unwrap() - expected).abs() < 1e-9);
    }
    let p: Vec<f64> = report.precision.iter().map(|&(_, v)| v).collect();
    assert!(p.windows(2).all(|w| w[0] >= w[1]), "{p:?}");
}

#[test]
fn left_half_against_full_is_one_half() {
    let pred = BinaryMask::from_fn(4, 4, |_, c| c < 2);
    let gt = BinaryMask::from_fn(4, 4, |_, _| true);
    let rec = sample_iou("a", &pred, &gt, AnnotationType::Single).unwrap();
    assert_eq!((rec.intersection, rec.union, rec.iou), (8, 16, 0.5));
}

#[test]
fn report_has_table_columns_in_order() {
    let gt = BinaryMask::from_fn(4, 4, |r, _| r < 2);
    let rec = sample_iou("a", &gt, &gt, AnnotationType::Single).unwrap();
    let report: MetricReport = aggregate(&[rec], &[0.7, 0.8, 0.9]).unwrap();
    assert_eq!(report.columns(), ["P@0.7", "P@0.8", "P@0.9", "oIoU", "mIoU"]);
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(json, r#"{"P@0.7":100.0,"P@0.8":100.0,"P@0.9":100.0,"oIoU":100.0,"mIoU":100.0}"#);
    let table = split_table(&[("MRSNet".into(), Some(&report), None)]);
    let header: Vec<&str> = table.lines().next().unwrap().split("  ").map(str::trim).filter(|s| !s.is_empty()).collect();
    assert_eq!(
        header,
        [
            "Method", "P@0.7 val", "P@0.7 test", "P@0.8 val", "P@0.8 test", "P@0.9 val", "P@0.9 test",
            "oIoU val", "oIoU test", "mIoU val", "mIoU test"
        ]
    );
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0u8..=1, h * w),
            proptest::collection::vec(0u8..=1, h * w),
        )
            .prop_map(move |(p, g)| (BinaryMask::new(h, w, p).unwrap(), BinaryMask::new(h, w, g).unwrap()))
    })
}

proptest! {
    #[test]
    fn iou_is_a_bounded_ratio((pred, gt) in mask_pair()) {
        let rec = sample_iou("x", &pred, &gt, AnnotationType::Single).unwrap();
        prop_assert!(rec.intersection <= rec.union);
        prop_assert!((0.0..=1.0).contains(&rec.iou));
        if rec.union > 0 {
            prop_assert_eq!(rec.iou, rec.intersection as f64 / rec.union as f64);
        } else {
            prop_assert_eq!(rec.iou, 1.0);
        }
        // IoU is symmetric in its arguments.
        let swapped = sample_iou("x", &gt, &pred, AnnotationType::Single).unwrap();
        prop_assert_eq!(swapped.iou, rec.iou);
    }

    #[test]
    fn precision_never_increases_with_threshold(pairs in proptest::collection::vec(mask_pair(), 1..20)) {
        let records: Vec<_> = pairs
            .iter()
            .map(|(p, g)| sample_iou("x", p, g, AnnotationType::Multi).unwrap())
            .collect();
        let report = aggregate(&records, &[0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        for w in report.precision.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        prop_assert!(report.mean_iou >= 0.0 && report.mean_iou <= 100.0);
        prop_assert!(report.overall_iou >= 0.0 && report.overall_iou <= 100.0);
    }
}
