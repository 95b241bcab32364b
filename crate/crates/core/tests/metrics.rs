mod common;

use common::{permute_ids, random_streams, swap_thing_classes};
use panoptic4d::classes::ClassMap;
use panoptic4d::kitti_io::PanopticLabels;
use panoptic4d::metrics::*;
use proptest::prelude::*;

fn config() -> EvalConfig {
    EvalConfig::new(ClassMap::default())
}

fn report(gt: &[PanopticLabels], pred: &[PanopticLabels]) -> MetricReport {
    evaluate(&[gt.to_vec()], &[pred.to_vec()], &config()).unwrap()
}

fn labels(sem: &[u32], ins: &[u32]) -> PanopticLabels {
    PanopticLabels::new(sem.to_vec(), ins.to_vec()).unwrap()
}

#[test]
fn combiner_reference_rows() {
    assert!((lstq(0.6046, 0.6511) - 0.6274).abs() < 5e-5);
    assert!((lstq(0.6095, 0.5879) - 0.5986).abs() < 5e-5);
    assert_eq!(lstq(0.7, 0.0), 0.0);
}

#[test]
fn table_eight_motorcycle_row() {
    let m = MotsCounts {
        tp: 231,
        fp: 747,
        fn_: 24,
        ids: 9,
        ..MotsCounts::default()
    };
    assert_eq!(m.gt_segments(), 255);
    assert!((m.motsa().unwrap() - (-2.06)).abs() < 5e-3);
}

#[test]
fn opposite_classes_score_zero() {
    let gt = vec![labels(&[40; 6], &[0; 6])];
    let pred = vec![labels(&[48; 6], &[0; 6])];
    assert_eq!(report(&gt, &pred).s_cls, 0.0);
}

#[test]
fn thing_points_without_id_form_no_tube() {
    // gt tube of 4 points; pred leaves two of them without an id
    let gt = vec![labels(&[10; 4], &[1; 4])];
    let pred = vec![labels(&[10; 4], &[3, 3, 0, 0])];
    let r = report(&gt, &pred);
    // one tube: TPA 2, IoU 2/4, score 2·0.5/4
    assert!((r.s_assoc - 0.25).abs() < 1e-15);
    assert_eq!(r.tubes, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn streaming_matches_brute_force(seed in any::<u64>()) {
        let (gt, pred) = random_streams(seed);
        let c = config();
        let a = s_assoc(&gt, &pred, &c).unwrap();
        let b = brute_force_s_assoc(&gt, &pred, &c).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn association_ignores_id_names(seed in any::<u64>()) {
        let (gt, pred) = random_streams(seed);
        let base = report(&gt, &pred);
        for (g, p) in [(gt.clone(), permute_ids(&pred, seed)), (permute_ids(&gt, seed ^ 1), pred.clone())] {
            let r = report(&g, &p);
            prop_assert!((r.s_assoc - base.s_assoc).abs() <= 1e-12);
            prop_assert!((r.pq - base.pq).abs() <= 1e-12);
            prop_assert_eq!(r.mots_totals.ids, base.mots_totals.ids);
            prop_assert_eq!(r.motsa, base.motsa);
        }
    }

    #[test]
    fn association_ignores_thing_class(seed in any::<u64>()) {
        let (gt, pred) = random_streams(seed);
        let a = report(&gt, &pred);
        let b = report(&gt, &swap_thing_classes(&pred));
        prop_assert!((a.s_assoc - b.s_assoc).abs() <= 1e-12);
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>()) {
        let (gt, pred) = random_streams(seed);
        let r = report(&gt, &pred);
        for v in [r.lstq, r.s_cls, r.s_assoc, r.pq, r.sq, r.rq, r.miou, r.pq_dagger, r.pq_sequence] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
        prop_assert!((r.lstq - (r.s_cls * r.s_assoc).sqrt()).abs() <= 1e-15);
        prop_assert_eq!(r.miou, r.s_cls);
        if let Some(m) = r.motsa {
            prop_assert!(m <= 1.0);
        }
    }

    #[test]
    fn self_evaluation_is_perfect(seed in any::<u64>()) {
        let (gt, _) = random_streams(seed);
        let r = report(&gt, &gt);
        prop_assert_eq!(r.s_assoc, 1.0);
        prop_assert!(r.s_cls == 1.0 || r.points == 0);
        prop_assert_eq!(r.mots_totals.ids, 0);
    }

    #[test]
    fn correct_point_never_lowers_its_tube(seed in any::<u64>()) {
        let (gt, pred) = random_streams(seed);
        let c = config();
        let mut acc = AssocAccumulator::default();
        for (g, p) in gt.iter().zip(&pred) {
            for i in 0..g.len() {
                if let Some(m) = c.map_point(g, p, i).unwrap() {
                    acc.add(0, &m, &c);
                }
            }
        }
        let before = acc.tube_scores();
        for (tube, score) in &before {
            // the pred tube with the largest overlap is the correct association
            let Some(((_, best), _)) = acc.tpa.iter().filter(|((g, _), _)| g == tube).max_by_key(|(k, v)| (**v, std::cmp::Reverse(**k))) else {
                continue;
            };
            let class = *acc.gt_class_hist[tube].keys().next().unwrap();
            let point = MappedPoint { gt_class: class, gt_id: tube.1, pred_class: class, pred_id: best.1 };
            let mut grown = acc.clone();
            grown.add(0, &point, &c);
            prop_assert!(grown.tube_scores()[tube] >= score - 1e-15);
        }
    }
}
