//! Library results checked against independent brute-force oracles.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use anchorlens_core::anchors::{best_anchor_for_box, PyramidLevel, Template};
use anchorlens_core::assignment::{
    assign, select_hard_negatives, soft_weight, MatchStrategy, SoftThresholdParams,
};
use anchorlens_core::mmd::{extract_mmd, MmdThresholds, ScoreTrack};
use anchorlens_core::{generate_anchors, iou, AnchorSet, BBox, ImageExtent, PyramidConfig};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eleven() -> AnchorSet {
    generate_anchors(&PyramidConfig {
        extent: ImageExtent::new(20, 20).unwrap(),
        levels: vec![
            PyramidLevel {
                grid_w: 2,
                grid_h: 2,
                stride_x: 10.0,
                stride_y: 10.0,
                templates: vec![Template(8.0, 8.0), Template(12.0, 6.0)],
            },
            PyramidLevel {
                grid_w: 1,
                grid_h: 1,
                stride_x: 20.0,
                stride_y: 20.0,
                templates: vec![Template(16.0, 16.0), Template(20.0, 10.0), Template(10.0, 20.0)],
            },
        ],
    })
    .unwrap()
}

#[test]
fn iou_examples_match_raster_oracle() {
    let b = |x0, y0, x1, y1| BBox::new(x0, y0, x1, y1).unwrap();
    let pairs = [
        (b(0.0, 0.0, 2.0, 2.0), b(1.0, 1.0, 3.0, 3.0)),
        (b(0.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 10.0)),
        (b(0.0, 0.0, 10.0, 10.0), b(20.0, 20.0, 30.0, 30.0)),
    ];
    for (a, c) in pairs {
        assert!((iou(&a, &c) - raster_iou(&a, &c, 1000)).abs() < 1e-3);
    }
    let oracle = raster_iou(&pairs[0].0, &pairs[0].1, 1000);
    assert!((oracle - 1.0 / 7.0).abs() < 1e-3);
    assert!((iou(&pairs[0].0, &pairs[0].1) - 1.0 / 7.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn iou_matches_raster_oracle(a in int_box(20), b in int_box(20)) {
        prop_assert!((iou(&a, &b) - raster_iou(&a, &b, 1000)).abs() < 1e-3);
    }

    #[test]
    fn anchor_enumeration_matches_nested_loops(cfg in pyramid()) {
        let set = generate_anchors(&cfg).unwrap();
        let mut expected = Vec::new();
        for (l, level) in cfg.levels.iter().enumerate() {
            for j in 0..level.grid_h {
                for i in 0..level.grid_w {
                    for (t, tpl) in level.templates.iter().enumerate() {
                        expected.push((l, i, j, t, tpl.0, tpl.1, level.stride_x, level.stride_y));
                    }
                }
            }
        }
        prop_assert_eq!(set.len(), expected.len());
        for (a, &(l, i, j, t, w, h, sx, sy)) in set.anchors().iter().zip(&expected) {
            prop_assert_eq!((a.level, a.cell_i, a.cell_j, a.template), (l, i, j, t));
            let (cx, cy) = a.bbox.center();
            prop_assert_eq!(cx, (f64::from(i) + 0.5) * sx);
            prop_assert_eq!(cy, (f64::from(j) + 0.5) * sy);
            prop_assert!((a.bbox.width() - w).abs() < 1e-9 && (a.bbox.height() - h).abs() < 1e-9);
        }
    }

    #[test]
    fn best_anchor_matches_exhaustive_scan(target in real_box()) {
        let set = eleven();
        let mut best = (usize::MAX, -1.0);
        for a in set.anchors() {
            let r = iou(&a.bbox, &target);
            if r > best.1 {
                best = (a.id, r);
            }
        }
        let (found, r) = best_anchor_for_box(set.anchors(), &target).unwrap();
        prop_assert_eq!(found.id, best.0);
        prop_assert_eq!(r, best.1);
    }

    #[test]
    fn retinanet_matches_pairwise_oracle(g0 in int_box(20), g1 in int_box(20)) {
        let set = eleven();
        let gts = [g0, g1];
        let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
        let mut negatives = BTreeSet::new();
        for a in set.anchors() {
            let r: Vec<f64> = gts.iter().map(|g| iou(&a.bbox, g)).collect();
            if let Some(g) = (0..2).find(|&g| r[g] >= 0.5) {
                rows.insert(a.id, g);
            } else if r.iter().cloned().fold(0.0, f64::max) < 0.4 {
                negatives.insert(a.id);
            }
        }
        let mut fallback = vec![false; 2];
        for (g, gt) in gts.iter().enumerate() {
            if rows.values().any(|&o| o == g) {
                continue;
            }
            let (best, _) = best_anchor_for_box(set.anchors(), gt).unwrap();
            // A fallback that would have to displace another box's anchor is
            // outside what this oracle models.
            prop_assume!(!rows.contains_key(&best.id));
            rows.insert(best.id, g);
            negatives.remove(&best.id);
            fallback[g] = true;
        }

        let table = assign(&set, &gts, &MatchStrategy::preset("retinanet", SoftThresholdParams::default()).unwrap()).unwrap();
        let got: BTreeMap<usize, usize> = table.rows.iter().map(|r| (r.anchor_id, r.gt_index)).collect();
        prop_assert_eq!(got, rows);
        prop_assert!(table.rows.iter().all(|r| r.weight == 1.0));
        prop_assert_eq!(&table.negatives, &negatives);
        prop_assert_eq!(table.fallback, fallback);
    }

    #[test]
    fn hard_negatives_match_sort_oracle(
        losses in prop::collection::vec(0u32..20, 0..40),
        positives in 0usize..8,
        ratio in 1usize..5,
    ) {
        let candidates: BTreeMap<usize, f64> = losses.iter().enumerate().map(|(k, &l)| (k * 3, f64::from(l))).collect();
        let mut ranked: Vec<(usize, f64)> = candidates.iter().map(|(&k, &l)| (k, l)).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let quota = (ratio * positives).min(ranked.len());
        let expected: BTreeSet<usize> = ranked[..quota].iter().map(|&(k, _)| k).collect();
        let got = select_hard_negatives(&candidates, positives, ratio).unwrap();
        prop_assert_eq!(got.len(), quota);
        prop_assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), expected);
    }
}

#[test]
fn soft_slope_matches_bisection() {
    let p = SoftThresholdParams::default();
    let slope = bisect_slope(0.1, 0.001);
    assert!((p.slope() - slope).abs() < 1e-9);
    let oracle = 1.0 / (1.0 + (-slope * 0.05).exp());
    assert!((soft_weight(0.55, &p) - oracle).abs() < 1e-12);
    assert!((soft_weight(0.55, &p) - 0.969331702).abs() < 1e-9);
}

#[test]
fn extract_mmd_matches_substitution_on_random_tracks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let levels = [0.0, 0.3, 0.45, 0.5, 0.55, 0.6, 0.8, 0.9, 1.0];
    for _ in 0..1000 {
        let len: usize = rng.random_range(0..20);
        let p: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.5) {
                    levels[rng.random_range(0..levels.len())]
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let (gmin, gratio, gmax) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.99), rng.random_range(0.1..1.0));
        let th = MmdThresholds::new(gmin, gratio, gmax).unwrap();
        let got: Vec<u32> = extract_mmd(&ScoreTrack::from_scores("v", 0, 0, &p), &th)
            .iter()
            .map(|f| f.frame_index)
            .collect();
        let expected: Vec<u32> = (1..len.saturating_sub(1))
            .filter(|&t| mmd_by_substitution(&p, t, gmin, gratio, gmax))
            .map(|t| t as u32)
            .collect();
        assert_eq!(got, expected, "track {p:?}");
    }
}
