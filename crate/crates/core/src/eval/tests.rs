use proptest::prelude::*;

use super::*;

fn rec(frame: usize, id: u64, left: f64, top: f64) -> MotRecord {
    MotRecord { frame, id, bbox: BBox { left, top, width: 10.0, height: 10.0 }, conf: 1.0 }
}

/// Two objects over four frames; the tracker swaps their ids from frame 3 on.
fn swap_instance() -> (Vec<MotRecord>, Vec<MotRecord>) {
    let mut gt = Vec::new();
    let mut res = Vec::new();
    for f in 1..=4 {
        gt.push(rec(f, 1, 0.0, 0.0));
        gt.push(rec(f, 2, 50.0, 50.0));
        let (a, b) = if f < 3 { (1, 2) } else { (2, 1) };
        res.push(rec(f, a, 0.0, 0.0));
        res.push(rec(f, b, 50.0, 50.0));
    }
    (gt, res)
}

#[test]
fn perfect_tracker() {
    let (gt, _) = swap_instance();
    let r = evaluate(&gt, &gt, 0.5).unwrap();
    assert_eq!((r.mota, r.idf1, r.hota, r.deta, r.assa, r.idsw), (1.0, 1.0, 1.0, 1.0, 1.0, 0));
}

#[test]
fn empty_results() {
    let (gt, _) = swap_instance();
    let r = evaluate(&gt, &[], 0.5).unwrap();
    assert_eq!((r.mota, r.deta, r.hota, r.idf1), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(r.r#fn, 8);
}

/// Best identity mapping by trying every injective map from result ids to ground-truth ids.
fn idf1_oracle(gt: &[MotRecord], res: &[MotRecord]) -> f64 {
    let gt_ids: BTreeSet<u64> = gt.iter().map(|r| r.id).collect();
    let res_ids: Vec<u64> = res.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let gt_ids: Vec<u64> = gt_ids.into_iter().collect();
    fn rec_best(k: usize, res_ids: &[u64], gt_ids: &[u64], used: &mut Vec<bool>, map: &mut Vec<Option<u64>>, eval: &dyn Fn(&[Option<u64>]) -> usize) -> usize {
        if k == res_ids.len() {
            return eval(map);
        }
        let mut best = {
            map.push(None);
            let v = rec_best(k + 1, res_ids, gt_ids, used, map, eval);
            map.pop();
            v
        };
        for g in 0..gt_ids.len() {
            if !used[g] {
                used[g] = true;
                map.push(Some(gt_ids[g]));
                best = best.max(rec_best(k + 1, res_ids, gt_ids, used, map, eval));
                map.pop();
                used[g] = false;
            }
        }
        best
    }
    let eval = |map: &[Option<u64>]| {
        res.iter()
            .filter(|r| {
                let k = res_ids.iter().position(|&id| id == r.id).unwrap();
                map[k].is_some_and(|g| gt.iter().any(|x| x.frame == r.frame && x.id == g && x.bbox.iou(&r.bbox) >= 0.5))
            })
            .count()
    };
    let idtp = rec_best(0, &res_ids, &gt_ids, &mut vec![false; gt_ids.len()], &mut Vec::new(), &eval);
    2.0 * idtp as f64 / (gt.len() + res.len()) as f64
}

#[test]
fn id_swap_hand_instance() {
    let (gt, res) = swap_instance();
    let r = evaluate(&gt, &res, 0.5).unwrap();
    assert_eq!(r.idsw, 2);
    assert_eq!(r.mota, 0.75);
    assert_eq!(r.idf1, 0.5);
    assert_eq!(idf1_oracle(&gt, &res), 0.5);
    assert_eq!(r.deta, 1.0);
    // Each of the four (gt, result) id pairs: TPA = 2, FPA = 2, FNA = 2.
    assert!((r.assa - 1.0 / 3.0).abs() < 1e-12, "AssA {}", r.assa);
    assert!((r.hota - (r.deta * r.assa).sqrt()).abs() < 1e-9);
}

#[test]
fn idf1_matches_oracle_on_fragmented_tracks() {
    let (gt, _) = swap_instance();
    let res = vec![
        rec(1, 7, 0.0, 0.0),
        rec(2, 7, 0.0, 0.0),
        rec(3, 8, 0.0, 0.0),
        rec(4, 7, 1.0, 1.0),
        rec(1, 9, 50.0, 50.0),
        rec(2, 9, 80.0, 80.0),
        rec(3, 9, 50.0, 50.0),
        rec(4, 8, 50.0, 50.0),
    ];
    let r = evaluate(&gt, &res, 0.5).unwrap();
    assert!((r.idf1 - idf1_oracle(&gt, &res)).abs() < 1e-12);
}

#[test]
fn continuing_match_is_preferred() {
    let gt = vec![rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)];
    let res = vec![rec(1, 5, 0.0, 0.0), rec(2, 5, 3.0, 0.0), rec(2, 6, 0.0, 0.0)];
    let r = evaluate(&gt, &res, 0.5).unwrap();
    assert_eq!((r.idsw, r.fp), (0, 1));
}

#[test]
fn invisible_gt_is_ignored() {
    let mut gt = vec![rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)];
    gt[1].conf = 0.0;
    let r = evaluate(&gt, &[rec(1, 1, 0.0, 0.0)], 0.5).unwrap();
    assert_eq!((r.num_gt, r.mota), (1, 1.0));
}

#[test]
fn errors() {
    let (gt, _) = swap_instance();
    assert!(evaluate(&gt, &[rec(5, 1, 0.0, 0.0)], 0.5).is_err());
    assert!(evaluate(&gt, &[rec(1, 1, 0.0, 0.0), rec(1, 1, 9.0, 0.0)], 0.5).is_err());
    assert!(evaluate(&gt, &gt, 0.0).is_err());
}

fn arb_instance() -> impl Strategy<Value = (Vec<MotRecord>, Vec<MotRecord>)> {
    let boxes = |max_id: u64| prop::collection::vec((1usize..=5, 1..=max_id, 0.0f64..40.0, 0.0f64..40.0), 0..25);
    (boxes(4), boxes(6)).prop_map(|(g, p)| {
        let dedup = |v: Vec<(usize, u64, f64, f64)>| {
            let mut seen = BTreeSet::new();
            v.into_iter().filter(|(f, id, _, _)| seen.insert((*f, *id))).map(|(f, id, x, y)| rec(f, id, x, y)).collect::<Vec<_>>()
        };
        let mut gt = dedup(g);
        gt.extend((3..=5).map(|f| rec(f, 99, 100.0, 100.0)));
        (gt, dedup(p))
    })
}

proptest! {
    #[test]
    fn metric_ranges((gt, res) in arb_instance()) {
        let r = evaluate(&gt, &res, 0.5).unwrap();
        prop_assert!(r.mota <= 1.0 && r.mota >= -10.0);
        for v in [r.idf1, r.hota, r.deta, r.assa] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!((r.hota - (r.deta * r.assa).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn invariant_to_id_relabeling((gt, res) in arb_instance(), shift in 1u64..1000) {
        let a = evaluate(&gt, &res, 0.5).unwrap();
        let relabel = |v: &[MotRecord], f: &dyn Fn(u64) -> u64| v.iter().map(|r| MotRecord { id: f(r.id), ..*r }).collect::<Vec<_>>();
        let gt2 = relabel(&gt, &|id| 1000 - id);
        let res2 = relabel(&res, &|id| id * 7 + shift);
        let b = evaluate(&gt2, &res2, 0.5).unwrap();
        prop_assert_eq!((a.idsw, a.fp, a.r#fn), (b.idsw, b.fp, b.r#fn));
        for (x, y) in [(a.mota, b.mota), (a.idf1, b.idf1), (a.hota, b.hota), (a.assa, b.assa)] {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
