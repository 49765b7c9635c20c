use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use suba::partition::bind_thresholds;
use suba::{Arm, BetaHyper, BiomarkerMatrix, PartitionCatalog, PosteriorState, PriorParams, TrialData};

const K: usize = 3;
const ARMS: usize = 3;

fn catalog() -> Arc<PartitionCatalog> {
    static C: OnceLock<Arc<PartitionCatalog>> = OnceLock::new();
    C.get_or_init(|| Arc::new(PartitionCatalog::with_prior(&PriorParams::uniform(K, 0.5).unwrap()).unwrap()))
        .clone()
}

#[derive(Debug, Clone)]
struct Row {
    x: Vec<f64>,
    arm: usize,
    y: Option<bool>,
}

fn rows(max: usize) -> impl Strategy<Value = Vec<Row>> {
    let row = (
        prop::collection::vec(-1.0f64..1.0, K),
        0..ARMS,
        prop::option::weighted(0.9, any::<bool>()),
    )
        .prop_map(|(x, arm, y)| Row { x, arm, y });
    prop::collection::vec(row, 1..=max)
}

fn data_of(rows: &[Row]) -> TrialData {
    let mut d = TrialData::new(K);
    for r in rows {
        d.push(&r.x, Some(Arm(r.arm)), r.y).unwrap();
    }
    d
}

fn rebuild(rows: &[Row]) -> PosteriorState {
    PosteriorState::rebuild(catalog(), &data_of(rows), BetaHyper::uniform(), ARMS).unwrap()
}

fn probe() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.2f64..1.2, K)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weights_sum_to_one_and_q_is_interior(rows in rows(40), x in probe()) {
        let s = rebuild(&rows);
        let total: f64 = (0..catalog().len()).map(|r| s.weight(r)).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        for q in s.predictive_all(&x).unwrap() {
            prop_assert!(q > 0.0 && q < 1.0);
        }
    }

    #[test]
    fn relabeling_markers_permutes_everything(rows in rows(30), x in probe(), perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let moved = |v: &[f64]| {
            let mut out = vec![0.0; K];
            for (k, &p) in perm.iter().enumerate() {
                out[p] = v[k];
            }
            out
        };
        let permuted: Vec<Row> = rows.iter().map(|r| Row { x: moved(&r.x), ..r.clone() }).collect();
        let (a, b) = (rebuild(&rows), rebuild(&permuted));
        let c = catalog();
        for r in 0..c.len() {
            let image = c.layout(r).relabel(&perm);
            let s = c.layouts().iter().position(|l| *l == image).unwrap();
            prop_assert!((a.weight(r) - b.weight(s)).abs() < 1e-12);
            prop_assert_eq!(c.log_priors().unwrap()[r], c.log_priors().unwrap()[s]);
            let (ta, tb) = (a.thresholded(r), b.thresholded(s));
            for row in &rows {
                prop_assert_eq!(ta.leaf_of(&row.x).unwrap(), tb.leaf_of(&moved(&row.x)).unwrap());
            }
        }
        let (qa, qb) = (a.predictive_all(&x).unwrap(), b.predictive_all(&moved(&x)).unwrap());
        for (u, v) in qa.iter().zip(&qb) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn row_order_does_not_matter(rows in rows(30), x in probe(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let (a, b) = (rebuild(&rows), rebuild(&shuffled));
        for r in 0..catalog().len() {
            prop_assert!((a.weight(r) - b.weight(r)).abs() < 1e-12);
            let (ca, cb) = (a.thresholded(r), b.thresholded(r));
            for (u, v) in ca.cuts().iter().zip(cb.cuts()) {
                prop_assert!(u == v || (u.is_nan() && v.is_nan()));
            }
        }
        prop_assert_eq!(a.predictive_all(&x).unwrap(), b.predictive_all(&x).unwrap());
    }

    #[test]
    fn an_extra_success_never_lowers_q(rows in rows(30), x in probe(), arm in 0..ARMS) {
        let before = rebuild(&rows);
        let mut more = data_of(&rows);
        more.push(&x, Some(Arm(arm)), Some(true)).unwrap();
        let after = before.rebuild_frozen(&more).unwrap();
        let (q0, q1) = (before.predictive(&x, Arm(arm)).unwrap(), after.predictive(&x, Arm(arm)).unwrap());
        prop_assert!(q1 >= q0 - 1e-14, "{} then {}", q0, q1);
    }

    #[test]
    fn co_clustering_is_a_similarity(rows in rows(25)) {
        let g = rebuild(&rows).co_clustering().unwrap();
        prop_assert_eq!(g.len(), rows.len());
        for i in 0..g.len() {
            prop_assert!((g.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..g.len() {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&g.get(i, j)));
            }
        }
    }

    #[test]
    fn every_point_lands_in_exactly_one_leaf(rows in rows(40), extra in prop::collection::vec(probe(), 20)) {
        let m = BiomarkerMatrix::from_rows(K, &rows.iter().map(|r| r.x.clone()).collect::<Vec<_>>()).unwrap();
        let c = catalog();
        for r in (0..c.len()).step_by(97) {
            let t = bind_thresholds(c.layout(r), &m);
            let mut counts = vec![0usize; t.leaf_count()];
            for x in rows.iter().map(|r| &r.x).chain(&extra) {
                counts[t.leaf_of(x).unwrap()] += 1;
            }
            prop_assert_eq!(counts.iter().sum::<usize>(), rows.len() + extra.len());
        }
    }

    #[test]
    fn rebuilds_are_bit_identical(rows in rows(40)) {
        let (a, b) = (rebuild(&rows), rebuild(&rows));
        prop_assert_eq!(a.log_weights(), b.log_weights());
    }
}

#[test]
fn separating_marker_gains_posterior_weight() {
    // Arm 1 responds exactly when marker 2 is high; arm 2 never does.
    let mut d = TrialData::new(K);
    for i in 0..20 {
        let m2 = if i % 2 == 0 { 0.6 } else { -0.6 } + 0.01 * i as f64;
        let arm = (i / 2) % 2;
        let y = arm == 0 && m2 > 0.0;
        d.push(&[0.3 - 0.03 * i as f64, m2, 0.1 * ((i * 7) % 5) as f64], Some(Arm(arm)), Some(y))
            .unwrap();
    }
    let c = catalog();
    let s = PosteriorState::rebuild(c.clone(), &d, BetaHyper::uniform(), 2).unwrap();
    let r = c.layouts().iter().position(|l| l.to_string() == "2(.,.)").unwrap();
    let prior = c.log_priors().unwrap()[r].exp();
    assert!(s.weight(r) > prior, "{} <= {}", s.weight(r), prior);
    let ls = s.least_squares_partition().unwrap();
    assert!(ls.layout.to_string().starts_with("2("), "{}", ls.layout);
}

#[test]
fn identical_profiles_have_unit_co_clustering() {
    let mut d = TrialData::new(K);
    for (i, x) in [[0.1, 0.2, 0.3], [-0.5, 0.9, 0.0], [0.1, 0.2, 0.3], [0.7, -0.4, 0.2]].iter().enumerate() {
        d.push(x, Some(Arm(i % 2)), Some(i % 3 == 0)).unwrap();
    }
    let g = PosteriorState::rebuild(catalog(), &d, BetaHyper::uniform(), 2)
        .unwrap()
        .co_clustering()
        .unwrap();
    assert!((g.get(0, 2) - 1.0).abs() < 1e-12);
}
