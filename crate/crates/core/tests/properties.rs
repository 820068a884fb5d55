use std::collections::BTreeSet;

use masgame::attack::{apply_spoof, greedy_attack, worst_case_attack, AttackActionSpace, SpoofingPlan};
use masgame::dynamics::{coupling_residual, predicted_weight};
use masgame::graph::{algebraic_connectivity, build_graph, lambda2, min_eigenvalue, weight, DISCONNECTED_EPS};
use masgame::sdp::player::centering;
use masgame::{AgentState, ArgConvention, Layer, Link, Position, WeightParams};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-3.0..3.0f64, -3.0..3.0f64, -1.0..2.0f64]
}

fn agents(max: usize) -> impl Strategy<Value = Vec<AgentState>> {
    prop::collection::vec(point(), 2..=max).prop_map(|pts| {
        pts.into_iter()
            .enumerate()
            .map(|(k, p)| AgentState::new(k + 1, if k % 2 == 0 { Layer::L1 } else { Layer::L2 }, p))
            .collect()
    })
}

fn weights() -> impl Strategy<Value = WeightParams> {
    (0.01..0.9f64, 0.2..3.0f64, 0.1..4.0f64, prop::bool::ANY).prop_map(|(delta, r_sat, gap, sq)| {
        let conv = if sq { ArgConvention::SquaredDistance } else { ArgConvention::Distance };
        WeightParams::new(delta, r_sat, r_sat + gap, conv).unwrap()
    })
}

proptest! {
    #[test]
    fn weight_is_bounded_and_nonincreasing(p in weights(), a in 0.0..10.0f64, b in 0.0..10.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (wl, wh) = (weight(lo, &p), weight(hi, &p));
        prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
        prop_assert!(wh <= wl + 1e-15);
    }

    #[test]
    fn laplacian_is_symmetric_with_zero_row_sums(a in agents(8), p in weights()) {
        let g = build_graph(&a, &p, &BTreeSet::new()).unwrap();
        let l = &g.laplacian;
        prop_assert!((l - l.transpose()).amax() < 1e-12);
        for i in 0..g.n() {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
        }
        prop_assert!(lambda2(&g) >= 0.0);
    }

    #[test]
    fn fiedler_vector_is_unit_and_balanced(a in agents(8), p in weights()) {
        let g = build_graph(&a, &p, &BTreeSet::new()).unwrap();
        let s = algebraic_connectivity(&g);
        prop_assert!((s.fiedler.norm() - 1.0).abs() < 1e-9);
        prop_assert!(s.fiedler.sum().abs() < 1e-9);
        prop_assert_eq!(s.is_connected(), s.lambda2 > DISCONNECTED_EPS);
    }

    #[test]
    fn lambda2_is_translation_invariant(a in agents(7), p in weights(), t in point()) {
        let g = build_graph(&a, &p, &BTreeSet::new()).unwrap();
        let d = Position::from(t);
        let moved: Vec<AgentState> = a.iter().map(|x| AgentState { position: x.position + d, ..x.clone() }).collect();
        let h = build_graph(&moved, &p, &BTreeSet::new()).unwrap();
        prop_assert!((lambda2(&g) - lambda2(&h)).abs() < 1e-9);
    }

    #[test]
    fn removing_links_never_raises_lambda2(a in agents(7), p in weights(), pick in 0usize..64) {
        let g = build_graph(&a, &p, &BTreeSet::new()).unwrap();
        let links = g.links();
        prop_assume!(!links.is_empty());
        let l = links[pick % links.len()];
        let h = g.without_links(&[l]).unwrap();
        prop_assert!(lambda2(&h) <= lambda2(&g) + 1e-9);
    }

    #[test]
    fn exhaustive_attack_is_never_beaten_by_greedy(a in agents(6), psi in 1usize..=2) {
        let p = WeightParams::new(0.1, 2.0, 6.0, ArgConvention::SquaredDistance).unwrap();
        let g = build_graph(&a, &p, &BTreeSet::new()).unwrap();
        let links: BTreeSet<Link> = g.links().into_iter().collect();
        prop_assume!(links.len() >= psi);
        let space = AttackActionSpace::new(links, psi).unwrap();
        let exact = worst_case_attack(&g, &space).unwrap();
        let greedy = greedy_attack(&g, &space).unwrap();
        prop_assert_eq!(exact.removed.len(), psi);
        prop_assert_eq!(greedy.removed.len(), psi);
        prop_assert!(exact.resulting_lambda2 <= greedy.resulting_lambda2 + 1e-12);
        let check = lambda2(&g.without_links(&exact.removed).unwrap());
        prop_assert!((check - exact.resulting_lambda2).abs() < 1e-12);
    }

    #[test]
    fn spoofing_touches_only_the_target(a in agents(6), seed in 0u64..1000, start in 0usize..5, duration in 1usize..6) {
        let target = a[a.len() - 1].id;
        let plan = SpoofingPlan::with_uniform_disturbances(target, start, duration, (0.0, 0.2), seed);
        let mut moved = a.clone();
        for k in 0..start + duration + 2 {
            plan.apply(k, &mut moved);
        }
        for (x, y) in a.iter().zip(&moved) {
            if x.id != target {
                prop_assert_eq!(x, y);
            }
        }
        let total: Position = plan.disturbances.iter().fold(Position::zeros(), |acc, d| apply_spoof(&acc, d));
        prop_assert!((moved[a.len() - 1].position - a[a.len() - 1].position - total).norm() < 1e-12);
        prop_assert_eq!(total.z, 0.0);
    }

    #[test]
    fn coupling_holds_for_a_resting_pair(x in point(), y in point()) {
        let (x, y) = (Position::from(x), Position::from(y));
        let z = (x - y).norm_squared();
        prop_assert!(coupling_residual(&x, &y, &x, &y, z, z).abs() < 1e-9);
    }

    #[test]
    fn prediction_without_motion_is_exact(p in weights(), z in 0.0..12.0f64, g in -2.0..0.0f64) {
        let w = weight(z, &p);
        prop_assert_eq!(predicted_weight(w, g, z, z), w);
    }

    #[test]
    fn point_sets_give_psd_centred_distance_matrices(pts in prop::collection::vec(point(), 2..9)) {
        let n = pts.len();
        let z = DMatrix::from_fn(n, n, |i, j| (Position::from(pts[i]) - Position::from(pts[j])).norm_squared());
        let c = centering(n);
        prop_assert!(min_eigenvalue(&-(&c * &z * &c)) >= -1e-9 * z.amax().max(1.0));
    }
}
