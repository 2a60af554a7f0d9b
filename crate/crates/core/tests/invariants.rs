//! Cross-module properties checked on random kernels, trees and boundaries.

use proptest::prelude::*;
use rand::Rng;

use treespin::bp_ratio::{contraction_factor, ratio_from_boundary, ratio_step, RatioVector};
use treespin::coloring_recursion::{poisson_bound_sequence, threshold_degree, type_recursion_exact, PoissonBoundParams};
use treespin::functionals::{
    dirichlet_form, entropy, transition_matrix, Dynamics, StateSpace, TransitionMatrix,
};
use treespin::glauber::{classify_vertex, coloring_fast_classify, glauber_step};
use treespin::rng::stream_rng;
use treespin::tree_config::{broadcast_sample, conditional_root_marginal, enumerate_with};
use treespin::{Boundary, SpinKernel, State, TreeShape};

fn symmetric_kernel(k: usize, seed: u64) -> SpinKernel {
    // symmetric positive weights; the row-normalized kernel is reversible
    let mut rng = stream_rng(seed, 1);
    let mut w = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = rng.random_range(0.05..1.0);
            w[i * k + j] = v;
            w[j * k + i] = v;
        }
    }
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let s: f64 = w[i * k..(i + 1) * k].iter().sum();
            (0..k).map(|j| w[i * k + j] / s).collect()
        })
        .collect();
    SpinKernel::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn stationary_law_is_fixed(k in 2usize..6, seed in any::<u64>()) {
        let m = symmetric_kernel(k, seed);
        let pi = m.pi();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..k {
            let v: f64 = (0..k).map(|i| pi[i] * m.entry(i as State, j as State)).sum();
            prop_assert!((v - pi[j]).abs() < 1e-10);
        }
        let lam = m.lambda();
        prop_assert!(lam.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn ratios_stay_on_the_simplex(k in 2usize..6, d in 1usize..4, seed in any::<u64>()) {
        let m = symmetric_kernel(k, seed);
        let mut rng = stream_rng(seed, 2);
        let children: Vec<RatioVector> = (0..d)
            .map(|_| {
                let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                p[0] += 0.01;
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                RatioVector::from_law(&m, &p)
            })
            .collect();
        let r = ratio_step(&children, &m).unwrap();
        let dot: f64 = r.r.iter().zip(m.pi()).map(|(a, b)| a * b).sum();
        prop_assert!((dot - 1.0).abs() < 1e-10);
        prop_assert!(r.r.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_child_deviation_contracts(k in 2usize..5, seed in any::<u64>(), s in 0usize..5) {
        let m = symmetric_kernel(k, seed);
        let child = RatioVector::fixed(&m, (s % k) as State);
        let parent = ratio_step(std::slice::from_ref(&child), &m).unwrap();
        // one edge moves a law by at most the contraction factor in the ratio-weighted sense
        let theta = contraction_factor(&m, 1);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&theta));
        let law = parent.law(&m);
        prop_assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn boundary_ratio_matches_enumeration(k in 2usize..4, depth in 1usize..3, seed in any::<u64>()) {
        let m = symmetric_kernel(k, seed);
        let shape = TreeShape::new(2, depth).unwrap();
        let mut rng = stream_rng(seed, 3);
        let sample = broadcast_sample(&shape, &m, &mut rng, None);
        let mut b = Boundary::free(&shape);
        let bottom = shape.level_range(depth);
        b.freeze_all(bottom.clone(), &sample.states[bottom]);
        let r = ratio_from_boundary(&shape, &m, &b, 0, depth).unwrap();
        let e = enumerate_with(&shape, &m, &b, 1 << 20).unwrap();
        let mut marg = vec![0.0; k];
        for i in 0..e.len() {
            marg[e.config(i)[0] as usize] += e.weight(i);
        }
        for c in 0..k {
            prop_assert!((r.r[c] - marg[c] / m.pi()[c]).abs() < 1e-9);
        }
        let direct = conditional_root_marginal(&shape, &m, &b, 0, depth, None).unwrap();
        for c in 0..k {
            prop_assert!((direct[c] - marg[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn glauber_keeps_colorings_proper(k in 3usize..6, depth in 1usize..4, seed in any::<u64>()) {
        let m = SpinKernel::coloring(k).unwrap();
        let shape = TreeShape::new(2, depth).unwrap();
        let b = Boundary::free(&shape);
        let mut rng = stream_rng(seed, 4);
        let mut cfg = broadcast_sample(&shape, &m, &mut rng, None);
        for _ in 0..50 {
            cfg = glauber_step(&cfg, &shape, &m, &b, &mut rng).unwrap();
            prop_assert!(cfg.is_valid(&shape, &m));
        }
    }

    #[test]
    fn fast_classification_matches_search(k in 3usize..5, seed in any::<u64>()) {
        let m = SpinKernel::coloring(k).unwrap();
        let shape = TreeShape::new(2, 3).unwrap();
        let cfg = broadcast_sample(&shape, &m, &mut stream_rng(seed, 5), None);
        let fast = coloring_fast_classify(&cfg, &shape, &m).unwrap();
        for (x, f) in fast.iter().enumerate() {
            let parent = shape.parent(x).map(|p| cfg.states[p]);
            let slow = classify_vertex(&cfg, &shape, &m, x, parent, 1 << 20).unwrap();
            prop_assert_eq!(f.change_set, slow.change_set);
            prop_assert_eq!(f.kind, slow.kind);
        }
    }

    #[test]
    fn type_probabilities_are_a_law(k in 3usize..12, d in 1usize..12) {
        for t in type_recursion_exact(k, d, 8).unwrap() {
            prop_assert!((t.p_r + t.p2 + t.p3 - 1.0).abs() < 1e-12);
            prop_assert!(t.p_b >= 0.0 && t.p_b <= 1.0 + 1e-15);
            prop_assert!(t.p_b >= t.p_r - 1e-15);
        }
    }

    #[test]
    fn poisson_sequence_dominates(k in 10usize..60) {
        let d = threshold_degree(k, 0.2);
        let params = PoissonBoundParams::new(k, d, 0.6).unwrap();
        let y = poisson_bound_sequence(&params, 12);
        let t = type_recursion_exact(k, d, 12).unwrap();
        for (a, b) in t.iter().zip(&y) {
            prop_assert!(a.p_b <= b + 1e-12, "p_b {} above y {}", a.p_b, b);
        }
    }

    #[test]
    fn entropy_and_dirichlet_are_nonnegative(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let m = symmetric_kernel(2, seed);
        let shape = TreeShape::new(2, 1).unwrap();
        let space = StateSpace::new(&shape, &m, &Boundary::free(&shape), 1000).unwrap();
        let mu = space.mu().to_vec();
        let p = transition_matrix(&space, Dynamics::Glauber, 1000).unwrap();
        let mut rng = stream_rng(seed, 6);
        let f: Vec<f64> = (0..space.len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let ent = entropy(&f, &mu).unwrap();
        prop_assert!(ent >= 0.0);
        prop_assert!(dirichlet_form(&f, &p, &mu) >= -1e-15);
        // entropy is 1-homogeneous
        let g: Vec<f64> = f.iter().map(|v| v * scale).collect();
        prop_assert!((entropy(&g, &mu).unwrap() - scale * ent).abs() < 1e-9 * (1.0 + scale * ent));
    }

    #[test]
    fn chains_are_stochastic_and_reversible(seed in any::<u64>(), comp in any::<bool>()) {
        let m = symmetric_kernel(3, seed);
        let shape = TreeShape::new(2, 2).unwrap();
        let space = StateSpace::new(&shape, &m, &Boundary::free(&shape), 10_000).unwrap();
        let mu = space.mu().to_vec();
        let dynamics = if comp { Dynamics::Component { block_size: 1 } } else { Dynamics::Glauber };
        let p: TransitionMatrix = transition_matrix(&space, dynamics, 10_000).unwrap();
        prop_assert!(p.row_sum_error() < 1e-12);
        prop_assert!(p.balance_residual(&mu) < 1e-12);
        let next = p.step_left(&mu);
        for (a, b) in next.iter().zip(&mu) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
