use ghsnet_core::bootstrap::{dirichlet_weights, quantile, weighted_scatter};
use ghsnet_core::metrics::{cutoff_pr_curve, edge_disagreement, precision_recall};
use ghsnet_core::simulate::{perturb_graph, PartialSign, TrueModel};
use ghsnet_core::single::{cm_lambda, e_step_single};
use ghsnet_core::tau::stabilization_index;
use ghsnet_core::{
    partial_correlations, Adjacency, Dataset, MomentMode, PrecisionMatrix, ScaleMatrix,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spd(p: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(p, p) * 0.3;
    (&m + m.transpose()) * 0.5
}

fn random_graph(p: usize, density: f64, seed: u64) -> Adjacency {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Adjacency::empty(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if r.random_bool(density) {
                a.set(i, j, true);
            }
        }
    }
    a
}

fn permuted(a: &Adjacency, perm: &[usize]) -> Adjacency {
    let mut b = Adjacency::empty(a.p());
    for (i, j) in a.edges() {
        b.set(perm[i], perm[j], true);
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_correlations_ignore_diagonal_rescaling(seed in any::<u64>(), p in 2usize..7, scales in prop::collection::vec(0.1f64..10.0, 7)) {
        let theta = spd(p, seed);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, scales.iter().copied().take(p)));
        let rescaled = &d * &theta * &d;
        let a = partial_correlations(&PrecisionMatrix::new(theta).unwrap());
        let b = partial_correlations(&PrecisionMatrix::new(rescaled).unwrap());
        prop_assert!((&a - &b).abs().max() < 1e-12);
    }

    #[test]
    fn e_step_moments_are_in_range(l2 in 1e-8f64..1e8) {
        let latent = e_step_single(&ScaleMatrix::new(DMatrix::from_element(2, 2, l2)).unwrap()).unwrap();
        let v = latent.inv_nu_expect[(0, 1)];
        prop_assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn lambda_update_is_positive(theta in -5.0f64..5.0, inv_nu in 1e-6f64..1.0, tau in 1e-6f64..1e3) {
        prop_assert!(cm_lambda(theta, inv_nu, tau) > 0.0);
    }

    #[test]
    fn shared_expectation_bounds(seed in any::<u64>(), k in 1usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let scales: Vec<ScaleMatrix> = (0..k)
            .map(|_| {
                let m = DMatrix::from_fn(3, 3, |_, _| 10f64.powf(r.random_range(-4.0..4.0)));
                ScaleMatrix::new((&m + m.transpose()) * 0.5).unwrap()
            })
            .collect();
        let refs: Vec<&ScaleMatrix> = scales.iter().collect();
        for mode in [MomentMode::PaperPrinted, MomentMode::InvGammaMoment] {
            let latent = ghsnet_core::joint::e_step_joint(&refs, mode).unwrap();
            let m = &latent.inv_nu_expect;
            prop_assert!((m - m.transpose()).abs().max() == 0.0);
            prop_assert!(m.iter().all(|&v| v > 0.0 && v < (k as f64 + 1.0) / 2.0));
        }
    }

    #[test]
    fn weighted_scatter_is_psd(seed in any::<u64>(), b in 0usize..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(12, 4, |_, _| r.random_range(-2.0..2.0));
        let data = Dataset::new(x).unwrap();
        let w = dirichlet_weights(12, seed, b);
        let s = weighted_scatter(&data, &w).unwrap();
        prop_assert!((&s - s.transpose()).abs().max() == 0.0);
        prop_assert!((s + DMatrix::identity(4, 4) * 1e-12).cholesky().is_some());
    }

    #[test]
    fn quantile_is_monotone_in_level(values in prop::collection::vec(0.0f64..1.0, 1..60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&values, lo).unwrap() <= quantile(&values, hi).unwrap());
    }

    #[test]
    fn precision_recall_ignores_relabelling(seed in any::<u64>(), p in 3usize..12) {
        let est = random_graph(p, 0.3, seed);
        let truth = random_graph(p, 0.3, seed.wrapping_add(1));
        let mut perm: Vec<usize> = (0..p).collect();
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 7);
        for i in (1..p).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let before = precision_recall(&est, &truth).unwrap();
        let after = precision_recall(&permuted(&est, &perm), &permuted(&truth, &perm)).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn disagreement_is_symmetric_and_bounded(seed in any::<u64>(), p in 3usize..12) {
        let a = random_graph(p, 0.3, seed);
        let b = random_graph(p, 0.3, seed.wrapping_add(1));
        let d = edge_disagreement(&a, &b).unwrap();
        prop_assert_eq!(d, edge_disagreement(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(edge_disagreement(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn auprc_never_exceeds_cap(seed in any::<u64>(), cap in 0.05f64..1.0) {
        let p = 10;
        let truth = random_graph(p, 0.3, seed);
        prop_assume!(truth.edge_count() > 0);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let m = DMatrix::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
        let scores = (&m + m.transpose()) * 0.5;
        let curve = cutoff_pr_curve(&scores, &truth, cap).unwrap();
        prop_assert!(curve.auprc <= cap + 1e-15);
        let all_true = curve.points.iter().take_while(|pt| pt.recall < cap).all(|pt| pt.precision == 1.0);
        if curve.auprc >= cap - 1e-15 {
            prop_assert!(all_true);
        }
        if curve.points[0].precision == 1.0 {
            // top-scored pair is a true edge
            let (mut best, mut at) = (0.0, (0, 0));
            for i in 0..p { for j in (i + 1)..p { if scores[(i, j)].abs() > best { best = scores[(i, j)].abs(); at = (i, j); } } }
            prop_assert!(truth.has_edge(at.0, at.1));
        }
    }

    #[test]
    fn perturbation_preserves_edge_count(seed in 0u64..500, fraction in 0.0f64..=1.0) {
        let model = TrueModel::generate(20, (0.1, 0.2), PartialSign::Positive, seed).unwrap();
        let other = perturb_graph(&model, fraction, PartialSign::Positive, seed + 1).unwrap();
        other.validate().unwrap();
        prop_assert_eq!(other.adjacency.edge_count(), model.adjacency.edge_count());
        let e = model.adjacency.edge_count();
        let moved = (fraction * e as f64).round() as usize;
        let shared = model.adjacency.edges().into_iter().filter(|&(i, j)| other.adjacency.has_edge(i, j)).count();
        prop_assert_eq!(shared, e - moved);
    }

    #[test]
    fn stabilised_index_satisfies_predicate(aics in prop::collection::vec(-50.0f64..50.0, 2..20), eps in 0.01f64..5.0) {
        if let Some(m) = stabilization_index(&aics, eps) {
            prop_assert!((aics[m] - aics[m - 1]).abs() < eps);
            prop_assert!((1..m).any(|k| (aics[k] - aics[k - 1]).abs() >= eps));
        }
    }
}
