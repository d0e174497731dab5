use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfex::env::feature_bounds;
use selfex::explain::{
    attribution_compare, cluster_sets, contingency, global_explanation, gradient_shap, input_x_gradient,
    integrated_gradients, kmeans, lipschitz_estimate, local_explanation, purity, BaselineSampler, DecisionRecord,
    GlobalConfig, GradShapConfig, LipschitzConfig,
};
use selfex::senn::{PolicyModel, SennPolicy};
use selfex_autodiff::Tensor;

// ---------- independent k-means oracle ----------

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Straightforward k-means++ and Lloyd, following the documented seeding
/// protocol but sharing no code with the library.
fn reference_kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| d2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let target = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut running = 0.0;
        let mut chosen = points.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            running += w;
            if running > target {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen].clone());
    }
    let assign = |centers: &Vec<Vec<f64>>| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                for c in 1..k {
                    if d2(p, &centers[c]) < d2(p, &centers[best]) {
                        best = c;
                    }
                }
                best
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..300 {
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                centers[c] = (0..points[0].len())
                    .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                    .collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let distortion = points.iter().zip(&labels).map(|(p, &l)| d2(p, &centers[l])).sum();
    (labels, distortion)
}

#[test]
fn kmeans_matches_reference_lloyd() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let dim = 2 + (seed as usize % 3);
        let points: Vec<Vec<f64>> = (0..200).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        for k in [3, 5] {
            let got = kmeans(&points, k, seed).unwrap();
            let (labels, distortion) = reference_kmeans(&points, k, seed);
            assert_eq!(got.assignments, labels, "seed {seed} k {k}");
            assert!((got.distortion - distortion).abs() < 1e-9, "seed {seed} k {k}");
        }
    }
}

#[test]
fn purity_is_one_when_clusters_follow_labels() {
    let labels = vec![0, 1, 2, 1, 0, 3, 3];
    let m = contingency(&labels, &labels, 4, 4);
    let (per, overall) = purity(&m);
    assert_eq!(overall, 1.0);
    assert!(per.iter().all(|&p| p == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn eq6_membership_matches_direct_evaluation(
        m in prop::collection::vec(prop::collection::vec(0usize..30, 4), 1..16),
        tau_idx in 0usize..3,
    ) {
        let tau = [0.3, 0.6, 0.9][tau_idx];
        let sets = cluster_sets(&m, tau);
        for a in 0..4 {
            for (i, row) in m.iter().enumerate() {
                let total: usize = row.iter().sum();
                let unique_argmax = row.iter().enumerate().all(|(j, &v)| j == a || v < row[a]);
                let pure = row[a] as f64 > tau * total as f64;
                prop_assert_eq!(sets[a].contains(&i), unique_argmax && pure, "row {:?} action {}", row, a);
            }
        }
    }
}

// ---------- Lipschitz ----------

fn linear_policy(w: Tensor, b: Vec<f64>) -> SennPolicy {
    SennPolicy::with_constant_relevance(&w, Some(b)).unwrap()
}

fn random_anchors(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

#[test]
fn lipschitz_of_doubling_map_is_two() {
    let mut w = Tensor::zeros(13, 13);
    for i in 0..13 {
        w.data_mut()[i * 13 + i] = 2.0;
    }
    let p = linear_policy(w, vec![0.0; 13]);
    let bounds = vec![(-10.0, 10.0); 13];
    let est = lipschitz_estimate(&p, &random_anchors(13, 50, 1), &bounds, &LipschitzConfig::default()).unwrap();
    assert!((est.max - 2.0).abs() < 1e-6);
    assert!(est.per_anchor.iter().all(|r| (r - 2.0).abs() < 1e-6));
}

#[test]
fn lipschitz_of_constant_policy_is_zero() {
    let p = linear_policy(Tensor::zeros(4, 13), vec![1.0, 2.0, 3.0, 4.0]);
    let est =
        lipschitz_estimate(&p, &random_anchors(13, 20, 2), &feature_bounds(3, 3), &LipschitzConfig::default()).unwrap();
    assert_eq!(est.max, 0.0);
    assert_eq!(est.mean, 0.0);
}

fn smooth_policy(seed: u64) -> SennPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SennPolicy::new(13, 4, &[16, 16], true, &mut rng).unwrap();
    for (_, t) in p.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.4..0.4));
    }
    p
}

#[test]
fn lipschitz_ignores_anchor_order_and_grows_with_iterations() {
    let p = smooth_policy(3);
    let bounds = feature_bounds(3, 3);
    let anchors = random_anchors(13, 30, 3);
    let cfg = LipschitzConfig::default();
    let a = lipschitz_estimate(&p, &anchors, &bounds, &cfg).unwrap();
    let mut reversed = anchors.clone();
    reversed.reverse();
    let b = lipschitz_estimate(&p, &reversed, &bounds, &cfg).unwrap();
    let mut pa = a.per_anchor.clone();
    pa.reverse();
    assert_eq!(pa, b.per_anchor);
    assert_eq!(a.max, b.max);
    assert!((a.mean - b.mean).abs() < 1e-12);
    assert_eq!(a.max, a.per_anchor.iter().copied().fold(0.0, f64::max));

    let short = lipschitz_estimate(&p, &anchors, &bounds, &LipschitzConfig { iterations: 5, ..cfg.clone() }).unwrap();
    for (s, l) in short.per_anchor.iter().zip(&a.per_anchor) {
        assert!(s <= l);
    }
}

// ---------- attributions ----------

fn random_linear(seed: u64) -> (SennPolicy, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::matrix(4, 13, (0..52).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    (linear_policy(w.clone(), vec![0.3, -0.1, 0.2, 0.0]), w)
}

#[test]
fn linear_attributions_match_closed_form() {
    let (p, w) = random_linear(4);
    let x: Vec<f64> = random_anchors(13, 1, 5).remove(0);
    for a in 0..4 {
        let expect: Vec<f64> = (0..13).map(|j| w.get(a, j) * x[j]).collect();
        let ixg = input_x_gradient(&p, &x, a).unwrap();
        let ig = integrated_gradients(&p, &x, None, 128, a).unwrap();
        for j in 0..13 {
            assert!((ixg.values[j] - expect[j]).abs() < 1e-12);
            assert!((ig.values[j] - expect[j]).abs() < 1e-12);
        }
        let shap = gradient_shap(
            &p,
            &x,
            &BaselineSampler::Gaussian { mean: vec![0.0; 13], std: 0.05 },
            &GradShapConfig { n_samples: 512, noise_std: 0.05, alpha: None, seed: 9 },
            a,
        )
        .unwrap();
        let err: f64 = shap.values.iter().zip(&expect).map(|(s, e)| (s - e).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = expect.iter().map(|e| e * e).sum::<f64>().sqrt();
        assert!(err / norm < 0.05, "gradshap relative error {}", err / norm);
    }
    assert!(input_x_gradient(&p, &[0.0; 13], 1).unwrap().values.iter().all(|&v| v == 0.0));
}

#[test]
fn ixg_matches_finite_differences() {
    let p = smooth_policy(6);
    let x = random_anchors(13, 1, 6).remove(0);
    for a in 0..4 {
        let r = input_x_gradient(&p, &x, a).unwrap();
        for j in 0..13 {
            let h = 1e-6;
            let mut up = x.clone();
            up[j] += h;
            let mut down = x.clone();
            down[j] -= h;
            let g = (p.logits_one(&up).unwrap()[a] - p.logits_one(&down).unwrap()[a]) / (2.0 * h);
            assert!((r.values[j] - g * x[j]).abs() < 1e-5);
        }
    }
}

#[test]
fn ig_completeness_and_convergence() {
    let p = smooth_policy(7);
    let x = random_anchors(13, 1, 8).remove(0);
    for a in 0..4 {
        let gap = p.logits_one(&x).unwrap()[a] - p.logits_one(&[0.0; 13]).unwrap()[a];
        let r128 = integrated_gradients(&p, &x, None, 128, a).unwrap();
        let sum: f64 = r128.values.iter().sum();
        assert!((sum - gap).abs() <= 0.01 * gap.abs().max(1e-3), "sum {sum} gap {gap}");

        let r64 = integrated_gradients(&p, &x, None, 64, a).unwrap();
        let r1024 = integrated_gradients(&p, &x, None, 1024, a).unwrap();
        // Per-feature 64-step error, measured against the 1024-step oracle.
        for j in 0..13 {
            let gap64 = (r64.values[j] - r1024.values[j]).abs();
            assert!((r128.values[j] - r64.values[j]).abs() <= gap64 + 1e-12);
            assert!((r128.values[j] - r1024.values[j]).abs() <= gap64 + 1e-12);
        }
    }
    assert!(integrated_gradients(&p, &x, None, 8, 0).is_err());
}

#[test]
fn gradshap_degenerate_and_deterministic() {
    let p = smooth_policy(9);
    let x = random_anchors(13, 1, 10).remove(0);
    let base = random_anchors(13, 1, 11).remove(0);
    let cfg = GradShapConfig { n_samples: 8, noise_std: 0.0, alpha: Some(1.0), seed: 1 };
    let r = gradient_shap(&p, &x, &BaselineSampler::Fixed(base.clone()), &cfg, 2).unwrap();
    let ixg = input_x_gradient(&p, &x, 2).unwrap();
    for j in 0..13 {
        // ∇f(x) ⊙ (x − b), recovered from IxG as ∇f(x)_j = ixg_j / x_j.
        let expect = ixg.values[j] / x[j] * (x[j] - base[j]);
        assert!((r.values[j] - expect).abs() < 1e-10);
    }
    let pool = BaselineSampler::Pool(random_anchors(13, 10, 12));
    let cfg = GradShapConfig { n_samples: 64, noise_std: 0.1, alpha: None, seed: 3 };
    assert_eq!(gradient_shap(&p, &x, &pool, &cfg, 1).unwrap(), gradient_shap(&p, &x, &pool, &cfg, 1).unwrap());
}

#[test]
fn explanations_leave_parameters_untouched() {
    let p = smooth_policy(13);
    let before = p.params().clone();
    let x = random_anchors(13, 1, 13).remove(0);
    local_explanation(&p, &x).unwrap();
    integrated_gradients(&p, &x, None, 32, 0).unwrap();
    lipschitz_estimate(&p, &[x.clone()], &feature_bounds(3, 3), &LipschitzConfig::default()).unwrap();
    assert_eq!(&before, p.params());
}

#[test]
fn global_pipeline_on_policy_records() {
    let p = smooth_policy(14);
    let anchors = random_anchors(13, 600, 15);
    let records: Vec<DecisionRecord> = anchors.iter().map(|x| local_explanation(&p, x).unwrap()).collect();
    for r in &records {
        assert!(r.decomposition_error() < 1e-8);
    }
    let g = global_explanation(&records, &GlobalConfig { k: 6, ..Default::default() }).unwrap();
    assert_eq!(g.n_records, 600);
    assert_eq!(g.clusters.cluster_sizes().iter().sum::<usize>(), 600);
    assert_eq!(g.effect_distributions.len(), 4);
    let sizes = g.clusters.cluster_sizes();
    for (i, row) in g.clusters.contingency.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), sizes[i]);
    }
    for (a, set) in g.clusters.cluster_sets.iter().enumerate() {
        assert_eq!(set.is_empty(), g.clusters.importance[a].is_none());
    }
    let reports = vec![
        input_x_gradient(&p, &anchors[0], 1).unwrap(),
        integrated_gradients(&p, &anchors[0], None, 64, 1).unwrap(),
    ];
    let cmp = attribution_compare(&reports).unwrap();
    assert_eq!(cmp.table.len(), 13);
    assert_eq!(cmp.pairs.len(), 1);
}
