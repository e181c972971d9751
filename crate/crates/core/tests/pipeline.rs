use datamask::dataset::{sample_component, LabeledDataset, MixtureSpec};
use datamask::harness::{DatasetSource, Workbench};
use datamask::maskgen::{generate_masked, mask_dataset, solve_next_sample, MaskState};
use datamask::model::{gradient_residual, train, train_from};
use datamask::noise::{log_density_unnormalized, NoiseRate, PrivacyBudget};
use datamask::perturb::input_perturbation;
use datamask::rng::{self, StreamRng};
use datamask::{LabeledSample, MaskGenOptions, ModelParams, TrainOptions};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn toy(n: usize, rep: usize) -> LabeledDataset {
    Workbench::new(&DatasetSource::Toy, None, 21).unwrap().training_set(n, rep).unwrap().0
}

fn toy_binary(n: usize, rep: usize) -> LabeledDataset {
    Workbench::new(&DatasetSource::ToyBinary, None, 22).unwrap().training_set(n, rep).unwrap().0
}

fn bounded_vec(d: usize, r: &mut StreamRng) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
    let len = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius: f64 = r.random();
    g.into_iter().map(|v| v * radius / len).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn retrain(ds: &LabeledDataset, lambda: f64) -> ModelParams {
    train_from(ds, &TrainOptions::with_lambda(lambda), ModelParams::for_dataset(ds)).unwrap().0
}

#[test]
fn residual_never_increases() {
    for ds in [toy(60, 0), toy_binary(60, 0)] {
        let budget = PrivacyBudget::new(1.0, 0.5, ds.len()).unwrap();
        let release = mask_dataset(&ds, &budget, &[], &MaskGenOptions::default(), &mut rng::seeded(1)).unwrap();
        let mut prev = release.report.initial_residual_norm;
        for step in &release.report.steps {
            assert!(step.residual_norm <= prev, "step {}: {} > {prev}", step.index, step.residual_norm);
            prev = step.residual_norm;
        }
    }
}

/// `(g + (σ(x) - y) x)²` on a dense grid.
fn grid_minimum(g: f64, y: usize) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let steps = 2_000_000;
    for i in 0..=steps {
        let x = -10.0 + 20.0 * i as f64 / steps as f64;
        let s = 1.0 / (1.0 + (-x).exp());
        let f = (g + (s - y as f64) * x).powi(2);
        if f < best.0 {
            best = (f, x);
        }
    }
    best
}

#[test]
fn one_dimensional_solve_matches_grid_search() {
    let opts = MaskGenOptions::default();
    for (target_n, y) in [(10, 0), (10, 1), (1, 0), (1, 1), (3, 1)] {
        let state = MaskState::new(ModelParams::binary(vec![1.0]), 0.5, target_n).unwrap();
        let g = state.residual()[0];
        let sol = solve_next_sample(y, &state, &opts, &mut rng::seeded(2));
        let (f_grid, x_grid) = grid_minimum(g, y);
        assert!(sol.objective <= f_grid + 1e-9, "g={g} y={y}: {} vs grid {f_grid}", sol.objective);
        if f_grid > 1e-6 {
            // Unique interior minimizer.
            assert!((sol.x[0] - x_grid).abs() < 1e-3, "g={g} y={y}: x {} vs grid {x_grid}", sol.x[0]);
        }
    }
}

#[test]
fn retrained_model_within_strong_convexity_radius() {
    // Three samples cannot cancel a large N λ w', so a residual remains.
    let lambda = 0.5;
    for w in [vec![5.0, -4.0], vec![2.0, 1.0, 0.5, -1.0, 3.0, 0.0]] {
        let c = if w.len() == 2 { 2 } else { 3 };
        let w_prime = ModelParams::from_weights(2, c, w).unwrap();
        let out = generate_masked(&[0, 1, 1], &w_prime, lambda, &[], &MaskGenOptions::default(), &mut rng::seeded(3))
            .unwrap();
        let g = out.report.final_residual_norm.sqrt();
        assert!(g > 1e-2, "{g}");
        let radius = g / (3.0 * lambda);
        let dist = retrain(&out.dataset, lambda).distance(&w_prime);
        assert!(dist <= radius + 1e-7, "{dist} > {radius}");
    }
}

#[test]
fn fidelity_bound_at_small_mean_residual() {
    let ds = toy(100, 2);
    let budget = PrivacyBudget::new(5.0, 0.5, ds.len()).unwrap();
    let release = mask_dataset(&ds, &budget, &[], &MaskGenOptions::default(), &mut rng::seeded(4)).unwrap();
    assert!(release.report.final_mean_residual <= 1e-3);
    let dist = retrain(&release.dataset, 0.5).distance(&release.w_prime);
    assert!(dist <= release.report.final_mean_residual / 0.5 + 1e-7);
    assert!(dist <= 2e-3);
}

#[test]
fn output_depends_on_data_only_through_w_prime() {
    let w_prime = ModelParams::from_weights(2, 3, vec![0.4, -0.1, -0.3, 0.2, 0.5, -0.7]).unwrap();
    let a = toy(50, 3);
    let b = toy(50, 4);
    let opts = MaskGenOptions::default();
    let from_a = generate_masked(&a.labels(), &w_prime, 0.5, &[], &opts, &mut rng::seeded(5)).unwrap();
    // Same label sequence, different feature vectors.
    let relabeled: Vec<LabeledSample> =
        b.samples().iter().zip(a.labels()).map(|(s, y)| LabeledSample::new(s.x.clone(), y)).collect();
    let b = LabeledDataset::new(relabeled, 3).unwrap();
    assert_ne!(a.samples(), b.samples());
    let from_b = generate_masked(&b.labels(), &w_prime, 0.5, &[], &opts, &mut rng::seeded(5)).unwrap();
    assert_eq!(from_a.dataset.samples(), from_b.dataset.samples());
}

#[test]
fn decoy_seed_set_is_completed_around_w_prime() {
    let raw = MixtureSpec::toy().generate(6).unwrap();
    let (ds, scale) = raw.normalize_max_norm().unwrap();
    // The decoy manifold stands in for class 2.
    let seed_set: Vec<LabeledSample> = sample_component(&MixtureSpec::decoy(20), 2, &mut rng::seeded(7))
        .into_iter()
        .map(|s| LabeledSample::new(s.x.iter().map(|v| v / scale).collect(), s.y))
        .collect();

    let budget = PrivacyBudget::new(1e9, 0.5, ds.len()).unwrap();
    let release = mask_dataset(&ds, &budget, &seed_set, &MaskGenOptions::default(), &mut rng::seeded(8)).unwrap();
    assert_eq!(release.dataset.len(), ds.len());
    assert_eq!(&release.dataset.samples()[..seed_set.len()], &seed_set[..]);
    let mut labels = release.dataset.labels();
    let mut original = ds.labels();
    labels.sort();
    original.sort();
    assert_eq!(labels, original);
    let dist = retrain(&release.dataset, 0.5).distance(&release.w_prime);
    assert!(dist <= 1e-2, "{dist}");
}

#[test]
fn small_noise_pipeline_retrains_to_w_prime() {
    let ds = toy(100, 5);
    let budget = PrivacyBudget::new(50.0, 0.5, ds.len()).unwrap();
    let release = mask_dataset(&ds, &budget, &[], &MaskGenOptions::default(), &mut rng::seeded(9)).unwrap();
    assert!(retrain(&release.dataset, 0.5).distance(&release.w_prime) <= 1e-2);
}

#[test]
fn negligible_noise_recovers_the_original_classifier() {
    let ds = toy(100, 6);
    let w = train(&ds, &TrainOptions::with_lambda(0.5)).unwrap();
    let budget = PrivacyBudget::new(1e9, 0.5, ds.len()).unwrap();
    let release = mask_dataset(&ds, &budget, &[], &MaskGenOptions::default(), &mut rng::seeded(10)).unwrap();
    assert!(retrain(&release.dataset, 0.5).distance(&w) <= 1e-2);
}

#[test]
fn full_seed_set_needs_no_synthesis() {
    let ds = toy(30, 7);
    let w_prime = ModelParams::zeros(2, 3);
    let out =
        generate_masked(&[], &w_prime, 0.5, ds.samples(), &MaskGenOptions::default(), &mut rng::seeded(11)).unwrap();
    assert_eq!(out.dataset.samples(), ds.samples());
    let direct = gradient_residual(&w_prime, &ds, 0.5).unwrap();
    // g is N times the mean gradient.
    let expected = (norm(&direct) * ds.len() as f64).powi(2);
    assert!((out.report.final_residual_norm - expected).abs() <= 1e-9 * expected.max(1.0));
}

#[test]
fn released_classifier_density_ratio_within_epsilon() {
    let lambda = 0.5;
    let epsilon = 1.0;
    let opts = TrainOptions { tol: 1e-12, ..TrainOptions::with_lambda(lambda) };
    let mut r = rng::seeded(12);
    for trial in 0..200 {
        let ds = toy_binary(100, trial);
        let index = r.random_range(0..ds.len());
        let other = ds.neighbor(index, LabeledSample::new(bounded_vec(2, &mut r), r.random_range(0..2))).unwrap();
        let w1 = train(&ds, &opts).unwrap();
        let w2 = train(&other, &opts).unwrap();
        let budget = PrivacyBudget::new(epsilon, lambda, ds.len()).unwrap();
        let rate = NoiseRate::for_release(&budget, 2).unwrap();
        for _ in 0..5 {
            let a: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut r)).collect();
            let d1: Vec<f64> = a.iter().zip(w1.weights()).map(|(x, y)| x - y).collect();
            let d2: Vec<f64> = a.iter().zip(w2.weights()).map(|(x, y)| x - y).collect();
            let ratio = log_density_unnormalized(&d1, &rate) - log_density_unnormalized(&d2, &rate);
            let identity = -rate.rate() * (norm(&d1) - norm(&d2));
            assert!((ratio - identity).abs() <= 1e-12 * identity.abs().max(1.0));
            assert!(ratio.abs() <= rate.rate() * w1.distance(&w2) + 1e-12);
            assert!(ratio.abs() <= epsilon);
        }
    }
}

#[test]
fn released_sample_density_ratio_within_epsilon() {
    let epsilon = 1.5;
    let rate = NoiseRate::for_input(epsilon, 3).unwrap();
    let mut r = rng::seeded(13);
    for _ in 0..1000 {
        let x1 = bounded_vec(3, &mut r);
        let x2 = bounded_vec(3, &mut r);
        let released: Vec<f64> = (0..3)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                3.0 * z
            })
            .collect();
        let d1: Vec<f64> = released.iter().zip(&x1).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = released.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let ratio = log_density_unnormalized(&d1, &rate) - log_density_unnormalized(&d2, &rate);
        assert!((ratio.abs() - 0.5 * epsilon * (norm(&d1) - norm(&d2)).abs()).abs() <= 1e-12);
        assert!(ratio.abs() <= epsilon + 1e-12);
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn input_noise_is_uncorrelated_across_samples() {
    let n = 10_000;
    let zeros = LabeledDataset::new((0..n).map(|i| LabeledSample::new(vec![0.0, 0.0], i % 2)).collect(), 2)
        .unwrap()
        .certify_norm_bounded()
        .unwrap();
    let noisy = input_perturbation(&zeros, 1.0, &mut rng::seeded(14)).unwrap();
    let column = |j: usize| noisy.samples().iter().map(|s| s.x[j]).collect::<Vec<f64>>();
    for j in 0..2 {
        let c = column(j);
        for lag in [1, 2, 7] {
            let r = correlation(&c[..n - lag], &c[lag..]);
            assert!(r.abs() < 0.02, "component {j} lag {lag}: {r}");
        }
    }
    let (c0, c1) = (column(0), column(1));
    let r = correlation(&c0[..n - 1], &c1[1..]);
    assert!(r.abs() < 0.02, "cross-component lag 1: {r}");
}
