use datamask::harness::{
    bound_check, run_method, sweep, write_sweep_csv, BoundCheckConfig, DatasetSource, Method, RunOptions, SweepConfig,
    SweepRecord, Workbench, DEFAULT_EPSILONS,
};
use datamask::model::{accuracy, train, TrainOptions};
use datamask::{rng, Execution, LabelColumn, MixtureSpec};

fn small_config() -> SweepConfig {
    SweepConfig {
        source: DatasetSource::Toy,
        ns: vec![30, 45],
        epsilons: vec![0.5, 5.0],
        repetitions: 3,
        validation_size: Some(150),
        seed: 31,
        ..SweepConfig::default()
    }
}

fn find(records: &[SweepRecord], method: Method, epsilon: f64, n: usize) -> SweepRecord {
    records.iter().find(|r| r.method == method && r.epsilon == epsilon && r.n == n).cloned().unwrap()
}

#[test]
fn one_record_per_cell() {
    let config = small_config();
    let records = sweep(&config).unwrap();
    assert_eq!(records.len(), 3 * 2 * 2);
    for r in &records {
        assert!((0.0..=1.0).contains(&r.mean_accuracy));
        assert!(r.std_accuracy >= 0.0);
        assert_eq!(r.reps, 3);
    }
}

#[test]
fn single_repetition_has_zero_std() {
    let records = sweep(&SweepConfig { repetitions: 1, ..small_config() }).unwrap();
    assert!(records.iter().all(|r| r.std_accuracy == 0.0));
}

#[test]
fn method_order_does_not_change_records() {
    let forward = sweep(&small_config()).unwrap();
    let mut reversed_methods = Method::ALL.to_vec();
    reversed_methods.reverse();
    let reversed = sweep(&SweepConfig { methods: reversed_methods, ..small_config() }).unwrap();
    for r in &forward {
        assert_eq!(&find(&reversed, r.method, r.epsilon, r.n), r);
    }
    let only_input = sweep(&SweepConfig { methods: vec![Method::InputPerturb], ..small_config() }).unwrap();
    for r in &only_input {
        assert_eq!(&find(&forward, r.method, r.epsilon, r.n), r);
    }
}

#[test]
fn execution_strategy_does_not_change_records() {
    let parallel = sweep(&small_config()).unwrap();
    let sequential = sweep(&SweepConfig { execution: Execution::Sequential, ..small_config() }).unwrap();
    assert_eq!(parallel, sequential);
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let records = sweep(&SweepConfig { output: Some(path.clone()), ..small_config() }).unwrap();
    let mut expected = Vec::new();
    write_sweep_csv(&records, &mut expected).unwrap();
    let written = std::fs::read(&path).unwrap();
    assert_eq!(written, expected);
    assert!(String::from_utf8(written).unwrap().starts_with("method,epsilon,n,mean_accuracy,std_accuracy,reps\n"));
}

#[test]
fn csv_sources_are_subsampled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.csv");
    MixtureSpec::toy_sized(300).generate(32).unwrap().save_csv(&path).unwrap();
    let source = DatasetSource::Csv { path, label_column: LabelColumn::default() };
    let bench = Workbench::new(&source, Some(None), 33).unwrap();
    assert_eq!(bench.validation().unwrap().len(), 90);
    let records = sweep(&SweepConfig { source: source.clone(), ns: vec![50], ..small_config() }).unwrap();
    assert_eq!(records.len(), 6);
    // 210 rows remain for training.
    assert!(sweep(&SweepConfig { source, ns: vec![500], ..small_config() }).is_err());
}

#[test]
fn vanishing_noise_matches_non_private_accuracy() {
    let bench = Workbench::new(&DatasetSource::Toy, Some(None), 34).unwrap();
    let (train_ds, scale) = bench.training_set(100, 0).unwrap();
    let val = bench.validation().unwrap().scaled(scale);
    let baseline = accuracy(&train(&train_ds, &TrainOptions::with_lambda(0.5)).unwrap(), &val).unwrap();
    for method in Method::ALL {
        let acc = run_method(method, &train_ds, &val, 1e9, &RunOptions::new(0.5), &mut rng::seeded(35)).unwrap();
        assert!((acc - baseline).abs() <= 0.02, "{method}: {acc} vs {baseline}");
        let again = run_method(method, &train_ds, &val, 1e9, &RunOptions::new(0.5), &mut rng::seeded(35)).unwrap();
        assert_eq!(acc, again);
    }
}

#[test]
fn run_method_requires_norm_bound() {
    let raw = MixtureSpec::toy_sized(30).generate(36).unwrap();
    let mut r = rng::seeded(37);
    assert!(run_method(Method::Mdg, &raw, &raw, 1.0, &RunOptions::new(0.5), &mut r).is_err());
}

#[test]
fn bound_check_reports_gaps_and_rates() {
    let config = BoundCheckConfig { repetitions: 40, seed: 38, ..BoundCheckConfig::default() };
    let out = bound_check(Method::OutputPerturb, &config, 0.05).unwrap();
    assert_eq!(out.gaps.len(), 40);
    assert_eq!(out.dimension, 2);
    assert!(out.gaps.iter().all(|&g| g >= -1e-12));
    assert!((0.0..=1.0).contains(&out.violation_rate));
    let input = bound_check(Method::InputPerturb, &config, 0.05).unwrap();
    assert!((input.bound / out.bound - 1e4).abs() < 1e-8);
    assert!(bound_check(Method::Mdg, &config, 0.05).is_err());
    assert!(bound_check(Method::OutputPerturb, &config, 1.0).is_err());
    assert!(bound_check(Method::OutputPerturb, &config, 0.0).is_err());
}

#[test]
fn multiclass_bound_uses_flattened_dimension() {
    let config =
        BoundCheckConfig { source: DatasetSource::Toy, repetitions: 5, seed: 39, ..BoundCheckConfig::default() };
    let out = bound_check(Method::OutputPerturb, &config, 0.05).unwrap();
    assert_eq!(out.dimension, 6);
}

/// Qualitative trade-off on the toy mixture: 50 reps, N in {100, 200}.
#[test]
fn toy_trade_off_shape() {
    let config = SweepConfig {
        ns: vec![100, 200],
        epsilons: DEFAULT_EPSILONS.to_vec(),
        repetitions: 50,
        seed: 40,
        ..SweepConfig::default()
    };
    let records = sweep(&config).unwrap();
    for method in Method::ALL {
        for &n in &config.ns {
            let low = find(&records, method, 0.1, n).mean_accuracy;
            let high = find(&records, method, 50.0, n).mean_accuracy;
            assert!(high >= low, "{method} N={n}: {high} < {low}");
        }
    }
    for &eps in &config.epsilons {
        for &n in &config.ns {
            let mdg = find(&records, Method::Mdg, eps, n).mean_accuracy;
            let out = find(&records, Method::OutputPerturb, eps, n).mean_accuracy;
            assert!((mdg - out).abs() <= 0.05, "ε={eps} N={n}: mdg {mdg} vs output {out}");
        }
    }
    let gain = |m| find(&records, m, 1.0, 200).mean_accuracy - find(&records, m, 1.0, 100).mean_accuracy;
    assert!(gain(Method::Mdg) >= -0.01);
    assert!(gain(Method::Mdg) > gain(Method::InputPerturb));
}
