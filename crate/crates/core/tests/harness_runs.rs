mod common;

use std::fs;

use csi_aug::channel::{NonidealityProfile, Scenario};
use csi_aug::csi::TensorDims;
use csi_aug::harness::{self, sidecar_path, CellSpec, ExperimentConfig, ExperimentReport, Method, Regime};
use csi_aug::io;
use csi_aug::mlp::{self, MlpModel, Optimizer, Standardizer, TrainConfig};
use csi_aug::Error;
use proptest::prelude::*;

use common::{dataset_strategy, random_dataset, sample_bits};

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::for_scenario(Scenario::room(TensorDims::new(4, 1, 3).unwrap(), 6.0, 5));
    c.regime = Regime::Custom(48);
    c.methods = vec![Method::Phase];
    c.multiples = vec![1.0, 2.0];
    c.repetitions = 1;
    c.train.epochs.phase = 2;
    c.train.epochs.none = 2;
    c.train.epochs.amplitude = 2;
    c.train.batch_size = 16;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_is_a_partition(ds in dataset_strategy(3, 2, 2, 40), frac in 0.05f64..0.95, seed: u64) {
        prop_assume!(ds.len() >= 2);
        let (train, test) = harness::split(&ds, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), ds.len());
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<_> = train.samples().iter().chain(test.samples()).map(sample_bits).collect();
        let mut orig: Vec<_> = ds.samples().iter().map(sample_bits).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }
}

#[test]
fn grid_has_one_row_per_cell() {
    let report = harness::run_experiment(&tiny_config(), None).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].multiple, 1.0);
    assert_eq!(report.rows[1].multiple, 2.0);
    assert_eq!(report.cells[0].train_size, Some(48));
    assert_eq!(report.cells[1].train_size, Some(96));
    assert!(report.rows.iter().all(|r| r.regime == "custom-48" && r.method == "phase"));
    assert_eq!(report.config_echo, tiny_config());

    let mut c = tiny_config();
    c.methods = vec![Method::None, Method::Phase, Method::Amplitude];
    c.repetitions = 2;
    let report = harness::run_experiment(&c, None).unwrap();
    assert_eq!(report.rows.len(), 3 * 2 * 2);
    assert_eq!(report.summary.len(), 6);
    // two seeds, two results
    assert_ne!(report.rows[0].test_mse, report.rows[1].test_mse);
    assert_ne!(report.rows[0].seed, report.rows[1].seed);
}

#[test]
fn rerun_and_resume_reproduce_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let mut c = tiny_config();
    c.repetitions = 2;
    harness::run_experiment(&c, Some(&out)).unwrap();
    let table = fs::read(&out).unwrap();
    let meta = fs::read(sidecar_path(&out)).unwrap();

    harness::run_experiment(&c, Some(&out)).unwrap();
    assert_eq!(fs::read(&out).unwrap(), table);
    assert_eq!(fs::read(sidecar_path(&out)).unwrap(), meta);

    // drop the last two cells as if interrupted
    let mut partial = ExperimentReport::read_sidecar(&out).unwrap().unwrap();
    partial.cells.truncate(2);
    partial.rows.truncate(2);
    partial.write(&out).unwrap();
    let resumed = harness::run_experiment(&c, Some(&out)).unwrap();
    assert_eq!(resumed.rows.len(), 4);
    assert_eq!(fs::read(&out).unwrap(), table);
    let parsed = io::read_report_file(&out).unwrap();
    assert_eq!(parsed.len(), resumed.rows.len());
    for (p, r) in parsed.iter().zip(&resumed.rows) {
        assert_eq!((p.seed, p.multiple), (r.seed, r.multiple));
        assert!((p.test_mse - r.test_mse).abs() <= 5e-7);
    }
}

#[test]
fn failed_cells_are_recorded_and_the_grid_continues() {
    let mut c = tiny_config();
    c.methods = vec![Method::Phase, Method::Amplitude];
    c.train.optimizer = Optimizer::Sgd;
    c.train.learning_rate = 1e30;
    let report = harness::run_experiment(&c, None).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report.cells.iter().all(|cell| cell.error.as_deref().is_some_and(|e| e.contains("epoch"))));
    assert!(report.rows.is_empty());
}

#[test]
fn plain_training_equals_method_none_at_one() {
    let dims = TensorDims::new(3, 1, 2).unwrap();
    let train = random_dataset(dims, 40, 1);
    let test = random_dataset(dims, 10, 2);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, init_seed: 9, shuffle_seed: 9, ..TrainConfig::default() };
    let spec = CellSpec {
        environment: "e".into(),
        regime: Regime::Custom(40),
        method: Method::None,
        multiple: 1.0,
        p_star_db: 1.5,
        noise_variance: 1.0,
        train: cfg,
        standardize: true,
        seed: 9,
    };
    let cell = harness::run_cell(&train, &test, &spec).unwrap();

    let mut tr = mlp::encode_dataset(&train);
    let mut te = mlp::encode_dataset(&test);
    let st = Standardizer::fit(tr.features.view()).unwrap();
    st.apply(&mut tr.features).unwrap();
    st.apply(&mut te.features).unwrap();
    let model = MlpModel::new(&MlpModel::default_sizes(tr.features.ncols()), 9).unwrap();
    let trained = mlp::train(model, &tr, &cfg).unwrap().model;
    assert_eq!(cell.row.test_mse, mlp::evaluate_mse(&trained, &te).unwrap());
    assert_eq!(cell.train_size, 40);
}

#[test]
fn six_fold_phase_on_small_regime_has_24000_samples() {
    let dims = TensorDims::new(1, 1, 1).unwrap();
    let train = random_dataset(dims, 4000, 3);
    let spec = CellSpec {
        environment: "e".into(),
        regime: Regime::Small,
        method: Method::Phase,
        multiple: 6.0,
        p_star_db: 1.5,
        noise_variance: 1.0,
        train: TrainConfig::default(),
        standardize: true,
        seed: 1,
    };
    let (set, provenance) = harness::build_training_set(&train, &spec).unwrap();
    assert_eq!(set.len(), 24_000);
    assert!(provenance.iter().all(|&p| p < 4000));
}

#[test]
fn oversized_regime_is_rejected() {
    let mut c = tiny_config();
    c.n_samples = Some(50);
    assert!(matches!(harness::run_experiment(&c, None), Err(Error::Precondition(_))));
}

#[test]
fn csid_sources_and_prefix_subsampling() {
    let dims = TensorDims::new(4, 1, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src.csid");
    io::write_csid_file(&random_dataset(dims, 100, 4), &path).unwrap();
    let text = format!(
        "dataset = {:?}\nregime = 30\nsubsample = \"prefix\"\nmultiples = [1.0]\nrepetitions = 1\n[train.epochs]\nphase = 1\n",
        path
    );
    let c = ExperimentConfig::from_toml_str(&text).unwrap();
    let report = harness::run_experiment(&c, None).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].environment, "rand");
    assert_eq!(report.rows[0].regime, "custom-30");
}

#[test]
fn robustness_tags_rows_and_runs_baseline_once() {
    let mut c = tiny_config();
    c.methods = vec![Method::None, Method::Phase];
    c.nonideality_test = Some(NonidealityProfile::phase());
    let report = harness::run_robustness(&c, None).unwrap();
    let methods: Vec<(&str, f64)> = report.rows.iter().map(|r| (r.method.as_str(), r.multiple)).collect();
    assert_eq!(methods, vec![("none", 1.0), ("phase", 1.0), ("phase", 2.0)]);
    assert!(report.rows.iter().all(|r| r.environment == "synthetic/phase-drift"));
    assert_eq!(report.test_profile, Some(NonidealityProfile::phase()));

    // with no perturbation, none and phase at 1x are the same model on the same data
    c.nonideality_test = Some(NonidealityProfile::none());
    let clean = harness::run_robustness(&c, None).unwrap();
    assert_eq!(clean.rows[0].test_mse, clean.rows[1].test_mse);
    assert!(clean.rows[0].environment.ends_with("/clean"));

    c.nonideality_test = None;
    assert!(harness::run_robustness(&c, None).is_err());
}

