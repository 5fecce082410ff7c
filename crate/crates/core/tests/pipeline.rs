use std::fs;

use forgeloc::datagen::DataGenConfig;
use forgeloc::dataset::{generate_split, LabeledImage, Split};
use forgeloc::metrics::Aggregation;
use forgeloc::pipeline::run::{CONFIG_SNAPSHOT, TRAIN_LOG};
use forgeloc::pipeline::*;
use forgeloc::Error;

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    for kv in [
        "image_size=16",
        "base_channels=4",
        "batch_size=4",
        "epochs=2",
        "eval_batch_size=5",
    ] {
        c.apply_override(kv).unwrap();
    }
    c.validate().unwrap();
    c
}

fn data(split: Split, n: u64) -> Vec<LabeledImage> {
    let cfg = DataGenConfig::default().with_size(16, 16);
    let start = if split == Split::Train { 0 } else { 10_000 };
    generate_split(&cfg, split, start..start + n).unwrap()
}

fn param_bits(t: &Trainer) -> Vec<u32> {
    t.store.values().iter().flat_map(|v| v.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn config_text_round_trips() {
    let mut c = tiny_config();
    c.set("lr", "0.00123456789").unwrap();
    c.set("mi_kl_mode", "gaussian").unwrap();
    c.set("su_aggregate", "max").unwrap();
    c.set("noise_region", "tampered_only").unwrap();
    c.set("detach_loo", "true").unwrap();
    let back = TrainConfig::parse(&c.to_text()).unwrap();
    assert_eq!(back, c);
    let commented = format!("# header\n\n{}epochs = 7 # trailing\n", c.to_text());
    assert_eq!(TrainConfig::parse(&commented).unwrap().epochs, 7);
}

#[test]
fn bad_config_entries_are_rejected() {
    for text in [
        "learning_rate = 0.1",
        "lr = fast",
        "lr = -1",
        "epochs = 0",
        "threshold = 1.5",
        "mi_kl_mode = poisson",
        "lambda_su = -0.1",
        "image_size = 31",
        "just words",
    ] {
        assert!(TrainConfig::parse(text).is_err(), "{text}");
    }
    assert!(TrainConfig::default().apply_override("epochs").is_err());
}

#[test]
fn step_counts_follow_the_config() {
    let mut c = tiny_config();
    assert_eq!(c.steps_per_epoch(10), 3);
    assert_eq!(c.total_steps(10), 6);
    c.max_steps = 4;
    assert_eq!(c.total_steps(10), 4);
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let train_data = data(Split::Train, 6);
    let out = train(&tiny_config(), &train_data, None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    out.trainer.checkpoint().save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    loaded.save(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let restored = Trainer::from_checkpoint(&loaded).unwrap();
    assert_eq!(param_bits(&restored), param_bits(&out.trainer));
    assert_eq!(restored.step, out.trainer.step);
    assert_eq!(restored.gamma(), out.trainer.gamma());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let train_data = data(Split::Train, 10);
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::at(dir.path().join("full")).unwrap();
    let full = train(&cfg, &train_data, None, Some(&run)).unwrap();
    let mid = Checkpoint::load(&run.checkpoint_path(1)).unwrap();
    assert_eq!(mid.epoch, 1);
    let resumed = train(&cfg, &train_data, Some(&mid), None).unwrap();
    assert_eq!(param_bits(&resumed.trainer), param_bits(&full.trainer));
    assert_eq!(resumed.trainer.step, full.trainer.step);
    assert_eq!(resumed.log[..], full.log[3..]);
}

#[test]
fn identical_configs_give_identical_logs() {
    let train_data = data(Split::Train, 8);
    let a = train(&tiny_config(), &train_data, None, None).unwrap();
    let b = train(&tiny_config(), &train_data, None, None).unwrap();
    assert_eq!(a.log, b.log);
    let mut other = tiny_config();
    other.noise_seed = 99;
    let c = train(&other, &train_data, None, None).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn logs_are_complete_and_in_range() {
    let train_data = data(Split::Train, 10);
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::at(dir.path().join("r")).unwrap();
    let out = train(&tiny_config(), &train_data, None, Some(&run)).unwrap();
    assert_eq!(out.log.len(), 6);
    for (i, l) in out.log.iter().enumerate() {
        assert_eq!(l.step, i as u64 + 1);
        assert!(l.losses.is_finite());
        assert!(l.losses.su > 0.0 && l.losses.su <= 1.0);
        assert!(l.losses.mi >= 0.0 && l.losses.loc >= 0.0 && l.losses.aux >= 0.0);
        assert!(l.gamma > 0.0 && l.gamma < 1.0);
        assert!(l.lr > 0.0 && l.lr <= 5e-4);
    }
    let text = fs::read_to_string(run.join(TRAIN_LOG)).unwrap();
    let parsed: Vec<StepLog> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, out.log);
    let snapshot = TrainConfig::load(&run.join(CONFIG_SNAPSHOT)).unwrap();
    assert_eq!(snapshot, tiny_config());
    for f in ["checkpoint-epoch001.json", "checkpoint-epoch002.json", "checkpoint-final.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
}

#[test]
fn zero_weights_leave_only_localization() {
    let mut cfg = tiny_config();
    for k in ["lambda_su", "lambda_mi", "lambda_aux"] {
        cfg.set(k, "0").unwrap();
    }
    cfg.max_steps = 2;
    let out = train(&cfg, &data(Split::Train, 8), None, None).unwrap();
    assert!(out.log.iter().all(|l| l.losses.total == l.losses.loc));
}

#[test]
fn non_finite_loss_reports_the_batch() {
    let train_data = data(Split::Train, 4);
    let mut t = Trainer::new(tiny_config()).unwrap();
    let i = t.store.names().iter().position(|n| n == "head.output.bias").unwrap();
    t.store.values_mut()[i].data_mut()[0] = f32::NAN;
    let batch: Vec<&LabeledImage> = train_data.iter().collect();
    match t.train_step(&batch, 10) {
        Err(Error::Divergence { step, batch_ids, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(batch_ids, train_data.iter().map(|d| d.id.clone()).collect::<Vec<_>>());
        }
        other => panic!("expected divergence, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::at(dir.path().join("r")).unwrap();
    let err = train(&tiny_config(), &train_data, Some(&t.checkpoint()), Some(&run)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
    assert!(fs::read_to_string(run.join("divergence.txt")).unwrap().contains("train_"));
}

#[test]
fn evaluation_is_deterministic_and_covers_every_image() {
    let train_data = data(Split::Train, 6);
    let test_data = data(Split::Test, 7);
    let mut cfg = tiny_config();
    cfg.max_steps = 2;
    let t = train(&cfg, &train_data, None, None).unwrap().trainer;
    let a = evaluate(&t.model, &t.store, &test_data, 0.5, Aggregation::PerImage, 5).unwrap();
    let b = evaluate(&t.model, &t.store, &test_data, 0.5, Aggregation::PerImage, 3).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.images, 7);
    let ids: Vec<_> = a.report.per_image.iter().map(|s| s.id.clone()).collect();
    assert_eq!(ids, test_data.iter().map(|d| d.id.clone()).collect::<Vec<_>>());
    assert!((0.0..=1.0).contains(&a.report.f1));

    let dir = tempfile::tempdir().unwrap();
    write_predictions(dir.path(), &ids, &a.predictions).unwrap();
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 7);
}

#[test]
fn robustness_curves_start_at_the_baseline() {
    let train_data = data(Split::Train, 4);
    let test_data = data(Split::Test, 4);
    let mut cfg = tiny_config();
    cfg.max_steps = 1;
    let t = train(&cfg, &train_data, None, None).unwrap().trainer;
    let curves = robustness(&t.model, &t.store, &test_data, &[90, 50], &[3, 5, 7], 0.5, Aggregation::PerImage, 4).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[0].points.len(), 3);
    assert_eq!(curves[1].points.len(), 4);
    assert_eq!(curves[0].points[0], curves[1].points[0]);
    assert_eq!(curves[0].to_csv().lines().count(), 4);
    let labels: Vec<_> = curves[1].points.iter().map(|p| p.label.as_str()).collect();
    assert_eq!(labels, ["none", "blur3", "blur5", "blur7"]);
    let img = curves[0].render();
    assert_eq!((img.width(), img.height()), (320, 200));
    assert!(robustness(&t.model, &t.store, &test_data, &[0], &[], 0.5, Aggregation::PerImage, 4).is_err());
}

#[test]
fn ablation_trains_four_variants() {
    let mut cfg = tiny_config();
    cfg.max_steps = 1;
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::at(dir.path().join("abl")).unwrap();
    let table = ablate(&cfg, &data(Split::Train, 4), &data(Split::Test, 3), Aggregation::PerImage, Some(&run)).unwrap();
    assert_eq!(table.rows.len(), 4);
    let full = table.full().unwrap();
    assert!(full.terms.su && full.terms.mi && full.terms.aux);
    assert_eq!(table.rows.iter().filter(|r| r.terms.su && r.terms.mi && r.terms.aux).count(), 1);
    assert_eq!(table.to_markdown().lines().count(), 6);
    for i in 1..=4 {
        assert!(run.join(&format!("ablation-{i}")).join("checkpoint-final.json").exists());
    }
    assert!(run.join("ablation.md").exists() && run.join("ablation.json").exists());
}

#[test]
fn run_directories_do_not_collide() {
    let dir = tempfile::tempdir().unwrap();
    let a = RunDir::create(dir.path()).unwrap();
    let b = RunDir::create(dir.path()).unwrap();
    assert_ne!(a.path(), b.path());
    assert!(a.path().is_dir() && b.path().is_dir());
}
