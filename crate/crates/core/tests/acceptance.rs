//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Takes roughly half an hour on one core.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use common::metric_oracles::{auc_oracle, f1_oracle, instance};
use forgeloc::datagen::DataGenConfig;
use forgeloc::dataset::{generate_split, load_split, write_dataset, LabeledImage, Split, SplitPlan};
use forgeloc::metrics::{pixel_auc, pixel_f1, Aggregation};
use forgeloc::objectives::*;
use forgeloc::pipeline::run::TRAIN_LOG;
use forgeloc::pipeline::{self, Checkpoint, RunDir, StepLog, TrainConfig, Trainer};
use forgeloc::reasoning::inject_mask_noise;
use forgeloc::tensor::{Graph, Tensor, Var};
use forgeloc::theory::run_theory_checks;
use forgeloc::{ForgeryMask, PixelProbMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GEN_TRAIN: usize = 2000;
const GEN_TEST: usize = 200;
const ABLATION_TRAIN: usize = 600;
const ABLATION_EPOCHS: usize = 8;

struct Verdicts(Vec<(&'static str, bool)>);

impl Verdicts {
    fn record(&mut self, name: &'static str, passed: bool, detail: String) {
        let tag = if passed { "PASS" } else { "FAIL" };
        let _ = writeln!(std::io::stderr(), "{tag} {name}: {detail}");
        self.0.push((name, passed));
    }
}

fn progress(msg: &str) {
    let _ = writeln!(std::io::stderr(), "  .. {msg}");
}

fn theory(v: &mut Verdicts) {
    let t = Instant::now();
    let report = run_theory_checks(1000, 0, 5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let enough = report.checks.iter().all(|c| c.instances >= 1000);
    let worst = report.checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    v.record(
        "theory identities",
        report.passed && enough && secs < 120.0,
        format!(
            "{} checks x 1000 instances, worst deviation {worst:.2e}, failed {failed:?}, {secs:.1}s",
            report.checks.len()
        ),
    );
}

fn gradients(v: &mut Verdicts) {
    let t = Instant::now();
    let report = common::model_grad_report(11, 2);
    let secs = t.elapsed().as_secs_f64();
    let worst = report.iter().map(|&(_, g, p)| g.max(p)).fold(0.0, f64::max);
    let all = report.len() == 5 && worst <= 1e-4;
    let detail: Vec<String> = report.iter().map(|(n, g, p)| format!("{n} γ {g:.1e} params {p:.1e}")).collect();
    v.record("gradient correctness", all && secs < 60.0, format!("{}; {secs:.1}s", detail.join(", ")));
}

fn map(g: &mut Graph<f64>, vals: &[f64]) -> Var {
    g.constant(Tensor::from_vec([1, 1, 1, vals.len()], vals.to_vec()).unwrap())
}

fn hand_values(v: &mut Verdicts) {
    let mut g = Graph::new();
    let eps = DEFAULT_PROB_CLAMP_EPS;
    let (p, q) = (map(&mut g, &[0.8]), map(&mut g, &[0.5]));
    let su = sufficiency_loss(&mut g, p, &[q], eps, SuAggregate::Mean).unwrap();
    let su = g.value(su).item();
    let z = g.constant(Tensor::from_vec([1, 2, 1, 1], vec![0.9f64.ln(), 0.1f64.ln()]).unwrap());
    let e = g.constant(Tensor::from_vec([1, 2, 1, 1], vec![0.0, 0.0]).unwrap());
    let mi = minimality_loss(&mut g, z, e, MiKlMode::Categorical).unwrap();
    let mi = g.value(mi).item();
    let (pred, m) = (map(&mut g, &[0.8, 0.4]), map(&mut g, &[1.0, 0.0]));
    let loc = localization_loss(&mut g, pred, m, eps).unwrap();
    let loc = g.value(loc).item();
    let total = LossBundle::new(1.0, 1.0, 1.0, 1.0, Lambdas::default()).total;
    let ok = (su - 0.8247).abs() <= 1e-4 && (mi - 0.36806).abs() <= 1e-5 && (loc - 0.36699).abs() <= 1e-5 && total == 2.2;
    v.record(
        "hand-computed values",
        ok,
        format!("su {su:.6}, mi {mi:.6}, loc {loc:.6}, total {total}"),
    );
}

fn noise(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = 0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..65), rng.random_range(1..65));
        let mut mask = ForgeryMask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                mask.set(y, x, rng.random_bool(0.3));
            }
        }
        let gamma: f64 = rng.random_range(0.0..=1.0);
        let noisy = inject_mask_noise(&mask, gamma, rng.random()).unwrap();
        let flipped = mask.data().iter().zip(noisy.mask.data()).filter(|(a, b)| a != b).count();
        bad += usize::from(flipped != (gamma * (h * w) as f64).floor() as usize);
    }
    v.record("noise exactness", bad == 0, format!("{bad} of 100 triples off"));
}

fn metric_oracles(v: &mut Verdicts) {
    let (mut f1_bad, mut auc_worst) = (0, 0.0f64);
    for seed in 0..100 {
        let (m, gt, scores, labels) = instance(5000 + seed, 6, 11);
        f1_bad += usize::from(pixel_f1(&m, &gt, 0.5).unwrap() != f1_oracle(&scores, &labels, 0.5));
        auc_worst = auc_worst.max((pixel_auc(&m, &gt).unwrap() - auc_oracle(&scores, &labels)).abs());
    }
    let (_, gt, _, _) = instance(1, 6, 11);
    let constant = pixel_auc(&PixelProbMap::new(6, 11, vec![0.37; 66]).unwrap(), &gt).unwrap();
    v.record(
        "metric oracles",
        f1_bad == 0 && auc_worst <= 1e-9 && constant == 0.5,
        format!("F1 mismatches {f1_bad}, worst AUC deviation {auc_worst:.1e}, constant-score AUC {constant}"),
    );
}

fn trained(run: &RunDir) -> Trainer {
    Trainer::from_checkpoint(&Checkpoint::load(&run.final_checkpoint_path()).unwrap()).unwrap()
}

fn overfit(v: &mut Verdicts, base: &Path) {
    let data = generate_split(&DataGenConfig::default(), Split::Train, 0..50).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.epochs = 1000;
    cfg.max_steps = 500;
    progress("overfit: 500 steps on 50 samples");
    let run = RunDir::at(base.join("overfit")).unwrap();
    let out = pipeline::train(&cfg, &data, None, Some(&run)).unwrap();
    let t = trained(&run);
    let ev = pipeline::evaluate(&t.model, &t.store, &data, cfg.threshold, Aggregation::PerImage, cfg.eval_batch_size).unwrap();
    v.record(
        "overfit smoke",
        ev.report.f1 >= 0.90 && t.step <= 500 && out.seconds <= 900.0,
        format!("train F1 {:.4} after {} steps, {:.0}s", ev.report.f1, t.step, out.seconds),
    );
}

fn generalization(v: &mut Verdicts, data_root: &Path, base: &Path) -> (Trainer, Vec<StepLog>) {
    let train = load_split(data_root, Split::Train).unwrap();
    let test = load_split(data_root, Split::Test).unwrap();
    let cfg = TrainConfig::default();
    progress(&format!("generalization: {} samples x {} epochs", train.len(), cfg.epochs));
    let run = RunDir::at(base.join("generalization")).unwrap();
    let out = pipeline::train(&cfg, &train, None, Some(&run)).unwrap();
    let t = trained(&run);
    let ev = pipeline::evaluate(&t.model, &t.store, &test, cfg.threshold, Aggregation::PerImage, cfg.eval_batch_size).unwrap();
    let f1 = ev.report.f1;
    let soft = if f1 < 0.5 { " (below the 0.50 soft floor)" } else { "" };
    v.record(
        "generalization smoke",
        f1 >= 0.60,
        format!(
            "held-out F1 {f1:.4}, AUC {:.4}{soft}; {} train / {} test, {} epochs, {:.0}s",
            ev.report.auc,
            train.len(),
            test.len(),
            t.epoch,
            out.seconds
        ),
    );
    let log: Vec<StepLog> = std::fs::read_to_string(run.join(TRAIN_LOG))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    (t, log)
}

fn loss_ranges(v: &mut Verdicts, log: &[StepLog]) {
    let su_bad = log.iter().filter(|l| !(l.losses.su > 0.0 && l.losses.su <= 1.0)).count();
    let mi_bad = log.iter().filter(|l| !(l.losses.mi >= 0.0)).count();
    let (lo, hi) = log.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), l| (a.min(l.losses.su), b.max(l.losses.su)));
    let mi_min = log.iter().map(|l| l.losses.mi).fold(f64::INFINITY, f64::min);
    v.record(
        "loss ranges",
        !log.is_empty() && su_bad == 0 && mi_bad == 0,
        format!(
            "{} logged steps, su in [{lo:.4}, {hi:.4}], min mi {mi_min:.2e}, violations su {su_bad} mi {mi_bad}",
            log.len()
        ),
    );
}

fn ablation(v: &mut Verdicts, train: &[LabeledImage], test: &[LabeledImage], base: &Path) {
    let mut cfg = TrainConfig::default();
    cfg.epochs = ABLATION_EPOCHS;
    progress(&format!("ablation: 4 rows, {} samples x {} epochs", train.len(), cfg.epochs));
    let run = RunDir::at(base.join("ablation")).unwrap();
    let table = pipeline::ablate(&cfg, train, test, Aggregation::PerImage, Some(&run)).unwrap();
    let full = table.full().map_or(f64::NAN, |r| r.f1);
    let best_other = table
        .rows
        .iter()
        .filter(|r| !(r.terms.su && r.terms.mi && r.terms.aux))
        .map(|r| r.f1)
        .fold(f64::NEG_INFINITY, f64::max);
    let f1s: Vec<String> = table.rows.iter().map(|r| format!("{}:{:.4}", r.id, r.f1)).collect();
    v.record(
        "ablation trend",
        table.rows.len() == 4 && full >= best_other - 0.02,
        format!("F1 by row {} (row 4 is full), best ablated {best_other:.4}", f1s.join(" ")),
    );
}

fn robustness(v: &mut Verdicts, t: &Trainer, test: &[LabeledImage]) {
    let c = &t.config;
    let curves =
        pipeline::robustness(&t.model, &t.store, test, &[90, 70, 50], &[3, 5, 7], c.threshold, Aggregation::PerImage, c.eval_batch_size)
            .unwrap();
    let ok = curves.len() == 2 && curves.iter().all(|c| c.points.len() == 4 && c.max_increase() <= 0.03);
    let detail: Vec<String> = curves
        .iter()
        .map(|c| {
            let aucs: Vec<String> = c.points.iter().map(|p| format!("{} {:.4}", p.label, p.auc)).collect();
            format!("{}: {} (max rise {:+.4})", c.family, aucs.join(", "), c.max_increase())
        })
        .collect();
    v.record("robustness trend", ok, detail.join("; "));
}

#[test]
fn acceptance() {
    let mut v = Verdicts(Vec::new());
    theory(&mut v);
    gradients(&mut v);
    hand_values(&mut v);
    noise(&mut v);
    metric_oracles(&mut v);

    let tmp = tempfile::tempdir().unwrap();
    let data_root = tmp.path().join("data");
    let plan = SplitPlan {
        train: GEN_TRAIN,
        val: 0,
        test: GEN_TEST,
        seed_offset: 0,
    };
    progress("writing the synthetic dataset");
    write_dataset(&data_root, &DataGenConfig::default(), &plan).unwrap();
    let runs = tmp.path().join("runs");

    overfit(&mut v, &runs);
    let (gen_model, log) = generalization(&mut v, &data_root, &runs);
    loss_ranges(&mut v, &log);
    let train = load_split(&data_root, Split::Train).unwrap();
    let test = load_split(&data_root, Split::Test).unwrap();
    robustness(&mut v, &gen_model, &test);
    ablation(&mut v, &train[..ABLATION_TRAIN], &test, &runs);

    let failed: Vec<_> = v.0.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
