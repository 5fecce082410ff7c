use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::run::RunDir;
use super::train::train;
use crate::dataset::LabeledImage;
use crate::metrics::Aggregation;
use crate::Result;

/// Which optional terms a run keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationTerms {
    pub su: bool,
    pub mi: bool,
    pub aux: bool,
}

/// Row order: drop su, drop mi, drop aux, full.
pub const ABLATIONS: [AblationTerms; 4] = [
    AblationTerms { su: false, mi: true, aux: true },
    AblationTerms { su: true, mi: false, aux: true },
    AblationTerms { su: true, mi: true, aux: false },
    AblationTerms { su: true, mi: true, aux: true },
];

impl AblationTerms {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        if !self.su {
            c.lambda_su = 0.0;
        }
        if !self.mi {
            c.lambda_mi = 0.0;
        }
        if !self.aux {
            c.lambda_aux = 0.0;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: usize,
    pub terms: AblationTerms,
    pub f1: f64,
    pub auc: f64,
    pub final_loss: f64,
    pub steps: u64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn full(&self) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.terms == ABLATIONS[3])
    }

    pub fn to_markdown(&self) -> String {
        let mark = |b: bool| if b { "✓" } else { "-" };
        let mut s = String::from("| ID | L_SU | L_MI | L_aux | F1 | AUC |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.4} | {:.4} |",
                r.id,
                mark(r.terms.su),
                mark(r.terms.mi),
                mark(r.terms.aux),
                r.f1,
                r.auc
            );
        }
        s
    }
}

/// Trains the four configurations on the same data and seeds and scores
/// each on `test`.
pub fn ablate(
    cfg: &TrainConfig,
    train_data: &[LabeledImage],
    test_data: &[LabeledImage],
    aggregation: Aggregation,
    run: Option<&RunDir>,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (i, terms) in ABLATIONS.iter().enumerate() {
        let id = i + 1;
        let c = terms.apply(cfg);
        let child = run.map(|r| r.child(&format!("ablation-{id}"))).transpose()?;
        log::info!("ablation row {id}: {terms:?}");
        let out = train(&c, train_data, None, child.as_ref())?;
        let t = &out.trainer;
        let ev = evaluate(&t.model, &t.store, test_data, c.threshold, aggregation, c.eval_batch_size)?;
        if let Some(r) = &child {
            r.write_json("report.json", &ev.report)?;
        }
        rows.push(AblationRow {
            id,
            terms: *terms,
            f1: ev.report.f1,
            auc: ev.report.auc,
            final_loss: out.log.last().map_or(f64::NAN, |l| l.losses.total),
            steps: t.step,
            seconds: out.seconds,
        });
    }
    let table = AblationTable { rows };
    if let Some(r) = run {
        r.write_json("ablation.json", &table)?;
        r.write_text("ablation.md", &table.to_markdown())?;
    }
    Ok(table)
}
