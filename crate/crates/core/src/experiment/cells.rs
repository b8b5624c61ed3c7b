//! A cell is one (configuration, seed) training run plus its evaluation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LabConfig;
use crate::intervene::EditorPolicy;
use crate::metrics::{evaluate, shortcut_reliance, write_probe_csv, MetricsReport, ShortcutReliance, TrainedModel};
use crate::model::ModelParams;
use crate::taskgen::{generate_dataset, hex, Dataset, GeneratorConfig};
use crate::train::{train_run, LedgerSummary};
use crate::{rng, Result};

const LABEL_EVAL_DATA: u64 = 0xE7A1_DA7A;
const LABEL_RELIANCE: u64 = 0x5C2A;

/// Training and evaluation datasets for `seed`.
pub fn datasets(lab: &LabConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = generate_dataset(
        &GeneratorConfig {
            seed,
            ..lab.generator.clone()
        },
        lab.train_size,
    )?;
    let eval = generate_dataset(
        &GeneratorConfig {
            seed: rng::derive(seed, LABEL_EVAL_DATA),
            ..lab.generator.clone()
        },
        lab.eval_size,
    )?;
    Ok((train, eval))
}

/// Identity of a cell: everything that influences its result.
pub fn cell_key(lab: &LabConfig, seed: u64) -> String {
    let v = serde_json::json!({
        "generator": lab.generator,
        "train_size": lab.train_size,
        "eval_size": lab.eval_size,
        "train": lab.train,
        "eval": lab.eval,
        "seed": seed,
    });
    hex(&Sha256::digest(serde_json::to_vec(&v).expect("serializes")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub seed: u64,
    pub key: String,
    pub train_dataset_hash: String,
    pub eval_dataset_hash: String,
    pub checkpoint_hash: String,
    pub epoch_checkpoint_hashes: Vec<String>,
    pub ledger: LedgerSummary,
    pub report: MetricsReport,
    pub reliance: ShortcutReliance,
}

impl CellResult {
    /// COS with zero when no example qualified.
    pub fn cos(&self) -> f64 {
        self.report.cos.value.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub result: CellResult,
    pub params: ModelParams,
    pub editor: Option<EditorPolicy>,
    pub eval_data: Dataset,
}

/// Generates data, trains, evaluates. With `dir`, the datasets, ledger,
/// checkpoints, metrics and probe table are written there.
pub fn run_cell(lab: &LabConfig, label: &str, seed: u64, dir: Option<&Path>) -> Result<CellOutput> {
    lab.validate()?;
    let (train_data, eval_data) = datasets(lab, seed)?;
    let mut tcfg = lab.train.clone();
    tcfg.seed = seed;
    let outcome = train_run(&train_data, &tcfg, dir)?;
    let tokenizer = train_data.tokenizer();
    let model = TrainedModel {
        params: &outcome.params,
        temperature: lab.eval.temperature,
    };
    let mut ecfg = lab.eval.clone();
    ecfg.seed = seed;
    let evaluation = evaluate(&model, &tokenizer, &eval_data.tasks, &ecfg)?;
    let reliance = shortcut_reliance(&model, &tokenizer, &eval_data.tasks, rng::derive(seed, LABEL_RELIANCE))?;
    let result = CellResult {
        label: label.to_string(),
        seed,
        key: cell_key(lab, seed),
        train_dataset_hash: train_data.manifest.dataset_hash.clone(),
        eval_dataset_hash: eval_data.manifest.dataset_hash.clone(),
        checkpoint_hash: outcome.params.hash(),
        epoch_checkpoint_hashes: outcome.checkpoint_hashes.clone(),
        ledger: outcome.ledger.summary(),
        report: evaluation.report,
        reliance,
    };
    if let Some(dir) = dir {
        train_data.save(dir, "train")?;
        eval_data.save(dir, "eval")?;
        outcome.params.save(&dir.join("checkpoint_final.json"))?;
        write_probe_csv(&evaluation.records, &dir.join("probes.csv"))?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&result.report)?)?;
        std::fs::write(dir.join("cell.json"), serde_json::to_vec_pretty(&result)?)?;
    }
    Ok(CellOutput {
        result,
        params: outcome.params,
        editor: outcome.editor,
        eval_data,
    })
}

type Slot = Arc<Mutex<Option<Arc<CellOutput>>>>;

/// Memoizes cells by [`cell_key`] so checks and sweeps that share a
/// configuration train it once.
#[derive(Default)]
pub struct CellCache {
    slots: Mutex<HashMap<String, Slot>>,
    root: Option<std::path::PathBuf>,
}

impl CellCache {
    /// With a root, each newly trained cell writes to `<root>/<label>-seed<seed>`.
    pub fn new(root: Option<&Path>) -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            root: root.map(Path::to_path_buf),
        }
    }

    pub fn get(&self, lab: &LabConfig, label: &str, seed: u64) -> Result<Arc<CellOutput>> {
        let key = cell_key(lab, seed);
        let slot = self
            .slots
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_default()
            .clone();
        let mut guard = slot.lock().expect("slot lock");
        if let Some(done) = guard.as_ref() {
            return Ok(done.clone());
        }
        let dir = self.root.as_ref().map(|r| r.join(format!("{label}-seed{seed}")));
        let out = Arc::new(run_cell(lab, label, seed, dir.as_deref())?);
        *guard = Some(out.clone());
        Ok(out)
    }

    /// Every cell trained so far.
    pub fn results(&self) -> Vec<CellResult> {
        let slots = self.slots.lock().expect("cache lock");
        let mut out: Vec<CellResult> = slots
            .values()
            .filter_map(|s| s.lock().expect("slot lock").as_ref().map(|c| c.result.clone()))
            .collect();
        out.sort_by(|a, b| (&a.label, a.seed).cmp(&(&b.label, b.seed)));
        out
    }
}
