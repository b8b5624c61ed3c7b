//! Gated counterfactual-sensitivity objective and the training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::intervene::{
    editor_update, propose_invalidating, EditDepth, EditPolicyKind, EditScript, EditorPolicy, EditorRewardConfig,
};
use crate::model::optim::OptimizerConfig;
use crate::model::{AnswerDistribution, ForwardPass, GradientBundle, ModelConfig, ModelParams};
use crate::taskgen::{Dataset, ReasoningTask};
use crate::trace::{identify_operators, last_k_op_subset, OperatorNoiseConfig, TokenSequence, Tokenizer};
use crate::verifier::Verifier;
use crate::{par, rng, Error, Result};

const LABEL_INIT: u64 = 1;
const LABEL_SHUFFLE: u64 = 2;
const LABEL_STEP: u64 = 3;

/// Upper bound applied to the divergence term.
pub const DIVERGENCE_CLIP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Kl,
    Js,
    Tv,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 3] = [DivergenceKind::Kl, DivergenceKind::Js, DivergenceKind::Tv];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::Js => "js",
            DivergenceKind::Tv => "tv",
        }
    }
}

/// `D(p ‖ q)` over two smoothed distributions.
pub fn divergence(p: &AnswerDistribution, q: &AnswerDistribution, kind: DivergenceKind) -> f64 {
    divergence_probs(&p.probs, &q.probs, kind)
}

pub fn divergence_probs(p: &[f64], q: &[f64], kind: DivergenceKind) -> f64 {
    match kind {
        DivergenceKind::Kl => p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0),
        DivergenceKind::Js => {
            let mut s = 0.0;
            for (a, b) in p.iter().zip(q) {
                let m = 0.5 * (a + b);
                s += 0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln();
            }
            s.max(0.0)
        }
        DivergenceKind::Tv => 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
    }
}

/// Divergence with its partial derivatives with respect to both arguments.
pub fn divergence_with_grad(p: &[f64], q: &[f64], kind: DivergenceKind) -> (f64, Vec<f64>, Vec<f64>) {
    let value = divergence_probs(p, q, kind);
    let (dp, dq) = match kind {
        DivergenceKind::Kl => (
            p.iter().zip(q).map(|(a, b)| (a / b).ln() + 1.0).collect(),
            p.iter().zip(q).map(|(a, b)| -a / b).collect(),
        ),
        DivergenceKind::Js => {
            let half_log = |x: f64, y: f64| 0.5 * (2.0 * x / (x + y)).ln();
            (
                p.iter().zip(q).map(|(&a, &b)| half_log(a, b)).collect(),
                p.iter().zip(q).map(|(&a, &b)| half_log(b, a)).collect(),
            )
        }
        DivergenceKind::Tv => {
            let sign = |x: f64| {
                if x > 0.0 {
                    0.5
                } else if x < 0.0 {
                    -0.5
                } else {
                    0.0
                }
            };
            (
                p.iter().zip(q).map(|(a, b)| sign(a - b)).collect(),
                p.iter().zip(q).map(|(a, b)| -sign(a - b)).collect(),
            )
        }
    };
    (value, dp, dq)
}

/// `−log p(y_true)`.
pub fn task_loss(dist: &AnswerDistribution, y_true: u32) -> f64 {
    -dist.log_probs[y_true as usize]
}

/// Loss whose gradient [`crate::model::backward`] computes.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    Task {
        answer: u32,
        temperature: f64,
    },
    Csr {
        counterfactual: &'a TokenSequence,
        divergence: DivergenceKind,
        temperature: f64,
    },
    Total {
        answer: u32,
        counterfactual: &'a TokenSequence,
        lambda: f64,
        divergence: DivergenceKind,
        temperature: f64,
    },
}

impl LossSpec<'_> {
    /// Loss value from forward passes only.
    pub fn value(&self, params: &ModelParams, seq: &TokenSequence) -> Result<f64> {
        let v = match *self {
            LossSpec::Task { answer, temperature } => {
                task_loss(&crate::model::forward(params, seq, temperature)?, answer)
            }
            LossSpec::Csr {
                counterfactual,
                divergence: kind,
                temperature,
            } => {
                let p = crate::model::forward(params, seq, temperature)?;
                let q = crate::model::forward(params, counterfactual, temperature)?;
                divergence(&p, &q, kind).min(DIVERGENCE_CLIP)
            }
            LossSpec::Total {
                answer,
                counterfactual,
                lambda,
                divergence: kind,
                temperature,
            } => {
                let p = crate::model::forward(params, seq, temperature)?;
                let q = crate::model::forward(params, counterfactual, temperature)?;
                task_loss(&p, answer) - lambda * divergence(&p, &q, kind).min(DIVERGENCE_CLIP)
            }
        };
        check_finite(v, "loss")?;
        Ok(v)
    }

    /// Adds the gradient of this loss at `seq` to `grads` and returns its value.
    pub fn accumulate(&self, params: &ModelParams, seq: &TokenSequence, grads: &mut GradientBundle) -> Result<f64> {
        let b = match *self {
            LossSpec::Task { answer, temperature } => {
                let fp = ForwardPass::run(params, seq, temperature)?;
                gated_loss(params, &fp, None, answer, 0.0, DivergenceKind::Kl, 1.0, grads)?
            }
            LossSpec::Csr {
                counterfactual,
                divergence,
                temperature,
            } => {
                let fp = ForwardPass::run(params, seq, temperature)?;
                let cf = ForwardPass::run(params, counterfactual, temperature)?;
                let (d, dp, dq) = clipped_divergence(&fp.dist, &cf.dist, divergence);
                check_finite(d, "l_csr")?;
                fp.backward_probs(params, &dp, grads);
                cf.backward_probs(params, &dq, grads);
                return Ok(d);
            }
            LossSpec::Total {
                answer,
                counterfactual,
                lambda,
                divergence,
                temperature,
            } => {
                let fp = ForwardPass::run(params, seq, temperature)?;
                let cf = ForwardPass::run(params, counterfactual, temperature)?;
                gated_loss(params, &fp, Some(&cf), answer, lambda, divergence, 1.0, grads)?
            }
        };
        Ok(b.l_total)
    }
}

fn check_finite(v: f64, term: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(term))
    }
}

fn clipped_divergence(p: &AnswerDistribution, q: &AnswerDistribution, kind: DivergenceKind) -> (f64, Vec<f64>, Vec<f64>) {
    let (d, dp, dq) = divergence_with_grad(&p.probs, &q.probs, kind);
    if d > DIVERGENCE_CLIP {
        let n = p.probs.len();
        (DIVERGENCE_CLIP, vec![0.0; n], vec![0.0; n])
    } else {
        (d, dp, dq)
    }
}

/// `l_task − λ·D(p ‖ p′)` when a counterfactual pass is supplied, `l_task`
/// otherwise. Gradients are scaled by `weight` before accumulation.
#[allow(clippy::too_many_arguments)]
fn gated_loss(
    params: &ModelParams,
    fp: &ForwardPass,
    cf: Option<&ForwardPass>,
    answer: u32,
    lambda: f64,
    kind: DivergenceKind,
    weight: f64,
    grads: &mut GradientBundle,
) -> Result<LossBreakdown> {
    let v = fp.dist.probs.len();
    if answer as usize >= v {
        return Err(Error::Precondition(format!("answer {answer} outside vocabulary of {v}")));
    }
    let l_task = task_loss(&fp.dist, answer);
    check_finite(l_task, "l_task")?;
    let mut d_p = vec![0.0; v];
    d_p[answer as usize] = -weight / fp.dist.probs[answer as usize];
    let Some(cf) = cf else {
        fp.backward_probs(params, &d_p, grads);
        return Ok(LossBreakdown::ungated(l_task));
    };
    let (l_csr, dp, dq) = clipped_divergence(&fp.dist, &cf.dist, kind);
    check_finite(l_csr, "l_csr")?;
    for (g, d) in d_p.iter_mut().zip(&dp) {
        *g -= weight * lambda * d;
    }
    let d_q: Vec<f64> = dq.iter().map(|d| -weight * lambda * d).collect();
    fp.backward_probs(params, &d_p, grads);
    if lambda != 0.0 {
        cf.backward_probs(params, &d_q, grads);
    }
    Ok(LossBreakdown::gated(l_task, l_csr, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_task: f64,
    /// Divergence before weighting by λ.
    pub l_csr: f64,
    pub gated: bool,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn ungated(l_task: f64) -> Self {
        Self {
            l_task,
            l_csr: 0.0,
            gated: false,
            l_total: l_task,
        }
    }

    pub fn gated(l_task: f64, l_csr: f64, lambda: f64) -> Self {
        Self {
            l_task,
            l_csr,
            gated: true,
            l_total: l_task - lambda * l_csr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// CSR weight.
    pub lambda: f64,
    pub divergence: DivergenceKind,
    /// Optimizer step from which the CSR term is active.
    pub warm_start_step: u64,
    /// Edits are restricted to the last `k_ratio` fraction of operators.
    pub k_ratio: f64,
    pub edit_depth: usize,
    pub edit_policy: EditPolicyKind,
    /// Lets the learned editor choose its own depth up to `edit_depth`.
    pub editor_learned_depth: bool,
    pub editor_lr: f64,
    pub editor_reward: EditorRewardConfig,
    pub editor_temperature: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Minimum CSR coverage α the experiments require.
    pub coverage_target: f64,
    pub answer_temperature: f64,
    pub verifier: Verifier,
    pub operator_noise: OperatorNoiseConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            divergence: DivergenceKind::Kl,
            warm_start_step: 0,
            k_ratio: 0.3,
            edit_depth: 1,
            edit_policy: EditPolicyKind::RandomSwap,
            editor_learned_depth: false,
            editor_lr: 0.05,
            editor_reward: EditorRewardConfig::default(),
            editor_temperature: 0.7,
            optimizer: OptimizerConfig::default(),
            epochs: 20,
            batch_size: 32,
            seed: 0,
            coverage_target: 0.5,
            answer_temperature: 1.2,
            verifier: Verifier::Exact,
            operator_noise: OperatorNoiseConfig::exact(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.k_ratio > 0.0 && self.k_ratio <= 1.0) {
            return Err(Error::Config(format!("k_ratio {} outside (0, 1]", self.k_ratio)));
        }
        if !(1..=3).contains(&self.edit_depth) {
            return Err(Error::Config(format!("edit_depth {} outside 1..=3", self.edit_depth)));
        }
        if self.optimizer.lr() <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.answer_temperature > 0.0) || !(self.editor_temperature > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if let Verifier::Noisy(n) = &self.verifier {
            n.validate()?;
        }
        self.operator_noise.validate()?;
        self.optimizer.validate()
    }

    fn editor_depth(&self) -> EditDepth {
        if self.editor_learned_depth {
            EditDepth::Learned { max: self.edit_depth }
        } else {
            EditDepth::Fixed(self.edit_depth)
        }
    }
}

/// Why an example did not receive the CSR term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    WarmStart,
    NoEditPossible,
    GateRejected,
    NonFinite,
}

impl SkipReason {
    pub fn name(self) -> &'static str {
        match self {
            SkipReason::WarmStart => "warm_start",
            SkipReason::NoEditPossible => "no_edit_possible",
            SkipReason::GateRejected => "gate_rejected",
            SkipReason::NonFinite => "non_finite",
        }
    }
}

/// Everything one example contributes to a training step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    pub grads: GradientBundle,
    pub edit: Option<EditScript>,
    pub skip: Option<SkipReason>,
    pub correct: bool,
    pub forward_passes: u64,
    /// Reward for the learned editor's proposal, with the proposal itself.
    pub editor_feedback: Option<(crate::intervene::Proposal, f64)>,
}

/// Per-example inputs of [`csr_step`] that do not change within a run.
pub struct StepContext<'a> {
    pub cfg: &'a TrainConfig,
    pub tokenizer: &'a Tokenizer,
    pub editor: Option<&'a EditorPolicy>,
}

/// One example of the gated objective. `weight` scales the gradient (the
/// batch average uses `1 / batch_size`).
pub fn csr_step<R: rand::Rng + ?Sized>(
    params: &ModelParams,
    task: &ReasoningTask,
    ctx: &StepContext<'_>,
    global_step: u64,
    weight: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let cfg = ctx.cfg;
    let seq = task.render(ctx.tokenizer)?;
    let mut grads = GradientBundle::zeros(params.len());
    let fp = ForwardPass::run(params, &seq, cfg.answer_temperature)?;
    let correct = crate::model::predict(&fp.dist) == task.answer;

    let candidates = edit_candidates(&seq, task, cfg, rng)?;
    let mut skip = None;
    let mut edit = None;
    let mut cf_pass = None;
    let mut proposal = None;
    let mut validity = false;
    match propose_invalidating(
        ctx.tokenizer,
        &seq,
        &candidates,
        cfg.edit_policy,
        cfg.edit_depth,
        ctx.editor,
        cfg.editor_depth(),
        rng,
    ) {
        Ok(cf) => {
            validity = cfg.verifier.gate(&task.trace, &cf.trace, rng)?;
            proposal = cf.proposal;
            edit = Some(cf.script);
            if !validity {
                skip = Some(SkipReason::GateRejected);
            } else if global_step < cfg.warm_start_step {
                skip = Some(SkipReason::WarmStart);
            } else {
                cf_pass = Some(ForwardPass::run(params, &cf.seq, cfg.answer_temperature)?);
            }
        }
        Err(Error::NoEditPossible(_)) => skip = Some(SkipReason::NoEditPossible),
        Err(e) => return Err(e),
    }

    let forward_passes = 1 + u64::from(cf_pass.is_some());
    let (loss, skip) = match gated_loss(
        params,
        &fp,
        cf_pass.as_ref(),
        task.answer,
        cfg.lambda,
        cfg.divergence,
        weight,
        &mut grads,
    ) {
        Ok(l) => (l, skip),
        Err(Error::NonFinite(_)) => {
            grads = GradientBundle::zeros(params.len());
            (LossBreakdown::ungated(f64::NAN), Some(SkipReason::NonFinite))
        }
        Err(e) => return Err(e),
    };

    let editor_feedback = proposal.map(|p| {
        let impact = if loss.gated && loss.l_csr.is_finite() {
            // Reward the raw KL shift regardless of the training divergence.
            let cf = cf_pass.as_ref().expect("gated implies a counterfactual pass");
            divergence(&fp.dist, &cf.dist, DivergenceKind::Kl).min(DIVERGENCE_CLIP)
        } else {
            0.0
        };
        let depth = p.script.depth();
        (p, cfg.editor_reward.reward(validity, impact, depth))
    });

    Ok(StepOutcome {
        loss,
        grads,
        edit,
        skip,
        correct,
        forward_passes,
        editor_feedback,
    })
}

/// Identified operators restricted to the last-k subset. Noise can substitute
/// non-operator tokens, which cannot be swapped and are dropped here.
pub fn edit_candidates<R: rand::Rng + ?Sized>(
    seq: &TokenSequence,
    task: &ReasoningTask,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BTreeSet<usize>> {
    let identified = identify_operators(seq, &task.causal_op_positions, &cfg.operator_noise, rng);
    let last_k = last_k_op_subset(seq, cfg.k_ratio)?;
    Ok(identified
        .intersection(&last_k)
        .copied()
        .filter(|&p| seq.op_mask[p])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    pub l_task: f64,
    pub l_csr: f64,
    pub l_total: f64,
    pub gated: usize,
    pub forward_passes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub mean_l_task: f64,
    pub mean_l_csr: f64,
    pub coverage: f64,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub forward_passes: u64,
    /// Forward passes a plain task-loss run would have used.
    pub baseline_forward_passes: u64,
    pub csr_applied: u64,
    /// Examples seen at or after the warm-start step.
    pub examples_after_warm_start: u64,
    pub skip_reasons: BTreeMap<String, u64>,
    pub wall_seconds: f64,
    pub editor_updates: u64,
}

impl RunLedger {
    /// Fraction of post-warm-start examples that received the CSR term.
    pub fn coverage(&self) -> f64 {
        if self.examples_after_warm_start == 0 {
            0.0
        } else {
            self.csr_applied as f64 / self.examples_after_warm_start as f64
        }
    }

    /// Extra forward passes relative to the task-loss-only baseline.
    pub fn overhead(&self) -> f64 {
        if self.baseline_forward_passes == 0 {
            0.0
        } else {
            (self.forward_passes - self.baseline_forward_passes) as f64 / self.baseline_forward_passes as f64
        }
    }

    pub fn summary(&self) -> LedgerSummary {
        LedgerSummary {
            steps: self.steps.len() as u64,
            forward_passes: self.forward_passes,
            baseline_forward_passes: self.baseline_forward_passes,
            overhead: self.overhead(),
            csr_applied: self.csr_applied,
            examples_after_warm_start: self.examples_after_warm_start,
            coverage: self.coverage(),
            skip_reasons: self.skip_reasons.clone(),
            wall_seconds: self.wall_seconds,
            editor_updates: self.editor_updates,
            final_train_accuracy: self.epochs.last().map(|e| e.train_accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub steps: u64,
    pub forward_passes: u64,
    pub baseline_forward_passes: u64,
    pub overhead: f64,
    pub csr_applied: u64,
    pub examples_after_warm_start: u64,
    pub coverage: f64,
    pub skip_reasons: BTreeMap<String, u64>,
    pub wall_seconds: f64,
    pub editor_updates: u64,
    pub final_train_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub ledger: RunLedger,
    pub editor: Option<EditorPolicy>,
    pub checkpoint_hashes: Vec<String>,
}

/// Model configuration actually used by a run: vocabulary sizes come from
/// the dataset and the initialisation seed from the run seed.
pub fn resolved_model_config(dataset: &Dataset, cfg: &TrainConfig) -> ModelConfig {
    let mut m = cfg.model.clone().for_vocab(&dataset.manifest.config.vocab());
    m.init_seed = rng::derive(cfg.seed, LABEL_INIT);
    m
}

/// Trains on `dataset`. When `out` is given, per-epoch checkpoints, the
/// step ledger (JSONL) and its summary are written there.
pub fn train_run(dataset: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.tasks.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let started = Instant::now();
    let tokenizer = dataset.tokenizer();
    let mut params = ModelParams::init(resolved_model_config(dataset, cfg))?;
    let mut opt = cfg.optimizer.build(params.len())?;
    let mut editor = (cfg.edit_policy == EditPolicyKind::LearnedEditor).then(|| EditorPolicy {
        temperature: cfg.editor_temperature,
        ..EditorPolicy::default()
    });
    let mut ledger = RunLedger::default();
    let mut hashes = Vec::with_capacity(cfg.epochs);
    let mut step_log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("ledger.jsonl"))?))
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..dataset.tasks.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, LABEL_SHUFFLE);
    let mut global_step = 0u64;
    let result = (|| -> Result<()> {
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut correct, mut sum_task, mut sum_csr, mut gated_epoch, mut post_warm_epoch) =
                (0usize, 0.0, 0.0, 0u64, 0u64);
            for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
                let weight = 1.0 / batch.len() as f64;
                let ctx = StepContext {
                    cfg,
                    tokenizer: &tokenizer,
                    editor: editor.as_ref(),
                };
                let snapshot = &params;
                let step = global_step;
                let outcomes = par::map_indexed(batch, |_, &ti| {
                    let mut r = rng::stream(cfg.seed ^ rng::derive(step, LABEL_STEP), ti as u64);
                    csr_step(snapshot, &dataset.tasks[ti], &ctx, step, weight, &mut r)
                });
                let mut grads = GradientBundle::zeros(params.len());
                let mut rec = StepRecord {
                    step,
                    epoch,
                    batch: batch_idx,
                    l_task: 0.0,
                    l_csr: 0.0,
                    l_total: 0.0,
                    gated: 0,
                    forward_passes: 0,
                };
                let mut feedback = Vec::new();
                for o in outcomes {
                    let o = o?;
                    grads.add_scaled(&o.grads, 1.0);
                    if let Some(reason) = o.skip {
                        *ledger.skip_reasons.entry(reason.name().to_string()).or_default() += 1;
                    }
                    if step >= cfg.warm_start_step {
                        ledger.examples_after_warm_start += 1;
                        post_warm_epoch += 1;
                    }
                    if o.loss.gated {
                        ledger.csr_applied += 1;
                        rec.gated += 1;
                        gated_epoch += 1;
                    }
                    if o.loss.l_task.is_finite() {
                        rec.l_task += o.loss.l_task * weight;
                        rec.l_csr += o.loss.l_csr * weight;
                        rec.l_total += o.loss.l_total * weight;
                    }
                    rec.forward_passes += o.forward_passes;
                    correct += usize::from(o.correct);
                    if let Some(f) = o.editor_feedback {
                        feedback.push(f);
                    }
                }
                ledger.forward_passes += rec.forward_passes;
                ledger.baseline_forward_passes += batch.len() as u64;
                sum_task += rec.l_task * batch.len() as f64;
                sum_csr += rec.l_csr * batch.len() as f64;
                if !grads.is_finite() {
                    return Err(Error::NonFinite("batch gradient"));
                }
                opt.step(&mut params, &grads)?;
                if let Some(ed) = editor.as_mut() {
                    if step >= cfg.warm_start_step {
                        for (proposal, reward) in &feedback {
                            editor_update(ed, proposal, *reward, cfg.editor_lr)?;
                            ledger.editor_updates += 1;
                        }
                    }
                }
                if let Some(w) = step_log.as_mut() {
                    serde_json::to_writer(&mut *w, &rec)?;
                    w.write_all(b"\n")?;
                }
                ledger.steps.push(rec);
                global_step += 1;
            }
            let n = dataset.tasks.len() as f64;
            let hash = params.hash();
            if let Some(dir) = out {
                params.save(&dir.join(format!("checkpoint_epoch{epoch:03}.json")))?;
            }
            hashes.push(hash.clone());
            ledger.epochs.push(EpochRecord {
                epoch,
                train_accuracy: correct as f64 / n,
                mean_l_task: sum_task / n,
                mean_l_csr: sum_csr / n,
                coverage: if post_warm_epoch == 0 {
                    0.0
                } else {
                    gated_epoch as f64 / post_warm_epoch as f64
                },
                checkpoint_hash: hash,
            });
        }
        Ok(())
    })();

    ledger.wall_seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = out {
        if let Some(mut w) = step_log.take() {
            w.flush()?;
        }
        let f = File::create(dir.join("ledger_summary.json"))?;
        serde_json::to_writer_pretty(f, &ledger.summary())?;
        if let Some(ed) = &editor {
            serde_json::to_writer_pretty(File::create(dir.join("editor.json"))?, ed)?;
        }
    }
    result?;
    Ok(TrainOutcome {
        params,
        ledger,
        editor,
        checkpoint_hashes: hashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> AnswerDistribution {
        AnswerDistribution::from_probs(p, 1e-8)
    }

    #[test]
    fn task_loss_poles() {
        let v = 128;
        let u = AnswerDistribution::uniform(v, 1e-8);
        assert!((task_loss(&u, 3) - (128f64).ln()).abs() < 1e-9);
        let one = AnswerDistribution::one_hot(v, 7, 1e-8);
        let expected = -(1.0 - 127.0 * 1e-8f64).ln();
        assert!((task_loss(&one, 7) - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = dist(&[0.2, 0.3, 0.5]);
        for k in DivergenceKind::ALL {
            assert_eq!(divergence(&p, &p, k), 0.0);
        }
    }

    #[test]
    fn disjoint_mass_total_variation_is_near_one() {
        let p = dist(&[1.0, 0.0]);
        let q = dist(&[0.0, 1.0]);
        assert!((divergence(&p, &q, DivergenceKind::Tv) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn breakdown_arithmetic() {
        let b = LossBreakdown::gated(2.0, 0.5, 0.5);
        assert_eq!(b.l_total, 1.75);
        let u = LossBreakdown::ungated(2.0);
        assert_eq!((u.l_csr, u.l_total, u.gated), (0.0, 2.0, false));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lambda: -0.1,
                ..Default::default()
            },
            TrainConfig {
                k_ratio: 0.0,
                ..Default::default()
            },
            TrainConfig {
                edit_depth: 4,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
