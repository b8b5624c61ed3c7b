//! Faithfulness and calibration metrics.
//!
//! Every metric is computed from per-example records produced by
//! [`evaluate`], which runs the answer model on the original trace, one
//! verifier-gated invalidating edit, one meaning-preserving variant and the
//! two rationale maskings. The records are also written as the probe CSV.
//!
//! The meaning-preserving variants (commutative operand swap, filler
//! insertion, question reordering) are synthetic stand-ins for the
//! paraphrase and synonym perturbations used on natural language.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::intervene::{propose_invalidating, semantic_variant, EditDepth, EditPolicyKind, Transform, RESAMPLE_BUDGET};
use crate::model::{predict, AnswerDistribution, ModelParams};
use crate::taskgen::ReasoningTask;
use crate::trace::{last_k_op_subset, Segment, TokenKind, TokenSequence, Tokenizer, Vocab};
use crate::train::{divergence, DivergenceKind};
use crate::verifier::Verifier;
use crate::{par, rng, Error, Result};

/// Anything that maps a token sequence to an answer distribution.
pub trait AnswerModel: Sync {
    fn distribution(&self, seq: &TokenSequence) -> Result<AnswerDistribution>;
}

/// A trained predictor evaluated at a fixed temperature.
pub struct TrainedModel<'a> {
    pub params: &'a ModelParams,
    pub temperature: f64,
}

impl AnswerModel for TrainedModel<'_> {
    fn distribution(&self, seq: &TokenSequence) -> Result<AnswerDistribution> {
        crate::model::forward(self.params, seq, self.temperature)
    }
}

/// Re-executes the rendered trace, propagating references, and answers with
/// the result of the final step. Unparseable (masked) traces get a uniform
/// answer.
pub struct SymbolicExecutor {
    pub tokenizer: Tokenizer,
    pub epsilon: f64,
}

impl AnswerModel for SymbolicExecutor {
    fn distribution(&self, seq: &TokenSequence) -> Result<AnswerDistribution> {
        let v = self.tokenizer.vocab.answer_vocab;
        let answer = self
            .tokenizer
            .parse(seq)
            .ok()
            .and_then(|p| p.trace.execute_answer(v).ok());
        Ok(match answer {
            Some(a) => AnswerDistribution::one_hot(v as usize, a as usize, self.epsilon),
            None => AnswerDistribution::uniform(v as usize, self.epsilon),
        })
    }
}

/// Reads only the question: answers with the shortcut token when present,
/// otherwise with a hash of the question tokens.
pub struct TraceIgnoring {
    pub vocab: Vocab,
    pub epsilon: f64,
}

impl AnswerModel for TraceIgnoring {
    fn distribution(&self, seq: &TokenSequence) -> Result<AnswerDistribution> {
        let v = self.vocab.answer_vocab;
        let mut fallback = 0u64;
        for (i, &t) in seq.tokens.iter().enumerate() {
            if seq.segment[i] != Segment::Question {
                continue;
            }
            if let TokenKind::Shortcut(a) = self.vocab.kind(t)? {
                return Ok(AnswerDistribution::one_hot(v as usize, a as usize, self.epsilon));
            }
            fallback = fallback.wrapping_mul(31).wrapping_add(u64::from(t));
        }
        Ok(AnswerDistribution::one_hot(
            v as usize,
            (fallback % u64::from(v)) as usize,
            self.epsilon,
        ))
    }
}

/// Answers with the number at a fixed absolute token position.
pub struct PositionKeyed {
    pub vocab: Vocab,
    pub position: usize,
    pub epsilon: f64,
}

impl AnswerModel for PositionKeyed {
    fn distribution(&self, seq: &TokenSequence) -> Result<AnswerDistribution> {
        let v = self.vocab.answer_vocab as usize;
        Ok(match seq.tokens.get(self.position).map(|&t| self.vocab.kind(t)) {
            Some(Ok(TokenKind::Num(a))) => AnswerDistribution::one_hot(v, a as usize, self.epsilon),
            _ => AnswerDistribution::uniform(v, self.epsilon),
        })
    }
}

/// Which operators the evaluation edit may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditTarget {
    Causal,
    /// Confounder operators only; the control cell of the dominance check.
    Confounder,
    /// No edit: `T′ = T`, a harness self-test.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub edit_policy: EditPolicyKind,
    pub edit_depth: usize,
    /// Restricts evaluation edits to the last `k_ratio` fraction of operators.
    pub k_ratio: f64,
    pub edit_target: EditTarget,
    pub verifier: Verifier,
    pub bins: usize,
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            edit_policy: EditPolicyKind::RandomSwap,
            edit_depth: 1,
            k_ratio: 0.3,
            edit_target: EditTarget::Causal,
            verifier: Verifier::Exact,
            bins: 10,
            temperature: 1.0,
        }
    }
}

/// How the evaluation edit for one example ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    Applied,
    NoEditPossible,
    GateRejected,
    Identity,
}

impl GateStatus {
    pub fn name(self) -> &'static str {
        match self {
            GateStatus::Applied => "applied",
            GateStatus::NoEditPossible => "no_edit_possible",
            GateStatus::GateRejected => "gate_rejected",
            GateStatus::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: usize,
    pub answer: u32,
    pub prediction: u32,
    pub correct: bool,
    pub confidence: f64,
    pub gate: GateStatus,
    pub edit_policy: String,
    /// Whether the argmax changed under the evaluation edit.
    pub flipped: Option<bool>,
    pub transform: Option<Transform>,
    /// Whether the argmax changed under the meaning-preserving variant.
    pub variant_flipped: Option<bool>,
    pub cs: Option<f64>,
    pub comp: Option<f64>,
    pub suff: Option<f64>,
}

/// A ratio that keeps its numerator and denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
    pub value: Option<f64>,
}

impl Fraction {
    pub fn new(num: usize, den: usize) -> Self {
        Self {
            num,
            den,
            value: (den > 0).then(|| num as f64 / den as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_eval: usize,
    pub accuracy: f64,
    pub cos: Fraction,
    /// Correct examples without an applicable gated edit.
    pub cos_excluded: usize,
    pub sis: Fraction,
    /// Correct examples with no applicable meaning-preserving transform.
    pub sis_excluded: usize,
    pub mean_cs: Option<f64>,
    pub mean_comp: Option<f64>,
    pub mean_suff: Option<f64>,
    pub n_probes: usize,
    pub ece: f64,
    pub flip_precision: Option<f64>,
    pub flip_recall: Option<f64>,
    pub flip_counts: FlipCounts,
    pub sis_kind: String,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<ExampleRecord>,
    pub report: MetricsReport,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn kl(p: &AnswerDistribution, q: &AnswerDistribution) -> f64 {
    divergence(p, q, DivergenceKind::Kl)
}

/// CS, COMP and SUFF for one example. `rationale` must be a nonempty set of
/// trace positions; removal is realised by masking.
pub fn probes<M: AnswerModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    rationale: &BTreeSet<usize>,
    counterfactual: &TokenSequence,
) -> Result<(f64, f64, f64)> {
    if rationale.is_empty() {
        return Err(Error::Empty("rationale"));
    }
    let p = model.distribution(seq)?;
    let cs = kl(&p, &model.distribution(counterfactual)?);
    let comp = kl(&p, &model.distribution(&seq.masked(rationale.iter().copied()))?);
    let complement: Vec<usize> = seq
        .trace_positions()
        .into_iter()
        .filter(|q| !rationale.contains(q))
        .collect();
    let suff = kl(&p, &model.distribution(&seq.masked(complement))?);
    Ok((cs, comp, suff))
}

/// `Σ_b (n_b / N)·|acc_b − conf_b|` over equal-width confidence bins.
pub fn ece(confidence: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidence.is_empty() {
        return Err(Error::Empty("calibration sample"));
    }
    if bins == 0 || confidence.len() != correct.len() {
        return Err(Error::Precondition("ece needs bins > 0 and matched inputs".into()));
    }
    let mut n = vec![0usize; bins];
    let mut acc = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        n[b] += 1;
        conf[b] += c;
        acc[b] += f64::from(u8::from(ok));
    }
    let total = confidence.len() as f64;
    Ok((0..bins)
        .filter(|&b| n[b] > 0)
        .map(|b| (n[b] as f64 / total) * (acc[b] / n[b] as f64 - conf[b] / n[b] as f64).abs())
        .sum())
}

/// Flip precision and recall: causal edits should flip the answer, semantic
/// variants should not.
pub fn flip_pr(records: &[ExampleRecord]) -> (Option<f64>, Option<f64>, FlipCounts) {
    let mut c = FlipCounts::default();
    for r in records {
        match r.flipped {
            Some(true) => c.tp += 1,
            Some(false) => c.fn_ += 1,
            None => {}
        }
        match r.variant_flipped {
            Some(true) => c.fp += 1,
            Some(false) => c.tn += 1,
            None => {}
        }
    }
    let precision = (c.tp + c.fp > 0).then(|| c.tp as f64 / (c.tp + c.fp) as f64);
    let recall = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
    (precision, recall, c)
}

/// Over correctly answered examples with an applied edit, the share whose
/// answer flipped.
pub fn cos(records: &[ExampleRecord]) -> (Fraction, usize) {
    let correct: Vec<&ExampleRecord> = records.iter().filter(|r| r.correct).collect();
    let applied: Vec<bool> = correct.iter().filter_map(|r| r.flipped).collect();
    let flipped = applied.iter().filter(|&&f| f).count();
    (Fraction::new(flipped, applied.len()), correct.len() - applied.len())
}

/// Over correctly answered examples with an applicable transform, the share
/// whose answer did not change.
pub fn sis(records: &[ExampleRecord]) -> (Fraction, usize) {
    let correct: Vec<&ExampleRecord> = records.iter().filter(|r| r.correct).collect();
    let applied: Vec<bool> = correct.iter().filter_map(|r| r.variant_flipped).collect();
    let unchanged = applied.iter().filter(|&&f| !f).count();
    (Fraction::new(unchanged, applied.len()), correct.len() - applied.len())
}

fn edit_candidates(task: &ReasoningTask, seq: &TokenSequence, cfg: &EvalConfig) -> Result<BTreeSet<usize>> {
    Ok(match cfg.edit_target {
        EditTarget::Causal => {
            let last = last_k_op_subset(seq, cfg.k_ratio)?;
            task.causal_op_positions.intersection(&last).copied().collect()
        }
        EditTarget::Confounder => task.confounder_op_positions(seq),
        EditTarget::Identity => BTreeSet::new(),
    })
}

fn evaluate_one<M: AnswerModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    tokenizer: &Tokenizer,
    id: usize,
    task: &ReasoningTask,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<ExampleRecord> {
    let seq = task.render(tokenizer)?;
    let p = model.distribution(&seq)?;
    let prediction = predict(&p);

    let candidates = edit_candidates(task, &seq, cfg)?;
    let mut gate = GateStatus::NoEditPossible;
    let mut counterfactual = None;
    let mut policy = String::from("none");
    if cfg.edit_target == EditTarget::Identity {
        gate = GateStatus::Identity;
        policy = "identity".into();
        counterfactual = Some(seq.clone());
    } else {
        for _ in 0..RESAMPLE_BUDGET {
            match propose_invalidating(
                tokenizer,
                &seq,
                &candidates,
                cfg.edit_policy,
                cfg.edit_depth,
                None,
                EditDepth::Fixed(cfg.edit_depth),
                rng,
            ) {
                Ok(cf) => {
                    policy = format!("{:?}", cf.script.policy);
                    if cfg.verifier.gate(&task.trace, &cf.trace, rng)? {
                        gate = GateStatus::Applied;
                        counterfactual = Some(cf.seq);
                        break;
                    }
                    gate = GateStatus::GateRejected;
                }
                Err(Error::NoEditPossible(_)) => break,
                Err(e) => return Err(e),
            }
        }
    }

    let flipped = match (&counterfactual, gate) {
        (Some(cf), GateStatus::Applied) => Some(predict(&model.distribution(cf)?) != prediction),
        _ => None,
    };
    let variant = semantic_variant(tokenizer, &seq, rng)?;
    let variant_flipped = match variant.transform {
        Some(_) => Some(predict(&model.distribution(&variant.seq)?) != prediction),
        None => None,
    };
    let rationale = task.causal_step_positions(&seq);
    let (cs, comp, suff) = match &counterfactual {
        Some(cf) if !rationale.is_empty() => {
            let (a, b, c) = probes(model, &seq, &rationale, cf)?;
            (Some(a), Some(b), Some(c))
        }
        _ => (None, None, None),
    };
    Ok(ExampleRecord {
        id,
        answer: task.answer,
        prediction,
        correct: prediction == task.answer,
        confidence: p.confidence(),
        gate,
        edit_policy: policy,
        flipped,
        transform: variant.transform,
        variant_flipped,
        cs,
        comp,
        suff,
    })
}

/// Runs every probe on every task. Example `i` draws from stream `i` of the
/// evaluation seed, so results do not depend on scheduling.
pub fn evaluate<M: AnswerModel + ?Sized>(
    model: &M,
    tokenizer: &Tokenizer,
    tasks: &[ReasoningTask],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if tasks.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let records: Vec<ExampleRecord> = par::map_indexed(tasks, |i, t| {
        let mut r = rng::stream(rng::derive(cfg.seed, 0xE7A1), i as u64);
        evaluate_one(model, tokenizer, i, t, cfg, &mut r)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let report = report_from(&records, cfg.bins)?;
    Ok(Evaluation { records, report })
}

pub fn report_from(records: &[ExampleRecord], bins: usize) -> Result<MetricsReport> {
    let n = records.len();
    let correct: Vec<bool> = records.iter().map(|r| r.correct).collect();
    let conf: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    let (cos_f, cos_excluded) = cos(records);
    let (sis_f, sis_excluded) = sis(records);
    let (flip_precision, flip_recall, flip_counts) = flip_pr(records);
    Ok(MetricsReport {
        n_eval: n,
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / n.max(1) as f64,
        cos: cos_f,
        cos_excluded,
        sis: sis_f,
        sis_excluded,
        mean_cs: mean(records.iter().filter_map(|r| r.cs)),
        mean_comp: mean(records.iter().filter_map(|r| r.comp)),
        mean_suff: mean(records.iter().filter_map(|r| r.suff)),
        n_probes: records.iter().filter(|r| r.cs.is_some()).count(),
        ece: ece(&conf, &correct, bins)?,
        flip_precision,
        flip_recall,
        flip_counts,
        sis_kind: "synthetic: commutative swap, filler insertion, question reorder".into(),
    })
}

/// Writes the per-example probe table.
pub fn write_probe_csv(records: &[ExampleRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "correct", "flipped", "cs", "comp", "suff", "edit_policy", "gate"])?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.9}")).unwrap_or_default();
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.correct.to_string(),
            r.flipped.map(|f| f.to_string()).unwrap_or_default(),
            opt(r.cs),
            opt(r.comp),
            opt(r.suff),
            r.edit_policy.clone(),
            r.gate.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Copy of `seq` with every shortcut token replaced by a different,
/// uniformly chosen shortcut value.
pub fn scramble_shortcut<R: Rng + ?Sized>(vocab: &Vocab, seq: &TokenSequence, rng: &mut R) -> Result<TokenSequence> {
    let mut out = seq.clone();
    let v = vocab.answer_vocab;
    for t in out.tokens.iter_mut() {
        if let TokenKind::Shortcut(a) = vocab.kind(*t)? {
            let shift = rng.gen_range(1..v);
            *t = vocab.shortcut((a + shift) % v);
        }
    }
    Ok(out)
}

/// Accuracy with and without the shortcut token scrambled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReliance {
    pub accuracy: f64,
    pub scrambled_accuracy: f64,
    /// `accuracy − scrambled_accuracy`.
    pub reliance: f64,
}

pub fn shortcut_reliance<M: AnswerModel + ?Sized>(
    model: &M,
    tokenizer: &Tokenizer,
    tasks: &[ReasoningTask],
    seed: u64,
) -> Result<ShortcutReliance> {
    if tasks.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let hits: Vec<(bool, bool)> = par::map_indexed(tasks, |i, t| {
        let mut r = rng::stream(rng::derive(seed, 0x5C2A), i as u64);
        let seq = t.render(tokenizer)?;
        let plain = predict(&model.distribution(&seq)?) == t.answer;
        let scrambled = scramble_shortcut(&tokenizer.vocab, &seq, &mut r)?;
        Ok((plain, predict(&model.distribution(&scrambled)?) == t.answer))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let n = tasks.len() as f64;
    let accuracy = hits.iter().filter(|h| h.0).count() as f64 / n;
    let scrambled_accuracy = hits.iter().filter(|h| h.1).count() as f64 / n;
    Ok(ShortcutReliance {
        accuracy,
        scrambled_accuracy,
        reliance: accuracy - scrambled_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ece_poles() {
        assert_eq!(ece(&[1.0; 20], &[true; 20], 10).unwrap(), 0.0);
        let wrong = ece(&[1.0; 20], &[false; 20], 10).unwrap();
        assert!((wrong - 1.0).abs() < 1e-12);
        assert!(ece(&[], &[], 10).is_err());
    }

    #[test]
    fn fraction_absent_when_empty() {
        assert_eq!(Fraction::new(0, 0).value, None);
        assert_eq!(Fraction::new(1, 4).value, Some(0.25));
    }
}
