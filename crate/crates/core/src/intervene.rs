//! Counterfactual edits and meaning-preserving variants.
//!
//! Logical edits swap operator tokens. The learned editor is a linear scorer
//! over hand-built position features (relative step, first/last step flags,
//! operator identity); whether a step lies on the causal path is deliberately
//! not a feature. It is trained with REINFORCE against an exponential moving
//! average baseline.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{Op, Parsed, TokenSequence, Tokenizer, Trace, Vocab};
use crate::verifier;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyTag {
    FixedSwap,
    RandomSwap,
    MultiEdit,
    LearnedEditor,
    SemanticPreserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub old_symbol: u32,
    pub new_symbol: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub edits: Vec<Edit>,
    pub policy: PolicyTag,
}

impl EditScript {
    pub fn depth(&self) -> usize {
        self.edits.len()
    }

    pub fn positions(&self) -> BTreeSet<usize> {
        self.edits.iter().map(|e| e.position).collect()
    }

    /// Applies the edits, checking each old symbol against the sequence.
    pub fn apply(&self, seq: &TokenSequence) -> Result<TokenSequence> {
        let mut out = seq.clone();
        for e in &self.edits {
            match out.tokens.get(e.position) {
                Some(&t) if t == e.old_symbol => out.tokens[e.position] = e.new_symbol,
                Some(&t) => {
                    return Err(Error::Malformed(format!(
                        "edit expects token {} at {}, found {t}",
                        e.old_symbol, e.position
                    )))
                }
                None => {
                    return Err(Error::Malformed(format!(
                        "edit position {} beyond sequence end",
                        e.position
                    )))
                }
            }
        }
        Ok(out)
    }
}

fn operator_candidates(
    vocab: &Vocab,
    seq: &TokenSequence,
    candidates: &BTreeSet<usize>,
    depth: usize,
) -> Result<Vec<(usize, Op)>> {
    if candidates.is_empty() {
        return Err(Error::NoEditPossible("no candidate positions".into()));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for &p in candidates {
        let op = seq
            .tokens
            .get(p)
            .and_then(|&t| vocab.op_of(t))
            .filter(|_| seq.op_mask[p])
            .ok_or_else(|| Error::Malformed(format!("candidate {p} is not an operator")))?;
        out.push((p, op));
    }
    if depth == 0 || depth > out.len() {
        return Err(Error::NoEditPossible(format!(
            "depth {depth} with {} candidate positions",
            out.len()
        )));
    }
    Ok(out)
}

/// `depth` distinct candidate operators, each replaced by a uniformly chosen
/// different operator.
pub fn random_swap<R: Rng + ?Sized>(
    vocab: &Vocab,
    seq: &TokenSequence,
    candidates: &BTreeSet<usize>,
    depth: usize,
    rng: &mut R,
) -> Result<EditScript> {
    let cands = operator_candidates(vocab, seq, candidates, depth)?;
    let picks = index::sample(rng, cands.len(), depth);
    let edits = picks
        .into_iter()
        .map(|i| {
            let (position, op) = cands[i];
            let new = op.alternatives()[rng.gen_range(0..2)];
            Edit {
                position,
                old_symbol: vocab.op(op),
                new_symbol: vocab.op(new),
            }
        })
        .collect();
    Ok(EditScript {
        edits,
        policy: if depth == 1 {
            PolicyTag::RandomSwap
        } else {
            PolicyTag::MultiEdit
        },
    })
}

/// Deterministic swap of the last candidate: `+` and `-` trade places, `*` becomes `+`.
pub fn fixed_swap(vocab: &Vocab, seq: &TokenSequence, candidates: &BTreeSet<usize>) -> Result<EditScript> {
    let cands = operator_candidates(vocab, seq, candidates, 1)?;
    let (position, op) = *cands.last().expect("non-empty");
    let new = match op {
        Op::Add => Op::Sub,
        Op::Sub | Op::Mul => Op::Add,
    };
    Ok(EditScript {
        edits: vec![Edit {
            position,
            old_symbol: vocab.op(op),
            new_symbol: vocab.op(new),
        }],
        policy: PolicyTag::FixedSwap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditorRewardConfig {
    pub lambda_impact: f64,
    pub lambda_length: f64,
}

impl Default for EditorRewardConfig {
    fn default() -> Self {
        Self {
            lambda_impact: 0.1,
            lambda_length: 0.05,
        }
    }
}

impl EditorRewardConfig {
    /// `r_validity + λ_impact · r_impact − λ_length · |a|`.
    pub fn reward(&self, validity: bool, impact: f64, depth: usize) -> f64 {
        f64::from(u8::from(validity)) + self.lambda_impact * impact - self.lambda_length * depth as f64
    }
}

pub const POSITION_FEATURES: usize = 6;
pub const MAX_EDIT_DEPTH: usize = 3;

/// How many edits the editor makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditDepth {
    Fixed(usize),
    /// Depth sampled by the policy's depth head from `1..=max`.
    Learned { max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorPolicy {
    pub position_weights: Vec<f64>,
    /// Row-major `[old][new]` operator replacement scores.
    pub replacement: Vec<f64>,
    pub depth_logits: Vec<f64>,
    pub temperature: f64,
    pub baseline: f64,
    pub baseline_decay: f64,
    #[serde(default)]
    pub updates: u64,
    #[serde(default)]
    pub skipped_updates: u64,
}

impl Default for EditorPolicy {
    fn default() -> Self {
        Self {
            position_weights: vec![0.0; POSITION_FEATURES],
            replacement: vec![0.0; 9],
            depth_logits: vec![0.0; MAX_EDIT_DEPTH],
            temperature: 0.7,
            baseline: 0.0,
            baseline_decay: 0.99,
            updates: 0,
            skipped_updates: 0,
        }
    }
}

/// A sampled edit together with the score-function gradient of its log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub script: EditScript,
    pub log_prob: f64,
    pub grad_log_prob: Vec<f64>,
}

fn position_features(vocab: &Vocab, seq: &TokenSequence, pos: usize, n_ops: usize) -> [f64; POSITION_FEATURES] {
    let step = seq.step_of(pos).unwrap_or(0);
    let rel = if n_ops > 1 {
        step as f64 / (n_ops - 1) as f64
    } else {
        0.0
    };
    let op = vocab.op_of(seq.tokens[pos]).unwrap_or(Op::Add);
    [
        rel,
        f64::from(u8::from(step + 1 == n_ops)),
        f64::from(u8::from(step == 0)),
        f64::from(u8::from(op == Op::Add)),
        f64::from(u8::from(op == Op::Sub)),
        f64::from(u8::from(op == Op::Mul)),
    ]
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// One step of the editor's generative process, either sampled or replayed.
enum Choice<'a, R: ?Sized> {
    Sample(&'a mut R),
    Replay(&'a EditScript),
}

impl EditorPolicy {
    pub fn num_params(&self) -> usize {
        POSITION_FEATURES + 9 + MAX_EDIT_DEPTH
    }

    fn params(&self) -> Vec<f64> {
        let mut v = self.position_weights.clone();
        v.extend_from_slice(&self.replacement);
        v.extend_from_slice(&self.depth_logits);
        v
    }

    fn set_params(&mut self, v: &[f64]) {
        self.position_weights.copy_from_slice(&v[..POSITION_FEATURES]);
        self.replacement
            .copy_from_slice(&v[POSITION_FEATURES..POSITION_FEATURES + 9]);
        self.depth_logits.copy_from_slice(&v[POSITION_FEATURES + 9..]);
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "editor temperature {} must be positive",
                self.temperature
            )));
        }
        if self.position_weights.len() != POSITION_FEATURES
            || self.replacement.len() != 9
            || self.depth_logits.len() != MAX_EDIT_DEPTH
        {
            return Err(Error::Config("editor parameter shapes".into()));
        }
        Ok(())
    }

    /// Shared by sampling and replay so both walk the same distribution.
    fn walk<R: Rng + ?Sized>(
        &self,
        vocab: &Vocab,
        seq: &TokenSequence,
        candidates: &BTreeSet<usize>,
        depth: EditDepth,
        mut choice: Choice<'_, R>,
    ) -> Result<Proposal> {
        self.validate()?;
        let max_depth = match depth {
            EditDepth::Fixed(l) => l,
            EditDepth::Learned { max } => max.min(MAX_EDIT_DEPTH).min(candidates.len()).max(1),
        };
        let cands = operator_candidates(vocab, seq, candidates, max_depth)?;
        let n_ops = seq.op_positions().len();
        let feats: Vec<[f64; POSITION_FEATURES]> = cands
            .iter()
            .map(|&(p, _)| position_features(vocab, seq, p, n_ops))
            .collect();
        let mut grad = vec![0.0; self.num_params()];
        let mut log_prob = 0.0;

        let depth_n = match depth {
            EditDepth::Fixed(l) => l,
            EditDepth::Learned { .. } => {
                let probs = softmax(&self.depth_logits[..max_depth]);
                let k = match &mut choice {
                    Choice::Sample(rng) => sample_index(&probs, *rng),
                    Choice::Replay(s) => {
                        let d = s.depth();
                        if d == 0 || d > max_depth {
                            return Err(Error::Malformed(format!("depth {d} not reachable")));
                        }
                        d - 1
                    }
                };
                log_prob += probs[k].ln();
                for (j, p) in probs.iter().enumerate() {
                    grad[POSITION_FEATURES + 9 + j] += f64::from(u8::from(j == k)) - p;
                }
                k + 1
            }
        };

        let mut remaining: Vec<usize> = (0..cands.len()).collect();
        let mut edits = Vec::with_capacity(depth_n);
        for step in 0..depth_n {
            let scores: Vec<f64> = remaining
                .iter()
                .map(|&i| {
                    feats[i]
                        .iter()
                        .zip(&self.position_weights)
                        .map(|(f, w)| f * w)
                        .sum::<f64>()
                        / self.temperature
                })
                .collect();
            let probs = softmax(&scores);
            let r = match &mut choice {
                Choice::Sample(rng) => sample_index(&probs, *rng),
                Choice::Replay(s) => {
                    let pos = s.edits[step].position;
                    remaining
                        .iter()
                        .position(|&i| cands[i].0 == pos)
                        .ok_or_else(|| Error::Malformed(format!("position {pos} not a candidate")))?
                }
            };
            log_prob += probs[r].ln();
            for (j, &i) in remaining.iter().enumerate() {
                let w = f64::from(u8::from(j == r)) - probs[j];
                for (g, f) in grad[..POSITION_FEATURES].iter_mut().zip(&feats[i]) {
                    *g += w * f / self.temperature;
                }
            }
            let (position, old) = cands[remaining.remove(r)];
            let alts = old.alternatives();
            let row = old.index() * 3;
            let rep_probs = softmax(&[
                self.replacement[row + alts[0].index()],
                self.replacement[row + alts[1].index()],
            ]);
            let a = match &mut choice {
                Choice::Sample(rng) => sample_index(&rep_probs, *rng),
                Choice::Replay(s) => {
                    let new = vocab.op_of(s.edits[step].new_symbol);
                    alts.iter()
                        .position(|&o| Some(o) == new)
                        .ok_or_else(|| Error::Malformed("replacement not an alternative".into()))?
                }
            };
            log_prob += rep_probs[a].ln();
            for (j, alt) in alts.iter().enumerate() {
                grad[POSITION_FEATURES + row + alt.index()] += f64::from(u8::from(j == a)) - rep_probs[j];
            }
            edits.push(Edit {
                position,
                old_symbol: vocab.op(old),
                new_symbol: vocab.op(alts[a]),
            });
        }
        Ok(Proposal {
            script: EditScript {
                edits,
                policy: PolicyTag::LearnedEditor,
            },
            log_prob,
            grad_log_prob: grad,
        })
    }

    /// Exact log-probability of `script` under the policy.
    pub fn log_prob(
        &self,
        vocab: &Vocab,
        seq: &TokenSequence,
        candidates: &BTreeSet<usize>,
        depth: EditDepth,
        script: &EditScript,
    ) -> Result<f64> {
        let choice: Choice<'_, rand_chacha::ChaCha8Rng> = Choice::Replay(script);
        Ok(self.walk(vocab, seq, candidates, depth, choice)?.log_prob)
    }

    /// Expected number of edits under the depth head, given `available` candidates.
    pub fn expected_depth(&self, max: usize, available: usize) -> f64 {
        let m = max.min(MAX_EDIT_DEPTH).min(available).max(1);
        softmax(&self.depth_logits[..m])
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut x: f64 = rng.gen();
    for (i, p) in probs.iter().enumerate() {
        if x < *p {
            return i;
        }
        x -= p;
    }
    probs.len() - 1
}

/// Samples positions from `softmax(score / τ)` without replacement, then
/// replacements from the replacement scorer.
pub fn editor_propose<R: Rng + ?Sized>(
    vocab: &Vocab,
    seq: &TokenSequence,
    candidates: &BTreeSet<usize>,
    policy: &EditorPolicy,
    depth: EditDepth,
    rng: &mut R,
) -> Result<Proposal> {
    policy.walk(vocab, seq, candidates, depth, Choice::Sample(rng))
}

/// REINFORCE step: `θ += lr · (reward − baseline) · ∇log π`, then the
/// baseline tracks the reward with an exponential moving average.
pub fn editor_update(policy: &mut EditorPolicy, proposal: &Proposal, reward: f64, lr: f64) -> Result<()> {
    if !reward.is_finite() {
        return Err(Error::NonFinite("editor reward"));
    }
    let advantage = reward - policy.baseline;
    let mut params = policy.params();
    let step: Vec<f64> = proposal
        .grad_log_prob
        .iter()
        .map(|g| lr * advantage * g)
        .collect();
    if step.iter().all(|s| s.is_finite()) {
        for (p, s) in params.iter_mut().zip(&step) {
            *p += s;
        }
        policy.set_params(&params);
        policy.updates += 1;
    } else {
        policy.skipped_updates += 1;
    }
    policy.baseline = policy.baseline_decay * policy.baseline + (1.0 - policy.baseline_decay) * reward;
    Ok(())
}

/// Edit proposal strategy used by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditPolicyKind {
    FixedSwap,
    RandomSwap,
    /// Random swaps with depth drawn uniformly from `1..=L`.
    MultiEdit,
    LearnedEditor,
}

pub const RESAMPLE_BUDGET: usize = 8;

/// A checked edit: the counterfactual sequence, its parsed trace and the
/// editor proposal when one was used.
#[derive(Debug, Clone)]
pub struct Counterfactual {
    pub script: EditScript,
    pub seq: TokenSequence,
    pub trace: Trace,
    pub proposal: Option<Proposal>,
}

/// Draws edits until one breaks the trace under the exact verifier, giving up
/// after [`RESAMPLE_BUDGET`] attempts.
#[allow(clippy::too_many_arguments)]
pub fn propose_invalidating<R: Rng + ?Sized>(
    tokenizer: &Tokenizer,
    seq: &TokenSequence,
    candidates: &BTreeSet<usize>,
    kind: EditPolicyKind,
    depth: usize,
    editor: Option<&EditorPolicy>,
    editor_depth: EditDepth,
    rng: &mut R,
) -> Result<Counterfactual> {
    let vocab = &tokenizer.vocab;
    for _ in 0..RESAMPLE_BUDGET {
        let (script, proposal) = match kind {
            EditPolicyKind::FixedSwap => (fixed_swap(vocab, seq, candidates)?, None),
            EditPolicyKind::RandomSwap => (random_swap(vocab, seq, candidates, depth, rng)?, None),
            EditPolicyKind::MultiEdit => {
                let l = rng.gen_range(1..=depth.max(1));
                let mut s = random_swap(vocab, seq, candidates, l, rng)?;
                s.policy = PolicyTag::MultiEdit;
                (s, None)
            }
            EditPolicyKind::LearnedEditor => {
                let policy = editor.ok_or_else(|| Error::Config("learned editor policy missing".into()))?;
                let p = editor_propose(vocab, seq, candidates, policy, editor_depth, rng)?;
                (p.script.clone(), Some(p))
            }
        };
        let edited = script.apply(seq)?;
        let trace = tokenizer.parse(&edited)?.trace;
        if !verifier::verify(&trace)?.valid {
            return Ok(Counterfactual {
                script,
                seq: edited,
                trace,
                proposal,
            });
        }
        if kind == EditPolicyKind::FixedSwap {
            break;
        }
    }
    Err(Error::NoEditPossible(format!(
        "no invalidating edit within {RESAMPLE_BUDGET} attempts"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    /// Swap the operands of a `+` or `*` step.
    CommutativeSwap,
    /// Insert a filler token into the question, shifting every later position.
    TemplateFiller,
    /// Reorder the non-semantic question tokens.
    QuestionReorder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVariant {
    pub seq: TokenSequence,
    /// `None` when no transformation applied and `seq` is the input.
    pub transform: Option<Transform>,
}

/// A meaning-preserving rewrite of `seq`, chosen uniformly among the
/// transformations that apply.
pub fn semantic_variant<R: Rng + ?Sized>(
    tokenizer: &Tokenizer,
    seq: &TokenSequence,
    rng: &mut R,
) -> Result<SemanticVariant> {
    let Parsed { question, trace } = tokenizer.parse(seq)?;
    let commutative: Vec<usize> = trace
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.op.is_commutative() && s.lhs != s.rhs)
        .map(|(i, _)| i)
        .collect();
    let body = question.len().saturating_sub(1);
    let distinct_body = question[1.min(question.len())..]
        .iter()
        .collect::<BTreeSet<_>>()
        .len();
    let mut options = Vec::new();
    if !commutative.is_empty() {
        options.push(Transform::CommutativeSwap);
    }
    if seq.len() < tokenizer.context_limit {
        options.push(Transform::TemplateFiller);
    }
    if body >= 2 && distinct_body >= 2 {
        options.push(Transform::QuestionReorder);
    }
    let Some(&transform) = options.choose(rng) else {
        return Ok(SemanticVariant {
            seq: seq.clone(),
            transform: None,
        });
    };
    let (mut q, mut t) = (question, trace);
    match transform {
        Transform::CommutativeSwap => {
            let i = *commutative.choose(rng).expect("non-empty");
            let s = &mut t.steps[i];
            std::mem::swap(&mut s.lhs, &mut s.rhs);
        }
        Transform::TemplateFiller => {
            let f = tokenizer.vocab.filler(rng.gen_range(0..tokenizer.vocab.fillers));
            let at = rng.gen_range(1..=q.len());
            q.insert(at, f);
        }
        Transform::QuestionReorder => {
            let original = q.clone();
            while q == original {
                q[1..].shuffle(rng);
            }
        }
    }
    Ok(SemanticVariant {
        seq: tokenizer.render(&q, &t)?,
        transform: Some(transform),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::trace::{Operand, Step};

    fn tok() -> Tokenizer {
        Tokenizer::new(Vocab::new(128, 8), 96)
    }

    fn seq_of(steps: Vec<Step>) -> TokenSequence {
        tok().render(&[Vocab::BOS, tok().vocab.filler(0)], &Trace::new(steps)).unwrap()
    }

    fn add(a: i64, b: i64) -> Step {
        Step {
            lhs: Operand::Lit(a),
            op: Op::Add,
            rhs: Operand::Lit(b),
            result: a + b,
        }
    }

    #[test]
    fn single_plus_swaps_to_minus_or_times() {
        let seq = seq_of(vec![add(4, 3)]);
        let v = tok().vocab;
        let cands: BTreeSet<usize> = seq.op_positions().into_iter().collect();
        let mut r = rng::stream(0, 0);
        for _ in 0..50 {
            let s = random_swap(&v, &seq, &cands, 1, &mut r).unwrap();
            assert_eq!(s.depth(), 1);
            assert_eq!(s.edits[0].old_symbol, v.op(Op::Add));
            assert!([v.op(Op::Sub), v.op(Op::Mul)].contains(&s.edits[0].new_symbol));
        }
    }

    #[test]
    fn depth_beyond_candidates_is_rejected() {
        let seq = seq_of(vec![add(1, 2), add(3, 4)]);
        let cands: BTreeSet<usize> = seq.op_positions().into_iter().collect();
        let r = random_swap(&tok().vocab, &seq, &cands, 3, &mut rng::stream(0, 0));
        assert!(matches!(r, Err(Error::NoEditPossible(_))));
        let r = random_swap(&tok().vocab, &seq, &BTreeSet::new(), 1, &mut rng::stream(0, 0));
        assert!(matches!(r, Err(Error::NoEditPossible(_))));
    }

    #[test]
    fn apply_checks_old_symbol() {
        let seq = seq_of(vec![add(4, 3)]);
        let bad = EditScript {
            edits: vec![Edit {
                position: 2,
                old_symbol: 999,
                new_symbol: 1,
            }],
            policy: PolicyTag::RandomSwap,
        };
        assert!(bad.apply(&seq).is_err());
    }

    #[test]
    fn zero_temperature_limit_picks_argmax() {
        let seq = seq_of(vec![add(1, 2), add(3, 4), add(5, 6)]);
        let cands: BTreeSet<usize> = seq.op_positions().into_iter().collect();
        let mut policy = EditorPolicy::default();
        policy.position_weights[1] = 1.0; // last step
        policy.temperature = 1e-3;
        let last = *seq.op_positions().last().unwrap();
        let mut r = rng::stream(3, 0);
        for _ in 0..200 {
            let p = editor_propose(&tok().vocab, &seq, &cands, &policy, EditDepth::Fixed(1), &mut r).unwrap();
            assert_eq!(p.script.edits[0].position, last);
        }
    }

    #[test]
    fn replayed_log_prob_matches_sample() {
        let seq = seq_of(vec![add(1, 2), add(3, 4), add(5, 6), add(7, 1)]);
        let cands: BTreeSet<usize> = seq.op_positions().into_iter().collect();
        let policy = EditorPolicy {
            position_weights: vec![0.3, -1.2, 0.7, 0.1, -0.4, 0.9],
            replacement: vec![0.0, 0.5, -0.5, 1.0, 0.0, 0.2, -0.3, 0.8, 0.0],
            depth_logits: vec![0.2, -0.1, 0.4],
            ..Default::default()
        };
        let v = tok().vocab;
        let mut r = rng::stream(4, 0);
        for depth in [EditDepth::Fixed(2), EditDepth::Learned { max: 3 }] {
            for _ in 0..100 {
                let p = editor_propose(&v, &seq, &cands, &policy, depth, &mut r).unwrap();
                let again = policy.log_prob(&v, &seq, &cands, depth, &p.script).unwrap();
                assert!((again - p.log_prob).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn reward_at_baseline_leaves_policy_unchanged() {
        let seq = seq_of(vec![add(1, 2), add(3, 4)]);
        let cands: BTreeSet<usize> = seq.op_positions().into_iter().collect();
        let mut policy = EditorPolicy {
            baseline: 0.6,
            ..Default::default()
        };
        let before = policy.clone();
        let p = editor_propose(&tok().vocab, &seq, &cands, &policy, EditDepth::Fixed(1), &mut rng::stream(0, 0)).unwrap();
        editor_update(&mut policy, &p, 0.6, 0.5).unwrap();
        assert_eq!(policy.position_weights, before.position_weights);
        assert_eq!(policy.replacement, before.replacement);
        assert!(editor_update(&mut policy, &p, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn commutative_swap_preserves_answer() {
        let t = tok();
        let seq = seq_of(vec![add(4, 3)]);
        let mut r = rng::stream(8, 0);
        let mut saw_swap = false;
        for _ in 0..50 {
            let v = semantic_variant(&t, &seq, &mut r).unwrap();
            let parsed = t.parse(&v.seq).unwrap();
            assert!(crate::verifier::verify(&parsed.trace).unwrap().valid);
            assert_eq!(parsed.trace.execute_answer(128).unwrap(), 7);
            if v.transform == Some(Transform::CommutativeSwap) {
                saw_swap = true;
                assert_eq!(parsed.trace.steps[0].lhs, Operand::Lit(3));
            }
        }
        assert!(saw_swap);
    }

    #[test]
    fn subtraction_is_never_commuted() {
        let t = tok();
        let seq = seq_of(vec![Step {
            lhs: Operand::Lit(5),
            op: Op::Sub,
            rhs: Operand::Lit(2),
            result: 3,
        }]);
        let mut r = rng::stream(9, 0);
        for _ in 0..50 {
            let v = semantic_variant(&t, &seq, &mut r).unwrap();
            assert_ne!(v.transform, Some(Transform::CommutativeSwap));
            assert_eq!(t.parse(&v.seq).unwrap().trace.steps[0].lhs, Operand::Lit(5));
        }
    }

    #[test]
    fn no_transform_returns_input_flagged() {
        // Full context, no commutative step, a single question token.
        let t = Tokenizer::new(Vocab::new(128, 8), 9);
        let seq = t
            .render(
                &[Vocab::BOS],
                &Trace::new(vec![Step {
                    lhs: Operand::Lit(5),
                    op: Op::Sub,
                    rhs: Operand::Lit(2),
                    result: 3,
                }]),
            )
            .unwrap();
        assert_eq!(seq.len(), 8);
        let t = Tokenizer::new(Vocab::new(128, 8), 8);
        let v = semantic_variant(&t, &seq, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(v.transform, None);
        assert_eq!(v.seq, seq);
    }

    #[test]
    fn reward_formula() {
        let cfg = EditorRewardConfig::default();
        assert!((cfg.reward(true, 2.0, 2) - (1.0 + 0.2 - 0.1)).abs() < 1e-15);
        assert!((cfg.reward(false, 0.0, 1) + 0.05).abs() < 1e-15);
    }
}
