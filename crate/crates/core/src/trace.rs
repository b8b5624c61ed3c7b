//! Trace data model, tokenization and operator identification.
//!
//! A trace is an ordered list of binary arithmetic steps. Operands are either
//! literals or references to an earlier step's result. Rendered, a step looks
//! like `@0 7 - 2 = 5 ;`: a reference is a `@k` marker followed by the value
//! it points at, so every step can be checked from its own tokens while the
//! dependency graph survives a render/parse round trip.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

    pub fn apply(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            Op::Add => lhs.saturating_add(rhs),
            Op::Sub => lhs.saturating_sub(rhs),
            Op::Mul => lhs.saturating_mul(rhs),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Op::Add => 0,
            Op::Sub => 1,
            Op::Mul => 2,
        }
    }

    pub fn from_index(i: usize) -> Op {
        Op::ALL[i]
    }

    /// The two operators this one can be swapped to.
    pub fn alternatives(self) -> [Op; 2] {
        match self {
            Op::Add => [Op::Sub, Op::Mul],
            Op::Sub => [Op::Add, Op::Mul],
            Op::Mul => [Op::Add, Op::Sub],
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Op::Add | Op::Mul)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Lit(i64),
    Ref(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub lhs: Operand,
    pub op: Op,
    pub rhs: Operand,
    pub result: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace {
    pub steps: Vec<Step>,
}

impl Trace {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks that the trace is non-empty and references only point backwards.
    pub fn check_structure(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::EmptyTrace);
        }
        for (i, step) in self.steps.iter().enumerate() {
            for operand in [step.lhs, step.rhs] {
                if let Operand::Ref(k) = operand {
                    if k >= i {
                        return Err(Error::Malformed(format!(
                            "step {i} references step {k}, which is not earlier"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Value of an operand using the stored results of earlier steps.
    pub fn stored_value(&self, operand: Operand) -> i64 {
        match operand {
            Operand::Lit(v) => v,
            Operand::Ref(k) => self.steps[k].result,
        }
    }

    /// Evaluates one step against the stored results it references.
    pub fn local_value(&self, index: usize) -> i64 {
        let step = &self.steps[index];
        step.op
            .apply(self.stored_value(step.lhs), self.stored_value(step.rhs))
    }

    /// Re-executes the trace from its literals, propagating recomputed values
    /// through references. Stored results are ignored.
    pub fn execute(&self) -> Result<Vec<i64>> {
        self.check_structure()?;
        let mut values = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let resolve = |o: Operand| match o {
                Operand::Lit(v) => v,
                Operand::Ref(k) => values[k],
            };
            let v = step.op.apply(resolve(step.lhs), resolve(step.rhs));
            values.push(v);
        }
        Ok(values)
    }

    /// Re-executed value of the final step reduced into `[0, modulus)`.
    pub fn execute_answer(&self, modulus: u32) -> Result<u32> {
        let values = self.execute()?;
        let last = *values.last().ok_or(Error::EmptyTrace)?;
        Ok(last.rem_euclid(modulus as i64) as u32)
    }
}

/// What a token id denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Pad,
    Bos,
    Sep,
    Eq,
    StepEnd,
    Mask,
    Op(Op),
    Filler(u32),
    Num(u32),
    Shortcut(u32),
    Ref(usize),
}

/// Closed token vocabulary: special symbols, operators, fillers, one atomic
/// token per number in the answer vocabulary, one `SHORTCUT(n)` token per
/// answer and one reference marker per step slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub answer_vocab: u32,
    pub max_steps: usize,
    pub fillers: u32,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const SEP: u32 = 2;
    pub const EQ: u32 = 3;
    pub const STEP_END: u32 = 4;
    pub const MASK: u32 = 5;
    const OP_BASE: u32 = 6;
    const FILLER_BASE: u32 = 9;

    pub fn new(answer_vocab: u32, max_steps: usize) -> Self {
        Self {
            answer_vocab,
            max_steps,
            fillers: 4,
        }
    }

    pub fn op(&self, op: Op) -> u32 {
        Self::OP_BASE + op.index() as u32
    }

    pub fn filler(&self, i: u32) -> u32 {
        debug_assert!(i < self.fillers);
        Self::FILLER_BASE + i
    }

    fn num_base(&self) -> u32 {
        Self::FILLER_BASE + self.fillers
    }

    pub fn num(&self, v: u32) -> u32 {
        debug_assert!(v < self.answer_vocab);
        self.num_base() + v
    }

    fn shortcut_base(&self) -> u32 {
        self.num_base() + self.answer_vocab
    }

    pub fn shortcut(&self, v: u32) -> u32 {
        self.shortcut_base() + v
    }

    fn ref_base(&self) -> u32 {
        self.shortcut_base() + self.answer_vocab
    }

    pub fn reference(&self, k: usize) -> u32 {
        debug_assert!(k < self.max_steps);
        self.ref_base() + k as u32
    }

    pub fn size(&self) -> usize {
        (self.ref_base() as usize) + self.max_steps
    }

    pub fn kind(&self, id: u32) -> Result<TokenKind> {
        let kind = match id {
            Self::PAD => TokenKind::Pad,
            Self::BOS => TokenKind::Bos,
            Self::SEP => TokenKind::Sep,
            Self::EQ => TokenKind::Eq,
            Self::STEP_END => TokenKind::StepEnd,
            Self::MASK => TokenKind::Mask,
            x if (Self::OP_BASE..Self::FILLER_BASE).contains(&x) => {
                TokenKind::Op(Op::from_index((x - Self::OP_BASE) as usize))
            }
            x if x < self.num_base() => TokenKind::Filler(x - Self::FILLER_BASE),
            x if x < self.shortcut_base() => TokenKind::Num(x - self.num_base()),
            x if x < self.ref_base() => TokenKind::Shortcut(x - self.shortcut_base()),
            x if (x as usize) < self.size() => TokenKind::Ref((x - self.ref_base()) as usize),
            x => return Err(Error::UnknownToken(x)),
        };
        Ok(kind)
    }

    pub fn op_of(&self, id: u32) -> Option<Op> {
        match self.kind(id) {
            Ok(TokenKind::Op(op)) => Some(op),
            _ => None,
        }
    }

    /// Token strings indexed by id.
    pub fn table(&self) -> Vec<String> {
        (0..self.size() as u32)
            .map(|id| match self.kind(id).expect("id in range") {
                TokenKind::Pad => "<pad>".to_string(),
                TokenKind::Bos => "<bos>".to_string(),
                TokenKind::Sep => "<sep>".to_string(),
                TokenKind::Eq => "=".to_string(),
                TokenKind::StepEnd => ";".to_string(),
                TokenKind::Mask => "<mask>".to_string(),
                TokenKind::Op(op) => op.symbol().to_string(),
                TokenKind::Filler(i) => format!("<f{i}>"),
                TokenKind::Num(v) => v.to_string(),
                TokenKind::Shortcut(v) => format!("SHORTCUT({v})"),
                TokenKind::Ref(k) => format!("@{k}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Question,
    Trace,
    Separator,
}

/// Structural role of a token inside its step; used by the model as a
/// positional signal and preserved when tokens are masked or edited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Role {
    Question = 0,
    Sep = 1,
    LhsRef = 2,
    Lhs = 3,
    Op = 4,
    RhsRef = 5,
    Rhs = 6,
    Eq = 7,
    Result = 8,
    StepEnd = 9,
}

impl Role {
    pub const COUNT: usize = 10;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub op_mask: Vec<bool>,
    pub segment: Vec<Segment>,
    pub role: Vec<Role>,
    /// 0 for question tokens, `i + 1` for tokens of step `i`.
    pub step: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn op_positions(&self) -> Vec<usize> {
        self.op_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn trace_positions(&self) -> Vec<usize> {
        self.segment
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == Segment::Trace).then_some(i))
            .collect()
    }

    /// Step index of the operator at `pos`, if `pos` is an operator.
    pub fn step_of(&self, pos: usize) -> Option<usize> {
        (self.op_mask.get(pos).copied() == Some(true)).then(|| self.step[pos] as usize - 1)
    }

    /// Copy with the given positions replaced by the mask token.
    pub fn masked(&self, positions: impl IntoIterator<Item = usize>) -> TokenSequence {
        let mut out = self.clone();
        for p in positions {
            out.tokens[p] = Vocab::MASK;
        }
        out
    }
}

/// Renders tasks into token sequences and parses them back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab: Vocab,
    pub context_limit: usize,
}

/// Question tokens and trace recovered from a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub question: Vec<u32>,
    pub trace: Trace,
}

struct Builder {
    seq: TokenSequence,
}

impl Builder {
    fn push(&mut self, token: u32, segment: Segment, role: Role, step: u8, is_op: bool) {
        self.seq.tokens.push(token);
        self.seq.segment.push(segment);
        self.seq.role.push(role);
        self.seq.step.push(step);
        self.seq.op_mask.push(is_op);
    }
}

impl Tokenizer {
    pub fn new(vocab: Vocab, context_limit: usize) -> Self {
        Self {
            vocab,
            context_limit,
        }
    }

    /// Renders `question ++ <sep> ++ steps`. The question is expected to start
    /// with `<bos>`; it is emitted verbatim.
    pub fn render(&self, question: &[u32], trace: &Trace) -> Result<TokenSequence> {
        trace.check_structure()?;
        if trace.len() > self.vocab.max_steps {
            return Err(Error::Malformed(format!(
                "{} steps exceed the vocabulary's {} step slots",
                trace.len(),
                self.vocab.max_steps
            )));
        }
        let mut b = Builder {
            seq: TokenSequence {
                tokens: Vec::new(),
                op_mask: Vec::new(),
                segment: Vec::new(),
                role: Vec::new(),
                step: Vec::new(),
            },
        };
        for &t in question {
            self.vocab.kind(t)?;
            b.push(t, Segment::Question, Role::Question, 0, false);
        }
        b.push(Vocab::SEP, Segment::Separator, Role::Sep, 0, false);
        for (i, step) in trace.steps.iter().enumerate() {
            let s = (i + 1) as u8;
            self.push_operand(&mut b, trace, step.lhs, s, Role::LhsRef, Role::Lhs)?;
            b.push(self.vocab.op(step.op), Segment::Trace, Role::Op, s, true);
            self.push_operand(&mut b, trace, step.rhs, s, Role::RhsRef, Role::Rhs)?;
            b.push(Vocab::EQ, Segment::Trace, Role::Eq, s, false);
            b.push(self.number(step.result)?, Segment::Trace, Role::Result, s, false);
            b.push(Vocab::STEP_END, Segment::Separator, Role::StepEnd, s, false);
        }
        let len = b.seq.len();
        if len > self.context_limit {
            return Err(Error::ContextOverflow {
                len,
                limit: self.context_limit,
            });
        }
        Ok(b.seq)
    }

    fn number(&self, v: i64) -> Result<u32> {
        if v < 0 || v >= self.vocab.answer_vocab as i64 {
            return Err(Error::Malformed(format!(
                "value {v} outside the vocabulary [0, {})",
                self.vocab.answer_vocab
            )));
        }
        Ok(self.vocab.num(v as u32))
    }

    fn push_operand(
        &self,
        b: &mut Builder,
        trace: &Trace,
        operand: Operand,
        s: u8,
        ref_role: Role,
        val_role: Role,
    ) -> Result<()> {
        if let Operand::Ref(k) = operand {
            b.push(self.vocab.reference(k), Segment::Trace, ref_role, s, false);
        }
        let value = trace.stored_value(operand);
        b.push(self.number(value)?, Segment::Trace, val_role, s, false);
        Ok(())
    }

    /// Inverse of [`Tokenizer::render`]. Rejects masked or inconsistent tokens.
    pub fn parse(&self, seq: &TokenSequence) -> Result<Parsed> {
        let toks = &seq.tokens;
        let sep = toks
            .iter()
            .position(|&t| t == Vocab::SEP)
            .ok_or_else(|| Error::Malformed("missing question separator".into()))?;
        let question = toks[..sep].to_vec();
        let mut steps: Vec<Step> = Vec::new();
        let mut i = sep + 1;
        let malformed = |msg: String| Error::Malformed(msg);
        while i < toks.len() {
            let (lhs, next) = self.parse_operand(toks, i, &steps)?;
            i = next;
            let op = toks
                .get(i)
                .and_then(|&t| self.vocab.op_of(t))
                .ok_or_else(|| malformed(format!("expected operator at token {i}")))?;
            let (rhs, next) = self.parse_operand(toks, i + 1, &steps)?;
            i = next;
            if toks.get(i) != Some(&Vocab::EQ) {
                return Err(malformed(format!("expected '=' at token {i}")));
            }
            let result = match toks.get(i + 1).map(|&t| self.vocab.kind(t)) {
                Some(Ok(TokenKind::Num(v))) => v as i64,
                _ => return Err(malformed(format!("expected result at token {}", i + 1))),
            };
            if toks.get(i + 2) != Some(&Vocab::STEP_END) {
                return Err(malformed(format!("expected ';' at token {}", i + 2)));
            }
            i += 3;
            steps.push(Step {
                lhs,
                op,
                rhs,
                result,
            });
        }
        let trace = Trace::new(steps);
        trace.check_structure()?;
        Ok(Parsed { question, trace })
    }

    fn parse_operand(&self, toks: &[u32], i: usize, steps: &[Step]) -> Result<(Operand, usize)> {
        let kind = toks
            .get(i)
            .map(|&t| self.vocab.kind(t))
            .transpose()?
            .ok_or_else(|| Error::Malformed(format!("truncated operand at token {i}")))?;
        match kind {
            TokenKind::Num(v) => Ok((Operand::Lit(v as i64), i + 1)),
            TokenKind::Ref(k) => {
                let target = steps.get(k).ok_or_else(|| {
                    Error::Malformed(format!("reference @{k} at token {i} points forward"))
                })?;
                match toks.get(i + 1).map(|&t| self.vocab.kind(t)) {
                    Some(Ok(TokenKind::Num(v))) if v as i64 == target.result => {
                        Ok((Operand::Ref(k), i + 2))
                    }
                    _ => Err(Error::Malformed(format!(
                        "reference @{k} at token {i} is not followed by its value"
                    ))),
                }
            }
            other => Err(Error::Malformed(format!(
                "unexpected {other:?} at token {i} where an operand belongs"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorNoiseConfig {
    pub noise_rate: f64,
    pub seed: u64,
}

impl OperatorNoiseConfig {
    pub fn exact() -> Self {
        Self {
            noise_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "operator noise rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

/// Simulated operator identification. Each true causal position fills one
/// slot; with probability `noise_rate` the slot is instead a uniformly random
/// non-causal operator position, or, when the trace has none, a random
/// non-operator trace token.
pub fn identify_operators<R: Rng + ?Sized>(
    seq: &TokenSequence,
    truth: &BTreeSet<usize>,
    noise: &OperatorNoiseConfig,
    rng: &mut R,
) -> BTreeSet<usize> {
    let rate = noise.noise_rate.clamp(0.0, 1.0);
    let non_causal_ops: Vec<usize> = seq
        .op_positions()
        .into_iter()
        .filter(|p| !truth.contains(p))
        .collect();
    let pool: Vec<usize> = if non_causal_ops.is_empty() {
        seq.trace_positions()
            .into_iter()
            .filter(|&p| !seq.op_mask[p] && !truth.contains(&p))
            .collect()
    } else {
        non_causal_ops
    };
    let mut out = BTreeSet::new();
    for &pos in truth {
        if rate > 0.0 && !pool.is_empty() && rng.gen_bool(rate) {
            out.insert(*pool.choose(rng).expect("pool is non-empty"));
        } else {
            out.insert(pos);
        }
    }
    out
}

/// The `ceil(k_ratio * |ops|)` operator positions with the highest indices.
pub fn last_k_op_subset(seq: &TokenSequence, k_ratio: f64) -> Result<BTreeSet<usize>> {
    if !(k_ratio > 0.0 && k_ratio <= 1.0) {
        return Err(Error::Config(format!("k_ratio {k_ratio} outside (0, 1]")));
    }
    let ops = seq.op_positions();
    if ops.is_empty() {
        return Ok(BTreeSet::new());
    }
    // Guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4.
    let k = ((k_ratio * ops.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(ops[ops.len() - k.min(ops.len())..].iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tok() -> Tokenizer {
        Tokenizer::new(Vocab::new(128, 8), 96)
    }

    fn chain() -> Trace {
        Trace::new(vec![
            Step {
                lhs: Operand::Lit(4),
                op: Op::Add,
                rhs: Operand::Lit(3),
                result: 7,
            },
            Step {
                lhs: Operand::Ref(0),
                op: Op::Sub,
                rhs: Operand::Lit(2),
                result: 5,
            },
            Step {
                lhs: Operand::Ref(1),
                op: Op::Add,
                rhs: Operand::Lit(1),
                result: 6,
            },
        ])
    }

    #[test]
    fn single_step_renders_with_one_operator() {
        let t = tok();
        let trace = Trace::new(vec![chain().steps[0].clone()]);
        let seq = t.render(&[Vocab::BOS], &trace).unwrap();
        let v = t.vocab;
        assert_eq!(
            seq.tokens,
            vec![Vocab::BOS, Vocab::SEP, v.num(4), v.op(Op::Add), v.num(3), Vocab::EQ, v.num(7), Vocab::STEP_END]
        );
        assert_eq!(seq.op_positions(), vec![3]);
    }

    #[test]
    fn round_trip_and_op_mask_cardinality() {
        let t = tok();
        let trace = chain();
        let seq = t.render(&[Vocab::BOS, t.vocab.filler(1)], &trace).unwrap();
        assert_eq!(seq.op_positions().len(), trace.len());
        let parsed = t.parse(&seq).unwrap();
        assert_eq!(parsed.trace, trace);
        assert_eq!(parsed.question, vec![Vocab::BOS, t.vocab.filler(1)]);
        assert_eq!(trace.execute().unwrap(), vec![7, 5, 6]);
    }

    #[test]
    fn empty_trace_is_rejected() {
        assert!(matches!(
            tok().render(&[Vocab::BOS], &Trace::default()),
            Err(Error::EmptyTrace)
        ));
    }

    #[test]
    fn context_overflow_names_the_limit() {
        let t = Tokenizer::new(Vocab::new(128, 8), 10);
        match t.render(&[Vocab::BOS], &chain()) {
            Err(Error::ContextOverflow { limit, .. }) => assert_eq!(limit, 10),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn forward_reference_is_malformed() {
        let mut trace = chain();
        trace.steps[0].lhs = Operand::Ref(2);
        assert!(matches!(trace.check_structure(), Err(Error::Malformed(_))));
    }

    #[test]
    fn masked_sequences_do_not_parse() {
        let t = tok();
        let seq = t.render(&[Vocab::BOS], &chain()).unwrap();
        let op = seq.op_positions()[1];
        assert!(t.parse(&seq.masked([op])).is_err());
    }

    #[test]
    fn vocab_table_covers_every_id() {
        let v = Vocab::new(16, 4);
        let table = v.table();
        assert_eq!(table.len(), v.size());
        assert_eq!(table[v.num(12) as usize], "12");
        assert_eq!(table[v.shortcut(3) as usize], "SHORTCUT(3)");
        assert!(matches!(v.kind(v.size() as u32), Err(Error::UnknownToken(_))));
    }

    fn seq_with_ops(n: usize) -> TokenSequence {
        let mut steps = vec![Step {
            lhs: Operand::Lit(1),
            op: Op::Add,
            rhs: Operand::Lit(1),
            result: 2,
        }];
        for i in 1..n {
            steps.push(Step {
                lhs: Operand::Ref(i - 1),
                op: Op::Add,
                rhs: Operand::Lit(1),
                result: 2 + i as i64,
            });
        }
        Tokenizer::new(Vocab::new(128, 16), 256)
            .render(&[Vocab::BOS], &Trace::new(steps))
            .unwrap()
    }

    #[test]
    fn last_k_takes_highest_operator_positions() {
        let seq = seq_with_ops(10);
        let ops = seq.op_positions();
        let last3: BTreeSet<usize> = ops[7..].iter().copied().collect();
        assert_eq!(last_k_op_subset(&seq, 0.3).unwrap(), last3);
        assert_eq!(
            last_k_op_subset(&seq, 1.0).unwrap(),
            ops.iter().copied().collect()
        );
        let one = seq_with_ops(1);
        assert_eq!(
            last_k_op_subset(&one, 0.3).unwrap().into_iter().collect::<Vec<_>>(),
            one.op_positions()
        );
        assert!(last_k_op_subset(&seq, 0.0).is_err());
    }

    #[test]
    fn identification_noise_extremes() {
        let seq = seq_with_ops(4);
        let ops = seq.op_positions();
        let truth: BTreeSet<usize> = ops[2..].iter().copied().collect();
        let mut r = rng::stream(1, 0);
        let exact = OperatorNoiseConfig::exact();
        for _ in 0..100 {
            assert!(identify_operators(&seq, &truth, &exact, &mut r).is_subset(&truth));
        }
        let full = OperatorNoiseConfig {
            noise_rate: 1.0,
            seed: 0,
        };
        for _ in 0..100 {
            let got = identify_operators(&seq, &truth, &full, &mut r);
            assert!(got.is_disjoint(&truth));
            assert!(got.iter().all(|p| ops[..2].contains(p)));
        }
    }

    #[test]
    fn identification_contamination_matches_rate() {
        // One causal slot per draw, so contamination per draw is Bernoulli(rho).
        let seq = seq_with_ops(3);
        let truth: BTreeSet<usize> = [seq.op_positions()[2]].into_iter().collect();
        let noise = OperatorNoiseConfig {
            noise_rate: 0.2,
            seed: 0,
        };
        let mut r = rng::stream(11, 0);
        let n = 10_000;
        let contaminated = (0..n)
            .filter(|_| identify_operators(&seq, &truth, &noise, &mut r).is_disjoint(&truth))
            .count();
        let rate = contaminated as f64 / n as f64;
        assert!((rate - 0.2).abs() <= 0.02, "contamination {rate}");
    }
}
