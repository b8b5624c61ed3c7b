//! Synthetic multi-step arithmetic tasks with known causal structure.
//!
//! Every task is rejection-sampled so that all stored values fit the answer
//! vocabulary and every single operator swap breaks its step. For causal
//! steps a swap must also change the re-executed answer (modulo the
//! vocabulary size); tasks where some swap is arithmetically coincident are
//! discarded, which makes "causal edit changes the answer" exact ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng;
use crate::trace::{Op, Operand, Step, TokenSequence, Tokenizer, Trace, Vocab};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureKind {
    LinearChain,
    Tree,
    DagWithConfounders,
}

impl StructureKind {
    pub const ALL: [StructureKind; 3] = [
        StructureKind::LinearChain,
        StructureKind::Tree,
        StructureKind::DagWithConfounders,
    ];

    /// Fewest steps the structure can be built with.
    pub fn min_steps(self) -> usize {
        match self {
            StructureKind::LinearChain => 1,
            StructureKind::Tree => 3,
            StructureKind::DagWithConfounders => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StructureKind::LinearChain => "LinearChain",
            StructureKind::Tree => "Tree",
            StructureKind::DagWithConfounders => "DagWithConfounders",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalStructure {
    pub kind: StructureKind,
    pub num_steps: usize,
    /// `(producer, consumer)` step pairs.
    pub edges: Vec<(usize, usize)>,
    pub answer_step: usize,
}

impl CausalStructure {
    fn from_trace(kind: StructureKind, trace: &Trace) -> Self {
        let mut edges = Vec::new();
        for (i, step) in trace.steps.iter().enumerate() {
            for operand in [step.lhs, step.rhs] {
                if let Operand::Ref(k) = operand {
                    edges.push((k, i));
                }
            }
        }
        Self {
            kind,
            num_steps: trace.len(),
            edges,
            answer_step: trace.len() - 1,
        }
    }

    /// `true` for steps with a directed path to the answer step (inclusive).
    pub fn causal_steps(&self) -> Vec<bool> {
        let mut causal = vec![false; self.num_steps];
        causal[self.answer_step] = true;
        // Edges always point forward, so one backward sweep suffices.
        for consumer in (0..self.num_steps).rev() {
            if !causal[consumer] {
                continue;
            }
            for &(p, c) in &self.edges {
                if c == consumer {
                    causal[p] = true;
                }
            }
        }
        causal
    }

    pub fn confounders(&self) -> Vec<usize> {
        self.causal_steps()
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (!c).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTask {
    #[serde(rename = "question_tokens")]
    pub question: Vec<u32>,
    #[serde(rename = "trace_steps")]
    pub trace: Trace,
    pub answer: u32,
    pub structure: CausalStructure,
    pub causal_op_positions: BTreeSet<usize>,
    #[serde(rename = "shortcut")]
    pub shortcut_token_present: bool,
}

impl ReasoningTask {
    pub fn render(&self, tokenizer: &Tokenizer) -> Result<TokenSequence> {
        tokenizer.render(&self.question, &self.trace)
    }

    /// Operator positions of confounder steps in the rendered sequence.
    pub fn confounder_op_positions(&self, seq: &TokenSequence) -> BTreeSet<usize> {
        seq.op_positions()
            .into_iter()
            .filter(|p| !self.causal_op_positions.contains(p))
            .collect()
    }

    /// Token positions of every step on a causal path, operators included.
    pub fn causal_step_positions(&self, seq: &TokenSequence) -> BTreeSet<usize> {
        let causal = self.structure.causal_steps();
        seq.trace_positions()
            .into_iter()
            .filter(|&p| causal[seq.step[p] as usize - 1])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    pub fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        rng.gen_range(self.lo..=self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureMix {
    pub linear_chain: f64,
    pub tree: f64,
    pub dag_with_confounders: f64,
}

impl StructureMix {
    pub fn only(kind: StructureKind) -> Self {
        let mut mix = Self {
            linear_chain: 0.0,
            tree: 0.0,
            dag_with_confounders: 0.0,
        };
        match kind {
            StructureKind::LinearChain => mix.linear_chain = 1.0,
            StructureKind::Tree => mix.tree = 1.0,
            StructureKind::DagWithConfounders => mix.dag_with_confounders = 1.0,
        }
        mix
    }

    fn weight(&self, kind: StructureKind) -> f64 {
        match kind {
            StructureKind::LinearChain => self.linear_chain,
            StructureKind::Tree => self.tree,
            StructureKind::DagWithConfounders => self.dag_with_confounders,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub operand_range: Interval,
    pub answer_vocab_size: u32,
    pub num_steps_range: Interval,
    pub structure_mix: StructureMix,
    pub shortcut_rate: f64,
    /// Non-semantic filler tokens placed in each question.
    pub filler_range: Interval,
    pub max_retries: usize,
    pub context_limit: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            operand_range: Interval::new(1, 9),
            answer_vocab_size: 128,
            num_steps_range: Interval::new(3, 5),
            structure_mix: StructureMix::only(StructureKind::LinearChain),
            shortcut_rate: 0.0,
            filler_range: Interval::new(1, 2),
            max_retries: 100,
            context_limit: 96,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.operand_range.lo < 0 || self.operand_range.lo > self.operand_range.hi {
            return bad(format!("bad operand range {:?}", self.operand_range));
        }
        if self.answer_vocab_size < 2 || self.operand_range.hi >= self.answer_vocab_size as i64 {
            return bad("answer vocabulary must exceed the operand range".into());
        }
        if self.num_steps_range.lo < 1 || self.num_steps_range.lo > self.num_steps_range.hi {
            return bad(format!("bad step range {:?}", self.num_steps_range));
        }
        if !(0.0..=1.0).contains(&self.shortcut_rate) {
            return bad(format!("shortcut rate {} outside [0, 1]", self.shortcut_rate));
        }
        if self.filler_range.lo < 0 || self.filler_range.lo > self.filler_range.hi {
            return bad(format!("bad filler range {:?}", self.filler_range));
        }
        let mut total = 0.0;
        for kind in StructureKind::ALL {
            let w = self.structure_mix.weight(kind);
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("bad weight {w} for {}", kind.name()));
            }
            if w > 0.0 && (self.num_steps_range.hi as usize) < kind.min_steps() {
                return bad(format!(
                    "{} needs at least {} steps",
                    kind.name(),
                    kind.min_steps()
                ));
            }
            total += w;
        }
        if total <= 0.0 {
            return bad("structure mix has no positive weight".into());
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.answer_vocab_size, self.num_steps_range.hi as usize)
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab(), self.context_limit)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sample_kind<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> StructureKind {
    let total: f64 = StructureKind::ALL
        .iter()
        .map(|&k| cfg.structure_mix.weight(k))
        .sum();
    let mut x = rng.gen::<f64>() * total;
    for kind in StructureKind::ALL {
        let w = cfg.structure_mix.weight(kind);
        if x < w {
            return kind;
        }
        x -= w;
    }
    StructureKind::ALL
        .into_iter()
        .rev()
        .find(|&k| cfg.structure_mix.weight(k) > 0.0)
        .expect("validated mix")
}

fn random_op<R: Rng + ?Sized>(rng: &mut R) -> Op {
    Op::ALL[rng.gen_range(0..3)]
}

/// Draws the operand wiring of a trace; results are filled in afterwards.
fn skeleton<R: Rng + ?Sized>(
    kind: StructureKind,
    n: usize,
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> Vec<(Operand, Op, Operand)> {
    let lit = |rng: &mut R| Operand::Lit(cfg.operand_range.sample(rng));
    let mut steps = Vec::with_capacity(n);
    match kind {
        StructureKind::LinearChain => {
            for i in 0..n {
                let lhs = if i == 0 { lit(rng) } else { Operand::Ref(i - 1) };
                steps.push((lhs, random_op(rng), lit(rng)));
            }
        }
        StructureKind::Tree => {
            // Two chains merged by a final combining step.
            let left = rng.gen_range(1..=n - 2);
            let right = n - 1 - left;
            for (start, len) in [(0, left), (left, right)] {
                for j in 0..len {
                    let lhs = if j == 0 {
                        lit(rng)
                    } else {
                        Operand::Ref(start + j - 1)
                    };
                    steps.push((lhs, random_op(rng), lit(rng)));
                }
            }
            steps.push((Operand::Ref(left - 1), random_op(rng), Operand::Ref(n - 2)));
        }
        StructureKind::DagWithConfounders => {
            let max_conf = (n / 3).max(1).min(n - 1);
            let n_conf = rng.gen_range(1..=max_conf);
            let mut slots: Vec<usize> = (0..n - 1).collect();
            slots.shuffle(rng);
            let confounders: BTreeSet<usize> = slots[..n_conf].iter().copied().collect();
            let mut prev_causal: Option<usize> = None;
            for i in 0..n {
                if confounders.contains(&i) {
                    let lhs = if i > 0 && rng.gen_bool(0.5) {
                        Operand::Ref(rng.gen_range(0..i))
                    } else {
                        lit(rng)
                    };
                    steps.push((lhs, random_op(rng), lit(rng)));
                } else {
                    let lhs = prev_causal.map(Operand::Ref).unwrap_or_else(|| lit(rng));
                    steps.push((lhs, random_op(rng), lit(rng)));
                    prev_causal = Some(i);
                }
            }
        }
    }
    steps
}

/// Why a candidate trace was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reject {
    OutOfRange,
    Coincident,
}

fn fill_results(
    wiring: &[(Operand, Op, Operand)],
    vocab: u32,
) -> std::result::Result<Trace, Reject> {
    let mut trace = Trace::new(Vec::with_capacity(wiring.len()));
    for &(lhs, op, rhs) in wiring {
        for operand in [lhs, rhs] {
            if let Operand::Lit(v) = operand {
                if v < 0 || v >= vocab as i64 {
                    return Err(Reject::OutOfRange);
                }
            }
        }
        let result = op.apply(trace.stored_value(lhs), trace.stored_value(rhs));
        if result < 0 || result >= vocab as i64 {
            return Err(Reject::OutOfRange);
        }
        trace.steps.push(Step {
            lhs,
            op,
            rhs,
            result,
        });
    }
    Ok(trace)
}

fn check_coincidence(
    trace: &Trace,
    causal: &[bool],
    vocab: u32,
) -> std::result::Result<(), Reject> {
    let answer = trace.steps.last().expect("non-empty").result;
    for i in 0..trace.len() {
        for alt in trace.steps[i].op.alternatives() {
            let mut edited = trace.clone();
            edited.steps[i].op = alt;
            if edited.local_value(i) == trace.steps[i].result {
                return Err(Reject::Coincident);
            }
            if causal[i] {
                let flipped = edited.execute_answer(vocab).map_err(|_| Reject::Coincident)?;
                if flipped as i64 == answer {
                    return Err(Reject::Coincident);
                }
            }
        }
    }
    Ok(())
}

fn question<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    vocab: &Vocab,
    answer: u32,
    shortcut: bool,
    rng: &mut R,
) -> Vec<u32> {
    let n_fill = cfg.filler_range.sample(rng) as usize;
    let mut body: Vec<u32> = (0..n_fill)
        .map(|_| vocab.filler(rng.gen_range(0..vocab.fillers)))
        .collect();
    if shortcut {
        let at = rng.gen_range(0..=body.len());
        body.insert(at, vocab.shortcut(answer));
    }
    let mut q = Vec::with_capacity(body.len() + 1);
    q.push(Vocab::BOS);
    q.extend(body);
    q
}

/// Generates one task from an explicit random stream.
pub fn generate_task<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Result<ReasoningTask> {
    cfg.validate()?;
    let kind = sample_kind(cfg, rng);
    let lo = (cfg.num_steps_range.lo as usize).max(kind.min_steps());
    let hi = cfg.num_steps_range.hi as usize;
    let vocab = cfg.vocab();
    let tokenizer = cfg.tokenizer();
    let mut last = Reject::OutOfRange;
    for _ in 0..cfg.max_retries.max(1) {
        let n = rng.gen_range(lo..=hi);
        let wiring = skeleton(kind, n, cfg, rng);
        let trace = match fill_results(&wiring, cfg.answer_vocab_size) {
            Ok(t) => t,
            Err(r) => {
                last = r;
                continue;
            }
        };
        let structure = CausalStructure::from_trace(kind, &trace);
        let causal = structure.causal_steps();
        if let Err(r) = check_coincidence(&trace, &causal, cfg.answer_vocab_size) {
            last = r;
            continue;
        }
        let answer = trace.steps[structure.answer_step].result as u32;
        let shortcut = cfg.shortcut_rate > 0.0 && rng.gen_bool(cfg.shortcut_rate);
        let question = question(cfg, &vocab, answer, shortcut, rng);
        let seq = tokenizer.render(&question, &trace)?;
        let causal_op_positions = seq
            .op_positions()
            .into_iter()
            .filter(|&p| causal[seq.step[p] as usize - 1])
            .collect();
        return Ok(ReasoningTask {
            question,
            trace,
            answer,
            structure,
            causal_op_positions,
            shortcut_token_present: shortcut,
        });
    }
    Err(Error::Generation {
        attempts: cfg.max_retries.max(1),
        reason: format!(
            "last rejection: {} ({} with {}..={} steps, operands {}..={}, vocabulary {})",
            match last {
                Reject::OutOfRange => "value outside the answer vocabulary",
                Reject::Coincident => "operator swap coincides with the original",
            },
            kind.name(),
            lo,
            hi,
            cfg.operand_range.lo,
            cfg.operand_range.hi,
            cfg.answer_vocab_size
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub config_hash: String,
    pub structure_counts: BTreeMap<String, usize>,
    pub shortcut_count: usize,
    pub answer_vocab_size: u32,
    pub context_limit: usize,
    pub vocabulary: Vec<String>,
    /// SHA-256 of the JSON-lines encoding.
    pub dataset_hash: String,
    pub config: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<ReasoningTask>,
    pub manifest: Manifest,
}

/// Task `i` is drawn from stream `i` of the configured seed, so the result is
/// independent of how the work is scheduled.
pub fn generate_dataset(cfg: &GeneratorConfig, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("requested dataset"));
    }
    cfg.validate()?;
    let tasks: Vec<ReasoningTask> = par::map_range(n, |i| {
        let mut r = rng::stream(cfg.seed, i as u64);
        generate_task(cfg, &mut r)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let manifest = manifest_for(cfg, &tasks)?;
    Ok(Dataset { tasks, manifest })
}

fn manifest_for(cfg: &GeneratorConfig, tasks: &[ReasoningTask]) -> Result<Manifest> {
    let mut structure_counts = BTreeMap::new();
    for kind in StructureKind::ALL {
        structure_counts.insert(kind.name().to_string(), 0);
    }
    for t in tasks {
        *structure_counts
            .get_mut(t.structure.kind.name())
            .expect("all kinds present") += 1;
    }
    Ok(Manifest {
        seed: cfg.seed,
        count: tasks.len(),
        config_hash: cfg.hash(),
        structure_counts,
        shortcut_count: tasks.iter().filter(|t| t.shortcut_token_present).count(),
        answer_vocab_size: cfg.answer_vocab_size,
        context_limit: cfg.context_limit,
        vocabulary: cfg.vocab().table(),
        dataset_hash: hex(&Sha256::digest(to_jsonl(tasks)?)),
        config: cfg.clone(),
    })
}

pub fn to_jsonl(tasks: &[ReasoningTask]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for t in tasks {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    Ok(out)
}

impl Dataset {
    pub fn tokenizer(&self) -> Tokenizer {
        self.manifest.config.tokenizer()
    }

    /// Writes `<stem>.jsonl` and `<stem>.manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?);
        w.write_all(&to_jsonl(&self.tasks)?)?;
        w.flush()?;
        let m = File::create(dir.join(format!("{stem}.manifest.json")))?;
        serde_json::to_writer_pretty(m, &self.manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Dataset> {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(
            dir.join(format!("{stem}.manifest.json")),
        )?))?;
        let reader = BufReader::new(File::open(dir.join(format!("{stem}.jsonl")))?);
        let mut tasks = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                tasks.push(serde_json::from_str(&line)?);
            }
        }
        if tasks.len() != manifest.count {
            return Err(Error::Malformed(format!(
                "manifest lists {} tasks, file has {}",
                manifest.count,
                tasks.len()
            )));
        }
        Ok(Dataset { tasks, manifest })
    }
}
