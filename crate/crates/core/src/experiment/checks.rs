//! Theory checks: noisy-verifier identity, probe dominance, shortcut
//! prevention and the editor ablation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{CellCache, CellResult, CheckLine, CheckStatus, LabConfig, Stats};
use crate::intervene::{
    editor_propose, propose_invalidating, random_swap, EditDepth, EditPolicyKind, EditorPolicy,
};
use crate::metrics::{evaluate, EditTarget, EvalConfig, ExampleRecord, TrainedModel};
use crate::model::{forward, ModelParams};
use crate::taskgen::{generate_dataset, GeneratorConfig, ReasoningTask, StructureKind, StructureMix};
use crate::trace::Tokenizer;
use crate::train::{divergence, edit_candidates, TrainConfig, DIVERGENCE_CLIP};
use crate::verifier::{NoisyVerifierConfig, Verifier};
use crate::{par, rng, Error, Result};

const LABEL_STREAM_LOSS: u64 = 0x4C05;
const LABEL_STREAM_RATE: u64 = 0x0A7E;
const LABEL_BOOTSTRAP: u64 = 0xB007;
const LABEL_DOMINANCE_DATA: u64 = 0xD0D0;
const LABEL_PROPOSALS: u64 = 0x9A11;
/// Accepted samples below which the identity tolerance is widened.
const MIN_ACCEPTED: usize = 30;

// ---------------------------------------------------------------- noisy verifier

/// Statistics of one flip-rate cell of the noisy-verifier identity
/// `E[L_CSR] = q · μ_A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyVerifierStats {
    pub flip_invalid_rate: f64,
    pub n: usize,
    /// Acceptance rate `q̂` of the gate.
    pub q_hat: f64,
    pub q_se: f64,
    /// Mean divergence over accepted edits.
    pub mu_a: f64,
    pub mu_a_se: f64,
    /// Mean divergence over edits the exact verifier accepts.
    pub mu_star: f64,
    pub mu_star_se: f64,
    /// `μ̂_⋆ − μ̂_A`.
    pub delta: f64,
    /// Mean per-example CSR loss (zero when the gate rejects), pre-weighting.
    pub expected_l_csr: f64,
    pub expected_l_csr_se: f64,
    pub product: f64,
    pub combined_se: f64,
    /// Standard errors the gap is allowed.
    pub tolerance_se: f64,
    pub within_tolerance: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyVerifierReport {
    pub cells: Vec<NoisyVerifierStats>,
    pub q_monotone: bool,
    pub status: CheckStatus,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let s = Stats::of(xs);
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    (s.mean, s.sd / (xs.len() as f64).sqrt())
}

/// One sampled edit: `None` when no invalidating edit exists, otherwise the
/// gate verdict and the clipped divergence between the two answer
/// distributions.
fn sample_edit(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    task: &ReasoningTask,
    cfg: &TrainConfig,
    verifier: &Verifier,
    rng: &mut rng::Rng,
) -> Result<Option<(bool, f64)>> {
    let seq = task.render(tokenizer)?;
    let candidates = edit_candidates(&seq, task, cfg, rng)?;
    let policy = match cfg.edit_policy {
        EditPolicyKind::LearnedEditor => EditPolicyKind::RandomSwap,
        k => k,
    };
    let cf = match propose_invalidating(
        tokenizer,
        &seq,
        &candidates,
        policy,
        cfg.edit_depth,
        None,
        EditDepth::Fixed(cfg.edit_depth),
        rng,
    ) {
        Ok(cf) => cf,
        Err(Error::NoEditPossible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let accepted = verifier.gate(&task.trace, &cf.trace, rng)?;
    let p = forward(params, &seq, cfg.answer_temperature)?;
    let q = forward(params, &cf.seq, cfg.answer_temperature)?;
    Ok(Some((accepted, divergence(&p, &q, cfg.divergence).min(DIVERGENCE_CLIP))))
}

/// Checks `E[L_CSR] = q̂ · μ̂_A` per flip rate. The left side comes from one
/// Monte Carlo stream and `(q̂, μ̂_A)` from an independent one, so the
/// comparison is not an algebraic identity of a single sample.
pub fn check_noisy_verifier(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    tasks: &[ReasoningTask],
    cfg: &TrainConfig,
    rates: &[f64],
    n: usize,
    seed: u64,
) -> Result<NoisyVerifierReport> {
    if tasks.is_empty() || n == 0 || rates.is_empty() {
        return Err(Error::Config("noisy-verifier check needs tasks, samples and rates".into()));
    }
    let mut cells = Vec::with_capacity(rates.len());
    for (ci, &rate) in rates.iter().enumerate() {
        let verifier = Verifier::Noisy(NoisyVerifierConfig {
            flip_valid_rate: 0.0,
            flip_invalid_rate: rate,
            seed,
        });
        verifier_validate(&verifier)?;
        let draw = |label: u64| -> Result<Vec<Option<(bool, f64)>>> {
            par::map_range(n, |i| {
                let mut r = rng::stream(rng::derive(seed, label ^ ci as u64), i as u64);
                sample_edit(params, tokenizer, &tasks[i % tasks.len()], cfg, &verifier, &mut r)
            })
            .into_iter()
            .collect()
        };
        let loss_stream = draw(LABEL_STREAM_LOSS)?;
        let rate_stream = draw(LABEL_STREAM_RATE)?;

        let losses: Vec<f64> = loss_stream
            .iter()
            .map(|s| match s {
                Some((true, d)) => *d,
                _ => 0.0,
            })
            .collect();
        let accepted: Vec<f64> = rate_stream
            .iter()
            .filter_map(|s| s.filter(|(a, _)| *a).map(|(_, d)| d))
            .collect();
        let exact: Vec<f64> = rate_stream.iter().filter_map(|s| s.map(|(_, d)| d)).collect();

        let (el, el_se) = mean_se(&losses);
        let q = accepted.len() as f64 / n as f64;
        let q_se = (q * (1.0 - q) / n as f64).sqrt();
        let (mu_a, mu_a_se) = mean_se(&accepted);
        let (mu_star, mu_star_se) = mean_se(&exact);
        let product = q * mu_a;
        // Delta method for the product, plus the independent left side.
        let combined_se = (el_se.powi(2) + (mu_a * q_se).powi(2) + (q * mu_a_se).powi(2)).sqrt();
        let (tolerance_se, warning) = if accepted.len() < MIN_ACCEPTED {
            (
                3.0,
                Some(format!(
                    "only {} accepted samples; tolerance widened to 3 SE",
                    accepted.len()
                )),
            )
        } else {
            (2.0, None)
        };
        cells.push(NoisyVerifierStats {
            flip_invalid_rate: rate,
            n,
            q_hat: q,
            q_se,
            mu_a,
            mu_a_se,
            mu_star,
            mu_star_se,
            delta: mu_star - mu_a,
            expected_l_csr: el,
            expected_l_csr_se: el_se,
            product,
            combined_se,
            tolerance_se,
            within_tolerance: (el - product).abs() <= tolerance_se * combined_se,
            warning,
        });
    }
    let mut by_rate: Vec<&NoisyVerifierStats> = cells.iter().collect();
    by_rate.sort_by(|a, b| a.flip_invalid_rate.total_cmp(&b.flip_invalid_rate));
    let q_monotone = by_rate.windows(2).all(|w| w[1].q_hat < w[0].q_hat);
    let pass = q_monotone && cells.iter().all(|c| c.within_tolerance);
    Ok(NoisyVerifierReport {
        cells,
        q_monotone,
        status: CheckStatus::from_bool(pass),
    })
}

fn verifier_validate(v: &Verifier) -> Result<()> {
    match v {
        Verifier::Exact => Ok(()),
        Verifier::Noisy(c) => c.validate(),
    }
}

impl NoisyVerifierReport {
    pub fn lines(&self) -> Vec<CheckLine> {
        let mut out: Vec<CheckLine> = self
            .cells
            .iter()
            .map(|c| {
                CheckLine::new(
                    format!("noisy-verifier rate={}", c.flip_invalid_rate),
                    CheckStatus::from_bool(c.within_tolerance),
                    format!(
                        "E[L]={:.4} q·μ_A={:.4} (q={:.4} μ_A={:.4}) gap={:.2e} tol={}·{:.2e}",
                        c.expected_l_csr,
                        c.product,
                        c.q_hat,
                        c.mu_a,
                        (c.expected_l_csr - c.product).abs(),
                        c.tolerance_se,
                        c.combined_se
                    ),
                )
            })
            .collect();
        out.push(CheckLine::new(
            "noisy-verifier q monotone",
            CheckStatus::from_bool(self.q_monotone),
            self.cells
                .iter()
                .map(|c| format!("{}:{:.4}", c.flip_invalid_rate, c.q_hat))
                .collect::<Vec<_>>()
                .join(" "),
        ));
        out
    }
}

// ---------------------------------------------------------------- dominance

/// Mean with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval95 {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap of the mean of each column, resampling rows jointly.
pub fn bootstrap_means(columns: &[&[f64]], resamples: usize, seed: u64) -> Vec<Interval95> {
    let n = columns.first().map_or(0, |c| c.len());
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); columns.len()];
    let mut r = rng::stream(rng::derive(seed, LABEL_BOOTSTRAP), 0);
    for _ in 0..resamples {
        let mut sums = vec![0.0; columns.len()];
        for _ in 0..n {
            let i = r.gen_range(0..n);
            for (s, c) in sums.iter_mut().zip(columns) {
                *s += c[i];
            }
        }
        for (d, s) in draws.iter_mut().zip(sums) {
            d.push(s / n as f64);
        }
    }
    columns
        .iter()
        .zip(draws)
        .map(|(c, mut d)| {
            d.sort_by(f64::total_cmp);
            let at = |q: f64| d[((q * resamples as f64) as usize).min(resamples - 1)];
            Interval95 {
                mean: c.iter().sum::<f64>() / n.max(1) as f64,
                lo: at(0.025),
                hi: at(0.975),
            }
        })
        .collect()
}

/// Probe means of one evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub label: String,
    pub n: usize,
    pub accuracy: f64,
    pub cs: Interval95,
    pub comp: Interval95,
    pub suff: Interval95,
    /// Paired differences `CS − COMP` and `CS − SUFF`.
    pub cs_minus_comp: Interval95,
    pub cs_minus_suff: Interval95,
    /// Mean CS at least both means, with both paired intervals above zero.
    pub dominates: bool,
}

fn probe_cell(label: &str, records: &[ExampleRecord], accuracy: f64, resamples: usize, seed: u64) -> Result<ProbeCell> {
    let rows: Vec<(f64, f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.cs?, r.comp?, r.suff?)))
        .collect();
    if rows.is_empty() {
        return Err(Error::Precondition(format!("{label}: no example produced probes")));
    }
    let cs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let comp: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let suff: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let dc: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.0 - r.2).collect();
    let b = bootstrap_means(&[&cs, &comp, &suff, &dc, &ds], resamples, seed);
    let dominates = b[0].mean >= b[1].mean && b[0].mean >= b[2].mean && b[3].lo > 0.0 && b[4].lo > 0.0;
    Ok(ProbeCell {
        label: label.to_string(),
        n: rows.len(),
        accuracy,
        cs: b[0],
        comp: b[1],
        suff: b[2],
        cs_minus_comp: b[3],
        cs_minus_suff: b[4],
        dominates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub accuracy: f64,
    pub main: Option<ProbeCell>,
    /// Edits forced onto confounder operators of DAG tasks.
    pub confounder_control: Option<ProbeCell>,
    /// `T′ = T`: CS is zero, so dominance must fail.
    pub identity_self_test: Option<ProbeCell>,
    pub status: CheckStatus,
    pub message: String,
}

impl DominanceReport {
    pub fn lines(&self) -> Vec<CheckLine> {
        let show = |c: &ProbeCell| {
            format!(
                "n={} CS={:.3}[{:.3},{:.3}] COMP={:.3}[{:.3},{:.3}] SUFF={:.3}[{:.3},{:.3}]",
                c.n, c.cs.mean, c.cs.lo, c.cs.hi, c.comp.mean, c.comp.lo, c.comp.hi, c.suff.mean, c.suff.lo, c.suff.hi
            )
        };
        let mut out = vec![CheckLine::new("dominance", self.status, self.message.clone())];
        if let Some(c) = &self.main {
            out.push(CheckLine::new(
                "dominance causal",
                CheckStatus::from_bool(c.dominates),
                show(c),
            ));
        }
        if let Some(c) = &self.confounder_control {
            out.push(CheckLine::new(
                "dominance confounder control (expected failure)",
                CheckStatus::from_bool(!c.dominates),
                show(c),
            ));
        }
        if let Some(c) = &self.identity_self_test {
            out.push(CheckLine::new(
                "dominance identity self-test (expected failure)",
                CheckStatus::from_bool(!c.dominates),
                show(c),
            ));
        }
        out
    }
}

fn generator_for(lab: &LabConfig, kind: StructureKind, seed: u64) -> GeneratorConfig {
    let mut g = lab.generator.clone();
    g.seed = seed;
    g.structure_mix = StructureMix::only(kind);
    g.num_steps_range.hi = g.num_steps_range.hi.max(kind.min_steps() as i64);
    g.num_steps_range.lo = g.num_steps_range.lo.max(kind.min_steps() as i64);
    g
}

/// Dominance of CS over COMP and SUFF on linear chains, with the confounder
/// control cell and the identity self-test.
pub fn check_dominance(params: &ModelParams, lab: &LabConfig, seed: u64) -> Result<DominanceReport> {
    let c = &lab.checks;
    let linear = generate_dataset(
        &generator_for(lab, StructureKind::LinearChain, rng::derive(seed, LABEL_DOMINANCE_DATA)),
        c.dominance_samples,
    )?;
    let tokenizer = linear.tokenizer();
    let model = TrainedModel {
        params,
        temperature: lab.eval.temperature,
    };
    let base = EvalConfig {
        seed,
        edit_target: EditTarget::Causal,
        verifier: Verifier::Exact,
        ..lab.eval.clone()
    };
    let main = evaluate(&model, &tokenizer, &linear.tasks, &base)?;
    let accuracy = main.report.accuracy;
    if accuracy < c.dominance_min_accuracy {
        return Ok(DominanceReport {
            accuracy,
            main: None,
            confounder_control: None,
            identity_self_test: None,
            status: CheckStatus::Refused,
            message: format!(
                "model accuracy {accuracy:.3} below the {:.2} the check requires",
                c.dominance_min_accuracy
            ),
        });
    }
    let main_cell = probe_cell("causal", &main.records, accuracy, c.bootstrap_resamples, seed)?;

    let identity = evaluate(
        &model,
        &tokenizer,
        &linear.tasks,
        &EvalConfig {
            edit_target: EditTarget::Identity,
            ..base.clone()
        },
    )?;
    let identity_cell = probe_cell("identity", &identity.records, accuracy, c.bootstrap_resamples, seed)?;

    let dag = generate_dataset(
        &generator_for(lab, StructureKind::DagWithConfounders, rng::derive(seed, LABEL_DOMINANCE_DATA ^ 1)),
        c.dominance_samples,
    )?;
    let confounder = evaluate(
        &model,
        &dag.tokenizer(),
        &dag.tasks,
        &EvalConfig {
            edit_target: EditTarget::Confounder,
            ..base
        },
    )?;
    let control_cell = probe_cell(
        "confounder",
        &confounder.records,
        confounder.report.accuracy,
        c.bootstrap_resamples,
        seed,
    )?;

    let pass = main_cell.dominates && !control_cell.dominates && !identity_cell.dominates;
    let message = format!(
        "accuracy {accuracy:.3}; causal dominates={}, confounder dominates={}, identity dominates={}",
        main_cell.dominates, control_cell.dominates, identity_cell.dominates
    );
    Ok(DominanceReport {
        accuracy,
        main: Some(main_cell),
        confounder_control: Some(control_cell),
        identity_self_test: Some(identity_cell),
        status: CheckStatus::from_bool(pass),
        message,
    })
}

// ---------------------------------------------------------------- shortcut

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub lambda: f64,
    pub accuracy: Stats,
    pub cos: Stats,
    pub reliance: Stats,
    pub coverage: Stats,
    pub runs: Vec<CellResult>,
}

impl ArmSummary {
    fn of(lambda: f64, runs: Vec<CellResult>) -> Self {
        let col = |f: &dyn Fn(&CellResult) -> f64| Stats::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            lambda,
            accuracy: col(&|r| r.report.accuracy),
            cos: col(&|r| r.cos()),
            reliance: col(&|r| r.reliance.reliance),
            coverage: col(&|r| r.ledger.coverage),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    pub baseline: ArmSummary,
    pub csr: ArmSummary,
    pub cos_gain: f64,
    pub accuracy_drop: f64,
    /// Reliance of the baseline model on shortcut-free data; zero by construction.
    pub shortcut_free_reliance: f64,
    pub lines: Vec<CheckLine>,
    pub status: CheckStatus,
}

/// Shortcut-always data variant of `lab`.
pub fn shortcut_lab(lab: &LabConfig) -> LabConfig {
    let mut c = lab.clone();
    c.generator.shortcut_rate = 1.0;
    c
}

/// Compares λ = 0 against the configured CSR weight on data where every
/// question carries the answer-leaking token.
pub fn check_shortcut(lab: &LabConfig, seeds: &[u64], cache: &CellCache) -> Result<ShortcutReport> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let c = &lab.checks;
    let sc = shortcut_lab(lab);
    let arm = |lambda: f64, label: &str| -> Result<ArmSummary> {
        let mut cfg = sc.clone();
        cfg.train.lambda = lambda;
        let runs = seeds
            .iter()
            .map(|&s| cache.get(&cfg, label, s).map(|o| o.result.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ArmSummary::of(lambda, runs))
    };
    let baseline = arm(0.0, "shortcut-baseline")?;
    let csr = arm(c.shortcut_lambda, "shortcut-csr")?;

    // Control: with no shortcut tokens present, scrambling is a no-op.
    let free = {
        let mut g = lab.generator.clone();
        g.shortcut_rate = 0.0;
        g.seed = rng::derive(seeds[0], LABEL_DOMINANCE_DATA ^ 2);
        generate_dataset(&g, lab.eval_size.min(200))?
    };
    let base_cell = {
        let mut cfg = sc.clone();
        cfg.train.lambda = 0.0;
        cache.get(&cfg, "shortcut-baseline", seeds[0])?
    };
    let shortcut_free_reliance = crate::metrics::shortcut_reliance(
        &TrainedModel {
            params: &base_cell.params,
            temperature: lab.eval.temperature,
        },
        &free.tokenizer(),
        &free.tasks,
        seeds[0],
    )?
    .reliance;

    let cos_gain = csr.cos.mean - baseline.cos.mean;
    let accuracy_drop = baseline.accuracy.mean - csr.accuracy.mean;
    let mut lines = Vec::new();
    let min_cov = csr.runs.iter().map(|r| r.ledger.coverage).fold(f64::INFINITY, f64::min);
    let status = if min_cov <= 0.5 {
        lines.push(CheckLine::new(
            "shortcut coverage",
            CheckStatus::Refused,
            format!("CSR coverage {min_cov:.3} does not exceed 0.5"),
        ));
        CheckStatus::Refused
    } else {
        let enough = seeds.len() >= c.min_seeds_for_verdict;
        let gain_ok = cos_gain >= c.shortcut_min_cos_gain && (!enough || csr.cos.clearly_above(&baseline.cos));
        let drop_ok = accuracy_drop <= c.shortcut_max_accuracy_drop;
        let reliance_ok = csr.reliance.mean < baseline.reliance.mean;
        lines.push(CheckLine::new(
            "shortcut coverage",
            CheckStatus::Pass,
            format!("min CSR coverage {min_cov:.3}"),
        ));
        lines.push(CheckLine::new(
            "shortcut cos gain",
            CheckStatus::from_bool(gain_ok),
            format!(
                "CSR {} vs λ=0 {} (gain {:+.3}, need {:.2}{})",
                csr.cos,
                baseline.cos,
                cos_gain,
                c.shortcut_min_cos_gain,
                if enough { " with disjoint 1-sd intervals" } else { "" }
            ),
        ));
        lines.push(CheckLine::new(
            "shortcut accuracy drop",
            CheckStatus::from_bool(drop_ok),
            format!(
                "CSR {} vs λ=0 {} (drop {:+.3}, allow {:.2})",
                csr.accuracy, baseline.accuracy, accuracy_drop, c.shortcut_max_accuracy_drop
            ),
        ));
        lines.push(CheckLine::new(
            "shortcut reliance",
            CheckStatus::from_bool(reliance_ok),
            format!("CSR {} vs λ=0 {}", csr.reliance, baseline.reliance),
        ));
        CheckStatus::from_bool(gain_ok && drop_ok && reliance_ok)
    };
    lines.push(CheckLine::new(
        "shortcut-free scramble control",
        CheckStatus::from_bool(shortcut_free_reliance.abs() < 1e-12),
        format!("reliance {shortcut_free_reliance:.4} on shortcut-free data"),
    ));
    Ok(ShortcutReport {
        baseline,
        csr,
        cos_gain,
        accuracy_drop,
        shortcut_free_reliance,
        lines,
        status,
    })
}

// ---------------------------------------------------------------- editor ablation

/// Fraction of single proposals (no resampling) that pass the gate.
pub fn proposal_acceptance(
    tokenizer: &Tokenizer,
    tasks: &[ReasoningTask],
    cfg: &TrainConfig,
    editor: Option<&EditorPolicy>,
    seed: u64,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Empty("proposal tasks"));
    }
    let depth = if cfg.editor_learned_depth {
        EditDepth::Learned { max: cfg.edit_depth }
    } else {
        EditDepth::Fixed(cfg.edit_depth)
    };
    let hits = par::map_indexed(tasks, |i, t| -> Result<bool> {
        let mut r = rng::stream(rng::derive(seed, LABEL_PROPOSALS), i as u64);
        let seq = t.render(tokenizer)?;
        let candidates = edit_candidates(&seq, t, cfg, &mut r)?;
        let script = match editor {
            Some(p) => editor_propose(&tokenizer.vocab, &seq, &candidates, p, depth, &mut r).map(|p| p.script),
            None => random_swap(&tokenizer.vocab, &seq, &candidates, cfg.edit_depth, &mut r),
        };
        let script = match script {
            Ok(s) => s,
            Err(Error::NoEditPossible(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        let edited = tokenizer.parse(&script.apply(&seq)?)?.trace;
        cfg.verifier.gate(&t.trace, &edited, &mut r)
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorAblationReport {
    pub random_cos: Stats,
    pub learned_cos: Stats,
    pub random_q: Stats,
    pub learned_q: Stats,
    pub cos_gain: f64,
    pub random_runs: Vec<CellResult>,
    pub learned_runs: Vec<CellResult>,
    pub status: CheckStatus,
    pub detail: String,
}

/// Learned editor against random swaps at the same depth and candidate set.
pub fn ablate_editor(lab: &LabConfig, seeds: &[u64], cache: &CellCache) -> Result<EditorAblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut random_lab = lab.clone();
    random_lab.train.edit_policy = EditPolicyKind::RandomSwap;
    let mut learned_lab = lab.clone();
    learned_lab.train.edit_policy = EditPolicyKind::LearnedEditor;
    let (mut rc, mut lc, mut rq, mut lq, mut rr, mut lr) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for &s in seeds {
        let r = cache.get(&random_lab, "editor-random", s)?;
        let l = cache.get(&learned_lab, "editor-learned", s)?;
        let tok = r.eval_data.tokenizer();
        rq.push(proposal_acceptance(&tok, &r.eval_data.tasks, &random_lab.train, None, s)?);
        lq.push(proposal_acceptance(
            &tok,
            &l.eval_data.tasks,
            &learned_lab.train,
            l.editor.as_ref(),
            s,
        )?);
        rc.push(r.result.cos());
        lc.push(l.result.cos());
        rr.push(r.result.clone());
        lr.push(l.result.clone());
    }
    let (random_cos, learned_cos) = (Stats::of(&rc), Stats::of(&lc));
    let (random_q, learned_q) = (Stats::of(&rq), Stats::of(&lq));
    let cos_gain = learned_cos.mean - random_cos.mean;
    let status = if cos_gain >= lab.checks.editor_min_cos_gain {
        CheckStatus::Pass
    } else if learned_q.mean > random_q.mean {
        CheckStatus::WeakPass
    } else {
        CheckStatus::Fail
    };
    let detail = format!(
        "cos learned {learned_cos} vs random {random_cos} (gain {cos_gain:+.3}, target {:.2}); q̂ learned {learned_q} vs random {random_q}",
        lab.checks.editor_min_cos_gain
    );
    Ok(EditorAblationReport {
        random_cos,
        learned_cos,
        random_q,
        learned_q,
        cos_gain,
        random_runs: rr,
        learned_runs: lr,
        status,
        detail,
    })
}
