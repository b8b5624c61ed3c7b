//! Helpers shared by the integration tests.
#![allow(dead_code)]

use csr_core::intervene::{random_swap, EditScript};
use csr_core::model::{backward, forward, GradientBundle, ModelConfig, ModelParams};
use csr_core::taskgen::{generate_dataset, GeneratorConfig, Interval, ReasoningTask};
use csr_core::trace::{TokenSequence, Tokenizer};
use csr_core::train::{DivergenceKind, LossSpec};
use csr_core::rng;
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Below this magnitude the relative error is measured against the floor:
/// a central difference at h = 1e-6 carries ~1e-9 absolute rounding noise.
pub const FD_FLOOR: f64 = 1e-3;

/// Small generator: V = 16, two or three steps.
pub fn small_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        operand_range: Interval::new(1, 3),
        answer_vocab_size: 16,
        num_steps_range: Interval::new(2, 3),
        ..Default::default()
    }
}

pub fn small_model(tokenizer: &Tokenizer, seed: u64, scale: f64) -> ModelParams {
    ModelParams::init(
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            d_hidden: 8,
            init_seed: seed,
            init_scale: scale,
            ..Default::default()
        }
        .for_vocab(&tokenizer.vocab),
    )
    .unwrap()
}

/// A task, its rendering and a single-operator counterfactual rendering.
pub struct Fixture {
    pub tokenizer: Tokenizer,
    pub task: ReasoningTask,
    pub seq: TokenSequence,
    pub counterfactual: TokenSequence,
    pub edit: EditScript,
}

pub fn fixture(seed: u64) -> Fixture {
    let cfg = small_generator(seed);
    let ds = generate_dataset(&cfg, 1).unwrap();
    let tokenizer = ds.tokenizer();
    let task = ds.tasks[0].clone();
    let seq = task.render(&tokenizer).unwrap();
    let mut r = rng::stream(seed, 99);
    let edit = random_swap(&tokenizer.vocab, &seq, &task.causal_op_positions, 1, &mut r).unwrap();
    let counterfactual = edit.apply(&seq).unwrap();
    Fixture {
        tokenizer,
        task,
        seq,
        counterfactual,
        edit,
    }
}

/// The losses whose gradients are checked: the task loss, the divergence
/// alone for each kind, and the combined objective for each kind.
pub fn loss_specs<'a>(fx: &'a Fixture, lambda: f64) -> Vec<(String, LossSpec<'a>)> {
    let t = 1.2;
    let mut out = vec![(
        "task".to_string(),
        LossSpec::Task {
            answer: fx.task.answer,
            temperature: t,
        },
    )];
    for kind in DivergenceKind::ALL {
        out.push((
            format!("csr_{}", kind.name()),
            LossSpec::Csr {
                counterfactual: &fx.counterfactual,
                divergence: kind,
                temperature: t,
            },
        ));
        out.push((
            format!("total_{}", kind.name()),
            LossSpec::Total {
                answer: fx.task.answer,
                counterfactual: &fx.counterfactual,
                lambda,
                divergence: kind,
                temperature: t,
            },
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Independent loss oracle: recomputes every checked loss from the two
/// answer distributions with direct summation.
fn oracle_losses(p: &[f64], q: &[f64], answer: u32, lambda: f64) -> Vec<f64> {
    let kl: f64 = p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum();
    let js: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let m = 0.5 * (a + b);
            0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln()
        })
        .sum();
    let tv: f64 = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let task = -p[answer as usize].ln();
    vec![task, kl, task - lambda * kl, js, task - lambda * js, tv, task - lambda * tv]
}

/// Central finite differences over every parameter, for every loss of
/// [`loss_specs`] at once (same order).
pub fn finite_difference_check(params: &ModelParams, fx: &Fixture, lambda: f64) -> Vec<(String, FdReport)> {
    let specs = loss_specs(fx, lambda);
    let analytic: Vec<GradientBundle> = specs
        .iter()
        .map(|(_, s)| backward(params, &fx.seq, s).unwrap().1)
        .collect();
    let eval = |p: &ModelParams| {
        let a = forward(p, &fx.seq, 1.2).unwrap();
        let b = forward(p, &fx.counterfactual, 1.2).unwrap();
        oracle_losses(&a.probs, &b.probs, fx.task.answer, lambda)
    };
    let mut p = params.clone();
    let mut reps = vec![FdReport::default(); specs.len()];
    for i in 0..p.len() {
        let w = p.data[i];
        p.data[i] = w + FD_STEP;
        let up = eval(&p);
        p.data[i] = w - FD_STEP;
        let down = eval(&p);
        p.data[i] = w;
        for (k, rep) in reps.iter_mut().enumerate() {
            let numeric = (up[k] - down[k]) / (2.0 * FD_STEP);
            let e = rel_error(analytic[k].data[i], numeric);
            if e > rep.max_rel_error {
                rep.max_rel_error = e;
                rep.worst_index = i;
            }
            rep.checked += 1;
        }
    }
    specs.into_iter().map(|(n, _)| n).zip(reps).collect()
}

/// Worst relative error over `points` random parameter draws, per loss.
pub fn gradient_sweep(points: usize) -> Vec<(String, FdReport)> {
    let mut worst: Vec<(String, FdReport)> = Vec::new();
    for point in 0..points {
        let fx = fixture(point as u64);
        let mut r = rng::stream(point as u64, 7);
        let scale = r.gen_range(0.5..2.0);
        let lambda = r.gen_range(0.1..1.0);
        let params = small_model(&fx.tokenizer, 1000 + point as u64, scale);
        for (name, rep) in finite_difference_check(&params, &fx, lambda) {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some((_, w)) => {
                    w.checked += rep.checked;
                    if rep.max_rel_error > w.max_rel_error {
                        w.max_rel_error = rep.max_rel_error;
                        w.worst_index = rep.worst_index;
                    }
                }
                None => worst.push((name, rep)),
            }
        }
    }
    worst
}
