use rand::Rng as _;

use csr_core::metrics::{
    ece, evaluate, flip_pr, probes, EditTarget, EvalConfig, ExampleRecord, GateStatus, PositionKeyed,
    SymbolicExecutor, TraceIgnoring,
};
use csr_core::rng;
use csr_core::taskgen::{generate_dataset, Dataset, GeneratorConfig, Interval};
use csr_core::trace::TokenKind;

const EPS: f64 = 1e-8;

fn shortcut_data(n: usize) -> Dataset {
    generate_dataset(
        &GeneratorConfig {
            seed: 31,
            shortcut_rate: 1.0,
            ..GeneratorConfig::default()
        },
        n,
    )
    .unwrap()
}

#[test]
fn symbolic_executor_scores_the_faithful_pole() {
    let data = shortcut_data(300);
    let tok = data.tokenizer();
    let model = SymbolicExecutor {
        tokenizer: tok.clone(),
        epsilon: EPS,
    };
    let r = evaluate(&model, &tok, &data.tasks, &EvalConfig::default()).unwrap().report;
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.cos.value, Some(1.0));
    assert_eq!(r.cos.den + r.cos_excluded, 300);
    assert_eq!(r.sis.value, Some(1.0));
    assert_eq!((r.flip_precision, r.flip_recall), (Some(1.0), Some(1.0)));
    assert!(r.ece < 1e-5, "{}", r.ece);
}

#[test]
fn trace_ignoring_model_scores_the_unfaithful_pole() {
    let data = shortcut_data(300);
    let tok = data.tokenizer();
    let model = TraceIgnoring {
        vocab: tok.vocab.clone(),
        epsilon: EPS,
    };
    let r = evaluate(&model, &tok, &data.tasks, &EvalConfig::default()).unwrap().report;
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.cos.value, Some(0.0));
    assert_eq!(r.flip_recall, Some(0.0));
    assert_eq!(r.mean_cs, Some(0.0));
}

#[test]
fn position_keyed_model_breaks_under_template_shifts() {
    let cfg = GeneratorConfig {
        seed: 12,
        num_steps_range: Interval::new(3, 3),
        filler_range: Interval::new(1, 1),
        shortcut_rate: 0.0,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&cfg, 300).unwrap();
    let tok = data.tokenizer();
    let seq = data.tasks[0].render(&tok).unwrap();
    let position = (0..seq.len())
        .rev()
        .find(|&i| tok.vocab.kind(seq.tokens[i]).unwrap() == TokenKind::Num(data.tasks[0].answer))
        .expect("answer token rendered");
    let model = PositionKeyed {
        vocab: tok.vocab.clone(),
        position,
        epsilon: EPS,
    };
    let r = evaluate(&model, &tok, &data.tasks, &EvalConfig::default()).unwrap().report;
    assert!(r.sis.den > 20, "{:?}", r.sis);
    assert!(r.sis.value.unwrap() < 1.0);
}

#[test]
fn identity_edit_gives_zero_cs_and_probes_are_nonnegative() {
    let data = shortcut_data(100);
    let tok = data.tokenizer();
    let model = SymbolicExecutor {
        tokenizer: tok.clone(),
        epsilon: EPS,
    };
    for t in &data.tasks {
        let seq = t.render(&tok).unwrap();
        let (cs, comp, suff) = probes(&model, &seq, &t.causal_step_positions(&seq), &seq).unwrap();
        assert_eq!(cs, 0.0);
        assert!(comp >= 0.0 && suff >= 0.0);
    }
    let cfg = EvalConfig {
        edit_target: EditTarget::Identity,
        ..EvalConfig::default()
    };
    let r = evaluate(&model, &tok, &data.tasks, &cfg).unwrap();
    assert!(r.records.iter().all(|x| x.gate == GateStatus::Identity && x.cs == Some(0.0)));
}

#[test]
fn evaluation_is_deterministic() {
    let data = shortcut_data(60);
    let tok = data.tokenizer();
    let model = TraceIgnoring {
        vocab: tok.vocab.clone(),
        epsilon: EPS,
    };
    let a = evaluate(&model, &tok, &data.tasks, &EvalConfig::default()).unwrap();
    let b = evaluate(&model, &tok, &data.tasks, &EvalConfig::default()).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn calibrated_stream_has_ece_within_bin_granularity() {
    let bins = 10;
    let (mut conf, mut correct) = (Vec::new(), Vec::new());
    for b in 0..bins {
        let c = (b as f64 + 0.5) / bins as f64;
        let n = 200;
        let hits = (c * n as f64).round() as usize;
        for i in 0..n {
            conf.push(c);
            correct.push(i < hits);
        }
    }
    assert!(ece(&conf, &correct, bins).unwrap() <= 1.0 / (2.0 * bins as f64));
}

#[test]
fn confident_random_guesser_has_ece_near_one() {
    let mut r = rng::stream(5, 0);
    let n = 50_000;
    let correct: Vec<bool> = (0..n).map(|_| r.gen_range(0..128) == 0).collect();
    let e = ece(&vec![1.0; n], &correct, 10).unwrap();
    assert!((e - (1.0 - 1.0 / 128.0)).abs() < 3e-3, "{e}");
}

#[test]
fn random_flipper_precision_is_the_causal_share() {
    let mut r = rng::stream(6, 0);
    let (causal, semantic) = (3000, 1000);
    let mut records = Vec::new();
    for id in 0..causal + semantic {
        let is_causal = id < causal;
        let flip = r.gen_bool(0.5);
        records.push(ExampleRecord {
            id,
            answer: 0,
            prediction: 0,
            correct: true,
            confidence: 1.0,
            gate: GateStatus::Applied,
            edit_policy: String::new(),
            flipped: is_causal.then_some(flip),
            transform: None,
            variant_flipped: (!is_causal).then_some(flip),
            cs: None,
            comp: None,
            suff: None,
        });
    }
    let (p, rec, _) = flip_pr(&records);
    let share = causal as f64 / (causal + semantic) as f64;
    assert!((p.unwrap() - share).abs() < 0.03, "{p:?} vs {share}");
    assert!((rec.unwrap() - 0.5).abs() < 0.03);
}
