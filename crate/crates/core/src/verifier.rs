//! Exact and noisy trace verifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::trace::Trace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub valid: bool,
    /// Earliest step whose stored result disagrees with its operands. Verdicts
    /// flipped to invalid by verifier noise report step 0.
    pub first_failure: Option<usize>,
}

impl VerifierVerdict {
    pub const VALID: VerifierVerdict = VerifierVerdict {
        valid: true,
        first_failure: None,
    };
}

/// A trace is valid iff every step's stored result equals the evaluation of
/// its operands, with references resolved to stored results.
pub fn verify(trace: &Trace) -> Result<VerifierVerdict> {
    trace.check_structure()?;
    let first_failure = (0..trace.len()).find(|&i| trace.local_value(i) != trace.steps[i].result);
    Ok(VerifierVerdict {
        valid: first_failure.is_none(),
        first_failure,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyVerifierConfig {
    /// Probability that a valid trace is judged invalid.
    pub flip_valid_rate: f64,
    /// Probability that an invalid trace is judged valid.
    pub flip_invalid_rate: f64,
    pub seed: u64,
}

impl NoisyVerifierConfig {
    pub fn exact() -> Self {
        Self {
            flip_valid_rate: 0.0,
            flip_invalid_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("flip_valid_rate", self.flip_valid_rate),
            ("flip_invalid_rate", self.flip_invalid_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_exact(&self) -> bool {
        self.flip_valid_rate == 0.0 && self.flip_invalid_rate == 0.0
    }
}

/// Exact verdict with its bit flipped independently at the configured rates.
pub fn verify_noisy<R: Rng + ?Sized>(
    trace: &Trace,
    cfg: &NoisyVerifierConfig,
    rng: &mut R,
) -> Result<VerifierVerdict> {
    let exact = verify(trace)?;
    let rate = if exact.valid {
        cfg.flip_valid_rate
    } else {
        cfg.flip_invalid_rate
    };
    let flip = rate > 0.0 && rng.gen_bool(rate.min(1.0));
    Ok(match (flip, exact.valid) {
        (false, _) => exact,
        (true, true) => VerifierVerdict {
            valid: false,
            first_failure: Some(0),
        },
        (true, false) => VerifierVerdict::VALID,
    })
}

/// Verifier used by the training gate and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Verifier {
    Exact,
    Noisy(NoisyVerifierConfig),
}

impl Verifier {
    pub fn judge<R: Rng + ?Sized>(&self, trace: &Trace, rng: &mut R) -> Result<VerifierVerdict> {
        match self {
            Verifier::Exact => verify(trace),
            Verifier::Noisy(cfg) if cfg.is_exact() => verify(trace),
            Verifier::Noisy(cfg) => verify_noisy(trace, cfg, rng),
        }
    }

    /// The gate of the training step: original valid, counterfactual invalid.
    pub fn gate<R: Rng + ?Sized>(&self, original: &Trace, edited: &Trace, rng: &mut R) -> Result<bool> {
        let before = self.judge(original, rng)?;
        let after = self.judge(edited, rng)?;
        Ok(before.valid && !after.valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceEstimate {
    pub q_hat: f64,
    pub std_error: f64,
    pub accepted: usize,
    pub n: usize,
}

/// Fraction of `(v(T), v(T'))` verdict pairs that pass the gate.
pub fn acceptance_rate<I>(pairs: I) -> Result<AcceptanceEstimate>
where
    I: IntoIterator<Item = (VerifierVerdict, VerifierVerdict)>,
{
    let (mut n, mut accepted) = (0usize, 0usize);
    for (before, after) in pairs {
        n += 1;
        if before.valid && !after.valid {
            accepted += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("verdict stream"));
    }
    let q = accepted as f64 / n as f64;
    Ok(AcceptanceEstimate {
        q_hat: q,
        std_error: (q * (1.0 - q) / n as f64).sqrt(),
        accepted,
        n,
    })
}
