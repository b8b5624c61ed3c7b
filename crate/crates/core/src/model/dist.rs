use serde::{Deserialize, Serialize};

use super::linalg::softmax_inplace;

/// Smoothed answer distribution `p = (1 − Vε)·softmax(z/τ) + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub temperature_applied: f64,
    /// Softmax before smoothing, kept for the backward pass.
    #[serde(skip)]
    raw: Vec<f64>,
    #[serde(skip)]
    epsilon: f64,
}

impl AnswerDistribution {
    pub fn from_logits(logits: &[f64], temperature: f64, epsilon: f64) -> Self {
        let v = logits.len();
        let mut raw: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
        softmax_inplace(&mut raw);
        let keep = 1.0 - v as f64 * epsilon;
        let probs: Vec<f64> = raw.iter().map(|s| keep * s + epsilon).collect();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Self {
            probs,
            log_probs,
            temperature_applied: temperature,
            raw,
            epsilon,
        }
    }

    /// Smoothed distribution built directly from probabilities (used by
    /// pseudo-models that do not have logits).
    pub fn from_probs(probs: &[f64], epsilon: f64) -> Self {
        let z: f64 = probs.iter().sum();
        let raw: Vec<f64> = probs.iter().map(|p| p / z).collect();
        let keep = 1.0 - probs.len() as f64 * epsilon;
        let probs: Vec<f64> = raw.iter().map(|s| keep * s + epsilon).collect();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Self {
            probs,
            log_probs,
            temperature_applied: 1.0,
            raw,
            epsilon,
        }
    }

    pub fn one_hot(v: usize, answer: usize, epsilon: f64) -> Self {
        let mut p = vec![0.0; v];
        p[answer] = 1.0;
        Self::from_probs(&p, epsilon)
    }

    pub fn uniform(v: usize, epsilon: f64) -> Self {
        Self::from_probs(&vec![1.0; v], epsilon)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Maximum probability.
    pub fn confidence(&self) -> f64 {
        self.probs.iter().cloned().fold(0.0, f64::max)
    }

    /// Pulls a gradient with respect to `probs` back to the logits.
    pub fn logit_grad(&self, d_probs: &[f64]) -> Vec<f64> {
        let keep = 1.0 - self.probs.len() as f64 * self.epsilon;
        let d_raw: Vec<f64> = d_probs.iter().map(|g| g * keep).collect();
        let inner: f64 = d_raw.iter().zip(&self.raw).map(|(g, s)| g * s).sum();
        self.raw
            .iter()
            .zip(&d_raw)
            .map(|(s, g)| s * (g - inner) / self.temperature_applied)
            .collect()
    }
}

/// Argmax with ties broken toward the smaller answer id.
pub fn predict(dist: &AnswerDistribution) -> u32 {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_breaks_ties_low() {
        let mut p = vec![0.0; 10];
        p[5] = 1.0;
        assert_eq!(predict(&AnswerDistribution::from_probs(&p, 1e-8)), 5);
        let mut p = vec![0.0; 10];
        p[3] = 0.5;
        p[7] = 0.5;
        assert_eq!(predict(&AnswerDistribution::from_probs(&p, 1e-8)), 3);
    }

    #[test]
    fn smoothing_floor_and_normalization() {
        let d = AnswerDistribution::from_logits(&[800.0, -900.0, 0.0, 3.0], 1.2, 1e-8);
        assert!(d.probs.iter().all(|&p| p >= 1e-8));
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d.log_probs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let logits: Vec<f64> = (0..16).map(|i| (i as f64).sin() * 5.0).collect();
        let d = AnswerDistribution::from_logits(&logits, 1e6, 1e-8);
        for p in &d.probs {
            assert!((p - 1.0 / 16.0).abs() <= 1e-6);
        }
    }
}
