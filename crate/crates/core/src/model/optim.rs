//! First-order optimisers over the flat parameter buffer.

use serde::{Deserialize, Serialize};

use super::{GradientBundle, ModelParams};
use crate::{Error, Result};

pub trait Optimizer: Send {
    /// Applies one update. Fails without touching `params` when the gradient
    /// is non-finite.
    fn step(&mut self, params: &mut ModelParams, grads: &GradientBundle) -> Result<()>;

    fn steps_taken(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        clip_norm: Option<f64>,
    },
    Sgd {
        lr: f64,
        clip_norm: Option<f64>,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lr, clip) = match *self {
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
                clip_norm,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                    return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
                }
                (lr, clip_norm)
            }
            OptimizerConfig::Sgd { lr, clip_norm } => (lr, clip_norm),
        };
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be finite and >= 0")));
        }
        if matches!(clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn build(&self, num_params: usize) -> Result<Box<dyn Optimizer>> {
        self.validate()?;
        Ok(match *self {
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
                clip_norm,
            } => Box::new(Adam {
                lr,
                beta1,
                beta2,
                eps,
                clip_norm,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
                t: 0,
            }),
            OptimizerConfig::Sgd { lr, clip_norm } => Box::new(Sgd { lr, clip_norm, t: 0 }),
        })
    }
}

fn clip_factor(grads: &GradientBundle, clip: Option<f64>) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(match clip {
        Some(c) => {
            let norm = grads.norm();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    })
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ModelParams, grads: &GradientBundle) -> Result<()> {
        let s = clip_factor(grads, self.clip_norm)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (w, &g)) in params.data.iter_mut().zip(&grads.data).enumerate() {
            let g = g * s;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if self.lr != 0.0 {
                *w -= self.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    clip_norm: Option<f64>,
    t: u64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ModelParams, grads: &GradientBundle) -> Result<()> {
        let s = clip_factor(grads, self.clip_norm)?;
        self.t += 1;
        if self.lr != 0.0 {
            for (w, g) in params.data.iter_mut().zip(&grads.data) {
                *w -= self.lr * s * g;
            }
        }
        Ok(())
    }

    fn steps_taken(&self) -> u64 {
        self.t
    }
}
