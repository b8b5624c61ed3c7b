//! Forward pass with activation cache and the matching reverse pass.

use super::dist::AnswerDistribution;
use super::linalg::{add_row_bias, col_sum_acc, gelu, gelu_grad, mm_acc, mm_nt_acc, mm_tn_acc, softmax_inplace};
use super::{GradientBundle, ModelParams, Slot};
use crate::trace::TokenSequence;
use crate::{Error, Result};

/// Activations needed by the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n: usize,
    tokens: Vec<usize>,
    roles: Vec<usize>,
    steps: Vec<usize>,
    x0: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `n_heads` blocks of `n×n`.
    attn: Vec<f64>,
    /// Concatenated head outputs before the output projection.
    o: Vec<f64>,
    x1: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    pooled: Vec<f64>,
    a: Vec<f64>,
    ga: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub dist: AnswerDistribution,
    pub cache: ForwardCache,
}

fn head_cols(src: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&src[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

fn scatter_cols(dst: &mut [f64], src: &[f64], n: usize, d: usize, h: usize, dh: usize) {
    for i in 0..n {
        for j in 0..dh {
            dst[i * d + h * dh + j] += src[i * dh + j];
        }
    }
}

impl ForwardPass {
    pub fn run(params: &ModelParams, seq: &TokenSequence, temperature: f64) -> Result<Self> {
        let c = &params.config;
        let l = &params.layout;
        let n = seq.len();
        if n == 0 {
            return Err(Error::Empty("token sequence"));
        }
        let d = c.d_model;
        let nh = c.n_heads;
        let dh = d / nh;
        let p = |s: Slot| params.slice(s);

        let mut tokens = Vec::with_capacity(n);
        for &t in &seq.tokens {
            if t as usize >= c.vocab_size {
                return Err(Error::UnknownToken(t));
            }
            tokens.push(t as usize);
        }
        let roles: Vec<usize> = seq.role.iter().map(|r| *r as usize).collect();
        let steps: Vec<usize> = seq.step.iter().map(|&s| (s as usize).min(c.max_steps)).collect();

        let mut x0 = vec![0.0; n * d];
        let (te, re, se) = (p(l.tok_emb), p(l.role_emb), p(l.step_emb));
        for i in 0..n {
            let row = &mut x0[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = te[tokens[i] * d + j] + re[roles[i] * d + j] + se[steps[i] * d + j];
            }
        }

        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        mm_acc(&x0, p(l.wq), &mut q, n, d, d);
        mm_acc(&x0, p(l.wk), &mut k, n, d, d);
        mm_acc(&x0, p(l.wv), &mut v, n, d, d);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = vec![0.0; nh * n * n];
        let mut o = vec![0.0; n * d];
        for h in 0..nh {
            let qh = head_cols(&q, n, d, h, dh);
            let kh = head_cols(&k, n, d, h, dh);
            let vh = head_cols(&v, n, d, h, dh);
            let a = &mut attn[h * n * n..(h + 1) * n * n];
            mm_nt_acc(&qh, &kh, a, n, dh, n);
            for row in a.chunks_mut(n) {
                row.iter_mut().for_each(|s| *s *= scale);
                softmax_inplace(row);
            }
            let mut oh = vec![0.0; n * dh];
            mm_acc(a, &vh, &mut oh, n, n, dh);
            scatter_cols(&mut o, &oh, n, d, h, dh);
        }

        let mut x1 = x0.clone();
        mm_acc(&o, p(l.wo), &mut x1, n, d, d);

        let mut u = vec![0.0; n * c.d_ff];
        mm_acc(&x1, p(l.w1), &mut u, n, d, c.d_ff);
        add_row_bias(&mut u, p(l.b1));
        let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
        let mut x2 = x1.clone();
        mm_acc(&g, p(l.w2), &mut x2, n, c.d_ff, d);
        add_row_bias(&mut x2, p(l.b2));

        let mut pooled = vec![0.0; d];
        col_sum_acc(&x2, &mut pooled);
        pooled.iter_mut().for_each(|x| *x /= n as f64);

        let mut a = p(l.bh1).to_vec();
        mm_acc(&pooled, p(l.wh1), &mut a, 1, d, c.d_hidden);
        let ga: Vec<f64> = a.iter().map(|&x| gelu(x)).collect();
        let mut logits = p(l.bh2).to_vec();
        mm_acc(&ga, p(l.wh2), &mut logits, 1, c.d_hidden, c.answer_vocab);

        let dist = AnswerDistribution::from_logits(&logits, temperature, c.epsilon);
        if !dist.probs.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("forward pass"));
        }
        Ok(Self {
            logits,
            dist,
            cache: ForwardCache {
                n,
                tokens,
                roles,
                steps,
                x0,
                q,
                k,
                v,
                attn,
                o,
                x1,
                u,
                g,
                pooled,
                a,
                ga,
            },
        })
    }

    /// Gradient of a loss with respect to the answer probabilities, pulled
    /// back to every parameter and added to `grads`.
    pub fn backward_probs(&self, params: &ModelParams, d_probs: &[f64], grads: &mut GradientBundle) {
        let d_logits = self.dist.logit_grad(d_probs);
        self.backward_logits(params, &d_logits, grads);
    }

    pub fn backward_logits(&self, params: &ModelParams, d_logits: &[f64], grads: &mut GradientBundle) {
        let c = &params.config;
        let l = &params.layout;
        let cache = &self.cache;
        let n = cache.n;
        let d = c.d_model;
        let nh = c.n_heads;
        let dh = d / nh;
        let (dff, dhid, av) = (c.d_ff, c.d_hidden, c.answer_vocab);
        let p = |s: Slot| params.slice(s);
        let gd = &mut grads.data;

        // Head.
        col_sum_acc(d_logits, &mut gd[l.bh2.range()]);
        mm_tn_acc(&cache.ga, d_logits, &mut gd[l.wh2.range()], 1, dhid, av);
        let mut d_ga = vec![0.0; dhid];
        mm_nt_acc(d_logits, p(l.wh2), &mut d_ga, 1, av, dhid);
        let d_a: Vec<f64> = d_ga.iter().zip(&cache.a).map(|(g, &x)| g * gelu_grad(x)).collect();
        col_sum_acc(&d_a, &mut gd[l.bh1.range()]);
        mm_tn_acc(&cache.pooled, &d_a, &mut gd[l.wh1.range()], 1, d, dhid);
        let mut d_pooled = vec![0.0; d];
        mm_nt_acc(&d_a, p(l.wh1), &mut d_pooled, 1, dhid, d);

        // Mean pooling.
        let inv_n = 1.0 / n as f64;
        let mut d_x2 = Vec::with_capacity(n * d);
        for _ in 0..n {
            d_x2.extend(d_pooled.iter().map(|g| g * inv_n));
        }

        // Feed-forward block.
        let mut d_x1 = d_x2.clone();
        col_sum_acc(&d_x2, &mut gd[l.b2.range()]);
        mm_tn_acc(&cache.g, &d_x2, &mut gd[l.w2.range()], n, dff, d);
        let mut d_g = vec![0.0; n * dff];
        mm_nt_acc(&d_x2, p(l.w2), &mut d_g, n, d, dff);
        let d_u: Vec<f64> = d_g.iter().zip(&cache.u).map(|(g, &x)| g * gelu_grad(x)).collect();
        col_sum_acc(&d_u, &mut gd[l.b1.range()]);
        mm_tn_acc(&cache.x1, &d_u, &mut gd[l.w1.range()], n, d, dff);
        mm_nt_acc(&d_u, p(l.w1), &mut d_x1, n, dff, d);

        // Attention block.
        let mut d_x0 = d_x1.clone();
        mm_tn_acc(&cache.o, &d_x1, &mut gd[l.wo.range()], n, d, d);
        let mut d_o = vec![0.0; n * d];
        mm_nt_acc(&d_x1, p(l.wo), &mut d_o, n, d, d);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut d_q = vec![0.0; n * d];
        let mut d_k = vec![0.0; n * d];
        let mut d_v = vec![0.0; n * d];
        for h in 0..nh {
            let qh = head_cols(&cache.q, n, d, h, dh);
            let kh = head_cols(&cache.k, n, d, h, dh);
            let vh = head_cols(&cache.v, n, d, h, dh);
            let d_oh = head_cols(&d_o, n, d, h, dh);
            let a = &cache.attn[h * n * n..(h + 1) * n * n];

            let mut d_a = vec![0.0; n * n];
            mm_nt_acc(&d_oh, &vh, &mut d_a, n, dh, n);
            let mut d_vh = vec![0.0; n * dh];
            mm_tn_acc(a, &d_oh, &mut d_vh, n, n, dh);

            let mut d_s = vec![0.0; n * n];
            for i in 0..n {
                let ar = &a[i * n..(i + 1) * n];
                let gr = &d_a[i * n..(i + 1) * n];
                let inner: f64 = ar.iter().zip(gr).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    d_s[i * n + j] = ar[j] * (gr[j] - inner) * scale;
                }
            }
            let mut d_qh = vec![0.0; n * dh];
            mm_acc(&d_s, &kh, &mut d_qh, n, n, dh);
            let mut d_kh = vec![0.0; n * dh];
            mm_tn_acc(&d_s, &qh, &mut d_kh, n, n, dh);

            scatter_cols(&mut d_q, &d_qh, n, d, h, dh);
            scatter_cols(&mut d_k, &d_kh, n, d, h, dh);
            scatter_cols(&mut d_v, &d_vh, n, d, h, dh);
        }
        for (slot, dm) in [(l.wq, &d_q), (l.wk, &d_k), (l.wv, &d_v)] {
            mm_tn_acc(&cache.x0, dm, &mut gd[slot.range()], n, d, d);
            mm_nt_acc(dm, p(slot), &mut d_x0, n, d, d);
        }

        // Embeddings.
        for i in 0..n {
            let g = &d_x0[i * d..(i + 1) * d];
            for (slot, row) in [
                (l.tok_emb, cache.tokens[i]),
                (l.role_emb, cache.roles[i]),
                (l.step_emb, cache.steps[i]),
            ] {
                let off = slot.offset + row * d;
                for (dst, src) in gd[off..off + d].iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }
}
