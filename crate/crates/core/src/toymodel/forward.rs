// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::Rng;

use super::{Block, ToyModel};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::DetRng;

const NORM_EPS: f32 = 1e-5;

/// Logits at every position plus the residual stream after each block at the
/// final position.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub final_acts: Vec<Vec<f32>>,
}

/// Inputs seen by each linear projection of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInputs {
    /// Normalised residual feeding `q`, `k` and `v`.
    pub attn_in: Matrix,
    /// Concatenated head outputs feeding `o`.
    pub context: Matrix,
    /// Normalised residual feeding `up`.
    pub mlp_in: Matrix,
    /// Activated hidden layer feeding `down`.
    pub hidden: Matrix,
}

impl BlockInputs {
    /// Input matrix of the named projection.
    pub fn for_matrix(&self, name: &str) -> &Matrix {
        match name {
            "q" | "k" | "v" => &self.attn_in,
            "o" => &self.context,
            "up" => &self.mlp_in,
            "down" => &self.hidden,
            other => panic!("unknown projection `{other}`"),
        }
    }
}

pub(crate) fn rms_norm_row(x: &[f32], out: &mut [f32]) {
    let mut ss = 0.0f32;
    for v in x {
        ss += v * v;
    }
    let inv = 1.0 / (ss / x.len() as f32 + NORM_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = v * inv;
    }
}

pub(crate) fn rms_norm(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        rms_norm_row(x.row(t), out.row_mut(t));
    }
    out
}

#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_in_place(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl Block {
    /// Applies the block to a residual stream `(T × d)`.
    pub(crate) fn forward(&self, x: &Matrix, heads: usize, capture: Option<&mut Option<BlockInputs>>) -> Matrix {
        let t_len = x.rows();
        let d = x.cols();
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();

        let h = rms_norm(x);
        let q = h.matmul_t(&self.q).expect("q shape");
        let k = h.matmul_t(&self.k).expect("k shape");
        let v = h.matmul_t(&self.v).expect("v shape");

        let mut ctx = Matrix::zeros(t_len, d);
        let mut att = vec![0.0f32; t_len];
        for head in 0..heads {
            let off = head * hd;
            for t in 0..t_len {
                let qt = &q.row(t)[off..off + hd];
                let scores = &mut att[..=t];
                for (s, slot) in scores.iter_mut().enumerate() {
                    *slot = dot(qt, &k.row(s)[off..off + hd]) * scale;
                }
                softmax_in_place(scores);
                let out = &mut ctx.row_mut(t)[off..off + hd];
                for (s, &p) in scores.iter().enumerate() {
                    let vs = &v.row(s)[off..off + hd];
                    for (o, &vv) in out.iter_mut().zip(vs) {
                        *o += p * vv;
                    }
                }
            }
        }
        let attn_out = ctx.matmul_t(&self.o).expect("o shape");
        let mut x1 = x.clone();
        for (a, b) in x1.as_mut_slice().iter_mut().zip(attn_out.as_slice()) {
            *a += b;
        }

        let h2 = rms_norm(&x1);
        let hidden = h2.matmul_t(&self.up).expect("up shape").map(gelu);
        let mlp_out = hidden.matmul_t(&self.down).expect("down shape");
        let mut x2 = x1;
        for (a, b) in x2.as_mut_slice().iter_mut().zip(mlp_out.as_slice()) {
            *a += b;
        }

        if let Some(slot) = capture {
            *slot = Some(BlockInputs {
                attn_in: h,
                context: ctx,
                mlp_in: h2,
                hidden,
            });
        }
        x2
    }
}

impl ToyModel {
    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence is empty".into()));
        }
        let vocab = self.config.vocab;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Vocab { token: bad, vocab });
        }
        Ok(())
    }

    pub(crate) fn embed(&self, tokens: &[u32]) -> Matrix {
        self.embedding.select_rows(&tokens.iter().map(|&t| t as usize).collect::<Vec<_>>())
    }

    pub(crate) fn heads(&self) -> usize {
        self.config.heads as usize
    }

    /// Logits over the vocabulary for each row of a residual stream.
    pub(crate) fn logits(&self, x: &Matrix) -> Matrix {
        let h = rms_norm(x);
        let scale = 1.0 / (self.d_model() as f32).sqrt();
        h.matmul_t(&self.embedding).expect("head shape").map(|v| v * scale)
    }

    /// Full forward pass capturing the residual stream after every block at
    /// the final position.
    pub fn forward_capture(&self, tokens: &[u32]) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        let mut x = self.embed(tokens);
        let last = tokens.len() - 1;
        let mut final_acts = Vec::with_capacity(self.num_layers());
        for b in &self.blocks {
            x = b.forward(&x, self.heads(), None);
            final_acts.push(x.row(last).to_vec());
        }
        Ok(ForwardOutput {
            logits: self.logits(&x),
            final_acts,
        })
    }

    /// Final-position residual activations only (skips the output head).
    pub fn final_activations(&self, tokens: &[u32]) -> Result<Vec<Vec<f32>>> {
        self.check_tokens(tokens)?;
        let mut x = self.embed(tokens);
        let last = tokens.len() - 1;
        let mut acts = Vec::with_capacity(self.num_layers());
        for b in &self.blocks {
            x = b.forward(&x, self.heads(), None);
            acts.push(x.row(last).to_vec());
        }
        Ok(acts)
    }

    /// Sum of next-token negative log-likelihoods and the number of
    /// predicted positions for one sequence.
    pub fn sequence_nll(&self, tokens: &[u32]) -> Result<(f64, usize)> {
        self.check_tokens(tokens)?;
        if tokens.len() < 2 {
            return Ok((0.0, 0));
        }
        let out = self.forward_capture(&tokens[..tokens.len() - 1])?;
        let mut nll = 0.0f64;
        for (t, &next) in tokens[1..].iter().enumerate() {
            nll -= log_softmax_at(out.logits.row(t), next as usize);
        }
        Ok((nll, tokens.len() - 1))
    }

    /// `exp(mean next-token NLL)` over every sequence, teacher forced.
    pub fn perplexity(&self, corpus: &[Vec<u32>]) -> Result<f64> {
        use rayon::prelude::*;
        let parts = corpus
            .par_iter()
            .map(|s| self.sequence_nll(s))
            .collect::<Result<Vec<_>>>()?;
        let (nll, count) = parts
            .iter()
            .fold((0.0f64, 0usize), |(a, c), &(n, k)| (a + n, c + k));
        if count == 0 {
            return Err(Error::EmptyInput("corpus has no predictable positions".into()));
        }
        Ok((nll / count as f64).exp())
    }

    /// Ancestral sampling with a key/value cache. `prompt` must be non-empty;
    /// returns prompt plus `n_new` sampled tokens.
    pub fn sample(&self, prompt: &[u32], n_new: usize, temperature: f32, rng: &mut DetRng) -> Result<Vec<u32>> {
        self.check_tokens(prompt)?;
        if !(temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let mut cache = KvCache::new(self.num_layers());
        let mut tokens = prompt.to_vec();
        let mut logits = Vec::new();
        for &t in prompt {
            logits = self.step(t, &mut cache);
        }
        for _ in 0..n_new {
            let mut p: Vec<f32> = logits.iter().map(|l| l / temperature).collect();
            softmax_in_place(&mut p);
            let u: f32 = rng.random();
            let mut acc = 0.0f32;
            let mut next = p.len() - 1;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    next = i;
                    break;
                }
            }
            tokens.push(next as u32);
            logits = self.step(next as u32, &mut cache);
        }
        Ok(tokens)
    }

    /// Processes one token against the cache and returns its logits.
    fn step(&self, token: u32, cache: &mut KvCache) -> Vec<f32> {
        let d = self.d_model();
        let heads = self.heads();
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let mut x = self.embedding.row(token as usize).to_vec();
        let mut h = vec![0.0f32; d];
        for (l, b) in self.blocks.iter().enumerate() {
            rms_norm_row(&x, &mut h);
            let q: Vec<f32> = (0..d).map(|i| dot(&h, b.q.row(i))).collect();
            let k: Vec<f32> = (0..d).map(|i| dot(&h, b.k.row(i))).collect();
            let v: Vec<f32> = (0..d).map(|i| dot(&h, b.v.row(i))).collect();
            cache.keys[l].push(k);
            cache.values[l].push(v);
            let n = cache.keys[l].len();
            let mut ctx = vec![0.0f32; d];
            let mut att = vec![0.0f32; n];
            for head in 0..heads {
                let off = head * hd;
                for (s, slot) in att.iter_mut().enumerate() {
                    *slot = dot(&q[off..off + hd], &cache.keys[l][s][off..off + hd]) * scale;
                }
                softmax_in_place(&mut att);
                for (s, &p) in att.iter().enumerate() {
                    let vs = &cache.values[l][s][off..off + hd];
                    for (o, &vv) in ctx[off..off + hd].iter_mut().zip(vs) {
                        *o += p * vv;
                    }
                }
            }
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += dot(&ctx, b.o.row(i));
            }
            rms_norm_row(&x, &mut h);
            let hidden: Vec<f32> = (0..b.up.rows()).map(|i| gelu(dot(&h, b.up.row(i)))).collect();
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += dot(&hidden, b.down.row(i));
            }
        }
        rms_norm_row(&x, &mut h);
        let scale_out = 1.0 / (d as f32).sqrt();
        (0..self.vocab())
            .map(|i| dot(&h, self.embedding.row(i)) * scale_out)
            .collect()
    }
}

struct KvCache {
    keys: Vec<Vec<Vec<f32>>>,
    values: Vec<Vec<Vec<f32>>>,
}

impl KvCache {
    fn new(layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
        }
    }
}

/// `log softmax(logits)[target]` in `f64`.
pub(crate) fn log_softmax_at(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for &l in logits {
        sum += (l as f64 - max).exp();
    }
    logits[target] as f64 - max - sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::toymodel::ToyModelConfig;

    fn small() -> ToyModel {
        ToyModel::init(&ToyModelConfig {
            num_layers: 3,
            d_model: 16,
            heads: 4,
            ffn_mult: 2,
            vocab: 40,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn single_token_shapes() {
        let m = small();
        let out = m.forward_capture(&[5]).unwrap();
        assert_eq!(out.logits.shape(), (1, 40));
        assert_eq!(out.final_acts.len(), 3);
        assert!(out.final_acts.iter().all(|a| a.len() == 16));
    }

    #[test]
    fn out_of_range_token() {
        let m = small();
        assert!(matches!(m.forward_capture(&[1, 40]), Err(Error::Vocab { token: 40, .. })));
        assert!(matches!(m.forward_capture(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn zeroed_model_is_uniform() {
        let m = small().map_all(|_| 0.0);
        let out = m.forward_capture(&[1, 2, 3]).unwrap();
        for t in 0..3 {
            let row = out.logits.row(t);
            assert!(row.iter().all(|&v| v == row[0]));
        }
        let ppl = m.perplexity(&[vec![1, 2, 3, 4, 5]]).unwrap();
        assert!((ppl - 40.0).abs() < 1e-3);
    }

    #[test]
    fn perplexity_at_least_one() {
        let m = small();
        let ppl = m.perplexity(&[vec![1, 2, 3, 4, 5, 6], vec![7, 8]]).unwrap();
        assert!(ppl >= 1.0);
        assert!(matches!(m.perplexity(&[vec![3]]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn cached_step_matches_full_forward() {
        let m = small();
        let tokens = [3u32, 9, 27, 1, 14];
        let full = m.forward_capture(&tokens).unwrap();
        let mut cache = KvCache::new(m.num_layers());
        let mut last = Vec::new();
        for &t in &tokens {
            last = m.step(t, &mut cache);
        }
        let row = full.logits.row(tokens.len() - 1);
        for (a, b) in row.iter().zip(&last) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let m = small();
        let a = m.sample(&[1], 10, 1.0, &mut stream_rng(1, 0)).unwrap();
        let b = m.sample(&[1], 10, 1.0, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 11);
    }
}
