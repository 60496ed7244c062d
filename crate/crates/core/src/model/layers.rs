//! Linear, layer-norm and Transformer encoder layers with explicit backward
//! passes. Inputs are stacks of rows; attention runs inside row segments.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::{gelu, gelu_grad, gemm, matmul, matmul_nt, matmul_tn, softmax_rows, Real, Tensor, View};

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// A contiguous run of rows processed as one attention sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Dropout source; inactive when the rate is 0 or no RNG is supplied.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Dropout<'a> {
    pub fn new(rate: f64, rng: &'a mut dyn RngCore) -> Dropout<'a> {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    /// Inverted-dropout scale factors (`0` or `1 / (1 - rate)`).
    pub fn mask<T: Real>(&mut self, len: usize) -> Option<Vec<T>> {
        let rng = self.rng.as_mut()?;
        if self.rate <= 0.0 {
            return None;
        }
        let keep = T::from_f64(1.0 / (1.0 - self.rate));
        Some(
            (0..len)
                .map(|_| if rng.gen_bool(self.rate) { T::zero() } else { keep })
                .collect(),
        )
    }
}

pub fn apply_dropout<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v = *v * *k);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Linear<T> {
        Linear {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.data);
        }
        matmul(x, &self.weight.data, &mut y, rows, i, o, true);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dx`.
    pub fn backward(&self, grad: &mut Linear<T>, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
        self.backward_params(grad, x, dy, rows);
        let (i, o) = (self.input_dim(), self.output_dim());
        let mut dx = vec![T::zero(); rows * i];
        matmul_nt(dy, &self.weight.data, &mut dx, rows, o, i, false);
        dx
    }

    pub fn backward_params(&self, grad: &mut Linear<T>, x: &[T], dy: &[T], rows: usize) {
        let (i, o) = (self.input_dim(), self.output_dim());
        matmul_tn(x, dy, &mut grad.weight.data, rows, i, o, true);
        for row in dy.chunks(o) {
            grad.bias.data.iter_mut().zip(row).for_each(|(g, d)| *g = *g + *d);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn identity(dim: usize) -> LayerNorm<T> {
        LayerNorm {
            gamma: Tensor::filled(&[dim], T::one()),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> LayerNorm<T> {
        LayerNorm {
            gamma: Tensor::zeros(&[dim]),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.gamma.len();
        let n = T::from_f64(d as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let rows = x.len() / d;
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * self.gamma.data[j] + self.beta.data[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, grad: &mut LayerNorm<T>, cache: &LayerNormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.gamma.len();
        let n = T::from_f64(d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for (r, rs) in cache.rstd.iter().enumerate() {
            let dyr = &dy[r * d..(r + 1) * d];
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for j in 0..d {
                grad.gamma.data[j] = grad.gamma.data[j] + dyr[j] * xh[j];
                grad.beta.data[j] = grad.beta.data[j] + dyr[j];
                let dxh = dyr[j] * self.gamma.data[j];
                mean_dxhat = mean_dxhat + dxh;
                mean_dxhat_xhat = mean_dxhat_xhat + dxh * xh[j];
            }
            mean_dxhat = mean_dxhat / n;
            mean_dxhat_xhat = mean_dxhat_xhat / n;
            for j in 0..d {
                let dxh = dyr[j] * self.gamma.data[j];
                dx[r * d + j] = *rs * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

/// Post-norm Transformer encoder layer with fused QKV projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer<T> {
    pub qkv: Linear<T>,
    pub attn_out: Linear<T>,
    pub attn_norm: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ffn_norm: LayerNorm<T>,
}

pub struct EncoderCache<T> {
    x: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    drop_attn: Option<Vec<T>>,
    attn_norm: LayerNormCache<T>,
    a: Vec<T>,
    f1: Vec<T>,
    g: Vec<T>,
    drop_ffn: Option<Vec<T>>,
    ffn_norm: LayerNormCache<T>,
}

impl<T: Real> EncoderLayer<T> {
    pub fn zeros(hidden: usize, ffn: usize) -> EncoderLayer<T> {
        EncoderLayer {
            qkv: Linear::zeros(hidden, 3 * hidden),
            attn_out: Linear::zeros(hidden, hidden),
            attn_norm: LayerNorm::zeros(hidden),
            ffn_in: Linear::zeros(hidden, ffn),
            ffn_out: Linear::zeros(ffn, hidden),
            ffn_norm: LayerNorm::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.attn_out.output_dim()
    }

    fn head_views(h: usize, head_dim: usize, seg: Segment, head: usize) -> (View, View, View, View) {
        let q = View::block(3 * h, seg.start, seg.len, head * head_dim, head_dim);
        let k = View::block(3 * h, seg.start, seg.len, h + head * head_dim, head_dim);
        let v = View::block(3 * h, seg.start, seg.len, 2 * h + head * head_dim, head_dim);
        let ctx = View::block(h, seg.start, seg.len, head * head_dim, head_dim);
        (q, k, v, ctx)
    }

    pub fn forward(
        &self,
        x: Vec<T>,
        segments: &[Segment],
        heads: usize,
        dropout: &mut Dropout<'_>,
    ) -> (Vec<T>, EncoderCache<T>) {
        let h = self.hidden();
        let rows = x.len() / h;
        let head_dim = h / heads;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
        let qkv = self.qkv.forward(&x, rows);
        let total: usize = segments.iter().map(|s| s.len * s.len).sum::<usize>() * heads;
        let mut probs = vec![T::zero(); total];
        let mut ctx = vec![T::zero(); rows * h];
        let mut off = 0;
        for seg in segments {
            let sq = seg.len * seg.len;
            for head in 0..heads {
                let (q, k, v, cv) = Self::head_views(h, head_dim, *seg, head);
                let pv = View {
                    offset: off,
                    ..View::dense(seg.len, seg.len)
                };
                gemm(scale, &qkv, q, &qkv, k.t(), T::zero(), &mut probs, pv);
                softmax_rows(&mut probs[off..off + sq], seg.len);
                gemm(T::one(), &probs, pv, &qkv, v, T::zero(), &mut ctx, cv);
                off += sq;
            }
        }
        let mut o = self.attn_out.forward(&ctx, rows);
        let drop_attn = dropout.mask(o.len());
        apply_dropout(&mut o, &drop_attn);
        o.iter_mut().zip(&x).for_each(|(v, xi)| *v = *v + *xi);
        let (a, attn_norm) = self.attn_norm.forward(&o);
        let f1 = self.ffn_in.forward(&a, rows);
        let g: Vec<T> = f1.iter().map(|v| gelu(*v)).collect();
        let mut f2 = self.ffn_out.forward(&g, rows);
        let drop_ffn = dropout.mask(f2.len());
        apply_dropout(&mut f2, &drop_ffn);
        f2.iter_mut().zip(&a).for_each(|(v, ai)| *v = *v + *ai);
        let (y, ffn_norm) = self.ffn_norm.forward(&f2);
        let cache = EncoderCache {
            x,
            qkv,
            probs,
            ctx,
            drop_attn,
            attn_norm,
            a,
            f1,
            g,
            drop_ffn,
            ffn_norm,
        };
        (y, cache)
    }

    pub fn backward(
        &self,
        grad: &mut EncoderLayer<T>,
        cache: &EncoderCache<T>,
        dy: &[T],
        segments: &[Segment],
        heads: usize,
    ) -> Vec<T> {
        let h = self.hidden();
        let rows = dy.len() / h;
        let head_dim = h / heads;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());

        let dy_pre = self.ffn_norm.backward(&mut grad.ffn_norm, &cache.ffn_norm, dy);
        let mut df2 = dy_pre.clone();
        apply_dropout(&mut df2, &cache.drop_ffn);
        let mut dg = self.ffn_out.backward(&mut grad.ffn_out, &cache.g, &df2, rows);
        dg.iter_mut().zip(&cache.f1).for_each(|(d, f)| *d = *d * gelu_grad(*f));
        let mut da = self.ffn_in.backward(&mut grad.ffn_in, &cache.a, &dg, rows);
        da.iter_mut().zip(&dy_pre).for_each(|(d, r)| *d = *d + *r);

        let da_pre = self.attn_norm.backward(&mut grad.attn_norm, &cache.attn_norm, &da);
        let mut do_ = da_pre.clone();
        apply_dropout(&mut do_, &cache.drop_attn);
        let dctx = self.attn_out.backward(&mut grad.attn_out, &cache.ctx, &do_, rows);

        let mut dqkv = vec![T::zero(); rows * 3 * h];
        let max_sq = segments.iter().map(|s| s.len * s.len).max().unwrap_or(0);
        let mut dp = vec![T::zero(); max_sq];
        let mut off = 0;
        for seg in segments {
            let n = seg.len;
            let sq = n * n;
            let dpv = View::dense(n, n);
            for head in 0..heads {
                let (q, k, v, cv) = Self::head_views(h, head_dim, *seg, head);
                let pv = View {
                    offset: off,
                    ..View::dense(n, n)
                };
                gemm(T::one(), &dctx, cv, &cache.qkv, v.t(), T::zero(), &mut dp, dpv);
                gemm(T::one(), &cache.probs, pv.t(), &dctx, cv, T::zero(), &mut dqkv, v);
                let p = &cache.probs[off..off + sq];
                for r in 0..n {
                    let pr = &p[r * n..(r + 1) * n];
                    let dr = &mut dp[r * n..(r + 1) * n];
                    let dot: T = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
                    dr.iter_mut().zip(pr).for_each(|(d, pi)| *d = *pi * (*d - dot));
                }
                gemm(scale, &dp, dpv, &cache.qkv, k, T::zero(), &mut dqkv, q);
                gemm(scale, &dp, dpv.t(), &cache.qkv, q, T::zero(), &mut dqkv, k);
                off += sq;
            }
        }
        let mut dx = self.qkv.backward(&mut grad.qkv, &cache.x, &dqkv, rows);
        dx.iter_mut().zip(&da_pre).for_each(|(d, r)| *d = *d + *r);
        dx
    }
}
