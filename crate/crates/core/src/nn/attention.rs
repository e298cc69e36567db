//! Multi-head self-attention over batched token sequences.
//!
//! Tokens arrive as a `(batch * seq, dim)` matrix; attention is computed
//! independently per sample and per head.

use ndarray::{s, Array2};
use rand::Rng;

use super::{Linear, Params, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<F> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    pub n_heads: usize,
}

pub struct MhaCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Post-attention concatenation, input of the output projection.
    ctx: Array2<F>,
    /// Softmax matrices, one per `(sample, head)` in row-major order.
    probs: Vec<Array2<F>>,
    batch: usize,
    seq: usize,
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(dim: usize, n_heads: usize, rng: &mut impl Rng) -> Self {
        assert!(dim % n_heads == 0, "dim {dim} not divisible by heads {n_heads}");
        Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            n_heads,
        }
    }

    pub fn zeros(dim: usize, n_heads: usize) -> Self {
        Self {
            wq: Linear::zeros(dim, dim),
            wk: Linear::zeros(dim, dim),
            wv: Linear::zeros(dim, dim),
            wo: Linear::zeros(dim, dim),
            n_heads,
        }
    }

    /// `x`: `(batch * seq, dim)` tokens, sample-major.
    pub fn forward(&self, x: &Array2<F>, batch: usize, seq: usize) -> (Array2<F>, MhaCache<F>) {
        let dim = x.ncols();
        debug_assert_eq!(x.nrows(), batch * seq);
        let dh = dim / self.n_heads;
        let scale = F::from_f(1.0 / (dh as f64).sqrt());

        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);

        let mut ctx = Array2::zeros((batch * seq, dim));
        let mut probs = Vec::with_capacity(batch * self.n_heads);
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            for h in 0..self.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qs = q.slice(rows).slice_move(cols);
                let ks = k.slice(rows).slice_move(cols);
                let vs = v.slice(rows).slice_move(cols);
                let mut scores = qs.dot(&ks.t());
                scores.mapv_inplace(|v| v * scale);
                softmax_rows(&mut scores);
                let out = scores.dot(&vs);
                ctx.slice_mut(rows).slice_move(cols).assign(&out);
                probs.push(scores);
            }
        }
        let y = self.wo.forward(&ctx);
        (
            y,
            MhaCache {
                x: x.clone(),
                q,
                k,
                v,
                ctx,
                probs,
                batch,
                seq,
            },
        )
    }

    pub fn backward(&self, cache: &MhaCache<F>, dy: &Array2<F>) -> (Array2<F>, MultiHeadAttention<F>) {
        let dim = cache.x.ncols();
        let dh = dim / self.n_heads;
        let scale = F::from_f(1.0 / (dh as f64).sqrt());
        let (batch, seq) = (cache.batch, cache.seq);

        let (dctx, dwo) = self.wo.backward(&cache.ctx, dy);

        let mut dq = Array2::zeros(cache.q.dim());
        let mut dk = Array2::zeros(cache.k.dim());
        let mut dv = Array2::zeros(cache.v.dim());
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            for h in 0..self.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let p = &cache.probs[b * self.n_heads + h];
                let qs = cache.q.slice(rows).slice_move(cols);
                let ks = cache.k.slice(rows).slice_move(cols);
                let vs = cache.v.slice(rows).slice_move(cols);
                let dout = dctx.slice(rows).slice_move(cols);

                let dp = dout.dot(&vs.t());
                let dvs = p.t().dot(&dout);

                // Softmax backward per row: ds = p * (dp - sum(dp * p)).
                let mut ds = Array2::zeros(p.dim());
                for r in 0..seq {
                    let dot = dp
                        .row(r)
                        .iter()
                        .zip(p.row(r).iter())
                        .map(|(&a, &b)| a * b)
                        .sum::<F>();
                    for c in 0..seq {
                        ds[[r, c]] = p[[r, c]] * (dp[[r, c]] - dot) * scale;
                    }
                }

                let dqs = ds.dot(&ks);
                let dks = ds.t().dot(&qs);
                dq.slice_mut(rows).slice_move(cols).assign(&dqs);
                dk.slice_mut(rows).slice_move(cols).assign(&dks);
                dv.slice_mut(rows).slice_move(cols).assign(&dvs);
            }
        }

        let (dx_q, dwq) = self.wq.backward(&cache.x, &dq);
        let (dx_k, dwk) = self.wk.backward(&cache.x, &dk);
        let (dx_v, dwv) = self.wv.backward(&cache.x, &dv);
        let dx = dx_q + dx_k + dx_v;
        (
            dx,
            MultiHeadAttention {
                wq: dwq,
                wk: dwk,
                wv: dwv,
                wo: dwo,
                n_heads: self.n_heads,
            },
        )
    }
}

fn softmax_rows<F: Scalar>(x: &mut Array2<F>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

impl<F: Scalar> Params<F> for MultiHeadAttention<F> {
    fn zeros_like(&self) -> Self {
        Self {
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
            n_heads: self.n_heads,
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        for (name, lin) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            lin.visit(&mut |n, s, d| f(&format!("{name}.{n}"), s, d));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        for (name, lin) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
        ] {
            lin.visit_mut(&mut |n, s, d| f(&format!("{name}.{n}"), s, d));
        }
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        self.wq.zip_mut(&other.wq, f);
        self.wk.zip_mut(&other.wk, f);
        self.wv.zip_mut(&other.wv, f);
        self.wo.zip_mut(&other.wo, f);
    }
}
