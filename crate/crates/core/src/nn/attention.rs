use ndarray::{s, Array2, Axis};

use super::layers::{softmax_rows, Linear};
use crate::error::{Error, Result};

/// Scaled dot-product attention `softmax(Q K^T / sqrt(h)) V`.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() {
        return Err(Error::Shape(format!(
            "attention got Q {:?}, K {:?}, V {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    Ok(attention_weights(q, k).dot(v))
}

/// Row-stochastic attention matrix.
pub fn attention_weights(q: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    softmax_rows(&mut scores);
    scores
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl MultiHeadAttention {
    fn head_width(&self) -> usize {
        self.query.out_dim() / self.n_heads
    }

    /// Self-attention over the rows of `x`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let h = self.head_width();
        let mut concat = Array2::zeros(q.raw_dim());
        let mut weights = Vec::with_capacity(self.n_heads);
        for head in 0..self.n_heads {
            let cols = s![.., head * h..(head + 1) * h];
            let qh = q.slice(cols).to_owned();
            let kh = k.slice(cols).to_owned();
            let a = attention_weights(&qh, &kh);
            concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            weights.push(a);
        }
        let out = self.output.forward(&concat);
        (
            out,
            AttentionCache {
                q,
                k,
                v,
                weights,
                concat,
            },
        )
    }

    pub fn backward(
        &self,
        x: &Array2<f64>,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        grad: &mut MultiHeadAttention,
    ) -> Array2<f64> {
        let dconcat = self.output.backward(&cache.concat, dy, &mut grad.output);
        let h = self.head_width();
        let scale = 1.0 / (h as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (head, a) in cache.weights.iter().enumerate() {
            let cols = s![.., head * h..(head + 1) * h];
            let dout = dconcat.slice(cols);
            let vh = cache.v.slice(cols);
            let da = dout.dot(&vh.t());
            dv.slice_mut(cols).assign(&a.t().dot(&dout));
            // softmax backward, row-wise
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dscores = a * &(&da - &row_dot) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.query.backward(x, &dq, &mut grad.query);
        dx += &self.key.backward(x, &dk, &mut grad.key);
        dx += &self.value.backward(x, &dv, &mut grad.value);
        dx
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        self.query.tensors(&format!("{prefix}.query"), out);
        self.key.tensors(&format!("{prefix}.key"), out);
        self.value.tensors(&format!("{prefix}.value"), out);
        self.output.tensors(&format!("{prefix}.output"), out);
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        self.query.tensors_mut(&format!("{prefix}.query"), out);
        self.key.tensors_mut(&format!("{prefix}.key"), out);
        self.value.tensors_mut(&format!("{prefix}.value"), out);
        self.output.tensors_mut(&format!("{prefix}.output"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain loops, no matrix products.
    fn naive_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let (n, h) = q.dim();
        let m = k.nrows();
        let mut out = Array2::zeros((n, v.ncols()));
        for i in 0..n {
            let mut scores = vec![0.0; m];
            for (j, s) in scores.iter_mut().enumerate() {
                for c in 0..h {
                    *s += q[[i, c]] * k[[j, c]];
                }
                *s /= (h as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..m {
                for c in 0..v.ncols() {
                    out[[i, c]] += exps[j] / total * v[[j, c]];
                }
            }
        }
        out
    }

    #[test]
    fn single_token_returns_value() {
        let q = ndarray::arr2(&[[0.3, -1.0]]);
        let v = ndarray::arr2(&[[4.0, 5.0]]);
        assert_eq!(attention(&q, &q, &v).unwrap(), v);
    }

    #[test]
    fn zero_query_averages_values() {
        let q = Array2::zeros((3, 2));
        let k = ndarray::arr2(&[[1.0, 2.0], [3.0, -1.0], [0.0, 5.0]]);
        let v = ndarray::arr2(&[[1.0, 0.0], [2.0, 3.0], [6.0, 3.0]]);
        let out = attention(&q, &k, &v).unwrap();
        for row in out.rows() {
            assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = || Array2::from_shape_simple_fn((3, 4), || rng.random_range(-2.0..2.0));
        let (q, k, v) = (m(), m(), m());
        let fast = attention(&q, &k, &v).unwrap();
        let slow = naive_attention(&q, &k, &v);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(
            attention(&q, &Array2::zeros((3, 2)), &v),
            Err(Error::Shape(_))
        ));
    }
}
