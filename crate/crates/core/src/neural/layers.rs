//! Dense, batch-normalization and pre-activation layers.
//!
//! Every layer works on row-major `N × features` matrices; time-distributed
//! use stacks the unmasked time steps of a batch as rows.

use ndarray::{Array1, Array2, Axis};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensors::{push_mut, push_ref, TensorKind, TensorMut, TensorRef, Tensors};

/// Batch-norm variance floor.
pub const BN_EPSILON: f64 = 1e-3;
/// Weight of the old value in running-statistic updates.
pub const BN_MOMENTUM: f64 = 0.99;

/// How a forward pass treats batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardMode {
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
    pub dropout: bool,
}

impl ForwardMode {
    pub const TRAIN: ForwardMode = ForwardMode {
        batch_stats: true,
        dropout: true,
    };
    pub const INFER: ForwardMode = ForwardMode {
        batch_stats: false,
        dropout: false,
    };
    /// Batch statistics without dropout; deterministic but batch-dependent.
    pub const BATCH_STATS: ForwardMode = ForwardMode {
        batch_stats: true,
        dropout: false,
    };
}

pub(crate) fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, shape: (usize, usize)) -> Array2<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn(shape, || normal.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: he_normal(rng, fan_in, (fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

impl Tensors for Dense {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        push_ref(out, prefix, "weight", TensorKind::Weight, &self.weight);
        push_ref(out, prefix, "bias", TensorKind::Bias, &self.bias);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        push_mut(out, prefix, "weight", TensorKind::Weight, &mut self.weight);
        push_mut(out, prefix, "bias", TensorKind::Bias, &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
    /// Batch mean and variance, recorded when batch statistics were used.
    pub stats: Option<(Array1<f64>, Array1<f64>)>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, batch_stats: bool) -> (Array2<f64>, BatchNormCache) {
        let d = x.ncols();
        let mut x_hat = x.as_standard_layout().into_owned();
        let data = x_hat.as_slice_mut().expect("standard layout");
        let (mean, var, stats) = if batch_stats {
            let n = x.nrows().max(1) as f64;
            let mut mean = vec![0.0; d];
            for row in data.chunks_exact(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for row in data.chunks_exact(d) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let (mean, var) = (Array1::from(mean), Array1::from(var));
            (mean.clone(), var.clone(), Some((mean, var)))
        } else {
            (self.running_mean.clone(), self.running_var.clone(), None)
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let mut y = Array2::zeros(x.dim());
        let out = y.as_slice_mut().expect("fresh array");
        let (m, s) = (mean.as_slice().expect("1-d"), inv_std.as_slice().expect("1-d"));
        let (g, b) = (
            self.gamma.as_slice().expect("1-d"),
            self.beta.as_slice().expect("1-d"),
        );
        for (h, o) in data.chunks_exact_mut(d).zip(out.chunks_exact_mut(d)) {
            for j in 0..d {
                h[j] = (h[j] - m[j]) * s[j];
                o[j] = h[j] * g[j] + b[j];
            }
        }
        (
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_stats,
                stats,
            },
        )
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Array2<f64>, grad: &mut BatchNorm) -> Array2<f64> {
        let d = self.gamma.len();
        let mut dx = dy.as_standard_layout().into_owned();
        let g_rows = dx.as_slice_mut().expect("standard layout");
        let h_rows = cache.x_hat.as_slice().expect("standard layout");
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for (g, h) in g_rows.chunks_exact(d).zip(h_rows.chunks_exact(d)) {
            for j in 0..d {
                dgamma[j] += g[j] * h[j];
                dbeta[j] += g[j];
            }
        }
        let scale: Vec<f64> = self.gamma.iter().zip(&cache.inv_std).map(|(g, s)| g * s).collect();
        if cache.batch_stats {
            // dx = γ·σ⁻¹/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
            let n = (g_rows.len() / d.max(1)).max(1) as f64;
            for (g, h) in g_rows.chunks_exact_mut(d).zip(h_rows.chunks_exact(d)) {
                for j in 0..d {
                    g[j] = (g[j] * n - dbeta[j] - h[j] * dgamma[j]) * scale[j] / n;
                }
            }
        } else {
            for g in g_rows.chunks_exact_mut(d) {
                for j in 0..d {
                    g[j] *= scale[j];
                }
            }
        }
        grad.gamma += &Array1::from(dgamma);
        grad.beta += &Array1::from(dbeta);
        dx
    }

    pub fn update_running(&mut self, cache: &BatchNormCache, momentum: f64) {
        if let Some((mean, var)) = &cache.stats {
            self.running_mean = &self.running_mean * momentum + mean * (1.0 - momentum);
            self.running_var = &self.running_var * momentum + var * (1.0 - momentum);
        }
    }
}

impl Tensors for BatchNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        push_ref(out, prefix, "gamma", TensorKind::Scale, &self.gamma);
        push_ref(out, prefix, "beta", TensorKind::Shift, &self.beta);
        push_ref(out, prefix, "running_mean", TensorKind::RunningMean, &self.running_mean);
        push_ref(out, prefix, "running_var", TensorKind::RunningVar, &self.running_var);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        push_mut(out, prefix, "gamma", TensorKind::Scale, &mut self.gamma);
        push_mut(out, prefix, "beta", TensorKind::Shift, &mut self.beta);
        push_mut(out, prefix, "running_mean", TensorKind::RunningMean, &mut self.running_mean);
        push_mut(out, prefix, "running_var", TensorKind::RunningVar, &mut self.running_var);
    }
}

/// Inverted-dropout mask: entries are 0 or `1/(1−p)`.
pub(crate) fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let threshold = (keep * 4294967296.0) as u64;
    let data: Vec<f64> = (0..shape.0 * shape.1)
        .map(|_| if u64::from(rng.next_u32()) < threshold { scale } else { 0.0 })
        .collect();
    Array2::from_shape_vec(shape, data).expect("length matches shape")
}

/// Batch norm → dropout → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct PreAct {
    pub norm: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct PreActCache {
    pub norm: BatchNormCache,
    mask: Option<Array2<f64>>,
    /// ReLU input.
    pre: Array2<f64>,
}

impl PreAct {
    pub fn new(dim: usize) -> Self {
        PreAct {
            norm: BatchNorm::new(dim),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mode: ForwardMode,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, PreActCache) {
        let (mut pre, norm) = self.norm.forward(x, mode.batch_stats);
        let mask = (mode.dropout && dropout > 0.0).then(|| dropout_mask(rng, pre.dim(), dropout));
        if let Some(m) = &mask {
            let m = m.as_slice().expect("fresh array");
            for (v, k) in pre.as_slice_mut().expect("fresh array").iter_mut().zip(m) {
                *v *= k;
            }
        }
        let out = pre.mapv(|v| v.max(0.0));
        (out, PreActCache { norm, mask, pre })
    }

    pub fn backward(&self, cache: &PreActCache, dy: &Array2<f64>, grad: &mut PreAct) -> Array2<f64> {
        let mut d = dy.as_standard_layout().into_owned();
        let g = d.as_slice_mut().expect("standard layout");
        let pre = cache.pre.as_slice().expect("standard layout");
        match &cache.mask {
            Some(m) => {
                for ((g, &p), &k) in g.iter_mut().zip(pre).zip(m.as_slice().expect("standard layout")) {
                    *g = if p > 0.0 { *g * k } else { 0.0 };
                }
            }
            None => {
                for (g, &p) in g.iter_mut().zip(pre) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
        }
        self.norm.backward(&cache.norm, &d, &mut grad.norm)
    }
}

impl Tensors for PreAct {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.norm.collect(&super::tensors::join(prefix, "norm"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.norm.collect_mut(&super::tensors::join(prefix, "norm"), out);
    }
}

/// Pre-activated dense layer: batch norm → dropout → ReLU → dense.
#[derive(Debug, Clone, PartialEq)]
pub struct PreActDense {
    pub act: PreAct,
    pub dense: Dense,
}

#[derive(Debug, Clone)]
pub struct PreActDenseCache {
    pub act: PreActCache,
    /// Dense input (ReLU output).
    hidden: Array2<f64>,
}

impl PreActDense {
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        PreActDense {
            act: PreAct::new(fan_in),
            dense: Dense::new(rng, fan_in, fan_out),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mode: ForwardMode,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, PreActDenseCache) {
        let (hidden, act) = self.act.forward(x, mode, dropout, rng);
        let y = self.dense.forward(&hidden);
        (y, PreActDenseCache { act, hidden })
    }

    pub fn backward(&self, cache: &PreActDenseCache, dy: &Array2<f64>, grad: &mut PreActDense) -> Array2<f64> {
        let dh = self.dense.backward(&cache.hidden, dy, &mut grad.dense);
        self.act.backward(&cache.act, &dh, &mut grad.act)
    }

    pub fn update_running(&mut self, cache: &PreActDenseCache, momentum: f64) {
        self.act.norm.update_running(&cache.act.norm, momentum);
    }
}

impl Tensors for PreActDense {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.act.collect(prefix, out);
        self.dense.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.act.collect_mut(prefix, out);
        self.dense.collect_mut(prefix, out);
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn batch_norm_train_normalizes_columns() {
        let bn = BatchNorm::new(2);
        let x = ndarray::array![[1.0, 10.0], [3.0, 20.0], [5.0, 30.0]];
        let (y, cache) = bn.forward(&x, true);
        for col in y.columns() {
            assert!(col.sum().abs() < 1e-12);
        }
        let (mean, var) = cache.stats.unwrap();
        assert_eq!(mean.to_vec(), vec![3.0, 20.0]);
        assert!((var[0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut bn = BatchNorm::new(1);
        let x = ndarray::array![[2.0], [4.0]];
        let (_, cache) = bn.forward(&x, true);
        bn.update_running(&cache, 0.99);
        assert!((bn.running_mean[0] - 0.03).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.99 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_inverted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = dropout_mask(&mut rng, (200, 50), 0.1);
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
        let mean = m.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&ndarray::array![[1000.0, 0.0, -5.0], [0.1, 0.2, 0.3]]);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
