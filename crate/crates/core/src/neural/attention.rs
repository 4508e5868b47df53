//! Masked averaging and additive co-attention.
//!
//! For a key sequence `K` and a query `g` (the masked average of the other
//! component's sequence):
//!
//! ```text
//! e_i = w3ᵀ · relu(W1ᵀ k_i + W2ᵀ g + b)
//! a   = softmax(e) over unmasked positions, 0 elsewhere
//! c   = Σ_i a_i k_i
//! ```

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::he_normal;
use super::tensors::{push_mut, push_ref, TensorKind, TensorMut, TensorRef, Tensors};
use crate::{Error, Result};

/// Mean of the rows of `k` whose mask entry is nonzero.
pub fn masked_average(k: ArrayView2<'_, f64>, mask: &[u8]) -> Result<Array1<f64>> {
    let n = mask.iter().filter(|&&m| m != 0).count();
    if n == 0 {
        return Err(Error::Data("masked average over an all-zero mask".into()));
    }
    let mut sum = Array1::zeros(k.ncols());
    for (row, &m) in k.rows().into_iter().zip(mask) {
        if m != 0 {
            sum += &row;
        }
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `D × A`, applied to every key.
    pub w_key: Array2<f64>,
    /// `D × A`, applied to the query.
    pub w_query: Array2<f64>,
    /// Score vector, length `A`.
    pub w_score: Array1<f64>,
    pub bias: Array1<f64>,
}

impl AttentionParams {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, att: usize) -> Self {
        AttentionParams {
            w_key: he_normal(rng, dim, (dim, att)),
            w_query: he_normal(rng, dim, (dim, att)),
            w_score: he_normal(rng, att, (att, 1)).column(0).to_owned(),
            bias: Array1::zeros(att),
        }
    }

    pub fn zeros(dim: usize, att: usize) -> Self {
        AttentionParams {
            w_key: Array2::zeros((dim, att)),
            w_query: Array2::zeros((dim, att)),
            w_score: Array1::zeros(att),
            bias: Array1::zeros(att),
        }
    }
}

impl Tensors for AttentionParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        push_ref(out, prefix, "w_key", TensorKind::Weight, &self.w_key);
        push_ref(out, prefix, "w_query", TensorKind::Weight, &self.w_query);
        push_ref(out, prefix, "w_score", TensorKind::Weight, &self.w_score);
        push_ref(out, prefix, "bias", TensorKind::Bias, &self.bias);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        push_mut(out, prefix, "w_key", TensorKind::Weight, &mut self.w_key);
        push_mut(out, prefix, "w_query", TensorKind::Weight, &mut self.w_query);
        push_mut(out, prefix, "w_score", TensorKind::Weight, &mut self.w_score);
        push_mut(out, prefix, "bias", TensorKind::Bias, &mut self.bias);
    }
}

/// Per-instance intermediate values.
#[derive(Debug, Clone)]
pub struct AttentionStep {
    /// Pre-ReLU hidden values, `T × A`.
    pub hidden: Array2<f64>,
    pub scores: Array1<f64>,
    pub weights: Array1<f64>,
    pub context: Array1<f64>,
}

/// Additive attention of one key sequence against one query.
pub fn attention(
    k: ArrayView2<'_, f64>,
    g: ArrayView1<'_, f64>,
    mask: &[u8],
    params: &AttentionParams,
) -> Result<AttentionStep> {
    if !mask.iter().any(|&m| m != 0) {
        return Err(Error::Data("attention over an all-zero mask".into()));
    }
    let query = g.dot(&params.w_query) + &params.bias;
    let hidden = k.dot(&params.w_key) + &query;
    let scores = hidden.mapv(|v| v.max(0.0)).dot(&params.w_score);
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0)
        .fold(f64::NEG_INFINITY, |acc, (&e, _)| acc.max(e));
    let mut weights = Array1::zeros(scores.len());
    for ((w, &e), &m) in weights.iter_mut().zip(&scores).zip(mask) {
        if m != 0 {
            *w = (e - max).exp();
        }
    }
    let total = weights.sum();
    weights /= total;
    let context = weights.dot(&k);
    Ok(AttentionStep {
        hidden,
        scores,
        weights,
        context,
    })
}

/// Gradients of one attention step: returns `(dK, dg)` and accumulates
/// parameter gradients.
pub fn attention_backward(
    k: ArrayView2<'_, f64>,
    g: ArrayView1<'_, f64>,
    mask: &[u8],
    params: &AttentionParams,
    step: &AttentionStep,
    d_context: ArrayView1<'_, f64>,
    grad: &mut AttentionParams,
) -> (Array2<f64>, Array1<f64>) {
    // c = Σ a_i k_i
    let mut dk = step.weights.view().insert_axis(Axis(1)).dot(&d_context.insert_axis(Axis(0)));
    let d_weights = k.dot(&d_context);
    let inner: f64 = step.weights.dot(&d_weights);
    let mut d_scores = Array1::zeros(step.scores.len());
    for i in 0..d_scores.len() {
        if mask[i] != 0 {
            d_scores[i] = step.weights[i] * (d_weights[i] - inner);
        }
    }
    let relu = step.hidden.mapv(|v| v.max(0.0));
    grad.w_score += &relu.t().dot(&d_scores);
    let mut d_hidden = d_scores.view().insert_axis(Axis(1)).dot(&params.w_score.view().insert_axis(Axis(0)));
    ndarray::Zip::from(&mut d_hidden).and(&step.hidden).for_each(|d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    grad.w_key += &k.t().dot(&d_hidden);
    dk += &d_hidden.dot(&params.w_key.t());
    let d_query = d_hidden.sum_axis(Axis(0));
    grad.bias += &d_query;
    grad.w_query += &g.insert_axis(Axis(1)).dot(&d_query.view().insert_axis(Axis(0)));
    let dg = params.w_query.dot(&d_query);
    (dk, dg)
}

pub(crate) fn prefix_mask(len: usize, t: usize) -> Vec<u8> {
    (0..t).map(|i| u8::from(i < len)).collect()
}

/// Batched masked average over `B × T × D` with prefix lengths.
pub fn masked_average_batch(k: &Array3<f64>, lengths: &[usize]) -> Result<Array2<f64>> {
    let (b, t, d) = k.dim();
    let mut out = Array2::zeros((b, d));
    for row in 0..b {
        let avg = masked_average(k.index_axis(Axis(0), row), &prefix_mask(lengths[row], t))?;
        out.row_mut(row).assign(&avg);
    }
    Ok(out)
}

/// Adds the masked-average gradient `dg` (`B × D`) into `dk`.
pub fn masked_average_backward(dk: &mut Array3<f64>, lengths: &[usize], dg: &Array2<f64>) {
    for (row, &len) in lengths.iter().enumerate() {
        let share = dg.row(row).to_owned() / len as f64;
        for t in 0..len {
            let mut cell = dk.slice_mut(ndarray::s![row, t, ..]);
            cell += &share;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn masked_average_examples() {
        let k = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(masked_average(k.view(), &[1, 1]).unwrap().to_vec(), vec![2.0, 3.0]);
        let k = array![[1.0, 2.0], [9.0, 9.0]];
        assert_eq!(masked_average(k.view(), &[1, 0]).unwrap().to_vec(), vec![1.0, 2.0]);
        assert!(masked_average(k.view(), &[0, 0]).is_err());
    }

    #[test]
    fn degenerate_parameters_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = he_normal(&mut rng, 3, (4, 3));
        let g = array![0.3, -0.2, 0.5];
        let mut p = AttentionParams::zeros(3, 3);
        p.w_score = array![0.4, -1.0, 2.0];
        let mask = [1, 1, 1, 0];
        let step = attention(k.view(), g.view(), &mask, &p).unwrap();
        for i in 0..3 {
            assert!((step.weights[i] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(step.weights[3], 0.0);
        let avg = masked_average(k.view(), &mask).unwrap();
        for (a, b) in step.context.iter().zip(&avg) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unmasked_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = he_normal(&mut rng, 3, (3, 3));
        let p = AttentionParams::new(&mut rng, 3, 3);
        let step = attention(k.view(), array![1.0, 0.0, 0.0].view(), &[0, 1, 0], &p).unwrap();
        assert_eq!(step.weights.to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(step.context, k.row(1));
        assert!(attention(k.view(), array![1.0, 0.0, 0.0].view(), &[0, 0, 0], &p).is_err());
    }
}
