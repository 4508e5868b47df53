//! Masked bidirectional LSTM.
//!
//! Gates use the classic formulation without peepholes: input, forget,
//! cell and output gates in that order along the `4H` axis. Steps past a
//! sequence's length leave its state untouched, so the backward direction
//! effectively starts at the last real token and trailing padding has no
//! influence on any output.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::he_normal;
use super::tensors::{join, push_mut, push_ref, TensorKind, TensorMut, TensorRef, Tensors};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `in × 4H`
    pub w_input: Array2<f64>,
    /// `H × 4H`
    pub w_hidden: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmDirection {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmDirection {
            w_input: he_normal(rng, input, (input, 4 * hidden)),
            w_hidden: he_normal(rng, hidden, (hidden, 4 * hidden)),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }
}

impl Tensors for LstmDirection {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        push_ref(out, prefix, "w_input", TensorKind::Weight, &self.w_input);
        push_ref(out, prefix, "w_hidden", TensorKind::Weight, &self.w_hidden);
        push_ref(out, prefix, "bias", TensorKind::Bias, &self.bias);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        push_mut(out, prefix, "w_input", TensorKind::Weight, &mut self.w_input);
        push_mut(out, prefix, "w_hidden", TensorKind::Weight, &mut self.w_hidden);
        push_mut(out, prefix, "bias", TensorKind::Bias, &mut self.bias);
    }
}

#[derive(Debug, Clone)]
struct Step {
    t: usize,
    active: Vec<bool>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates `[i, f, g, o]`, `B × 4H`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DirectionCache {
    steps: Vec<Step>,
}

fn flatten_time(x: &Array3<f64>) -> Array2<f64> {
    let (b, t, d) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, d))
        .expect("contiguous")
}

impl LstmDirection {
    /// Runs over `x` (`B × T × in`) in the given time order.
    fn forward(&self, x: &Array3<f64>, lengths: &[usize], reverse: bool) -> (Array3<f64>, Array2<f64>, DirectionCache) {
        let (b, t_len, _) = x.dim();
        let hd = self.hidden();
        // input projection of every step at once: (B·T) × 4H
        let projected = flatten_time(x).dot(&self.w_input);
        let proj = projected.as_slice().expect("fresh array");
        let bias = self.bias.as_slice().expect("1-d");
        let mut h = Array2::<f64>::zeros((b, hd));
        let mut c = Array2::<f64>::zeros((b, hd));
        let mut out = Array3::zeros((b, t_len, hd));
        let mut steps = Vec::with_capacity(t_len);
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            if !active.iter().any(|&a| a) {
                continue;
            }
            let mut gates = h.dot(&self.w_hidden);
            let h_prev = h.clone();
            let c_prev = c.clone();
            let mut tanh_c = Array2::<f64>::zeros((b, hd));
            for row in 0..b {
                if !active[row] {
                    continue;
                }
                let g = gates.row_mut(row).into_slice().expect("contiguous row");
                let p = &proj[(row * t_len + t) * 4 * hd..(row * t_len + t + 1) * 4 * hd];
                for k in 0..4 * hd {
                    let z = g[k] + p[k] + bias[k];
                    g[k] = if (2 * hd..3 * hd).contains(&k) { z.tanh() } else { sigmoid(z) };
                }
                let hr = h.row_mut(row).into_slice().expect("contiguous row");
                let cr = c.row_mut(row).into_slice().expect("contiguous row");
                let tr = tanh_c.row_mut(row).into_slice().expect("contiguous row");
                for j in 0..hd {
                    let cn = g[hd + j] * cr[j] + g[j] * g[2 * hd + j];
                    cr[j] = cn;
                    tr[j] = cn.tanh();
                    hr[j] = g[3 * hd + j] * tr[j];
                }
                out.slice_mut(s![row, t, ..]).assign(&h.row(row));
            }
            steps.push(Step {
                t,
                active,
                h_prev,
                c_prev,
                gates,
                tanh_c,
            });
        }
        (out, h, DirectionCache { steps })
    }

    /// Back-propagates `d_out` (final state) and `d_out_steps` (per-step outputs).
    fn backward(
        &self,
        x: &Array3<f64>,
        cache: &DirectionCache,
        d_out: Option<ArrayView2<'_, f64>>,
        d_out_steps: Option<&Array3<f64>>,
        grad: &mut LstmDirection,
    ) -> Array3<f64> {
        let (b, t_len, input) = x.dim();
        let hd = self.hidden();
        let mut dh: Array2<f64> = match d_out {
            Some(d) => d.to_owned(),
            None => Array2::zeros((b, hd)),
        };
        let mut dc: Array2<f64> = Array2::zeros((b, hd));
        // gate gradients of every (row, step), zero where inactive
        let mut d_all = Array2::<f64>::zeros((b * t_len, 4 * hd));
        for step in cache.steps.iter().rev() {
            if let Some(d) = d_out_steps {
                for (row, &a) in step.active.iter().enumerate() {
                    if a {
                        let mut r = dh.row_mut(row);
                        r += &d.slice(s![row, step.t, ..]);
                    }
                }
            }
            let mut d_gates = Array2::zeros((b, 4 * hd));
            for row in 0..b {
                if !step.active[row] {
                    continue;
                }
                let g = step.gates.row(row).to_slice().expect("contiguous row");
                let tc = step.tanh_c.row(row).to_slice().expect("contiguous row");
                let cp = step.c_prev.row(row).to_slice().expect("contiguous row");
                let dg = d_gates.row_mut(row).into_slice().expect("contiguous row");
                let dhr = dh.row(row).to_slice().expect("contiguous row").to_vec();
                let dcr = dc.row_mut(row).into_slice().expect("contiguous row");
                for j in 0..hd {
                    let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let dct = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
                    dg[j] = dct * gg * i * (1.0 - i);
                    dg[hd + j] = dct * cp[j] * f * (1.0 - f);
                    dg[2 * hd + j] = dct * i * (1.0 - gg * gg);
                    dg[3 * hd + j] = dhr[j] * tc[j] * o * (1.0 - o);
                    dcr[j] = dct * f;
                }
            }
            grad.w_hidden += &step.h_prev.t().dot(&d_gates);
            let dh_prev = d_gates.dot(&self.w_hidden.t());
            for (row, &a) in step.active.iter().enumerate() {
                if a {
                    dh.row_mut(row).assign(&dh_prev.row(row));
                    d_all.row_mut(row * t_len + step.t).assign(&d_gates.row(row));
                }
            }
        }
        grad.w_input += &flatten_time(x).t().dot(&d_all);
        grad.bias += &d_all.sum_axis(Axis(0));
        d_all
            .dot(&self.w_input.t())
            .into_shape_with_order((b, t_len, input))
            .expect("row-major product")
    }
}

/// Bidirectional LSTM shared between source and target.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    x: Array3<f64>,
    fwd: DirectionCache,
    bwd: DirectionCache,
}

/// Outputs of a bidirectional pass.
#[derive(Debug, Clone)]
pub struct BiLstmOutput {
    /// `B × T × 2H`; zero at masked positions.
    pub sequence: Array3<f64>,
    /// `B × 2H`: final forward state then final backward state.
    pub last: Array2<f64>,
}

impl BiLstm {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden_per_direction: usize) -> Self {
        BiLstm {
            forward: LstmDirection::new(rng, input, hidden_per_direction),
            backward: LstmDirection::new(rng, input, hidden_per_direction),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden() + self.backward.hidden()
    }

    pub fn forward(&self, x: &Array3<f64>, lengths: &[usize]) -> (BiLstmOutput, BiLstmCache) {
        let (of, hf, cf) = self.forward.forward(x, lengths, false);
        let (ob, hb, cb) = self.backward.forward(x, lengths, true);
        let h = self.forward.hidden();
        let (b, t, _) = x.dim();
        let mut sequence = Array3::zeros((b, t, self.output_dim()));
        sequence.slice_mut(s![.., .., ..h]).assign(&of);
        sequence.slice_mut(s![.., .., h..]).assign(&ob);
        let mut last = Array2::zeros((b, self.output_dim()));
        last.slice_mut(s![.., ..h]).assign(&hf);
        last.slice_mut(s![.., h..]).assign(&hb);
        (
            BiLstmOutput { sequence, last },
            BiLstmCache {
                x: x.clone(),
                fwd: cf,
                bwd: cb,
            },
        )
    }

    /// Gradient w.r.t. the input given gradients of either output.
    pub fn backward(
        &self,
        cache: &BiLstmCache,
        d_sequence: Option<&Array3<f64>>,
        d_last: Option<&Array2<f64>>,
        grad: &mut BiLstm,
    ) -> Array3<f64> {
        let h = self.forward.hidden();
        let split_seq = |lo: usize, hi: usize| d_sequence.map(|d| d.slice(s![.., .., lo..hi]).to_owned());
        let ds_f = split_seq(0, h);
        let ds_b = split_seq(h, 2 * h);
        let dl_f = d_last.map(|d| d.slice(s![.., ..h]));
        let dl_b = d_last.map(|d| d.slice(s![.., h..]));
        let dx_f = self
            .forward
            .backward(&cache.x, &cache.fwd, dl_f, ds_f.as_ref(), &mut grad.forward);
        let dx_b = self
            .backward
            .backward(&cache.x, &cache.bwd, dl_b, ds_b.as_ref(), &mut grad.backward);
        dx_f + dx_b
    }
}

impl Tensors for BiLstm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.forward.collect(&join(prefix, "forward"), out);
        self.backward.collect(&join(prefix, "backward"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.forward.collect_mut(&join(prefix, "forward"), out);
        self.backward.collect_mut(&join(prefix, "backward"), out);
    }
}
