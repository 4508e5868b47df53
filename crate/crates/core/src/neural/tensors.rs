//! Named views over every tensor of a parameter structure.

use ndarray::{Array, Dimension};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
    /// Non-parameter tensors wrapped for gradient checking.
    Input,
}

impl TensorKind {
    pub fn trainable(self) -> bool {
        matches!(self, TensorKind::Weight | TensorKind::Bias | TensorKind::Scale | TensorKind::Shift)
    }

    /// Only weight matrices (and score vectors) carry the L2 penalty.
    pub fn regularized(self) -> bool {
        self == TensorKind::Weight
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TensorKind::Weight => "weight",
            TensorKind::Bias => "bias",
            TensorKind::Scale => "scale",
            TensorKind::Shift => "shift",
            TensorKind::RunningMean => "running_mean",
            TensorKind::RunningVar => "running_var",
            TensorKind::Input => "input",
        }
    }
}

pub struct TensorRef<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push_ref<'a, D: Dimension>(
    out: &mut Vec<TensorRef<'a>>,
    prefix: &str,
    name: &str,
    kind: TensorKind,
    a: &'a Array<f64, D>,
) {
    out.push(TensorRef {
        name: join(prefix, name),
        kind,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameter tensors are contiguous"),
    });
}

pub(crate) fn push_mut<'a, D: Dimension>(
    out: &mut Vec<TensorMut<'a>>,
    prefix: &str,
    name: &str,
    kind: TensorKind,
    a: &'a mut Array<f64, D>,
) {
    let shape = a.shape().to_vec();
    out.push(TensorMut {
        name: join(prefix, name),
        kind,
        shape,
        data: a.as_slice_mut().expect("parameter tensors are contiguous"),
    });
}

/// Structures whose tensors can be enumerated in a fixed order.
pub trait Tensors {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>);

    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// `self += other`, tensor by tensor.
    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(b.data).for_each(|(x, y)| *x += y);
        }
    }
}

impl<D: Dimension> Tensors for Array<f64, D> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        push_ref(out, prefix, "value", TensorKind::Input, self);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        push_mut(out, prefix, "value", TensorKind::Input, self);
    }
}

impl<A: Tensors, B: Tensors> Tensors for (A, B) {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.0.collect(&join(prefix, "0"), out);
        self.1.collect(&join(prefix, "1"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.0.collect_mut(&join(prefix, "0"), out);
        self.1.collect_mut(&join(prefix, "1"), out);
    }
}

impl<T: Tensors> Tensors for Vec<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        for (i, t) in self.iter().enumerate() {
            t.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        for (i, t) in self.iter_mut().enumerate() {
            t.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

impl<T: Tensors> Tensors for Option<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        if let Some(t) = self {
            t.collect(prefix, out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        if let Some(t) = self {
            t.collect_mut(prefix, out);
        }
    }
}
