//! Learned parameter tensors and the traversal used by optimizers,
//! gradient checks and checkpoint serialization.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::EncoderConfig;
use crate::scalar::Scalar;

pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct TensorMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

/// A collection of named tensors visited in a fixed order.
pub trait ParamSet<T: Scalar> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill(&mut self, v: T) {
        for t in self.tensors_mut() {
            t.data.fill(v);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, alpha: T)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(b.data).for_each(|(x, &y)| *x += alpha * y);
        }
    }

    fn scale(&mut self, alpha: T) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn zeros_like<T: Scalar, P: ParamSet<T> + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.fill(T::zero());
    z
}

fn push_ref<'a, T>(out: &mut Vec<TensorRef<'a, T>>, name: String, shape: &[usize], data: &'a [T]) {
    out.push(TensorRef {
        name,
        shape: shape.to_vec(),
        data,
    });
}

fn push_mut<'a, T>(out: &mut Vec<TensorMut<'a, T>>, name: String, shape: Vec<usize>, data: &'a mut [T]) {
    out.push(TensorMut { name, shape, data });
}

macro_rules! slice {
    ($a:expr) => {
        $a.as_slice().expect("parameter tensors are contiguous")
    };
}

macro_rules! slice_mut {
    ($a:expr) => {
        $a.as_slice_mut().expect("parameter tensors are contiguous")
    };
}

pub(crate) fn normal_array2<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(dist.sample(rng)))
}

pub(crate) fn normal_array1<T: Scalar, R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Array1<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array1::from_shape_simple_fn(n, || T::of(dist.sample(rng)))
}

/// Affine map `y = x · weight + bias` with `weight` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: normal_array2(inputs, outputs, std, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        push_ref(
            out,
            format!("{prefix}.weight"),
            self.weight.shape(),
            slice!(self.weight),
        );
        push_ref(out, format!("{prefix}.bias"), self.bias.shape(), slice!(self.bias));
    }

    fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        let ws = self.weight.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        push_mut(out, format!("{prefix}.weight"), ws, slice_mut!(self.weight));
        push_mut(out, format!("{prefix}.bias"), bs, slice_mut!(self.bias));
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        self.refs("head", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        self.muts("head", &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        push_ref(out, format!("{prefix}.gain"), self.gain.shape(), slice!(self.gain));
        push_ref(out, format!("{prefix}.bias"), self.bias.shape(), slice!(self.bias));
    }

    fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        let gs = self.gain.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        push_mut(out, format!("{prefix}.gain"), gs, slice_mut!(self.gain));
        push_mut(out, format!("{prefix}.bias"), bs, slice_mut!(self.bias));
    }
}

/// One post-layer-norm Transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub attn_norm: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
    pub ff_norm: LayerNorm<T>,
}

impl<T: Scalar> BlockParams<T> {
    pub fn init<R: Rng + ?Sized>(hidden: usize, ffn: usize, std: f64, rng: &mut R) -> Self {
        BlockParams {
            query: Linear::init(hidden, hidden, std, rng),
            key: Linear::init(hidden, hidden, std, rng),
            value: Linear::init(hidden, hidden, std, rng),
            output: Linear::init(hidden, hidden, std, rng),
            attn_norm: LayerNorm::new(hidden),
            ff_in: Linear::init(hidden, ffn, std, rng),
            ff_out: Linear::init(ffn, hidden, std, rng),
            ff_norm: LayerNorm::new(hidden),
        }
    }

    fn refs<'a>(&'a self, p: &str, out: &mut Vec<TensorRef<'a, T>>) {
        self.query.refs(&format!("{p}.query"), out);
        self.key.refs(&format!("{p}.key"), out);
        self.value.refs(&format!("{p}.value"), out);
        self.output.refs(&format!("{p}.output"), out);
        self.attn_norm.refs(&format!("{p}.attn_norm"), out);
        self.ff_in.refs(&format!("{p}.ff_in"), out);
        self.ff_out.refs(&format!("{p}.ff_out"), out);
        self.ff_norm.refs(&format!("{p}.ff_norm"), out);
    }

    fn muts<'a>(&'a mut self, p: &str, out: &mut Vec<TensorMut<'a, T>>) {
        self.query.muts(&format!("{p}.query"), out);
        self.key.muts(&format!("{p}.key"), out);
        self.value.muts(&format!("{p}.value"), out);
        self.output.muts(&format!("{p}.output"), out);
        self.attn_norm.muts(&format!("{p}.attn_norm"), out);
        self.ff_in.muts(&format!("{p}.ff_in"), out);
        self.ff_out.muts(&format!("{p}.ff_out"), out);
        self.ff_norm.muts(&format!("{p}.ff_norm"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub row: BlockParams<T>,
    pub col: BlockParams<T>,
}

/// Every learned tensor of the table encoder plus the corruption classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub row_pos: Array2<T>,
    pub col_pos: Array2<T>,
    pub cls_row: Array1<T>,
    pub cls_col: Array1<T>,
    pub cls_table: Array1<T>,
    pub layers: Vec<LayerParams<T>>,
    pub classifier_w: Array1<T>,
    pub classifier_b: Array1<T>,
}

pub const INIT_STD: f64 = 0.02;

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters: normal(0, `std`) for positions, CLS vectors and the
    /// classifier weight, normal(0, `block_std`) for Transformer weights; zero
    /// biases; unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        row_positions: usize,
        col_positions: usize,
        std: f64,
        block_std: f64,
        rng: &mut R,
    ) -> Self {
        let h = cfg.hidden_dim;
        let row_pos = normal_array2(row_positions, h, std, rng);
        let col_pos = normal_array2(col_positions, h, std, rng);
        let cls_row = normal_array1(h, std, rng);
        let cls_col = normal_array1(h, std, rng);
        let cls_table = normal_array1(h, std, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                row: BlockParams::init(h, cfg.ffn_dim, block_std, rng),
                col: BlockParams::init(h, cfg.ffn_dim, block_std, rng),
            })
            .collect();
        ModelParams {
            row_pos,
            col_pos,
            cls_row,
            cls_col,
            cls_table,
            layers,
            classifier_w: normal_array1(h, std, rng),
            classifier_b: Array1::zeros(1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.cls_row.len()
    }

    pub(crate) fn refs<'a>(&'a self, out: &mut Vec<TensorRef<'a, T>>) {
        push_ref(out, "pos.rows".into(), self.row_pos.shape(), slice!(self.row_pos));
        push_ref(out, "pos.cols".into(), self.col_pos.shape(), slice!(self.col_pos));
        push_ref(out, "cls.row".into(), self.cls_row.shape(), slice!(self.cls_row));
        push_ref(out, "cls.col".into(), self.cls_col.shape(), slice!(self.cls_col));
        push_ref(out, "cls.table".into(), self.cls_table.shape(), slice!(self.cls_table));
        for (l, layer) in self.layers.iter().enumerate() {
            layer.row.refs(&format!("layers.{l}.row"), out);
            layer.col.refs(&format!("layers.{l}.col"), out);
        }
        push_ref(
            out,
            "classifier.w".into(),
            self.classifier_w.shape(),
            slice!(self.classifier_w),
        );
        push_ref(
            out,
            "classifier.b".into(),
            self.classifier_b.shape(),
            slice!(self.classifier_b),
        );
    }

    pub(crate) fn muts<'a>(&'a mut self, out: &mut Vec<TensorMut<'a, T>>) {
        let shape = |s: &[usize]| s.to_vec();
        let (rs, cs) = (shape(self.row_pos.shape()), shape(self.col_pos.shape()));
        push_mut(out, "pos.rows".into(), rs, slice_mut!(self.row_pos));
        push_mut(out, "pos.cols".into(), cs, slice_mut!(self.col_pos));
        let h = vec![self.cls_row.len()];
        push_mut(out, "cls.row".into(), h.clone(), slice_mut!(self.cls_row));
        push_mut(out, "cls.col".into(), h.clone(), slice_mut!(self.cls_col));
        push_mut(out, "cls.table".into(), h.clone(), slice_mut!(self.cls_table));
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.row.muts(&format!("layers.{l}.row"), out);
            layer.col.muts(&format!("layers.{l}.col"), out);
        }
        push_mut(out, "classifier.w".into(), h, slice_mut!(self.classifier_w));
        push_mut(out, "classifier.b".into(), vec![1], slice_mut!(self.classifier_b));
    }
}

impl<T: Scalar> ParamSet<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        self.refs(&mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        self.muts(&mut out);
        out
    }
}

/// Encoder parameters plus a task head, trained jointly during fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneParams<T> {
    pub model: ModelParams<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> ParamSet<T> for FinetuneParams<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        self.model.refs(&mut out);
        self.head.refs("head", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        self.model.muts(&mut out);
        self.head.muts("head", &mut out);
        out
    }
}

impl<T: Scalar> Linear<T> {
    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.mapv(|x| U::of(x.as_f64())),
            bias: self.bias.mapv(|x| U::of(x.as_f64())),
        }
    }
}

impl<T: Scalar> LayerNorm<T> {
    fn cast<U: Scalar>(&self) -> LayerNorm<U> {
        LayerNorm {
            gain: self.gain.mapv(|x| U::of(x.as_f64())),
            bias: self.bias.mapv(|x| U::of(x.as_f64())),
        }
    }
}

impl<T: Scalar> BlockParams<T> {
    fn cast<U: Scalar>(&self) -> BlockParams<U> {
        BlockParams {
            query: self.query.cast(),
            key: self.key.cast(),
            value: self.value.cast(),
            output: self.output.cast(),
            attn_norm: self.attn_norm.cast(),
            ff_in: self.ff_in.cast(),
            ff_out: self.ff_out.cast(),
            ff_norm: self.ff_norm.cast(),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::of(x.as_f64()));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::of(x.as_f64()));
        ModelParams {
            row_pos: c2(&self.row_pos),
            col_pos: c2(&self.col_pos),
            cls_row: c1(&self.cls_row),
            cls_col: c1(&self.cls_col),
            cls_table: c1(&self.cls_table),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    row: l.row.cast(),
                    col: l.col.cast(),
                })
                .collect(),
            classifier_w: c1(&self.classifier_w),
            classifier_b: c1(&self.classifier_b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_names_unique_and_shapes_match() {
        let cfg = EncoderConfig::desk(8, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::<f32>::init(&cfg, 5, 4, 0.02, 0.02, &mut rng);
        let ts = p.tensors();
        let mut names: Vec<&str> = ts.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), ts.len());
        for t in &ts {
            assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "{}", t.name);
        }
        let mut q = p.clone();
        let muts = q.tensors_mut();
        assert_eq!(muts.len(), ts.len());
        for (a, b) in muts.iter().zip(&ts) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
        }
        assert_eq!(p.classifier_w.len(), 8);
    }

    #[test]
    fn add_scaled_and_norm() {
        let mut a = Linear::<f64>::zeros(2, 1);
        let mut b = Linear::<f64>::zeros(2, 1);
        b.weight.fill(1.0);
        b.bias.fill(2.0);
        a.add_scaled(&b, 0.5);
        assert_eq!(a.weight[[1, 0]], 0.5);
        assert_eq!(a.bias[0], 1.0);
        assert!((a.global_norm() - (0.25f64 + 0.25 + 1.0).sqrt()).abs() < 1e-12);
    }
}
