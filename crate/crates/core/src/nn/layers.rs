use std::rc::Rc;

use rand::Rng;

use super::conv::ConvGeometry;
use super::tape::{Gradients, Tape, Var};
use super::{Scalar, Tensor};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn from_index(index: usize) -> Self {
        ParamId(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Tensors are reference counted so that binding them to a tape is free;
/// updates copy on write only if a tape still holds the old value.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Rc<Tensor<T>>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(Rc::new(value));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter().map(|t| t.as_ref())
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.tensors[index])
    }

    pub fn set(&mut self, index: usize, value: Tensor<T>) {
        assert_eq!(self.tensors[index].shape(), value.shape(), "parameter shape is fixed");
        self.tensors[index] = Rc::new(value);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    /// Binds every tensor as a leaf on `tape`. With `trainable == false` the
    /// leaves are constants: gradients still flow *through* the layers but
    /// are not accumulated for these parameters.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant_rc(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Rc::new(t.cast())).collect(),
        }
    }
}

/// A [`ParamSet`] bound to a tape.
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradients for every bound tensor, in parameter order.
    pub fn grads(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| grads.take(*v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Elu => x.elu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

fn uniform<T: Scalar>(rows: usize, cols: usize, limit: f64, rng: &mut impl Rng) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(rows, cols, data)
}

/// Fully connected layer `y = x·W + b`, Glorot-uniform initialised.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform(inputs, outputs, limit, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(1, outputs));
        Linear { w, b, inputs, outputs }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.matmul(p.var(self.w)).add_row(p.var(self.b))
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }
}

/// Feed-forward stack with a shared hidden activation and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for (i, &h) in hidden.iter().chain(std::iter::once(&outputs)).enumerate() {
            layers.push(Linear::new(ps, &format!("{name}.{i}"), width, h, rng));
            width = h;
        }
        Mlp { layers, activation }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x, |h, (i, layer)| {
            let y = layer.forward(p, h);
            if i < last {
                self.activation.apply(y)
            } else {
                y
            }
        })
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("mlp has at least one layer")
    }
}

/// Strided convolution over HWC images.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    w: ParamId,
    b: ParamId,
    pub geom: ConvGeometry,
}

impl ConvLayer {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, geom: ConvGeometry, rng: &mut impl Rng) -> Self {
        let fan_in = geom.patch_len();
        let fan_out = geom.kernel * geom.kernel * geom.out_c;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform(fan_in, geom.out_c, limit, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(1, geom.out_c));
        ConvLayer { w, b, geom }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p.var(self.w), p.var(self.b), self.geom)
    }
}

/// Transposed convolution; `geom` is the forward convolution it inverts, so
/// the layer maps `geom.out_size()` features to `geom.in_size()` pixels.
#[derive(Clone, Debug)]
pub struct ConvTransposeLayer {
    w: ParamId,
    b: ParamId,
    pub geom: ConvGeometry,
}

impl ConvTransposeLayer {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, geom: ConvGeometry, rng: &mut impl Rng) -> Self {
        let fan_in = geom.kernel * geom.kernel * geom.out_c;
        let fan_out = geom.patch_len();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform(geom.out_c, geom.patch_len(), limit, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(1, geom.in_c));
        ConvTransposeLayer { w, b, geom }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv_transpose2d(p.var(self.w), p.var(self.b), self.geom)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// n  = tanh(x·Wn + bn + r ⊙ (h·Un + cn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    input: Linear,
    hidden: Linear,
    pub size: usize,
}

impl Gru {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, inputs: usize, size: usize, rng: &mut impl Rng) -> Self {
        Gru {
            input: Linear::new(ps, &format!("{name}.input"), inputs, 3 * size, rng),
            hidden: Linear::new(ps, &format!("{name}.hidden"), size, 3 * size, rng),
            size,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, h: Var<'t, T>) -> Var<'t, T> {
        let d = self.size;
        let gx = self.input.forward(p, x);
        let gh = self.hidden.forward(p, h);
        let z = (gx.slice_cols(0, d) + gh.slice_cols(0, d)).sigmoid();
        let r = (gx.slice_cols(d, d) + gh.slice_cols(d, d)).sigmoid();
        let n = (gx.slice_cols(2 * d, d) + r * gh.slice_cols(2 * d, d)).tanh();
        // h' = n + z ⊙ (h − n)
        n + z * (h - n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_output_shape_and_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let mlp = Mlp::new(&mut ps, "m", 5, &[7, 3], 2, Activation::Elu, &mut rng);
        assert_eq!(ps.numel(), 5 * 7 + 7 + 7 * 3 + 3 + 3 * 2 + 2);
        let tape = Tape::new();
        let p = ps.bind(&tape, false);
        let x = tape.constant(Tensor::zeros(4, 5));
        assert_eq!(mlp.forward(&p, x).shape(), (4, 2));
    }

    #[test]
    fn gru_keeps_state_when_update_gate_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let gru = Gru::new(&mut ps, "g", 2, 3, &mut rng);
        // push the update gate bias to +inf-ish so z ≈ 1
        let bias_index = ps.names().iter().position(|n| n == "g.input.bias").unwrap();
        let b = ps.tensor_mut(bias_index);
        for v in &mut b.data_mut()[0..3] {
            *v = 50.0;
        }
        let tape = Tape::new();
        let p = ps.bind(&tape, false);
        let x = tape.constant(Tensor::from_f64(1, 2, &[0.3, -0.2]));
        let h = tape.constant(Tensor::from_f64(1, 3, &[0.5, -0.5, 0.1]));
        let out = gru.forward(&p, x, h).value();
        for (a, b) in out.data().iter().zip([0.5, -0.5, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
