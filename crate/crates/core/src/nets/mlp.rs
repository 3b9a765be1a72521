use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Graph};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => super::fastmath::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y = σ(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            // ReLU'(0) is taken as 0
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn expr(self, g: &mut Graph, x: Expr) -> Expr {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// Layer widths (input first, output last), hidden activation and init seed.
/// The output layer is always linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: &[usize], activation: Activation, seed: u64) -> Self {
        Self { widths: widths.to_vec(), activation, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Validation(format!(
                "an MLP needs at least 2 layers, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Validation(format!("zero-width layer in {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of (weights, bias) for layer `l` in the flat parameter vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.widths[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        (start, start + fan_in * fan_out)
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_parameters(spec: &MlpSpec, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, "glorot", 0);
    let mut out = Vec::with_capacity(spec.num_params());
    for w in spec.widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
    out
}

/// Activations recorded by [`Mlp::forward_tape`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to every layer followed by the network output.
    layers: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().unwrap()
    }
}

/// A multilayer perceptron with its parameters stored as one flat vector
/// laid out layer by layer as `W (out × in, row-major)` then `b (out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = init_parameters(&spec, spec.seed);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.num_params() {
            return Err(Error::Shape { expected: spec.num_params(), got: params.len() });
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, b) = self.spec.layer_offsets(l);
        let shape = (self.spec.widths[l + 1], self.spec.widths[l]);
        ArrayView2::from_shape(shape, &self.params[w..b]).unwrap()
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.spec.layer_offsets(l);
        ArrayView1::from(&self.params[b..b + self.spec.widths[l + 1]])
    }

    /// Zero the last layer so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let l = self.spec.num_layers() - 1;
        let (w, _) = self.spec.layer_offsets(l);
        self.params[w..].iter_mut().for_each(|p| *p = 0.0);
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.spec.input_width() {
            return Err(Error::Shape { expected: self.spec.input_width(), got: width });
        }
        Ok(())
    }

    /// Affine map of layer `l` applied to a batch (rows are samples).
    fn affine(&self, l: usize, input: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weight(l).t());
        out += &self.bias(l);
        out
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(input)?.layers.pop().unwrap())
    }

    pub fn forward_tape(&self, input: ArrayView2<'_, f64>) -> Result<MlpTape> {
        self.check_input(input.ncols())?;
        let n = self.spec.num_layers();
        let act = self.spec.activation;
        let mut layers = Vec::with_capacity(n + 1);
        layers.push(input.to_owned());
        for l in 0..n {
            let mut z = self.affine(l, &layers[l].view());
            if l + 1 < n {
                activate_in_place(act, &mut z);
            }
            layers.push(z);
        }
        Ok(MlpTape { layers })
    }

    /// Back-propagate `grad_out` (d loss / d output), accumulating parameter
    /// gradients into `grads` and returning d loss / d input.
    pub fn backward(
        &self,
        tape: &MlpTape,
        grad_out: Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len());
        let act = self.spec.activation;
        let mut g = grad_out;
        for l in (0..self.spec.num_layers()).rev() {
            let a = &tape.layers[l];
            let (wo, bo) = self.spec.layer_offsets(l);
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            {
                let (gw, gb) = grads[wo..bo + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).unwrap();
                general_mat_mul(1.0, &g.t(), a, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &g.sum_axis(Axis(0));
            }
            let mut ga = g.dot(&self.weight(l));
            if l > 0 {
                ndarray::Zip::from(&mut ga).and(a).for_each(|gv, &y| {
                    *gv *= act.derivative_from_output(y);
                });
            }
            g = ga;
        }
        g
    }

    /// Build the network as graph nodes. Parameter `k` of this network is
    /// bound to graph param slot `param_offset + k`.
    pub fn forward_expr(
        &self,
        g: &mut Graph,
        inputs: &[Expr],
        param_offset: u32,
    ) -> Result<Vec<Expr>> {
        self.check_input(inputs.len())?;
        let n = self.spec.num_layers();
        let mut h = inputs.to_vec();
        for l in 0..n {
            let (wo, bo) = self.spec.layer_offsets(l);
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let mut next = Vec::with_capacity(fan_out);
            for k in 0..fan_out {
                let row: Vec<Expr> = (0..fan_in)
                    .map(|i| g.param(param_offset + (wo + k * fan_in + i) as u32))
                    .collect();
                let dot = g.dot(&row, &h)?;
                let b = g.param(param_offset + (bo + k) as u32);
                let mut z = g.add(dot, b);
                if l + 1 < n {
                    z = self.spec.activation.expr(g, z);
                }
                next.push(z);
            }
            h = next;
        }
        Ok(h)
    }
}

fn activate_in_place(act: Activation, z: &mut Array2<f64>) {
    match (act, z.as_slice_mut()) {
        (Activation::Tanh, Some(v)) => super::fastmath::tanh_in_place(v),
        _ => z.mapv_inplace(|v| act.apply(v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Bindings;
    use ndarray::array;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(&[3], Activation::Tanh, 0).validate().is_err());
        assert!(MlpSpec::new(&[3, 0, 1], Activation::Tanh, 0).validate().is_err());
        assert!(MlpSpec::new(&[3, 1], Activation::Tanh, 0).validate().is_ok());
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(&[4, 8, 3], Activation::Tanh, 7);
        assert_eq!(init_parameters(&spec, 7), init_parameters(&spec, 7));
        assert_ne!(init_parameters(&spec, 7), init_parameters(&spec, 8));
    }

    #[test]
    fn glorot_bound() {
        let spec = MlpSpec::new(&[4, 4], Activation::Tanh, 1);
        let p = init_parameters(&spec, 1);
        let limit = (6.0f64 / 8.0).sqrt();
        assert_eq!(p.len(), 20);
        assert!(p[..16].iter().all(|v| v.abs() <= limit));
        assert!(p[16..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_offsets_cover_vector() {
        let spec = MlpSpec::new(&[3, 5, 2], Activation::Relu, 0);
        assert_eq!(spec.layer_offsets(0), (0, 15));
        assert_eq!(spec.layer_offsets(1), (20, 30));
        assert_eq!(spec.num_params(), 32);
    }

    #[test]
    fn batch_and_graph_forward_agree() {
        let net = Mlp::new(MlpSpec::new(&[2, 6, 6, 3], Activation::Tanh, 3)).unwrap();
        let x = array![[0.3, -0.7], [1.1, 0.2]];
        let out = net.forward_batch(x.view()).unwrap();
        for r in 0..2 {
            let mut g = Graph::new();
            let ins = [g.input(0), g.input(1)];
            let outs = net.forward_expr(&mut g, &ins, 0).unwrap();
            let row = [x[[r, 0]], x[[r, 1]]];
            let vals = g.evaluate_many(&outs, &Bindings::new(&row, net.params())).unwrap();
            for k in 0..3 {
                assert!((vals[k] - out[[r, k]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn input_width_is_checked() {
        let net = Mlp::new(MlpSpec::new(&[2, 3, 1], Activation::Tanh, 0)).unwrap();
        assert!(matches!(
            net.forward_batch(Array2::zeros((1, 3)).view()),
            Err(Error::Shape { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(MlpSpec::new(&[3, 5, 4, 2], act, 11)).unwrap();
            let x = array![[0.2, -0.4, 0.9], [-1.0, 0.5, 0.1], [0.3, 0.3, -0.6]];
            // loss = Σ c ⊙ out
            let c = array![[1.0, -0.5], [0.25, 2.0], [-1.5, 0.75]];
            let loss = |p: &[f64]| {
                let m = Mlp::from_params(net.spec().clone(), p.to_vec()).unwrap();
                (m.forward_batch(x.view()).unwrap() * &c).sum()
            };
            let tape = net.forward_tape(x.view()).unwrap();
            let mut grads = vec![0.0; net.num_params()];
            let gin = net.backward(&tape, c.clone(), &mut grads);
            let h = 1e-6;
            for k in 0..net.num_params() {
                let mut p = net.params().to_vec();
                p[k] += h;
                let up = loss(&p);
                p[k] -= 2.0 * h;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grads[k]).abs() < 1e-7, "{act:?} param {k}: {fd} vs {}", grads[k]);
            }
            assert_eq!(gin.dim(), (3, 3));
        }
    }
}
