use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpSpec};
use crate::autodiff::{Expr, Graph};
use crate::error::{Error, Result};

/// Branch/trunk operator network: `u(x,t) = Σ_k branch_k(f) · trunk_k(x,t) + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorModel {
    pub branch: Mlp,
    pub trunk: Mlp,
    pub bias: f64,
}

/// Network shapes for an operator model, as stored in configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub branch: MlpSpec,
    pub trunk: MlpSpec,
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<()> {
        self.branch.validate()?;
        self.trunk.validate()?;
        if self.branch.output_width() != self.trunk.output_width() {
            return Err(Error::Validation(format!(
                "branch output width {} differs from trunk output width {}",
                self.branch.output_width(),
                self.trunk.output_width()
            )));
        }
        if self.trunk.input_width() != 2 {
            return Err(Error::Validation(format!(
                "trunk takes (x, t), got input width {}",
                self.trunk.input_width()
            )));
        }
        Ok(())
    }
}

impl OperatorModel {
    pub fn new(spec: &OperatorSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { branch: Mlp::new(spec.branch.clone())?, trunk: Mlp::new(spec.trunk.clone())?, bias: 0.0 })
    }

    pub fn from_parts(branch: Mlp, trunk: Mlp, bias: f64) -> Result<Self> {
        let spec = OperatorSpec { branch: branch.spec().clone(), trunk: trunk.spec().clone() };
        spec.validate()?;
        Ok(Self { branch, trunk, bias })
    }

    pub fn spec(&self) -> OperatorSpec {
        OperatorSpec { branch: self.branch.spec().clone(), trunk: self.trunk.spec().clone() }
    }

    /// Latent width `p` shared by branch and trunk outputs.
    pub fn latent_width(&self) -> usize {
        self.branch.spec().output_width()
    }

    pub fn sensor_count(&self) -> usize {
        self.branch.spec().input_width()
    }

    pub fn num_params(&self) -> usize {
        self.branch.num_params() + self.trunk.num_params() + 1
    }

    /// Parameters flattened as `[branch | trunk | bias]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.branch.params());
        v.extend_from_slice(self.trunk.params());
        v.push(self.bias);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: flat.len() });
        }
        let nb = self.branch.num_params();
        let nt = self.trunk.num_params();
        self.branch.params_mut().copy_from_slice(&flat[..nb]);
        self.trunk.params_mut().copy_from_slice(&flat[nb..nb + nt]);
        self.bias = flat[nb + nt];
        Ok(())
    }

    /// Graph node for `u(x, t)`. Branch inputs enter as constants; parameters
    /// occupy graph param slots `param_offset ..` in [`Self::flat_params`] order.
    pub fn forward_expr(
        &self,
        g: &mut Graph,
        sensors: &[f64],
        x: Expr,
        t: Expr,
        param_offset: u32,
    ) -> Result<Expr> {
        if sensors.len() != self.sensor_count() {
            return Err(Error::Shape { expected: self.sensor_count(), got: sensors.len() });
        }
        let consts: Vec<Expr> = sensors.iter().map(|&s| g.constant(s)).collect();
        let b = self.branch.forward_expr(g, &consts, param_offset)?;
        let trunk_off = param_offset + self.branch.num_params() as u32;
        let tr = self.trunk.forward_expr(g, &[x, t], trunk_off)?;
        let dot = g.dot(&b, &tr)?;
        let bias = g.param(trunk_off + self.trunk.num_params() as u32);
        Ok(g.add(dot, bias))
    }
}

/// Build `u(x,t)` as a graph node differentiable in `x`, `t` and parameters.
pub fn forward_operator(
    g: &mut Graph,
    model: &OperatorModel,
    sensors: &[f64],
    x: Expr,
    t: Expr,
) -> Result<Expr> {
    model.forward_expr(g, sensors, x, t, 0)
}

/// `d^order u / dx^order` for order 1 or 2, as a differentiable graph node.
///
/// `x` must be an input leaf. The trunk must be smooth: ReLU trunks are
/// rejected because their second derivative is identically zero almost
/// everywhere and would silently corrupt the residual.
pub fn spatial_derivatives(
    g: &mut Graph,
    model: &OperatorModel,
    sensors: &[f64],
    x: Expr,
    t: Expr,
    order: u8,
) -> Result<Expr> {
    if !(1..=2).contains(&order) {
        return Err(Error::Domain(format!("derivative order must be 1 or 2, got {order}")));
    }
    require_smooth_trunk(model)?;
    let u = forward_operator(g, model, sensors, x, t)?;
    let mut d = g.grad(u, &[x])?[0];
    if order == 2 {
        d = g.grad(d, &[x])?[0];
    }
    Ok(d)
}

/// `du/dt` as a differentiable graph node.
pub fn time_derivative(
    g: &mut Graph,
    model: &OperatorModel,
    sensors: &[f64],
    x: Expr,
    t: Expr,
) -> Result<Expr> {
    require_smooth_trunk(model)?;
    let u = forward_operator(g, model, sensors, x, t)?;
    Ok(g.grad(u, &[t])?[0])
}

fn require_smooth_trunk(model: &OperatorModel) -> Result<()> {
    if model.trunk.spec().activation == Activation::Relu {
        return Err(Error::Domain("coordinate derivatives need a smooth trunk activation".into()));
    }
    Ok(())
}

/// MLP approximating the unknown right-hand side from `(u, u_x, u_xx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenPhysicsNet {
    pub mlp: Mlp,
}

impl HiddenPhysicsNet {
    pub const INPUTS: usize = 3;

    pub fn new(spec: MlpSpec) -> Result<Self> {
        Self::from_mlp(Mlp::new(spec)?)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.spec().input_width() != Self::INPUTS || mlp.spec().output_width() != 1 {
            return Err(Error::Validation(format!(
                "hidden-physics network must map 3 channels to 1 output, got {:?}",
                mlp.spec().widths
            )));
        }
        Ok(Self { mlp })
    }

    pub fn forward_expr(&self, g: &mut Graph, channels: [Expr; 3], param_offset: u32) -> Result<Expr> {
        Ok(self.mlp.forward_expr(g, &channels, param_offset)?[0])
    }
}

/// MLP mapping a sensor vector to a positive scalar coefficient through softplus.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterNet {
    pub mlp: Mlp,
}

impl ParameterNet {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        Self::from_mlp(Mlp::new(spec)?)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.spec().output_width() != 1 {
            return Err(Error::Validation(format!(
                "parameter network must have a scalar output, got {:?}",
                mlp.spec().widths
            )));
        }
        Ok(Self { mlp })
    }

    pub fn sensor_count(&self) -> usize {
        self.mlp.spec().input_width()
    }

    /// `ξ = softplus(I(sensors))`, in sensor-layout order.
    pub fn predict(&self, sensors: &[f64]) -> Result<f64> {
        if sensors.len() != self.sensor_count() {
            return Err(Error::Shape { expected: self.sensor_count(), got: sensors.len() });
        }
        let x = ndarray::ArrayView2::from_shape((1, sensors.len()), sensors).unwrap();
        let raw = self.mlp.forward_batch(x)?[[0, 0]];
        Ok(crate::autodiff::softplus(raw))
    }
}
