//! Batched forward/backward through a coordinate network that carries the
//! first and second spatial derivatives and the time derivative along with
//! the value.
//!
//! Inputs are rows `(x, t)`. For every layer the kernel tracks the value and
//! the requested derivative streams; the backward pass is reverse mode over
//! that extended forward computation, so the parameter gradient of a loss
//! containing `u_x`, `u_xx` and `u_t` comes out exactly.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

/// Which derivative streams to propagate besides the value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    pub dx: bool,
    pub dxx: bool,
    pub dt: bool,
}

impl Streams {
    pub const VALUE: Streams = Streams { dx: false, dxx: false, dt: false };
    pub const DX: Streams = Streams { dx: true, dxx: false, dt: false };
    pub const ALL: Streams = Streams { dx: true, dxx: true, dt: true };

    fn any(self) -> bool {
        self.dx || self.dxx || self.dt
    }
}

/// A value together with its derivative streams, all `rows × width`.
#[derive(Clone, Debug)]
pub struct Jet {
    pub v: Array2<f64>,
    pub dx: Option<Array2<f64>>,
    pub dxx: Option<Array2<f64>>,
    pub dt: Option<Array2<f64>>,
}

impl Jet {
    pub fn zeros_like(other: &Jet) -> Jet {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Jet {
            v: z(&other.v),
            dx: other.dx.as_ref().map(z),
            dxx: other.dxx.as_ref().map(z),
            dt: other.dt.as_ref().map(z),
        }
    }

    fn map_linear(&self, f: impl Fn(&Array2<f64>) -> Array2<f64>) -> Jet {
        Jet {
            v: f(&self.v),
            dx: self.dx.as_ref().map(&f),
            dxx: self.dxx.as_ref().map(&f),
            dt: self.dt.as_ref().map(&f),
        }
    }
}

#[derive(Clone, Debug)]
pub struct JetTape {
    /// Input jet of every layer, then the output jet.
    layers: Vec<Jet>,
    /// Pre-activation jets of the hidden layers.
    pre: Vec<Jet>,
}

impl JetTape {
    pub fn output(&self) -> &Jet {
        self.layers.last().unwrap()
    }
}

fn check_smooth(net: &Mlp, streams: Streams) -> Result<()> {
    if streams.dxx && !streams.dx {
        return Err(Error::Domain("the dxx stream requires the dx stream".into()));
    }
    if streams.any() && net.spec().activation == Activation::Relu {
        return Err(Error::Domain(
            "coordinate derivatives through a ReLU network are not supported".into(),
        ));
    }
    if net.spec().input_width() != 2 {
        return Err(Error::Shape { expected: 2, got: net.spec().input_width() });
    }
    Ok(())
}

/// Forward pass over coordinate rows `(x, t)`.
pub fn forward(net: &Mlp, coords: ArrayView2<'_, f64>, streams: Streams) -> Result<JetTape> {
    check_smooth(net, streams)?;
    if coords.ncols() != 2 {
        return Err(Error::Shape { expected: 2, got: coords.ncols() });
    }
    let n = coords.nrows();
    let unit = |col: usize| {
        let mut a = Array2::zeros((n, 2));
        a.column_mut(col).fill(1.0);
        a
    };
    let input = Jet {
        v: coords.to_owned(),
        dx: streams.dx.then(|| unit(0)),
        dxx: streams.dxx.then(|| Array2::zeros((n, 2))),
        dt: streams.dt.then(|| unit(1)),
    };

    let layers_n = net.spec().num_layers();
    let mut layers = Vec::with_capacity(layers_n + 1);
    let mut pre = Vec::with_capacity(layers_n.saturating_sub(1));
    layers.push(input);
    for l in 0..layers_n {
        let w = net.weight(l);
        let mut p = layers[l].map_linear(|a| a.dot(&w.t()));
        p.v += &net.bias(l);
        if l + 1 == layers_n {
            layers.push(p);
            break;
        }
        let s = activate(&p);
        pre.push(p);
        layers.push(s);
    }
    Ok(JetTape { layers, pre })
}

/// tanh applied to a jet by the chain rule.
fn activate(p: &Jet) -> Jet {
    let mut s = p.v.clone();
    match s.as_slice_mut() {
        Some(v) => super::fastmath::tanh_in_place(v),
        None => s.mapv_inplace(super::fastmath::tanh),
    }
    let d1 = s.mapv(|y| 1.0 - y * y);
    let dx = p.dx.as_ref().map(|px| px * &d1);
    let dxx = match (&p.dx, &p.dxx) {
        (Some(px), Some(pxx)) => {
            let mut out = Array2::zeros(s.raw_dim());
            Zip::from(&mut out).and(&s).and(&d1).and(px).and(pxx).for_each(
                |o, &y, &d1, &px, &pxx| {
                    let d2 = -2.0 * y * d1;
                    *o = d2 * px * px + d1 * pxx;
                },
            );
            Some(out)
        }
        _ => None,
    };
    let dt = p.dt.as_ref().map(|pt| pt * &d1);
    Jet { v: s, dx, dxx, dt }
}

/// Reverse pass. `grad` holds d loss / d output for each enabled stream;
/// parameter gradients are accumulated into `grads`.
pub fn backward(net: &Mlp, tape: &JetTape, grad: Jet, grads: &mut [f64]) {
    assert_eq!(grads.len(), net.num_params());
    let mut g = grad;
    for l in (0..net.spec().num_layers()).rev() {
        let input = &tape.layers[l];
        let (wo, bo) = net.spec().layer_offsets(l);
        let (fan_in, fan_out) = (net.spec().widths[l], net.spec().widths[l + 1]);
        {
            let (gw, gb) = grads[wo..bo + fan_out].split_at_mut(fan_in * fan_out);
            let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).unwrap();
            general_mat_mul(1.0, &g.v.t(), &input.v, 1.0, &mut gw);
            for (gs, s) in [(&g.dx, &input.dx), (&g.dxx, &input.dxx), (&g.dt, &input.dt)] {
                if let (Some(gs), Some(s)) = (gs, s) {
                    general_mat_mul(1.0, &gs.t(), s, 1.0, &mut gw);
                }
            }
            let mut gb = ArrayViewMut1::from(gb);
            gb += &g.v.sum_axis(Axis(0));
        }
        if l == 0 {
            break;
        }
        let w = net.weight(l);
        let gs = g.map_linear(|a| a.dot(&w));
        g = activate_backward(&tape.pre[l - 1], &tape.layers[l], gs);
    }
}

fn activate_backward(p: &Jet, s: &Jet, gs: Jet) -> Jet {
    let mut gp = Array2::zeros(s.v.raw_dim());
    let mut gpx = p.dx.as_ref().map(|a| Array2::zeros(a.raw_dim()));
    let mut gpxx = p.dxx.as_ref().map(|a| Array2::zeros(a.raw_dim()));
    let mut gpt = p.dt.as_ref().map(|a| Array2::zeros(a.raw_dim()));
    let (rows, cols) = s.v.dim();
    for r in 0..rows {
        for c in 0..cols {
            let y = s.v[[r, c]];
            let d1 = 1.0 - y * y;
            let d2 = -2.0 * y * d1;
            let mut acc = gs.v[[r, c]] * d1;
            if let (Some(gsx), Some(px)) = (&gs.dx, &p.dx) {
                let px = px[[r, c]];
                let gx = gsx[[r, c]];
                acc += gx * d2 * px;
                let mut gpx_val = gx * d1;
                if let (Some(gsxx), Some(pxx)) = (&gs.dxx, &p.dxx) {
                    let gxx = gsxx[[r, c]];
                    let d3 = -2.0 * d1 * d1 + 4.0 * y * y * d1;
                    acc += gxx * (d3 * px * px + d2 * pxx[[r, c]]);
                    gpx_val += gxx * 2.0 * d2 * px;
                    gpxx.as_mut().unwrap()[[r, c]] = gxx * d1;
                }
                gpx.as_mut().unwrap()[[r, c]] = gpx_val;
            }
            if let (Some(gst), Some(pt)) = (&gs.dt, &p.dt) {
                let gt = gst[[r, c]];
                acc += gt * d2 * pt[[r, c]];
                gpt.as_mut().unwrap()[[r, c]] = gt * d1;
            }
            gp[[r, c]] = acc;
        }
    }
    Jet { v: gp, dx: gpx, dxx: gpxx, dt: gpt }
}
