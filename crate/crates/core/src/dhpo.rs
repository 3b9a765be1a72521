//! Joint training of the operator network and the hidden-physics network.
//!
//! The loss is `L = L_ic + L_bc + L_eqn + L_data` over a batch of input
//! functions. Collocation, initial and boundary points are redrawn by Latin
//! hypercube sampling at every step and shared by the samples of that step;
//! labeled points are fixed per sample.
//!
//! Two implementations of the loss live here. [`GraphCtx`] builds it as an
//! expression graph and is meant for small models and cross-checks;
//! [`loss_and_grad`] is the batched kernel used for training.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Expr, Graph, ParamStore};
use crate::error::{Error, Result};
use crate::function_spaces::{lhs_points, FunctionSample, PointSet};
use crate::nets::jet::{self, Jet, Streams};
use crate::nets::{Activation, HiddenPhysicsNet, Mlp, MlpSpec, OperatorModel, OperatorSpec};
use crate::pde_oracles::{FieldGrid, System};
use crate::{rng, GRID_N};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhpoConfig {
    pub system: System,
    pub n_train: usize,
    pub n_test: usize,
    /// Labeled points per training sample.
    pub n_d: usize,
    pub n_coll: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub loss_tolerance: f64,
    pub source_term: bool,
    pub seed: u64,
    pub branch: MlpSpec,
    pub trunk: MlpSpec,
    pub hidden: MlpSpec,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    AdamConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamConfig::default().beta2
}
fn default_eps() -> f64 {
    AdamConfig::default().eps
}

impl DhpoConfig {
    /// Architecture and optimizer settings used for the two benchmark systems.
    pub fn defaults(system: System, seed: u64) -> Self {
        let s = |name: &str| rng::derive(seed, name, 0);
        match system {
            System::Rd => Self {
                system,
                n_train: 500,
                n_test: 1000,
                n_d: 500,
                n_coll: 2000,
                n_ic: 200,
                n_bc: 250,
                batch_size: 10,
                learning_rate: 1e-4,
                iterations: 10_000,
                loss_tolerance: 1e-3,
                source_term: true,
                seed,
                branch: MlpSpec::new(&[101, 128, 128, 128, 50], Activation::Relu, s("branch")),
                trunk: MlpSpec::new(&[2, 128, 128, 128, 50], Activation::Tanh, s("trunk")),
                hidden: MlpSpec::new(&[3, 128, 128, 128, 1], Activation::Tanh, s("hidden")),
                beta1: default_beta1(),
                beta2: default_beta2(),
                eps: default_eps(),
            },
            System::Burgers => Self {
                system,
                n_train: 1000,
                n_test: 1000,
                n_d: 500,
                n_coll: 2000,
                n_ic: 200,
                n_bc: 250,
                batch_size: 1,
                learning_rate: 1e-4,
                iterations: 10_000,
                loss_tolerance: 1e-3,
                source_term: false,
                seed,
                branch: MlpSpec::new(&[101, 128, 128, 128, 128, 50], Activation::Relu, s("branch")),
                trunk: MlpSpec::new(&[2, 128, 128, 128, 128, 50], Activation::Tanh, s("trunk")),
                hidden: MlpSpec::new(&[3, 256, 256, 256, 1], Activation::Tanh, s("hidden")),
                beta1: default_beta1(),
                beta2: default_beta2(),
                eps: default_eps(),
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn operator_spec(&self) -> OperatorSpec {
        OperatorSpec { branch: self.branch.clone(), trunk: self.trunk.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        for (name, v) in [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_d", self.n_d),
            ("n_coll", self.n_coll),
            ("n_ic", self.n_ic),
            ("n_bc", self.n_bc),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.batch_size > self.n_train {
            return bad(format!("batch size {} exceeds n_train {}", self.batch_size, self.n_train));
        }
        if !(self.loss_tolerance > 0.0) {
            return bad("loss tolerance must be positive".into());
        }
        if self.system == System::Burgers && self.source_term {
            return bad("Burgers has no source term".into());
        }
        if self.n_d > (GRID_N - 2) * (GRID_N - 1) {
            return bad(format!("n_d = {} exceeds the interior node count", self.n_d));
        }
        self.operator_spec().validate()?;
        HiddenPhysicsNet::from_mlp(Mlp::from_params(
            self.hidden.clone(),
            vec![0.0; self.hidden.num_params()],
        )?)?;
        Ok(())
    }
}

/// One labeled observation `u_d(x, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: f64,
    pub t: f64,
    pub u: f64,
}

/// A training sample: the input function and its labeled points.
#[derive(Clone, Debug, PartialEq)]
pub struct DhpoSample {
    pub input: FunctionSample,
    pub labels: Vec<LabeledPoint>,
}

/// Draw `n_d` interior grid nodes without replacement, excluding both
/// spatial boundaries and the initial slice. Sorted.
pub fn label_nodes(n_d: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let nx = GRID_N - 2;
    let nt = GRID_N - 1;
    if n_d > nx * nt {
        return Err(Error::Domain(format!("cannot draw {n_d} labels from {} nodes", nx * nt)));
    }
    let mut r = rng::stream(seed, "labels", 0);
    let mut picks = index::sample(&mut r, nx * nt, n_d).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|k| (1 + k / nt, 1 + k % nt)).collect())
}

/// Field values at the given nodes.
pub fn labels_at(field: &FieldGrid, nodes: &[(usize, usize)]) -> Vec<LabeledPoint> {
    nodes
        .iter()
        .map(|&(i, j)| LabeledPoint { x: FieldGrid::x(i), t: field.t(j), u: field.at(i, j) })
        .collect()
}

pub fn subsample_labels(field: &FieldGrid, n_d: usize, seed: u64) -> Result<Vec<LabeledPoint>> {
    Ok(labels_at(field, &label_nodes(n_d, seed)?))
}

/// Operator network plus hidden-physics network. Flat parameters are laid out
/// as `[branch | trunk | bias | hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DhpoModel {
    pub operator: OperatorModel,
    pub hidden: HiddenPhysicsNet,
}

impl DhpoModel {
    pub fn new(config: &DhpoConfig) -> Result<Self> {
        Ok(Self {
            operator: OperatorModel::new(&config.operator_spec())?,
            hidden: HiddenPhysicsNet::new(config.hidden.clone())?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.operator.num_params() + self.hidden.mlp.num_params()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.operator.flat_params();
        v.extend_from_slice(self.hidden.mlp.params());
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: flat.len() });
        }
        let n = self.operator.num_params();
        self.operator.load_flat(&flat[..n])?;
        self.hidden.mlp.params_mut().copy_from_slice(&flat[n..]);
        Ok(())
    }
}

/// Per-term loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ic: f64,
    pub bc: f64,
    pub eqn: f64,
    pub data: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn finish(mut self) -> Self {
        self.total = self.ic + self.bc + self.eqn + self.data;
        self
    }
}

// ---------------------------------------------------------------------------
// Expression-graph losses

/// An expression graph together with the values of its coordinate inputs.
pub struct GraphCtx {
    pub graph: Graph,
    pub inputs: Vec<f64>,
}

impl Default for GraphCtx {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphCtx {
    pub fn new() -> Self {
        Self { graph: Graph::new(), inputs: Vec::new() }
    }

    /// A fresh input leaf holding `value`.
    pub fn coord(&mut self, value: f64) -> Expr {
        let slot = self.inputs.len() as u32;
        self.inputs.push(value);
        self.graph.input(slot)
    }

    pub fn evaluate(&self, e: Expr, params: &[f64]) -> Result<f64> {
        self.graph.evaluate(e, &crate::autodiff::Bindings::new(&self.inputs, params))
    }

    fn u(&mut self, model: &DhpoModel, f: &FunctionSample, x: Expr, t: Expr) -> Result<Expr> {
        model.operator.forward_expr(&mut self.graph, &f.values, x, t, 0)
    }

    fn sq_mean(&mut self, terms: &[Expr], denom: usize) -> Expr {
        let sq: Vec<Expr> = terms.iter().map(|&e| self.graph.square(e)).collect();
        let s = self.graph.sum(&sq);
        self.graph.scale(1.0 / denom as f64, s)
    }

    pub fn loss_ic(
        &mut self,
        model: &DhpoModel,
        batch: &[&DhpoSample],
        points: &PointSet,
        system: System,
    ) -> Result<Expr> {
        let mut terms = Vec::new();
        for s in batch {
            for &x in &points.ic_x {
                let (xe, te) = (self.coord(x), self.coord(0.0));
                let u = self.u(model, &s.input, xe, te)?;
                let target = match system {
                    System::Rd => 0.0,
                    System::Burgers => s.input.interpolate(x),
                };
                let c = self.graph.constant(-target);
                terms.push(self.graph.add(u, c));
            }
        }
        Ok(self.sq_mean(&terms, batch.len() * points.ic_x.len()))
    }

    pub fn loss_bc(
        &mut self,
        model: &DhpoModel,
        batch: &[&DhpoSample],
        points: &PointSet,
        system: System,
    ) -> Result<Expr> {
        let mut terms = Vec::new();
        for s in batch {
            for &t in &points.bc_t {
                let (x0, t0) = (self.coord(0.0), self.coord(t));
                let (x1, t1) = (self.coord(1.0), self.coord(t));
                let u0 = self.u(model, &s.input, x0, t0)?;
                let u1 = self.u(model, &s.input, x1, t1)?;
                match system {
                    System::Rd => {
                        terms.push(u0);
                        terms.push(u1);
                    }
                    System::Burgers => {
                        terms.push(self.graph.sub(u0, u1));
                        let ux0 = self.graph.grad(u0, &[x0])?[0];
                        let ux1 = self.graph.grad(u1, &[x1])?[0];
                        terms.push(self.graph.sub(ux0, ux1));
                    }
                }
            }
        }
        Ok(self.sq_mean(&terms, batch.len() * points.bc_t.len()))
    }

    pub fn loss_eqn(
        &mut self,
        model: &DhpoModel,
        batch: &[&DhpoSample],
        points: &PointSet,
        source_term: bool,
    ) -> Result<Expr> {
        if model.operator.trunk.spec().activation == Activation::Relu {
            return Err(Error::Domain("the residual needs a smooth trunk".into()));
        }
        let hidden_off = model.operator.num_params() as u32;
        let mut terms = Vec::new();
        for s in batch {
            for &[x, t] in &points.collocation {
                let (xe, te) = (self.coord(x), self.coord(t));
                let u = self.u(model, &s.input, xe, te)?;
                let d = self.graph.grad(u, &[xe, te])?;
                let (ux, ut) = (d[0], d[1]);
                let uxx = self.graph.grad(ux, &[xe])?[0];
                let n = model.hidden.forward_expr(&mut self.graph, [u, ux, uxx], hidden_off)?;
                let mut r = self.graph.sub(ut, n);
                if source_term {
                    let f = self.graph.constant(-s.input.interpolate(x));
                    r = self.graph.add(r, f);
                }
                terms.push(r);
            }
        }
        Ok(self.sq_mean(&terms, batch.len() * points.collocation.len()))
    }

    pub fn loss_data(&mut self, model: &DhpoModel, batch: &[&DhpoSample]) -> Result<Expr> {
        let n_d = batch.first().map_or(0, |s| s.labels.len());
        if batch.iter().any(|s| s.labels.len() != n_d) {
            return Err(Error::Validation("labeled point counts differ across samples".into()));
        }
        let mut terms = Vec::new();
        for s in batch {
            for lp in &s.labels {
                let (xe, te) = (self.coord(lp.x), self.coord(lp.t));
                let u = self.u(model, &s.input, xe, te)?;
                let c = self.graph.constant(-lp.u);
                terms.push(self.graph.add(u, c));
            }
        }
        Ok(self.sq_mean(&terms, batch.len() * n_d))
    }
}

/// All four loss terms and their sum as graph nodes.
pub struct GraphLosses {
    pub ctx: GraphCtx,
    pub ic: Expr,
    pub bc: Expr,
    pub eqn: Expr,
    pub data: Expr,
    pub total: Expr,
}

pub fn build_graph_losses(
    model: &DhpoModel,
    system: System,
    batch: &[&DhpoSample],
    points: &PointSet,
    source_term: bool,
) -> Result<GraphLosses> {
    let mut ctx = GraphCtx::new();
    let ic = ctx.loss_ic(model, batch, points, system)?;
    let bc = ctx.loss_bc(model, batch, points, system)?;
    let eqn = ctx.loss_eqn(model, batch, points, source_term)?;
    let data = ctx.loss_data(model, batch)?;
    let total = ctx.graph.sum(&[ic, bc, eqn, data]);
    Ok(GraphLosses { ctx, ic, bc, eqn, data, total })
}

// ---------------------------------------------------------------------------
// Batched kernel

pub(crate) fn coords(points: impl Iterator<Item = (f64, f64)>) -> Array2<f64> {
    let v: Vec<[f64; 2]> = points.map(|(x, t)| [x, t]).collect();
    Array2::from(v)
}

/// `B Tᵀ` for branch outputs `B` (b × p) and trunk outputs `T` (n × p).
pub(crate) fn contract(b: &Array2<f64>, t: &Array2<f64>) -> Array2<f64> {
    b.dot(&t.t())
}

/// Accumulates gradients of a loss with respect to branch outputs, the
/// output bias and the trunk parameters.
pub(crate) struct Accum<'a> {
    model: &'a OperatorModel,
    branch_out: &'a Array2<f64>,
    pub(crate) g_branch: Array2<f64>,
    pub(crate) g_bias: f64,
    pub(crate) g_trunk: Vec<f64>,
}

impl<'a> Accum<'a> {
    pub(crate) fn new(model: &'a OperatorModel, branch_out: &'a Array2<f64>) -> Self {
        Self {
            model,
            branch_out,
            g_branch: Array2::zeros(branch_out.raw_dim()),
            g_bias: 0.0,
            g_trunk: vec![0.0; model.trunk.num_params()],
        }
    }

    /// Back-propagate `dL/dU` for `U = B Tᵀ (+ bias)` through one trunk tape.
    pub(crate) fn shared_points(&mut self, tape: &jet::JetTape, g: Jet) {
        let out = tape.output();
        self.g_bias += g.v.sum();
        self.g_branch += &g.v.dot(&out.v);
        let bt = |ga: &Array2<f64>| ga.t().dot(self.branch_out);
        let mut gt = Jet { v: bt(&g.v), dx: None, dxx: None, dt: None };
        for (gs, ts, slot) in [
            (&g.dx, &out.dx, &mut gt.dx),
            (&g.dxx, &out.dxx, &mut gt.dxx),
            (&g.dt, &out.dt, &mut gt.dt),
        ] {
            if let (Some(gs), Some(ts)) = (gs, ts) {
                self.g_branch += &gs.dot(ts);
                *slot = Some(bt(gs));
            }
        }
        jet::backward(&self.model.trunk, tape, gt, &mut self.g_trunk);
    }
}

/// Loss terms and, if `with_grad`, the gradient with respect to the flat
/// parameters of `model`.
pub fn loss_and_grad(
    model: &DhpoModel,
    system: System,
    batch: &[&DhpoSample],
    points: &PointSet,
    source_term: bool,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let op = &model.operator;
    let b = batch.len();
    if b == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    let m = op.sensor_count();
    let mut inputs = Array2::zeros((b, m));
    for (i, s) in batch.iter().enumerate() {
        if s.input.len() != m {
            return Err(Error::Shape { expected: m, got: s.input.len() });
        }
        inputs.row_mut(i).assign(&ArrayView2::from_shape((1, m), &s.input.values).unwrap().row(0));
    }
    let branch_tape = op.branch.forward_tape(inputs.view())?;
    let bout = branch_tape.output().clone();
    let mut acc = Accum::new(op, &bout);
    let mut g_hidden = vec![0.0; model.hidden.mlp.num_params()];
    let mut loss = LossBreakdown::default();

    // PDE residual
    {
        let nc = points.collocation.len();
        let c = coords(points.collocation.iter().map(|p| (p[0], p[1])));
        let tape = jet::forward(&op.trunk, c.view(), Streams::ALL)?;
        let out = tape.output();
        let mut u = contract(&bout, &out.v);
        u += op.bias;
        let ux = contract(&bout, out.dx.as_ref().unwrap());
        let uxx = contract(&bout, out.dxx.as_ref().unwrap());
        let ut = contract(&bout, out.dt.as_ref().unwrap());
        let mut h = Array2::zeros((b * nc, 3));
        for i in 0..b {
            for j in 0..nc {
                let r = i * nc + j;
                h[[r, 0]] = u[[i, j]];
                h[[r, 1]] = ux[[i, j]];
                h[[r, 2]] = uxx[[i, j]];
            }
        }
        let htape = model.hidden.mlp.forward_tape(h.view())?;
        let n = htape.output();
        let scale = 1.0 / (b * nc) as f64;
        let mut resid = Array2::zeros((b, nc));
        for i in 0..b {
            for j in 0..nc {
                let f = if source_term {
                    batch[i].input.interpolate(points.collocation[j][0])
                } else {
                    0.0
                };
                resid[[i, j]] = ut[[i, j]] - n[[i * nc + j, 0]] - f;
            }
        }
        loss.eqn = resid.iter().map(|r| r * r).sum::<f64>() * scale;
        if with_grad {
            let gr = resid.mapv(|r| 2.0 * r * scale);
            let gn = gr.clone().into_shape_with_order((b * nc, 1)).unwrap().mapv(|v| -v);
            let gh = model.hidden.mlp.backward(&htape, gn, &mut g_hidden);
            let mut gu = Array2::zeros((b, nc));
            let mut gux = Array2::zeros((b, nc));
            let mut guxx = Array2::zeros((b, nc));
            for i in 0..b {
                for j in 0..nc {
                    let r = i * nc + j;
                    gu[[i, j]] = gh[[r, 0]];
                    gux[[i, j]] = gh[[r, 1]];
                    guxx[[i, j]] = gh[[r, 2]];
                }
            }
            acc.shared_points(&tape, Jet { v: gu, dx: Some(gux), dxx: Some(guxx), dt: Some(gr) });
        }
    }

    // initial condition
    {
        let nic = points.ic_x.len();
        let c = coords(points.ic_x.iter().map(|&x| (x, 0.0)));
        let tape = jet::forward(&op.trunk, c.view(), Streams::VALUE)?;
        let mut u = contract(&bout, &tape.output().v);
        u += op.bias;
        for i in 0..b {
            for (j, &x) in points.ic_x.iter().enumerate() {
                let target = match system {
                    System::Rd => 0.0,
                    System::Burgers => batch[i].input.interpolate(x),
                };
                u[[i, j]] -= target;
            }
        }
        let scale = 1.0 / (b * nic) as f64;
        loss.ic = u.iter().map(|d| d * d).sum::<f64>() * scale;
        if with_grad {
            let g = u.mapv(|d| 2.0 * d * scale);
            acc.shared_points(&tape, Jet { v: g, dx: None, dxx: None, dt: None });
        }
    }

    // boundary condition: rows [x = 0 | x = 1]
    {
        let nbc = points.bc_t.len();
        let c = coords(
            points.bc_t.iter().map(|&t| (0.0, t)).chain(points.bc_t.iter().map(|&t| (1.0, t))),
        );
        let streams = match system {
            System::Rd => Streams::VALUE,
            System::Burgers => Streams::DX,
        };
        let tape = jet::forward(&op.trunk, c.view(), streams)?;
        let out = tape.output();
        let mut u = contract(&bout, &out.v);
        u += op.bias;
        let scale = 1.0 / (b * nbc) as f64;
        match system {
            System::Rd => {
                loss.bc = u.iter().map(|v| v * v).sum::<f64>() * scale;
                if with_grad {
                    let g = u.mapv(|v| 2.0 * v * scale);
                    acc.shared_points(&tape, Jet { v: g, dx: None, dxx: None, dt: None });
                }
            }
            System::Burgers => {
                let ux = contract(&bout, out.dx.as_ref().unwrap());
                let jump = &u.slice(s![.., ..nbc]) - &u.slice(s![.., nbc..]);
                let jump_x = &ux.slice(s![.., ..nbc]) - &ux.slice(s![.., nbc..]);
                loss.bc = (jump.iter().map(|v| v * v).sum::<f64>()
                    + jump_x.iter().map(|v| v * v).sum::<f64>())
                    * scale;
                if with_grad {
                    let spread = |d: &Array2<f64>| {
                        let gd = d.mapv(|v| 2.0 * v * scale);
                        ndarray::concatenate(Axis(1), &[gd.view(), (-&gd).view()]).unwrap()
                    };
                    acc.shared_points(
                        &tape,
                        Jet { v: spread(&jump), dx: Some(spread(&jump_x)), dxx: None, dt: None },
                    );
                }
            }
        }
    }

    // data fidelity: every sample has its own points
    {
        let n_d = batch[0].labels.len();
        if batch.iter().any(|s| s.labels.len() != n_d) {
            return Err(Error::Validation("labeled point counts differ across samples".into()));
        }
        if n_d > 0 {
            let c = coords(batch.iter().flat_map(|s| s.labels.iter().map(|l| (l.x, l.t))));
            let tape = jet::forward(&op.trunk, c.view(), Streams::VALUE)?;
            let t = &tape.output().v;
            let scale = 1.0 / (b * n_d) as f64;
            let mut diff = vec![0.0; b * n_d];
            for i in 0..b {
                let bi = bout.row(i);
                for (k, l) in batch[i].labels.iter().enumerate() {
                    let r = i * n_d + k;
                    diff[r] = t.row(r).dot(&bi) + op.bias - l.u;
                }
            }
            loss.data = diff.iter().map(|d| d * d).sum::<f64>() * scale;
            if with_grad {
                let mut gt = Array2::zeros(t.raw_dim());
                for i in 0..b {
                    let bi = bout.row(i).to_owned();
                    for k in 0..n_d {
                        let r = i * n_d + k;
                        let g = 2.0 * diff[r] * scale;
                        acc.g_bias += g;
                        acc.g_branch.row_mut(i).scaled_add(g, &t.row(r));
                        gt.row_mut(r).scaled_add(g, &bi);
                    }
                }
                jet::backward(&op.trunk, &tape, Jet { v: gt, dx: None, dxx: None, dt: None }, &mut acc.g_trunk);
            }
        }
    }

    let loss = loss.finish();
    if !with_grad {
        return Ok((loss, None));
    }
    let mut g_branch = vec![0.0; op.branch.num_params()];
    op.branch.backward(&branch_tape, acc.g_branch, &mut g_branch);
    let mut grad = g_branch;
    grad.extend_from_slice(&acc.g_trunk);
    grad.push(acc.g_bias);
    grad.extend_from_slice(&g_hidden);
    Ok((loss, Some(grad)))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(rename = "L_ic")]
    pub ic: f64,
    #[serde(rename = "L_bc")]
    pub bc: f64,
    #[serde(rename = "L_eqn")]
    pub eqn: f64,
    #[serde(rename = "L_data")]
    pub data: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

impl TraceRow {
    pub fn new(iteration: usize, l: &LossBreakdown) -> Self {
        Self { iteration, ic: l.ic, bc: l.bc, eqn: l.eqn, data: l.data, total: l.total }
    }
}

pub fn write_trace_csv(path: &std::path::Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &std::path::Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Tolerance,
}

/// Deterministic batch order: step `k` always sees the same samples and
/// points, so a resumed run replays exactly.
pub(crate) fn batch_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch);
    let (epoch, k) = (step / per_epoch, step % per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "epoch", epoch as u64));
    order[k * batch..((k + 1) * batch).min(n)].to_vec()
}

/// Resumable training state.
pub struct DhpoTrainer<'a> {
    config: DhpoConfig,
    data: &'a [DhpoSample],
    model: DhpoModel,
    store: ParamStore,
    trace: Vec<TraceRow>,
}

impl<'a> DhpoTrainer<'a> {
    pub fn new(config: DhpoConfig, data: &'a [DhpoSample]) -> Result<Self> {
        let model = DhpoModel::new(&config)?;
        Self::with_model(config, data, model)
    }

    pub fn with_model(config: DhpoConfig, data: &'a [DhpoSample], model: DhpoModel) -> Result<Self> {
        config.validate()?;
        if data.len() < config.batch_size {
            return Err(Error::Validation(format!(
                "{} training samples for batch size {}",
                data.len(),
                config.batch_size
            )));
        }
        if let Some(s) = data.iter().find(|s| s.labels.len() != config.n_d) {
            return Err(Error::Validation(format!(
                "sample has {} labeled points, config expects {}",
                s.labels.len(),
                config.n_d
            )));
        }
        let mut store = ParamStore::new();
        store.push_group("branch", model.operator.branch.params());
        store.push_group("trunk", model.operator.trunk.params());
        store.push_group("bias", &[model.operator.bias]);
        store.push_group("hidden", model.hidden.mlp.params());
        Ok(Self { config, data, model, store, trace: Vec::new() })
    }

    /// Continue from saved parameters, optimizer state and trace.
    pub fn resume(
        config: DhpoConfig,
        data: &'a [DhpoSample],
        model: DhpoModel,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
        trace: Vec<TraceRow>,
    ) -> Result<Self> {
        let mut t = Self::with_model(config, data, model)?;
        t.store.set_state(m, v, step)?;
        t.trace = trace;
        t.trace.truncate(step as usize);
        Ok(t)
    }

    pub fn model(&self) -> &DhpoModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn step(&self) -> usize {
        self.store.step() as usize
    }

    pub fn into_parts(self) -> (DhpoModel, Vec<TraceRow>) {
        (self.model, self.trace)
    }

    /// Loss and gradient for the batch and points of step `k`.
    pub fn evaluate_step(&self, k: usize) -> Result<(LossBreakdown, Vec<f64>)> {
        let c = &self.config;
        let idx = batch_indices(self.data.len(), c.batch_size, c.seed, k);
        let batch: Vec<&DhpoSample> = idx.iter().map(|&i| &self.data[i]).collect();
        let points = lhs_points(rng::derive(c.seed, "points", k as u64), c.n_coll, c.n_ic, c.n_bc)?;
        let (loss, grad) = loss_and_grad(&self.model, c.system, &batch, &points, c.source_term, true)?;
        Ok((loss, grad.unwrap()))
    }

    /// One Adam update.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let k = self.step();
        let (loss, grad) = self.evaluate_step(k)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: k,
                snapshot: format!(
                    "L_ic={} L_bc={} L_eqn={} L_data={} bias={}",
                    loss.ic, loss.bc, loss.eqn, loss.data, self.model.operator.bias
                ),
            });
        }
        self.store.adam_step(&grad, &self.config.adam())?;
        self.model.load_flat(self.store.values())?;
        self.trace.push(TraceRow::new(k, &loss));
        Ok(loss)
    }

    /// Train until `until` steps have been taken in total or the loss drops
    /// below the tolerance. `on_step` runs after every update.
    pub fn run(
        &mut self,
        until: usize,
        mut on_step: impl FnMut(&Self) -> Result<()>,
    ) -> Result<StopReason> {
        while self.step() < until {
            let loss = self.train_step()?;
            on_step(self)?;
            if loss.total < self.config.loss_tolerance {
                return Ok(StopReason::Tolerance);
            }
        }
        Ok(StopReason::Budget)
    }
}

pub struct DhpoOutcome {
    pub model: DhpoModel,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

/// Train from scratch for `config.iterations` steps (or until tolerance).
pub fn train_dhpo(config: &DhpoConfig, data: &[DhpoSample]) -> Result<DhpoOutcome> {
    let mut trainer = DhpoTrainer::new(config.clone(), data)?;
    let stop = trainer.run(config.iterations, |_| Ok(()))?;
    let (model, trace) = trainer.into_parts();
    Ok(DhpoOutcome { model, trace, stop })
}

/// Dense prediction of `u` and the learned `N` on the full grid.
pub struct GridPrediction {
    pub u: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Evaluate the model on every grid node, for several inputs at once. The
/// trunk is evaluated once per chunk of nodes and shared across inputs.
pub fn predict_grids(model: &DhpoModel, inputs: &[&FunctionSample], dt: f64) -> Result<Vec<GridPrediction>> {
    let op = &model.operator;
    let m = op.sensor_count();
    let b = inputs.len();
    let mut f = Array2::zeros((b, m));
    for (i, s) in inputs.iter().enumerate() {
        if s.len() != m {
            return Err(Error::Shape { expected: m, got: s.len() });
        }
        for (k, v) in s.values.iter().enumerate() {
            f[[i, k]] = *v;
        }
    }
    let bout = op.branch.forward_batch(f.view())?;
    let total = GRID_N * GRID_N;
    let mut out: Vec<GridPrediction> = (0..b)
        .map(|_| GridPrediction { u: vec![0.0; total], hidden: vec![0.0; total] })
        .collect();
    const CHUNK: usize = 2048;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let c = coords((start..end).map(|k| (FieldGrid::x(k / GRID_N), (k % GRID_N) as f64 * dt)));
        let tape = jet::forward(&op.trunk, c.view(), Streams { dx: true, dxx: true, dt: false })?;
        let o = tape.output();
        let mut u = contract(&bout, &o.v);
        u += op.bias;
        let ux = contract(&bout, o.dx.as_ref().unwrap());
        let uxx = contract(&bout, o.dxx.as_ref().unwrap());
        let n = end - start;
        let mut h = Array2::zeros((b * n, 3));
        for i in 0..b {
            for j in 0..n {
                h[[i * n + j, 0]] = u[[i, j]];
                h[[i * n + j, 1]] = ux[[i, j]];
                h[[i * n + j, 2]] = uxx[[i, j]];
            }
        }
        let nn = model.hidden.mlp.forward_batch(h.view())?;
        for (i, pred) in out.iter_mut().enumerate() {
            for j in 0..n {
                pred.u[start + j] = u[[i, j]];
                pred.hidden[start + j] = nn[[i * n + j, 0]];
            }
        }
        start = end;
    }
    Ok(out)
}
