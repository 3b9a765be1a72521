//! Two-stage identification of a scalar PDE coefficient from sparse sensors.
//!
//! Stage 1 fits an operator network whose branch sees the sensor readings
//! and whose loss lives only at the sensor locations. Stage 2 starts from
//! that fit and trains it jointly with a parameter network `ξ = I(sensors)`
//! under `λ·L_pde + L_data`, where the residual is
//!
//! * reaction–diffusion: `u_t − ξ u_xx − K u² − f(x)`
//! * Burgers: `u_t − ξ u_xx + u u_x`

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, AdamConfig, ParamStore};
use crate::dhpo::{batch_indices, contract, coords, Accum, TraceRow};
use crate::error::{Error, Result};
use crate::function_spaces::{latin_hypercube, FunctionSample, GrfSpec};
use crate::nets::jet::{self, Jet, Streams};
use crate::nets::{Activation, MlpSpec, OperatorModel, OperatorSpec, ParameterNet};
use crate::pde_oracles::{FieldGrid, SolverOptions, System};
use crate::{rng, GRID_N};

/// Fixed measurement locations shared by every sample of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub seed: u64,
    /// Output time spacing of the grid the nodes refer to.
    pub dt: f64,
    /// `(i, j)` grid indices, sorted.
    pub nodes: Vec<(usize, usize)>,
}

impl SensorLayout {
    /// `n` distinct grid nodes drawn uniformly.
    pub fn random(n: usize, seed: u64, dt: f64) -> Result<Self> {
        let total = GRID_N * GRID_N;
        if n == 0 || n > total {
            return Err(Error::Domain(format!("cannot place {n} sensors on {total} nodes")));
        }
        let mut r = rng::stream(seed, "sensors", 0);
        let mut picks = index::sample(&mut r, total, n).into_vec();
        picks.sort_unstable();
        let nodes = picks.into_iter().map(|k| (k / GRID_N, k % GRID_N)).collect();
        Ok(Self { seed, dt, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|&(i, j)| (FieldGrid::x(i), j as f64 * self.dt)).collect()
    }

    /// Read the sensor vector of a field, in layout order.
    pub fn read(&self, field: &FieldGrid) -> Vec<f64> {
        self.nodes.iter().map(|&(i, j)| field.at(i, j)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.iter().any(|&(i, j)| i >= GRID_N || j >= GRID_N) {
            return Err(Error::Validation("sensor node outside the grid".into()));
        }
        if self.nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("sensor nodes must be sorted and distinct".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SysidConfig {
    pub system: System,
    /// Range of the identified coefficient.
    pub param_range: (f64, f64),
    /// Reaction coefficient, held fixed (reaction–diffusion only).
    pub reaction: f64,
    pub n_values: usize,
    pub n_functions: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_sensors: usize,
    pub n_coll: usize,
    pub lambda_coll: f64,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub batch_size: usize,
    pub grf: GrfSpec,
    pub seed: u64,
    pub branch: MlpSpec,
    pub trunk: MlpSpec,
    pub parameter_net: MlpSpec,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl SysidConfig {
    /// Full-scale settings for either system.
    pub fn defaults(system: System, seed: u64) -> Self {
        let s = |name: &str| rng::derive(seed, name, 0);
        let (lambda_coll, batch_size) = match system {
            System::Rd => (10.0, 3500),
            System::Burgers => (1.0, 2500),
        };
        Self {
            system,
            param_range: (0.01, 0.05),
            reaction: 0.01,
            n_values: 500,
            n_functions: 20,
            n_train: 8500,
            n_test: 1500,
            n_sensors: 300,
            n_coll: 2500,
            lambda_coll,
            learning_rate: 1e-3,
            decay_rate: 0.9,
            decay_steps: 1000,
            stage1_iterations: 20_000,
            stage2_iterations: 80_000,
            batch_size,
            grf: GrfSpec::new(0.2),
            seed,
            branch: MlpSpec::new(&[300, 64, 64, 64, 100], Activation::Tanh, s("branch")),
            trunk: MlpSpec::new(&[2, 64, 64, 64, 100], Activation::Tanh, s("trunk")),
            parameter_net: MlpSpec::new(&[300, 64, 64, 64, 1], Activation::Tanh, s("parameter_net")),
            adam: AdamConfig::default(),
        }
    }

    /// Reduced scale that runs on one CPU core in well under an hour.
    pub fn desk(system: System, seed: u64) -> Self {
        Self {
            n_values: 50,
            n_functions: 5,
            n_train: 200,
            n_test: 50,
            stage1_iterations: 10_000,
            stage2_iterations: 20_000,
            batch_size: 50,
            ..Self::defaults(system, seed)
        }
    }

    pub fn operator_spec(&self) -> OperatorSpec {
        OperatorSpec { branch: self.branch.clone(), trunk: self.trunk.clone() }
    }

    /// Exponentially decayed step size, continuous in `k`.
    pub fn learning_rate_at(&self, k: usize) -> f64 {
        self.learning_rate * self.decay_rate.powf(k as f64 / self.decay_steps as f64)
    }

    /// The `n_values` evenly spaced coefficients.
    pub fn parameter_values(&self) -> Vec<f64> {
        let (lo, hi) = self.param_range;
        if self.n_values == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..self.n_values).map(|k| lo + (hi - lo) * k as f64 / (self.n_values - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_train + self.n_test != self.n_values * self.n_functions {
            return bad(format!(
                "n_train + n_test = {} but {} × {} fields are generated",
                self.n_train + self.n_test,
                self.n_values,
                self.n_functions
            ));
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_coll == 0 || self.batch_size == 0 {
            return bad("sample, collocation and batch counts must be positive".into());
        }
        if self.batch_size > self.n_train {
            return bad(format!("batch size {} exceeds n_train {}", self.batch_size, self.n_train));
        }
        if !(self.lambda_coll > 0.0) {
            return bad("lambda_coll must be positive".into());
        }
        let (lo, hi) = self.param_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad(format!("invalid parameter range ({lo}, {hi})"));
        }
        if !(self.learning_rate > 0.0) || !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("learning rate must be positive and decay rate in (0, 1]".into());
        }
        if self.decay_steps == 0 {
            return bad("decay_steps must be positive".into());
        }
        if self.branch.input_width() != self.n_sensors || self.parameter_net.input_width() != self.n_sensors {
            return bad(format!("branch and parameter network must take {} sensors", self.n_sensors));
        }
        if self.trunk.activation == Activation::Relu {
            return bad("the residual needs a smooth trunk".into());
        }
        self.operator_spec().validate()?;
        ParameterNet::new(self.parameter_net.clone())?;
        Ok(())
    }
}

/// Everything the trainer sees of one field.
#[derive(Clone, Debug, PartialEq)]
pub struct SysidSample {
    pub sensors: Vec<f64>,
    /// Source term (reaction–diffusion only).
    pub source: Option<FunctionSample>,
    pub xi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::One => "stage1",
            Stage::Two => "stage2",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SysidLoss {
    pub data: f64,
    /// Unweighted residual mean square (zero in stage 1).
    pub pde: f64,
    pub total: f64,
}

impl SysidLoss {
    pub fn trace_row(&self, iteration: usize) -> TraceRow {
        TraceRow { iteration, ic: 0.0, bc: 0.0, eqn: self.pde, data: self.data, total: self.total }
    }
}

fn sensor_matrix(batch: &[&SysidSample], m: usize) -> Result<Array2<f64>> {
    let mut s = Array2::zeros((batch.len(), m));
    for (i, b) in batch.iter().enumerate() {
        if b.sensors.len() != m {
            return Err(Error::Shape { expected: m, got: b.sensors.len() });
        }
        for (k, v) in b.sensors.iter().enumerate() {
            s[[i, k]] = *v;
        }
    }
    Ok(s)
}

/// Physics settings of the residual.
#[derive(Clone, Copy, Debug)]
pub struct Residual {
    pub system: System,
    pub reaction: f64,
    pub lambda: f64,
}

/// Loss and gradient over `[branch | trunk | bias | parameter net]`. Without
/// a parameter network only the sensor loss is formed (stage 1).
pub fn loss_and_grad(
    model: &OperatorModel,
    pnet: Option<&ParameterNet>,
    residual: Residual,
    batch: &[&SysidSample],
    sensor_coords: &[(f64, f64)],
    collocation: &[[f64; 2]],
    with_grad: bool,
) -> Result<(SysidLoss, Option<Vec<f64>>)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    let m = model.sensor_count();
    if sensor_coords.len() != m {
        return Err(Error::Shape { expected: m, got: sensor_coords.len() });
    }
    let s = sensor_matrix(batch, m)?;
    let branch_tape = model.branch.forward_tape(s.view())?;
    let bout = branch_tape.output().clone();
    let mut acc = Accum::new(model, &bout);
    let mut loss = SysidLoss::default();

    {
        let c = coords(sensor_coords.iter().copied());
        let tape = jet::forward(&model.trunk, c.view(), Streams::VALUE)?;
        let mut diff = contract(&bout, &tape.output().v);
        diff += model.bias;
        diff -= &s;
        let scale = 1.0 / (b * m) as f64;
        loss.data = diff.iter().map(|d| d * d).sum::<f64>() * scale;
        if with_grad {
            let g = diff.mapv(|d| 2.0 * d * scale);
            acc.shared_points(&tape, Jet { v: g, dx: None, dxx: None, dt: None });
        }
    }

    let mut g_pnet = Vec::new();
    if let Some(pnet) = pnet {
        let n = collocation.len();
        if n == 0 {
            return Err(Error::Domain("no collocation points".into()));
        }
        if pnet.sensor_count() != m {
            return Err(Error::Shape { expected: m, got: pnet.sensor_count() });
        }
        let ptape = pnet.mlp.forward_tape(s.view())?;
        let raw = ptape.output().column(0).to_owned();
        let xi = raw.mapv(softplus);

        let c = coords(collocation.iter().map(|p| (p[0], p[1])));
        let tape = jet::forward(&model.trunk, c.view(), Streams::ALL)?;
        let out = tape.output();
        let mut u = contract(&bout, &out.v);
        u += model.bias;
        let ux = contract(&bout, out.dx.as_ref().unwrap());
        let uxx = contract(&bout, out.dxx.as_ref().unwrap());
        let ut = contract(&bout, out.dt.as_ref().unwrap());

        let mut r = Array2::zeros((b, n));
        for i in 0..b {
            let source = match residual.system {
                System::Rd => Some(batch[i].source.as_ref().ok_or_else(|| {
                    Error::Validation("reaction–diffusion sample without a source term".into())
                })?),
                System::Burgers => None,
            };
            for j in 0..n {
                let mut v = ut[[i, j]] - xi[i] * uxx[[i, j]];
                match source {
                    Some(f) => v -= residual.reaction * u[[i, j]] * u[[i, j]] + f.interpolate(collocation[j][0]),
                    None => v += u[[i, j]] * ux[[i, j]],
                }
                r[[i, j]] = v;
            }
        }
        let scale = 1.0 / (b * n) as f64;
        loss.pde = r.iter().map(|v| v * v).sum::<f64>() * scale;

        if with_grad {
            let gr = r.mapv(|v| 2.0 * residual.lambda * v * scale);
            let mut gu = Array2::zeros((b, n));
            let mut gux = Array2::zeros((b, n));
            let mut guxx = Array2::zeros((b, n));
            let mut graw = Array2::zeros((b, 1));
            for i in 0..b {
                let mut gxi = 0.0;
                for j in 0..n {
                    let g = gr[[i, j]];
                    guxx[[i, j]] = -xi[i] * g;
                    gxi -= uxx[[i, j]] * g;
                    match residual.system {
                        System::Rd => gu[[i, j]] = -2.0 * residual.reaction * u[[i, j]] * g,
                        System::Burgers => {
                            gu[[i, j]] = ux[[i, j]] * g;
                            gux[[i, j]] = u[[i, j]] * g;
                        }
                    }
                }
                graw[[i, 0]] = gxi * sigmoid(raw[i]);
            }
            acc.shared_points(&tape, Jet { v: gu, dx: Some(gux), dxx: Some(guxx), dt: Some(gr) });
            g_pnet = vec![0.0; pnet.mlp.num_params()];
            pnet.mlp.backward(&ptape, graw, &mut g_pnet);
        }
    }
    loss.total = residual.lambda * loss.pde + loss.data;

    if !with_grad {
        return Ok((loss, None));
    }
    let mut grad = vec![0.0; model.branch.num_params()];
    model.branch.backward(&branch_tape, acc.g_branch, &mut grad);
    grad.extend_from_slice(&acc.g_trunk);
    grad.push(acc.g_bias);
    grad.extend_from_slice(&g_pnet);
    Ok((loss, Some(grad)))
}

/// A parameter network whose untrained output sits at the middle of the
/// coefficient range.
pub fn init_parameter_net(config: &SysidConfig) -> Result<ParameterNet> {
    let mut pnet = ParameterNet::new(config.parameter_net.clone())?;
    let mid = 0.5 * (config.param_range.0 + config.param_range.1);
    let last = pnet.mlp.spec().num_layers() - 1;
    let (_, b_off) = pnet.mlp.spec().layer_offsets(last);
    // inverse softplus
    pnet.mlp.params_mut()[b_off] = mid + (-(-mid).exp_m1()).ln();
    Ok(pnet)
}

/// Resumable trainer for either stage.
pub struct SysidTrainer<'a> {
    config: SysidConfig,
    stage: Stage,
    data: &'a [SysidSample],
    sensor_coords: Vec<(f64, f64)>,
    model: OperatorModel,
    pnet: Option<ParameterNet>,
    store: ParamStore,
    trace: Vec<TraceRow>,
}

impl<'a> SysidTrainer<'a> {
    pub fn stage1(config: SysidConfig, layout: &SensorLayout, data: &'a [SysidSample]) -> Result<Self> {
        let model = OperatorModel::new(&config.operator_spec())?;
        Self::stage1_with_model(config, layout, data, model)
    }

    /// Stage 1 from given operator weights, e.g. a checkpoint.
    pub fn stage1_with_model(
        config: SysidConfig,
        layout: &SensorLayout,
        data: &'a [SysidSample],
        model: OperatorModel,
    ) -> Result<Self> {
        if model.spec() != config.operator_spec() {
            return Err(Error::Validation("operator does not match the configured architecture".into()));
        }
        Self::build(config, Stage::One, layout, data, model, None)
    }

    /// Warm start from a stage-1 operator.
    pub fn stage2(
        config: SysidConfig,
        layout: &SensorLayout,
        data: &'a [SysidSample],
        warm: OperatorModel,
        pnet: Option<ParameterNet>,
    ) -> Result<Self> {
        if warm.spec() != config.operator_spec() {
            return Err(Error::Validation("stage-1 operator does not match the configured architecture".into()));
        }
        let pnet = match pnet {
            Some(p) => p,
            None => init_parameter_net(&config)?,
        };
        Self::build(config, Stage::Two, layout, data, warm, Some(pnet))
    }

    fn build(
        config: SysidConfig,
        stage: Stage,
        layout: &SensorLayout,
        data: &'a [SysidSample],
        model: OperatorModel,
        pnet: Option<ParameterNet>,
    ) -> Result<Self> {
        config.validate()?;
        layout.validate()?;
        if layout.len() != config.n_sensors {
            return Err(Error::Validation(format!(
                "layout has {} sensors, config expects {}",
                layout.len(),
                config.n_sensors
            )));
        }
        if data.len() < config.batch_size {
            return Err(Error::Validation(format!(
                "{} training samples for batch size {}",
                data.len(),
                config.batch_size
            )));
        }
        let mut store = ParamStore::new();
        store.push_group("branch", model.branch.params());
        store.push_group("trunk", model.trunk.params());
        store.push_group("bias", &[model.bias]);
        if let Some(p) = &pnet {
            store.push_group("parameter_net", p.mlp.params());
        }
        Ok(Self {
            config,
            stage,
            data,
            sensor_coords: layout.coords(),
            model,
            pnet,
            store,
            trace: Vec::new(),
        })
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, step: u64, mut trace: Vec<TraceRow>) -> Result<()> {
        self.store.set_state(m, v, step)?;
        trace.truncate(step as usize);
        self.trace = trace;
        Ok(())
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn model(&self) -> &OperatorModel {
        &self.model
    }

    pub fn parameter_net(&self) -> Option<&ParameterNet> {
        self.pnet.as_ref()
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

    pub fn into_parts(self) -> (OperatorModel, Option<ParameterNet>, Vec<TraceRow>) {
        (self.model, self.pnet, self.trace)
    }

    fn residual(&self) -> Residual {
        Residual { system: self.config.system, reaction: self.config.reaction, lambda: self.config.lambda_coll }
    }

    fn batch(&self, k: usize) -> Vec<&'a SysidSample> {
        let seed = rng::derive(self.config.seed, self.stage.name(), 0);
        batch_indices(self.data.len(), self.config.batch_size, seed, k)
            .into_iter()
            .map(|i| &self.data[i])
            .collect()
    }

    fn collocation(&self, k: usize) -> Vec<[f64; 2]> {
        if self.stage == Stage::One {
            return Vec::new();
        }
        let mut r = rng::stream(self.config.seed, "collocation", k as u64);
        latin_hypercube(&mut r, self.config.n_coll, 2).into_iter().map(|p| [p[0], p[1]]).collect()
    }

    /// Loss and gradient for the batch and collocation points of step `k`.
    pub fn evaluate_step(&self, k: usize) -> Result<(SysidLoss, Vec<f64>)> {
        let (loss, grad) = loss_and_grad(
            &self.model,
            self.pnet.as_ref(),
            self.residual(),
            &self.batch(k),
            &self.sensor_coords,
            &self.collocation(k),
            true,
        )?;
        Ok((loss, grad.unwrap()))
    }

    pub fn train_step(&mut self) -> Result<SysidLoss> {
        let k = self.step();
        let (loss, grad) = self.evaluate_step(k)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: k,
                snapshot: format!("{} L_data={} L_pde={}", self.stage.name(), loss.data, loss.pde),
            });
        }
        let cfg = AdamConfig { lr: self.config.learning_rate_at(k), ..self.config.adam };
        self.store.adam_step(&grad, &cfg)?;
        let values = self.store.values();
        let n = self.model.num_params();
        self.model.load_flat(&values[..n])?;
        if let Some(p) = &mut self.pnet {
            p.mlp.params_mut().copy_from_slice(&values[n..]);
        }
        self.trace.push(loss.trace_row(k));
        Ok(loss)
    }

    pub fn run(&mut self, until: usize, mut on_step: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.step() < until {
            self.train_step()?;
            on_step(self)?;
        }
        Ok(())
    }
}

pub fn train_stage1(config: &SysidConfig, layout: &SensorLayout, data: &[SysidSample]) -> Result<(OperatorModel, Vec<TraceRow>)> {
    let mut t = SysidTrainer::stage1(config.clone(), layout, data)?;
    t.run(config.stage1_iterations, |_| Ok(()))?;
    let (model, _, trace) = t.into_parts();
    Ok((model, trace))
}

pub struct Stage2Outcome {
    pub model: OperatorModel,
    pub pnet: ParameterNet,
    pub trace: Vec<TraceRow>,
    /// `ξ` predicted for each training sample.
    pub predictions: Vec<f64>,
}

pub fn train_stage2(
    config: &SysidConfig,
    layout: &SensorLayout,
    data: &[SysidSample],
    warm: OperatorModel,
) -> Result<Stage2Outcome> {
    let mut t = SysidTrainer::stage2(config.clone(), layout, data, warm, None)?;
    t.run(config.stage2_iterations, |_| Ok(()))?;
    let (model, pnet, trace) = t.into_parts();
    let pnet = pnet.expect("stage 2 always carries a parameter network");
    let predictions = data.iter().map(|s| predict_parameter(&pnet, &s.sensors)).collect::<Result<_>>()?;
    Ok(Stage2Outcome { model, pnet, trace, predictions })
}

/// `ξ` for one sensor vector in layout order.
pub fn predict_parameter(pnet: &ParameterNet, sensors: &[f64]) -> Result<f64> {
    pnet.predict(sensors)
}

/// Full-grid reconstructions for a batch of branch inputs, one row per input
/// in grid index order.
pub fn predict_fields(model: &OperatorModel, branch_inputs: ArrayView2<'_, f64>, dt: f64) -> Result<Array2<f64>> {
    let bout = model.branch.forward_batch(branch_inputs)?;
    let total = GRID_N * GRID_N;
    let c = coords((0..total).map(|k| (FieldGrid::x(k / GRID_N), (k % GRID_N) as f64 * dt)));
    let t = model.trunk.forward_batch(c.view())?;
    let mut u = contract(&bout, &t);
    u += model.bias;
    Ok(u)
}

/// The output spacing both systems are stored at.
pub fn default_dt() -> f64 {
    SolverOptions::default().output_dt
}
