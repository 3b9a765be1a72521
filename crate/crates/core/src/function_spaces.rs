//! Input-function samplers and Latin hypercube point sets.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{rng, GRID_N};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    Sine,
    Grf,
    ModifiedGrf,
}

impl FunctionFamily {
    pub fn name(self) -> &'static str {
        match self {
            FunctionFamily::Sine => "sine",
            FunctionFamily::Grf => "grf",
            FunctionFamily::ModifiedGrf => "modified_grf",
        }
    }

    /// Families whose members vanish at both ends of the interval.
    pub fn vanishes_at_boundary(self) -> bool {
        !matches!(self, FunctionFamily::Grf)
    }
}

/// The sensor grid `x_i = i / (m - 1)`, exact at both endpoints.
pub fn sensor_grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// One input function discretized on the fixed sensor grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub family: FunctionFamily,
    pub seed: u64,
}

impl FunctionSample {
    pub fn new(values: Vec<f64>, family: FunctionFamily, seed: u64) -> Self {
        Self { abscissae: sensor_grid(values.len()), values, family, seed }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Piecewise-linear interpolation on the sensor grid, clamped to [0, 1].
    pub fn interpolate(&self, x: f64) -> f64 {
        let m = self.values.len();
        let pos = x.clamp(0.0, 1.0) * (m - 1) as f64;
        let i = (pos.floor() as usize).min(m - 2);
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// `sin(π y)`, exactly zero at integers.
fn sin_pi(y: f64) -> f64 {
    let r = y - 2.0 * (y / 2.0).floor(); // [0, 2)
    if r == 0.0 || r == 1.0 {
        0.0
    } else if r == 0.5 {
        1.0
    } else if r == 1.5 {
        -1.0
    } else {
        (std::f64::consts::PI * r).sin()
    }
}

/// `f(x) = Σ_k A_k sin(π k x)` on the sensor grid.
pub fn sine_from_coefficients(coeffs: &[f64], seed: u64) -> FunctionSample {
    let grid = sensor_grid(GRID_N);
    let values = grid
        .iter()
        .map(|&x| {
            coeffs.iter().enumerate().map(|(k, a)| a * sin_pi((k + 1) as f64 * x)).sum()
        })
        .collect();
    FunctionSample { abscissae: grid, values, family: FunctionFamily::Sine, seed }
}

/// Sine-basis function with `A_k ~ N(0, 1)`, `k = 1..=n_frequencies`.
pub fn sample_sine(seed: u64, n_frequencies: usize) -> Result<FunctionSample> {
    if n_frequencies == 0 {
        return Err(Error::Domain("need at least one frequency".into()));
    }
    let mut rng = rng::stream(seed, "sine", 0);
    let coeffs: Vec<f64> = (0..n_frequencies).map(|_| rng.sample(StandardNormal)).collect();
    Ok(sine_from_coefficients(&coeffs, seed))
}

/// RBF Gaussian-process prior specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub length_scale: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-10
}

/// Largest diagonal jitter tried before giving up on the factorization.
pub const MAX_JITTER: f64 = 1e-6;

impl GrfSpec {
    pub fn new(length_scale: f64) -> Self {
        Self { length_scale, jitter: default_jitter() }
    }
}

/// `k_l(a, b) = exp(-|a - b|² / (2 l²))`.
pub fn rbf_kernel(a: f64, b: f64, length_scale: f64) -> f64 {
    let d = a - b;
    (-d * d / (2.0 * length_scale * length_scale)).exp()
}

/// In-place lower Cholesky factor of a dense row-major SPD matrix.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Cholesky-factored GRF prior on the sensor grid, reusable across draws.
#[derive(Clone, Debug)]
pub struct GrfSampler {
    spec: GrfSpec,
    lower: Vec<f64>,
    jitter_used: f64,
}

impl GrfSampler {
    pub fn new(spec: GrfSpec) -> Result<Self> {
        if !(spec.length_scale > 0.0) {
            return Err(Error::Domain(format!("length scale must be positive, got {}", spec.length_scale)));
        }
        if !(spec.jitter > 0.0) {
            return Err(Error::Domain(format!("jitter must be positive, got {}", spec.jitter)));
        }
        let grid = sensor_grid(GRID_N);
        let n = grid.len();
        let mut jitter = spec.jitter;
        while jitter <= MAX_JITTER * (1.0 + 1e-9) {
            let mut cov = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    cov[i * n + j] = rbf_kernel(grid[i], grid[j], spec.length_scale);
                }
                cov[i * n + i] += jitter;
            }
            if cholesky(&mut cov, n) {
                return Ok(Self { spec, lower: cov, jitter_used: jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(format!(
            "RBF covariance with l = {} is not positive definite even with jitter {MAX_JITTER:e}",
            spec.length_scale
        )))
    }

    pub fn spec(&self) -> GrfSpec {
        self.spec
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    fn draw(&self, seed: u64) -> Vec<f64> {
        let n = GRID_N;
        let mut rng = rng::stream(seed, "grf", 0);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * z[k]).sum())
            .collect()
    }

    pub fn sample(&self, seed: u64) -> FunctionSample {
        FunctionSample::new(self.draw(seed), FunctionFamily::Grf, seed)
    }

    /// `α (x - x²) GRF(x)`; the draw for a given seed is the same as [`Self::sample`].
    pub fn sample_modified(&self, seed: u64, alpha: f64) -> Result<FunctionSample> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
        }
        let grid = sensor_grid(GRID_N);
        let values = self
            .draw(seed)
            .into_iter()
            .zip(&grid)
            .map(|(g, &x)| alpha * (x - x * x) * g)
            .collect();
        Ok(FunctionSample { abscissae: grid, values, family: FunctionFamily::ModifiedGrf, seed })
    }
}

pub fn sample_grf(seed: u64, spec: GrfSpec) -> Result<FunctionSample> {
    Ok(GrfSampler::new(spec)?.sample(seed))
}

pub fn sample_modified_grf(seed: u64, spec: GrfSpec, alpha: f64) -> Result<FunctionSample> {
    GrfSampler::new(spec)?.sample_modified(seed, alpha)
}

/// Envelope scale that keeps modified GRFs comparable to the sine family.
pub const MODIFIED_GRF_ALPHA: f64 = 8.0;

/// Collocation, initial-condition and boundary points for one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    /// `(x, t)` pairs in `[0, 1]²`.
    pub collocation: Vec<[f64; 2]>,
    /// x-values on `t = 0`.
    pub ic_x: Vec<f64>,
    /// t-values shared by the `x = 0` and `x = 1` boundaries.
    pub bc_t: Vec<f64>,
}

/// `n` points in `[0,1)^dims`, one per equal-width stratum in every dimension,
/// with the dimensions permuted independently.
pub fn latin_hypercube<R: Rng + ?Sized>(rng: &mut R, n: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[d] = (perm[i] as f64 + u) / n as f64;
        }
    }
    pts
}

pub fn lhs_points(seed: u64, n_coll: usize, n_ic: usize, n_bc: usize) -> Result<PointSet> {
    if n_coll == 0 || n_ic == 0 || n_bc == 0 {
        return Err(Error::Domain("point counts must be positive".into()));
    }
    let mut rng = rng::stream(seed, "lhs", 0);
    let collocation =
        latin_hypercube(&mut rng, n_coll, 2).into_iter().map(|p| [p[0], p[1]]).collect();
    let ic_x = latin_hypercube(&mut rng, n_ic, 1).into_iter().map(|p| p[0]).collect();
    let bc_t = latin_hypercube(&mut rng, n_bc, 1).into_iter().map(|p| p[0]).collect();
    Ok(PointSet { collocation, ic_x, bc_t })
}
