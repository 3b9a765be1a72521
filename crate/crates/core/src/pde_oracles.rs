//! Finite-difference reference solvers on the 101 × 101 space-time grid.
//!
//! Both systems use Crank–Nicolson for the diffusion term and second-order
//! Adams–Bashforth for the remaining explicit terms, with `substeps` internal
//! steps between stored time slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_spaces::FunctionSample;
use crate::{GRID_DX, GRID_N};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// `u_t = D u_xx + K u² + f(x)`, zero IC, zero Dirichlet BC.
    Rd,
    /// `u_t = ν u_xx - u u_x`, `u(x, 0) = f(x)`, periodic BC.
    Burgers,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Rd => "rd",
            System::Burgers => "burgers",
        }
    }
}

impl std::str::FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rd" => Ok(System::Rd),
            "burgers" => Ok(System::Burgers),
            _ => Err(Error::Validation(format!("unknown system {s:?}"))),
        }
    }
}

/// Physical coefficients. `d`/`k` are used by reaction–diffusion, `nu` by Burgers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub nu: f64,
}

impl SystemParams {
    pub fn rd(d: f64, k: f64) -> Self {
        Self { d, k, nu: 0.0 }
    }

    pub fn burgers(nu: f64) -> Self {
        Self { d: 0.0, k: 0.0, nu }
    }

    /// The coefficient identified by the two-stage scheme: `D` or `ν`.
    pub fn identified(&self, system: System) -> f64 {
        match system {
            System::Rd => self.d,
            System::Burgers => self.nu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Spacing between stored time slices.
    pub output_dt: f64,
    /// Internal steps per stored slice.
    pub substeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { output_dt: 0.01, substeps: 10 }
    }
}

/// Divergence threshold on `|u|`.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// A field `u[i][j]` on the grid (`i`: x index, `j`: t index), stored
/// row-major with `i` as the slow index.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub values: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    pub system: System,
    pub params: SystemParams,
}

impl FieldGrid {
    pub fn zeros(system: System, params: SystemParams, dt: f64) -> Self {
        Self { values: vec![0.0; GRID_N * GRID_N], dx: GRID_DX, dt, system, params }
    }

    #[inline]
    pub fn index(i: usize, j: usize) -> usize {
        i * GRID_N + j
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[Self::index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[Self::index(i, j)] = v;
    }

    pub fn x(i: usize) -> f64 {
        i as f64 / (GRID_N - 1) as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Spatial profile at time index `j`.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        (0..GRID_N).map(|i| self.at(i, j)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ u[i][j] δx` over the 100 unique periodic nodes.
    pub fn periodic_mass(&self, j: usize) -> f64 {
        (0..GRID_N - 1).map(|i| self.at(i, j)).sum::<f64>() * self.dx
    }
}

/// Constant-coefficient tridiagonal solve (Thomas algorithm) for
/// `lower·x[i-1] + diag·x[i] + upper·x[i+1] = rhs[i]`, overwriting `rhs`.
fn solve_tridiagonal(lower: f64, diag: f64, upper: f64, rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = rhs.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut denom = diag;
    scratch[0] = upper / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag - lower * scratch[i - 1];
        scratch[i] = upper / denom;
        rhs[i] = (rhs[i] - lower * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Cyclic version of [`solve_tridiagonal`] via Sherman–Morrison.
fn solve_cyclic(lower: f64, diag: f64, upper: f64, rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = rhs.len();
    // A = T + w vᵀ with corners A[0][n-1] = lower and A[n-1][0] = upper:
    // w = (γ, 0, …, 0, upper), v = (1, 0, …, 0, lower/γ)
    let gamma = -diag;
    let mut first = vec![0.0; n];
    // modified diagonal entries at the two corners
    let solve_mod = |b: &mut [f64], scratch: &mut Vec<f64>| {
        // tridiagonal with diag[0] = diag - γ, diag[n-1] = diag - lower·upper/γ
        let d0 = diag - gamma;
        let dn = diag - lower * upper / gamma;
        scratch.clear();
        scratch.resize(n, 0.0);
        let mut denom = d0;
        scratch[0] = upper / denom;
        b[0] /= denom;
        for i in 1..n {
            let d = if i == n - 1 { dn } else { diag };
            denom = d - lower * scratch[i - 1];
            scratch[i] = upper / denom;
            b[i] = (b[i] - lower * b[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            b[i] -= scratch[i] * b[i + 1];
        }
    };
    solve_mod(rhs, scratch);
    first[0] = gamma;
    first[n - 1] = upper;
    solve_mod(&mut first, scratch);
    let v0 = 1.0;
    let vn = lower / gamma;
    let factor = (v0 * rhs[0] + vn * rhs[n - 1]) / (1.0 + v0 * first[0] + vn * first[n - 1]);
    for (r, z) in rhs.iter_mut().zip(&first) {
        *r -= factor * z;
    }
}

fn check_finite(u: &[f64], step: usize) -> Result<()> {
    let m = u.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
    if m > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step, magnitude: m });
    }
    Ok(())
}

fn check_input(f: &FunctionSample) -> Result<()> {
    if f.len() != GRID_N {
        return Err(Error::Shape { expected: GRID_N, got: f.len() });
    }
    Ok(())
}

pub fn solve_reaction_diffusion(f: &FunctionSample, params: SystemParams) -> Result<FieldGrid> {
    solve_reaction_diffusion_with(f, params, SolverOptions::default())
}

pub fn solve_reaction_diffusion_with(
    f: &FunctionSample,
    params: SystemParams,
    opts: SolverOptions,
) -> Result<FieldGrid> {
    check_input(f)?;
    let dt = opts.output_dt / opts.substeps as f64;
    let dx = GRID_DX;
    let n = GRID_N - 2; // interior unknowns
    let r = params.d * dt / (dx * dx);
    let src = &f.values[1..GRID_N - 1];

    let mut grid = FieldGrid::zeros(System::Rd, params, opts.output_dt);
    let mut u = vec![0.0; n];
    let mut prev_rhs: Option<Vec<f64>> = None;
    let mut rhs = vec![0.0; n];
    let mut scratch = Vec::new();
    let explicit = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(src).map(|(&v, &s)| params.k * v * v + s).collect()
    };

    for j in 1..GRID_N {
        for s in 0..opts.substeps {
            let cur = explicit(&u);
            for i in 0..n {
                let left = if i > 0 { u[i - 1] } else { 0.0 };
                let right = if i + 1 < n { u[i + 1] } else { 0.0 };
                let ab = match &prev_rhs {
                    Some(p) => 1.5 * cur[i] - 0.5 * p[i],
                    None => cur[i],
                };
                rhs[i] = u[i] + 0.5 * r * (left - 2.0 * u[i] + right) + dt * ab;
            }
            solve_tridiagonal(-0.5 * r, 1.0 + r, -0.5 * r, &mut rhs, &mut scratch);
            std::mem::swap(&mut u, &mut rhs);
            prev_rhs = Some(cur);
            check_finite(&u, (j - 1) * opts.substeps + s + 1)?;
        }
        for i in 0..n {
            grid.set(i + 1, j, u[i]);
        }
    }
    Ok(grid)
}

pub fn solve_burgers(f: &FunctionSample, params: SystemParams) -> Result<FieldGrid> {
    solve_burgers_with(f, params, SolverOptions::default())
}

pub fn solve_burgers_with(
    f: &FunctionSample,
    params: SystemParams,
    opts: SolverOptions,
) -> Result<FieldGrid> {
    check_input(f)?;
    let dt = opts.output_dt / opts.substeps as f64;
    let dx = GRID_DX;
    let n = GRID_N - 1; // unique periodic nodes
    let r = params.nu * dt / (dx * dx);

    let mut u: Vec<f64> = f.values[..n].to_vec();
    u[0] = 0.5 * (f.values[0] + f.values[GRID_N - 1]);

    let mut grid = FieldGrid::zeros(System::Burgers, params, opts.output_dt);
    let store = |grid: &mut FieldGrid, u: &[f64], j: usize| {
        for (i, &v) in u.iter().enumerate() {
            grid.set(i, j, v);
        }
        grid.set(n, j, u[0]);
    };
    store(&mut grid, &u, 0);

    // -(u²/2)_x in conservative central form
    let advect = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let up = u[(i + 1) % n];
                let um = u[(i + n - 1) % n];
                -(up * up - um * um) / (4.0 * dx)
            })
            .collect()
    };

    let mut prev: Option<Vec<f64>> = None;
    let mut rhs = vec![0.0; n];
    let mut scratch = Vec::new();
    for j in 1..GRID_N {
        for s in 0..opts.substeps {
            let cur = advect(&u);
            for i in 0..n {
                let up = u[(i + 1) % n];
                let um = u[(i + n - 1) % n];
                let ab = match &prev {
                    Some(p) => 1.5 * cur[i] - 0.5 * p[i],
                    None => cur[i],
                };
                rhs[i] = u[i] + 0.5 * r * (um - 2.0 * u[i] + up) + dt * ab;
            }
            solve_cyclic(-0.5 * r, 1.0 + r, -0.5 * r, &mut rhs, &mut scratch);
            std::mem::swap(&mut u, &mut rhs);
            prev = Some(cur);
            check_finite(&u, (j - 1) * opts.substeps + s + 1)?;
        }
        store(&mut grid, &u, j);
    }
    Ok(grid)
}

pub fn solve(system: System, f: &FunctionSample, params: SystemParams, opts: SolverOptions) -> Result<FieldGrid> {
    match system {
        System::Rd => solve_reaction_diffusion_with(f, params, opts),
        System::Burgers => solve_burgers_with(f, params, opts),
    }
}

/// Ground-truth right-hand side `N` evaluated with central differences on a
/// stored grid: `D u_xx + K u²` or `ν u_xx - u u_x`.
pub fn true_hidden_term(grid: &FieldGrid, params: SystemParams, system: System) -> FieldGrid {
    let mut out = FieldGrid { values: vec![0.0; grid.values.len()], ..grid.clone() };
    let h = grid.dx;
    let last = GRID_N - 1;
    for j in 0..GRID_N {
        for i in 0..GRID_N {
            let u = grid.at(i, j);
            let value = match system {
                System::Rd => {
                    let uxx = if i == 0 {
                        (2.0 * grid.at(0, j) - 5.0 * grid.at(1, j) + 4.0 * grid.at(2, j)
                            - grid.at(3, j))
                            / (h * h)
                    } else if i == last {
                        (2.0 * grid.at(last, j) - 5.0 * grid.at(last - 1, j)
                            + 4.0 * grid.at(last - 2, j)
                            - grid.at(last - 3, j))
                            / (h * h)
                    } else {
                        (grid.at(i - 1, j) - 2.0 * u + grid.at(i + 1, j)) / (h * h)
                    };
                    params.d * uxx + params.k * u * u
                }
                System::Burgers => {
                    // node `last` duplicates node 0
                    let n = last;
                    let ii = i % n;
                    let up = grid.at((ii + 1) % n, j);
                    let um = grid.at((ii + n - 1) % n, j);
                    let uxx = (um - 2.0 * u + up) / (h * h);
                    let ux = (up - um) / (2.0 * h);
                    params.nu * uxx - u * ux
                }
            };
            out.set(i, j, value);
        }
    }
    out
}
