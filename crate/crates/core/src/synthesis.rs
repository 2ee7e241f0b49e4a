//! Regularised least-squares steering of the zero state toward a target segment.
//!
//! The control lives on the grid `k h`, `k = 1..n` (the node at `t = 0` is
//! pinned to zero), so the control set at horizon `n h` embeds into every
//! longer horizon by padding with zeros at the front.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DdecError, Result};
use crate::fundamental::{
    fundamental_solution_with, input_map_from, BVFundamentalSolution, FundamentalOptions, InputMapMatrix,
    DEFAULT_MEMORY_BUDGET,
};
use crate::grid::GridFunction;
use crate::simulator::{segment_grid, solve_ivp, state_segment};
use crate::system::DelaySystem;

/// `λ = AUTO_LAMBDA_FACTOR * ‖M‖²` when no λ is given.
pub const AUTO_LAMBDA_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub h: f64,
    /// Tikhonov weight; `None` picks `1e-8 ‖M‖²` (weighted operator norm).
    pub lambda: Option<f64>,
    /// Exponent of the reported residual norm (optimisation is always L²).
    pub q: f64,
    pub memory_budget: usize,
    pub fundamental: FundamentalOptions,
}

impl SynthesisOptions {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            lambda: None,
            q: 2.0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            fundamental: FundamentalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// `(AᵀA + λI) v = Aᵀb`
    Primal,
    /// `v = Aᵀ (AAᵀ + λI)⁻¹ b`
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Largest singular value of the weighted input map.
    pub sigma_max: f64,
    pub formulation: Formulation,
    pub normal_size: usize,
    /// Ratio of extreme Cholesky pivots, squared: a cheap condition estimate.
    pub pivot_condition: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub horizon: f64,
    pub h: f64,
    /// Control samples on `[0, T]`.
    pub control: GridFunction,
    /// `E(T) u` on the segment grid.
    pub achieved: GridFunction,
    /// Target resampled on the segment grid.
    pub target: GridFunction,
    pub residual: f64,
    pub lambda: f64,
    pub q: f64,
    pub diagnostics: Diagnostics,
}

impl SynthesisResult {
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "T": self.horizon,
            "h": self.h,
            "residual": self.residual,
            "lambda": self.lambda,
            "q": self.q,
            "diagnostics": self.diagnostics,
            "achieved": crate::io::InlineGrid::new(&self.achieved, "x"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub residual: f64,
    pub lambda: f64,
    pub h: f64,
}

fn check_common(system: &DelaySystem, psi: &GridFunction, opts: &SynthesisOptions) -> Result<()> {
    if psi.rows() != system.dim() || psi.cols() != 1 {
        return Err(DdecError::DimensionMismatch(format!(
            "target has {} components, system has {}",
            psi.width(),
            system.dim()
        )));
    }
    if !(opts.h > 0.0) || !opts.h.is_finite() {
        return Err(DdecError::OutOfRange(format!("step must be positive, got {}", opts.h)));
    }
    if !(opts.q >= 1.0) || !opts.q.is_finite() {
        return Err(DdecError::OutOfRange(format!("norm exponent must be at least 1, got {}", opts.q)));
    }
    if let Some(l) = opts.lambda {
        if !(l > 0.0) || !l.is_finite() {
            return Err(DdecError::OutOfRange(format!("lambda must be positive, got {l}")));
        }
    }
    Ok(())
}

fn horizon_cells(horizon: f64, h: f64) -> Result<usize> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(DdecError::OutOfRange(format!("horizon must be positive, got {horizon}")));
    }
    Ok(((horizon / h).round() as usize).max(1))
}

fn target_on_segment(system: &DelaySystem, psi: &GridFunction, h: f64) -> Result<GridFunction> {
    let (ns, hs) = segment_grid(system, h);
    let out = psi.resample(-system.max_delay(), hs, ns + 1)?;
    Ok(out.with_q(psi.q()))
}

fn segment_weights(n: usize, step: f64) -> Vec<f64> {
    (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * step } else { step }).collect()
}

/// Weighted operator `A = W_x^{1/2} M W_u^{-1/2}` without the `t = 0` control column.
struct Weighted {
    a: DMatrix<f64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

fn weighted(map: &InputMapMatrix) -> Weighted {
    let m = map.inputs;
    let d = map.dim;
    let ws = segment_weights(map.state_nodes, map.state_step);
    let wu = segment_weights(map.control_nodes, map.control_step);
    let row_scale: Vec<f64> = (0..map.state_nodes * d).map(|i| ws[i / d].sqrt()).collect();
    // control node 0 is pinned to zero and has no column
    let col_scale: Vec<f64> = (m..map.control_nodes * m).map(|j| 1.0 / wu[j / m].sqrt()).collect();
    let nc = col_scale.len();
    let a = DMatrix::from_fn(row_scale.len(), nc, |i, j| row_scale[i] * map.matrix[(i, j + m)] * col_scale[j]);
    Weighted { a, row_scale, col_scale }
}

/// Largest singular value by power iteration on `AᵀA`.
fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(a.ncols(), 1.0 / (a.ncols() as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..200 {
        let w = a.transpose() * (a * &v);
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        let next = n.sqrt();
        v = w / n;
        if (next - sigma).abs() <= 1e-10 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

fn solve_tikhonov(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<(DVector<f64>, Formulation, usize, f64)> {
    let (rows, cols) = a.shape();
    let (form, size) = if rows <= cols { (Formulation::Dual, rows) } else { (Formulation::Primal, cols) };
    let mut k = match form {
        Formulation::Dual => a * a.transpose(),
        Formulation::Primal => a.transpose() * a,
    };
    for i in 0..size {
        k[(i, i)] += lambda;
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| DdecError::SolveFailed("regularised normal matrix is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let cond = (dmax / dmin).powi(2);
    let v = match form {
        Formulation::Dual => a.transpose() * chol.solve(b),
        Formulation::Primal => chol.solve(&(a.transpose() * b)),
    };
    Ok((v, form, size, cond))
}

fn relative_residual(achieved: &GridFunction, target: &GridFunction, q: f64) -> Result<f64> {
    let diff = achieved.sub(target)?;
    let num = diff.lq_norm(q)?;
    let den = target.lq_norm(q)?;
    Ok(if den > 0.0 { num / den } else { num })
}

fn weighted_norm(map: &InputMapMatrix) -> f64 {
    operator_norm(&weighted(map).a)
}

fn solve_on_map(
    map: &InputMapMatrix,
    target: &GridFunction,
    lambda: f64,
    sigma_max: f64,
    q: f64,
) -> Result<SynthesisResult> {
    let d = map.dim;
    let m = map.inputs;
    let h = map.control_step;
    let w = weighted(map);
    let b = DVector::from_iterator(w.row_scale.len(), target.data().iter().zip(&w.row_scale).map(|(v, s)| v * s));
    let mut u = DVector::zeros(map.control_nodes * m);
    let mut diagnostics =
        Diagnostics { sigma_max, formulation: Formulation::Dual, normal_size: 0, pivot_condition: 1.0 };
    if b.norm() > 0.0 && w.a.ncols() > 0 {
        let (v, form, size, cond) = solve_tikhonov(&w.a, &b, lambda)?;
        for (j, (vj, s)) in v.iter().zip(&w.col_scale).enumerate() {
            u[j + m] = vj * s;
        }
        diagnostics = Diagnostics { sigma_max, formulation: form, normal_size: size, pivot_condition: cond };
    }
    let achieved = map.apply_vector(&u)?.with_q(q);
    let residual = relative_residual(&achieved, target, q)?;
    let control = GridFunction::new(0.0, h, m, 1, u.as_slice().to_vec())?.with_q(q);
    debug_assert_eq!(achieved.rows(), d);
    Ok(SynthesisResult {
        horizon: map.horizon,
        h,
        control,
        achieved,
        target: target.clone(),
        residual,
        lambda,
        q,
        diagnostics,
    })
}

fn fundamental_for(system: &DelaySystem, cells: usize, opts: &SynthesisOptions) -> Result<BVFundamentalSolution> {
    fundamental_solution_with(system, cells as f64 * opts.h, opts.h, &opts.fundamental)
}

/// Minimises `‖E(T)u − ψ‖² + λ‖u‖²` (trapezoid-weighted L²) over controls on `[0, T]`.
/// `T` is rounded to a whole number of steps.
pub fn synthesize_control(
    system: &DelaySystem,
    psi: &GridFunction,
    horizon: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    check_common(system, psi, opts)?;
    let cells = horizon_cells(horizon, opts.h)?;
    let fund = fundamental_for(system, cells, opts)?;
    let map = input_map_from(system, &fund, cells, opts.memory_budget)?;
    let target = target_on_segment(system, psi, opts.h)?;
    let sigma = weighted_norm(&map);
    let lambda = opts.lambda.unwrap_or(AUTO_LAMBDA_FACTOR * sigma * sigma).max(f64::MIN_POSITIVE);
    solve_on_map(&map, &target, lambda, sigma, opts.q)
}

/// Simulates `u` from the zero state and returns `‖x_T − ψ‖_q / ‖ψ‖_q`
/// (the absolute norm when `ψ ≡ 0`).
pub fn verify_control(system: &DelaySystem, u: &GridFunction, psi: &GridFunction, horizon: f64, q: f64) -> Result<f64> {
    if psi.rows() != system.dim() || psi.cols() != 1 {
        return Err(DdecError::DimensionMismatch(format!(
            "target has {} components, system has {}",
            psi.width(),
            system.dim()
        )));
    }
    let h = u.step();
    let (ns, hs) = segment_grid(system, h);
    let phi = GridFunction::zeros(-system.max_delay(), hs, ns + 1, system.dim(), 1)?;
    let traj = solve_ivp(system, &phi, Some(u), horizon, h)?;
    let seg = state_segment(&traj, horizon)?;
    let target = psi.resample(seg.t_start(), seg.step(), seg.len())?;
    relative_residual(&seg, &target, q)
}

/// Residuals at each horizon in `horizons` with a shared step and λ.
/// Without an explicit λ, the automatic value is taken from the longest horizon.
pub fn residual_curve(
    system: &DelaySystem,
    psi: &GridFunction,
    horizons: &[f64],
    opts: &SynthesisOptions,
) -> Result<Vec<CurvePoint>> {
    check_common(system, psi, opts)?;
    if horizons.is_empty() {
        return Err(DdecError::OutOfRange("empty horizon list".into()));
    }
    if horizons.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(DdecError::OutOfRange("horizons must be sorted increasingly".into()));
    }
    let cells: Vec<usize> = horizons.iter().map(|t| horizon_cells(*t, opts.h)).collect::<Result<_>>()?;
    let max_cells = *cells.iter().max().expect("non-empty");
    let fund = fundamental_for(system, max_cells, opts)?;
    let target = target_on_segment(system, psi, opts.h)?;
    let lambda = match opts.lambda {
        Some(l) => l,
        None => {
            let map = input_map_from(system, &fund, max_cells, opts.memory_budget)?;
            let s = weighted_norm(&map);
            (AUTO_LAMBDA_FACTOR * s * s).max(f64::MIN_POSITIVE)
        }
    };
    cells
        .par_iter()
        .map(|&c| {
            let map = input_map_from(system, &fund, c, opts.memory_budget)?;
            let res = solve_on_map(&map, &target, lambda, f64::NAN, opts.q)?;
            Ok(CurvePoint { horizon: map.horizon, residual: res.residual, lambda, h: opts.h })
        })
        .collect()
}
