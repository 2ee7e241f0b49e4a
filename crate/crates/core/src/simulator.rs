//! Forward marching for the initial-value problem on a uniform grid.
//!
//! Nodes are `t_k = k h`. Delayed values are read by linear interpolation,
//! the distributed term by the composite trapezoid rule over `s = 0, h, 2h, …`
//! clamped to `[0, Λ_N]`. The `s = 0` node makes every step a `d x d` solve
//! `(I - h/2 g(0)) x_k = explicit terms + B u(t_k)`.
//!
//! Values at nodes are left limits, so the node at `t = 0` carries `φ(0)`.
//! The right limit `x(0+)` is kept separately and used wherever the
//! integrand or an interpolation stencil touches `(0, h)`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{DdecError, Result};
use crate::grid::{fit_interval, GridFunction};
use crate::system::DelaySystem;

/// Tolerance used when deciding whether a delayed position is a grid node.
const NODE_SNAP: f64 = 1e-9;
const MAX_BREAKS: usize = 100_000;

/// Residual bound on the discrete equation at every node.
pub const RESIDUAL_TOL: f64 = 1e-12;

/// Precomputed stencil for one system and one step.
pub(crate) struct Scheme {
    d: usize,
    hist: usize,
    delays: Vec<(f64, Vec<f64>)>,
    /// `(w_i g(s_i))` for `i = 1..=L`; index 0 holds `(h/2) g(0)`.
    weighted: Vec<Vec<f64>>,
    /// Half weight of the cell left of node `i` times `g(s_i)`, used at the `t = 0` seam.
    left_half: Vec<Vec<f64>>,
    tail: Option<(f64, Vec<f64>)>,
    kernel_active: bool,
    implicit: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    max_delay_over_h: f64,
}

pub(crate) struct MarchOutput {
    /// Node blocks for `k = -hist..=steps`, each `d x width` row-major.
    pub data: Vec<f64>,
    pub right0: Vec<f64>,
    pub max_residual: f64,
}

/// Number of cells of the state-segment grid on `[-Λ_N, 0]` for step `h`.
pub fn segment_cells(max_delay: f64, h: f64) -> usize {
    fit_interval(-max_delay, 0.0, h).map(|(n, _)| n).unwrap_or(1)
}

impl Scheme {
    pub(crate) fn new(system: &DelaySystem, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(DdecError::OutOfRange(format!("step must be positive, got {h}")));
        }
        let d = system.dim();
        let lambda_n = system.max_delay();
        if system.min_delay() / h < 1.0 - NODE_SNAP {
            return Err(DdecError::StepTooLarge(format!("step {h} exceeds the smallest delay {}", system.min_delay())));
        }
        let hist = (lambda_n / h - NODE_SNAP).ceil() as usize;
        let delays = system
            .delays()
            .iter()
            .zip(system.coefficients())
            .filter(|(_, a)| a.iter().any(|v| *v != 0.0))
            .map(|(l, a)| (l / h, row_major(a)))
            .collect();

        let kernel = system.kernel();
        let kernel_active = !kernel.is_zero();
        let cells = (lambda_n / h + NODE_SNAP).floor() as usize;
        let mut rem = lambda_n - cells as f64 * h;
        if rem < NODE_SNAP * h {
            rem = 0.0;
        }
        let mut weighted = Vec::new();
        let mut left_half = Vec::new();
        let mut tail = None;
        let g0 = kernel.eval(0.0);
        if kernel_active {
            let mut buf = vec![0.0; d * d];
            for i in 0..=cells {
                kernel.eval_into(i as f64 * h, &mut buf);
                let wl = if i == 0 { 0.0 } else { 0.5 * h };
                let wr = if i < cells { 0.5 * h } else { 0.5 * rem };
                weighted.push(buf.iter().map(|v| v * (wl + wr)).collect());
                left_half.push(buf.iter().map(|v| v * wl).collect());
            }
            if rem > 0.0 {
                tail = Some((0.5 * rem, row_major(&kernel.eval(lambda_n))));
            }
        }
        let implicit_part = &g0 * (0.5 * h);
        if kernel_active && implicit_part.norm() >= 0.5 {
            return Err(DdecError::StepTooLarge(format!(
                "‖(h/2) g(0)‖ = {} must stay below 1/2",
                implicit_part.norm()
            )));
        }
        let mat = DMatrix::<f64>::identity(d, d) - implicit_part;
        let implicit = mat.lu();
        if !implicit.is_invertible() {
            return Err(DdecError::StepTooLarge("implicit node matrix is singular".into()));
        }
        Ok(Self { d, hist, delays, weighted, left_half, tail, kernel_active, implicit, max_delay_over_h: lambda_n / h })
    }

    pub(crate) fn hist(&self) -> usize {
        self.hist
    }

    /// Marches `k = 0..=steps`. `history` holds blocks for `k = -hist..=0`.
    pub(crate) fn run<F>(&self, width: usize, steps: usize, history: Vec<f64>, mut forcing: F) -> Result<MarchOutput>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let d = self.d;
        let bw = d * width;
        assert_eq!(history.len(), (self.hist + 1) * bw);
        let mut data = history;
        data.resize((self.hist + steps + 1) * bw, 0.0);
        let mut right0 = vec![0.0; bw];
        let mut acc = vec![0.0; bw];
        let mut tmp = vec![0.0; bw];
        let mut max_residual: f64 = 0.0;

        for k in 0..=steps {
            acc.iter_mut().for_each(|v| *v = 0.0);
            forcing(k, &mut acc);
            for (lh, a) in &self.delays {
                self.value_at(&data, &right0, width, k as f64 - lh, &mut tmp);
                gemm_acc(&mut acc, a, &tmp, d, width, 1.0);
            }
            if self.kernel_active {
                let first = if k == 0 { 0 } else { 1 };
                for (i, w) in self.weighted.iter().enumerate().skip(first) {
                    let n = self.hist + k - i;
                    // k == 0 reads s = 0 from the history (x(0-) = φ(0)), explicitly
                    gemm_acc(&mut acc, w, &data[n * bw..(n + 1) * bw], d, width, 1.0);
                }
                if k >= 1 && k < self.left_half.len() {
                    let n0 = self.hist * bw;
                    for c in 0..bw {
                        tmp[c] = right0[c] - data[n0 + c];
                    }
                    gemm_acc(&mut acc, &self.left_half[k], &tmp, d, width, 1.0);
                }
                if let Some((wt, g)) = &self.tail {
                    self.value_at(&data, &right0, width, k as f64 - self.max_delay_over_h, &mut tmp);
                    gemm_acc(&mut acc, g, &tmp, d, width, *wt);
                }
            }
            if k == 0 {
                right0.copy_from_slice(&acc);
                continue;
            }
            let rhs = DMatrix::from_row_slice(d, width, &acc);
            let x = self
                .implicit
                .solve(&rhs)
                .ok_or_else(|| DdecError::StepTooLarge("implicit node solve failed".into()))?;
            let n = self.hist + k;
            for r in 0..d {
                for c in 0..width {
                    data[n * bw + r * width + c] = x[(r, c)];
                }
            }
            // residual of (I - h/2 g(0)) x_k = rhs
            let mut res = x.clone();
            if self.kernel_active {
                let g0 = DMatrix::from_row_slice(d, d, &self.weighted[0]);
                res -= &g0 * &x;
            }
            res -= &rhs;
            let scale = rhs.norm().max(1.0);
            max_residual = max_residual.max(res.norm() / scale);
        }
        if max_residual > RESIDUAL_TOL {
            warn!("discrete equation residual {max_residual:e} exceeds {RESIDUAL_TOL:e}");
        }
        Ok(MarchOutput { data, right0, max_residual })
    }

    /// Interpolated value at fractional node position `pos` (relative to `k = 0`).
    fn value_at(&self, data: &[f64], right0: &[f64], width: usize, pos: f64, out: &mut [f64]) {
        let bw = self.d * width;
        let n0 = (pos + NODE_SNAP).floor();
        let frac = pos - n0;
        let n0i = n0 as i64;
        let idx = |k: i64| ((k + self.hist as i64).max(0) as usize) * bw;
        if frac.abs() < NODE_SNAP {
            let s = idx(n0i);
            out.copy_from_slice(&data[s..s + bw]);
            return;
        }
        let a: &[f64] = if n0i == 0 { right0 } else { &data[idx(n0i)..idx(n0i) + bw] };
        let b = &data[idx(n0i + 1)..idx(n0i + 1) + bw];
        for c in 0..bw {
            out[c] = a[c] + frac * (b[c] - a[c]);
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// `acc += scale * a · x` with `a` `d x d` and `x` `d x w`, both row-major.
#[inline]
fn gemm_acc(acc: &mut [f64], a: &[f64], x: &[f64], d: usize, w: usize, scale: f64) {
    for r in 0..d {
        for l in 0..d {
            let coef = a[r * d + l] * scale;
            if coef == 0.0 {
                continue;
            }
            let xr = &x[l * w..(l + 1) * w];
            let ar = &mut acc[r * w..(r + 1) * w];
            for c in 0..w {
                ar[c] += coef * xr[c];
            }
        }
    }
}

/// A computed solution on `[-Λ_N, T]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    system: DelaySystem,
    initial: GridFunction,
    control: Option<GridFunction>,
    nodes: GridFunction,
    right0: Vec<f64>,
    horizon: f64,
    max_residual: f64,
    breaks: Vec<f64>,
}

impl Trajectory {
    pub fn system(&self) -> &DelaySystem {
        &self.system
    }
    pub fn control(&self) -> Option<&GridFunction> {
        self.control.as_ref()
    }
    pub fn initial(&self) -> &GridFunction {
        &self.initial
    }
    /// All nodes, from the first history node to the last time node.
    pub fn nodes(&self) -> &GridFunction {
        &self.nodes
    }
    pub fn step(&self) -> f64 {
        self.nodes.step()
    }
    /// Requested horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    /// Last grid time (`≥ T`).
    pub fn last_time(&self) -> f64 {
        self.nodes.t_end()
    }
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }
    /// Right limit `x(0+)`.
    pub fn right_limit_at_zero(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.right0)
    }

    /// Node index of `t_k = k h` for `k >= 0`.
    pub fn time_index(&self, k: usize) -> usize {
        k + ((-self.nodes.t_start()) / self.step()).round() as usize
    }

    /// Value at node `t_k = k h`, `k >= 0` (left limit).
    pub fn at_node(&self, k: usize) -> DVector<f64> {
        self.nodes.node_vector(self.time_index(k))
    }

    /// Interpolated value at time `t` (left limits at nodes).
    pub fn value_at(&self, t: f64) -> DVector<f64> {
        let h = self.step();
        let pos = t / h;
        let n0 = (pos + NODE_SNAP).floor();
        let frac = pos - n0;
        let hist = self.time_index(0) as i64;
        let n0i = n0 as i64;
        if n0i + hist < 0 || n0i + hist >= self.nodes.len() as i64 {
            return DVector::zeros(self.nodes.rows());
        }
        if frac.abs() < NODE_SNAP || n0i + hist + 1 >= self.nodes.len() as i64 {
            return self.nodes.node_vector((n0i + hist) as usize);
        }
        let node = |i: i64| -> DVector<f64> {
            if i == 0 {
                DVector::from_column_slice(&self.right0)
            } else {
                self.nodes.node_vector((i + hist) as usize)
            }
        };
        let last = self.nodes.len() as i64 - hist - 1;
        if n0i > 0 {
            // a kink or jump inside the cell: extrapolate from the side holding t
            let lo = n0 * h;
            let i = self.breaks.partition_point(|b| *b < lo - NODE_SNAP * h);
            let inside: Vec<f64> =
                self.breaks[i..].iter().take_while(|b| **b < lo + h - NODE_SNAP * h).copied().collect();
            if let [b] = inside[..] {
                let left = t <= b && b > lo + NODE_SNAP * h;
                if left {
                    let (a, c) = (node(n0i - 1), node(n0i));
                    return &c + (&c - a) * frac;
                }
                if n0i + 2 <= last {
                    let (a, c) = (node(n0i + 1), node(n0i + 2));
                    return &a + (c - &a) * (frac - 1.0);
                }
            }
        }
        let a = node(n0i);
        let b = node(n0i + 1);
        &a + (b - &a) * frac
    }

    /// CSV with header `t,x1,…,xd`, one row per node, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.nodes.rows();
        let mut out = String::from("t");
        for i in 1..=d {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for k in 0..self.nodes.len() {
            out.push_str(&crate::io::fmt_f64(self.nodes.node_time(k)));
            for v in self.nodes.node(k) {
                out.push(',');
                out.push_str(&crate::io::fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Lattice points up to `horizon` where the solution may lose smoothness.
fn breakpoints(system: &DelaySystem, horizon: f64) -> Vec<f64> {
    match crate::fundamental::lattice_points(system.delays(), horizon, 1e-12 * horizon.max(1.0), MAX_BREAKS) {
        Ok(points) => points.into_iter().map(|p| p.tau).filter(|t| *t > 0.0).collect(),
        Err(_) => {
            log::debug!("too many lattice points up to {horizon}; plain interpolation between nodes");
            Vec::new()
        }
    }
}

/// Samples `φ` at the history nodes `k = -hist..=0` (clamped to `[-Λ_N, 0]`).
fn history_from(phi: &GridFunction, hist: usize, h: f64, lambda_n: f64, d: usize) -> Result<Vec<f64>> {
    if phi.width() != d {
        return Err(DdecError::DimensionMismatch(format!(
            "initial segment has {} components, system has {d}",
            phi.width()
        )));
    }
    if (phi.t_start() + lambda_n).abs() > 1e-9 * lambda_n.max(1.0) || phi.t_end().abs() > 1e-9 * lambda_n.max(1.0) {
        return Err(DdecError::InvalidGrid(format!(
            "initial segment must live on [-{lambda_n}, 0], got [{}, {}]",
            phi.t_start(),
            phi.t_end()
        )));
    }
    let mut data = vec![0.0; (hist + 1) * d];
    for i in 0..=hist {
        let t = (-((hist - i) as f64) * h).max(-lambda_n);
        let t = if i == hist { 0.0 } else { t };
        phi.eval_into(t.clamp(phi.t_start(), phi.t_end()), &mut data[i * d..(i + 1) * d]);
    }
    Ok(data)
}

/// Solves the controlled equation from the initial segment `phi` on `[0, T]`.
pub fn solve_ivp(
    system: &DelaySystem,
    phi: &GridFunction,
    control: Option<&GridFunction>,
    horizon: f64,
    h: f64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(DdecError::OutOfRange(format!("horizon must be positive, got {horizon}")));
    }
    let d = system.dim();
    let m = system.inputs();
    let scheme = Scheme::new(system, h)?;
    let steps = (horizon / h - NODE_SNAP).ceil().max(1.0) as usize;
    if !phi.same_grid(-(scheme.hist() as f64) * h, h, scheme.hist() + 1) {
        log::debug!("initial segment resampled onto the simulation grid");
    }
    let history = history_from(phi, scheme.hist(), h, system.max_delay(), d)?;
    if let Some(u) = control {
        if u.width() != m {
            return Err(DdecError::DimensionMismatch(format!("control has {} components, system has {m}", u.width())));
        }
        if (u.step() - h).abs() > 1e-12 * h || u.t_start().abs() > 1e-12 {
            warn!("control grid differs from the simulation grid; resampling by linear interpolation");
        }
    }
    let b = system.input_matrix().clone();
    let mut ubuf = vec![0.0; m];
    let out = scheme.run(1, steps, history, |k, acc| {
        if let Some(u) = control {
            u.eval_into(k as f64 * h, &mut ubuf);
            for r in 0..d {
                acc[r] += (0..m).map(|c| b[(r, c)] * ubuf[c]).sum::<f64>();
            }
        }
    })?;
    let nodes = GridFunction::new(-(scheme.hist() as f64) * h, h, d, 1, out.data)?;
    Ok(Trajectory {
        system: system.clone(),
        initial: phi.clone(),
        control: control.cloned(),
        nodes,
        right0: out.right0,
        horizon,
        max_residual: out.max_residual,
        breaks: breakpoints(system, steps as f64 * h),
    })
}

/// Grid on `[-Λ_N, 0]` used for state segments at step `h`: `(cells, step)`.
pub fn segment_grid(system: &DelaySystem, h: f64) -> (usize, f64) {
    let lambda_n = system.max_delay();
    let n = segment_cells(lambda_n, h);
    (n, lambda_n / n as f64)
}

/// `x_t(θ) = x(t + θ)` for `θ ∈ [-Λ_N, 0]`.
pub fn state_segment(traj: &Trajectory, t: f64) -> Result<GridFunction> {
    let h = traj.step();
    if t < -1e-12 || t > traj.last_time() + 1e-9 * h {
        return Err(DdecError::OutOfRange(format!("segment time {t} outside [0, {}]", traj.last_time())));
    }
    let system = &traj.system;
    let (n, hs) = segment_grid(system, h);
    let lambda_n = system.max_delay();
    if t.abs() <= 1e-12 {
        return traj.initial.resample(-lambda_n, hs, n + 1);
    }
    let d = system.dim();
    let mut data = Vec::with_capacity((n + 1) * d);
    for i in 0..=n {
        let theta = if i == n { 0.0 } else { -lambda_n + i as f64 * hs };
        data.extend(traj.value_at(t + theta).iter());
    }
    GridFunction::new(-lambda_n, hs, d, 1, data)
}

/// Extends `y0` on `[0, Λ_N]` to `[0, T]` by the homogeneous dynamics.
pub fn extend_state(system: &DelaySystem, y0: &GridFunction, horizon: f64) -> Result<GridFunction> {
    let lambda_n = system.max_delay();
    if horizon < lambda_n - 1e-12 {
        return Err(DdecError::OutOfRange(format!("horizon {horizon} is shorter than Λ_N = {lambda_n}")));
    }
    let h = y0.step();
    let shifted = GridFunction::new(y0.t_start() - lambda_n, h, y0.rows(), y0.cols(), y0.data().to_vec())?;
    let (n, hy) = fit_interval(0.0, horizon, h)?;
    let run =
        if horizon - lambda_n > 1e-12 { Some(solve_ivp(system, &shifted, None, horizon - lambda_n, h)?) } else { None };
    let d = system.dim();
    let mut data = Vec::with_capacity((n + 1) * d);
    for i in 0..=n {
        let t = i as f64 * hy;
        if t <= lambda_n || run.is_none() {
            data.extend(y0.eval(t.min(y0.t_end())).iter());
        } else {
            data.extend(run.as_ref().unwrap().value_at(t - lambda_n).iter());
        }
    }
    GridFunction::new(0.0, hy, d, 1, data)
}

/// `L^q` norm of a grid function.
pub fn lq_norm(f: &GridFunction, q: f64) -> Result<f64> {
    f.lq_norm(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::PiecewisePolyKernel;
    use std::f64::consts::PI;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    pub(crate) fn scalar_pi_system() -> DelaySystem {
        DelaySystem::new(
            vec![1.0, PI],
            vec![s(0.3), s(0.2)],
            s(1.0),
            PiecewisePolyKernel::constant(s(1.0), PI).unwrap(),
        )
        .unwrap()
    }

    fn pure_difference(a: f64) -> DelaySystem {
        DelaySystem::new(vec![1.0], vec![s(a)], s(0.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap()
    }

    fn constant_phi(system: &DelaySystem, h: f64, value: f64) -> GridFunction {
        GridFunction::sample_interval(-system.max_delay(), 0.0, h, system.dim(), |_| {
            DVector::from_element(system.dim(), value)
        })
        .unwrap()
    }

    #[test]
    fn memoryless_reproduces_control() {
        let sys =
            DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap();
        let h = 1e-2;
        let phi = constant_phi(&sys, h, 0.0);
        let u = GridFunction::sample_interval(0.0, 3.0, h, 1, |t| DVector::from_element(1, t.sin())).unwrap();
        let traj = solve_ivp(&sys, &phi, Some(&u), 3.0, h).unwrap();
        for k in 0..=300 {
            let t = k as f64 * h;
            assert!((traj.at_node(k)[0] - t.sin()).abs() <= 1e-12, "node {k}");
        }
    }

    #[test]
    fn pure_difference_is_piecewise_constant() {
        let a = 0.7;
        let sys = pure_difference(a);
        let h = 1.0 / 64.0;
        let traj = solve_ivp(&sys, &constant_phi(&sys, h, 1.0), None, 3.0, h).unwrap();
        for k in 0..=192 {
            let t = k as f64 * h;
            let expected = a.powi(t.ceil() as i32);
            assert!((traj.at_node(k)[0] - expected).abs() < 1e-14, "t = {t}");
        }
        let seg = state_segment(&traj, 2.0).unwrap();
        for i in 0..seg.len() {
            let theta = seg.node_time(i);
            let expected = a.powi((2.0 + theta).ceil() as i32);
            assert!((seg.node(i)[0] - expected).abs() < 1e-14, "theta = {theta}");
        }
    }

    /// Picard iteration on a fine grid for the scalar example on [0, 0.5]:
    /// x(t) = 0.3 + 0.2 + (π - t) + ∫_0^t x(σ) dσ while both delays read φ ≡ 1.
    fn picard_oracle(n: usize, t_end: f64) -> Vec<f64> {
        let dt = t_end / n as f64;
        let mut x = vec![0.0; n + 1];
        for _ in 0..200 {
            let mut next = vec![0.0; n + 1];
            let mut integral = 0.0;
            for k in 0..=n {
                if k > 0 {
                    integral += 0.5 * dt * (x[k - 1] + x[k]);
                }
                let t = k as f64 * dt;
                next[k] = 0.5 + (PI - t) + integral;
            }
            let diff = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = next;
            if diff < 1e-14 {
                break;
            }
        }
        x
    }

    #[test]
    fn scalar_example_matches_picard_oracle() {
        let sys = scalar_pi_system();
        let h = 1e-3;
        let traj = solve_ivp(&sys, &constant_phi(&sys, h, 1.0), None, 2.0, h).unwrap();
        let oracle = picard_oracle(5000, 0.5);
        let mut worst: f64 = 0.0;
        for k in 1..=500 {
            let t = k as f64 * h;
            let o = oracle[(t / 1e-4).round() as usize];
            worst = worst.max((traj.at_node(k)[0] - o).abs());
        }
        assert!(worst <= 1e-4, "sup error {worst}");
        // closed form of the same ODE x' = x - 1, x(0+) = π + 0.5
        let exact = |t: f64| 1.0 + (PI - 0.5) * t.exp();
        assert!((traj.at_node(500)[0] - exact(0.5)).abs() < 1e-4);
        assert!(traj.max_residual() <= RESIDUAL_TOL);
    }

    #[test]
    fn segment_at_zero_returns_initial_data() {
        let sys = scalar_pi_system();
        let h = 1e-2;
        let phi = GridFunction::sample_interval(-PI, 0.0, h, 1, |t| DVector::from_element(1, t.cos())).unwrap();
        let traj = solve_ivp(&sys, &phi, None, 1.0, h).unwrap();
        let seg = state_segment(&traj, 0.0).unwrap();
        for i in 0..seg.len() {
            assert!((seg.node(i)[0] - seg.node_time(i).cos()).abs() < 1e-12);
        }
        assert!(state_segment(&traj, 1.5).is_err());
    }

    #[test]
    fn constant_trajectory_segments_are_constant() {
        // x = 0.5 x(t-1) + 0.5 x(t-2) keeps x ≡ c
        let sys =
            DelaySystem::new(vec![1.0, 2.0], vec![s(0.5), s(0.5)], s(1.0), PiecewisePolyKernel::zero(1, 2.0).unwrap())
                .unwrap();
        let h = 1.0 / 50.0;
        let traj = solve_ivp(&sys, &constant_phi(&sys, h, 2.5), None, 4.0, h).unwrap();
        for t in [0.3, 1.7, 3.9] {
            let seg = state_segment(&traj, t).unwrap();
            assert!(seg.data().iter().all(|v| (v - 2.5).abs() < 1e-13));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let sys = scalar_pi_system();
        let phi = constant_phi(&sys, 1e-2, 1.0);
        assert!(matches!(solve_ivp(&sys, &phi, None, -1.0, 1e-2), Err(DdecError::OutOfRange(_))));
        assert!(matches!(solve_ivp(&sys, &phi, None, 1.0, 2.0), Err(DdecError::StepTooLarge(_))));
        let stiff =
            DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::constant(s(300.0), 1.0).unwrap())
                .unwrap();
        let phi = constant_phi(&stiff, 1e-2, 1.0);
        assert!(matches!(solve_ivp(&stiff, &phi, None, 1.0, 1e-2), Err(DdecError::StepTooLarge(_))));
    }

    #[test]
    fn extend_state_examples() {
        let a = -0.6;
        let sys = pure_difference(a);
        let h = 1.0 / 40.0;
        let zero = GridFunction::sample_interval(0.0, 1.0, h, 1, |_| DVector::zeros(1)).unwrap();
        let ext = extend_state(&sys, &zero, 3.0).unwrap();
        assert!(ext.data().iter().all(|v| *v == 0.0));

        let ones = GridFunction::sample_interval(0.0, 1.0, h, 1, |_| DVector::from_element(1, 1.0)).unwrap();
        let ext = extend_state(&sys, &ones, 3.0).unwrap();
        for k in 0..ext.len() {
            let t = ext.node_time(k);
            if t > 1.0 && (t - t.round()).abs() > 1e-9 {
                assert!((ext.node(k)[0] - a.powi(t.floor() as i32)).abs() < 1e-14, "t = {t}");
            }
        }
        assert!(extend_state(&sys, &ones, 0.5).is_err());
    }
}
