//! Uniformly sampled vector- or matrix-valued functions.
//!
//! A [`GridFunction`] holds samples at `t_start + k * step`, `k = 0..len`.
//! Each sample is a `rows x cols` block stored row-major; vector-valued
//! functions use `cols == 1`. Between nodes the function is the linear
//! interpolant, outside `[t_start, t_end]` it is zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{DdecError, Result};

/// Relative slack (in units of the step) used when locating endpoints.
const EDGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    t_start: f64,
    step: f64,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    q: f64,
}

impl GridFunction {
    /// Builds a grid function from node-major sample data.
    pub fn new(t_start: f64, step: f64, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(DdecError::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if rows == 0 || cols == 0 {
            return Err(DdecError::InvalidGrid("empty sample shape".into()));
        }
        let width = rows * cols;
        if data.len() % width != 0 {
            return Err(DdecError::InvalidGrid(format!(
                "data length {} is not a multiple of the sample width {width}",
                data.len()
            )));
        }
        if data.len() / width < 2 {
            return Err(DdecError::InvalidGrid("at least 2 samples are required".into()));
        }
        Ok(Self { t_start, step, rows, cols, data, q: 2.0 })
    }

    /// Vector-valued grid function from a list of node vectors.
    pub fn from_vectors(t_start: f64, step: f64, nodes: &[DVector<f64>]) -> Result<Self> {
        let dim = nodes.first().map(|v| v.len()).unwrap_or(0);
        if nodes.iter().any(|v| v.len() != dim) {
            return Err(DdecError::InvalidGrid("ragged node vectors".into()));
        }
        let data = nodes.iter().flat_map(|v| v.iter().copied()).collect();
        Self::new(t_start, step, dim, 1, data)
    }

    /// Samples `f` at `n` nodes starting at `t_start`.
    pub fn sample<F>(t_start: f64, step: f64, n: usize, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let mut data = Vec::with_capacity(n * dim);
        for k in 0..n {
            let v = f(t_start + k as f64 * step);
            if v.len() != dim {
                return Err(DdecError::InvalidGrid("sampled vector has wrong dimension".into()));
            }
            data.extend(v.iter());
        }
        Self::new(t_start, step, dim, 1, data)
    }

    /// Samples `f` on `[a, b]` with about `step` spacing; the step is shrunk so
    /// that both endpoints are nodes.
    pub fn sample_interval<F>(a: f64, b: f64, step: f64, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let (n, h) = fit_interval(a, b, step)?;
        Self::sample(a, h, n + 1, dim, f)
    }

    pub fn constant(t_start: f64, step: f64, n: usize, value: &DVector<f64>) -> Result<Self> {
        Self::sample(t_start, step, n, value.len(), |_| value.clone())
    }

    pub fn zeros(t_start: f64, step: f64, n: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::new(t_start, step, rows, cols, vec![0.0; n * rows * cols])
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn width(&self) -> usize {
        self.rows * self.cols
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn t_end(&self) -> f64 {
        self.node_time(self.len() - 1)
    }
    pub fn node_time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.step
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn node(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn node_vector(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.node(k))
    }

    pub fn node_matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.node(k))
    }

    /// Whether `t` lies in the closed domain (with a tiny slack at the ends).
    pub fn contains(&self, t: f64) -> bool {
        let slack = EDGE_SLACK * self.step;
        t >= self.t_start - slack && t <= self.t_end() + slack
    }

    /// Writes the interpolated value at `t` into `out` (zero outside the domain).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let w = self.width();
        debug_assert_eq!(out.len(), w);
        if !self.contains(t) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let pos = (t - self.t_start) / self.step;
        let last = self.len() - 1;
        let i0 = (pos.floor().max(0.0) as usize).min(last);
        let frac = pos - i0 as f64;
        if i0 == last || frac.abs() < EDGE_SLACK {
            out.copy_from_slice(self.node(i0));
            return;
        }
        if frac > 1.0 - EDGE_SLACK {
            out.copy_from_slice(self.node(i0 + 1));
            return;
        }
        let a = self.node(i0);
        let b = self.node(i0 + 1);
        for c in 0..w {
            out[c] = a[c] + frac * (b[c] - a[c]);
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = vec![0.0; self.width()];
        self.eval_into(t, &mut out);
        DVector::from_vec(out)
    }

    pub fn eval_matrix(&self, t: f64) -> DMatrix<f64> {
        let mut out = vec![0.0; self.width()];
        self.eval_into(t, &mut out);
        DMatrix::from_row_slice(self.rows, self.cols, &out)
    }

    /// Linear-interpolation resampling onto another uniform grid.
    pub fn resample(&self, t_start: f64, step: f64, n: usize) -> Result<Self> {
        let w = self.width();
        let mut data = vec![0.0; n * w];
        for k in 0..n {
            self.eval_into(t_start + k as f64 * step, &mut data[k * w..(k + 1) * w]);
        }
        Ok(Self::new(t_start, step, self.rows, self.cols, data)?.with_q(self.q))
    }

    /// True when `other` uses the same nodes (up to rounding).
    pub fn same_grid(&self, t_start: f64, step: f64, n: usize) -> bool {
        self.len() == n && (self.step - step).abs() <= 1e-12 * step && (self.t_start - t_start).abs() <= 1e-9 * step
    }

    /// Pointwise Euclidean (Frobenius for matrices) norm at node `k`.
    pub fn node_norm(&self, k: usize) -> f64 {
        self.node(k).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(∫ |f(t)|^q dt)^(1/q)` by the composite trapezoid rule over the nodes.
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(DdecError::OutOfRange(format!("norm exponent must satisfy q >= 1, got {q}")));
        }
        let n = self.len();
        let mut acc = 0.0;
        for k in 0..n {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            acc += w * self.node_norm(k).powf(q);
        }
        Ok((acc * self.step).powf(1.0 / q))
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.len()).map(|k| self.node_norm(k)).fold(0.0, f64::max)
    }

    /// `self - other` on this grid; `other` is evaluated by interpolation.
    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        if other.width() != self.width() {
            return Err(DdecError::DimensionMismatch("grid functions of different widths".into()));
        }
        let w = self.width();
        let mut data = self.data.clone();
        let mut buf = vec![0.0; w];
        for k in 0..self.len() {
            other.eval_into(self.node_time(k), &mut buf);
            for c in 0..w {
                data[k * w + c] -= buf[c];
            }
        }
        Ok(Self::new(self.t_start, self.step, self.rows, self.cols, data)?.with_q(self.q))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Restriction / resampling to `[a, b]` using this grid's step (shrunk to fit).
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        let (n, h) = fit_interval(a, b, self.step)?;
        self.resample(a, h, n + 1)
    }
}

/// Number of cells and adjusted step so that `[a, b]` is covered exactly by
/// cells of size at most `step`.
pub fn fit_interval(a: f64, b: f64, step: f64) -> Result<(usize, f64)> {
    if !(b > a) {
        return Err(DdecError::InvalidGrid(format!("empty interval [{a}, {b}]")));
    }
    if !(step > 0.0) {
        return Err(DdecError::InvalidGrid(format!("step must be positive, got {step}")));
    }
    let ratio = (b - a) / step;
    let mut n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        n = ratio.ceil();
    }
    let n = (n as usize).max(1);
    Ok((n, (b - a) / n as f64))
}
