//! Python bindings: a `DelaySystem` class plus functions returning plain dicts.

use ddec_core::freq::{Rectangle, DEFAULT_RANK_TOL};
use ddec_core::fundamental::{fundamental_solution_with, FundamentalOptions, DEFAULT_MAX_ATOMS};
use ddec_core::measure::{build_qp, default_window, invert_q as invert_measure};
use ddec_core::simulator::segment_grid;
use ddec_core::{
    char_eval as core_char_eval, check_controllability, residual_curve as core_residual_curve, solve_ivp,
    state_segment, synthesize_control, verify_control, DdecError, GridFunction, PiecewisePolyKernel, SynthesisOptions,
    C64,
};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

create_exception!(ddec, DdecException, PyValueError, "Raised for any failure in the toolkit.");

fn err(e: DdecError) -> PyErr {
    DdecException::new_err(format!("{}: {e}", e.kind()))
}

/// Parses a JSON string with Python's `json` module.
fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(err(DdecError::DimensionMismatch(format!("{what} must be a non-empty rectangular list of rows"))));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Samples `values` (one row per node) uniformly on `[a, b]`.
fn grid_on(a: f64, b: f64, values: &[Vec<f64>], width: usize, what: &str) -> PyResult<GridFunction> {
    if values.len() < 2 {
        return Err(err(DdecError::InvalidGrid(format!("{what} needs at least two samples"))));
    }
    if values.iter().any(|v| v.len() != width) {
        return Err(err(DdecError::DimensionMismatch(format!("every {what} sample must have {width} components"))));
    }
    let step = (b - a) / (values.len() - 1) as f64;
    let data = values.iter().flatten().copied().collect();
    GridFunction::new(a, step, width, 1, data).map_err(err)
}

fn grid_rows(f: &GridFunction) -> (Vec<f64>, Vec<Vec<f64>>) {
    ((0..f.len()).map(|k| f.node_time(k)).collect(), (0..f.len()).map(|k| f.node(k).to_vec()).collect())
}

/// `x(t) = Σ A_j x(t - Λ_j) + ∫_0^{Λ_N} g(s) x(t - s) ds + B u(t)`.
#[pyclass(module = "ddec", frozen)]
struct DelaySystem {
    inner: ddec_core::DelaySystem,
}

#[pymethods]
impl DelaySystem {
    /// `kernel` is `(breakpoints, pieces)` with `pieces[i][k]` the matrix of
    /// `s^k` on piece `i`; omitted means `g ≡ 0`.
    #[new]
    #[pyo3(signature = (delays, a, b, kernel = None))]
    fn new(
        delays: Vec<f64>,
        a: Vec<Vec<Vec<f64>>>,
        b: Vec<Vec<f64>>,
        kernel: Option<(Vec<f64>, Vec<Vec<Vec<Vec<f64>>>>)>,
    ) -> PyResult<Self> {
        let coefficients =
            a.iter().enumerate().map(|(j, m)| matrix(m, &format!("A[{j}]"))).collect::<PyResult<Vec<_>>>()?;
        let input = matrix(&b, "B")?;
        let d = input.nrows();
        let length = delays.last().copied().unwrap_or(0.0);
        let kernel = match kernel {
            None => PiecewisePolyKernel::zero(d, length).map_err(err)?,
            Some((breaks, pieces)) => {
                let pieces = pieces
                    .iter()
                    .map(|piece| piece.iter().map(|m| matrix(m, "kernel coefficient")).collect::<PyResult<Vec<_>>>())
                    .collect::<PyResult<Vec<_>>>()?;
                PiecewisePolyKernel::new(d, breaks, pieces).map_err(err)?
            }
        };
        let inner = ddec_core::DelaySystem::new(delays, coefficients, input, kernel).map_err(err)?;
        Ok(Self { inner })
    }

    /// Builds a system from the JSON description format used by the CLI.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ddec_core::DelaySystem::from_json_str(text).map_err(err)? })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(Self { inner: ddec_core::DelaySystem::from_file(path).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        ddec_core::io::to_json_string(&self.inner.to_description()).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    #[getter]
    fn inputs(&self) -> usize {
        self.inner.inputs()
    }
    #[getter]
    fn delays(&self) -> Vec<f64> {
        self.inner.delays().to_vec()
    }
    #[getter]
    fn max_delay(&self) -> f64 {
        self.inner.max_delay()
    }
    #[getter]
    fn time_bound(&self) -> f64 {
        self.inner.time_bound()
    }

    fn __repr__(&self) -> String {
        format!("DelaySystem(d={}, m={}, delays={:?})", self.inner.dim(), self.inner.inputs(), self.inner.delays())
    }
}

fn segment(sys: &ddec_core::DelaySystem, values: Option<Vec<Vec<f64>>>, h: f64, what: &str) -> PyResult<GridFunction> {
    match values {
        Some(v) => grid_on(-sys.max_delay(), 0.0, &v, sys.dim(), what),
        None => {
            let (n, hs) = segment_grid(sys, h);
            GridFunction::constant(-sys.max_delay(), hs, n + 1, &DVector::from_element(sys.dim(), 1.0)).map_err(err)
        }
    }
}

/// Solution on `[-Λ_N, T]`: `{"t": [...], "x": [[...], ...], "segment_t", "segment_x"}`.
///
/// `phi` holds samples spread uniformly over `[-Λ_N, 0]` (default all ones),
/// `control` samples spread uniformly over `[0, T]` (default zero).
#[pyfunction]
#[pyo3(signature = (system, horizon, h, phi = None, control = None))]
fn simulate<'py>(
    py: Python<'py>,
    system: &DelaySystem,
    horizon: f64,
    h: f64,
    phi: Option<Vec<Vec<f64>>>,
    control: Option<Vec<Vec<f64>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let sys = &system.inner;
    let phi = segment(sys, phi, h, "phi")?;
    let u = control.map(|v| grid_on(0.0, horizon, &v, sys.inputs(), "control")).transpose()?;
    let traj = py.detach(|| solve_ivp(sys, &phi, u.as_ref(), horizon, h)).map_err(err)?;
    let seg = state_segment(&traj, traj.last_time()).map_err(err)?;
    let (t, x) = grid_rows(traj.nodes());
    let (st, sx) = grid_rows(&seg);
    to_py(
        py,
        &serde_json::json!({
            "t": t, "x": x, "segment_t": st, "segment_x": sx,
            "max_residual": traj.max_residual(),
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (system, horizon, h, max_atoms = DEFAULT_MAX_ATOMS))]
fn fundamental<'py>(
    py: Python<'py>,
    system: &DelaySystem,
    horizon: f64,
    h: f64,
    max_atoms: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = FundamentalOptions { max_atoms, ..FundamentalOptions::default() };
    let fund = py.detach(|| fundamental_solution_with(&system.inner, horizon, h, &opts)).map_err(err)?;
    to_py(py, &fund.to_json_value())
}

/// `Q⁻¹` on `[0, window]` plus the inversion report.
#[pyfunction]
#[pyo3(signature = (system, h, window = None, tol = 1e-10))]
fn invert_q<'py>(
    py: Python<'py>,
    system: &DelaySystem,
    h: f64,
    window: Option<f64>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let sys = &system.inner;
    let window = window.unwrap_or_else(|| default_window(sys));
    let (q, _) = build_qp(sys, h).map_err(err)?;
    let (qinv, report) = py.detach(|| invert_measure(&q, window, tol)).map_err(err)?;
    let report = serde_json::to_value(&report).map_err(|e| err(e.into()))?;
    to_py(py, &serde_json::json!({ "measure": qinv.to_json_value().map_err(err)?, "report": report }))
}

/// `det H(p)` and the rank margin of `[H(p) B]` at `p = re + i im`.
#[pyfunction]
fn char_eval<'py>(py: Python<'py>, system: &DelaySystem, re: f64, im: f64) -> PyResult<Bound<'py, PyAny>> {
    let ev = core_char_eval(&system.inner, C64::new(re, im));
    to_py(
        py,
        &serde_json::json!({
            "det": [ev.det.re, ev.det.im],
            "margin": ev.margin(),
            "sigma_min": ev.sigma_min_aug,
            "sigma_max": ev.sigma_max_aug,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (system, re_min = None, re_max = None, im_max = None, rank_tol = DEFAULT_RANK_TOL))]
fn check<'py>(
    py: Python<'py>,
    system: &DelaySystem,
    re_min: Option<f64>,
    re_max: Option<f64>,
    im_max: Option<f64>,
    rank_tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let sys = &system.inner;
    let rect = Rectangle::default_for(sys, re_min, re_max, im_max).map_err(err)?;
    let verdict = py.detach(|| check_controllability(sys, &rect, rank_tol)).map_err(err)?;
    to_py(py, &serde_json::to_value(&verdict).map_err(|e| err(e.into()))?)
}

fn synthesis_options(h: f64, lambda: Option<f64>, q: f64) -> SynthesisOptions {
    let mut opts = SynthesisOptions::new(h);
    opts.lambda = lambda;
    opts.q = q;
    opts
}

/// Regularised control driving the zero state towards `target` at time `T`.
#[pyfunction]
#[pyo3(signature = (system, horizon, h, target = None, lam = None, q = 2.0))]
fn synthesize<'py>(
    py: Python<'py>,
    system: &DelaySystem,
    horizon: f64,
    h: f64,
    target: Option<Vec<Vec<f64>>>,
    lam: Option<f64>,
    q: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let sys = &system.inner;
    let psi = segment(sys, target, h, "target")?;
    let opts = synthesis_options(h, lam, q);
    let (res, verified) = py
        .detach(|| {
            let res = synthesize_control(sys, &psi, horizon, &opts)?;
            let verified = verify_control(sys, &res.control, &psi, res.horizon, q)?;
            Ok::<_, DdecError>((res, verified))
        })
        .map_err(err)?;
    let mut body = res.to_json_value();
    let (t, u) = grid_rows(&res.control);
    body["control_t"] = serde_json::json!(t);
    body["control"] = serde_json::json!(u);
    body["verified_residual"] = serde_json::json!(verified);
    to_py(py, &body)
}

#[pyfunction]
#[pyo3(signature = (system, horizons, h, target = None, lam = None, q = 2.0))]
fn residual_curve<'py>(
    py: Python<'py>,
    system: &DelaySystem,
    horizons: Vec<f64>,
    h: f64,
    target: Option<Vec<Vec<f64>>>,
    lam: Option<f64>,
    q: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let sys = &system.inner;
    let psi = segment(sys, target, h, "target")?;
    let opts = synthesis_options(h, lam, q);
    let curve = py.detach(|| core_residual_curve(sys, &psi, &horizons, &opts)).map_err(err)?;
    to_py(py, &serde_json::to_value(&curve).map_err(|e| err(e.into()))?)
}

#[pymodule]
fn ddec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DelaySystem>()?;
    m.add("DdecError", m.py().get_type::<DdecException>())?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fundamental, m)?)?;
    m.add_function(wrap_pyfunction!(invert_q, m)?)?;
    m.add_function(wrap_pyfunction!(char_eval, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(residual_curve, m)?)?;
    Ok(())
}
