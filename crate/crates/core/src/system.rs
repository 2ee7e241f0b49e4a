//! Delay systems `x(t) = Σ A_j x(t-Λ_j) + ∫_0^{Λ_N} g(s) x(t-s) ds + B u(t)`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{DdecError, Result};
use crate::kernel::PiecewisePolyKernel;

#[derive(Debug, Clone, PartialEq)]
pub struct DelaySystem {
    delays: Vec<f64>,
    coefficients: Vec<DMatrix<f64>>,
    input: DMatrix<f64>,
    kernel: PiecewisePolyKernel,
}

impl DelaySystem {
    /// Validates and assembles a system.
    pub fn new(
        delays: Vec<f64>,
        coefficients: Vec<DMatrix<f64>>,
        input: DMatrix<f64>,
        kernel: PiecewisePolyKernel,
    ) -> Result<Self> {
        if delays.is_empty() {
            return Err(DdecError::DimensionMismatch("at least one delay is required".into()));
        }
        if delays.iter().any(|l| !l.is_finite()) || !(delays[0] > 0.0) {
            return Err(DdecError::DelaysNotIncreasing(format!("delays must be positive, got {delays:?}")));
        }
        if delays.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DdecError::DelaysNotIncreasing(format!("{delays:?}")));
        }
        if coefficients.len() != delays.len() {
            return Err(DdecError::DimensionMismatch(format!(
                "{} coefficient matrices for {} delays",
                coefficients.len(),
                delays.len()
            )));
        }
        let d = input.nrows();
        if d == 0 || input.ncols() == 0 {
            return Err(DdecError::DimensionMismatch("input matrix must be non-empty".into()));
        }
        for (j, a) in coefficients.iter().enumerate() {
            if a.nrows() != d || a.ncols() != d {
                return Err(DdecError::DimensionMismatch(format!(
                    "A_{} is {}x{}, expected {d}x{d}",
                    j + 1,
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        if kernel.dim() != d {
            return Err(DdecError::DimensionMismatch(format!("kernel is {0}x{0}, expected {d}x{d}", kernel.dim())));
        }
        let max_delay = *delays.last().unwrap();
        let end = kernel.length();
        if (end - max_delay).abs() > 1e-12 * max_delay.max(1.0) {
            return Err(DdecError::KernelDomainMismatch { start: 0.0, end, max_delay });
        }
        Ok(Self { delays, coefficients, input, kernel })
    }

    pub fn dim(&self) -> usize {
        self.input.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.input.ncols()
    }
    pub fn num_delays(&self) -> usize {
        self.delays.len()
    }
    pub fn delays(&self) -> &[f64] {
        &self.delays
    }
    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }
    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input
    }
    pub fn kernel(&self) -> &PiecewisePolyKernel {
        &self.kernel
    }
    pub fn max_delay(&self) -> f64 {
        *self.delays.last().unwrap()
    }
    pub fn min_delay(&self) -> f64 {
        self.delays[0]
    }
    /// `A_N`, the coefficient of the largest delay.
    pub fn last_coefficient(&self) -> &DMatrix<f64> {
        self.coefficients.last().unwrap()
    }

    /// Upper bound `2 d Λ_N` on the minimal approximate-controllability time.
    pub fn time_bound(&self) -> f64 {
        2.0 * self.dim() as f64 * self.max_delay()
    }

    pub fn with_input(&self, input: DMatrix<f64>) -> Result<Self> {
        Self::new(self.delays.clone(), self.coefficients.clone(), input, self.kernel.clone())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: SystemDescription = serde_json::from_str(text)?;
        validate_system(&raw)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| DdecError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_description(&self) -> SystemDescription {
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<Real>> {
            (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| Real(m[(r, c)])).collect()).collect()
        };
        SystemDescription {
            d: self.dim(),
            m: self.inputs(),
            delays: self.delays.iter().map(|v| Real(*v)).collect(),
            a: self.coefficients.iter().map(to_rows).collect(),
            b: to_rows(&self.input),
            kernel: KernelDescription {
                breakpoints: self.kernel.breakpoints().iter().map(|v| Real(*v)).collect(),
                pieces: self.kernel.pieces().iter().map(|p| p.iter().map(to_rows).collect()).collect(),
            },
        }
    }
}

/// A real number in a system file: a JSON number, or the strings `"pi"` / `"-pi"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Real(pub f64);

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Text(s) => parse_real_literal(&s).map(Real).map_err(serde::de::Error::custom),
        }
    }
}

/// Decimal literals plus `pi`, `-pi`, and `<k>*pi`.
pub fn parse_real_literal(s: &str) -> std::result::Result<f64, String> {
    const PI16: f64 = 3.141592653589793;
    debug_assert_eq!(PI16, PI);
    let t = s.trim().to_ascii_lowercase();
    match t.as_str() {
        "pi" => return Ok(PI16),
        "-pi" => return Ok(-PI16),
        _ => {}
    }
    if let Some(factor) = t.strip_suffix("*pi") {
        return factor.trim().parse::<f64>().map(|f| f * PI16).map_err(|_| format!("invalid real literal {s:?}"));
    }
    t.parse::<f64>().map_err(|_| format!("invalid real literal {s:?}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDescription {
    pub breakpoints: Vec<Real>,
    /// `pieces[i][k]` is the coefficient matrix of `s^k` on piece `i`.
    pub pieces: Vec<Vec<Vec<Vec<Real>>>>,
}

/// Raw system file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDescription {
    pub d: usize,
    pub m: usize,
    pub delays: Vec<Real>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<Real>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Real>>,
    pub kernel: KernelDescription,
}

fn matrix_from_rows(rows: &[Vec<Real>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(DdecError::DimensionMismatch(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c].0))
}

/// Turns a raw description into a validated [`DelaySystem`].
pub fn validate_system(raw: &SystemDescription) -> Result<DelaySystem> {
    let d = raw.d;
    let m = raw.m;
    if d == 0 || m == 0 {
        return Err(DdecError::DimensionMismatch("d and m must be positive".into()));
    }
    let delays: Vec<f64> = raw.delays.iter().map(|r| r.0).collect();
    let a = raw
        .a
        .iter()
        .enumerate()
        .map(|(j, rows)| matrix_from_rows(rows, d, d, &format!("A[{j}]")))
        .collect::<Result<Vec<_>>>()?;
    let b = matrix_from_rows(&raw.b, d, m, "B")?;
    let breakpoints: Vec<f64> = raw.kernel.breakpoints.iter().map(|r| r.0).collect();
    let pieces = raw
        .kernel
        .pieces
        .iter()
        .enumerate()
        .map(|(i, piece)| {
            piece
                .iter()
                .enumerate()
                .map(|(k, rows)| matrix_from_rows(rows, d, d, &format!("kernel piece {i} coefficient {k}")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let kernel = PiecewisePolyKernel::new(d, breakpoints, pieces)?;
    DelaySystem::new(delays, a, b, kernel)
}
