//! Piecewise-polynomial distributed-delay kernels.
//!
//! On each interval `[s_i, s_{i+1})` the kernel is `Σ_k C_{ik} s^k` with
//! `d x d` coefficient matrices `C_{ik}` (absolute variable `s`, degree ≤ 3).
//! Integrals and Laplace transforms are evaluated exactly from the
//! antiderivatives of `s^k e^{-ps}`.

use nalgebra::{Complex, DMatrix};

use crate::error::{DdecError, Result};

pub type C64 = Complex<f64>;

pub const MAX_DEGREE: usize = 3;

/// Below this value of `|p| * Λ_N` the transform uses the moment series in `p`.
pub const TAYLOR_SWITCH: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolyKernel {
    dim: usize,
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<DMatrix<f64>>>,
}

/// Which evaluation route `laplace_with` takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceBranch {
    Auto,
    Taylor,
    ClosedForm,
}

impl PiecewisePolyKernel {
    pub fn new(dim: usize, breakpoints: Vec<f64>, pieces: Vec<Vec<DMatrix<f64>>>) -> Result<Self> {
        if dim == 0 {
            return Err(DdecError::InvalidKernel("kernel dimension must be positive".into()));
        }
        if breakpoints.len() < 2 {
            return Err(DdecError::InvalidKernel("at least two breakpoints are required".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(DdecError::InvalidKernel(format!("first breakpoint must be 0, got {}", breakpoints[0])));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(DdecError::InvalidKernel("breakpoints must be finite and strictly increasing".into()));
        }
        if pieces.len() != breakpoints.len() - 1 {
            return Err(DdecError::InvalidKernel(format!(
                "{} pieces for {} intervals",
                pieces.len(),
                breakpoints.len() - 1
            )));
        }
        for (i, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.len() > MAX_DEGREE + 1 {
                return Err(DdecError::InvalidKernel(format!(
                    "piece {i} must have between 1 and {} coefficients",
                    MAX_DEGREE + 1
                )));
            }
            if piece.iter().any(|c| c.nrows() != dim || c.ncols() != dim) {
                return Err(DdecError::DimensionMismatch(format!("kernel piece {i} coefficients must be {dim}x{dim}")));
            }
        }
        Ok(Self { dim, breakpoints, pieces })
    }

    /// `g ≡ 0` on `[0, length]`.
    pub fn zero(dim: usize, length: f64) -> Result<Self> {
        Self::new(dim, vec![0.0, length], vec![vec![DMatrix::zeros(dim, dim)]])
    }

    /// `g ≡ value` on `[0, length]`.
    pub fn constant(value: DMatrix<f64>, length: f64) -> Result<Self> {
        let dim = value.nrows();
        Self::new(dim, vec![0.0, length], vec![vec![value]])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
    pub fn pieces(&self) -> &[Vec<DMatrix<f64>>] {
        &self.pieces
    }
    pub fn length(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().flatten().all(|c| c.iter().all(|v| *v == 0.0))
    }

    fn piece_index(&self, s: f64) -> Option<usize> {
        let len = self.length();
        if s < 0.0 || s > len {
            return None;
        }
        if s == len {
            return Some(self.pieces.len() - 1);
        }
        // last breakpoint <= s
        let idx = self.breakpoints.partition_point(|b| *b <= s);
        Some(idx.saturating_sub(1).min(self.pieces.len() - 1))
    }

    /// `g(s)`; right-continuous inside, left limit at `s = Λ_N`, zero outside.
    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.eval_into(s, &mut out);
        DMatrix::from_row_slice(self.dim, self.dim, &out)
    }

    /// Row-major `g(s)` into `out`.
    pub fn eval_into(&self, s: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let Some(i) = self.piece_index(s) else { return };
        let d = self.dim;
        let mut pow = 1.0;
        for c in &self.pieces[i] {
            for r in 0..d {
                for col in 0..d {
                    out[r * d + col] += c[(r, col)] * pow;
                }
            }
            pow *= s;
        }
    }

    /// `∫_a^b g(s) ds` over `[a, b] ∩ [0, Λ_N]`.
    pub fn integral(&self, a: f64, b: f64) -> DMatrix<f64> {
        self.moment_between(a, b, 0)
    }

    /// `∫ s^j g(s) ds` over `[a, b] ∩ [0, Λ_N]`.
    pub fn moment_between(&self, a: f64, b: f64, j: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        let lo = a.max(0.0);
        let hi = b.min(self.length());
        if !(hi > lo) {
            return out;
        }
        for (i, piece) in self.pieces.iter().enumerate() {
            let pa = self.breakpoints[i].max(lo);
            let pb = self.breakpoints[i + 1].min(hi);
            if !(pb > pa) {
                continue;
            }
            for (k, c) in piece.iter().enumerate() {
                let n = (k + j + 1) as i32;
                let w = (pb.powi(n) - pa.powi(n)) / n as f64;
                out += c * w;
            }
        }
        out
    }

    pub fn moment(&self, j: usize) -> DMatrix<f64> {
        self.moment_between(0.0, self.length(), j)
    }

    /// Guaranteed upper bound on `sup_s ‖g(s)‖` (Frobenius).
    pub fn sup_norm_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, piece) in self.pieces.iter().enumerate() {
            let smax = self.breakpoints[i + 1].abs().max(self.breakpoints[i].abs());
            let bound: f64 = piece.iter().enumerate().map(|(k, c)| c.norm() * smax.powi(k as i32)).sum();
            best = best.max(bound);
        }
        best
    }

    /// `∫_a^b ‖g(s)‖ ds` (Frobenius) by Gauss-Legendre on each piece.
    pub fn l1_norm_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(0.0);
        let hi = b.min(self.length());
        if !(hi > lo) {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..self.pieces.len() {
            let pa = self.breakpoints[i].max(lo);
            let pb = self.breakpoints[i + 1].min(hi);
            if !(pb > pa) {
                continue;
            }
            // polynomial norms are smooth away from sign changes; subdivide
            let sub = 16;
            let hs = (pb - pa) / sub as f64;
            for m in 0..sub {
                let c0 = pa + m as f64 * hs;
                for (x, w) in GAUSS8 {
                    let s = c0 + 0.5 * hs * (1.0 + x);
                    let mut val = 0.0;
                    let mut pow = 1.0;
                    let mut mat = DMatrix::<f64>::zeros(self.dim, self.dim);
                    for c in &self.pieces[i] {
                        mat += c * pow;
                        pow *= s;
                    }
                    val += mat.norm();
                    acc += 0.5 * hs * w * val;
                }
            }
        }
        acc
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1_norm_between(0.0, self.length())
    }

    /// `∫_0^{Λ_N} g(s) e^{-ps} ds` (order 0) or its `p`-derivative (order 1).
    pub fn laplace(&self, p: C64, order: u8) -> DMatrix<C64> {
        self.laplace_with(p, order, LaplaceBranch::Auto)
    }

    pub fn laplace_with(&self, p: C64, order: u8, branch: LaplaceBranch) -> DMatrix<C64> {
        assert!(order <= 1, "only orders 0 and 1 are supported");
        let use_taylor = match branch {
            LaplaceBranch::Auto => p.norm() * self.length() < TAYLOR_SWITCH,
            LaplaceBranch::Taylor => true,
            LaplaceBranch::ClosedForm => false,
        };
        if use_taylor {
            self.laplace_taylor(p, order)
        } else {
            self.laplace_closed(p, order)
        }
    }

    fn laplace_taylor(&self, p: C64, order: u8) -> DMatrix<C64> {
        // Σ_j (-p)^j / j! · M_{j+order}, sign (-1)^order
        let mut out = DMatrix::<C64>::zeros(self.dim, self.dim);
        let mut coef = C64::new(1.0, 0.0);
        let scale = self.length().max(1.0);
        for j in 0..30usize {
            if j > 0 {
                coef *= -p / j as f64;
            }
            let m = self.moment(j + order as usize);
            out += m.map(|v| C64::new(v, 0.0)) * coef;
            if coef.norm() * scale.powi((j + order as usize + 1) as i32) < 1e-18 {
                break;
            }
        }
        if order == 1 {
            out = -out;
        }
        out
    }

    fn laplace_closed(&self, p: C64, order: u8) -> DMatrix<C64> {
        let mut out = DMatrix::<C64>::zeros(self.dim, self.dim);
        for (i, piece) in self.pieces.iter().enumerate() {
            let a = self.breakpoints[i];
            let b = self.breakpoints[i + 1];
            let base = exp_monomial_integrals(a, b, p, piece.len() - 1 + order as usize);
            for (k, c) in piece.iter().enumerate() {
                let w = base[k + order as usize];
                out += c.map(|v| C64::new(v, 0.0)) * w;
            }
        }
        if order == 1 {
            out = -out;
        }
        out
    }
}

/// `∫_a^b s^n e^{-ps} ds` for `n = 0..=max_n`, written in the local variable
/// `σ = s - a` so that no large cancellations occur for small `|p|`.
pub fn exp_monomial_integrals(a: f64, b: f64, p: C64, max_n: usize) -> Vec<C64> {
    let len = b - a;
    let z = p * len;
    let phi = unit_exp_moments(z, max_n);
    let ea = (-p * a).exp();
    // J_r = ∫_0^L σ^r e^{-pσ} dσ = L^{r+1} φ_r(pL)
    let local: Vec<C64> = (0..=max_n).map(|r| phi[r] * len.powi(r as i32 + 1)).collect();
    (0..=max_n)
        .map(|n| {
            let mut acc = C64::new(0.0, 0.0);
            let mut binom = 1.0;
            for r in 0..=n {
                if r > 0 {
                    binom = binom * (n - r + 1) as f64 / r as f64;
                }
                acc += local[r] * (binom * a.powi((n - r) as i32));
            }
            acc * ea
        })
        .collect()
}

/// `φ_r(z) = ∫_0^1 t^r e^{-zt} dt` for `r = 0..=max_r`.
fn unit_exp_moments(z: C64, max_r: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); max_r + 1];
    if z.norm() < 1.0 {
        for (r, slot) in out.iter_mut().enumerate() {
            let mut term = C64::new(1.0, 0.0);
            let mut acc = C64::new(1.0 / (r + 1) as f64, 0.0);
            for j in 1..60 {
                term *= -z / j as f64;
                let t = term / (r + j + 1) as f64;
                acc += t;
                if t.norm() < 1e-18 * acc.norm().max(1e-300) {
                    break;
                }
            }
            *slot = acc;
        }
    } else {
        let e = (-z).exp();
        out[0] = (C64::new(1.0, 0.0) - e) / z;
        for r in 1..=max_r {
            out[r] = (out[r - 1] * r as f64 - e) / z;
        }
    }
    out
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// Adaptive Simpson on a complex integrand, independent of the closed forms.
    fn adaptive_simpson<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, tol: f64) -> C64 {
        fn rec<F: Fn(f64) -> C64>(
            f: &F,
            a: f64,
            b: f64,
            fa: C64,
            fm: C64,
            fb: C64,
            whole: C64,
            tol: f64,
            depth: u32,
        ) -> C64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
            let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
            let delta = left + right - whole;
            if depth == 0 || delta.norm() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (fa + fm * 4.0 + fb) * ((b - a) / 6.0);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    #[test]
    fn zero_kernel_transforms_to_zero() {
        let k = PiecewisePolyKernel::zero(2, 1.5).unwrap();
        let h = k.laplace(C64::new(0.3, 2.0), 0);
        assert!(h.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn unit_kernel_examples() {
        let k = PiecewisePolyKernel::constant(scalar(1.0), 1.0).unwrap();
        assert!((k.laplace(C64::new(0.0, 0.0), 0)[(0, 0)].re - 1.0).abs() < 1e-15);

        let kp = PiecewisePolyKernel::constant(scalar(1.0), PI).unwrap();
        let oracle = adaptive_simpson(&|s: f64| C64::new((-s).exp(), 0.0), 0.0, PI, 1e-14);
        let value = kp.laplace(C64::new(1.0, 0.0), 0)[(0, 0)];
        assert!((value - oracle).norm() < 1e-12);
        assert!((value.re - 0.956_786).abs() < 1e-6);
    }

    #[test]
    fn integral_examples() {
        let k = PiecewisePolyKernel::constant(scalar(1.0), PI).unwrap();
        assert!((k.integral(0.0, PI)[(0, 0)] - PI).abs() < 1e-15);
        assert!((k.integral(-1.0, 0.5)[(0, 0)] - 0.5).abs() < 1e-15);
        let ramp = PiecewisePolyKernel::new(1, vec![0.0, 1.0], vec![vec![scalar(0.0), scalar(1.0)]]).unwrap();
        assert!((ramp.integral(0.0, 1.0)[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_pieces() {
        assert!(PiecewisePolyKernel::new(1, vec![0.0, 1.0, 1.0], vec![vec![scalar(1.0)]; 2]).is_err());
        assert!(PiecewisePolyKernel::new(1, vec![0.5, 1.0], vec![vec![scalar(1.0)]]).is_err());
        assert!(PiecewisePolyKernel::new(1, vec![0.0, 1.0], vec![vec![scalar(1.0); 5]]).is_err());
        assert!(PiecewisePolyKernel::new(2, vec![0.0, 1.0], vec![vec![scalar(1.0)]]).is_err());
    }

    #[test]
    fn eval_is_right_continuous_with_left_limit_at_end() {
        let k = PiecewisePolyKernel::new(1, vec![0.0, 1.0, 2.0], vec![vec![scalar(1.0)], vec![scalar(3.0)]]).unwrap();
        assert_eq!(k.eval(0.5)[(0, 0)], 1.0);
        assert_eq!(k.eval(1.0)[(0, 0)], 3.0);
        assert_eq!(k.eval(2.0)[(0, 0)], 3.0);
        assert_eq!(k.eval(2.1)[(0, 0)], 0.0);
    }

    #[test]
    fn l1_norm_handles_sign_changes() {
        // g(s) = s - 1 on [0, 2]: ∫|g| = 1
        let k = PiecewisePolyKernel::new(1, vec![0.0, 2.0], vec![vec![scalar(-1.0), scalar(1.0)]]).unwrap();
        assert!((k.l1_norm() - 1.0).abs() < 1e-3);
    }
}
