//! Compactly supported matrix measures of order zero and the inverse of `Q`.
//!
//! A measure is a finite list of atoms plus a density. Densities are stored
//! as *combs*: masses `m_k` at nodes `start + k h` on a step shared by the
//! whole computation, `m_k` being the integral of the density against the
//! hat function of node `k`. Combs with different phases (`start mod h`)
//! coexist, so shifting by an atom is exact. Convolution is then exact
//! discrete-measure algebra and the only discretisation is the initial
//! projection onto hats.

use std::cell::RefCell;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{DdecError, Result};
use crate::fundamental::matrix_rows;
use crate::grid::GridFunction;
use crate::io::InlineGrid;
use crate::kernel::{PiecewisePolyKernel, C64};
use crate::system::DelaySystem;

/// Relative tolerance for merging atom locations.
pub const ATOM_MERGE_REL: f64 = 1e-12;

/// Two combs share a phase when their offset is this close to a whole number of steps.
const PHASE_TOL: f64 = 1e-6;

/// Products with fewer than this many node pairs are convolved directly.
const DIRECT_LIMIT: usize = 1 << 15;

fn same_location(a: f64, b: f64) -> bool {
    (a - b).abs() <= ATOM_MERGE_REL * a.abs().max(b.abs()).max(1.0)
}

/// Masses at `start + k h`, each `rows x cols` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Comb {
    pub start: f64,
    pub masses: Vec<f64>,
}

impl Comb {
    fn nodes(&self, w: usize) -> usize {
        self.masses.len() / w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactMeasure {
    rows: usize,
    cols: usize,
    step: Option<f64>,
    atoms: Vec<(f64, DMatrix<f64>)>,
    combs: Vec<Comb>,
    valid_until: f64,
}

impl CompactMeasure {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self { rows, cols, step: None, atoms: Vec::new(), combs: Vec::new(), valid_until: f64::INFINITY }
    }

    pub fn dirac(location: f64, weight: DMatrix<f64>) -> Self {
        let mut m = Self::zero(weight.nrows(), weight.ncols());
        m.atoms.push((location, weight));
        m
    }

    /// `δ_0 I_d`.
    pub fn identity(d: usize) -> Self {
        Self::dirac(0.0, DMatrix::identity(d, d))
    }

    /// Density given by samples; masses are trapezoid weights times values.
    pub fn from_density(f: &GridFunction) -> Self {
        let w = f.width();
        let n = f.len();
        let h = f.step();
        let mut masses = f.data().to_vec();
        for k in 0..n {
            let c = if k == 0 || k == n - 1 { 0.5 * h } else { h };
            masses[k * w..(k + 1) * w].iter_mut().for_each(|v| *v *= c);
        }
        let mut m = Self::zero(f.rows(), f.cols());
        m.step = Some(h);
        m.push_comb(Comb { start: f.t_start(), masses });
        m
    }

    /// Kernel `g` moved to `[offset, offset + Λ_N]`, projected on hats of step `h`.
    /// `h` must divide the kernel length.
    pub fn from_kernel(kernel: &PiecewisePolyKernel, offset: f64, h: f64) -> Result<Self> {
        let len = kernel.length();
        let n = (len / h).round() as usize;
        if n == 0 || (n as f64 * h - len).abs() > 1e-9 * len {
            return Err(DdecError::InvalidGrid(format!("step {h} does not divide the kernel length {len}")));
        }
        let d = kernel.dim();
        let mut masses = vec![0.0; (n + 1) * d * d];
        let bps = kernel.breakpoints();
        // ∫ g(s) φ(s) ds over [a, b] for linear φ, split at breakpoints, 3-point Gauss exact
        let gauss = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];
        let mut buf = vec![0.0; d * d];
        let mut integrate = |a: f64, b: f64, phi: &dyn Fn(f64) -> f64, out: &mut [f64]| {
            let mut cuts = vec![a];
            cuts.extend(bps.iter().copied().filter(|s| *s > a && *s < b));
            cuts.push(b);
            for w in cuts.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let half = 0.5 * (hi - lo);
                for (x, wt) in gauss {
                    let s = lo + half * (1.0 + x);
                    kernel.eval_into(s, &mut buf);
                    let f = half * wt * phi(s);
                    for (o, g) in out.iter_mut().zip(&buf) {
                        *o += f * g;
                    }
                }
            }
        };
        for k in 0..=n {
            let sk = if k == n { len } else { k as f64 * h };
            let out = &mut masses[k * d * d..(k + 1) * d * d];
            if k > 0 {
                let a = (k - 1) as f64 * h;
                integrate(a, sk, &|s| (s - a) / h, out);
            }
            if k < n {
                let b = if k + 1 == n { len } else { (k + 1) as f64 * h };
                integrate(sk, b, &|s| (b - s) / h, out);
            }
        }
        let mut m = Self::zero(d, d);
        m.step = Some(h);
        m.push_comb(Comb { start: offset, masses });
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    /// Density step, if the measure carries a density.
    pub fn step(&self) -> Option<f64> {
        self.step
    }
    pub fn atoms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.atoms
    }
    pub fn combs(&self) -> &[Comb] {
        &self.combs
    }
    /// Beyond this location the measure is a truncation and no longer exact.
    pub fn valid_until(&self) -> f64 {
        self.valid_until
    }
    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.combs.is_empty()
    }

    fn width(&self) -> usize {
        self.rows * self.cols
    }

    /// Smallest and largest support point.
    pub fn support(&self) -> Option<(f64, f64)> {
        let h = self.step.unwrap_or(0.0);
        let w = self.width();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (x, _) in &self.atoms {
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
        for c in &self.combs {
            lo = lo.min(c.start);
            hi = hi.max(c.start + (c.nodes(w) - 1) as f64 * h);
        }
        (lo <= hi).then_some((lo, hi))
    }

    fn push_atom(&mut self, location: f64, weight: DMatrix<f64>) {
        let pos = self.atoms.partition_point(|(x, _)| *x < location && !same_location(*x, location));
        if pos < self.atoms.len() && same_location(self.atoms[pos].0, location) {
            self.atoms[pos].1 += weight;
        } else {
            self.atoms.insert(pos, (location, weight));
        }
    }

    fn push_comb(&mut self, comb: Comb) {
        let w = self.width();
        if comb.masses.is_empty() {
            return;
        }
        let h = self.step.expect("comb without a step");
        for c in &mut self.combs {
            let offset = (comb.start - c.start) / h;
            let k = offset.round();
            if (offset - k).abs() > PHASE_TOL {
                continue;
            }
            let k = k as i64;
            let n_old = c.nodes(w) as i64;
            let n_new = comb.nodes(w) as i64;
            let lo = k.min(0);
            let hi = (k + n_new).max(n_old);
            if lo < 0 || hi > n_old {
                let mut grown = vec![0.0; ((hi - lo) as usize) * w];
                let shift = (-lo) as usize * w;
                grown[shift..shift + c.masses.len()].copy_from_slice(&c.masses);
                c.masses = grown;
                c.start -= (-lo) as f64 * h;
            }
            let base = ((k - lo) as usize) * w;
            for (i, v) in comb.masses.iter().enumerate() {
                c.masses[base + i] += v;
            }
            return;
        }
        self.combs.push(comb);
    }

    /// Drops exactly-zero atoms and trims zero nodes from comb ends.
    fn tidy(&mut self) {
        let w = self.width();
        self.atoms.retain(|(_, m)| m.iter().any(|v| *v != 0.0));
        for c in &mut self.combs {
            let n = c.nodes(w);
            let first = (0..n).find(|k| c.masses[k * w..(k + 1) * w].iter().any(|v| *v != 0.0));
            let Some(first) = first else {
                c.masses.clear();
                continue;
            };
            let last = (0..n).rev().find(|k| c.masses[k * w..(k + 1) * w].iter().any(|v| *v != 0.0)).unwrap();
            if first > 0 || last + 1 < n {
                c.masses = c.masses[first * w..(last + 1) * w].to_vec();
                c.start += first as f64 * self.step.unwrap();
            }
        }
        self.combs.retain(|c| !c.masses.is_empty());
        self.combs.sort_by(|a, b| a.start.total_cmp(&b.start));
    }

    fn adopt_step(&mut self, other: Option<f64>) -> Result<()> {
        match (self.step, other) {
            (None, s) => {
                self.step = s;
                Ok(())
            }
            (Some(_), None) => Ok(()),
            (Some(a), Some(b)) if (a - b).abs() <= 1e-12 * a => Ok(()),
            (Some(a), Some(b)) => Err(DdecError::InvalidGrid(format!("density steps differ: {a} vs {b}"))),
        }
    }

    /// `self + other`.
    pub fn add(&self, other: &CompactMeasure) -> Result<CompactMeasure> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(DdecError::DimensionMismatch("measures of different shapes".into()));
        }
        let other = other.on_step(self.step)?;
        let mut out = self.clone();
        out.adopt_step(other.step)?;
        for (x, m) in &other.atoms {
            out.push_atom(*x, m.clone());
        }
        for c in &other.combs {
            out.push_comb(c.clone());
        }
        out.valid_until = self.valid_until.min(other.valid_until);
        out.tidy();
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> CompactMeasure {
        let mut out = self.clone();
        out.atoms.iter_mut().for_each(|(_, m)| *m *= factor);
        out.combs.iter_mut().for_each(|c| c.masses.iter_mut().for_each(|v| *v *= factor));
        out
    }

    /// `M · self` for a constant matrix `M`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> CompactMeasure {
        self.map_nodes(m.nrows(), self.cols, |x| m * x)
    }

    /// `self · M` for a constant matrix `M`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> CompactMeasure {
        self.map_nodes(self.rows, m.ncols(), |x| x * m)
    }

    fn map_nodes(&self, rows: usize, cols: usize, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> CompactMeasure {
        let w = self.width();
        let mut out = CompactMeasure {
            rows,
            cols,
            step: self.step,
            atoms: Vec::new(),
            combs: Vec::new(),
            valid_until: self.valid_until,
        };
        out.atoms = self.atoms.iter().map(|(x, m)| (*x, f(m))).collect();
        for c in &self.combs {
            let n = c.nodes(w);
            let mut masses = Vec::with_capacity(n * rows * cols);
            for k in 0..n {
                let node = DMatrix::from_row_slice(self.rows, self.cols, &c.masses[k * w..(k + 1) * w]);
                let y = f(&node);
                for r in 0..rows {
                    for cc in 0..cols {
                        masses.push(y[(r, cc)]);
                    }
                }
            }
            out.combs.push(Comb { start: c.start, masses });
        }
        out.tidy();
        out
    }

    /// `δ_shift ∗ self`.
    pub fn shifted(&self, shift: f64) -> CompactMeasure {
        let mut out = self.clone();
        out.atoms.iter_mut().for_each(|(x, _)| *x += shift);
        out.combs.iter_mut().for_each(|c| c.start += shift);
        out.valid_until += shift;
        out
    }

    /// Restriction to `[lo, hi]`.
    pub fn truncated(&self, lo: f64, hi: f64) -> CompactMeasure {
        let w = self.width();
        let mut out = self.clone();
        out.atoms.retain(|(x, _)| (*x >= lo || same_location(*x, lo)) && (*x <= hi || same_location(*x, hi)));
        if let Some(h) = self.step {
            for c in &mut out.combs {
                let n = c.nodes(w) as i64;
                let first = (((lo - c.start) / h) - 1e-9).ceil().max(0.0) as i64;
                let last = ((((hi - c.start) / h) + 1e-9).floor() as i64).min(n - 1);
                if last < first {
                    c.masses.clear();
                    continue;
                }
                c.masses = c.masses[first as usize * w..(last as usize + 1) * w].to_vec();
                c.start += first as f64 * h;
            }
        }
        out.valid_until = self.valid_until.min(hi);
        out.tidy();
        out
    }

    /// Returns a copy whose density uses step `target` (resampling with a warning).
    fn on_step(&self, target: Option<f64>) -> Result<CompactMeasure> {
        match (self.step, target) {
            (Some(a), Some(b)) if (a - b).abs() > 1e-12 * b => {
                warn!("resampling density from step {a} to {b}");
                let mut out = self.clone();
                out.combs.clear();
                out.step = Some(b);
                if let Some(grid) = self.density_on_grid(a)? {
                    let span = grid.t_end() - grid.t_start();
                    let n = ((span / b).ceil() as usize).max(1);
                    let re = grid.resample(grid.t_start(), b, n + 1)?;
                    let dens = CompactMeasure::from_density(&re);
                    for c in dens.combs {
                        out.push_comb(c);
                    }
                }
                out.tidy();
                Ok(out)
            }
            _ => Ok(self.clone()),
        }
    }

    /// `∫ e^{-px} dμ(x)`.
    pub fn laplace(&self, p: C64) -> DMatrix<C64> {
        let w = self.width();
        let mut out = DMatrix::<C64>::zeros(self.rows, self.cols);
        for (x, m) in &self.atoms {
            let e = (-p * *x).exp();
            out += m.map(|v| C64::new(v, 0.0) * e);
        }
        if let Some(h) = self.step {
            for c in &self.combs {
                let step = (-p * h).exp();
                let mut e = (-p * c.start).exp();
                for k in 0..c.nodes(w) {
                    for r in 0..self.rows {
                        for cc in 0..self.cols {
                            out[(r, cc)] += e * c.masses[k * w + r * self.cols + cc];
                        }
                    }
                    e *= step;
                }
            }
        }
        out
    }

    /// Sum of node-mass norms (`≈` the density's L¹ norm).
    pub fn density_mass(&self) -> f64 {
        let w = self.width();
        self.combs
            .iter()
            .map(|c| c.masses.chunks(w).map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>())
            .sum()
    }

    /// Density `Σ_k (m_k / h) hat_k` sampled on a grid of step `step` spanning all comb nodes.
    /// A jump at a comb end therefore reads as its midpoint.
    pub fn density_on_grid(&self, step: f64) -> Result<Option<GridFunction>> {
        let Some(h) = self.step else { return Ok(None) };
        if self.combs.is_empty() {
            return Ok(None);
        }
        let w = self.width();
        let lo = self.combs.iter().map(|c| c.start).fold(f64::INFINITY, f64::min);
        let hi = self.combs.iter().map(|c| c.start + (c.nodes(w) - 1) as f64 * h).fold(f64::NEG_INFINITY, f64::max);
        let n = (((hi - lo) / step) - 1e-9).ceil().max(1.0) as usize + 1;
        let mut data = vec![0.0; n * w];
        for c in &self.combs {
            let nc = c.nodes(w);
            let value = |k: usize, i: usize| c.masses[k * w + i] / h;
            for j in 0..n {
                let t = lo + j as f64 * step;
                let pos = (t - c.start) / h;
                if pos <= -1.0 || pos >= nc as f64 {
                    continue;
                }
                // Σ_k (m_k / h) hat_k(t)
                let near = pos.round();
                let (k0, frac) = if (pos - near).abs() < 1e-9 { (near, 0.0) } else { (pos.floor(), pos - pos.floor()) };
                let k0 = k0 as i64;
                for i in 0..w {
                    let mut v = 0.0;
                    if k0 >= 0 && (k0 as usize) < nc {
                        v += (1.0 - frac) * value(k0 as usize, i);
                    }
                    if frac > 0.0 && k0 + 1 >= 0 && ((k0 + 1) as usize) < nc {
                        v += frac * value((k0 + 1) as usize, i);
                    }
                    data[j * w + i] += v;
                }
            }
        }
        Ok(Some(GridFunction::new(lo, step, self.rows, self.cols, data)?))
    }

    /// L¹ norm of the density, evaluated on the measure's own step.
    pub fn density_l1(&self) -> Result<f64> {
        let Some(h) = self.step else { return Ok(0.0) };
        match self.density_on_grid(h)? {
            Some(g) if g.len() >= 2 => g.lq_norm(1.0),
            Some(_) => Ok(self.density_mass()),
            None => Ok(0.0),
        }
    }

    /// `(μ ∗ y)(t)` on the grid `t_start + k step`, `y` read by interpolation (zero outside).
    pub fn apply_to_grid(&self, y: &GridFunction, t_start: f64, step: f64, n: usize) -> Result<GridFunction> {
        if y.rows() != self.cols || y.cols() != 1 {
            return Err(DdecError::DimensionMismatch(format!(
                "cannot convolve a {}x{} measure with a {}-vector signal",
                self.rows,
                self.cols,
                y.rows()
            )));
        }
        let w = self.width();
        let (r, c) = (self.rows, self.cols);
        let h = self.step.unwrap_or(0.0);
        let data: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|j| {
                let t = t_start + j as f64 * step;
                let mut acc = vec![0.0; r];
                let mut buf = vec![0.0; c];
                for (x, m) in &self.atoms {
                    y.eval_into(t - x, &mut buf);
                    for i in 0..r {
                        acc[i] += (0..c).map(|l| m[(i, l)] * buf[l]).sum::<f64>();
                    }
                }
                for comb in &self.combs {
                    for k in 0..comb.nodes(w) {
                        let s = t - (comb.start + k as f64 * h);
                        if s < y.t_start() - 1e-9 * y.step() || s > y.t_end() + 1e-9 * y.step() {
                            continue;
                        }
                        y.eval_into(s, &mut buf);
                        let mk = &comb.masses[k * w..(k + 1) * w];
                        for i in 0..r {
                            acc[i] += (0..c).map(|l| mk[i * c + l] * buf[l]).sum::<f64>();
                        }
                    }
                }
                acc.into_iter()
            })
            .collect();
        GridFunction::new(t_start, step, r, 1, data)
    }

    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        #[derive(Serialize)]
        struct AtomOut {
            tau: f64,
            #[serde(rename = "J")]
            j: Vec<Vec<f64>>,
        }
        let atoms: Vec<AtomOut> = self.atoms.iter().map(|(x, m)| AtomOut { tau: *x, j: matrix_rows(m) }).collect();
        let density = match self.step {
            Some(h) => self.density_on_grid(h)?.map(|g| InlineGrid::new(&g, "w")),
            None => None,
        };
        let support = self.support().map(|(a, b)| [a, b]);
        let valid = if self.valid_until.is_finite() { Some(self.valid_until) } else { None };
        Ok(serde_json::json!({
            "shape": [self.rows, self.cols],
            "support": support,
            "valid_until": valid,
            "atoms": atoms,
            "density": density,
        }))
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Discrete matrix convolution of two combs with equal step.
fn comb_product(a: &Comb, b: &Comb, rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let wa = rows * inner;
    let wb = inner * cols;
    let na = a.masses.len() / wa;
    let nb = b.masses.len() / wb;
    let n = na + nb - 1;
    let wr = rows * cols;
    let mut out = vec![0.0; n * wr];
    if na.min(nb) <= 8 || na * nb <= DIRECT_LIMIT {
        for i in 0..na {
            let am = &a.masses[i * wa..(i + 1) * wa];
            for j in 0..nb {
                let bm = &b.masses[j * wb..(j + 1) * wb];
                let o = &mut out[(i + j) * wr..(i + j + 1) * wr];
                for r in 0..rows {
                    for l in 0..inner {
                        let x = am[r * inner + l];
                        if x == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            o[r * cols + c] += x * bm[l * cols + c];
                        }
                    }
                }
            }
        }
        return out;
    }
    let len = n.next_power_of_two();
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(len), p.plan_fft_inverse(len))
    });
    let spectrum = |src: &[f64], w: usize, idx: usize, count: usize| {
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        for k in 0..count {
            buf[k].re = src[k * w + idx];
        }
        fwd.process(&mut buf);
        buf
    };
    let fa: Vec<Vec<Complex<f64>>> = (0..wa).map(|i| spectrum(&a.masses, wa, i, na)).collect();
    let fb: Vec<Vec<Complex<f64>>> = (0..wb).map(|i| spectrum(&b.masses, wb, i, nb)).collect();
    let scale = 1.0 / len as f64;
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = vec![Complex::new(0.0, 0.0); len];
            for l in 0..inner {
                let x = &fa[r * inner + l];
                let y = &fb[l * cols + c];
                for k in 0..len {
                    acc[k] += x[k] * y[k];
                }
            }
            inv.process(&mut acc);
            for k in 0..n {
                out[k * wr + r * cols + c] = acc[k].re * scale;
            }
        }
    }
    out
}

/// `a ∗ b`.
pub fn convolve(a: &CompactMeasure, b: &CompactMeasure) -> Result<CompactMeasure> {
    if a.cols != b.rows {
        return Err(DdecError::DimensionMismatch(format!(
            "cannot convolve {}x{} with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let b = b.on_step(a.step)?;
    let (rows, inner, cols) = (a.rows, a.cols, b.cols);
    let mut out = CompactMeasure::zero(rows, cols);
    out.adopt_step(a.step)?;
    out.adopt_step(b.step)?;
    for (x, m) in &a.atoms {
        for (y, k) in &b.atoms {
            out.push_atom(x + y, m * k);
        }
    }
    for (x, m) in &a.atoms {
        for c in b.combs.iter() {
            let shifted = CompactMeasure {
                rows: inner,
                cols,
                step: b.step,
                atoms: Vec::new(),
                combs: vec![c.clone()],
                valid_until: f64::INFINITY,
            }
            .left_mul(m);
            for c in shifted.combs {
                out.push_comb(Comb { start: c.start + x, masses: c.masses });
            }
        }
    }
    for c in &a.combs {
        for (y, k) in &b.atoms {
            let shifted = CompactMeasure {
                rows,
                cols: inner,
                step: a.step,
                atoms: Vec::new(),
                combs: vec![c.clone()],
                valid_until: f64::INFINITY,
            }
            .right_mul(k);
            for c in shifted.combs {
                out.push_comb(Comb { start: c.start + y, masses: c.masses });
            }
        }
    }
    let products: Vec<Comb> = a
        .combs
        .par_iter()
        .flat_map_iter(|ca| {
            b.combs
                .iter()
                .map(move |cb| Comb { start: ca.start + cb.start, masses: comb_product(ca, cb, rows, inner, cols) })
        })
        .collect();
    for p in products {
        out.push_comb(p);
    }
    let (lo_a, lo_b) = (a.support().map(|s| s.0), b.support().map(|s| s.0));
    out.valid_until = match (lo_a, lo_b) {
        (Some(la), Some(lb)) => (a.valid_until + lb).min(b.valid_until + la),
        _ => f64::INFINITY,
    };
    out.tidy();
    Ok(out)
}

/// Density step used for a system: `Λ_N / ceil(Λ_N / h)`, so `[0, Λ_N]` is grid-aligned.
pub fn measure_step(system: &DelaySystem, h: f64) -> f64 {
    let l = system.max_delay();
    l / ((l / h) - 1e-9).ceil().max(1.0)
}

/// `Q = δ_{-Λ_N} I - Σ δ_{-Λ_N+Λ_j} A_j - δ_{-Λ_N} ∗ g̃` and `P = B δ_0`.
pub fn build_qp(system: &DelaySystem, h: f64) -> Result<(CompactMeasure, CompactMeasure)> {
    let d = system.dim();
    let l = system.max_delay();
    let mut q = CompactMeasure::dirac(-l, DMatrix::identity(d, d));
    for (lj, a) in system.delays().iter().zip(system.coefficients()) {
        q.push_atom(-l + lj, -a.clone());
    }
    if !system.kernel().is_zero() {
        let g = CompactMeasure::from_kernel(system.kernel(), -l, measure_step(system, h))?.scaled(-1.0);
        q = q.add(&g)?;
    }
    q.tidy();
    Ok((q, CompactMeasure::dirac(0.0, system.input_matrix().clone())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeumannReport {
    /// `Λ_1 - c` where `[0, c)` carries the first kernel part; `None` when the split was skipped.
    pub epsilon: Option<f64>,
    pub split_skipped: bool,
    pub cut: f64,
    pub g1_norm: f64,
    pub geometric_terms: usize,
    pub g_series_terms: usize,
    pub window: f64,
    pub atom_defect: f64,
    pub density_defect_l1: f64,
}

/// Truncated inverse of a measure whose lowest atom is invertible and carries
/// no density below it.
pub fn invert_q(q: &CompactMeasure, window: f64, tol: f64) -> Result<(CompactMeasure, NeumannReport)> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(DdecError::OutOfRange(format!("window must be positive, got {window}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(DdecError::OutOfRange(format!("tolerance must lie in (0, 1), got {tol}")));
    }
    if q.rows != q.cols {
        return Err(DdecError::DimensionMismatch("only square measures can be inverted".into()));
    }
    let d = q.rows;
    let Some((l0, w0)) = q.atoms.first().cloned() else {
        return Err(DdecError::NoValidSplit("the measure has no leading atom".into()));
    };
    if q.combs.iter().any(|c| c.start < l0 && !same_location(c.start, l0)) {
        return Err(DdecError::NoValidSplit("density extends below the leading atom".into()));
    }
    let w0inv =
        w0.clone().try_inverse().ok_or_else(|| DdecError::NoValidSplit("leading atom weight is singular".into()))?;
    // Q' = W0⁻¹ δ_{-L0} ∗ Q = δ_0 I - g̃ + (positive atoms)
    let qp = q.left_mul(&w0inv).shifted(-l0);
    let h = qp.step.unwrap_or(window);
    let mut f2 = CompactMeasure::zero(d, d);
    f2.step = qp.step;
    for (x, m) in qp.atoms.iter().skip(1) {
        f2.push_atom(*x, m.clone());
    }
    let first_atom = qp.atoms.get(1).map(|(x, _)| *x).unwrap_or(f64::INFINITY);
    let g_total = qp.density_mass();

    let w = d * d;
    let mut g1 = CompactMeasure::zero(d, d);
    g1.step = qp.step;
    let (cut, epsilon, skipped) = if g_total < 1.0 {
        for c in &qp.combs {
            g1.push_comb(Comb { start: c.start, masses: c.masses.iter().map(|v| -v).collect() });
        }
        (first_atom, None, true)
    } else {
        let mut nodes: Vec<(f64, f64)> = Vec::new();
        for c in &qp.combs {
            for (k, m) in c.masses.chunks(w).enumerate() {
                nodes.push((c.start + k as f64 * h, m.iter().map(|v| v * v).sum::<f64>().sqrt()));
            }
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut cut = first_atom;
        let mut taken = 0;
        for (i, (x, norm)) in nodes.iter().enumerate() {
            if *x >= first_atom - 1e-9 * h || acc + norm > 0.5 {
                cut = cut.min(*x);
                break;
            }
            acc += norm;
            taken = i + 1;
        }
        if taken == 0 || !(cut > 0.0) {
            return Err(DdecError::NoValidSplit(format!(
                "no grid-aligned cut keeps the first kernel part below 1/2 (step {h})"
            )));
        }
        let eps = first_atom.is_finite().then(|| first_atom - cut);
        (cut, eps, false)
    };
    if !skipped {
        let lower = qp.truncated(f64::NEG_INFINITY, cut - 0.5 * h);
        let upper = qp.truncated(cut - 0.5 * h + 1e-12, f64::INFINITY);
        for c in &lower.combs {
            g1.push_comb(Comb { start: c.start, masses: c.masses.iter().map(|v| -v).collect() });
        }
        for c in &upper.combs {
            f2.push_comb(c.clone());
        }
    }
    g1.tidy();
    f2.tidy();
    let g1_norm = g1.density_mass();

    // R = (δ - g̃₁)⁻¹ = Σ g̃₁^{∗j}
    let id = {
        let mut m = CompactMeasure::identity(d);
        m.step = qp.step;
        m
    };
    let mut r = id.clone();
    let mut term = id.clone();
    let mut geometric_terms = 0;
    if g1_norm > 0.0 {
        loop {
            geometric_terms += 1;
            term = convolve(&term, &g1)?.truncated(f64::NEG_INFINITY, window);
            if term.is_zero() {
                break;
            }
            r = r.add(&term)?;
            if g1_norm.powi(geometric_terms as i32 + 1) / (1.0 - g1_norm) < tol {
                break;
            }
        }
    }
    r.valid_until = f64::INFINITY;
    let g = convolve(&r, &f2)?.truncated(f64::NEG_INFINITY, window);
    let neg_g = g.scaled(-1.0);
    // S = (δ + G)⁻¹ = Σ (-G)^{∗j}, finite on the window since min supp G ≥ cut
    let mut s = id.clone();
    let mut term = id;
    let mut g_series_terms = 0;
    while !g.is_zero() && (g_series_terms + 1) as f64 * cut <= window * (1.0 + 1e-12) {
        g_series_terms += 1;
        term = convolve(&term, &neg_g)?.truncated(f64::NEG_INFINITY, window);
        if term.is_zero() {
            break;
        }
        s = s.add(&term)?;
    }
    let mut qinv = convolve(&s, &r)?.truncated(f64::NEG_INFINITY, window).right_mul(&w0inv).shifted(-l0);
    qinv.valid_until = window - l0;
    let (atom_defect, density_defect_l1) = convolution_defect(q, &qinv, window)?;
    let report = NeumannReport {
        epsilon,
        split_skipped: skipped,
        cut,
        g1_norm,
        geometric_terms,
        g_series_terms,
        window,
        atom_defect,
        density_defect_l1,
    };
    Ok((qinv, report))
}

/// `Q ∗ Q⁻¹ - δ_0 I` on `[-window, window]`: (max atom-weight error, density L¹ norm).
pub fn convolution_defect(q: &CompactMeasure, qinv: &CompactMeasure, window: f64) -> Result<(f64, f64)> {
    let prod = convolve(q, qinv)?;
    let d = q.rows.min(qinv.cols);
    let defect = prod.add(&CompactMeasure::dirac(0.0, -DMatrix::<f64>::identity(d, d)))?;
    let defect = {
        let mut t = defect.truncated(-window, window);
        t.valid_until = f64::INFINITY;
        t
    };
    let atom = defect.atoms.iter().map(|(_, m)| m.amax()).fold(0.0, f64::max);
    Ok((atom, defect.density_l1()?))
}

/// `π(Q⁻¹ ∗ P ∗ u)` on `[0, window]` with the measure's density step.
pub fn transfer_output(
    qinv: &CompactMeasure,
    p: &CompactMeasure,
    u: &GridFunction,
    window: f64,
) -> Result<GridFunction> {
    if !(window > 0.0) {
        return Err(DdecError::OutOfRange(format!("window must be positive, got {window}")));
    }
    let transfer = convolve(qinv, p)?;
    let reach = transfer.valid_until + u.t_start();
    if window > reach + 1e-9 {
        return Err(DdecError::WindowExceeded(format!(
            "output up to {window} requested, but the inverse is only exact up to {reach} for this input"
        )));
    }
    let h = transfer.step.unwrap_or(u.step());
    let n = ((window / h) - 1e-9).ceil() as usize;
    let hy = window / n as f64;
    // the output at t needs the transfer up to t - min(supp u)
    let relevant = transfer.truncated(f64::NEG_INFINITY, window - u.t_start());
    relevant.apply_to_grid(u, 0.0, hy, n + 1)
}

/// `δ_{-Λ_N} ∗ Q⁻¹ ∗ P`, the impulse response `dX · B`.
pub fn impulse_response(system: &DelaySystem, qinv: &CompactMeasure, p: &CompactMeasure) -> Result<CompactMeasure> {
    Ok(convolve(qinv, p)?.shifted(-system.max_delay()))
}

/// Grid used for the default inverse window.
pub fn default_window(system: &DelaySystem) -> f64 {
    system.time_bound() + system.max_delay()
}
