//! Bounded-variation fundamental solution and the discretised input map.
//!
//! `X(t) = Σ_{τ_i < t} J_i + C(t)` where the jumps `J_i` sit on the delay
//! lattice and follow the renewal `J(τ) = Σ_j A_j J(τ - Λ_j)`, and the
//! continuous part solves
//! `C(t) = Σ_j A_j C(t - Λ_j) + ∫ g(s) C(t - s) ds + Σ_i G(min(t - τ_i, Λ_N)) J_i`
//! with `G(r) = ∫_0^r g`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DdecError, Result};
use crate::grid::{fit_interval, GridFunction};
use crate::io::InlineGrid;
use crate::simulator::{segment_grid, Scheme};
use crate::system::DelaySystem;

/// Default cap on the number of distinct lattice points.
pub const DEFAULT_MAX_ATOMS: usize = 100_000;

/// Default cap on input-map entries.
pub const DEFAULT_MEMORY_BUDGET: usize = 20_000_000;

/// Default merge tolerance for lattice values up to `horizon`.
pub fn default_merge_tol(horizon: f64) -> f64 {
    1e-12 * horizon.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticePoint {
    pub tau: f64,
    /// Every multi-index `n` with `Σ n_j Λ_j` merged into `tau`.
    pub indices: Vec<Vec<u32>>,
}

#[derive(PartialEq)]
struct HeapEntry(f64, Vec<u32>);

impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on value, ties broken by multi-index for determinism
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn lattice_value(delays: &[f64], n: &[u32]) -> f64 {
    n.iter().zip(delays).map(|(k, l)| *k as f64 * l).sum()
}

/// All lattice values `Σ n_j Λ_j ≤ horizon`, ascending, near-equal values merged.
pub fn lattice_points(delays: &[f64], horizon: f64, merge_tol: f64, max_atoms: usize) -> Result<Vec<LatticePoint>> {
    if !(horizon >= 0.0) || !(merge_tol >= 0.0) {
        return Err(DdecError::OutOfRange(format!(
            "lattice horizon and merge tolerance must be non-negative, got {horizon}, {merge_tol}"
        )));
    }
    if delays.is_empty() || delays.iter().any(|l| !(*l > 0.0)) {
        return Err(DdecError::OutOfRange("lattice generators must be positive".into()));
    }
    let n = delays.len();
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry(0.0, vec![0; n]));
    let mut points: Vec<LatticePoint> = Vec::new();
    while let Some(HeapEntry(value, idx)) = heap.pop() {
        match points.last_mut() {
            Some(last) if value - last.tau <= merge_tol => last.indices.push(idx.clone()),
            _ => {
                if points.len() == max_atoms {
                    return Err(DdecError::LatticeOverflow { max_atoms, horizon });
                }
                points.push(LatticePoint { tau: value, indices: vec![idx.clone()] });
            }
        }
        // canonical expansion: only raise coordinates at or after the last nonzero one
        let start = idx.iter().rposition(|k| *k > 0).unwrap_or(0);
        for j in start..n {
            let mut child = idx.clone();
            child[j] += 1;
            let v = lattice_value(delays, &child);
            if v <= horizon + merge_tol {
                heap.push(HeapEntry(v, child));
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub tau: f64,
    pub jump: DMatrix<f64>,
    pub indices: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy)]
pub struct FundamentalOptions {
    pub max_atoms: usize,
    /// `None` uses [`default_merge_tol`].
    pub merge_tol: Option<f64>,
}

impl Default for FundamentalOptions {
    fn default() -> Self {
        Self { max_atoms: DEFAULT_MAX_ATOMS, merge_tol: None }
    }
}

#[derive(Debug, Clone)]
pub struct BVFundamentalSolution {
    horizon: f64,
    atoms: Vec<Atom>,
    continuous: GridFunction,
    density: GridFunction,
    max_residual: f64,
}

impl BVFundamentalSolution {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    /// Nonzero jumps, plus the identity jump at `τ = 0`.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
    /// The continuous part `C` sampled at the grid nodes.
    pub fn continuous_part(&self) -> &GridFunction {
        &self.continuous
    }
    /// `c = C'` by centred differences.
    pub fn density(&self) -> &GridFunction {
        &self.density
    }
    pub fn step(&self) -> f64 {
        self.continuous.step()
    }
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Left-continuous `X(t)`; zero for `t ≤ 0`.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let d = self.continuous.rows();
        let mut out = DMatrix::zeros(d, d);
        if t <= 0.0 {
            return out;
        }
        for a in self.atoms.iter().take_while(|a| a.tau < t) {
            out += &a.jump;
        }
        out + self.continuous.eval_matrix(t.min(self.continuous.t_end()))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct AtomOut<'a> {
            tau: f64,
            #[serde(rename = "J")]
            j: Vec<Vec<f64>>,
            multi_indices: &'a [Vec<u32>],
        }
        let atoms: Vec<AtomOut> = self
            .atoms
            .iter()
            .map(|a| AtomOut { tau: a.tau, j: matrix_rows(&a.jump), multi_indices: &a.indices })
            .collect();
        serde_json::json!({
            "horizon": self.horizon,
            "atoms": atoms,
            "density": InlineGrid::new(&self.density, "c"),
        })
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

/// Jumps on the lattice computed by the renewal recursion over multi-indices.
fn renewal_jumps(system: &DelaySystem, points: &[LatticePoint]) -> Vec<DMatrix<f64>> {
    let d = system.dim();
    let mut owner: HashMap<&[u32], usize> = HashMap::new();
    for (g, p) in points.iter().enumerate() {
        for idx in &p.indices {
            owner.insert(idx.as_slice(), g);
        }
    }
    let mut jumps: Vec<DMatrix<f64>> = Vec::with_capacity(points.len());
    for (g, p) in points.iter().enumerate() {
        if g == 0 {
            jumps.push(DMatrix::identity(d, d));
            continue;
        }
        let mut jump = DMatrix::zeros(d, d);
        for (j, a) in system.coefficients().iter().enumerate() {
            // predecessor τ - Λ_j, reached through any multi-index with n_j > 0
            let Some(idx) = p.indices.iter().find(|n| n[j] > 0) else { continue };
            let mut pred = idx.clone();
            pred[j] -= 1;
            let pg = owner[pred.as_slice()];
            jump += a * &jumps[pg];
        }
        jumps.push(jump);
    }
    jumps
}

/// Computes `X` on `[0, T]` with grid step `h`.
pub fn fundamental_solution(system: &DelaySystem, horizon: f64, h: f64) -> Result<BVFundamentalSolution> {
    fundamental_solution_with(system, horizon, h, &FundamentalOptions::default())
}

pub fn fundamental_solution_with(
    system: &DelaySystem,
    horizon: f64,
    h: f64,
    opts: &FundamentalOptions,
) -> Result<BVFundamentalSolution> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(DdecError::OutOfRange(format!("horizon must be positive, got {horizon}")));
    }
    let d = system.dim();
    let tol = opts.merge_tol.unwrap_or_else(|| default_merge_tol(horizon));
    let points = lattice_points(system.delays(), horizon, tol, opts.max_atoms)?;
    let jumps = renewal_jumps(system, &points);
    let mut atoms: Vec<Atom> = points
        .into_iter()
        .zip(jumps)
        .enumerate()
        .filter(|(g, (_, j))| *g == 0 || j.iter().any(|v| *v != 0.0))
        .map(|(_, (p, jump))| Atom { tau: p.tau, jump, indices: p.indices })
        .collect();
    atoms.shrink_to_fit();

    let scheme = Scheme::new(system, h)?;
    let steps = (horizon / h - 1e-9).ceil().max(1.0) as usize;
    let kernel = system.kernel();
    let lambda_n = system.max_delay();
    let hist = scheme.hist();
    let history = vec![0.0; (hist + 1) * d * d];
    let forcing_active = !kernel.is_zero();
    let mut out = scheme.run(d, steps, history, |k, acc| {
        if !forcing_active {
            return;
        }
        let t = k as f64 * h;
        for a in atoms.iter().take_while(|a| a.tau < t) {
            let g = kernel.integral(0.0, (t - a.tau).min(lambda_n));
            let gj = g * &a.jump;
            for r in 0..d {
                for c in 0..d {
                    acc[r * d + c] += gj[(r, c)];
                }
            }
        }
    })?;
    let data: Vec<f64> = out.data.split_off(hist * d * d);
    let continuous = GridFunction::new(0.0, h, d, d, data)?;
    let density = differentiate(&continuous)?;
    Ok(BVFundamentalSolution { horizon, atoms, continuous, density, max_residual: out.max_residual })
}

/// Second-order finite differences (one-sided at the ends).
fn differentiate(f: &GridFunction) -> Result<GridFunction> {
    let n = f.len();
    let w = f.width();
    let h = f.step();
    let mut data = vec![0.0; n * w];
    for k in 0..n {
        for c in 0..w {
            let v = |i: usize| f.node(i)[c];
            data[k * w + c] = if n < 3 {
                (v(n - 1) - v(0)) / (h * (n - 1) as f64)
            } else if k == 0 {
                (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
            } else if k == n - 1 {
                (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
            } else {
                (v(k + 1) - v(k - 1)) / (2.0 * h)
            };
        }
    }
    GridFunction::new(f.t_start(), h, f.rows(), f.cols(), data)
}

/// Dense discretisation of `u ↦ x_T` from the zero state.
#[derive(Debug, Clone)]
pub struct InputMapMatrix {
    pub horizon: f64,
    pub state_start: f64,
    pub state_step: f64,
    pub state_nodes: usize,
    pub control_step: f64,
    pub control_nodes: usize,
    pub dim: usize,
    pub inputs: usize,
    /// Rows `i*d + r` (state node, component); columns `k*m + c` (control node, input).
    pub matrix: DMatrix<f64>,
}

impl InputMapMatrix {
    /// Samples `u` on the control grid and applies the matrix.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.width() != self.inputs {
            return Err(DdecError::DimensionMismatch(format!(
                "control has {} components, input map expects {}",
                u.width(),
                self.inputs
            )));
        }
        let mut v = DVector::zeros(self.control_nodes * self.inputs);
        let mut buf = vec![0.0; self.inputs];
        for k in 0..self.control_nodes {
            u.eval_into(k as f64 * self.control_step, &mut buf);
            for c in 0..self.inputs {
                v[k * self.inputs + c] = buf[c];
            }
        }
        self.apply_vector(&v)
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> Result<GridFunction> {
        let y = &self.matrix * v;
        GridFunction::new(self.state_start, self.state_step, self.dim, 1, y.as_slice().to_vec())
    }
}

/// Control grid `(cells, step)` on `[0, T]` for nominal step `h`.
pub fn control_grid(horizon: f64, h: f64) -> Result<(usize, f64)> {
    fit_interval(0.0, horizon, h)
}

/// Assembles the input map at horizon `T` with (about) step `h`.
pub fn input_map(system: &DelaySystem, horizon: f64, h: f64) -> Result<InputMapMatrix> {
    let (cells, hu) = control_grid(horizon, h)?;
    let fund = fundamental_solution(system, horizon, hu)?;
    input_map_from(system, &fund, cells, DEFAULT_MEMORY_BUDGET)
}

/// Input map for horizon `cells * fund.step()` reusing a fundamental solution
/// computed on a horizon at least as long.
pub fn input_map_from(
    system: &DelaySystem,
    fund: &BVFundamentalSolution,
    cells: usize,
    memory_budget: usize,
) -> Result<InputMapMatrix> {
    let d = system.dim();
    let m = system.inputs();
    let h = fund.step();
    let horizon = cells as f64 * h;
    if horizon > fund.continuous.t_end() + 1e-9 * h {
        return Err(DdecError::OutOfRange(format!(
            "fundamental solution covers [0, {}] but the input map needs [0, {horizon}]",
            fund.continuous.t_end()
        )));
    }
    let (ns, hs) = segment_grid(system, h);
    let lambda_n = system.max_delay();
    let n_x = ns + 1;
    let n_u = cells + 1;
    let entries = d * n_x * m * n_u;
    if entries > memory_budget {
        return Err(DdecError::MemoryBudget { entries, budget: memory_budget });
    }
    let b = system.input_matrix();
    let atom_weights: Vec<(f64, DMatrix<f64>)> = fund.atoms.iter().map(|a| (a.tau, &a.jump * b)).collect();
    let density = &fund.density;

    let rows: Vec<Vec<f64>> = (0..n_x)
        .into_par_iter()
        .map(|i| {
            let theta = if i == ns { 0.0 } else { -lambda_n + i as f64 * hs };
            let mut row = vec![0.0; d * n_u * m];
            let mut put = |k: usize, w: f64, mat: &DMatrix<f64>| {
                for r in 0..d {
                    for c in 0..m {
                        row[r * n_u * m + k * m + c] += w * mat[(r, c)];
                    }
                }
            };
            // atoms: J_i B u(T + θ - τ_i) for arguments in (0, T], u read by its
            // linear interpolant; an argument of exactly 0 is dropped so that
            // lattice points carry left limits, as in the simulator
            for (tau, jb) in &atom_weights {
                let x = (horizon + theta - tau) / h;
                if x < 1e-9 {
                    break;
                }
                if x > cells as f64 + 1e-9 {
                    continue;
                }
                let k0 = ((x + 1e-9).floor() as usize).min(cells);
                let frac = (x - k0 as f64).max(0.0);
                if frac < 1e-9 {
                    put(k0, 1.0, jb);
                } else {
                    put(k0, 1.0 - frac, jb);
                    put(k0 + 1, frac, jb);
                }
            }
            // density: ∫_0^t c(t - α) B u(α) dα by trapezoid over α-nodes in [0, t]
            let t_pos = cells as f64 + theta / h;
            if t_pos > -1e-9 {
                let last = ((t_pos + 1e-9).floor().max(0.0) as usize).min(cells);
                let rem = ((t_pos - last as f64) * h).max(0.0);
                let mut cb = DMatrix::zeros(d, m);
                for k in 0..=last {
                    let s = (cells - k) as f64 * h + theta;
                    let wk = if last == 0 {
                        0.0
                    } else if k == 0 || k == last {
                        0.5 * h
                    } else {
                        h
                    };
                    let wk = if k == last { wk + 0.5 * rem } else { wk };
                    if wk == 0.0 {
                        continue;
                    }
                    cb.copy_from(&(density.eval_matrix(s.max(0.0)) * b));
                    put(k, wk, &cb);
                }
                if rem > 0.0 && last < cells {
                    let f = rem / h;
                    let c0 = density.eval_matrix(0.0) * b;
                    put(last, 0.5 * rem * (1.0 - f), &c0);
                    put(last + 1, 0.5 * rem * f, &c0);
                }
            }
            row
        })
        .collect();

    let mut matrix = DMatrix::zeros(d * n_x, m * n_u);
    for (i, row) in rows.iter().enumerate() {
        for r in 0..d {
            let src = &row[r * n_u * m..(r + 1) * n_u * m];
            for (col, v) in src.iter().enumerate() {
                matrix[(i * d + r, col)] = *v;
            }
        }
    }
    Ok(InputMapMatrix {
        horizon,
        state_start: -lambda_n,
        state_step: hs,
        state_nodes: n_x,
        control_step: h,
        control_nodes: n_u,
        dim: d,
        inputs: m,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::PiecewisePolyKernel;
    use crate::simulator::solve_ivp;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn pure_difference(a: f64, b: f64) -> DelaySystem {
        DelaySystem::new(vec![1.0], vec![s(a)], s(b), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap()
    }

    fn exhaustive(delays: &[f64], horizon: f64) -> Vec<f64> {
        // brute force over a box of multi-indices
        let bound: Vec<u32> = delays.iter().map(|l| (horizon / l).floor() as u32).collect();
        let mut vals = Vec::new();
        let mut idx = vec![0u32; delays.len()];
        loop {
            let v = lattice_value(delays, &idx);
            if v <= horizon + 1e-12 {
                vals.push(v);
            }
            let mut j = 0;
            loop {
                if j == idx.len() {
                    vals.sort_by(f64::total_cmp);
                    vals.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
                    return vals;
                }
                idx[j] += 1;
                if idx[j] <= bound[j] {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn lattice_examples() {
        let p = lattice_points(&[1.0], 3.5, 1e-12, 100).unwrap();
        assert_eq!(p.iter().map(|x| x.tau).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0]);

        let p = lattice_points(&[1.0, PI], 4.0, 1e-12, 100).unwrap();
        let taus: Vec<f64> = p.iter().map(|x| x.tau).collect();
        assert_eq!(taus, exhaustive(&[1.0, PI], 4.0));
        assert_eq!(taus, vec![0.0, 1.0, 2.0, 3.0, PI, 4.0]);

        let p = lattice_points(&[1.0, 2.0], 4.0, 1e-12, 100).unwrap();
        assert_eq!(p.len(), 5);
        let mut two = p[2].indices.clone();
        two.sort();
        assert_eq!(two, vec![vec![0, 1], vec![2, 0]]);

        let p = lattice_points(&[1.0, PI], 10.0, default_merge_tol(10.0), 1000).unwrap();
        assert_eq!(p.len(), exhaustive(&[1.0, PI], 10.0).len());
        assert_eq!(p.len(), 23);

        assert!(matches!(
            lattice_points(&[1.0, PI], 40.0, 1e-12, 50),
            Err(DdecError::LatticeOverflow { max_atoms: 50, .. })
        ));
    }

    proptest! {
        #[test]
        fn lattice_matches_enumeration(l1 in 0.3f64..1.5, r in 1.1f64..3.0, horizon in 0.0f64..6.0) {
            let delays = [l1, l1 * r];
            let p = lattice_points(&delays, horizon, 1e-12, 10_000).unwrap();
            let taus: Vec<f64> = p.iter().map(|x| x.tau).collect();
            let brute = exhaustive(&delays, horizon);
            prop_assert_eq!(taus.len(), brute.len());
            for (a, b) in taus.iter().zip(&brute) {
                prop_assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn trivial_fundamental_solution() {
        let sys =
            DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap();
        let f = fundamental_solution(&sys, 3.0, 1e-2).unwrap();
        assert_eq!(f.atoms().len(), 1);
        assert_eq!(f.atoms()[0].jump, s(1.0));
        assert!(f.density().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_difference_atoms() {
        let a = 0.6;
        let f = fundamental_solution(&pure_difference(a, 1.0), 3.5, 1e-2).unwrap();
        let atoms = f.atoms();
        assert_eq!(atoms.len(), 4);
        for (k, at) in atoms.iter().enumerate() {
            assert_eq!(at.tau, k as f64);
            assert!((at.jump[(0, 0)] - a.powi(k as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_only_density_is_exponential() {
        let sys =
            DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::constant(s(1.0), 1.0).unwrap())
                .unwrap();
        let f = fundamental_solution(&sys, 1.0, 1e-3).unwrap();
        assert_eq!(f.atoms().len(), 1);
        let c = f.density();
        let cc = f.continuous_part();
        for k in 0..c.len() {
            let t = c.node_time(k);
            assert!((cc.node(k)[0] - (t.exp() - 1.0)).abs() < 1e-4, "C at {t}");
            assert!((c.node(k)[0] - t.exp()).abs() < 1e-4, "c at {t}");
        }
    }

    fn scalar_pi() -> DelaySystem {
        DelaySystem::new(
            vec![1.0, PI],
            vec![s(0.3), s(0.2)],
            s(1.0),
            PiecewisePolyKernel::constant(s(1.0), PI).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn renewal_consistency_off_lattice() {
        let sys = scalar_pi();
        let h = 1e-3;
        let f = fundamental_solution(&sys, 6.0, h).unwrap();
        let g = sys.kernel();
        for t in [0.5037, 1.7771, 2.9531, 4.4123, 5.8899] {
            let lhs = f.eval(t);
            // ∫_0^π g(s) X(t-s) ds by fine composite Simpson on a grid avoiding jumps poorly is fine at 10h
            let n = 20_000;
            let ds = PI / n as f64;
            let mut integral = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let sv = i as f64 * ds;
                integral += w * g.eval(sv)[(0, 0)] * f.eval(t - sv)[(0, 0)];
            }
            integral *= ds / 3.0;
            let rhs = 1.0 + 0.3 * f.eval(t - 1.0)[(0, 0)] + 0.2 * f.eval(t - PI)[(0, 0)] + integral;
            assert!((lhs[(0, 0)] - rhs).abs() <= 10.0 * h * rhs.abs().max(1.0), "t = {t}: {} vs {rhs}", lhs[(0, 0)]);
        }
    }

    #[test]
    fn input_map_memoryless_is_shift() {
        let sys =
            DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap();
        let h = 0.05;
        let map = input_map(&sys, 2.0, h).unwrap();
        let u = GridFunction::sample_interval(0.0, 2.0, h, 1, |t| DVector::from_element(1, (3.0 * t).sin())).unwrap();
        let y = map.apply(&u).unwrap();
        for i in 0..y.len() {
            let theta = y.node_time(i);
            assert!((y.node(i)[0] - (3.0 * (2.0 + theta)).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn input_map_pure_difference_two_atoms() {
        let a = 0.4;
        let sys = pure_difference(a, 1.0);
        let h = 0.01;
        let map = input_map(&sys, 2.0, h).unwrap();
        let u = GridFunction::sample_interval(0.0, 2.0, h, 1, |t| DVector::from_element(1, t * t)).unwrap();
        let y = map.apply(&u).unwrap();
        for i in 1..y.len() {
            let theta = y.node_time(i);
            let expected = (2.0 + theta).powi(2) + a * (1.0 + theta).powi(2);
            assert!((y.node(i)[0] - expected).abs() < 1e-3, "θ = {theta}");
        }
    }

    #[test]
    fn input_map_columns_match_simulator() {
        let sys = scalar_pi();
        let h = 0.02;
        let horizon = 4.0;
        let map = input_map(&sys, horizon, h).unwrap();
        let phi = GridFunction::sample_interval(-PI, 0.0, h, 1, |_| DVector::zeros(1)).unwrap();
        for k in [20usize, 77, 150] {
            let u = GridFunction::sample(0.0, h, map.control_nodes, 1, |t| {
                DVector::from_element(1, (1.0 - ((t - k as f64 * h) / h).abs()).max(0.0))
            })
            .unwrap();
            let traj = solve_ivp(&sys, &phi, Some(&u), horizon, h).unwrap();
            let col = map.apply(&u).unwrap();
            // hat inputs are not smooth between lattice points, so read the march
            // nodes by plain interpolation instead of the segment sampler
            let seg =
                GridFunction::sample(col.t_start(), col.step(), col.len(), 1, |th| traj.nodes().eval(horizon + th))
                    .unwrap();
            let err = seg.sub(&col).unwrap().lq_norm(1.0).unwrap();
            let size = col.lq_norm(1.0).unwrap();
            assert!(err < 0.05 * size, "column {k}: L1 gap {err} for column size {size}");
        }
    }
}
