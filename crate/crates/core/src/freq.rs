//! Characteristic matrix `H(p) = I - Σ A_j e^{-pΛ_j} - ĝ(p)`, zero counting by
//! the argument principle, root refinement and the controllability verdict.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DdecError, Result};
use crate::kernel::C64;
use crate::system::DelaySystem;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;
pub const DEFAULT_RE_MIN: f64 = -10.0;
const BOUNDARY_RETRIES: usize = 5;
const NEWTON_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rectangle {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rectangle {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        if !(re_max > re_min) || !(im_max > im_min) || ![re_min, re_max, im_min, im_max].iter().all(|v| v.is_finite()) {
            return Err(DdecError::OutOfRange(format!("empty rectangle [{re_min}, {re_max}] x [{im_min}, {im_max}]")));
        }
        Ok(Self { re_min, re_max, im_min, im_max })
    }

    /// Scan region used when none is given.
    ///
    /// The right edge is at least `ln(Σ‖A_j‖ + ‖g‖₁) + 1` and far enough right
    /// that `Σ‖A_j‖ e^{-xΛ_j} + sup‖g‖ min(Λ_N, 1/x) ≤ 1/2`, which keeps `H`
    /// invertible for every `Re p ≥ x`.
    pub fn default_for(
        system: &DelaySystem,
        re_min: Option<f64>,
        re_max: Option<f64>,
        im_max: Option<f64>,
    ) -> Result<Self> {
        let re_min = re_min.unwrap_or(DEFAULT_RE_MIN);
        let re_max = re_max.unwrap_or_else(|| default_right_edge(system));
        let im = im_max.unwrap_or(20.0 * 2.0 * PI / system.min_delay());
        Self::new(re_min, re_max, -im, im)
    }

    pub fn diameter(&self) -> f64 {
        (self.re_max - self.re_min).hypot(self.im_max - self.im_min)
    }

    pub fn contains(&self, p: C64, slack: f64) -> bool {
        p.re >= self.re_min - slack
            && p.re <= self.re_max + slack
            && p.im >= self.im_min - slack
            && p.im <= self.im_max + slack
    }

    fn expanded(&self, by: f64) -> Self {
        Self { re_min: self.re_min - by, re_max: self.re_max + by, im_min: self.im_min - by, im_max: self.im_max + by }
    }

    fn center(&self) -> C64 {
        C64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }
}

/// Heuristic right edge, pushed right until a certified no-root bound holds.
pub fn default_right_edge(system: &DelaySystem) -> f64 {
    let a_norm: f64 = system.coefficients().iter().map(|a| a.norm()).sum();
    let g1 = system.kernel().l1_norm();
    let heuristic = (a_norm + g1).max(1e-300).ln() + 1.0;
    let certified = certified_edge(system);
    heuristic.max(certified)
}

fn perturbation_bound(system: &DelaySystem, x: f64) -> f64 {
    let gsup = system.kernel().sup_norm_bound();
    let ln = system.max_delay();
    let dist = if x > 0.0 { gsup * ln.min(1.0 / x) } else { gsup * ln * (-x * ln).exp() };
    system.delays().iter().zip(system.coefficients()).map(|(l, a)| a.norm() * (-x * l).exp()).sum::<f64>() + dist
}

fn certified_edge(system: &DelaySystem) -> f64 {
    let mut x = 0.0;
    let mut step = 1.0;
    while perturbation_bound(system, x) > 0.5 && x < 1e6 {
        x += step;
        step *= 1.5;
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicEvaluation {
    pub p: C64,
    pub h: DMatrix<C64>,
    pub dh: DMatrix<C64>,
    pub det: C64,
    pub ddet: C64,
    pub sigma_min_aug: f64,
    pub sigma_max_aug: f64,
}

impl CharacteristicEvaluation {
    /// `σ_min / σ_max` of `[H(p), B]`.
    pub fn margin(&self) -> f64 {
        if self.sigma_max_aug == 0.0 {
            0.0
        } else {
            self.sigma_min_aug / self.sigma_max_aug
        }
    }
}

fn h_and_derivative(system: &DelaySystem, p: C64) -> (DMatrix<C64>, DMatrix<C64>) {
    let d = system.dim();
    let mut h = DMatrix::<C64>::identity(d, d);
    let mut dh = DMatrix::<C64>::zeros(d, d);
    for (l, a) in system.delays().iter().zip(system.coefficients()) {
        let e = (-p * *l).exp();
        for r in 0..d {
            for c in 0..d {
                let v = a[(r, c)];
                if v != 0.0 {
                    h[(r, c)] -= e * v;
                    dh[(r, c)] += e * (v * *l);
                }
            }
        }
    }
    let kernel = system.kernel();
    if !kernel.is_zero() {
        h -= kernel.laplace(p, 0);
        dh -= kernel.laplace(p, 1);
    }
    (h, dh)
}

fn determinant(m: &DMatrix<C64>) -> C64 {
    match m.nrows() {
        0 => C64::new(1.0, 0.0),
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.clone().lu().determinant(),
    }
}

/// `adj(M)` by cofactors (valid for singular `M`).
fn adjugate(m: &DMatrix<C64>) -> DMatrix<C64> {
    let d = m.nrows();
    if d == 1 {
        return DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    }
    let mut adj = DMatrix::<C64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let minor = m.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = determinant(&minor) * sign;
        }
    }
    adj
}

/// `(det H(p), d/dp det H(p))` via Jacobi's formula.
fn det_pair(system: &DelaySystem, p: C64) -> (C64, C64) {
    let (h, dh) = h_and_derivative(system, p);
    let det = determinant(&h);
    let ddet = (adjugate(&h) * dh).trace();
    (det, ddet)
}

fn singular_values_aug(h: &DMatrix<C64>, b: &DMatrix<f64>) -> (f64, f64) {
    let d = h.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::<C64>::zeros(d, d + m);
    aug.view_mut((0, 0), (d, d)).copy_from(h);
    for r in 0..d {
        for c in 0..m {
            aug[(r, d + c)] = C64::new(b[(r, c)], 0.0);
        }
    }
    let sv = aug.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// Evaluates `H`, `H'`, `det H`, its derivative and the singular values of `[H, B]`.
pub fn char_eval(system: &DelaySystem, p: C64) -> CharacteristicEvaluation {
    let (h, dh) = h_and_derivative(system, p);
    let det = determinant(&h);
    let ddet = (adjugate(&h) * &dh).trace();
    let (sigma_min_aug, sigma_max_aug) = singular_values_aug(&h, system.input_matrix());
    CharacteristicEvaluation { p, h, dh, det, ddet, sigma_min_aug, sigma_max_aug }
}

/// Size of `det H(p)`'s terms, used to make root tolerances relative.
pub fn det_scale(system: &DelaySystem, p: C64) -> f64 {
    let a: f64 = system.delays().iter().zip(system.coefficients()).map(|(l, a)| a.norm() * (-p.re * l).exp()).sum();
    let g = system.kernel().l1_norm() * ((-p.re).max(0.0) * system.max_delay()).exp();
    (1.0 + a + g).powi(system.dim() as i32)
}

enum TraceError {
    Boundary,
    Fatal(DdecError),
}

/// Winding number of `det H` along the boundary of `rect` (counter-clockwise).
fn trace_winding(system: &DelaySystem, rect: &Rectangle) -> std::result::Result<i64, TraceError> {
    let diam = rect.diameter();
    let corners = [
        C64::new(rect.re_min, rect.im_min),
        C64::new(rect.re_max, rect.im_min),
        C64::new(rect.re_max, rect.im_max),
        C64::new(rect.re_min, rect.im_max),
    ];
    let mut total = 0.0;
    let (mut f, mut fp) = det_pair(system, corners[0]);
    for e in 0..4 {
        let a = corners[e];
        let b = corners[(e + 1) % 4];
        let len = (b - a).norm();
        let dir = (b - a) / len;
        let mut s = 0.0;
        while s < len {
            if f.norm() == 0.0 {
                return Err(TraceError::Boundary);
            }
            let dist = if fp.norm() > 0.0 { f.norm() / fp.norm() } else { f64::INFINITY };
            if dist < 1e-9 * diam {
                return Err(TraceError::Boundary);
            }
            let mut ds = (len - s).min(0.25 * dist).min(0.125 * len);
            loop {
                let z = if s + ds >= len { b } else { a + dir * (s + ds) };
                let (f1, fp1) = det_pair(system, z);
                let darg = (f1 / f).arg();
                if f1.norm() > 0.0 && darg.abs() < PI / 4.0 {
                    total += darg;
                    s = if s + ds >= len { len } else { s + ds };
                    f = f1;
                    fp = fp1;
                    break;
                }
                ds *= 0.5;
                if ds < 1e-13 * diam {
                    return Err(TraceError::Fatal(DdecError::StepUnderflow { re: z.re, im: z.im }));
                }
            }
        }
    }
    let w = total / (2.0 * PI);
    let n = w.round();
    if (w - n).abs() > 0.1 {
        return Err(TraceError::Boundary);
    }
    Ok(n as i64)
}

/// Winding count of `rect`, enlarging it slightly if a zero sits on the boundary.
fn winding_with_retries(system: &DelaySystem, rect: &Rectangle) -> Result<(usize, Rectangle)> {
    let diam = rect.diameter();
    for attempt in 0..=BOUNDARY_RETRIES {
        let r = rect.expanded(attempt as f64 * 1e-6 * diam);
        match trace_winding(system, &r) {
            Ok(n) => return Ok((n.max(0) as usize, r)),
            Err(TraceError::Boundary) => continue,
            Err(TraceError::Fatal(e)) => return Err(e),
        }
    }
    Err(DdecError::BoundaryZero { retries: BOUNDARY_RETRIES })
}

/// Number of zeros of `det H` inside `rect`, with multiplicity.
pub fn count_zeros(system: &DelaySystem, rect: &Rectangle) -> Result<usize> {
    winding_with_retries(system, rect).map(|(n, _)| n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootInfo {
    pub re: f64,
    pub im: f64,
    pub abs_det: f64,
    /// `σ_min / σ_max` of `[H(p), B]`.
    pub margin: f64,
    pub multiplicity: usize,
    /// False when Newton did not reach the tolerance; the box centre is reported.
    pub resolved: bool,
}

impl RootInfo {
    pub fn p(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Newton on `det H / det H'`.
fn newton(system: &DelaySystem, start: C64, tol: f64, iters: usize) -> Option<C64> {
    let mut p = start;
    for _ in 0..iters {
        let (f, fp) = det_pair(system, p);
        if f.norm() <= tol * det_scale(system, p) {
            return Some(p);
        }
        if fp.norm() == 0.0 || !fp.norm().is_finite() {
            return None;
        }
        let step = f / fp;
        p -= step;
        if !p.re.is_finite() || !p.im.is_finite() {
            return None;
        }
        if step.norm() <= 1e-15 * p.norm().max(1.0) {
            let (f, _) = det_pair(system, p);
            return (f.norm() <= tol * det_scale(system, p)).then_some(p);
        }
    }
    None
}

fn sub_rect(r: &Rectangle, fx: f64, fy: f64) -> [Rectangle; 4] {
    let xm = r.re_min + fx * (r.re_max - r.re_min);
    let ym = r.im_min + fy * (r.im_max - r.im_min);
    [
        Rectangle { re_min: r.re_min, re_max: xm, im_min: r.im_min, im_max: ym },
        Rectangle { re_min: xm, re_max: r.re_max, im_min: r.im_min, im_max: ym },
        Rectangle { re_min: r.re_min, re_max: xm, im_min: ym, im_max: r.im_max },
        Rectangle { re_min: xm, re_max: r.re_max, im_min: ym, im_max: r.im_max },
    ]
}

const SPLITS: [(f64, f64); 6] =
    [(0.5, 0.5), (0.513_7, 0.487_1), (0.471_3, 0.529_1), (0.537_9, 0.458_3), (0.446_1, 0.551_7), (0.5621, 0.4219)];

fn resolve_box(
    system: &DelaySystem,
    rect: Rectangle,
    count: usize,
    tol: f64,
    depth: usize,
) -> Result<Vec<(C64, usize, bool)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let diam = rect.diameter();
    let small = diam < 1e3 * tol || depth > 60;
    if count == 1 || small {
        let iters = if count > 1 { 10 * NEWTON_ITERS } else { NEWTON_ITERS };
        let starts = [
            rect.center(),
            C64::new(
                rect.re_min + 0.25 * (rect.re_max - rect.re_min),
                rect.im_min + 0.25 * (rect.im_max - rect.im_min),
            ),
            C64::new(
                rect.re_min + 0.75 * (rect.re_max - rect.re_min),
                rect.im_min + 0.75 * (rect.im_max - rect.im_min),
            ),
            C64::new(
                rect.re_min + 0.25 * (rect.re_max - rect.re_min),
                rect.im_min + 0.75 * (rect.im_max - rect.im_min),
            ),
            C64::new(
                rect.re_min + 0.75 * (rect.re_max - rect.re_min),
                rect.im_min + 0.25 * (rect.im_max - rect.im_min),
            ),
        ];
        for s in starts {
            if let Some(p) = newton(system, s, tol, iters) {
                if rect.contains(p, 1e-6 * diam) {
                    return Ok(vec![(p, count, true)]);
                }
            }
        }
        if small {
            return Ok(vec![(rect.center(), count, false)]);
        }
        if count > 1 {
            // fall through to subdivision
        } else if diam < 1e-6 {
            return Ok(vec![(rect.center(), 1, false)]);
        }
    }
    for (fx, fy) in SPLITS {
        let subs = sub_rect(&rect, fx, fy);
        let mut counts = [0usize; 4];
        let mut ok = true;
        for (i, s) in subs.iter().enumerate() {
            match trace_winding(system, s) {
                Ok(n) => counts[i] = n.max(0) as usize,
                Err(TraceError::Boundary) => {
                    ok = false;
                    break;
                }
                Err(TraceError::Fatal(e)) => return Err(e),
            }
        }
        if !ok || counts.iter().sum::<usize>() != count {
            continue;
        }
        let parts: Vec<Result<Vec<(C64, usize, bool)>>> = {
            use rayon::prelude::*;
            subs.par_iter().zip(counts.par_iter()).map(|(s, c)| resolve_box(system, *s, *c, tol, depth + 1)).collect()
        };
        let mut out = Vec::new();
        for p in parts {
            out.extend(p?);
        }
        return Ok(out);
    }
    Ok(vec![(rect.center(), count, false)])
}

fn make_info(system: &DelaySystem, p: C64, multiplicity: usize, resolved: bool) -> RootInfo {
    let ev = char_eval(system, p);
    RootInfo { re: p.re, im: p.im, abs_det: ev.det.norm(), margin: ev.margin(), multiplicity, resolved }
}

/// Zeros of `det H` in `rect`, refined by Newton, conjugate pairs made exact.
pub fn find_roots(system: &DelaySystem, rect: &Rectangle, tol: f64) -> Result<Vec<RootInfo>> {
    if !(tol > 0.0) {
        return Err(DdecError::OutOfRange(format!("root tolerance must be positive, got {tol}")));
    }
    let (count, used) = winding_with_retries(system, rect)?;
    let raw = resolve_box(system, used, count, tol, 0)?;
    let mut roots: Vec<(C64, usize, bool)> = raw
        .into_iter()
        .map(|(p, m, ok)| {
            let snap = 1e-9 * p.norm().max(1.0);
            (if p.im.abs() <= snap { C64::new(p.re, 0.0) } else { p }, m, ok)
        })
        .collect();
    // pair conjugates
    let n = roots.len();
    let mut paired = vec![false; n];
    for i in 0..n {
        if paired[i] || roots[i].0.im <= 0.0 {
            continue;
        }
        let target = roots[i].0.conj();
        let best = (0..n)
            .filter(|&j| j != i && !paired[j] && roots[j].0.im < 0.0)
            .min_by(|&a, &b| (roots[a].0 - target).norm().total_cmp(&(roots[b].0 - target).norm()));
        if let Some(j) = best {
            if (roots[j].0 - target).norm() <= 1e-6 * target.norm().max(1.0) {
                let avg = C64::new(0.5 * (roots[i].0.re + roots[j].0.re), 0.5 * (roots[i].0.im - roots[j].0.im));
                roots[i].0 = avg;
                roots[j].0 = avg.conj();
                paired[i] = true;
                paired[j] = true;
            }
        }
    }
    let mut infos: Vec<RootInfo> = roots.into_iter().map(|(p, m, ok)| make_info(system, p, m, ok)).collect();
    infos.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    Ok(infos)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    UncontrollableRankAnb,
    UncontrollableFrequency,
    ControllableUpToRegion,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::UncontrollableRankAnb => "UNCONTROLLABLE_RANK_ANB",
            Outcome::UncontrollableFrequency => "UNCONTROLLABLE_FREQUENCY",
            Outcome::ControllableUpToRegion => "CONTROLLABLE_UP_TO_REGION",
        }
    }
    pub fn is_controllable(&self) -> bool {
        matches!(self, Outcome::ControllableUpToRegion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub re: f64,
    pub im: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margins {
    pub anb_sigma_min: f64,
    pub anb_sigma_max: f64,
    pub anb_ratio: f64,
    /// Smallest `[H(p*), B]` margin over the roots found (`null` without roots).
    pub min_root_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllabilityVerdict {
    pub outcome: Outcome,
    pub witness: Option<Witness>,
    pub margins: Margins,
    pub rank_tol: f64,
    pub region: Rectangle,
    pub zero_count: Option<usize>,
    pub roots: Vec<RootInfo>,
    pub unresolved_roots: usize,
    pub time_bound: f64,
    pub note: String,
}

/// Decides the rank condition on `[A_N, B]` and the frequency condition on
/// `[H(p), B]` at every characteristic root inside `rect`.
pub fn check_controllability(system: &DelaySystem, rect: &Rectangle, rank_tol: f64) -> Result<ControllabilityVerdict> {
    check_controllability_with(system, rect, rank_tol, DEFAULT_ROOT_TOL)
}

pub fn check_controllability_with(
    system: &DelaySystem,
    rect: &Rectangle,
    rank_tol: f64,
    root_tol: f64,
) -> Result<ControllabilityVerdict> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(DdecError::OutOfRange(format!("rank tolerance must lie in (0, 1), got {rank_tol}")));
    }
    let d = system.dim();
    let m = system.inputs();
    let mut anb = DMatrix::<f64>::zeros(d, d + m);
    anb.view_mut((0, 0), (d, d)).copy_from(system.last_coefficient());
    anb.view_mut((0, d), (d, m)).copy_from(system.input_matrix());
    let sv = anb.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    let time_bound = system.time_bound();
    let mut margins = Margins { anb_sigma_min: smin, anb_sigma_max: smax, anb_ratio: ratio, min_root_margin: None };
    if ratio <= rank_tol {
        return Ok(ControllabilityVerdict {
            outcome: Outcome::UncontrollableRankAnb,
            witness: None,
            margins,
            rank_tol,
            region: *rect,
            zero_count: None,
            roots: Vec::new(),
            unresolved_roots: 0,
            time_bound,
            note: format!("rank [A_N, B] < {d}"),
        });
    }
    let roots = find_roots(system, rect, root_tol)?;
    let zero_count = roots.iter().map(|r| r.multiplicity).sum();
    let unresolved = roots.iter().filter(|r| !r.resolved).count();
    margins.min_root_margin = roots.iter().map(|r| r.margin).reduce(f64::min);
    let failing = roots
        .iter()
        .filter(|r| r.margin <= rank_tol)
        .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()).then(b.im.total_cmp(&a.im)));
    let (outcome, witness, note) = match failing {
        Some(r) => (
            Outcome::UncontrollableFrequency,
            Some(Witness { re: r.re, im: r.im, margin: r.margin }),
            format!("rank [H(p), B] < {d} at a characteristic root"),
        ),
        None => (
            Outcome::ControllableUpToRegion,
            None,
            format!(
                "approximately controllable in any time T > {time_bound}, provided no rank drop occurs outside the scanned region"
            ),
        ),
    };
    Ok(ControllabilityVerdict {
        outcome,
        witness,
        margins,
        rank_tol,
        region: *rect,
        zero_count: Some(zero_count),
        roots,
        unresolved_roots: unresolved,
        time_bound,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::PiecewisePolyKernel;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_difference(a: f64) -> DelaySystem {
        DelaySystem::new(vec![1.0], vec![s(a)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap()
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
    fn char_eval_examples() {
        let sys = scalar_pi();
        let ev = char_eval(&sys, C64::new(0.0, 0.0));
        assert!((ev.det.re - (1.0 - 0.5 - PI)).abs() < 1e-14);
        let ev = char_eval(&sys, C64::new(50.0, 0.0));
        assert!((ev.h[(0, 0)] - C64::new(1.0, 0.0)).norm() <= 1e-1);
        let a = 0.5f64;
        let ev = char_eval(&scalar_difference(a), C64::new(a.ln(), 0.0));
        assert!(ev.det.norm() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let sys = scalar_pi();
        for p in [C64::new(0.3, 0.7), C64::new(-1.2, 4.0), C64::new(2.0, -3.0)] {
            let e = 1e-6;
            let f = |z: C64| char_eval(&sys, z).det;
            let fd = (f(p + e) - f(p - e)) / (2.0 * e);
            let ev = char_eval(&sys, p);
            assert!((fd - ev.ddet).norm() <= 1e-6 * ev.ddet.norm().max(1.0));
        }
    }

    #[test]
    fn conjugate_evaluations() {
        let sys = scalar_pi();
        let p = C64::new(-0.4, 2.3);
        let a = char_eval(&sys, p).det;
        let b = char_eval(&sys, p.conj()).det;
        assert!((a.conj() - b).norm() < 1e-13 * a.norm().max(1.0));
    }

    #[test]
    fn zero_counts() {
        let id = DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap();
        let r = Rectangle::new(-3.0, 3.0, -10.0, 10.0).unwrap();
        assert_eq!(count_zeros(&id, &r).unwrap(), 0);
        let sys = scalar_difference(0.5);
        assert_eq!(count_zeros(&sys, &Rectangle::new(-2.0, 1.0, -1.0, 1.0).unwrap()).unwrap(), 1);
        assert_eq!(count_zeros(&sys, &Rectangle::new(-2.0, 1.0, -7.0, 7.0).unwrap()).unwrap(), 3);
    }

    #[test]
    fn boundary_zero_is_perturbed() {
        let sys = scalar_difference(0.5);
        // left edge passes exactly through ln 0.5
        let r = Rectangle::new(0.5f64.ln(), 1.0, -1.0, 1.0).unwrap();
        assert_eq!(count_zeros(&sys, &r).unwrap(), 1);
    }

    #[test]
    fn roots_of_scalar_and_block_systems() {
        let sys = scalar_difference(0.5);
        let roots = find_roots(&sys, &Rectangle::new(-2.0, 1.0, -1.0, 1.0).unwrap(), 1e-12).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].re - 0.5f64.ln()).abs() < 1e-10 && roots[0].im == 0.0);

        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let blocks = DelaySystem::new(
            vec![1.0],
            vec![a],
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            PiecewisePolyKernel::zero(2, 1.0).unwrap(),
        )
        .unwrap();
        let roots = find_roots(&blocks, &Rectangle::new(-2.0, 1.0, -1.0, 1.0).unwrap(), 1e-12).unwrap();
        let mut re: Vec<f64> = roots.iter().map(|r| r.re).collect();
        re.sort_by(f64::total_cmp);
        assert_eq!(re.len(), 2);
        assert!((re[0] - 0.5f64.ln()).abs() < 1e-10);
        assert!((re[1] - 2.0f64.ln()).abs() < 1e-10);

        let id = DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap();
        assert!(find_roots(&id, &Rectangle::new(-1.0, 1.0, -1.0, 1.0).unwrap(), 1e-12).unwrap().is_empty());
    }

    #[test]
    fn conjugate_pairs_are_exact() {
        let sys = scalar_pi();
        let roots = find_roots(&sys, &Rectangle::new(-3.0, 3.0, -12.0, 12.0).unwrap(), 1e-10).unwrap();
        assert!(!roots.is_empty());
        for r in &roots {
            assert!(roots.iter().any(|q| q.re == r.re && q.im == -r.im));
            assert!(r.abs_det <= 1e-10 * det_scale(&sys, r.p()));
        }
    }

    #[test]
    fn rank_tolerance_is_validated() {
        let sys = scalar_difference(0.5);
        let r = Rectangle::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        assert!(check_controllability(&sys, &r, 0.0).is_err());
        assert!(check_controllability(&sys, &r, 1.5).is_err());
    }
}
