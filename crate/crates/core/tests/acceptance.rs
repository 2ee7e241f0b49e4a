//! Acceptance suite: ten numbered criteria, one PASS/FAIL line each.
//! Runs as a plain binary so the lines are always shown; exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ddec_core::freq::{check_controllability, count_zeros, det_scale, find_roots, Outcome, Rectangle};
use ddec_core::fundamental::{control_grid, fundamental_solution, input_map_from};
use ddec_core::measure::{build_qp, impulse_response, invert_q, measure_step};
use ddec_core::simulator::{solve_ivp, state_segment};
use ddec_core::synthesis::{residual_curve, SynthesisOptions};
use ddec_core::{char_eval, DelaySystem, GridFunction, PiecewisePolyKernel, C64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    pass: bool,
    detail: String,
}

fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn scalar_pi(g: f64) -> DelaySystem {
    DelaySystem::new(vec![1.0, PI], vec![s(0.3), s(0.2)], s(1.0), PiecewisePolyKernel::constant(s(g), PI).unwrap())
        .unwrap()
}

fn rank_deficient() -> DelaySystem {
    DelaySystem::new(
        vec![1.0, 2.0],
        vec![DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0])],
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        PiecewisePolyKernel::zero(2, 2.0).unwrap(),
    )
    .unwrap()
}

fn decoupled() -> DelaySystem {
    DelaySystem::new(
        vec![1.0],
        vec![DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.5])],
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        PiecewisePolyKernel::zero(2, 1.0).unwrap(),
    )
    .unwrap()
}

/// Smooth random function: constant plus three random sinusoids per component.
fn random_smooth(rng: &mut ChaCha8Rng, dim: usize) -> impl Fn(f64) -> DVector<f64> {
    let coef: Vec<[f64; 7]> = (0..dim)
        .map(|_| {
            let mut c = [0.0; 7];
            c.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            c
        })
        .collect();
    move |t| {
        DVector::from_iterator(
            coef.len(),
            coef.iter().map(|c| {
                c[0] + c[1] * (t + c[2]).sin() + c[3] * (2.0 * t + c[4]).sin() + c[5] * (3.0 * t + c[6]).sin()
            }),
        )
    }
}

fn phi_grid(system: &DelaySystem, h: f64, f: impl Fn(f64) -> DVector<f64>) -> GridFunction {
    GridFunction::sample_interval(-system.max_delay(), 0.0, h, system.dim(), f).unwrap()
}

fn criterion_1() -> Report {
    let sys = DelaySystem::new(vec![1.0], vec![s(0.0)], s(1.0), PiecewisePolyKernel::zero(1, 1.0).unwrap()).unwrap();
    let h = 1e-3;
    let phi = phi_grid(&sys, h, |_| DVector::zeros(1));
    let u = GridFunction::sample_interval(0.0, 5.0, h, 1, |t| DVector::from_element(1, t.sin())).unwrap();
    let traj = solve_ivp(&sys, &phi, Some(&u), 5.0, h).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=5000 {
        worst = worst.max((traj.at_node(k)[0] - u.node(k)[0]).abs());
    }
    Report { pass: worst <= 1e-12, detail: format!("max |x(t_k) - u(t_k)| = {worst:.3e} (limit 1e-12)") }
}

/// `(sup, L²)` gap between the direct solve and `U(T)φ + E(T)u` at time 4.
/// With `compatible`, the random control is shifted so that `u(0) = 0`.
fn representation_gap(h: f64) -> f64 {
    let sys = scalar_pi(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let phi_f = random_smooth(&mut rng, 1);
    let u_f = random_smooth(&mut rng, 1);
    let horizon = 4.0;
    let phi = phi_grid(&sys, h, &phi_f);
    let u = GridFunction::sample_interval(0.0, horizon, h, 1, u_f).unwrap();
    let direct = state_segment(&solve_ivp(&sys, &phi, Some(&u), horizon, h).unwrap(), horizon).unwrap();
    let free = state_segment(&solve_ivp(&sys, &phi, None, horizon, h).unwrap(), horizon).unwrap();
    let (cells, hu) = control_grid(horizon, h).unwrap();
    let fund = fundamental_solution(&sys, horizon, hu).unwrap();
    // the h/2 map has about 5e7 entries, above the default budget
    let forced = input_map_from(&sys, &fund, cells, 60_000_000).unwrap().apply(&u).unwrap();
    direct.sub(&free).unwrap().sub(&forced).unwrap().sup_norm()
}

fn criterion_2() -> Report {
    let g1 = representation_gap(1e-3);
    let g2 = representation_gap(5e-4);
    let factor = g1 / g2;
    Report {
        pass: g1 <= 5e-3 && factor >= 1.8,
        detail: format!("sup gap {g1:.3e} at h=1e-3 (limit 5e-3), {g2:.3e} at h=5e-4, factor {factor:.2} (limit 1.8)"),
    }
}

fn criterion_3() -> Report {
    let sys = scalar_pi(1.0);
    let (q, _) = build_qp(&sys, 1e-3).unwrap();
    let (_, rep) = invert_q(&q, 2.0 * PI, 1e-8).unwrap();
    Report {
        pass: rep.atom_defect <= 1e-6 && rep.density_defect_l1 <= 1e-3,
        detail: format!(
            "atom defect {:.3e} (limit 1e-6), density defect L1 {:.3e} (limit 1e-3)",
            rep.atom_defect, rep.density_defect_l1
        ),
    }
}

fn criterion_4() -> Report {
    let sys = scalar_pi(1.0);
    let h = 1e-3;
    let window = 2.0 * PI;
    let hs = measure_step(&sys, h);
    let (q, p) = build_qp(&sys, h).unwrap();
    // two extra cells so the comparison interval stays clear of the truncation edge
    let (qinv, _) = invert_q(&q, window + 2.0 * hs, 1e-10).unwrap();
    let full = impulse_response(&sys, &qinv, &p).unwrap();
    let imp = full.truncated(f64::NEG_INFINITY, window);
    let fund = fundamental_solution(&sys, window, hs).unwrap();
    let b = sys.input_matrix();
    let fa = fund.atoms();
    let ia = imp.atoms();
    let mut loc = 0.0f64;
    let mut weight = 0.0f64;
    let paired = fa.len() == ia.len();
    for (a, (x, w)) in fa.iter().zip(ia) {
        loc = loc.max((a.tau - x).abs());
        weight = weight.max((&a.jump * b - w).amax());
    }
    let dens = full.density_on_grid(hs).unwrap().unwrap();
    let c = fund.density();
    let n = (window / hs).round() as usize;
    let mut l1 = 0.0;
    for k in 0..=n {
        let t = (k as f64 * hs).min(window);
        let wk = if k == 0 || k == n { 0.5 * hs } else { hs };
        let diff = dens.eval(t) - c.eval(t) * b[(0, 0)];
        l1 += wk * diff.norm();
    }
    Report {
        pass: paired && loc <= 1e-10 && weight <= 1e-8 && l1 <= 1e-3,
        detail: format!(
            "{} vs {} atoms, location err {loc:.3e} (limit 1e-10), weight err {weight:.3e} (limit 1e-8), density L1 {l1:.3e} (limit 1e-3)",
            fa.len(),
            ia.len()
        ),
    }
}

fn criterion_5() -> Report {
    let sys = scalar_pi(1.0);
    let rect = Rectangle::default_for(&sys, None, None, None).unwrap();
    let v = check_controllability(&sys, &rect, 1e-8).unwrap();
    let min_margin = v.margins.min_root_margin.unwrap_or(f64::INFINITY);
    let pass = v.outcome == Outcome::ControllableUpToRegion
        && min_margin > 1e-4
        && (v.time_bound - 2.0 * PI).abs() <= 1e-12
        && v.unresolved_roots == 0;
    Report {
        pass,
        detail: format!(
            "{} with {} roots, min root margin {min_margin:.3e} (limit 1e-4), time bound {:.15}, unresolved {}",
            v.outcome.as_str(),
            v.roots.len(),
            v.time_bound,
            v.unresolved_roots
        ),
    }
}

fn criterion_6() -> Report {
    let a = rank_deficient();
    let va = check_controllability(&a, &Rectangle::default_for(&a, None, None, None).unwrap(), 1e-8).unwrap();
    let b = decoupled();
    let vb = check_controllability(&b, &Rectangle::default_for(&b, None, None, None).unwrap(), 1e-8).unwrap();
    let dist = vb
        .witness
        .as_ref()
        .map(|w| (C64::new(w.re, w.im) - C64::new(0.5f64.ln(), 0.0)).norm())
        .unwrap_or(f64::INFINITY);
    let pass =
        va.outcome == Outcome::UncontrollableRankAnb && vb.outcome == Outcome::UncontrollableFrequency && dist <= 1e-6;
    Report {
        pass,
        detail: format!(
            "(i) {}; (ii) {} with |p* - ln 0.5| = {dist:.3e} (limit 1e-6)",
            va.outcome.as_str(),
            vb.outcome.as_str()
        ),
    }
}

fn random_difference_system(rng: &mut ChaCha8Rng) -> DelaySystem {
    let d = rng.gen_range(1..=2);
    let n = rng.gen_range(1..=2);
    let mut delays: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    delays.sort_by(f64::total_cmp);
    if n == 2 && delays[1] - delays[0] < 0.1 {
        delays[1] += 0.1;
    }
    let a = (0..n).map(|_| DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.9..0.9))).collect();
    let b = DMatrix::from_fn(d, 1, |_, _| rng.gen_range(-1.0..1.0));
    let len = delays[n - 1];
    DelaySystem::new(delays, a, b, PiecewisePolyKernel::zero(d, len).unwrap()).unwrap()
}

/// Interior strict local minima of |det H| on a uniform grid.
fn grid_minima(sys: &DelaySystem, rect: &Rectangle, step: f64) -> Vec<C64> {
    let nx = ((rect.re_max - rect.re_min) / step).round() as usize + 1;
    let ny = ((rect.im_max - rect.im_min) / step).round() as usize + 1;
    let at = |i: usize, j: usize| C64::new(rect.re_min + i as f64 * step, rect.im_min + j as f64 * step);
    let vals: Vec<f64> = (0..nx * ny).map(|k| char_eval(sys, at(k / ny, k % ny)).det.norm()).collect();
    let v = |i: usize, j: usize| vals[i * ny + j];
    let mut out = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let c = v(i, j);
            let mut is_min = true;
            for di in [-1i64, 0, 1] {
                for dj in [-1i64, 0, 1] {
                    if (di, dj) != (0, 0) && v((i as i64 + di) as usize, (j as i64 + dj) as usize) <= c {
                        is_min = false;
                    }
                }
            }
            if is_min {
                out.push(at(i, j));
            }
        }
    }
    out
}

fn criterion_7() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rect = Rectangle::new(-5.0, 2.0, -15.0, 15.0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for _ in 0..3 {
        let sys = random_difference_system(&mut rng);
        let count = count_zeros(&sys, &rect).unwrap();
        let roots = find_roots(&sys, &rect, 1e-10).unwrap();
        let refined: usize = roots.iter().filter(|r| r.resolved).map(|r| r.multiplicity).sum();
        let residual_ok = roots.iter().all(|r| r.abs_det <= 1e-10 * det_scale(&sys, r.p()));
        let minima = grid_minima(&sys, &rect, 0.01);
        let matched = minima.iter().all(|m| roots.iter().any(|r| (r.p() - m).norm() <= 0.02));
        let ok = count == refined && count == minima.len() && matched && residual_ok;
        pass &= ok;
        parts.push(format!(
            "d={} N={}: winding {count}, refined {refined}, grid minima {}",
            sys.dim(),
            sys.num_delays(),
            minima.len()
        ));
    }
    Report { pass, detail: parts.join("; ") }
}

fn random_desk_system(rng: &mut ChaCha8Rng) -> DelaySystem {
    let d = rng.gen_range(1..=2);
    let n = rng.gen_range(1..=2);
    let m = rng.gen_range(1..=d);
    let mut delays: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    delays.sort_by(f64::total_cmp);
    if n == 2 && delays[1] - delays[0] < 0.1 {
        delays[1] += 0.1;
    }
    let a = (0..n).map(|_| DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.5..0.5))).collect();
    let b = DMatrix::from_fn(d, m, |_, _| rng.gen_range(-1.0..1.0));
    let len = delays[n - 1];
    let kernel = if rng.gen_bool(0.5) {
        PiecewisePolyKernel::constant(DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3)), len).unwrap()
    } else {
        PiecewisePolyKernel::zero(d, len).unwrap()
    };
    DelaySystem::new(delays, a, b, kernel).unwrap()
}

fn criterion_8() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pass = true;
    let mut parts = Vec::new();
    for _ in 0..5 {
        let sys = random_desk_system(&mut rng);
        let f = random_smooth(&mut rng, sys.dim());
        let h = 1e-2 * sys.min_delay();
        let psi = phi_grid(&sys, h, f);
        let t_max = sys.time_bound() + sys.max_delay();
        let ts: Vec<f64> = (1..=6).map(|k| t_max * k as f64 / 6.0).collect();
        let curve = residual_curve(&sys, &psi, &ts, &SynthesisOptions::new(h)).unwrap();
        let worst_rise = curve.windows(2).map(|w| w[1].residual - w[0].residual).fold(f64::NEG_INFINITY, f64::max);
        pass &= worst_rise <= 1e-8;
        parts.push(format!(
            "d={} N={}: {:.3e} -> {:.3e}, max rise {worst_rise:.1e}",
            sys.dim(),
            sys.num_delays(),
            curve[0].residual,
            curve[curve.len() - 1].residual
        ));
    }
    Report { pass, detail: format!("{} (slack 1e-8)", parts.join("; ")) }
}

fn criterion_9() -> Report {
    let sys = decoupled();
    let h = 1e-2;
    let psi = phi_grid(&sys, h, |_| DVector::from_vec(vec![0.0, 1.0]));
    let ts = [1.0, 2.0, PI, 2.0 * PI, 3.0 * PI, 4.0 * PI];
    let mut lowest = f64::INFINITY;
    for lambda in [1e-2, 1e-6, 1e-9, 1e-12] {
        let mut opts = SynthesisOptions::new(h);
        opts.lambda = Some(lambda);
        for p in residual_curve(&sys, &psi, &ts, &opts).unwrap() {
            lowest = lowest.min(p.residual);
        }
    }
    Report {
        pass: lowest >= 0.9,
        detail: format!("smallest residual {lowest:.6} over T <= 4pi, lambda >= 1e-12 (limit 0.9)"),
    }
}

fn criterion_10() -> Report {
    let sys = scalar_pi(1.0);
    let horizon = 2.0;
    let run = |h: f64| {
        let phi = phi_grid(&sys, h, |t| DVector::from_element(1, t.cos()));
        let u = GridFunction::sample_interval(0.0, horizon, h, 1, |t| DVector::from_element(1, t.sin())).unwrap();
        solve_ivp(&sys, &phi, Some(&u), horizon, h).unwrap()
    };
    let h = 1e-3;
    let (a, b, c) = (run(h), run(h / 2.0), run(h / 4.0));
    let gap = |coarse: &ddec_core::Trajectory, fine: &ddec_core::Trajectory, n: usize| {
        (1..=n).map(|k| (coarse.at_node(k)[0] - fine.at_node(2 * k)[0]).abs()).fold(0.0, f64::max)
    };
    let e1 = gap(&a, &b, 2000);
    let e2 = gap(&b, &c, 4000);
    let factor = e1 / e2;
    Report {
        pass: factor >= 1.8,
        detail: format!("sup differences {e1:.3e} (h vs h/2), {e2:.3e} (h/2 vs h/4), factor {factor:.2} (limit 1.8)"),
    }
}

fn main() {
    // libtest-style arguments (filters, --nocapture) are accepted and ignored
    let criteria: [(&str, fn() -> Report, Duration); 10] = [
        ("memoryless exactness", criterion_1, Duration::from_secs(1)),
        ("representation formula", criterion_2, Duration::from_secs(30)),
        ("inverse defect", criterion_3, Duration::from_secs(60)),
        ("dual impulse response", criterion_4, Duration::from_secs(60)),
        ("criterion, positive instance", criterion_5, Duration::from_secs(60)),
        ("criterion, negative instances", criterion_6, Duration::from_secs(60)),
        ("root finder", criterion_7, Duration::from_secs(60)),
        ("residual monotonicity", criterion_8, Duration::from_secs(300)),
        ("unreachability floor", criterion_9, Duration::from_secs(120)),
        ("convergence order", criterion_10, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= *limit;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {:>2} {name}: {} [{:.2} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
