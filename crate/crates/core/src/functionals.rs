//! Weighted functionals of a solution along its trajectory:
//!
//! ```text
//! G_β(t) = ∫ |u(x,t)|^p Φ_β(x,t) dx,
//! H_β(t) = ∫₀ᵗ (t−s)(2+s) G_β(s) ds,
//! J_β(t) = ∫₀ᵗ (2+s)^{−3} H_β(s) ds,
//! ```
//!
//! the data moments `E_{β,0}`, `E_{β,1}`, the identity
//! `(2+t)² J_β(t) = ½∫₀ᵗ (t−s)² G_β(s) ds`, and the effective constant in the
//! upper bound for `εE_{β,0} + εE_{β,1}t + ∫₀ᵗ(t−s)G_β(s)ds`.
//!
//! Between samples `G` is taken to be linear. All time integrals below are
//! then exact, so the identity residual measures rounding only.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::exponents::{ModelParams, ProofParams, Region};
use crate::quad::tanh_sinh;
use crate::solver::{default_threshold, run_observed, GridSpec, RadialField, RunOptions, Shape, SimResult};
use crate::special::sphere_area;
use crate::testfn::{phi, TestFunctionSpec};

/// Largest effective constant accepted by [`check_base2_chain`].
pub const C_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalTrace {
    pub beta: f64,
    pub times: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
    #[serde(rename = "J")]
    pub j: Vec<f64>,
    /// `|(2+t)²J − ½∫(t−s)²G| / (1 + ½∫(t−s)²G)` at each sample.
    pub identity_residual: Vec<f64>,
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "Lp_norm")]
    pub lp_norm: Vec<f64>,
    acc: Accumulators,
}

/// Running integrals `∫(2+s)G`, `∫s(2+s)G` and `∫s^k G` for k = 0, 1, 2.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Accumulators {
    a: f64,
    b: f64,
    m: [f64; 3],
}

impl FunctionalTrace {
    pub fn new(beta: f64, e0: f64, e1: f64) -> Self {
        Self {
            beta,
            times: Vec::new(),
            g: Vec::new(),
            h: Vec::new(),
            j: Vec::new(),
            identity_residual: Vec::new(),
            e0,
            e1,
            lp_norm: Vec::new(),
            acc: Accumulators::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `½∫₀ᵗ(t−s)²G(s)ds` at the last sample, from the moment accumulators.
    fn identity_rhs(&self, t: f64) -> f64 {
        let [m0, m1, m2] = self.acc.m;
        0.5 * (t * t * m0 - 2.0 * t * m1 + m2)
    }
}

/// Appends `(t, G)` and the matching `‖u(t)‖_{L^p}`; the first sample fixes the time origin.
pub fn accumulate(trace: &mut FunctionalTrace, t: f64, g: f64, lp_norm: f64) -> Result<()> {
    precondition(t.is_finite() && g.is_finite(), || format!("non-finite sample ({t}, {g})"))?;
    let Some(&t0) = trace.times.last() else {
        precondition(t == 0.0, || format!("first sample must be at t = 0, got {t}"))?;
        trace.times.push(t);
        trace.g.push(g);
        trace.h.push(0.0);
        trace.j.push(0.0);
        trace.identity_residual.push(0.0);
        trace.lp_norm.push(lp_norm);
        return Ok(());
    };
    if !(t > t0) {
        return Err(Error::NonMonotoneTime { prev: t0, next: t });
    }
    let g0 = *trace.g.last().unwrap();
    let (h0, j0) = (*trace.h.last().unwrap(), *trace.j.last().unwrap());
    let dt = t - t0;
    let tm = 0.5 * (t0 + t);
    let gm = 0.5 * (g0 + g);

    // Simpson's rule is exact for the cubic integrands below.
    let simpson = |f: &dyn Fn(f64, f64) -> f64| dt / 6.0 * (f(t0, g0) + 4.0 * f(tm, gm) + f(t, g));
    let a0 = trace.acc.a;
    let acc = &mut trace.acc;
    acc.a += simpson(&|s, g| (2.0 + s) * g);
    acc.b += simpson(&|s, g| s * (2.0 + s) * g);
    for (k, m) in acc.m.iter_mut().enumerate() {
        *m += simpson(&|s, g| s.powi(k as i32) * g);
    }
    let h = t * acc.a - acc.b;

    // On [t0, t], with w = 2 + s and G = a0 + a1·w, H is the quartic
    // c0 + c1 w + c3 w³ + c4 w⁴, so ∫ H w^{−3} has a closed form.
    let slope = (g - g0) / dt;
    let (w0, w1) = (2.0 + t0, 2.0 + t);
    let (ga1, ga0) = (slope, g0 - slope * w0);
    let c0 = h0 - a0 * w0 + ga0 * w0.powi(3) / 3.0 + ga1 * w0.powi(4) / 4.0;
    let c1 = a0 - ga0 * w0 * w0 / 2.0 - ga1 * w0.powi(3) / 3.0;
    let (c3, c4) = (ga0 / 6.0, ga1 / 12.0);
    let dj =
        c0 * dt * (w0 + w1) / (2.0 * w0 * w0 * w1 * w1) + c1 * dt / (w0 * w1) + c3 * dt + c4 * dt * (w0 + w1) / 2.0;

    trace.times.push(t);
    trace.g.push(g);
    trace.h.push(h);
    trace.j.push(j0 + dj);
    let rhs = trace.identity_rhs(t);
    let lhs = (2.0 + t) * (2.0 + t) * (j0 + dj);
    trace.identity_residual.push((lhs - rhs).abs() / (1.0 + rhs.abs()));
    trace.lp_norm.push(lp_norm);
    Ok(())
}

/// Largest identity residual over the stored samples.
pub fn trick_identity_residual(trace: &FunctionalTrace) -> f64 {
    trace.identity_residual.iter().copied().fold(0.0, f64::max)
}

/// `|S^{N−1}| Σ_j f(r_j) r_j^{N−1} dr` over cells where `|u_j|` exceeds the support threshold.
fn radial_sum<F: FnMut(usize, f64) -> Result<f64>>(state: &RadialField, n: u32, mut f: F) -> Result<f64> {
    let nf = n as f64;
    let threshold = default_threshold(state);
    let mut sum = 0.0;
    for j in 0..state.len() {
        if state.u[j].abs() <= threshold {
            continue;
        }
        let r = state.radius(j);
        sum += f(j, r)? * r.powf(nf - 1.0);
    }
    Ok(sphere_area(nf) * sum * state.dr)
}

/// `G_β` of one snapshot, by the midpoint rule on the staggered cells.
pub fn g_beta(snapshot: &RadialField, spec: &TestFunctionSpec, p: f64) -> Result<f64> {
    let t = snapshot.t;
    let threshold = default_threshold(snapshot);
    let support = (0..snapshot.len())
        .rev()
        .find(|&j| snapshot.u[j].abs() > threshold || snapshot.v[j].abs() > threshold)
        .map_or(0.0, |j| snapshot.radius(j));
    if support >= 2.0 + t {
        return Err(Error::SupportViolation { support, bound: 2.0 + t });
    }
    radial_sum(snapshot, spec.n, |j, r| Ok(snapshot.u[j].abs().powf(p) * phi(spec, r, t)?))
}

/// `‖u‖_{L^p(R^N)}` of a radial snapshot.
pub fn lp_norm(snapshot: &RadialField, n: u32, p: f64) -> f64 {
    radial_sum(snapshot, n, |j, _| Ok(snapshot.u[j].abs().powf(p))).map_or(f64::NAN, |s| s.powf(1.0 / p))
}

/// `E_{β,0} = ∫ f Φ_β(·,0)` and `E_{β,1} = ∫ g Φ_β(·,0) + β∫ f Φ_{β+1}(·,0) + V₀∫ (f/r) Φ_β(·,0)`,
/// for radial profiles supported in `[0, R₀]`.
pub fn data_moments<F, G>(mp: &ModelParams, spec: &TestFunctionSpec, f: F, g: G) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if mp.r0 >= 2.0 {
        return Err(Error::SupportViolation { support: mp.r0, bound: 2.0 });
    }
    let nf = mp.dim();
    let area = sphere_area(nf);
    let next = spec.with_beta(spec.beta + 1.0);
    let integral = |h: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let failure = RefCell::new(None);
        let value = tanh_sinh(
            |r| match h(r) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            0.0,
            mp.r0,
            1e-12,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(area * value?.value)
    };
    let e0 = integral(&|r| Ok(f(r) * phi(spec, r, 0.0)? * r.powf(nf - 1.0)))?;
    let g_term = integral(&|r| Ok(g(r) * phi(spec, r, 0.0)? * r.powf(nf - 1.0)))?;
    let f_next = integral(&|r| Ok(f(r) * phi(&next, r, 0.0)? * r.powf(nf - 1.0)))?;
    let f_damp = if mp.v0 == 0.0 { 0.0 } else { integral(&|r| Ok(f(r) * phi(spec, r, 0.0)? * r.powf(nf - 2.0)))? };
    Ok((e0, g_term + spec.beta * f_next + mp.v0 * f_damp))
}

/// Moments of the solver's data `(εf, εg)` with `f = g = shape`, before the factor ε.
pub fn shape_moments(mp: &ModelParams, spec: &TestFunctionSpec, shape: Shape) -> Result<(f64, f64)> {
    let r0 = mp.r0;
    data_moments(mp, spec, |r| shape.profile(r, r0), |r| shape.profile(r, r0))
}

/// Runs the solver and samples `G_β` and `‖u‖_{L^p}` every `sample_every` steps.
pub fn run_with_trace(
    mp: &ModelParams,
    grid: &GridSpec,
    opts: &RunOptions,
    spec: &TestFunctionSpec,
    sample_every: usize,
) -> Result<(SimResult, FunctionalTrace)> {
    precondition(sample_every > 0, || "sample_every must be positive".to_string())?;
    let (e0, e1) = shape_moments(mp, spec, opts.shape)?;
    let mut trace = FunctionalTrace::new(spec.beta, e0, e1);
    let mut failure = None;
    let mut step = 0usize;
    let result = run_observed(mp, grid, opts, |state| {
        let due = step.is_multiple_of(sample_every);
        step += 1;
        if !due || failure.is_some() {
            return;
        }
        let sample =
            g_beta(state, spec, mp.p).and_then(|g| accumulate(&mut trace, state.t, g, lp_norm(state, mp.n, mp.p)));
        if let Err(e) = sample {
            failure = Some(e);
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok((result, trace)),
    }
}

/// Traces `G_β` through the snapshots stored in a run; the first snapshot must be at `t = 0`.
pub fn trace_from_snapshots(run: &SimResult, spec: &TestFunctionSpec) -> Result<FunctionalTrace> {
    let (e0, e1) = shape_moments(&run.params, spec, run.shape)?;
    let mut trace = FunctionalTrace::new(spec.beta, e0, e1);
    for snap in &run.snapshots {
        let g = g_beta(snap, spec, run.params.p)?;
        accumulate(&mut trace, snap.t, g, lp_norm(snap, run.params.n, run.params.p))?;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Base2Report {
    /// Uses the logarithmic weight and drops the data terms.
    pub critical: bool,
    pub c1_eff: f64,
    pub c_cap: f64,
    pub passes: bool,
    /// Time at which the ratio LHS/RHS peaks.
    pub worst_time: f64,
    pub samples: usize,
}

/// Smallest `C₁` with `LHS(t) ≤ C₁·RHS(t)` at every stored sample, where
///
/// ```text
/// LHS = εE₀ + εE₁t + ∫₀ᵗ(t−s)G,   RHS = ‖u(t)‖(2+t)^{N/p′−β} + ∫₀ᵗ‖u(s)‖(2+s)^{N/p′−(N−1−V₀)/2−1/p′} ds
/// ```
///
/// in the power regime. On the critical curve the data terms are dropped and
/// the integrand weight becomes `(2+s)^{N/p′−β₀−1}(log(2+s))^{1/p′}`.
pub fn check_base2_chain(trace: &FunctionalTrace, mp: &ModelParams, pp: &ProofParams) -> Base2Report {
    let critical = pp.region == Region::Omega0;
    let nf = mp.dim();
    let p = mp.p;
    let inv_pp = 1.0 - 1.0 / p;
    let lead = nf * inv_pp - trace.beta;
    let weight = |s: f64| {
        let w = 2.0 + s;
        if critical {
            w.powf(nf * inv_pp - pp.beta0 - 1.0) * w.ln().powf(inv_pp)
        } else {
            w.powf(nf * inv_pp - 0.5 * (nf - 1.0 - mp.v0) - inv_pp)
        }
    };

    let mut c1: f64 = 0.0;
    let mut worst_time = 0.0;
    let mut integral = 0.0;
    let (mut m0, mut m1) = (0.0, 0.0);
    for k in 0..trace.len() {
        let t = trace.times[k];
        if k > 0 {
            let (t0, g0, g1) = (trace.times[k - 1], trace.g[k - 1], trace.g[k]);
            let dt = t - t0;
            m0 += 0.5 * dt * (g0 + g1);
            m1 += dt / 6.0 * (t0 * g0 + 2.0 * (t0 * g1 + t * g0) / 2.0 + t * g1);
            integral += 0.5 * dt * (trace.lp_norm[k - 1] * weight(t0) + trace.lp_norm[k] * weight(t));
        }
        let data = if critical { 0.0 } else { mp.eps * (trace.e0 + trace.e1 * t) };
        let lhs = data + t * m0 - m1;
        let rhs = trace.lp_norm[k] * (2.0 + t).powf(lead) + integral;
        if lhs <= 0.0 {
            continue;
        }
        let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
        if ratio > c1 {
            c1 = ratio;
            worst_time = t;
        }
    }
    Base2Report {
        critical,
        c1_eff: c1,
        c_cap: C_CAP,
        passes: c1.is_finite() && c1 <= C_CAP,
        worst_time,
        samples: trace.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::choose_proof_params;
    use crate::solver::RunStatus;

    fn trace_of(times: &[f64], g: impl Fn(f64) -> f64) -> FunctionalTrace {
        let mut tr = FunctionalTrace::new(1.0, 0.0, 0.0);
        for &t in times {
            accumulate(&mut tr, t, g(t), 0.0).unwrap();
        }
        tr
    }

    fn uniform(n: usize, t_max: f64) -> Vec<f64> {
        (0..=n).map(|k| t_max * k as f64 / n as f64).collect()
    }

    #[test]
    fn zero_g_gives_zero_functionals() {
        let tr = trace_of(&uniform(100, 5.0), |_| 0.0);
        assert!(tr.h.iter().chain(&tr.j).all(|&x| x == 0.0));
        assert_eq!(trick_identity_residual(&tr), 0.0);
    }

    #[test]
    fn constant_g_closed_forms() {
        let tr = trace_of(&uniform(10_000, 10.0), |_| 1.0);
        for k in (0..tr.len()).step_by(97) {
            let t = tr.times[k];
            let h = t * t + t.powi(3) / 6.0;
            assert!((tr.h[k] - h).abs() <= 1e-12 * h.max(1e-300), "t={t}");
            let lhs = (2.0 + t).powi(2) * tr.j[k];
            let rhs = t.powi(3) / 6.0;
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1e-300), "t={t}: {lhs} vs {rhs}");
        }
        assert!(trick_identity_residual(&tr) < 1e-8);
    }

    #[test]
    fn identity_for_decaying_g() {
        let tr = trace_of(&uniform(10_000, 10.0), |s| (2.0 + s).powi(-3));
        assert!(trick_identity_residual(&tr) < 1e-6);
        // J against the direct double integral of the exact G; the gap is interpolation error.
        let k = tr.len() - 1;
        let t = tr.times[k];
        let direct = tanh_sinh(
            |s| {
                let h = tanh_sinh(|r| (s - r) * (2.0 + r) * (2.0 + r).powi(-3), 0.0, s, 1e-13).unwrap().value;
                h / (2.0 + s).powi(3)
            },
            0.0,
            t,
            1e-12,
        )
        .unwrap()
        .value;
        assert!((tr.j[k] - direct).abs() < 1e-6 * direct, "{} {direct}", tr.j[k]);
    }

    #[test]
    fn accumulate_rejects_bad_times() {
        let mut tr = FunctionalTrace::new(1.0, 0.0, 0.0);
        assert!(accumulate(&mut tr, 0.5, 1.0, 0.0).is_err());
        accumulate(&mut tr, 0.0, 1.0, 0.0).unwrap();
        accumulate(&mut tr, 1.0, 1.0, 0.0).unwrap();
        assert!(matches!(accumulate(&mut tr, 1.0, 1.0, 0.0), Err(Error::NonMonotoneTime { .. })));
    }

    #[test]
    fn g_beta_matches_quadrature_oracle() {
        let spec = TestFunctionSpec::new(0.5, 3, 0.5).unwrap();
        let mp = ModelParams::new(3, 0.5, 2.0, 0.3, 1.0).unwrap();
        let grid = GridSpec::for_model(&mp, 1.0 / 400.0, 0.5, 1.0).unwrap();
        let mut field = crate::solver::initial_data(&mp, &grid, Shape::Bump).unwrap();
        field.t = 0.7;
        let g = g_beta(&field, &spec, mp.p).unwrap();
        let oracle = sphere_area(3.0)
            * tanh_sinh(
                |r| (0.3 * Shape::Bump.profile(r, 1.0)).powf(2.0) * phi(&spec, r, 0.7).unwrap() * r * r,
                0.0,
                1.0,
                1e-13,
            )
            .unwrap()
            .value;
        assert!((g - oracle).abs() < 1e-8 * oracle, "{g} {oracle}");

        let mut doubled = field.clone();
        doubled.u.iter_mut().for_each(|x| *x *= 2.0);
        let g2 = g_beta(&doubled, &spec, mp.p).unwrap();
        assert!((g2 - 4.0 * g).abs() < 1e-12 * g2);

        let zero = RadialField::zeros(field.len(), field.dr);
        assert_eq!(g_beta(&zero, &spec, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn data_moment_examples() {
        let mp = ModelParams::new(3, 0.5, 2.0, 0.1, 1.0).unwrap();
        let spec = TestFunctionSpec::new(0.5, 3, 0.5).unwrap();
        let bump = |r: f64| Shape::Bump.profile(r, 1.0);
        let (e0, e1) = data_moments(&mp, &spec, |_| 0.0, bump).unwrap();
        assert_eq!(e0, 0.0);
        assert!(e1 > 0.0);

        let mp0 = ModelParams { v0: 0.0, ..mp };
        let spec0 = TestFunctionSpec::new(0.5, 3, 0.0).unwrap();
        let (e0, e1) = data_moments(&mp0, &spec0, bump, |_| 0.0).unwrap();
        let next = data_moments(&mp0, &spec0.with_beta(1.5), bump, |_| 0.0).unwrap().0;
        assert!(e0 > 0.0);
        assert!((e1 - 0.5 * next).abs() < 1e-14 * e1);

        // Oracle: composite Simpson on a fine uniform grid.
        let (e0, e1) = data_moments(&mp, &spec, bump, bump).unwrap();
        let simpson = |h: &dyn Fn(f64) -> f64| {
            let n = 20_000;
            let dx = 1.0 / n as f64;
            let mut s = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += w * h(k as f64 * dx);
            }
            4.0 * std::f64::consts::PI * s * dx / 3.0
        };
        let phi0 = |b: f64, r: f64| phi(&spec.with_beta(b), r, 0.0).unwrap();
        let o0 = simpson(&|r| bump(r) * phi0(0.5, r) * r * r);
        let o1 =
            o0 + 0.5 * simpson(&|r| bump(r) * phi0(1.5, r) * r * r) + 0.5 * simpson(&|r| bump(r) * phi0(0.5, r) * r);
        assert!((e0 - o0).abs() < 1e-8 * o0 && (e1 - o1).abs() < 1e-8 * o1, "{e0} {o0} {e1} {o1}");

        let far = ModelParams { r0: 2.0, ..mp };
        assert!(matches!(data_moments(&far, &spec, bump, bump), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn solver_traces_are_monotone_and_satisfy_identity() {
        let mp = ModelParams::new(3, 0.0, 2.0, 0.5, 1.0).unwrap();
        let pp = choose_proof_params(&mp, 0.01).unwrap();
        let spec = TestFunctionSpec::new(pp.beta, 3, 0.0).unwrap();
        let grid = GridSpec::for_model(&mp, 0.02, 0.5, 6.0).unwrap();
        let (res, tr) = run_with_trace(&mp, &grid, &RunOptions::default(), &spec, 5).unwrap();
        assert_eq!(res.status, RunStatus::Completed);
        assert!(tr.len() > 50);
        assert!(tr.g.iter().all(|&g| g >= 0.0));
        assert!(tr.h.windows(2).all(|w| w[1] >= w[0]) && tr.j.windows(2).all(|w| w[1] >= w[0]));
        assert!(trick_identity_residual(&tr) < 1e-6);
        assert!(tr.e0 > 0.0 && tr.e1 > 0.0);
        let report = check_base2_chain(&tr, &mp, &pp);
        assert!(report.passes && report.c1_eff > 0.0, "{report:?}");
    }

    #[test]
    fn zero_data_chain_is_trivial() {
        let mp = ModelParams::new(3, 0.0, 2.0, 0.0, 1.0).unwrap();
        let pp = choose_proof_params(&mp, 0.01).unwrap();
        let spec = TestFunctionSpec::new(pp.beta, 3, 0.0).unwrap();
        let grid = GridSpec::for_model(&mp, 0.05, 0.5, 2.0).unwrap();
        let (_, tr) = run_with_trace(&mp, &grid, &RunOptions::default(), &spec, 1).unwrap();
        assert_eq!(trick_identity_residual(&tr), 0.0);
        let report = check_base2_chain(&tr, &mp, &pp);
        assert!(report.passes);
        assert_eq!(report.c1_eff, 0.0);
    }
}
