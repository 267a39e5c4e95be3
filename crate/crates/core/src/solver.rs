//! Radially symmetric finite differences for
//!
//! ```text
//! ∂ₜ²u − ∂_r²u − (N−1)/r ∂_r u + (V₀/r) ∂ₜu = |u|^p,   u(0) = εf, ∂ₜu(0) = εg.
//! ```
//!
//! Cells are staggered, `r_j = (j+½)dr`, so the damping coefficient is never
//! evaluated on the axis. The Laplacian is written in flux form with shell
//! volumes as weights, which makes it exact on quadratics up to the first cell.
//! Time stepping is a kick-drift-kick splitting: the drift `u' = v` and the
//! kick `v' = −(V₀/r)v + Lu + |u|^p` (with `u` frozen) are both solved exactly,
//! so the scheme is second order and the damping factor stays in `(0, 1]`
//! however small `r_j` is.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::exponents::ModelParams;

/// Default Courant number `dt/dr`.
pub const DEFAULT_CFL: f64 = 0.5;
/// Sup-norm level at which a run is declared to have blown up.
pub const U_BLOW: f64 = 1e6;
/// Above this sup norm, repeated decreases signal an unstable discretization.
pub const UNSTABLE_LEVEL: f64 = 1e3;
const UNSTABLE_DECREASES: usize = 3;
pub const MIN_SUPPORT_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dr: f64,
    pub r_max: f64,
    pub dt: f64,
    pub t_max: f64,
}

impl GridSpec {
    pub fn new(dr: f64, r_max: f64, dt: f64, t_max: f64) -> Result<Self> {
        let g = Self { dr, r_max, dt, t_max };
        g.validate()?;
        Ok(g)
    }

    /// Grid whose outer edge sits a few cells beyond `R₀ + t_max`, with `dt`
    /// shrunk just enough that an integer number of steps reaches `t_max`.
    pub fn for_model(mp: &ModelParams, dr: f64, cfl: f64, t_max: f64) -> Result<Self> {
        precondition(dr > 0.0 && dr.is_finite(), || format!("dr must be positive, got {dr}"))?;
        precondition(cfl > 0.0 && cfl <= 1.0, || format!("cfl must lie in (0, 1], got {cfl}"))?;
        precondition(t_max > 0.0 && t_max.is_finite(), || format!("t_max must be positive, got {t_max}"))?;
        let steps = (t_max / (cfl * dr)).ceil().max(1.0);
        let r_max = mp.r0 + t_max + 4.0 * dr;
        Self::new(dr, r_max, t_max / steps, t_max)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { dr, r_max, dt, t_max } = *self;
        precondition(dr > 0.0 && dr.is_finite(), || format!("dr must be positive, got {dr}"))?;
        precondition(dt > 0.0 && dt.is_finite(), || format!("dt must be positive, got {dt}"))?;
        precondition(t_max > 0.0 && t_max.is_finite(), || format!("t_max must be positive, got {t_max}"))?;
        precondition(r_max > dr && r_max.is_finite(), || format!("r_max must exceed dr, got {r_max}"))?;
        precondition(dt <= dr * (1.0 + 1e-12), || format!("dt = {dt} violates dt <= dr = {dr}"))?;
        Ok(())
    }

    /// Requires `r_max ≥ R₀ + t_max` so the outer boundary is never reached.
    pub fn check_domain(&self, r0: f64) -> Result<()> {
        precondition(self.r_max >= r0 + self.t_max, || {
            format!("r_max = {} is smaller than R0 + t_max = {}", self.r_max, r0 + self.t_max)
        })
    }

    pub fn cells(&self) -> usize {
        (self.r_max / self.dr).ceil() as usize
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil() as usize
    }

    pub fn cfl(&self) -> f64 {
        self.dt / self.dr
    }

    /// Same domain and horizon with `dr` and `dt` halved.
    pub fn halved(&self) -> Self {
        Self { dr: 0.5 * self.dr, dt: 0.5 * self.dt, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `exp(−1/(1 − (r/R₀)²))` inside the ball.
    #[default]
    Bump,
    /// `(1 + cos(πr/R₀))/2` inside the ball.
    TruncatedCosine,
}

impl Shape {
    pub fn profile(&self, r: f64, r0: f64) -> f64 {
        let x = r / r0;
        if !(x < 1.0) {
            return 0.0;
        }
        match self {
            Shape::Bump => (-1.0 / (1.0 - x * x)).exp(),
            Shape::TruncatedCosine => 0.5 * (1.0 + (std::f64::consts::PI * x).cos()),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bump" => Ok(Shape::Bump),
            "truncated_cosine" | "truncated-cosine" => Ok(Shape::TruncatedCosine),
            other => Err(Error::InvalidConfig(format!("unknown shape {other:?}"))),
        }
    }
}

/// `u` and `∂ₜu` on the staggered cells at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialField {
    pub t: f64,
    pub dr: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl RadialField {
    pub fn zeros(cells: usize, dr: f64) -> Self {
        Self { t: 0.0, dr, u: vec![0.0; cells], v: vec![0.0; cells] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn radius(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dr
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// `|S^{N−1}|`-free energy `Σ (v_j² + ((u_{j+1}−u_j)/dr)²) · volume`, with
    /// the gradient living on the faces.
    pub fn energy(&self, n: u32) -> f64 {
        let dr = self.dr;
        let nf = n as f64;
        let mut e = 0.0;
        for j in 0..self.len() {
            let vol = shell_volume(j, nf) * dr.powf(nf);
            e += self.v[j] * self.v[j] * vol;
            let next = self.u.get(j + 1).copied().unwrap_or(0.0);
            let grad = (next - self.u[j]) / dr;
            e += grad * grad * ((j + 1) as f64 * dr).powf(nf - 1.0) * dr;
        }
        e
    }

    /// Linear interpolation between two fields on the same grid.
    fn lerp(&self, other: &Self, t: f64) -> Self {
        let w = if other.t > self.t { (t - self.t) / (other.t - self.t) } else { 0.0 };
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect();
        Self { t, dr: self.dr, u: mix(&self.u, &other.u), v: mix(&self.v, &other.v) }
    }
}

/// `((j+1)^N − j^N)/N`: shell volume of cell `j` in units of `dr^N`, without `|S^{N−1}|`.
pub fn shell_volume(j: usize, n: f64) -> f64 {
    let j = j as f64;
    ((j + 1.0).powf(n) - j.powf(n)) / n
}

/// Data `(εf, εg)` with `f = g = shape`, sampled at the cell centres.
pub fn initial_data(mp: &ModelParams, grid: &GridSpec, shape: Shape) -> Result<RadialField> {
    mp.validate()?;
    grid.validate()?;
    let covering = (mp.r0 / grid.dr).floor() as usize;
    if covering < MIN_SUPPORT_CELLS {
        return Err(Error::GridTooCoarse { cells: covering });
    }
    let mut field = RadialField::zeros(grid.cells(), grid.dr);
    for j in 0..field.len() {
        let value = mp.eps * shape.profile(field.radius(j), mp.r0);
        field.u[j] = value;
        field.v[j] = value;
    }
    Ok(field)
}

/// Largest cell radius where `|u|` or `|v|` exceeds `threshold`; 0 for the zero field.
pub fn support_radius(state: &RadialField, threshold: f64) -> f64 {
    (0..state.len())
        .rev()
        .find(|&j| state.u[j].abs() > threshold || state.v[j].abs() > threshold)
        .map_or(0.0, |j| state.radius(j))
}

/// `1e−12 · max(1, max|u|)`.
pub fn default_threshold(state: &RadialField) -> f64 {
    1e-12 * state.sup_norm().max(1.0)
}

/// Precomputed stencil and damping factors for one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    dt: f64,
    p: f64,
    nonlinear: bool,
    /// Flux coefficients to the outer and inner neighbour.
    c_out: Vec<f64>,
    c_in: Vec<f64>,
    /// Exact half-step kick: `v ← decay·v + gain·force`.
    decay: Vec<f64>,
    gain: Vec<f64>,
}

impl Stepper {
    pub fn new(mp: &ModelParams, grid: &GridSpec, nonlinear: bool) -> Self {
        let cells = grid.cells();
        let nf = mp.dim();
        let dr2 = grid.dr * grid.dr;
        let half = 0.5 * grid.dt;
        let mut c_out = Vec::with_capacity(cells);
        let mut c_in = Vec::with_capacity(cells);
        let mut decay = Vec::with_capacity(cells);
        let mut gain = Vec::with_capacity(cells);
        for j in 0..cells {
            let w = shell_volume(j, nf) * dr2;
            c_out.push(((j + 1) as f64).powf(nf - 1.0) / w);
            c_in.push(if j == 0 { 0.0 } else { (j as f64).powf(nf - 1.0) / w });
            let x = mp.v0 / ((j as f64 + 0.5) * grid.dr) * half;
            decay.push((-x).exp());
            gain.push(if x == 0.0 { half } else { -(-x).exp_m1() / x * half });
        }
        Self { dt: grid.dt, p: mp.p, nonlinear, c_out, c_in, decay, gain }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `Lu + |u|^p` on cells `lo..hi`; cells at or beyond `u.len()` are zero.
    fn force(&self, u: &[f64], lo: usize, hi: usize, out: &mut [f64]) {
        let n = u.len();
        let at = |j: usize| if j < n { u[j] } else { 0.0 };
        let mut cell = |j: usize, prev: f64, here: f64, next: f64| {
            let mut f = self.c_out[j] * (next - here) - self.c_in[j] * (here - prev);
            if self.nonlinear {
                let a = here.abs();
                f += if self.p == 2.0 { a * a } else { a.powf(self.p) };
            }
            out[j] = f;
        };
        if lo >= hi {
            return;
        }
        if lo == 0 {
            cell(0, 0.0, at(0), at(1));
        }
        let inner_lo = lo.max(1);
        let inner_hi = hi.min(n.saturating_sub(1));
        if inner_lo < inner_hi {
            let window = &u[inner_lo - 1..=inner_hi];
            for (k, w) in window.windows(3).enumerate() {
                cell(inner_lo + k, w[0], w[1], w[2]);
            }
        }
        for j in inner_hi.max(inner_lo)..hi {
            cell(j, at(j - 1), at(j), at(j + 1));
        }
    }

    /// One full step on cells `0..active`, reusing and refreshing `force`.
    /// Returns `max|u|` over the active cells, or NaN if any value is non-finite.
    ///
    /// The first kick and the drift run one cell ahead of the force evaluation
    /// and second kick, so the whole step is a single sweep.
    fn advance(&self, state: &mut RadialField, force: &mut [f64], active: usize) -> f64 {
        let p = self.p;
        match (self.nonlinear, p == 2.0) {
            (false, _) => self.sweep(state, force, active, |_| 0.0),
            (true, true) => self.sweep(state, force, active, |u| u * u),
            (true, false) => self.sweep(state, force, active, |u| u.abs().powf(p)),
        }
    }

    fn sweep<S: Fn(f64) -> f64>(&self, state: &mut RadialField, force: &mut [f64], active: usize, source: S) -> f64 {
        let (u, v) = (&mut state.u[..], &mut state.v[..]);
        let n = u.len();
        let active = active.min(n);
        state.t += self.dt;
        if active == 0 {
            return 0.0;
        }
        let (decay, gain) = (&self.decay[..n], &self.gain[..n]);
        let (c_out, c_in) = (&self.c_out[..n], &self.c_in[..n]);
        let force = &mut force[..n];
        let dt = self.dt;
        v[0] = decay[0] * v[0] + gain[0] * force[0];
        u[0] += dt * v[0];
        let mut sup = 0.0f64;
        // Any NaN or infinity survives into the running sum.
        let mut sum = 0.0;
        let mut prev = 0.0;
        for j in 0..active {
            let next = if j + 1 < active {
                v[j + 1] = decay[j + 1] * v[j + 1] + gain[j + 1] * force[j + 1];
                u[j + 1] += dt * v[j + 1];
                u[j + 1]
            } else if j + 1 < n {
                u[j + 1]
            } else {
                0.0
            };
            let here = u[j];
            let f = c_out[j] * (next - here) - c_in[j] * (here - prev) + source(here);
            force[j] = f;
            v[j] = decay[j] * v[j] + gain[j] * f;
            sum += here + v[j];
            sup = sup.max(here.abs());
            prev = here;
        }
        if sum.is_finite() {
            sup
        } else {
            f64::NAN
        }
    }
}

/// One step of the scheme over the whole grid.
pub fn step(state: &RadialField, grid: &GridSpec, mp: &ModelParams) -> RadialField {
    step_with(state, &Stepper::new(mp, grid, true))
}

pub fn step_with(state: &RadialField, stepper: &Stepper) -> RadialField {
    let mut next = state.clone();
    let n = next.len();
    let mut force = vec![0.0; n];
    stepper.force(&next.u, 0, n, &mut force);
    stepper.advance(&mut next, &mut force, n);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Blowup,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub shape: Shape,
    pub snapshot_times: Vec<f64>,
    /// Repeat on the halved grid and Richardson-combine the blowup times.
    pub refine: bool,
    /// `false` drops `|u|^p`, leaving the damped linear wave equation.
    pub nonlinear: bool,
    pub u_blow: f64,
    /// Keep cells whose inner face lies beyond `R₀ + t` at zero. Without it the
    /// explicit stencil leaks a dispersive precursor ahead of the light cone.
    pub light_cone: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            shape: Shape::Bump,
            snapshot_times: Vec::new(),
            refine: false,
            nonlinear: true,
            u_blow: U_BLOW,
            light_cone: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub shape: Shape,
    pub status: RunStatus,
    /// Richardson-combined when refinement ran, otherwise the base-grid crossing time.
    pub lifespan_estimate: Option<f64>,
    pub lifespan_coarse: Option<f64>,
    pub lifespan_fine: Option<f64>,
    pub sup_norm_trace: Vec<(f64, f64)>,
    pub support_trace: Vec<(f64, f64)>,
    pub snapshots: Vec<RadialField>,
}

impl SimResult {
    /// Largest `support(t) − (R₀ + t)` over the trace, in units of `dr`.
    pub fn propagation_excess(&self) -> f64 {
        self.support_trace
            .iter()
            .map(|&(t, s)| (s - self.params.r0 - t) / self.grid.dr)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn run(mp: &ModelParams, grid: &GridSpec, opts: &RunOptions) -> Result<SimResult> {
    run_observed(mp, grid, opts, |_| {})
}

/// Like [`run`], calling `observer` on the base-grid state at `t = 0` and after every step.
pub fn run_observed<F: FnMut(&RadialField)>(
    mp: &ModelParams,
    grid: &GridSpec,
    opts: &RunOptions,
    mut observer: F,
) -> Result<SimResult> {
    grid.check_domain(mp.r0)?;
    let base = integrate(mp, grid, opts, &mut observer)?;
    let mut result = SimResult {
        params: *mp,
        grid: *grid,
        shape: opts.shape,
        status: base.status,
        lifespan_estimate: base.crossing,
        lifespan_coarse: base.crossing,
        lifespan_fine: None,
        sup_norm_trace: base.sup_norm_trace,
        support_trace: base.support_trace,
        snapshots: base.snapshots,
    };
    if opts.refine && base.status == RunStatus::Blowup {
        let fine_opts = RunOptions { snapshot_times: Vec::new(), ..opts.clone() };
        let fine = integrate(mp, &grid.halved(), &fine_opts, &mut |_| {})?;
        result.lifespan_fine = fine.crossing;
        if let (Some(tc), Some(tf)) = (base.crossing, fine.crossing) {
            result.lifespan_estimate = Some((4.0 * tf - tc) / 3.0);
        }
    }
    Ok(result)
}

struct Integration {
    status: RunStatus,
    crossing: Option<f64>,
    sup_norm_trace: Vec<(f64, f64)>,
    support_trace: Vec<(f64, f64)>,
    snapshots: Vec<RadialField>,
}

fn integrate(
    mp: &ModelParams,
    grid: &GridSpec,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&RadialField),
) -> Result<Integration> {
    let stepper = Stepper::new(mp, grid, opts.nonlinear);
    let mut state = initial_data(mp, grid, opts.shape)?;
    let cells = state.len();
    let mut snapshot_times: Vec<f64> = opts.snapshot_times.iter().copied().filter(|&t| t >= 0.0).collect();
    snapshot_times.sort_by(f64::total_cmp);
    let mut next_snapshot = 0;
    let mut snapshots = Vec::new();

    // Beyond `active` the field is exactly zero; the stencil widens it by one
    // cell per step, the light cone by `dt/dr` cells.
    let stencil0 = (0..cells).rev().find(|&j| state.u[j] != 0.0 || state.v[j] != 0.0).map_or(1, |j| j + 2);
    let cone_active = |n: usize| ((mp.r0 + n as f64 * grid.dt) / grid.dr).floor() as usize + 1;
    let active_at = |n: usize, stencil: usize| {
        let a = if opts.light_cone { stencil.min(cone_active(n)) } else { stencil };
        a.min(cells)
    };
    let mut active = active_at(0, stencil0);
    let mut force = vec![0.0; cells];
    stepper.force(&state.u, 0, active, &mut force);

    let mut sup = state.sup_norm();
    let mut sup_norm_trace = vec![(0.0, sup)];
    let mut support_trace = vec![(0.0, support_radius(&state, default_threshold(&state)))];
    observer(&state);
    while next_snapshot < snapshot_times.len() && snapshot_times[next_snapshot] <= 0.0 {
        snapshots.push(RadialField { t: snapshot_times[next_snapshot], ..state.clone() });
        next_snapshot += 1;
    }

    let mut decreases = 0usize;
    let y_exp = -0.5 * (mp.p - 1.0);
    for n in 1..=grid.steps() {
        let target = n as f64 * grid.dt;
        let prev = (next_snapshot < snapshot_times.len() && snapshot_times[next_snapshot] <= target + 1e-9 * grid.dt)
            .then(|| state.clone());
        let widened = active_at(n, stencil0 + n);
        stepper.force(&state.u, active, widened, &mut force);
        active = widened;
        let new_sup = stepper.advance(&mut state, &mut force, active);
        state.t = target;
        let t = state.t;

        if new_sup.is_nan() {
            sup_norm_trace.push((t, f64::INFINITY));
            return Ok(Integration {
                status: RunStatus::Blowup,
                crossing: Some(t),
                sup_norm_trace,
                support_trace,
                snapshots,
            });
        }
        if sup > UNSTABLE_LEVEL && new_sup < sup {
            decreases += 1;
            if decreases >= UNSTABLE_DECREASES {
                sup_norm_trace.push((t, new_sup));
                return Ok(Integration {
                    status: RunStatus::Unstable,
                    crossing: None,
                    sup_norm_trace,
                    support_trace,
                    snapshots,
                });
            }
        }
        sup_norm_trace.push((t, new_sup));
        if new_sup >= opts.u_blow {
            // Near blowup m ~ (T − t)^{−2/(p−1)}, so m^{−(p−1)/2} is close to linear in t.
            let (y0, y1, yb) = (sup.powf(y_exp), new_sup.powf(y_exp), opts.u_blow.powf(y_exp));
            let frac = if y0 > y1 { ((y0 - yb) / (y0 - y1)).clamp(0.0, 1.0) } else { 1.0 };
            let crossing = t - stepper.dt() + frac * stepper.dt();
            return Ok(Integration {
                status: RunStatus::Blowup,
                crossing: Some(crossing),
                sup_norm_trace,
                support_trace,
                snapshots,
            });
        }
        sup = new_sup;
        let threshold = 1e-12 * sup.max(1.0);
        let support = (0..active)
            .rev()
            .find(|&j| state.u[j].abs() > threshold || state.v[j].abs() > threshold)
            .map_or(0.0, |j| state.radius(j));
        support_trace.push((t, support));
        if let Some(prev) = prev {
            while next_snapshot < snapshot_times.len() && snapshot_times[next_snapshot] <= t + 1e-9 * grid.dt {
                snapshots.push(prev.lerp(&state, snapshot_times[next_snapshot].min(t)));
                next_snapshot += 1;
            }
        }
        observer(&state);
    }
    Ok(Integration { status: RunStatus::Completed, crossing: None, sup_norm_trace, support_trace, snapshots })
}
