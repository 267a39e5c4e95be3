//! Gauss hypergeometric function ₂F₁(a, b; c; z) on `0 ≤ z < 1`.
//!
//! Two independent evaluation routes are provided:
//!
//! * the defining power series, used for `z ≤ 0.9`;
//! * Euler's integral
//!   `F = B(a, c−a)⁻¹ ∫₀¹ s^{a−1} (1−s)^{c−a−1} (1−zs)^{−b} ds`, valid for `c > a > 0`.
//!
//! The integral is split at `s = 1/2` and each half is mapped so that the
//! endpoint power becomes a constant Jacobian: `s = u^{1/a}` on the left and
//! `1 − s = w^{1/(c−a)}` on the right. The remaining integrands are bounded
//! and are handed to tanh-sinh quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::quad::tanh_sinh;

/// Largest argument for which the series route is used directly.
pub const SERIES_Z_MAX: f64 = 0.9;
pub const SERIES_MAX_TERMS: usize = 10_000;
/// Relative error target of the integral route.
pub const INTEGRAL_REL_TOL: f64 = 1e-12;

/// Parameters `(a, b, c)` of ₂F₁. `c` is never zero or a negative integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypTriple {
    a: f64,
    b: f64,
    c: f64,
}

impl HypTriple {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidTriple(format!("non-finite parameter ({a}, {b}, {c})")));
        }
        if c <= 0.0 && c == c.round() {
            return Err(Error::InvalidTriple(format!("c = {c} is zero or a negative integer")));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Whether Euler's integral applies with `a` as the integration exponent.
    pub fn euler_admissible(&self) -> bool {
        self.c > self.a && self.a > 0.0
    }

    /// The same function with `a` and `b` exchanged.
    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a, c: self.c }
    }
}

/// Stopping rule for the power series: stop once `|term| < abs + rel·|sum|`
/// and the term ratio has dropped below one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl SeriesTolerance {
    pub const DEFAULT: Self = Self { abs: 1e-15, rel: 1e-14 };
    /// Sum until the terms no longer change the result.
    pub const MACHINE: Self = Self { abs: 0.0, rel: 1e-17 };
}

impl Default for SeriesTolerance {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Rising factorial `(d)_n = d (d+1) ⋯ (d+n−1)`.
pub fn pochhammer(d: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, k| acc * (d + k as f64))
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(x: f64, y: f64) -> Result<f64> {
    precondition(x > 0.0 && y > 0.0, || format!("beta arguments must be positive, got ({x}, {y})"))?;
    Ok(ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y))
}

/// Euler Beta function, evaluated in the log domain.
pub fn beta_fn(x: f64, y: f64) -> Result<f64> {
    ln_beta(x, y).map(f64::exp)
}

/// Surface area of the unit sphere in `R^n`: `2 π^{n/2} / Γ(n/2)`.
pub fn sphere_area(n: f64) -> f64 {
    2.0 * std::f64::consts::PI.powf(0.5 * n) / libm::tgamma(0.5 * n)
}

/// Power series of ₂F₁ with the default tolerances, restricted to `0 ≤ z ≤ 0.9`.
pub fn hyp2f1_series(t: &HypTriple, z: f64) -> Result<f64> {
    precondition((0.0..=SERIES_Z_MAX).contains(&z), || {
        format!("series route requires 0 <= z <= {SERIES_Z_MAX}, got {z}")
    })?;
    series_sum(t, z, SeriesTolerance::DEFAULT)
}

/// Power series on `0 ≤ z < 1` with an explicit stopping rule.
pub fn series_sum(t: &HypTriple, z: f64, tol: SeriesTolerance) -> Result<f64> {
    precondition((0.0..1.0).contains(&z), || format!("series requires 0 <= z < 1, got {z}"))?;
    let (a, b, c) = (t.a, t.b, t.c);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..SERIES_MAX_TERMS {
        let nf = n as f64;
        let denom = (c + nf) * (nf + 1.0);
        if denom == 0.0 {
            return Err(Error::InvalidTriple(format!("(c)_n vanishes at n = {n}")));
        }
        let ratio = (a + nf) * (b + nf) / denom * z;
        term *= ratio;
        sum += term;
        if term == 0.0 {
            return Ok(sum);
        }
        let next_ratio = ((a + nf + 1.0) * (b + nf + 1.0) / ((c + nf + 1.0) * (nf + 2.0)) * z).abs();
        if term.abs() < tol.abs + tol.rel * sum.abs() && next_ratio < 1.0 {
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence { terms: SERIES_MAX_TERMS })
}

/// Euler integral route, normalised by `B(a, c−a)`. Requires `c > a > 0`.
pub fn hyp2f1_integral(t: &HypTriple, z: f64) -> Result<f64> {
    precondition(t.euler_admissible(), || format!("integral route requires c > a > 0, got a={}, c={}", t.a, t.c))?;
    precondition((0.0..1.0).contains(&z), || format!("integral route requires 0 <= z < 1, got {z}"))?;
    let (a, b, c) = (t.a, t.b, t.c);
    let ca = c - a;
    let one_minus_z = 1.0 - z;

    // Left half: s = u^{1/a}, s^{a-1} ds = du / a.
    let left = tanh_sinh(
        |u| {
            let s = u.powf(1.0 / a);
            (1.0 - s).powf(ca - 1.0) * (1.0 - z * s).powf(-b)
        },
        0.0,
        0.5f64.powf(a),
        INTEGRAL_REL_TOL,
    )?;
    // Right half: 1 - s = w^{1/(c-a)}, (1-s)^{c-a-1} ds = -dw / (c-a).
    let right = tanh_sinh(
        |w| {
            let one_minus_s = w.powf(1.0 / ca);
            (1.0 - one_minus_s).powf(a - 1.0) * (one_minus_z + z * one_minus_s).powf(-b)
        },
        0.0,
        0.5f64.powf(ca),
        INTEGRAL_REL_TOL,
    )?;

    // 1/B(a, c-a) with the Jacobians folded in: Γ(c) / (Γ(a+1) Γ(c-a)) and Γ(c) / (Γ(a) Γ(c-a+1)).
    let ln_norm = -ln_beta(a, ca)?;
    Ok((ln_norm - a.ln()).exp() * left.value + (ln_norm - ca.ln()).exp() * right.value)
}

/// Minimum distance of `c − a − b` from an integer for the connection route;
/// closer than this the two terms cancel catastrophically.
pub const CONNECTION_MIN_GAP: f64 = 0.05;

/// `Γ(num₀)Γ(num₁)/(Γ(den₀)Γ(den₁))`, zero when a denominator argument is a pole.
fn gamma_ratio(num: [f64; 2], den: [f64; 2]) -> f64 {
    let is_pole = |x: f64| x <= 0.0 && x == x.round();
    if den.iter().any(|&x| is_pole(x)) {
        return 0.0;
    }
    let mut ln = 0.0;
    let mut sign = 1.0;
    for (x, s) in num.iter().map(|&x| (x, 1.0)).chain(den.iter().map(|&x| (x, -1.0))) {
        let (lg, sg) = libm::lgamma_r(x);
        ln += s * lg;
        sign *= sg as f64;
    }
    sign * ln.exp()
}

/// The `z ↦ 1 − z` connection formula, two power series in `1 − z`:
///
/// ```text
/// F(a,b;c;z) = Γ(c)Γ(s)/(Γ(c−a)Γ(c−b)) F(a,b;1−s;1−z)
///            + (1−z)^s Γ(c)Γ(−s)/(Γ(a)Γ(b)) F(c−a,c−b;1+s;1−z),   s = c − a − b.
/// ```
pub fn hyp2f1_connection(t: &HypTriple, z: f64, tol: SeriesTolerance) -> Result<f64> {
    precondition((0.5..1.0).contains(&z), || format!("connection route requires 0.5 <= z < 1, got {z}"))?;
    let (a, b, c) = (t.a, t.b, t.c);
    let s = c - a - b;
    precondition((s - s.round()).abs() >= CONNECTION_MIN_GAP, || {
        format!("connection route requires c - a - b away from integers, got {s}")
    })?;
    let w = 1.0 - z;
    let first = series_sum(&HypTriple::new(a, b, 1.0 - s)?, w, tol)?;
    let second = series_sum(&HypTriple::new(c - a, c - b, 1.0 + s)?, w, tol)?;
    Ok(gamma_ratio([c, s], [c - a, c - b]) * first + w.powf(s) * gamma_ratio([c, -s], [a, b]) * second)
}

/// Which route [`hyp2f1_with`] took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Series,
    Connection,
    Integral,
    IntegralSwapped,
    LongSeries,
}

/// ₂F₁ on `0 ≤ z < 1`, choosing the route by argument size.
pub fn hyp2f1(t: &HypTriple, z: f64) -> Result<f64> {
    hyp2f1_with(t, z, SeriesTolerance::DEFAULT).map(|(v, _)| v)
}

/// Route selection: series up to 0.9; beyond, the connection formula when
/// `c − a − b` is not close to an integer, then Euler's integral with whichever
/// of `a`, `b` satisfies `c > · > 0`, and otherwise the series run to its term cap.
pub fn hyp2f1_with(t: &HypTriple, z: f64, tol: SeriesTolerance) -> Result<(f64, Route)> {
    precondition((0.0..1.0).contains(&z), || format!("hyp2f1 requires 0 <= z < 1, got {z}"))?;
    if z <= SERIES_Z_MAX {
        return series_sum(t, z, tol).map(|v| (v, Route::Series));
    }
    let s = t.c - t.a - t.b;
    if (s - s.round()).abs() >= CONNECTION_MIN_GAP {
        return hyp2f1_connection(t, z, tol).map(|v| (v, Route::Connection));
    }
    if t.euler_admissible() {
        return hyp2f1_integral(t, z).map(|v| (v, Route::Integral));
    }
    let swapped = t.swapped();
    if swapped.euler_admissible() {
        return hyp2f1_integral(&swapped, z).map(|v| (v, Route::IntegralSwapped));
    }
    series_sum(t, z, tol).map(|v| (v, Route::LongSeries))
}

/// Residual of the hypergeometric ODE
/// `z(1−z)φ″ + (c − (1+a+b)z)φ′ − abφ` with φ′, φ″ from central differences.
///
/// A test oracle: the series is summed to machine precision so that the
/// differences are dominated by truncation, not by the stopping rule.
pub fn hyp2f1_ode_residual(t: &HypTriple, z: f64, h: f64) -> Result<f64> {
    precondition(h > 0.0 && h < z && z < 1.0 - h, || format!("residual requires 0 < h < z < 1 - h, got z={z}, h={h}"))?;
    let f = |x: f64| series_sum(t, x, SeriesTolerance::MACHINE);
    let (fm, f0, fp) = (f(z - h)?, f(z)?, f(z + h)?);
    let d1 = (fp - fm) / (2.0 * h);
    let d2 = (fp - 2.0 * f0 + fm) / (h * h);
    let (a, b, c) = (t.a, t.b, t.c);
    Ok((z * (1.0 - z) * d2 + (c - (1.0 + a + b) * z) * d1 - a * b * f0).abs())
}
