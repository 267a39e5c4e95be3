//! The test-function family
//!
//! ```text
//! Φ_β(r, t) = (2 + t + r)^{−β} F(β, (N−1+V₀)/2, N−1; 2r/(2+t+r)),   r < 2 + t,
//! ```
//!
//! which solves the anti-damped wave equation `∂ₜ²Φ − ΔΦ − (V₀/r)∂ₜΦ = 0` in the
//! cone `r < 2 + t` and satisfies `∂ₜΦ_β = −βΦ_{β+1}`. The residual helpers below
//! check both identities with finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::special::{hyp2f1_with, HypTriple, SeriesTolerance};

/// Arguments closer than this to z = 1 are rejected.
pub const Z_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// β < (N−1−V₀)/2: Φ_β ≍ (2+t)^{−β} uniformly in the cone.
    Sub,
    /// β > (N−1−V₀)/2: an extra boundary factor (1 − r/(t+2))^{(N−1−V₀)/2−β}.
    Super,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "V0")]
    pub v0: f64,
}

impl TestFunctionSpec {
    pub fn new(beta: f64, n: u32, v0: f64) -> Result<Self> {
        precondition(beta > 0.0 && beta.is_finite(), || format!("beta must be positive, got {beta}"))?;
        precondition(n >= 3, || format!("N must be at least 3, got {n}"))?;
        precondition(v0 >= 0.0 && v0.is_finite(), || format!("V0 must be >= 0, got {v0}"))?;
        let spec = Self { beta, n, v0 };
        spec.triple()?;
        Ok(spec)
    }

    pub fn triple(&self) -> Result<HypTriple> {
        let nf = self.n as f64;
        HypTriple::new(self.beta, 0.5 * (nf - 1.0 + self.v0), nf - 1.0)
    }

    /// (N−1−V₀)/2, the β separating the two envelope regimes.
    pub fn threshold(&self) -> f64 {
        0.5 * (self.n as f64 - 1.0 - self.v0)
    }

    pub fn regime(&self) -> Regime {
        let th = self.threshold();
        if self.beta < th {
            Regime::Sub
        } else if self.beta > th {
            Regime::Super
        } else {
            Regime::Threshold
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..*self }
    }
}

/// Φ_β at radius `r` and time `t`, inside the cone `0 ≤ r < 2 + t`.
pub fn phi(spec: &TestFunctionSpec, r: f64, t: f64) -> Result<f64> {
    precondition(r >= 0.0 && t >= 0.0, || format!("phi requires r >= 0 and t >= 0, got ({r}, {t})"))?;
    phi_unchecked(spec, r, t)
}

/// Φ_β without the `t ≥ 0` requirement; the cone and the z-limit are still enforced.
fn phi_unchecked(spec: &TestFunctionSpec, r: f64, t: f64) -> Result<f64> {
    let s = 2.0 + t + r;
    if r >= 2.0 + t {
        return Err(Error::OutsideCone { r, t });
    }
    let z = 2.0 * r / s;
    if z > Z_LIMIT {
        return Err(Error::OutsideCone { r, t });
    }
    let (f, _) = hyp2f1_with(&spec.triple()?, z, SeriesTolerance::MACHINE)?;
    Ok(s.powf(-spec.beta) * f)
}

fn interior_check(r: f64, t: f64, h: f64) -> Result<()> {
    precondition(h > 0.0, || format!("step must be positive, got {h}"))?;
    precondition(t - h >= 0.0, || format!("t = {t} must exceed the step {h}"))?;
    if r + h >= 2.0 + t - h {
        return Err(Error::OutsideCone { r: r + h, t: t - h });
    }
    Ok(())
}

/// `|D_t Φ_β + β Φ_{β+1}|` with the centred first difference in t.
pub fn phi_dt_identity_residual(spec: &TestFunctionSpec, r: f64, t: f64, h: f64) -> Result<f64> {
    interior_check(r, t, h)?;
    let dt = (phi(spec, r, t + h)? - phi(spec, r, t - h)?) / (2.0 * h);
    let next = phi(&spec.with_beta(spec.beta + 1.0), r, t)?;
    Ok((dt + spec.beta * next).abs())
}

/// Residual of `∂ₜ²Φ − ∂ᵣ²Φ − (N−1)/r ∂ᵣΦ − (V₀/r) ∂ₜΦ` with centred differences of step `h`.
pub fn pde_residual(spec: &TestFunctionSpec, r: f64, t: f64, h: f64) -> Result<f64> {
    if r <= h {
        return Err(Error::TooCloseToAxis { r, h });
    }
    interior_check(r, t, h)?;
    let f = |r: f64, t: f64| phi(spec, r, t);
    let c = f(r, t)?;
    let (tp, tm) = (f(r, t + h)?, f(r, t - h)?);
    let (rp, rm) = (f(r + h, t)?, f(r - h, t)?);
    let h2 = h * h;
    let phi_tt = (tp - 2.0 * c + tm) / h2;
    let phi_t = (tp - tm) / (2.0 * h);
    let phi_rr = (rp - 2.0 * c + rm) / h2;
    let phi_r = (rp - rm) / (2.0 * h);
    let nf = spec.n as f64;
    Ok((phi_tt - phi_rr - (nf - 1.0) / r * phi_r - spec.v0 / r * phi_t).abs())
}

/// Comparison weight of the two-sided envelope: (2+t)^{−β}, times the
/// boundary factor (1 − r/(t+2))^{(N−1−V₀)/2−β} in the super regime.
pub fn envelope_weight(spec: &TestFunctionSpec, r: f64, t: f64) -> Result<f64> {
    let base = (2.0 + t).powf(-spec.beta);
    match spec.regime() {
        Regime::Sub => Ok(base),
        Regime::Super => Ok(base * (1.0 - r / (t + 2.0)).powf(spec.threshold() - spec.beta)),
        Regime::Threshold => {
            Err(Error::PreconditionViolation(format!("beta = {} sits exactly on the regime threshold", spec.beta)))
        }
    }
}

/// Extrema of Φ_β / weight over the samples.
pub fn envelope_ratio(spec: &TestFunctionSpec, samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(r, t) in samples {
        let ratio = phi(spec, r, t)? / envelope_weight(spec, r, t)?;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

/// Seeded samples `(r, t)` in the cone with `t ≤ t_max`. Half of them have
/// `1 − r/(2+t)` log-uniform in `[1e-8, 1]` so that the cone boundary is probed.
/// The radial fraction sequence depends only on `seed`, not on `t_max`.
pub fn cone_samples(seed: u64, count: usize, t_max: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let t: f64 = t_max * rng.random::<f64>();
            let u: f64 = rng.random();
            let gap = if i % 2 == 0 { 1.0 - u * (1.0 - 1e-8) } else { 10f64.powf(-8.0 * u) };
            ((1.0 - gap) * (2.0 + t), t)
        })
        .collect()
}
