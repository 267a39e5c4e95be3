//! Exponent bookkeeping: the quadratic γ(n; p), its positive root p₀(n),
//! the damping threshold V*, the (p, V₀) regions and the lifespan exponents
//! they predict, plus the auxiliary parameters used by the blowup argument.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

/// Relative tolerance for the measure-zero critical curve p = p₀(N + V₀).
pub const TOL_CRIT: f64 = 1e-9;

/// One problem instance: dimension, damping strength, power, data amplitude and support radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "V0")]
    pub v0: f64,
    pub p: f64,
    pub eps: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
}

impl ModelParams {
    pub fn new(n: u32, v0: f64, p: f64, eps: f64, r0: f64) -> Result<Self> {
        let mp = Self { n, v0, p, eps, r0 };
        mp.validate()?;
        Ok(mp)
    }

    /// `eps = 0` is accepted so that zero-data runs can be expressed.
    pub fn validate(&self) -> Result<()> {
        precondition(self.n >= 3, || format!("N must be at least 3, got {}", self.n))?;
        precondition(self.v0 >= 0.0 && self.v0.is_finite(), || format!("V0 must be >= 0, got {}", self.v0))?;
        precondition(self.p > 1.0 && self.p.is_finite(), || format!("p must exceed 1, got {}", self.p))?;
        precondition(self.eps >= 0.0 && self.eps.is_finite(), || format!("eps must be >= 0, got {}", self.eps))?;
        precondition(self.r0 > 0.0 && self.r0.is_finite(), || format!("R0 must be positive, got {}", self.r0))?;
        Ok(())
    }

    pub fn dim(&self) -> f64 {
        self.n as f64
    }

    pub fn with_eps(self, eps: f64) -> Self {
        Self { eps, ..self }
    }

    /// `N/(N−1) < p`, and `p < (N−2)/(N−4)` when `N ≥ 5`.
    pub fn in_theorem_range(&self) -> bool {
        in_theorem_range(self.n, self.p)
    }
}

pub fn in_theorem_range(n: u32, p: f64) -> bool {
    let nf = n as f64;
    p > nf / (nf - 1.0) && (n < 5 || p < (nf - 2.0) / (nf - 4.0))
}

/// γ(n; p) = 2 + (n+1)p − (n−1)p².
pub fn gamma_poly(n: f64, p: f64) -> f64 {
    2.0 + (n + 1.0) * p - (n - 1.0) * p * p
}

/// Positive root of γ(n; ·) = 0.
pub fn strauss_root(n: f64) -> Result<f64> {
    precondition(n > 1.0, || format!("strauss_root requires n > 1, got {n}"))?;
    let disc = (n + 1.0) * (n + 1.0) + 8.0 * (n - 1.0);
    Ok(((n + 1.0) + disc.sqrt()) / (2.0 * (n - 1.0)))
}

/// V* = (N−1)²/(N+1).
pub fn v_star(n: u32) -> f64 {
    let nf = n as f64;
    (nf - 1.0) * (nf - 1.0) / (nf + 1.0)
}

/// Fujita exponent p_F(α) = 1 + 2/(N−α).
pub fn fujita(n: u32, alpha: f64) -> f64 {
    1.0 + 2.0 / (n as f64 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Omega0,
    Omega1,
    Omega2,
    Omega3,
    Outside,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Omega0 => "Omega0",
            Region::Omega1 => "Omega1",
            Region::Omega2 => "Omega2",
            Region::Omega3 => "Omega3",
            Region::Outside => "Outside",
        }
    }

    pub fn is_subcritical(&self) -> bool {
        matches!(self, Region::Omega1 | Region::Omega2 | Region::Omega3)
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds entering the region predicates for fixed (N, V₀).
#[derive(Debug, Clone, Copy)]
struct Thresholds {
    critical: f64,
    shifted_root: f64,
    inverse_gap: f64,
    fujita_like: f64,
    lower3: f64,
    omega2_v0_min: f64,
    v_star: f64,
}

impl Thresholds {
    fn new(n: u32, v0: f64) -> Self {
        let nf = n as f64;
        Self {
            critical: strauss_root(nf + v0).expect("N + V0 > 1"),
            shifted_root: strauss_root(nf + 2.0 + v0).expect("N + 2 + V0 > 1"),
            inverse_gap: 2.0 / (nf - 1.0 - v0),
            fujita_like: 2.0 * (nf + 1.0) / (nf + 1.0 + v0),
            lower3: (nf / (nf - 1.0)).max((nf + 3.0 + v0) / (nf + 1.0 + v0)),
            omega2_v0_min: (nf + 1.0) * (nf - 2.0) / (nf + 2.0),
            v_star: v_star(n),
        }
    }
}

/// Region of (p, V₀) for dimension N. Points outside the admissible range of
/// p, or with V₀ ≥ V*, are `Outside`. Precedence Ω₀, Ω₁, Ω₂, Ω₃.
pub fn classify_point(n: u32, v0: f64, p: f64) -> Region {
    if n < 3 || !(v0 >= 0.0) || !in_theorem_range(n, p) {
        return Region::Outside;
    }
    let th = Thresholds::new(n, v0);
    if v0 >= th.v_star {
        return Region::Outside;
    }
    if (p - th.critical).abs() <= TOL_CRIT * th.critical {
        return Region::Omega0;
    }
    if th.shifted_root.max(th.inverse_gap) <= p && p < th.critical {
        return Region::Omega1;
    }
    if th.omega2_v0_min < v0 && th.fujita_like < p && p < th.inverse_gap {
        return Region::Omega2;
    }
    if th.lower3 < p && p < th.shifted_root.max(th.fujita_like) {
        return Region::Omega3;
    }
    Region::Outside
}

pub fn classify(mp: &ModelParams) -> Region {
    classify_point(mp.n, mp.v0, mp.p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifespanKind {
    /// T ≲ ε^{−κ−δ}
    Power,
    /// T ≲ exp(C ε^{−κ})
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifespanPrediction {
    pub kind: LifespanKind,
    pub exponent: f64,
    /// The bound carries an arbitrarily small loss δ in the exponent.
    pub delta_note: bool,
}

/// Upper-bound lifespan exponent for the region containing `mp`.
pub fn predict_lifespan(mp: &ModelParams) -> Result<LifespanPrediction> {
    let (nf, p, v0) = (mp.dim(), mp.p, mp.v0);
    let power = |exponent| LifespanPrediction { kind: LifespanKind::Power, exponent, delta_note: true };
    match classify(mp) {
        Region::Omega0 => {
            Ok(LifespanPrediction { kind: LifespanKind::Exponential, exponent: p * (p - 1.0), delta_note: false })
        }
        Region::Omega1 => Ok(power(2.0 * p * (p - 1.0) / gamma_poly(nf + v0, p))),
        Region::Omega2 => Ok(power(2.0 * (p - 1.0) / (2.0 * nf - (nf - 1.0 + v0) * p))),
        Region::Omega3 => Ok(power(1.0)),
        Region::Outside => {
            Err(Error::PreconditionViolation(format!("(N={}, V0={v0}, p={p}) lies outside every region", mp.n)))
        }
    }
}

/// Auxiliary exponents of the test-function argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProofParams {
    pub region: Region,
    pub q: f64,
    pub beta: f64,
    pub lambda: f64,
    pub beta0: f64,
    pub beta_delta: f64,
    pub delta: f64,
}

impl ProofParams {
    /// Starting point of the rescaled blowup ODE: (2/λ)·2^{λ/2} in the
    /// power regime, log 2 on the critical curve.
    pub fn sigma0(&self) -> f64 {
        match self.region {
            Region::Omega0 => std::f64::consts::LN_2,
            _ => 2.0 / self.lambda * 2f64.powf(0.5 * self.lambda),
        }
    }
}

/// Selects q, β, λ (power regime) or β₀, β_δ (critical curve) for a given δ.
pub fn choose_proof_params(mp: &ModelParams, delta: f64) -> Result<ProofParams> {
    precondition(delta > 0.0, || format!("delta must be positive, got {delta}"))?;
    let (nf, p, v0) = (mp.dim(), mp.p, mp.v0);
    let half_gap = 0.5 * (nf - 1.0 - v0);
    let beta0 = half_gap - 1.0 / p;
    let beta_delta = half_gap - 1.0 / (p + delta);
    let region = classify(mp);
    let inv_q = match region {
        Region::Omega0 => {
            return Ok(ProofParams { region, q: p, beta: beta0, lambda: 0.0, beta0, beta_delta, delta });
        }
        Region::Omega1 => 1.0 / p - delta,
        Region::Omega2 => half_gap - delta,
        Region::Omega3 => 0.5 * ((nf + 1.0 + v0) * p - (nf + 3.0 + v0)) - delta,
        Region::Outside => {
            return Err(Error::PreconditionViolation(format!("(N={}, V0={v0}, p={p}) lies outside every region", mp.n)))
        }
    };
    let beta = half_gap - inv_q;
    let lambda = gamma_poly(nf + v0, p) / (2.0 * p) - 1.0 / p + inv_q;
    let infeasible = |reason: String| Err(Error::InfeasibleDelta { delta, reason });
    if !(inv_q > 0.0 && inv_q < 1.0 / p) {
        return infeasible(format!("1/q = {inv_q} must lie in (0, 1/p)"));
    }
    if !(beta > 0.0 && beta < half_gap) {
        return infeasible(format!("beta = {beta} must lie in (0, {half_gap})"));
    }
    if !(lambda > 0.0 && lambda < p - 1.0) {
        return infeasible(format!("lambda = {lambda} must lie in (0, {})", p - 1.0));
    }
    Ok(ProofParams { region, q: 1.0 / inv_q, beta, lambda, beta0, beta_delta, delta })
}
