//! Blowup ODEs of the iteration argument, integrated at equality:
//!
//! ```text
//! (i)  H″ + c H′/σ = C Hᵖ + F,         H ≥ εᵖCσ²,  H′ ≥ εᵖCσ,
//! (ii) H″ + 2H′    = C σ^{1−p} Hᵖ + F, H ≥ εᵖCσ,   H′ ≥ εᵖC,
//! ```
//!
//! and log-log fits of the blowup point σ* against ε.
//!
//! With [`OdeModel::Obstacle`] the constant `F` is chosen so that the lower
//! bound `L(σ)` solves the linear part (`F = εᵖC(2+2c)` in case (i) and
//! `F = 2εᵖC` in case (ii)). Starting from `H = L`, `H′ = L′` the solution
//! then stays above `L` with `H′ ≥ L′` for every σ, which is the hypothesis of
//! the criterion. [`OdeModel::InitialValue`] drops `F` and imposes the bounds
//! only at σ₀, with equality.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

pub const H_BLOW: f64 = 1e12;
pub const RTOL: f64 = 1e-9;
pub const STEP_FLOOR: f64 = 1e-14;
/// Largest relative shift of σ* accepted when the tolerance is tightened 100×.
pub const CONFIRM_SHIFT: f64 = 0.01;
const CROSSING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeCase {
    I,
    Ii,
}

impl OdeCase {
    /// Exponent of ε in the blowup bound: −(p−1)/2 or −p(p−1).
    pub fn exponent(self, p: f64) -> f64 {
        match self {
            OdeCase::I => -(p - 1.0) / 2.0,
            OdeCase::Ii => -p * (p - 1.0),
        }
    }
}

impl FromStr for OdeCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "1" => Ok(OdeCase::I),
            "ii" | "2" => Ok(OdeCase::Ii),
            _ => Err(Error::InvalidConfig(format!("unknown ODE case {s:?}, expected i or ii"))),
        }
    }
}

impl fmt::Display for OdeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OdeCase::I => "i",
            OdeCase::Ii => "ii",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeModel {
    #[default]
    Obstacle,
    InitialValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeCriterionSpec {
    pub case: OdeCase,
    pub p: f64,
    /// Coefficient of H′/σ in case (i); unused in case (ii).
    pub c: f64,
    #[serde(rename = "C")]
    pub ccoef: f64,
    pub eps: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub model: OdeModel,
}

impl OdeCriterionSpec {
    pub fn new(case: OdeCase, p: f64, c: f64, ccoef: f64, eps: f64, sigma0: f64) -> Result<Self> {
        let spec = Self { case, p, c, ccoef, eps, sigma0, model: OdeModel::Obstacle };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        precondition(self.p > 1.0 && self.p.is_finite(), || format!("p must exceed 1, got {}", self.p))?;
        precondition(self.c > 0.0 && self.c.is_finite(), || format!("c must be positive, got {}", self.c))?;
        precondition(self.ccoef > 0.0 && self.ccoef.is_finite(), || format!("C must be positive, got {}", self.ccoef))?;
        precondition(self.eps > 0.0 && self.eps.is_finite(), || format!("eps must be positive, got {}", self.eps))?;
        precondition(self.sigma0 > 0.0 && self.sigma0.is_finite(), || {
            format!("sigma0 must be positive, got {}", self.sigma0)
        })
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..*self }
    }

    /// End of the search window, 1e6·ε^{−p(p−1)}.
    pub fn sigma_max(&self) -> f64 {
        1e6 * self.eps.powf(-self.p * (self.p - 1.0))
    }

    fn scale(&self) -> f64 {
        self.eps.powf(self.p) * self.ccoef
    }

    fn initial(&self) -> [f64; 2] {
        let (a, s) = (self.scale(), self.sigma0);
        match (self.case, self.model) {
            // L′ = 2εᵖCσ₀ satisfies the derivative bound εᵖCσ₀ with room to spare.
            (OdeCase::I, OdeModel::Obstacle) => [a * s * s, 2.0 * a * s],
            (OdeCase::I, OdeModel::InitialValue) => [a * s * s, a * s],
            (OdeCase::Ii, _) => [a * s, a],
        }
    }

    fn forcing(&self) -> f64 {
        if self.model == OdeModel::InitialValue {
            return 0.0;
        }
        match self.case {
            OdeCase::I => self.scale() * (2.0 + 2.0 * self.c),
            OdeCase::Ii => 2.0 * self.scale(),
        }
    }

    fn rhs(&self, sigma: f64, y: [f64; 2], forcing: f64) -> [f64; 2] {
        let [h, dh] = y;
        let source = self.ccoef * h.abs().powf(self.p);
        let ddh = match self.case {
            OdeCase::I => source + forcing - self.c * dh / sigma,
            OdeCase::Ii => sigma.powf(1.0 - self.p) * source + forcing - 2.0 * dh,
        };
        [dh, ddh]
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: [f64; 2], terms: &[(f64, [f64; 2])], h: f64) -> [f64; 2] {
    let mut out = y;
    for &(a, k) in terms {
        out[0] += h * a * k[0];
        out[1] += h * a * k[1];
    }
    out
}

/// Blowup point for a given threshold and relative tolerance, without the confirmation pass.
pub fn blowup_point(spec: &OdeCriterionSpec, h_blow: f64, rtol: f64) -> Result<f64> {
    spec.validate()?;
    precondition(h_blow > 0.0 && rtol > 0.0, || "threshold and tolerance must be positive".to_string())?;
    let forcing = spec.forcing();
    let f = |s: f64, y: [f64; 2]| spec.rhs(s, y, forcing);
    let sigma_max = spec.sigma_max();
    let mut sigma = spec.sigma0;
    let mut y = spec.initial();
    if y[0] >= h_blow {
        return Ok(sigma);
    }
    let mut k1 = f(sigma, y);
    let mut h = 1e-6 * sigma.max(1.0);
    while sigma < sigma_max {
        h = h.min(sigma_max - sigma);
        if h < STEP_FLOOR * sigma.max(1.0) {
            return Err(Error::StepUnderflow { sigma });
        }
        let k2 = f(sigma + C2 * h, axpy(y, &[(A21, k1)], h));
        let k3 = f(sigma + C3 * h, axpy(y, &[(A31, k1), (A32, k2)], h));
        let k4 = f(sigma + C4 * h, axpy(y, &[(A41, k1), (A42, k2), (A43, k3)], h));
        let k5 = f(sigma + C5 * h, axpy(y, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)], h));
        let k6 = f(sigma + h, axpy(y, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)], h));
        let y_new = axpy(y, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)], h);
        let k7 = f(sigma + h, y_new);
        let err = axpy([0.0; 2], &[(E1, k1), (E3, k3), (E4, k4), (E5, k5), (E6, k6), (E7, k7)], h);
        let norm = (0..2)
            .map(|i| err[i].abs() / (rtol * y[i].abs().max(y_new[i].abs()) + f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if !norm.is_finite() {
            h *= 0.2;
            continue;
        }
        if norm <= 1.0 {
            if y_new[0] >= h_blow {
                // Aim with H^{−(p−1)/2} affine in σ, exact for the blowup profile of H″ ∝ Hᵖ.
                let e = -(spec.p - 1.0) / 2.0;
                let (m0, m1, mb) = (y[0].powf(e), y_new[0].powf(e), h_blow.powf(e));
                let theta = ((m0 - mb) / (m0 - m1)).clamp(0.0, 1.0);
                if y_new[0] <= h_blow * (1.0 + CROSSING_TOL) || h <= CROSSING_TOL * sigma.max(1.0) {
                    return Ok(sigma + theta * h);
                }
                h *= theta.clamp(0.05, 0.999);
                continue;
            }
            sigma += h;
            y = y_new;
            k1 = k7;
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        h *= if norm <= 1.0 { factor } else { factor.min(1.0) };
    }
    Err(Error::NoBlowupInWindow { sigma_max })
}

/// σ at which H first exceeds [`H_BLOW`], confirmed by a second pass at a 100× tighter tolerance.
pub fn integrate_blowup(spec: &OdeCriterionSpec) -> Result<f64> {
    let coarse = blowup_point(spec, H_BLOW, RTOL)?;
    let fine = blowup_point(spec, H_BLOW, RTOL / 100.0)?;
    let shift = (fine - coarse).abs() / fine;
    if shift >= CONFIRM_SHIFT {
        return Err(Error::UnconfirmedBlowupTime { shift });
    }
    Ok(fine)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

pub(crate) fn fit_loglog(records: &[(f64, f64)], min_records: usize) -> Result<ScalingFit> {
    precondition(records.len() >= min_records, || {
        format!("need at least {min_records} records, got {}", records.len())
    })?;
    precondition(records.iter().all(|&(x, y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()), || {
        "records must be positive and finite".to_string()
    })?;
    let n = records.len() as f64;
    let xs: Vec<f64> = records.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) {
        return Err(Error::DegenerateFit("all abscissae are equal".to_string()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if records.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(ScalingFit { slope, intercept, stderr, points: records.len() })
}

/// Least-squares slope of log σ* against log ε, from at least four `(ε, σ*)` records.
pub fn fit_scaling(records: &[(f64, f64)]) -> Result<ScalingFit> {
    fit_loglog(records, 4)
}

/// Runs [`integrate_blowup`] over an ε-ladder, in parallel.
pub fn ladder(spec: &OdeCriterionSpec, eps: &[f64]) -> Result<Vec<(f64, f64)>> {
    use rayon::prelude::*;
    eps.par_iter().map(|&e| integrate_blowup(&spec.with_eps(e)).map(|s| (e, s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(case: OdeCase, p: f64, eps: f64) -> OdeCriterionSpec {
        OdeCriterionSpec::new(case, p, 3.0, 1.0, eps, 1.0).unwrap()
    }

    #[test]
    fn rk_integrates_linear_part_exactly() {
        // With C tiny the obstacle L is the solution; check H at σ* is reached at L(σ) = H_blow.
        let s = OdeCriterionSpec { ccoef: 1e-30, ..spec(OdeCase::I, 2.0, 1.0) };
        let sigma = blowup_point(&s, 1e-26, 1e-10).unwrap();
        assert!((sigma - 100.0).abs() < 1e-8 * sigma, "{sigma}");
    }

    #[test]
    fn matches_first_integral_oracle() {
        // Without the H′/σ term, H″ = Hᵖ conserves H′²/2 − H^{p+1}/(p+1) = E, so
        // σ* − σ₀ = ∫ dH / √(2E + 2H^{p+1}/(p+1)) from H(σ₀) to H_blow.
        for p in [1.5, 2.0, 2.5] {
            let s = OdeCriterionSpec { c: 1e-14, model: OdeModel::InitialValue, ..spec(OdeCase::I, p, 1.0) };
            let energy = 0.5 - 1.0 / (p + 1.0);
            // H = x^{−2/(p−1)} maps [H₀, H_blow] onto a bounded x-interval.
            let k = 2.0 / (p - 1.0);
            let integrand = |x: f64| {
                let h = x.powf(-k);
                let dh = k * x.powf(-k - 1.0);
                dh / (2.0 * energy + 2.0 * h.powf(p + 1.0) / (p + 1.0)).sqrt()
            };
            let oracle = 1.0 + crate::quad::tanh_sinh(integrand, H_BLOW.powf(-1.0 / k), 1.0, 1e-13).unwrap().value;
            let sigma = integrate_blowup(&s).unwrap_or_else(|e| panic!("p={p}: {e}"));
            assert!((sigma - oracle).abs() < 1e-6 * oracle, "p={p}: {sigma} vs {oracle}");
        }
    }

    #[test]
    fn self_scaling_case_i() {
        let a = integrate_blowup(&spec(OdeCase::I, 2.0, 0.1)).unwrap();
        let b = integrate_blowup(&spec(OdeCase::I, 2.0, 0.05)).unwrap();
        assert!(a.is_finite() && a > 1.0);
        let ratio = b / a;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn self_scaling_case_ii() {
        let a = integrate_blowup(&spec(OdeCase::Ii, 2.0, 0.1)).unwrap();
        let b = integrate_blowup(&spec(OdeCase::Ii, 2.0, 0.05)).unwrap();
        let ratio = b / a;
        assert!((ratio / 4.0 - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn large_data_blows_up_immediately() {
        for case in [OdeCase::I, OdeCase::Ii] {
            let s = integrate_blowup(&spec(case, 2.0, 10.0)).unwrap();
            assert!(s - 1.0 < 0.5, "{case}: {s}");
        }
    }

    #[test]
    fn monotone_in_eps_and_coefficient() {
        for case in [OdeCase::I, OdeCase::Ii] {
            let eps = [0.4, 0.3, 0.2, 0.1];
            let coef = [0.5, 1.0, 2.0, 4.0];
            let grid: Vec<Vec<f64>> = coef
                .iter()
                .map(|&c| {
                    eps.iter()
                        .map(|&e| integrate_blowup(&OdeCriterionSpec { ccoef: c, ..spec(case, 2.0, e) }).unwrap())
                        .collect()
                })
                .collect();
            for row in &grid {
                assert!(row.windows(2).all(|w| w[1] > w[0]), "{case}: {row:?}");
            }
            for j in 0..eps.len() {
                assert!(grid.windows(2).all(|w| w[1][j] < w[0][j]), "{case}: column {j}");
            }
        }
    }

    #[test]
    fn insensitive_to_threshold() {
        for case in [OdeCase::I, OdeCase::Ii] {
            for p in [1.5, 2.0, 2.5] {
                let s = spec(case, p, 0.2);
                let a = blowup_point(&s, 1e12, RTOL).unwrap();
                let b = blowup_point(&s, 1e14, RTOL).unwrap();
                assert!((b - a).abs() < 5e-3 * a, "{case} p={p}: {a} {b}");
            }
        }
    }

    #[test]
    fn obstacle_is_respected() {
        // Integrate to just below blowup and compare with L(σ) at a few thresholds.
        for case in [OdeCase::I, OdeCase::Ii] {
            let s = spec(case, 2.0, 0.05);
            let a = s.eps.powi(2);
            for h in [1e-2, 1.0, 1e3] {
                let sigma = blowup_point(&s, h, 1e-10).unwrap();
                let lower = match case {
                    OdeCase::I => a * sigma * sigma,
                    OdeCase::Ii => a * sigma,
                };
                assert!(lower <= h * (1.0 + 1e-9), "{case}: L({sigma}) = {lower} > {h}");
            }
        }
    }

    #[test]
    fn initial_value_model_scales_differently() {
        let iv = |e| OdeCriterionSpec { model: OdeModel::InitialValue, ..spec(OdeCase::I, 2.0, e) };
        let records = ladder(&iv(1.0), &[0.02, 0.01, 0.005, 0.0025]).unwrap();
        let fit = fit_scaling(&records).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn window_and_validation() {
        // H′ decays like e^{−2σ}, after which ∫σ^{−2} is too small to drive H to infinity.
        let s = OdeCriterionSpec { model: OdeModel::InitialValue, ..spec(OdeCase::Ii, 3.0, 0.7) };
        assert!(matches!(integrate_blowup(&s), Err(Error::NoBlowupInWindow { .. })));
        assert!(OdeCriterionSpec::new(OdeCase::I, 1.0, 3.0, 1.0, 0.1, 1.0).is_err());
        assert!(OdeCriterionSpec::new(OdeCase::I, 2.0, 3.0, 1.0, 0.1, 0.0).is_err());
        assert_eq!("ii".parse::<OdeCase>().unwrap(), OdeCase::Ii);
        assert!("iii".parse::<OdeCase>().is_err());
    }

    #[test]
    fn fit_examples() {
        let exact: Vec<_> = [0.2, 0.1, 0.05, 0.025].iter().map(|&e: &f64| (e, e.powi(-2))).collect();
        let fit = fit_scaling(&exact).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12 && fit.stderr < 1e-10);
        assert!(fit_scaling(&exact[..3]).is_err());
        assert!(matches!(fit_scaling(&[(0.1, 1.0), (0.1, 2.0), (0.1, 3.0), (0.1, 4.0)]), Err(Error::DegenerateFit(_))));
        assert!(fit_scaling(&[(0.1, 1.0), (0.2, -2.0), (0.3, 3.0), (0.4, 4.0)]).is_err());

        let ladder_eps = [0.2, 0.1, 0.05, 0.025];
        let i = fit_scaling(&ladder(&spec(OdeCase::I, 2.0, 1.0), &ladder_eps).unwrap()).unwrap();
        assert!((i.slope + 0.5).abs() < 0.05, "{i:?}");
        let ii = fit_scaling(&ladder(&spec(OdeCase::Ii, 2.0, 1.0), &ladder_eps).unwrap()).unwrap();
        assert!((ii.slope + 2.0).abs() < 0.2, "{ii:?}");
    }
}
