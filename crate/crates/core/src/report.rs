//! Self-verification suites with explicit tolerances.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{choose_proof_params, ModelParams};
use crate::functionals::{accumulate, run_with_trace, trick_identity_residual, FunctionalTrace};
use crate::odecrit::{fit_scaling, ladder, OdeCase, OdeCriterionSpec};
use crate::solver::{GridSpec, RunOptions};
use crate::testfn::{cone_samples, envelope_ratio, pde_residual, phi_dt_identity_residual, TestFunctionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Testfn,
    Functionals,
    Odecrit,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Testfn, Suite::Functionals, Suite::Odecrit];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "testfn" => Ok(Suite::Testfn),
            "functionals" => Ok(Suite::Functionals),
            "odecrit" => Ok(Suite::Odecrit),
            _ => Err(Error::InvalidConfig(format!("unknown suite {s:?}"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Testfn => "testfn",
            Suite::Functionals => "functionals",
            Suite::Odecrit => "odecrit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    /// A non-negative discrepancy; the check passes iff `observed <= tolerance`.
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub seed: u64,
    pub only: Option<Suite>,
    /// Replaces every tolerance.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Test-function configurations `(β, N, V₀)` covering both envelope regimes.
pub const TESTFN_CONFIGS: [(f64, u32, f64); 4] = [(0.5, 3, 0.0), (0.5, 3, 0.5), (1.2, 4, 0.3), (2.0, 5, 1.0)];

/// 10×10 lattice of `(r, t)` with `t ∈ [0.5, 5]` and `r/(2+t) ∈ [0.05, 0.68]`.
pub fn residual_lattice() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(100);
    for k in 0..10 {
        let t = 0.5 + 0.5 * k as f64;
        for i in 0..10 {
            pts.push(((0.05 + 0.07 * i as f64) * (2.0 + t), t));
        }
    }
    pts
}

/// Largest of `f` over the lattice and the four test-function configurations.
pub fn lattice_max<F>(f: F) -> Result<f64>
where
    F: Fn(&TestFunctionSpec, f64, f64) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    for (beta, n, v0) in TESTFN_CONFIGS {
        let spec = TestFunctionSpec::new(beta, n, v0)?;
        for (r, t) in residual_lattice() {
            worst = worst.max(f(&spec, r, t)?);
        }
    }
    Ok(worst)
}

/// Largest relative shift of the envelope-ratio extrema between `t ≤ 100` and `t ≤ 200`.
pub fn envelope_drift(seed: u64, count: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (beta, n, v0) in TESTFN_CONFIGS {
        let spec = TestFunctionSpec::new(beta, n, v0)?;
        let (lo1, hi1) = envelope_ratio(&spec, &cone_samples(seed, count, 100.0))?;
        let (lo2, hi2) = envelope_ratio(&spec, &cone_samples(seed, count, 200.0))?;
        worst = worst.max((lo2 / lo1 - 1.0).abs()).max((hi2 / hi1 - 1.0).abs());
    }
    Ok(worst)
}

fn testfn_checks(seed: u64) -> Vec<(&'static str, f64, Result<f64>)> {
    let order = || -> Result<f64> {
        let coarse = lattice_max(|s, r, t| pde_residual(s, r, t, 2e-3))?;
        let fine = lattice_max(|s, r, t| pde_residual(s, r, t, 1e-3))?;
        Ok(((coarse / fine).log2() - 2.0).abs())
    };
    vec![
        ("dt identity residual, h = 1e-4", 1e-6, lattice_max(|s, r, t| phi_dt_identity_residual(s, r, t, 1e-4))),
        ("wave residual, h = 1e-3", 1e-5, lattice_max(|s, r, t| pde_residual(s, r, t, 1e-3))),
        ("wave residual order deviation from 2", 0.2, order()),
        ("envelope extrema drift, t <= 100 vs 200", 0.1, envelope_drift(seed, 1000)),
    ]
}

fn functionals_checks() -> Vec<(&'static str, f64, Result<f64>)> {
    let constant = || -> Result<f64> {
        let mut tr = FunctionalTrace::new(1.0, 0.0, 0.0);
        let mut worst: f64 = 0.0;
        for k in 0..=10_000 {
            let t = 1e-3 * k as f64;
            accumulate(&mut tr, t, 1.0, 0.0)?;
            let exact = t.powi(3) / 6.0;
            if k > 0 {
                worst = worst.max(((2.0 + t).powi(2) * tr.j[k] - exact).abs() / exact);
            }
        }
        Ok(worst)
    };
    let decaying = || -> Result<f64> {
        let mut tr = FunctionalTrace::new(1.0, 0.0, 0.0);
        for k in 0..=10_000 {
            let t = 1e-3 * k as f64;
            accumulate(&mut tr, t, (2.0 + t).powi(-3), 0.0)?;
        }
        Ok(trick_identity_residual(&tr))
    };
    let solver = || -> Result<f64> {
        let mp = ModelParams::new(3, 0.0, 2.0, 0.5, 1.0)?;
        let pp = choose_proof_params(&mp, 0.01)?;
        let spec = TestFunctionSpec::new(pp.beta, 3, 0.0)?;
        let grid = GridSpec::for_model(&mp, 0.02, 0.5, 4.0)?;
        let (_, tr) = run_with_trace(&mp, &grid, &RunOptions::default(), &spec, 4)?;
        Ok(trick_identity_residual(&tr))
    };
    vec![
        ("G = 1: (2+t)^2 J vs t^3/6, relative", 1e-8, constant()),
        ("G = (2+s)^-3: identity residual", 1e-6, decaying()),
        ("solver trace: identity residual", 1e-6, solver()),
    ]
}

fn odecrit_checks() -> Vec<(&'static str, f64, Result<f64>)> {
    let slope = |case: OdeCase, eps: &[f64]| -> Result<f64> {
        let spec = OdeCriterionSpec::new(case, 2.0, 3.0, 1.0, 1.0, 1.0)?;
        let fit = fit_scaling(&ladder(&spec, eps)?)?;
        Ok((fit.slope - case.exponent(2.0)).abs())
    };
    let eps = [0.2, 0.1, 0.05, 0.025];
    vec![
        ("case i slope deviation, p = 2", 0.05, slope(OdeCase::I, &eps)),
        ("case ii slope deviation, p = 2", 0.2, slope(OdeCase::Ii, &eps)),
    ]
}

pub fn run_report(opts: &ReportOptions) -> Report {
    let mut checks = Vec::new();
    for suite in Suite::ALL {
        if opts.only.is_some_and(|s| s != suite) {
            continue;
        }
        let raw = match suite {
            Suite::Testfn => testfn_checks(opts.seed),
            Suite::Functionals => functionals_checks(),
            Suite::Odecrit => odecrit_checks(),
        };
        for (name, tol, value) in raw {
            let tolerance = opts.tolerance.unwrap_or(tol);
            let (observed, error) = match value {
                Ok(v) => (v, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            checks.push(Check {
                suite,
                name: name.to_string(),
                observed,
                tolerance,
                passed: observed <= tolerance,
                error,
            });
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Report { seed: opts.seed, checks, passed }
}
