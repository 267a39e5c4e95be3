//! ε-ladders of full solver runs and the fitted lifespan exponent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{classify, predict_lifespan, LifespanKind, LifespanPrediction, ModelParams, Region};
use crate::odecrit::{fit_loglog, ScalingFit};
use crate::solver::{run, GridSpec, RunOptions, RunStatus, Shape, SimResult, DEFAULT_CFL};

/// Fewest blowups a ladder needs before a slope is fitted.
pub const MIN_BLOWUPS: usize = 3;

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

fn default_true() -> bool {
    true
}

/// A ladder of runs sharing everything but ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "V0")]
    pub v0: f64,
    pub p: f64,
    #[serde(rename = "R0", default = "default_r0")]
    pub r0: f64,
    pub eps_ladder: Vec<f64>,
    pub dr: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_max: f64,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default)]
    pub shape: Shape,
}

fn default_r0() -> f64 {
    1.0
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.eps_ladder.len() < 3 {
            return bad(format!("eps ladder needs at least 3 values, got {}", self.eps_ladder.len()));
        }
        if let Some(e) = self.eps_ladder.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return bad(format!("eps values must be positive, got {e}"));
        }
        if !self.eps_ladder.windows(2).all(|w| w[1] < w[0]) {
            return bad("eps ladder must be strictly decreasing".to_string());
        }
        self.model(self.eps_ladder[0])?;
        self.grid()?;
        Ok(())
    }

    pub fn model(&self, eps: f64) -> Result<ModelParams> {
        ModelParams::new(self.n, self.v0, self.p, eps, self.r0)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::for_model(&self.model(self.eps_ladder[0])?, self.dr, self.cfl, self.t_max)
    }

    pub fn options(&self) -> RunOptions {
        RunOptions { shape: self.shape, refine: self.refine, ..RunOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub eps: f64,
    /// Present iff the run blew up.
    pub lifespan: Option<f64>,
    pub status: RunStatus,
    pub lifespan_coarse: Option<f64>,
    pub lifespan_fine: Option<f64>,
}

impl SweepRecord {
    pub fn from_result(res: &SimResult) -> Self {
        let blew_up = res.status == RunStatus::Blowup;
        Self {
            eps: res.params.eps,
            lifespan: res.lifespan_estimate.filter(|_| blew_up),
            status: res.status,
            lifespan_coarse: res.lifespan_coarse.filter(|_| blew_up),
            lifespan_fine: res.lifespan_fine.filter(|_| blew_up),
        }
    }
}

/// Runs the ladder concurrently; records come back sorted by decreasing ε.
pub fn run_ladder(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    Ok(run_ladder_full(cfg)?.iter().map(SweepRecord::from_result).collect())
}

/// As [`run_ladder`], keeping the full solver results.
pub fn run_ladder_full(cfg: &SweepConfig) -> Result<Vec<SimResult>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let opts = cfg.options();
    let mut results =
        cfg.eps_ladder.par_iter().map(|&eps| run(&cfg.model(eps)?, &grid, &opts)).collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| b.params.eps.total_cmp(&a.params.eps));
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub records: Vec<SweepRecord>,
    pub region: Region,
    pub fit: ScalingFit,
    /// κ with T ~ ε^{−κ} (power regime), or the ε-exponent of log T (critical curve).
    pub measured_exponent: f64,
    /// Upper-bound lifespan exponent; absent outside the classified regions.
    pub predicted_exponent: Option<f64>,
    pub prediction: Option<LifespanPrediction>,
    pub note: String,
}

/// Fits the blowup records of a finished ladder against the predicted exponent.
pub fn analyze(cfg: &SweepConfig, records: &[SweepRecord]) -> Result<SweepReport> {
    let mp = cfg.model(cfg.eps_ladder[0])?;
    let region = classify(&mp);
    let prediction = predict_lifespan(&mp).ok();
    let exponential = prediction.is_some_and(|p| p.kind == LifespanKind::Exponential);
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.lifespan.map(|t| (r.eps, if exponential { t.ln() } else { t })))
        .filter(|&(_, y)| y > 0.0)
        .collect();
    if points.len() < MIN_BLOWUPS {
        return Err(Error::InsufficientBlowups { found: points.len(), needed: MIN_BLOWUPS });
    }
    let fit = fit_loglog(&points, MIN_BLOWUPS)?;
    let (measured_exponent, predicted_exponent) = if exponential {
        (fit.slope, prediction.map(|p| -p.exponent))
    } else {
        (-fit.slope, prediction.map(|p| p.exponent))
    };
    let mut note = String::from("measured exponent vs the upper-bound exponent");
    if exponential {
        note.push_str("; critical curve: slope of log log T against log eps");
    }
    if region == Region::Omega3 {
        note.push_str("; the Omega3 bound is not expected to be sharp");
    }
    if prediction.is_none() {
        note.push_str("; parameters lie outside every region, no prediction");
    }
    Ok(SweepReport {
        config: cfg.clone(),
        records: records.to_vec(),
        region,
        fit,
        measured_exponent,
        predicted_exponent,
        prediction,
        note,
    })
}

pub fn sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let records = run_ladder(cfg)?;
    analyze(cfg, &records)
}
