use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use blowup_core::exponents::{
    choose_proof_params, classify_point, predict_lifespan, strauss_root, ModelParams, Region,
};
use blowup_core::functionals::{check_base2_chain, trace_from_snapshots, trick_identity_residual};
use blowup_core::odecrit::{fit_scaling, ladder, OdeCase, OdeCriterionSpec, OdeModel};
use blowup_core::report::{run_report, ReportOptions, Suite};
use blowup_core::solver::{run, GridSpec, RunOptions, RunStatus, Shape, SimResult, DEFAULT_CFL};
use blowup_core::special::{hyp2f1_integral, hyp2f1_series, hyp2f1_with, HypTriple, SeriesTolerance, SERIES_Z_MAX};
use blowup_core::sweep::{analyze, run_ladder, SweepConfig};
use blowup_core::testfn::{cone_samples, envelope_ratio, pde_residual, phi_dt_identity_residual, TestFunctionSpec};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "blowlab", version, about = "Lifespan experiments for damped semilinear wave equations")]
struct Cli {
    /// Seed for every sampled point set.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file for the main artifact; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate 2F1(a, b; c; z) and compare the series and integral routes.
    Hyp2f1 {
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        #[arg(long, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
    },
    /// Region of (p, V0) and the predicted lifespan exponent.
    Classify {
        #[arg(long = "N")]
        n: u32,
        #[arg(long = "V0")]
        v0: f64,
        #[arg(long, required_unless_present = "critical")]
        p: Option<f64>,
        /// Use the critical power p0(N + V0).
        #[arg(long)]
        critical: bool,
    },
    /// Residual and envelope checks for one test function.
    TestfnCheck {
        #[arg(long)]
        beta: f64,
        #[arg(long = "N")]
        n: u32,
        #[arg(long = "V0")]
        v0: f64,
        /// Lattice points per axis.
        #[arg(long, default_value_t = 10)]
        grid: usize,
    },
    /// One solver run, written as JSON.
    Simulate(SimulateArgs),
    /// Functional traces of a stored run.
    Functionals {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, required_unless_present = "proof_params")]
        beta: Option<f64>,
        /// Take beta from the proof parameters of the run's model.
        #[arg(long, value_parser = ["auto"])]
        proof_params: Option<String>,
    },
    /// Blowup points of the ODE criterion over an eps ladder.
    OdeCriterion {
        #[arg(long)]
        case: OdeCase,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 3.0)]
        c: f64,
        #[arg(long = "C", default_value_t = 1.0)]
        ccoef: f64,
        /// Comma-separated eps values.
        #[arg(long, value_delimiter = ',', required = true)]
        eps_ladder: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma0: f64,
        /// Impose the lower bounds for all sigma (obstacle) or only initially.
        #[arg(long, default_value = "obstacle", value_parser = ["obstacle", "initial-value"])]
        model: String,
    },
    /// Solver runs over an eps ladder and the fitted lifespan exponent.
    Sweep(SweepArgs),
    /// Run the verification suites.
    Report {
        #[arg(long)]
        only: Option<Suite>,
        /// Override every tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Flat JSON file of settings; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Space dimension (3 to 5).
    #[arg(long = "N")]
    n: Option<u32>,
    /// Damping strength.
    #[arg(long = "V0")]
    v0: Option<f64>,
    /// Nonlinearity exponent.
    #[arg(long)]
    p: Option<f64>,
    /// Support radius of the initial data [default: 1].
    #[arg(long = "R0")]
    r0: Option<f64>,
    /// Radial cell width.
    #[arg(long)]
    dr: Option<f64>,
    /// dt/dr [default: 0.5].
    #[arg(long)]
    cfl: Option<f64>,
    /// Final time.
    #[arg(long)]
    tmax: Option<f64>,
    /// Rerun blowups on the halved grid and Richardson-combine the lifespans.
    #[arg(long)]
    refine: bool,
    /// Initial profile: bump or truncated_cosine.
    #[arg(long)]
    shape: Option<Shape>,
}

impl ModelArgs {
    /// Config file values overlaid by whichever flags were given.
    fn merged(&self) -> Result<Map<String, Value>> {
        let mut map = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
                    Value::Object(m) => m,
                    _ => bail!(usage("config file must hold a JSON object")),
                }
            }
            None => Map::new(),
        };
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                map.insert(key.to_string(), v);
            }
        };
        set("N", self.n.map(Value::from));
        set("V0", self.v0.map(Value::from));
        set("p", self.p.map(Value::from));
        set("R0", self.r0.map(Value::from));
        set("dr", self.dr.map(Value::from));
        set("cfl", self.cfl.map(Value::from));
        set("t_max", self.tmax.map(Value::from));
        set("refine", self.refine.then_some(Value::Bool(true)));
        set("shape", self.shape.map(|s| serde_json::to_value(s).unwrap()));
        Ok(map)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Data amplitude.
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    /// Evenly spaced snapshots from 0 to tmax, inclusive.
    #[arg(long)]
    snapshot_count: Option<usize>,
    /// Also write each snapshot as CSV (r,u,v) into this directory.
    #[arg(long)]
    snapshot_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated, strictly decreasing, at least 3 values.
    #[arg(long, value_delimiter = ',')]
    eps_ladder: Option<Vec<f64>>,
    /// Where to write the JSON report; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> Usage {
    Usage(msg.into())
}

/// Non-zero exit without an error message, after the outcome has been reported.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<blowup_core::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Writes to `--out` if given, otherwise to stdout.
fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Hyp2f1 { a, b, c, z } => cmd_hyp2f1(out, *a, *b, *c, *z),
        Command::Classify { n, v0, p, critical } => cmd_classify(out, *n, *v0, *p, *critical),
        Command::TestfnCheck { beta, n, v0, grid } => cmd_testfn_check(out, cli.seed, *beta, *n, *v0, *grid),
        Command::Simulate(args) => cmd_simulate(out, cli.seed, args),
        Command::Functionals { run, beta, proof_params } => {
            cmd_functionals(out, cli.seed, run, *beta, proof_params.is_some())
        }
        Command::OdeCriterion { case, p, c, ccoef, eps_ladder, sigma0, model } => {
            let model = if model == "obstacle" { OdeModel::Obstacle } else { OdeModel::InitialValue };
            let spec = OdeCriterionSpec { model, ..OdeCriterionSpec::new(*case, *p, *c, *ccoef, 1.0, *sigma0)? };
            cmd_ode_criterion(out, cli.seed, &spec, eps_ladder)
        }
        Command::Sweep(args) => cmd_sweep(out, cli.seed, args),
        Command::Report { only, tolerance } => {
            let report = run_report(&ReportOptions { seed: cli.seed, only: *only, tolerance: *tolerance });
            emit_json(out, &report)?;
            for c in report.failures() {
                eprintln!("FAILED {}: {} (observed {:e}, tolerance {:e})", c.suite, c.name, c.observed, c.tolerance);
            }
            if report.passed {
                Ok(())
            } else {
                Err(Exit(EXIT_CHECK_FAILED).into())
            }
        }
    }
}

fn cmd_hyp2f1(out: Option<&Path>, a: f64, b: f64, c: f64, z: f64) -> Result<()> {
    let t = HypTriple::new(a, b, c)?;
    let (value, route) = hyp2f1_with(&t, z, SeriesTolerance::default())?;
    let dual = (t.euler_admissible() && (0.0..=SERIES_Z_MAX).contains(&z))
        .then(|| -> Result<(f64, f64)> { Ok((hyp2f1_series(&t, z)?, hyp2f1_integral(&t, z)?)) })
        .transpose()?;
    let mut doc = json!({ "a": a, "b": b, "c": c, "z": z, "value": value, "route": format!("{route:?}") });
    if let Some((s, i)) = dual {
        doc["series"] = json!(s);
        doc["integral"] = json!(i);
        doc["discrepancy"] = json!((s - i).abs() / (1.0 + s.abs()));
    } else {
        doc["discrepancy"] = Value::Null;
    }
    emit_json(out, &doc)
}

fn cmd_classify(out: Option<&Path>, n: u32, v0: f64, p: Option<f64>, critical: bool) -> Result<()> {
    let p = match (critical, p) {
        (true, _) => strauss_root(n as f64 + v0)?,
        (false, Some(p)) => p,
        (false, None) => bail!(usage("either --p or --critical is required")),
    };
    let region = classify_point(n, v0, p);
    let mut doc = json!({ "region": region.as_str(), "N": n, "V0": v0, "p": p, "kind": null, "exponent": null, "delta_note": null });
    if region != Region::Outside {
        let pred = predict_lifespan(&ModelParams::new(n, v0, p, 1.0, 1.0)?)?;
        doc["kind"] = serde_json::to_value(pred.kind)?;
        doc["exponent"] = json!(pred.exponent);
        doc["delta_note"] = json!(pred.delta_note);
    }
    emit_json(out, &doc)
}

fn cmd_testfn_check(out: Option<&Path>, seed: u64, beta: f64, n: u32, v0: f64, grid: usize) -> Result<()> {
    if grid < 2 {
        bail!(usage("--grid must be at least 2"));
    }
    let spec = TestFunctionSpec::new(beta, n, v0)?;
    let mut pts = Vec::with_capacity(grid * grid);
    for k in 0..grid {
        let t = 0.5 + 4.5 * k as f64 / (grid - 1) as f64;
        for i in 0..grid {
            pts.push(((0.05 + 0.63 * i as f64 / (grid - 1) as f64) * (2.0 + t), t));
        }
    }
    let max_over = |f: &dyn Fn(f64, f64) -> blowup_core::Result<f64>| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &(r, t) in &pts {
            worst = worst.max(f(r, t)?);
        }
        Ok(worst)
    };
    let identity = max_over(&|r, t| phi_dt_identity_residual(&spec, r, t, 1e-4))?;
    let coarse = max_over(&|r, t| pde_residual(&spec, r, t, 2e-3))?;
    let fine = max_over(&|r, t| pde_residual(&spec, r, t, 1e-3))?;
    let order = (coarse / fine).log2();
    let (lo, hi) = envelope_ratio(&spec, &cone_samples(seed, 1000, 100.0))?;
    let passed = identity < 1e-6 && fine < 1e-5 && (1.8..=2.2).contains(&order);
    emit_json(
        out,
        &json!({
            "seed": seed,
            "beta": beta, "N": n, "V0": v0, "regime": spec.regime(),
            "lattice_points": pts.len(),
            "dt_identity_residual": { "h": 1e-4, "max": identity, "tolerance": 1e-6 },
            "pde_residual": { "h": [2e-3, 1e-3], "max": [coarse, fine], "tolerance": 1e-5, "observed_order": order },
            "envelope": { "samples": 1000, "t_max": 100.0, "min_ratio": lo, "max_ratio": hi },
            "passed": passed,
        }),
    )?;
    if passed {
        Ok(())
    } else {
        Err(Exit(EXIT_CHECK_FAILED).into())
    }
}

fn require<T: serde::de::DeserializeOwned>(map: &Map<String, Value>, key: &str) -> Result<T> {
    let v = map.get(key).ok_or_else(|| usage(format!("missing setting {key}")))?;
    serde_json::from_value(v.clone()).map_err(|e| usage(format!("bad value for {key}: {e}")).into())
}

fn optional<T: serde::de::DeserializeOwned>(map: &Map<String, Value>, key: &str, default: T) -> Result<T> {
    if map.contains_key(key) {
        require(map, key)
    } else {
        Ok(default)
    }
}

fn cmd_simulate(out: Option<&Path>, seed: u64, args: &SimulateArgs) -> Result<()> {
    let mut cfg = args.model.merged()?;
    if let Some(e) = args.eps {
        cfg.insert("eps".into(), e.into());
    }
    if let Some(s) = &args.snapshots {
        cfg.insert("snapshots".into(), json!(s));
    }
    let mp = ModelParams::new(
        require(&cfg, "N")?,
        require(&cfg, "V0")?,
        require(&cfg, "p")?,
        require(&cfg, "eps")?,
        optional(&cfg, "R0", 1.0)?,
    )?;
    let t_max: f64 = require(&cfg, "t_max")?;
    let grid = GridSpec::for_model(&mp, require(&cfg, "dr")?, optional(&cfg, "cfl", DEFAULT_CFL)?, t_max)?;
    let mut snapshot_times: Vec<f64> = optional(&cfg, "snapshots", Vec::new())?;
    if let Some(k) = args.snapshot_count {
        if k < 2 {
            bail!(usage("--snapshot-count must be at least 2"));
        }
        snapshot_times.extend((0..k).map(|i| t_max * i as f64 / (k - 1) as f64));
    }
    snapshot_times.sort_by(f64::total_cmp);
    snapshot_times.dedup();
    let opts = RunOptions {
        shape: optional(&cfg, "shape", Shape::default())?,
        refine: optional(&cfg, "refine", false)?,
        snapshot_times,
        ..RunOptions::default()
    };
    let result = run(&mp, &grid, &opts)?;
    emit_json(out, &result)?;
    if let Some(dir) = &args.snapshot_csv {
        std::fs::create_dir_all(dir)?;
        for (k, snap) in result.snapshots.iter().enumerate() {
            let mut w = csv::Writer::from_path(dir.join(format!("snapshot_{k:04}.csv")))?;
            w.write_record(["r", "u", "v"])?;
            for j in 0..snap.len() {
                w.serialize((snap.radius(j), snap.u[j], snap.v[j]))?;
            }
            w.flush()?;
        }
    }
    let summary = json!({
        "seed": seed,
        "status": result.status,
        "lifespan": result.lifespan_estimate,
        "snapshots": result.snapshots.len(),
    });
    if out.is_some() {
        println!("{}", serde_json::to_string(&summary)?);
    }
    if result.status == RunStatus::Unstable {
        return Err(Exit(EXIT_NUMERICAL).into());
    }
    Ok(())
}

fn cmd_functionals(out: Option<&Path>, seed: u64, run_path: &Path, beta: Option<f64>, auto: bool) -> Result<()> {
    let text = std::fs::read_to_string(run_path).with_context(|| format!("reading {}", run_path.display()))?;
    let run: SimResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", run_path.display()))?;
    if run.snapshots.len() < 2 {
        bail!(usage(
            "the run needs at least two snapshots, starting at t = 0 (simulate --snapshots or --snapshot-count)"
        ));
    }
    let mp = run.params;
    let proof = choose_proof_params(&mp, 0.01).ok();
    let beta = match (auto, beta, proof) {
        (true, _, Some(pp)) if pp.region == Region::Omega0 => pp.beta0,
        (true, _, Some(pp)) => pp.beta,
        (true, _, None) => bail!(usage("proof parameters are undefined outside the classified regions")),
        (false, Some(b), _) => b,
        (false, None, _) => bail!(usage("either --beta or --proof-params auto is required")),
    };
    let spec = TestFunctionSpec::new(beta, mp.n, mp.v0)?;
    let trace = trace_from_snapshots(&run, &spec)?;
    {
        let mut w = csv::Writer::from_writer(sink(out)?);
        w.write_record(["t", "G", "H", "J", "identity_residual", "lp_norm"])?;
        for k in 0..trace.len() {
            w.serialize((
                trace.times[k],
                trace.g[k],
                trace.h[k],
                trace.j[k],
                trace.identity_residual[k],
                trace.lp_norm[k],
            ))?;
        }
        w.flush()?;
    }
    let chain = proof.map(|pp| check_base2_chain(&trace, &mp, &pp));
    let summary = json!({
        "seed": seed,
        "beta": beta,
        "E0": trace.e0,
        "E1": trace.e1,
        "C1_eff": chain.as_ref().map(|c| c.c1_eff),
        "chain": chain,
        "max_identity_residual": trick_identity_residual(&trace),
        "samples": trace.len(),
    });
    let text = serde_json::to_string_pretty(&summary)?;
    if out.is_some() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

fn cmd_ode_criterion(out: Option<&Path>, seed: u64, spec: &OdeCriterionSpec, eps: &[f64]) -> Result<()> {
    let records = ladder(spec, eps)?;
    {
        let mut w = csv::Writer::from_writer(sink(out)?);
        w.write_record(["eps", "sigma_star"])?;
        for r in &records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let fit = if records.len() >= 4 { Some(fit_scaling(&records)?) } else { None };
    let summary = json!({
        "seed": seed,
        "case": spec.case,
        "p": spec.p,
        "model": spec.model,
        "fit": fit,
        "predicted_slope": spec.case.exponent(spec.p),
    });
    let text = serde_json::to_string_pretty(&summary)?;
    if out.is_some() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

fn cmd_sweep(out: Option<&Path>, seed: u64, args: &SweepArgs) -> Result<()> {
    let mut map = args.model.merged()?;
    if let Some(l) = &args.eps_ladder {
        map.insert("eps_ladder".into(), json!(l));
    }
    let cfg: SweepConfig =
        serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("bad sweep configuration: {e}")))?;
    let records = run_ladder(&cfg)?;
    {
        let mut w = csv::Writer::from_writer(sink(out)?);
        w.write_record(["eps", "lifespan", "status"])?;
        for r in &records {
            let status = serde_json::to_value(r.status)?;
            w.write_record([
                r.eps.to_string(),
                r.lifespan.map_or(String::new(), |t| t.to_string()),
                status.as_str().unwrap_or("").to_string(),
            ])?;
        }
        w.flush()?;
    }
    let report = analyze(&cfg, &records)?;
    let mut doc = serde_json::to_value(&report)?;
    doc["seed"] = json!(seed);
    emit_json(args.report.as_deref(), &doc)
}
