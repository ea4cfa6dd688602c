//! `rostf` command-line tool: simulate fixtures, fuse observations, evaluate
//! estimates, and run whole synthetic cases.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rostf::experiment::run_case;
use rostf::fusion::{default_params, fuse_with, FusionInput};
use rostf::metrics::evaluate;
use rostf::ppds::StoppingRule;
use rostf::raster::{read_raster, write_png, write_raster, PngScaling};
use rostf::simulate::{make_fixture, write_fixture, FixtureSpec};
use rostf::{CaseConfig, Exec, RostfParams};

use manifest::{now, write_json, NoiseLevels, RunManifest, SCHEMA_VERSION};

const EXIT_USAGE: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "rostf", version, about = "Robust optimization-based spatiotemporal fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic fixture: h_r.bmr, l_r.bmr, l_t.bmr, h_t.bmr (truth) and manifest.json.
    Simulate(SimulateArgs),
    /// Fuse an HR reference image and two LR images into an HR target estimate.
    Fuse(FuseArgs),
    /// Score an estimate against ground truth (RMSE, SAM, MSSIM, CC).
    Evaluate(EvaluateArgs),
    /// Simulate a noise case, fuse it and write a report.
    Runcase(RuncaseArgs),
}

#[derive(Args, Debug)]
struct FixtureArgs {
    /// Side length of the square HR image.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    bands: usize,
    /// Resolution ratio between HR and LR grids.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Number of Voronoi regions in the scene.
    #[arg(long, default_value_t = 6)]
    regions: usize,
}

impl FixtureArgs {
    fn spec(&self, seed: u64) -> FixtureSpec {
        FixtureSpec {
            height: self.size,
            width: self.size,
            bands: self.bands,
            k: self.k,
            regions: self.regions,
            ..FixtureSpec::standard(seed)
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Noise case: case1 (clean), case2 (σ_h = 0.05), case3 (r_h = 0.05), case4 (both).
    #[arg(long)]
    case: String,
    #[command(flatten)]
    fixture: FixtureArgs,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StopArgs {
    /// Stop when the relative change of every variable falls below this.
    #[arg(long, default_value_t = StoppingRule::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = StoppingRule::default().max_iters)]
    max_iters: usize,
    /// Run single-threaded (results are identical).
    #[arg(long)]
    sequential: bool,
}

impl StopArgs {
    fn rule(&self) -> StoppingRule {
        StoppingRule {
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Observed HR image on the reference date.
    #[arg(long)]
    hr: PathBuf,
    /// Observed LR image on the reference date.
    #[arg(long)]
    lr_ref: PathBuf,
    /// Observed LR image on the target date.
    #[arg(long)]
    lr_tgt: PathBuf,
    /// Edge-similarity norm: 1 or 2.
    #[arg(long, default_value_t = 2)]
    p: u8,
    /// Gaussian noise level of the HR image.
    #[arg(long, default_value_t = 0.0)]
    sigma_h: f64,
    /// Salt-and-pepper rate of the HR image.
    #[arg(long, default_value_t = 0.0)]
    r_h: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_l: f64,
    #[arg(long, default_value_t = 0.0)]
    r_l: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Override the edge-similarity radius.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps_h: Option<f64>,
    #[arg(long)]
    eps_l: Option<f64>,
    #[arg(long)]
    eta_h: Option<f64>,
    #[arg(long)]
    eta_l: Option<f64>,
    /// Load every parameter from a params.json instead of deriving defaults.
    #[arg(long, conflicts_with_all = ["alpha", "eps_h", "eps_l", "eta_h", "eta_l"])]
    params: Option<PathBuf>,
    #[command(flatten)]
    stop: StopArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write PNG previews (first three bands as RGB).
    #[arg(long)]
    png: bool,
    /// PNG scaling: "fixed" clamps [0, 1], "minmax" stretches each band.
    #[arg(long, value_parser = parse_scaling, default_value = "fixed")]
    png_scaling: PngScaling,
}

fn parse_scaling(s: &str) -> Result<PngScaling, String> {
    match s {
        "fixed" => Ok(PngScaling::Fixed),
        "minmax" => Ok(PngScaling::MinMax),
        other => Err(format!("expected fixed or minmax, got {other}")),
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Write the report as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RuncaseArgs {
    #[arg(long)]
    case: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Fuse with only this edge norm (default: both 1 and 2).
    #[arg(long)]
    p: Option<u8>,
    #[command(flatten)]
    fixture: FixtureArgs,
    #[command(flatten)]
    stop: StopArgs,
    /// Output directory (default: runcase-<case>-<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Runcase(a) => cmd_runcase(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: reached max iterations before the tolerance was met");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn case_config(case: &str, seed: u64) -> Result<CaseConfig> {
    match CaseConfig::by_name(case, seed) {
        Some(c) => Ok(c),
        None => bail!("unknown case {case:?}; expected one of case1, case2, case3, case4"),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<bool> {
    let noise = case_config(&a.case, a.seed)?;
    let spec = a.fixture.spec(a.seed);
    let fixture = make_fixture(&spec, &noise)?;
    write_fixture(&a.out, &fixture, &spec, &a.case, &noise)?;
    println!("wrote {} fixture to {}", a.case, a.out.display());
    Ok(true)
}

fn read(path: &Path) -> Result<rostf::MultiBandImage> {
    read_raster(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_fuse(a: &FuseArgs) -> Result<bool> {
    let started_at = now();
    let input = FusionInput::new(read(&a.hr)?, read(&a.lr_ref)?, read(&a.lr_tgt)?)?;
    let noise = CaseConfig {
        sigma_h: a.sigma_h,
        sigma_l: a.sigma_l,
        r_h: a.r_h,
        r_l: a.r_l,
        seed: 0,
    };
    noise.validate()?;
    let params = match &a.params {
        Some(path) => RostfParams::load_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let mut p = default_params(&input, &noise, a.p)?;
            p.lambda = a.lambda;
            p.alpha = a.alpha.unwrap_or(p.alpha);
            p.eps_h = a.eps_h.unwrap_or(p.eps_h);
            p.eps_l = a.eps_l.unwrap_or(p.eps_l);
            p.eta_h = a.eta_h.unwrap_or(p.eta_h);
            p.eta_l = a.eta_l.unwrap_or(p.eta_l);
            p
        }
    };
    let stop = a.stop.rule();
    let out = fuse_with(&input, &params, stop, a.stop.exec())?;

    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for (name, img) in [
        ("h_t_est.bmr", &out.h_t_hat),
        ("h_r_denoised.bmr", &out.h_r_denoised),
        ("s_hr.bmr", &out.s_hr),
        ("s_lr.bmr", &out.s_lr),
        ("s_lt.bmr", &out.s_lt),
    ] {
        write_raster(img, a.out.join(name))?;
        outputs.push(a.out.join(name));
    }
    if a.png {
        for (name, img) in [("h_t_est.png", &out.h_t_hat), ("h_r_denoised.png", &out.h_r_denoised)] {
            write_png(img, a.out.join(name), a.png_scaling)?;
            outputs.push(a.out.join(name));
        }
    }
    out.trace.save_csv(a.out.join("trace.csv"))?;
    params.save_json(a.out.join("params.json"))?;
    outputs.extend(["trace.csv", "params.json", "manifest.json"].map(|n| a.out.join(n)));

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "fuse".into(),
        case: None,
        seed: None,
        hr_geometry: input.hr_geometry().into(),
        k: params.k,
        noise: NoiseLevels {
            sigma_h: a.sigma_h,
            r_h: a.r_h,
            sigma_l: a.sigma_l,
            r_l: a.r_l,
        },
        params: vec![params],
        stop,
        sequential: a.stop.sequential,
        inputs: vec![a.hr.clone(), a.lr_ref.clone(), a.lr_tgt.clone()],
        outputs,
        converged: out.converged,
        iterations: vec![out.iterations],
        started_at,
        finished_at: now(),
    };
    write_json(&manifest, &a.out.join("manifest.json"))?;
    println!(
        "{} after {} iterations; wrote {}",
        if out.converged { "converged" } else { "stopped" },
        out.iterations,
        a.out.display()
    );
    Ok(out.converged)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<bool> {
    let report = evaluate(&read(&a.est)?, &read(&a.truth)?)?;
    print!("{}", report.table());
    if let Some(path) = &a.out {
        write_json(&report, path)?;
    }
    Ok(true)
}

fn cmd_runcase(a: &RuncaseArgs) -> Result<bool> {
    let started_at = now();
    let noise = case_config(&a.case, a.seed)?;
    let ps: Vec<u8> = match a.p {
        Some(p @ (1 | 2)) => vec![p],
        Some(p) => bail!("p must be 1 or 2, got {p}"),
        None => vec![1, 2],
    };
    let spec = a.fixture.spec(a.seed);
    let stop = a.stop.rule();
    let run = run_case(&a.case, &spec, a.seed, &ps, stop, a.stop.exec())?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runcase-{}-{}", a.case, a.seed)));
    let report = run.write(&dir)?;
    print!("{}", report.table());

    let converged = report.variants.iter().all(|v| v.converged);
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: "runcase".into(),
        case: Some(a.case.clone()),
        seed: Some(a.seed),
        hr_geometry: spec.geometry()?.into(),
        k: spec.k,
        noise: NoiseLevels {
            sigma_h: noise.sigma_h,
            r_h: noise.r_h,
            sigma_l: noise.sigma_l,
            r_l: noise.r_l,
        },
        params: run.runs.iter().map(|r| r.params.clone()).collect(),
        stop,
        sequential: a.stop.sequential,
        inputs: Vec::new(),
        outputs: vec![dir.join("report.json")],
        converged,
        iterations: report.variants.iter().map(|v| v.iterations).collect(),
        started_at,
        finished_at: now(),
    };
    write_json(&manifest, &dir.join("run_manifest.json"))?;
    Ok(converged)
}
