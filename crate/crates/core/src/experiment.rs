//! End-to-end synthetic experiment: build a fixture, fuse it with one or both
//! edge-similarity norms, and score the results against ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fusion::{self, FusionOutput, RostfParams, CONSTRAINT_NAMES};
use crate::metrics::{self, MetricsReport};
use crate::ppds::StoppingRule;
use crate::raster::write_raster;
use crate::simulate::{make_fixture, write_fixture, CaseConfig, Fixture, FixtureSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One fusion run inside an experiment.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub p: u8,
    pub params: RostfParams,
    pub output: FusionOutput,
}

#[derive(Clone, Debug)]
pub struct CaseRun {
    pub case: String,
    pub spec: FixtureSpec,
    pub noise: CaseConfig,
    pub stop: StoppingRule,
    pub fixture: Fixture,
    pub runs: Vec<VariantRun>,
}

/// Reference scores that involve no fusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Observed HR image against the clean reference-date image.
    pub observed_hr_vs_reference_truth: MetricsReport,
    /// Observed HR image used directly as the target prediction.
    pub observed_hr_vs_target_truth: MetricsReport,
    /// Nearest-neighbour upsampled target LR image.
    pub upsampled_lt_vs_target_truth: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub p: u8,
    pub converged: bool,
    pub iterations: usize,
    pub metrics: MetricsReport,
    pub relative_residuals: BTreeMap<String, f64>,
    pub params: RostfParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub schema_version: u32,
    pub case: String,
    pub noise: CaseConfig,
    pub fixture: FixtureSpec,
    pub stop: StoppingRule,
    pub baselines: Baselines,
    pub variants: Vec<VariantReport>,
}

impl CaseReport {
    pub fn variant(&self, p: u8) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.p == p)
    }

    /// Fixed-precision comparison table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<28} {:>9} {:>9} {:>9} {:>9}\n",
            self.case, "RMSE", "SAM", "MSSIM", "CC"
        );
        let mut row = |name: &str, m: &MetricsReport| {
            s.push_str(&format!(
                "{:<28} {:>9.5} {:>9.5} {:>9.5} {:>9.5}\n",
                name, m.rmse, m.sam, m.mssim, m.cc
            ));
        };
        row("observed h_r vs h_r truth", &self.baselines.observed_hr_vs_reference_truth);
        row("observed h_r vs h_t truth", &self.baselines.observed_hr_vs_target_truth);
        row("upsampled l_t vs h_t truth", &self.baselines.upsampled_lt_vs_target_truth);
        for v in &self.variants {
            row(&format!("fused p={} vs h_t truth", v.p), &v.metrics);
        }
        s
    }
}

/// Simulates the fixture and fuses it once per entry of `ps`. The variants run
/// as independent tasks under `exec`.
pub fn run_case(
    case: &str,
    spec: &FixtureSpec,
    seed: u64,
    ps: &[u8],
    stop: StoppingRule,
    exec: Exec,
) -> Result<CaseRun> {
    let noise = CaseConfig::by_name(case, seed)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown case {case:?}; expected case1..case4")))?;
    let fixture = make_fixture(spec, &noise)?;
    let runs = exec
        .map_tasks(ps.len(), |i| -> Result<VariantRun> {
            let p = ps[i];
            let params = fusion::default_params(&fixture.inputs, &noise, p)?;
            let output = fusion::fuse_with(&fixture.inputs, &params, stop, exec)?;
            Ok(VariantRun { p, params, output })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseRun {
        case: case.to_string(),
        spec: spec.clone(),
        noise,
        stop,
        fixture,
        runs,
    })
}

impl CaseRun {
    pub fn report(&self) -> Result<CaseReport> {
        let f = &self.fixture;
        let upsampled = f.inputs.l_t.upsample_nearest(self.spec.k)?;
        let baselines = Baselines {
            observed_hr_vs_reference_truth: metrics::evaluate(&f.inputs.h_r, &f.h_r_true)?,
            observed_hr_vs_target_truth: metrics::evaluate(&f.inputs.h_r, &f.h_t_true)?,
            upsampled_lt_vs_target_truth: metrics::evaluate(&upsampled, &f.h_t_true)?,
        };
        let variants = self
            .runs
            .iter()
            .map(|r| -> Result<VariantReport> {
                let rel = fusion::relative_constraint_residuals(&r.output, &f.inputs, &r.params)?;
                Ok(VariantReport {
                    p: r.p,
                    converged: r.output.converged,
                    iterations: r.output.iterations,
                    metrics: metrics::evaluate(&r.output.h_t_hat, &f.h_t_true)?,
                    relative_residuals: CONSTRAINT_NAMES
                        .iter()
                        .zip(rel)
                        .map(|(n, v)| (n.to_string(), v))
                        .collect(),
                    params: r.params.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CaseReport {
            schema_version: REPORT_SCHEMA_VERSION,
            case: self.case.clone(),
            noise: self.noise,
            fixture: self.spec.clone(),
            stop: self.stop,
            baselines,
            variants,
        })
    }

    /// Writes the fixture, each variant's estimates under `p{p}/`, and
    /// `report.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CaseReport> {
        let dir = dir.as_ref();
        write_fixture(dir, &self.fixture, &self.spec, &self.case, &self.noise)?;
        for r in &self.runs {
            let sub = dir.join(format!("p{}", r.p));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            write_raster(&r.output.h_t_hat, sub.join("h_t_est.bmr"))?;
            write_raster(&r.output.h_r_denoised, sub.join("h_r_denoised.bmr"))?;
            r.params.save_json(sub.join("params.json"))?;
        }
        let report = self.report()?;
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> FixtureSpec {
        FixtureSpec {
            height: 16,
            width: 16,
            bands: 2,
            k: 4,
            regions: 3,
            ..FixtureSpec::standard(2)
        }
    }

    #[test]
    fn unknown_case_is_rejected() {
        let stop = StoppingRule { tol: 1e-5, max_iters: 1 };
        assert!(run_case("case9", &small_spec(), 1, &[1], stop, Exec::Sequential).is_err());
    }

    #[test]
    fn report_lists_every_variant_and_constraint() {
        let stop = StoppingRule { tol: 1e-5, max_iters: 5 };
        let run = run_case("case4", &small_spec(), 1, &[1, 2], stop, Exec::Parallel).unwrap();
        let report = run.report().unwrap();
        assert_eq!(report.variants.len(), 2);
        assert_eq!(report.variant(2).unwrap().iterations, 5);
        for v in &report.variants {
            assert_eq!(v.relative_residuals.len(), 8);
        }
        assert!(report.table().contains("fused p=2"));
        let json = serde_json::to_string(&report).unwrap();
        let back: CaseReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn variants_do_not_depend_on_exec() {
        let stop = StoppingRule { tol: 1e-5, max_iters: 20 };
        let a = run_case("case2", &small_spec(), 3, &[1, 2], stop, Exec::Sequential).unwrap();
        let b = run_case("case2", &small_spec(), 3, &[1, 2], stop, Exec::Parallel).unwrap();
        assert_eq!(a.report().unwrap(), b.report().unwrap());
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.output.h_t_hat, y.output.h_t_hat);
        }
    }
}
