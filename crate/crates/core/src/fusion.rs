//! The fusion problem on top of the generic primal-dual solver.
//!
//! Unknowns: the denoised reference image `h̃_r`, the target estimate `h̃_t`,
//! and sparse-noise estimates `s̃_hr`, `s̃_lr`, `s̃_lt`. The program is
//!
//! ```text
//! min ‖D h̃_r‖₁,₂ + λ ‖D h̃_t‖₁,₂
//! s.t. ‖D h̃_r − D h̃_t‖_p ≤ α
//!      |c_b − mean([h̃_t]_b)| ≤ β_b                  for every band b
//!      ‖h_r − (h̃_r + s̃_hr)‖₂ ≤ ε_h
//!      ‖l_r − (S B h̃_r + s̃_lr)‖₂ ≤ ε_l
//!      ‖l_t − (S B h̃_t + s̃_lt)‖₂ ≤ ε_l
//!      ‖s̃_hr‖₁ ≤ η_h,  ‖s̃_lr‖₁ ≤ η_l,  ‖s̃_lt‖₁ ≤ η_l
//! ```
//!
//! and is split into five primal slots and six dual slots
//! (`z₁ = D h̃_r`, `z₂ = D h̃_t`, `z₃ = D h̃_r − D h̃_t`, `z₄ = h̃_r + s̃_hr`,
//! `z₅ = S B h̃_r + s̃_lr`, `z₆ = S B h̃_t + s̃_lt`).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linops::{BlurDownsample, DiffOperator, Identity, LinearOperator, Scaled};
use crate::ppds::{self, ProblemGraph, SolverState, StoppingRule, Trace};
use crate::prox::{BallIndicator, BallSpec, BlockHyperslabs, HyperslabSpec, L12Norm, NormOrder, Prox, Zero};
use crate::raster::{Geometry, MultiBandImage};
use crate::simulate::CaseConfig;

/// Lower bound applied to the default brightness radius β_b.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RostfParams {
    /// Weight of the target image's total variation.
    pub lambda: f64,
    /// Norm used for edge similarity (1 or 2).
    pub p: u8,
    /// Edge-similarity radius.
    pub alpha: f64,
    /// Per-band brightness radius.
    pub beta: Vec<f64>,
    /// Per-band expected target brightness.
    pub c: Vec<f64>,
    pub eps_h: f64,
    pub eps_l: f64,
    pub eta_h: f64,
    pub eta_l: f64,
    /// Resolution ratio between the HR and LR grids.
    pub k: usize,
}

impl RostfParams {
    pub fn validate(&self, bands: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if NormOrder::from_p(self.p).is_none() {
            return bad(format!("p must be 1 or 2, got {}", self.p));
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("eps_h", self.eps_h),
            ("eps_l", self.eps_l),
            ("eta_h", self.eta_h),
            ("eta_l", self.eta_l),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.beta.len() != bands || self.c.len() != bands {
            return bad(format!(
                "beta and c need {bands} entries, got {} and {}",
                self.beta.len(),
                self.c.len()
            ));
        }
        if self.beta.iter().any(|b| !b.is_finite() || *b < 0.0) || self.c.iter().any(|c| !c.is_finite()) {
            return bad("beta must be non-negative and c finite".into());
        }
        Ok(())
    }

    pub fn norm_order(&self) -> NormOrder {
        NormOrder::from_p(self.p).expect("validated p")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Observed reference HR image and the two LR images.
#[derive(Clone, Debug)]
pub struct FusionInput {
    pub h_r: MultiBandImage,
    pub l_r: MultiBandImage,
    pub l_t: MultiBandImage,
}

impl FusionInput {
    pub fn new(h_r: MultiBandImage, l_r: MultiBandImage, l_t: MultiBandImage) -> Result<Self> {
        let input = FusionInput { h_r, l_r, l_t };
        input.factor()?;
        Ok(input)
    }

    /// Resolution factor implied by the geometries.
    pub fn factor(&self) -> Result<usize> {
        let (h, l, t) = (self.h_r.geometry(), self.l_r.geometry(), self.l_t.geometry());
        if l != t {
            return Err(Error::Geometry(format!("l_r is {l:?} but l_t is {t:?}")));
        }
        if h.bands != l.bands {
            return Err(Error::Geometry(format!(
                "h_r has {} bands, LR images have {}",
                h.bands, l.bands
            )));
        }
        let k = h.height / l.height;
        if k == 0 || h.height != k * l.height || h.width != k * l.width {
            return Err(Error::Geometry(format!(
                "h_r {}x{} is not an integer multiple of LR {}x{}",
                h.height, h.width, l.height, l.width
            )));
        }
        Ok(k)
    }

    pub fn hr_geometry(&self) -> Geometry {
        self.h_r.geometry()
    }

    pub fn lr_geometry(&self) -> Geometry {
        self.l_r.geometry()
    }
}

/// Default parameters for known noise levels.
pub fn default_params(input: &FusionInput, noise: &CaseConfig, p: u8) -> Result<RostfParams> {
    let k = input.factor()?;
    let hr = input.hr_geometry();
    let lr = input.lr_geometry();
    let nh_b = hr.len() as f64;
    let nl_b = lr.len() as f64;

    let alpha = match NormOrder::from_p(p) {
        Some(NormOrder::L1) => 2e-3 * nh_b,
        Some(NormOrder::L2) => 1e-6 * nh_b,
        None => return Err(Error::InvalidParameter(format!("p must be 1 or 2, got {p}"))),
    };
    let hr_means = input.h_r.band_means();
    let lr_means = input.l_r.band_means();
    let lt_means = input.l_t.band_means();
    let beta = lr_means
        .iter()
        .zip(&hr_means)
        .map(|(l, h)| (l - h).abs().max(BETA_FLOOR))
        .collect();
    let c = lt_means
        .iter()
        .map(|m| m - noise.r_l * (0.5 - m))
        .collect();
    let eps_h = 0.98 * noise.sigma_h * (nh_b * (1.0 - noise.r_h)).sqrt();
    let sb = BlurDownsample::new(hr, k)?;
    let predicted = sb.forward(input.h_r.data())?;
    let eps_l = input
        .l_r
        .data()
        .iter()
        .zip(&predicted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(RostfParams {
        lambda: 1.0,
        p,
        alpha,
        beta,
        c,
        eps_h,
        eps_l,
        eta_h: 0.5 * noise.r_h * nh_b,
        eta_l: 0.5 * noise.r_l * nl_b,
        k,
    })
}

/// Slot indices of the assembled problem.
pub mod slots {
    pub const H_R: usize = 0;
    pub const H_T: usize = 1;
    pub const S_HR: usize = 2;
    pub const S_LR: usize = 3;
    pub const S_LT: usize = 4;
}

pub struct RostfProblem {
    pub graph: ProblemGraph,
    pub hr: Geometry,
    pub lr: Geometry,
}

pub fn build_problem(input: &FusionInput, params: &RostfParams, exec: Exec) -> Result<RostfProblem> {
    let hr = input.hr_geometry();
    let lr = input.lr_geometry();
    params.validate(hr.bands)?;
    let k = input.factor()?;
    if k != params.k {
        return Err(Error::Geometry(format!(
            "images imply factor {k}, parameters say {}",
            params.k
        )));
    }
    let n_h = hr.pixels();
    let (nh_b, nl_b) = (hr.len(), lr.len());

    let d: Arc<dyn LinearOperator> = Arc::new(DiffOperator::stacked(hr).with_exec(exec));
    let neg_d: Arc<dyn LinearOperator> = Arc::new(Scaled::new(d.clone(), -1.0));
    let sb: Arc<dyn LinearOperator> = Arc::new(BlurDownsample::new(hr, k)?.with_exec(exec));
    let id_h: Arc<dyn LinearOperator> = Arc::new(Identity::new(nh_b));
    let id_l: Arc<dyn LinearOperator> = Arc::new(Identity::new(nl_b));

    let slabs = BlockHyperslabs {
        block_len: n_h,
        slabs: params
            .c
            .iter()
            .zip(&params.beta)
            .map(|(c, b)| HyperslabSpec::new(c * n_h as f64, b * n_h as f64))
            .collect(),
    };
    let l1 = |r: f64| -> Arc<dyn Prox> {
        Arc::new(BallIndicator::new(BallSpec::origin(NormOrder::L1, r)).with_exec(exec))
    };
    let l2 = |c: &MultiBandImage, r: f64| -> Arc<dyn Prox> {
        Arc::new(BallIndicator::new(BallSpec::centered(NormOrder::L2, c.data().to_vec(), r)).with_exec(exec))
    };

    let mut g = ProblemGraph::new().with_exec(exec);
    let h_r = g.add_primal("h_r", nh_b, Arc::new(Zero));
    let h_t = g.add_primal("h_t", nh_b, Arc::new(slabs));
    let s_hr = g.add_primal("s_hr", nh_b, l1(params.eta_h));
    let s_lr = g.add_primal("s_lr", nl_b, l1(params.eta_l));
    let s_lt = g.add_primal("s_lt", nl_b, l1(params.eta_l));
    debug_assert_eq!([h_r, h_t, s_hr, s_lr, s_lt], [0, 1, 2, 3, 4]);

    let grad_len = 2 * nh_b;
    let z1 = g.add_dual("z1_tv_r", grad_len, Arc::new(L12Norm { weight: 1.0, pixels: n_h }));
    let z2 = g.add_dual(
        "z2_tv_t",
        grad_len,
        Arc::new(L12Norm {
            weight: params.lambda,
            pixels: n_h,
        }),
    );
    let z3 = g.add_dual(
        "z3_edge",
        grad_len,
        Arc::new(BallIndicator::new(BallSpec::origin(params.norm_order(), params.alpha)).with_exec(exec)),
    );
    let z4 = g.add_dual("z4_fid_hr", nh_b, l2(&input.h_r, params.eps_h));
    let z5 = g.add_dual("z5_fid_lr", nl_b, l2(&input.l_r, params.eps_l));
    let z6 = g.add_dual("z6_fid_lt", nl_b, l2(&input.l_t, params.eps_l));

    g.add_edge(z1, h_r, d.clone())?;
    g.add_edge(z2, h_t, d.clone())?;
    g.add_edge(z3, h_r, d)?;
    g.add_edge(z3, h_t, neg_d)?;
    g.add_edge(z4, h_r, id_h.clone())?;
    g.add_edge(z4, s_hr, id_h)?;
    g.add_edge(z5, h_r, sb.clone())?;
    g.add_edge(z5, s_lr, id_l.clone())?;
    g.add_edge(z6, h_t, sb)?;
    g.add_edge(z6, s_lt, id_l)?;

    Ok(RostfProblem { graph: g, hr, lr })
}

/// `h̃_r = h_r`, `h̃_t` = nearest-neighbour upsampling of `l_t`, everything
/// else zero.
pub fn initial_state(problem: &RostfProblem, input: &FusionInput, k: usize) -> Result<SolverState> {
    let primal = vec![
        input.h_r.data().to_vec(),
        input.l_t.upsample_nearest(k)?.into_data(),
        vec![0.0; problem.hr.len()],
        vec![0.0; problem.lr.len()],
        vec![0.0; problem.lr.len()],
    ];
    SolverState::with_zero_duals(&problem.graph, primal)
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub h_t_hat: MultiBandImage,
    pub h_r_denoised: MultiBandImage,
    pub s_hr: MultiBandImage,
    pub s_lr: MultiBandImage,
    pub s_lt: MultiBandImage,
    pub trace: Trace,
    pub converged: bool,
    pub iterations: usize,
}

pub fn fuse(input: &FusionInput, params: &RostfParams, stop: StoppingRule) -> Result<FusionOutput> {
    fuse_with(input, params, stop, Exec::default())
}

pub fn fuse_with(input: &FusionInput, params: &RostfParams, stop: StoppingRule, exec: Exec) -> Result<FusionOutput> {
    let problem = build_problem(input, params, exec)?;
    let init = initial_state(&problem, input, params.k)?;
    let out = ppds::run(&problem.graph, init, stop)?;
    let mut p = out.state.primal.into_iter();
    let mut next = |geom| MultiBandImage::from_vec(geom, p.next().expect("five primal slots"));
    Ok(FusionOutput {
        h_r_denoised: next(problem.hr)?,
        h_t_hat: next(problem.hr)?,
        s_hr: next(problem.hr)?,
        s_lr: next(problem.lr)?,
        s_lt: next(problem.lr)?,
        trace: out.trace,
        converged: out.converged,
        iterations: out.state.iteration,
    })
}

pub const CONSTRAINT_NAMES: [&str; 8] = [
    "edge_similarity",
    "brightness",
    "fidelity_hr",
    "fidelity_lr_ref",
    "fidelity_lr_tgt",
    "sparse_hr",
    "sparse_lr_ref",
    "sparse_lr_tgt",
];

/// Signed constraint values `measure − radius` for the eight constraints,
/// in [`CONSTRAINT_NAMES`] order. Non-positive means satisfied.
pub fn constraint_residuals(output: &FusionOutput, input: &FusionInput, params: &RostfParams) -> Result<[f64; 8]> {
    let m = constraint_measures(output, input, params)?;
    let r = constraint_radii(params);
    let mut out = [0.0; 8];
    for i in 0..8 {
        out[i] = m[i] - r[i];
    }
    Ok(out)
}

/// Violations scaled by the size of the constrained quantity: for each
/// constraint, `max(residual, 0) / max(radius, reference)` where the reference
/// is the magnitude of the corresponding observed data (`‖D h_r‖_p`,
/// `max_b |c_b|`, `‖h_r‖₂`, `‖l_r‖₂`, `‖l_t‖₂`, `‖h_r‖₁`, `‖l_r‖₁`, `‖l_t‖₁`).
pub fn relative_constraint_residuals(
    output: &FusionOutput,
    input: &FusionInput,
    params: &RostfParams,
) -> Result<[f64; 8]> {
    let res = constraint_residuals(output, input, params)?;
    let radii = constraint_radii(params);
    let d = DiffOperator::stacked(input.hr_geometry());
    let dh = d.forward(input.h_r.data())?;
    let edge_ref = match params.norm_order() {
        NormOrder::L1 => dh.iter().map(|v| v.abs()).sum::<f64>(),
        NormOrder::L2 => dh.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    let refs = [
        edge_ref,
        params.c.iter().fold(0.0f64, |a, c| a.max(c.abs())),
        input.h_r.norms().l2,
        input.l_r.norms().l2,
        input.l_t.norms().l2,
        input.h_r.norms().l1,
        input.l_r.norms().l1,
        input.l_t.norms().l1,
    ];
    let mut out = [0.0; 8];
    for i in 0..8 {
        let scale = radii[i].max(refs[i]).max(f64::MIN_POSITIVE);
        out[i] = res[i].max(0.0) / scale;
    }
    Ok(out)
}

fn constraint_radii(params: &RostfParams) -> [f64; 8] {
    [
        params.alpha,
        0.0,
        params.eps_h,
        params.eps_l,
        params.eps_l,
        params.eta_h,
        params.eta_l,
        params.eta_l,
    ]
}

/// The constrained quantities; the brightness entry is already
/// `max_b (|c_b − mean_b| − β_b)` since its radius varies per band.
fn constraint_measures(output: &FusionOutput, input: &FusionInput, params: &RostfParams) -> Result<[f64; 8]> {
    let hr = input.hr_geometry();
    let k = input.factor()?;
    let d = DiffOperator::stacked(hr);
    let sb = BlurDownsample::new(hr, k)?;
    let ht = output.h_t_hat.data();
    let hrd = output.h_r_denoised.data();

    let dr = d.forward(hrd)?;
    let dt = d.forward(ht)?;
    let diff: Vec<f64> = dr.iter().zip(&dt).map(|(a, b)| a - b).collect();
    let edge = match params.norm_order() {
        NormOrder::L1 => diff.iter().map(|v| v.abs()).sum(),
        NormOrder::L2 => diff.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };

    let means = output.h_t_hat.band_means();
    let brightness = means
        .iter()
        .zip(params.c.iter().zip(&params.beta))
        .map(|(m, (c, b))| (c - m).abs() - b)
        .fold(f64::NEG_INFINITY, f64::max);

    let dist = |obs: &[f64], a: &[f64], s: &[f64]| -> f64 {
        obs.iter()
            .zip(a.iter().zip(s))
            .map(|(o, (x, y))| (o - (x + y)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let fid_hr = dist(input.h_r.data(), hrd, output.s_hr.data());
    let fid_lr = dist(input.l_r.data(), &sb.forward(hrd)?, output.s_lr.data());
    let fid_lt = dist(input.l_t.data(), &sb.forward(ht)?, output.s_lt.data());

    Ok([
        edge,
        brightness,
        fid_hr,
        fid_lr,
        fid_lt,
        output.s_hr.norms().l1,
        output.s_lr.norms().l1,
        output.s_lt.norms().l1,
    ])
}

/// `‖D x‖₁,₂`, the hyperspectral total variation.
pub fn htv(img: &MultiBandImage) -> f64 {
    let d = DiffOperator::stacked(img.geometry());
    let dx = d.forward(img.data()).expect("geometry matches");
    crate::prox::l12_norm(&dx, img.pixels())
}
