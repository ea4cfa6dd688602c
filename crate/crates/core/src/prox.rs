//! Proximity operators and projections.
//!
//! Free functions implement the closed forms; the [`Prox`] trait wraps them as
//! the per-slot oracles consumed by the primal-dual solver.

use crate::exec::Exec;

/// Set `{x : ω − α ≤ 1ᵀx ≤ ω + α}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperslabSpec {
    pub center: f64,
    pub radius: f64,
}

impl HyperslabSpec {
    pub fn new(center: f64, radius: f64) -> Self {
        assert!(radius >= 0.0, "hyperslab radius must be non-negative");
        HyperslabSpec { center, radius }
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormOrder {
    L1,
    L2,
}

impl NormOrder {
    pub fn from_p(p: u8) -> Option<Self> {
        match p {
            1 => Some(NormOrder::L1),
            2 => Some(NormOrder::L2),
            _ => None,
        }
    }

    pub fn p(self) -> u8 {
        match self {
            NormOrder::L1 => 1,
            NormOrder::L2 => 2,
        }
    }
}

/// Ball `{x : ‖x − c‖_p ≤ ε}`. A missing center means the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct BallSpec {
    pub order: NormOrder,
    pub center: Option<Vec<f64>>,
    pub radius: f64,
}

impl BallSpec {
    pub fn origin(order: NormOrder, radius: f64) -> Self {
        assert!(radius >= 0.0, "ball radius must be non-negative");
        BallSpec {
            order,
            center: None,
            radius,
        }
    }

    pub fn centered(order: NormOrder, center: Vec<f64>, radius: f64) -> Self {
        assert!(radius >= 0.0, "ball radius must be non-negative");
        BallSpec {
            order,
            center: Some(center),
            radius,
        }
    }

    /// Euclidean projection. ℓ1 balls must be origin-centred.
    pub fn project(&self, x: &mut [f64]) {
        match (self.order, &self.center) {
            (NormOrder::L2, Some(c)) => project_l2_ball_inplace(x, c, self.radius),
            (NormOrder::L2, None) => project_l2_ball_origin_inplace(x, self.radius),
            (NormOrder::L1, None) => project_l1_ball_inplace(Exec::default(), x, self.radius),
            (NormOrder::L1, Some(_)) => panic!("ℓ1-ball projection supports only origin-centred balls"),
        }
    }
}

/// Group soft-thresholding: each pixel's vector across channels is shrunk by
/// `max(1 − γ/‖g‖₂, 0)`. `x` is channel-major with `pixels` entries per channel.
pub fn prox_l12(x: &[f64], pixels: usize, gamma: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    prox_l12_inplace(&mut out, pixels, gamma);
    out
}

pub fn prox_l12_inplace(x: &mut [f64], pixels: usize, gamma: f64) {
    assert!(pixels > 0 && x.len().is_multiple_of(pixels));
    let mut factor = vec![0.0; pixels];
    for channel in x.chunks_exact(pixels) {
        factor.iter_mut().zip(channel).for_each(|(f, v)| *f += v * v);
    }
    for f in factor.iter_mut() {
        let norm = f.sqrt();
        *f = if norm > gamma { 1.0 - gamma / norm } else { 0.0 };
    }
    for channel in x.chunks_exact_mut(pixels) {
        channel.iter_mut().zip(&factor).for_each(|(v, f)| *v *= f);
    }
}

/// `Σ_n ‖g_n‖₂` with the same grouping as [`prox_l12`].
pub fn l12_norm(x: &[f64], pixels: usize) -> f64 {
    let mut sq = vec![0.0; pixels];
    for channel in x.chunks_exact(pixels) {
        sq.iter_mut().zip(channel).for_each(|(s, v)| *s += v * v);
    }
    sq.iter().map(|s| s.sqrt()).sum()
}

pub fn project_hyperslab(x: &[f64], spec: HyperslabSpec) -> Vec<f64> {
    let mut out = x.to_vec();
    project_hyperslab_inplace(&mut out, spec);
    out
}

/// Shifts `x` uniformly so its sum lands on the nearest slab boundary.
pub fn project_hyperslab_inplace(x: &mut [f64], spec: HyperslabSpec) {
    let n = x.len() as f64;
    let s: f64 = x.iter().sum();
    let shift = if s < spec.lower() {
        (spec.lower() - s) / n
    } else if s > spec.upper() {
        (spec.upper() - s) / n
    } else {
        return;
    };
    x.iter_mut().for_each(|v| *v += shift);
}

pub fn project_l2_ball(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    project_l2_ball_inplace(&mut out, center, radius);
    out
}

pub fn project_l2_ball_inplace(x: &mut [f64], center: &[f64], radius: f64) {
    assert_eq!(x.len(), center.len());
    let d = x
        .iter()
        .zip(center)
        .map(|(a, c)| (a - c) * (a - c))
        .sum::<f64>()
        .sqrt();
    if d <= radius {
        return;
    }
    let f = radius / d;
    for (a, c) in x.iter_mut().zip(center) {
        *a = c + f * (*a - c);
    }
}

pub fn project_l2_ball_origin_inplace(x: &mut [f64], radius: f64) {
    let d = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if d <= radius {
        return;
    }
    let f = radius / d;
    x.iter_mut().for_each(|a| *a *= f);
}

pub fn project_l1_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    project_l1_ball_inplace(Exec::default(), &mut out, radius);
    out
}

/// Projection onto `{z : ‖z‖₁ ≤ η}` by soft thresholding at the level found by
/// [`l1_threshold`].
pub fn project_l1_ball_inplace(exec: Exec, x: &mut [f64], radius: f64) {
    let norm1: f64 = exec.norm1(x);
    if norm1 <= radius {
        return;
    }
    if radius == 0.0 {
        x.fill(0.0);
        return;
    }
    let theta = l1_threshold(x, radius);
    for v in x.iter_mut() {
        *v = v.signum() * (v.abs() - theta).max(0.0);
    }
}

/// The θ ≥ 0 with `Σ max(|x_i| − θ, 0) = η`, assuming `‖x‖₁ > η > 0`.
///
/// Pivot filtering: θ only grows from pass to pass, so entries at or below the
/// current θ are dropped for good. Exact after finitely many passes.
fn l1_threshold(x: &[f64], radius: f64) -> f64 {
    let mut active: Vec<f64> = x.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    loop {
        let theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
        let before = active.len();
        active.retain(|v| *v > theta);
        if active.len() == before || active.is_empty() {
            return theta.max(0.0);
        }
    }
}

/// Moreau identity: `prox_{γ f*}(x) = x − γ · prox_{f/γ}(x/γ)`.
///
/// `prox_f(v, t)` must return `prox_{t f}(v)`.
pub fn prox_conjugate(prox_f: impl Fn(&[f64], f64) -> Vec<f64>, x: &[f64], gamma: f64) -> Vec<f64> {
    assert!(gamma > 0.0);
    let scaled: Vec<f64> = x.iter().map(|v| v / gamma).collect();
    let p = prox_f(&scaled, 1.0 / gamma);
    x.iter().zip(&p).map(|(a, b)| a - gamma * b).collect()
}

/// A proper lower-semicontinuous convex function with a computable prox.
pub trait Prox: Send + Sync {
    /// Replaces `x` with `prox_{γ f}(x)`.
    fn prox(&self, x: &mut [f64], gamma: f64);

    /// Finite part of the function value; indicators report 0.
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    /// Amount by which `x` violates the function's constraint set (0 when
    /// feasible or when the function is not an indicator).
    fn violation(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn name(&self) -> String;
}

/// `f = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Zero;

impl Prox for Zero {
    fn prox(&self, _x: &mut [f64], _gamma: f64) {}
    fn name(&self) -> String {
        "0".into()
    }
}

/// `f = weight · ‖·‖₁,₂` with per-pixel grouping across channels.
#[derive(Clone, Debug)]
pub struct L12Norm {
    pub weight: f64,
    pub pixels: usize,
}

impl Prox for L12Norm {
    fn prox(&self, x: &mut [f64], gamma: f64) {
        prox_l12_inplace(x, self.pixels, gamma * self.weight);
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * l12_norm(x, self.pixels)
    }
    fn name(&self) -> String {
        format!("{}*l12", self.weight)
    }
}

/// Sum of hyperslab indicators, one per contiguous block of `block_len`.
#[derive(Clone, Debug)]
pub struct BlockHyperslabs {
    pub block_len: usize,
    pub slabs: Vec<HyperslabSpec>,
}

impl Prox for BlockHyperslabs {
    fn prox(&self, x: &mut [f64], _gamma: f64) {
        for (chunk, spec) in x.chunks_mut(self.block_len).zip(&self.slabs) {
            project_hyperslab_inplace(chunk, *spec);
        }
    }
    fn violation(&self, x: &[f64]) -> f64 {
        x.chunks(self.block_len)
            .zip(&self.slabs)
            .map(|(c, s)| {
                let sum: f64 = c.iter().sum();
                (s.lower() - sum).max(sum - s.upper()).max(0.0)
            })
            .fold(0.0, f64::max)
    }
    fn name(&self) -> String {
        "hyperslabs".into()
    }
}

/// Indicator of an ℓp ball.
#[derive(Clone, Debug)]
pub struct BallIndicator {
    pub spec: BallSpec,
    pub exec: Exec,
}

impl BallIndicator {
    pub fn new(spec: BallSpec) -> Self {
        BallIndicator {
            spec,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// `‖x − c‖_p`.
    pub fn distance_from_center(&self, x: &[f64]) -> f64 {
        match (self.spec.order, &self.spec.center) {
            (NormOrder::L2, Some(c)) => self.exec.dist_sq(x, c).sqrt(),
            (NormOrder::L2, None) => self.exec.norm(x),
            (NormOrder::L1, None) => self.exec.norm1(x),
            (NormOrder::L1, Some(c)) => x.iter().zip(c).map(|(a, b)| (a - b).abs()).sum(),
        }
    }
}

impl Prox for BallIndicator {
    fn prox(&self, x: &mut [f64], _gamma: f64) {
        match (self.spec.order, &self.spec.center) {
            (NormOrder::L1, None) => project_l1_ball_inplace(self.exec, x, self.spec.radius),
            _ => self.spec.project(x),
        }
    }
    fn violation(&self, x: &[f64]) -> f64 {
        (self.distance_from_center(x) - self.spec.radius).max(0.0)
    }
    fn name(&self) -> String {
        let c = if self.spec.center.is_some() { "c" } else { "0" };
        format!("iota_B{}({}, {})", self.spec.order.p(), c, self.spec.radius)
    }
}
