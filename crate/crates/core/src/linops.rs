//! Matrix-free linear operators: spatial differences `D`, box blur `B`,
//! top-left downsampling `S`, their composition `SB`, and helpers for checking
//! adjoints and operator norms.
//!
//! All operators act band-wise on band-major vectors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::raster::{Geometry, MultiBandImage};

/// A linear map between flat `f64` vectors with an exact adjoint.
pub trait LinearOperator: Send + Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;

    /// Writes `A x` into `out`. Lengths are the caller's responsibility.
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// Writes `Aᵀ y` into `out`.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);

    /// `out += alpha · A x`.
    fn apply_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.apply(x, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += alpha * t);
    }

    /// `out += alpha · Aᵀ y`.
    fn apply_adjoint_add(&self, alpha: f64, y: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.apply_adjoint(y, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += alpha * t);
    }

    /// Upper bound on `‖A‖op²` used for stepsize selection.
    fn norm_sq_bound(&self) -> f64;

    fn name(&self) -> String;

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_len(), x.len())?;
        let mut out = vec![0.0; self.output_len()];
        self.apply(x, &mut out);
        Ok(out)
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.output_len(), y.len())?;
        let mut out = vec![0.0; self.input_len()];
        self.apply_adjoint(y, &mut out);
        Ok(out)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Squared operator-norm bound declared by an operator.
pub fn op_norm_sq_bound(op: &dyn LinearOperator) -> f64 {
    op.norm_sq_bound()
}

#[derive(Clone, Debug)]
pub struct Identity {
    pub len: usize,
}

impl Identity {
    pub fn new(len: usize) -> Self {
        Identity { len }
    }
}

impl LinearOperator for Identity {
    fn input_len(&self) -> usize {
        self.len
    }
    fn output_len(&self) -> usize {
        self.len
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
    fn apply_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o += alpha * v);
    }
    fn apply_adjoint_add(&self, alpha: f64, y: &[f64], out: &mut [f64]) {
        self.apply_add(alpha, y, out);
    }
    fn norm_sq_bound(&self) -> f64 {
        1.0
    }
    fn name(&self) -> String {
        "I".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Vertical,
    Horizontal,
    /// `(D_vᵀ D_hᵀ)ᵀ`: vertical differences for all bands, then horizontal.
    Stacked,
}

/// Forward differences with a zero last row/column.
#[derive(Clone, Debug)]
pub struct DiffOperator {
    geom: Geometry,
    direction: Direction,
    exec: Exec,
}

impl DiffOperator {
    pub fn new(geom: Geometry, direction: Direction) -> Self {
        DiffOperator {
            geom,
            direction,
            exec: Exec::default(),
        }
    }

    pub fn stacked(geom: Geometry) -> Self {
        Self::new(geom, Direction::Stacked)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn apply_image(&self, img: &MultiBandImage) -> Result<Vec<f64>> {
        if img.geometry() != self.geom {
            return Err(Error::Geometry(format!(
                "difference operator built for {:?}, image is {:?}",
                self.geom,
                img.geometry()
            )));
        }
        self.forward(img.data())
    }

    fn dv_band(&self, x: &[f64], out: &mut [f64], put: impl Fn(&mut f64, f64)) {
        let (h, w) = (self.geom.height, self.geom.width);
        for i in 0..h - 1 {
            for j in 0..w {
                put(&mut out[i * w + j], x[(i + 1) * w + j] - x[i * w + j]);
            }
        }
        out[(h - 1) * w..].iter_mut().for_each(|o| put(o, 0.0));
    }

    fn dh_band(&self, x: &[f64], out: &mut [f64], put: impl Fn(&mut f64, f64)) {
        let w = self.geom.width;
        for (xr, or) in x.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            for j in 0..w - 1 {
                put(&mut or[j], xr[j + 1] - xr[j]);
            }
            put(&mut or[w - 1], 0.0);
        }
    }

    fn dv_adj_band(&self, y: &[f64], out: &mut [f64], put: impl Fn(&mut f64, f64)) {
        let (h, w) = (self.geom.height, self.geom.width);
        for i in 0..h {
            for j in 0..w {
                let up = if i >= 1 { y[(i - 1) * w + j] } else { 0.0 };
                let here = if i + 1 < h { y[i * w + j] } else { 0.0 };
                put(&mut out[i * w + j], up - here);
            }
        }
    }

    fn dh_adj_band(&self, y: &[f64], out: &mut [f64], put: impl Fn(&mut f64, f64)) {
        let w = self.geom.width;
        for (yr, or) in y.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            for j in 0..w {
                let left = if j >= 1 { yr[j - 1] } else { 0.0 };
                let here = if j + 1 < w { yr[j] } else { 0.0 };
                put(&mut or[j], left - here);
            }
        }
    }

    fn forward_with<P>(&self, x: &[f64], out: &mut [f64], put: P)
    where
        P: Fn(&mut f64, f64) + Copy + Sync + Send,
    {
        let n = self.geom.pixels();
        let bands = self.geom.bands;
        match self.direction {
            Direction::Vertical => {
                self.exec.zip_chunks_mut(out, n, x, n, |_, o, xb| self.dv_band(xb, o, put));
            }
            Direction::Horizontal => {
                self.exec.zip_chunks_mut(out, n, x, n, |_, o, xb| self.dh_band(xb, o, put));
            }
            Direction::Stacked => {
                // Output chunk c < bands is D_v of band c, otherwise D_h of band c - bands.
                self.exec.for_each_chunk_mut(out, n, |c, o| {
                    let b = c % bands;
                    let xb = &x[b * n..(b + 1) * n];
                    if c < bands {
                        self.dv_band(xb, o, put)
                    } else {
                        self.dh_band(xb, o, put)
                    }
                });
            }
        }
    }

    /// `put` receives the vertical part; the horizontal part of the stacked
    /// adjoint is then added with weight `alpha`.
    fn adjoint_with<P>(&self, y: &[f64], out: &mut [f64], put: P, alpha: f64)
    where
        P: Fn(&mut f64, f64) + Copy + Sync + Send,
    {
        let n = self.geom.pixels();
        let total = self.geom.len();
        match self.direction {
            Direction::Vertical => {
                self.exec.zip_chunks_mut(out, n, y, n, |_, o, yb| self.dv_adj_band(yb, o, put));
            }
            Direction::Horizontal => {
                self.exec.zip_chunks_mut(out, n, y, n, |_, o, yb| self.dh_adj_band(yb, o, put));
            }
            Direction::Stacked => {
                let (yv, yh) = y.split_at(total);
                self.exec.zip_chunks_mut(out, n, yv, n, |b, o, yvb| {
                    self.dv_adj_band(yvb, o, put);
                    self.dh_adj_band(&yh[b * n..(b + 1) * n], o, |o, v| *o += alpha * v);
                });
            }
        }
    }
}

impl LinearOperator for DiffOperator {
    fn input_len(&self) -> usize {
        self.geom.len()
    }

    fn output_len(&self) -> usize {
        match self.direction {
            Direction::Stacked => 2 * self.geom.len(),
            _ => self.geom.len(),
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.forward_with(x, out, |o, v| *o = v);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.adjoint_with(y, out, |o, v| *o = v, 1.0);
    }

    fn apply_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        self.forward_with(x, out, move |o, v| *o += alpha * v);
    }

    fn apply_adjoint_add(&self, alpha: f64, y: &[f64], out: &mut [f64]) {
        self.adjoint_with(y, out, move |o, v| *o += alpha * v, alpha);
    }

    fn norm_sq_bound(&self) -> f64 {
        match self.direction {
            Direction::Stacked => 8.0,
            _ => 4.0,
        }
    }

    fn name(&self) -> String {
        match self.direction {
            Direction::Vertical => "Dv",
            Direction::Horizontal => "Dh",
            Direction::Stacked => "D",
        }
        .into()
    }
}

/// k×k box average anchored at the top-left, replicate-padded at the
/// bottom/right edges.
#[derive(Clone, Debug)]
pub struct BlurOperator {
    geom: Geometry,
    k: usize,
    exec: Exec,
}

impl BlurOperator {
    pub fn new(geom: Geometry, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("blur window must be positive".into()));
        }
        if k > geom.height.min(geom.width) {
            return Err(Error::Geometry(format!(
                "blur window {k} larger than image {}x{}",
                geom.height, geom.width
            )));
        }
        Ok(BlurOperator {
            geom,
            k,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn window(&self) -> usize {
        self.k
    }

    pub fn apply_image(&self, img: &MultiBandImage) -> Result<MultiBandImage> {
        if img.geometry() != self.geom {
            return Err(Error::Geometry("blur geometry mismatch".into()));
        }
        MultiBandImage::from_vec(self.geom, self.forward(img.data())?)
    }

    fn band(&self, x: &[f64], out: &mut [f64], adjoint: bool) {
        let (h, w, k) = (self.geom.height, self.geom.width, self.k);
        let inv = 1.0 / k as f64;
        let mut tmp = vec![0.0; h * w];
        // rows
        for (xr, tr) in x.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
            if adjoint {
                window_mean_adjoint(xr, tr, k);
            } else {
                window_mean(xr, tr, k);
            }
        }
        // columns
        if adjoint {
            out.fill(0.0);
            for i in 0..h {
                let orow = i * w;
                if i + 1 < h {
                    let lo = (i + 1).saturating_sub(k);
                    for r in lo..=i {
                        let trow = &tmp[r * w..(r + 1) * w];
                        for (o, t) in out[orow..orow + w].iter_mut().zip(trow) {
                            *o += t;
                        }
                    }
                } else {
                    let lo = h.saturating_sub(k);
                    for r in lo..h {
                        let c = (k - (h - 1 - r)) as f64;
                        let trow = &tmp[r * w..(r + 1) * w];
                        for (o, t) in out[orow..orow + w].iter_mut().zip(trow) {
                            *o += c * t;
                        }
                    }
                }
                out[orow..orow + w].iter_mut().for_each(|v| *v *= inv);
            }
        } else {
            out.fill(0.0);
            for i in 0..h {
                let orow = i * w;
                for t in 0..k {
                    let r = (i + t).min(h - 1);
                    let trow = &tmp[r * w..(r + 1) * w];
                    for (o, v) in out[orow..orow + w].iter_mut().zip(trow) {
                        *o += v;
                    }
                }
                out[orow..orow + w].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
}

/// `out[i] = mean(x[min(i+t, n-1)] for t in 0..k)` along one line.
fn window_mean(x: &[f64], out: &mut [f64], k: usize) {
    let n = x.len();
    let inv = 1.0 / k as f64;
    for i in 0..n {
        let mut s = 0.0;
        for t in 0..k {
            s += x[(i + t).min(n - 1)];
        }
        out[i] = s * inv;
    }
}

/// Exact transpose of [`window_mean`].
fn window_mean_adjoint(y: &[f64], out: &mut [f64], k: usize) {
    let n = y.len();
    let inv = 1.0 / k as f64;
    for j in 0..n - 1 {
        let lo = (j + 1).saturating_sub(k);
        out[j] = y[lo..=j].iter().sum::<f64>() * inv;
    }
    let lo = n.saturating_sub(k);
    let last: f64 = (lo..n).map(|i| (k - (n - 1 - i)) as f64 * y[i]).sum();
    out[n - 1] = last * inv;
}

impl LinearOperator for BlurOperator {
    fn input_len(&self) -> usize {
        self.geom.len()
    }
    fn output_len(&self) -> usize {
        self.geom.len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.geom.pixels();
        self.exec.zip_chunks_mut(out, n, x, n, |_, o, xb| self.band(xb, o, false));
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let n = self.geom.pixels();
        self.exec.zip_chunks_mut(out, n, y, n, |_, o, yb| self.band(yb, o, true));
    }
    /// Schur bound: each 1-D factor has unit row sums and a largest column
    /// sum of (k+1)/2 (the replicated last sample).
    fn norm_sq_bound(&self) -> f64 {
        let c = (self.k as f64 + 1.0) / 2.0;
        c * c
    }
    fn name(&self) -> String {
        format!("B{}", self.k)
    }
}

/// Keeps the top-left sample of every k×k block.
#[derive(Clone, Debug)]
pub struct DownsampleOperator {
    geom: Geometry,
    k: usize,
    exec: Exec,
}

impl DownsampleOperator {
    pub fn new(geom: Geometry, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("downsampling factor must be positive".into()));
        }
        if !geom.height.is_multiple_of(k) || !geom.width.is_multiple_of(k) {
            return Err(Error::NotDivisible {
                height: geom.height,
                width: geom.width,
                k,
            });
        }
        Ok(DownsampleOperator {
            geom,
            k,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn factor(&self) -> usize {
        self.k
    }

    pub fn lr_geometry(&self) -> Geometry {
        Geometry {
            height: self.geom.height / self.k,
            width: self.geom.width / self.k,
            bands: self.geom.bands,
        }
    }

    pub fn apply_image(&self, img: &MultiBandImage) -> Result<MultiBandImage> {
        if img.geometry() != self.geom {
            return Err(Error::Geometry("downsampling geometry mismatch".into()));
        }
        MultiBandImage::from_vec(self.lr_geometry(), self.forward(img.data())?)
    }
}

impl LinearOperator for DownsampleOperator {
    fn input_len(&self) -> usize {
        self.geom.len()
    }
    fn output_len(&self) -> usize {
        self.lr_geometry().len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (w, k) = (self.geom.width, self.k);
        let lr = self.lr_geometry();
        self.exec
            .zip_chunks_mut(out, lr.pixels(), x, self.geom.pixels(), |_, o, xb| {
                for p in 0..lr.height {
                    for q in 0..lr.width {
                        o[p * lr.width + q] = xb[p * k * w + q * k];
                    }
                }
            });
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let (w, k) = (self.geom.width, self.k);
        let lr = self.lr_geometry();
        self.exec
            .zip_chunks_mut(out, self.geom.pixels(), y, lr.pixels(), |_, o, yb| {
                o.fill(0.0);
                for p in 0..lr.height {
                    for q in 0..lr.width {
                        o[p * k * w + q * k] = yb[p * lr.width + q];
                    }
                }
            });
    }
    fn norm_sq_bound(&self) -> f64 {
        1.0
    }
    fn name(&self) -> String {
        format!("S{}", self.k)
    }
}

/// The composition `S B` relating a high-resolution image to its
/// low-resolution counterpart.
#[derive(Clone, Debug)]
pub struct BlurDownsample {
    blur: BlurOperator,
    down: DownsampleOperator,
}

impl BlurDownsample {
    pub fn new(geom: Geometry, k: usize) -> Result<Self> {
        Ok(BlurDownsample {
            blur: BlurOperator::new(geom, k)?,
            down: DownsampleOperator::new(geom, k)?,
        })
    }

    pub fn with_exec(self, exec: Exec) -> Self {
        BlurDownsample {
            blur: self.blur.with_exec(exec),
            down: self.down.with_exec(exec),
        }
    }

    pub fn lr_geometry(&self) -> Geometry {
        self.down.lr_geometry()
    }

    pub fn apply_image(&self, img: &MultiBandImage) -> Result<MultiBandImage> {
        MultiBandImage::from_vec(self.lr_geometry(), self.forward(img.data())?)
    }

    /// Each sampled window is exactly one k×k block, so `S B` is block
    /// averaging.
    fn average_with<P>(&self, x: &[f64], out: &mut [f64], put: P)
    where
        P: Fn(&mut f64, f64) + Copy + Sync + Send,
    {
        let (geom, k) = (self.blur.geom, self.blur.k);
        let (n, w) = (geom.pixels(), geom.width);
        let lr = self.lr_geometry();
        let (m, lw) = (lr.pixels(), lr.width);
        let scale = 1.0 / (k * k) as f64;
        self.blur.exec.zip_chunks_mut(out, m, x, n, |_, o, xb| {
            let mut sums = vec![0.0; m];
            for (i, row) in xb.chunks_exact(w).enumerate() {
                let srow = &mut sums[(i / k) * lw..(i / k + 1) * lw];
                for (acc, block) in srow.iter_mut().zip(row.chunks_exact(k)) {
                    *acc += block.iter().sum::<f64>();
                }
            }
            o.iter_mut().zip(&sums).for_each(|(o, v)| put(o, v * scale));
        });
    }

    fn spread_with<P>(&self, y: &[f64], out: &mut [f64], put: P)
    where
        P: Fn(&mut f64, f64) + Copy + Sync + Send,
    {
        let (geom, k) = (self.blur.geom, self.blur.k);
        let (n, w) = (geom.pixels(), geom.width);
        let lr = self.lr_geometry();
        let (m, lw) = (lr.pixels(), lr.width);
        let scale = 1.0 / (k * k) as f64;
        self.blur.exec.zip_chunks_mut(out, n, y, m, |_, o, yb| {
            for (i, row) in o.chunks_exact_mut(w).enumerate() {
                let yrow = &yb[(i / k) * lw..(i / k + 1) * lw];
                for (v, block) in yrow.iter().zip(row.chunks_exact_mut(k)) {
                    let v = v * scale;
                    block.iter_mut().for_each(|o| put(o, v));
                }
            }
        });
    }
}

impl LinearOperator for BlurDownsample {
    fn input_len(&self) -> usize {
        self.blur.input_len()
    }
    fn output_len(&self) -> usize {
        self.down.output_len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.average_with(x, out, |o, v| *o = v);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.spread_with(y, out, |o, v| *o = v);
    }
    fn apply_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        self.average_with(x, out, move |o, v| *o += alpha * v);
    }
    fn apply_adjoint_add(&self, alpha: f64, y: &[f64], out: &mut [f64]) {
        self.spread_with(y, out, move |o, v| *o += alpha * v);
    }
    /// Fixed at 2 so that the fusion stepsizes come out as 1/19 and 1/18.
    /// The true squared norm is 1/k² when k divides the image.
    fn norm_sq_bound(&self) -> f64 {
        2.0
    }
    fn name(&self) -> String {
        format!("S{}B{}", self.down.k, self.blur.k)
    }
}

/// `factor · A`.
#[derive(Clone)]
pub struct Scaled {
    pub op: Arc<dyn LinearOperator>,
    pub factor: f64,
}

impl Scaled {
    pub fn new(op: Arc<dyn LinearOperator>, factor: f64) -> Self {
        Scaled { op, factor }
    }
}

impl LinearOperator for Scaled {
    fn input_len(&self) -> usize {
        self.op.input_len()
    }
    fn output_len(&self) -> usize {
        self.op.output_len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.op.apply(x, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.op.apply_adjoint(y, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
    fn apply_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        self.op.apply_add(alpha * self.factor, x, out);
    }
    fn apply_adjoint_add(&self, alpha: f64, y: &[f64], out: &mut [f64]) {
        self.op.apply_adjoint_add(alpha * self.factor, y, out);
    }
    fn norm_sq_bound(&self) -> f64 {
        self.factor * self.factor * self.op.norm_sq_bound()
    }
    fn name(&self) -> String {
        if self.factor == -1.0 {
            format!("-{}", self.op.name())
        } else {
            format!("{}*{}", self.factor, self.op.name())
        }
    }
}

/// Estimates `‖A‖op` by power iteration on `AᵀA` from a seeded random start.
///
/// The returned value is `‖A x‖` for the final unit vector `x`, so it never
/// exceeds the true norm.
pub fn power_iteration_norm(op: &dyn LinearOperator, iterations: usize, seed: u64) -> f64 {
    let iterations = iterations.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ax = vec![0.0; op.output_len()];
    let mut atax = vec![0.0; op.input_len()];
    let normalize = |v: &mut [f64]| {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|a| *a /= n);
        }
        n
    };
    if normalize(&mut x) == 0.0 {
        return 0.0;
    }
    for _ in 0..iterations {
        op.apply(&x, &mut ax);
        op.apply_adjoint(&ax, &mut atax);
        if normalize(&mut atax) == 0.0 {
            return 0.0;
        }
        std::mem::swap(&mut x, &mut atax);
    }
    op.apply(&x, &mut ax);
    ax.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(h: usize, w: usize, b: usize) -> Geometry {
        Geometry::new(h, w, b).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Dense matrix of an operator, column by column.
    fn dense(op: &dyn LinearOperator) -> Vec<Vec<f64>> {
        (0..op.input_len())
            .map(|c| {
                let mut e = vec![0.0; op.input_len()];
                e[c] = 1.0;
                op.forward(&e).unwrap()
            })
            .collect()
    }

    #[test]
    fn difference_of_constant_is_zero() {
        let d = DiffOperator::stacked(g(5, 4, 3));
        let out = d.forward(&vec![0.7; 60]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_difference_2x2() {
        let (a, b, c, d) = (0.1, 0.5, 0.9, 1.7);
        let dv = DiffOperator::new(g(2, 2, 1), Direction::Vertical);
        let out = dv.forward(&[a, b, c, d]).unwrap();
        assert_eq!(out, vec![c - a, d - b, 0.0, 0.0]);
        let stacked = DiffOperator::stacked(g(2, 2, 1)).forward(&[a, b, c, d]).unwrap();
        assert_eq!(&stacked[..4], &[c - a, d - b, 0.0, 0.0]);
        assert_eq!(&stacked[4..], &[b - a, 0.0, d - c, 0.0]);
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let d = DiffOperator::stacked(g(3, 3, 1));
        let img = MultiBandImage::zeros(g(3, 4, 1));
        assert!(d.apply_image(&img).is_err());
        assert!(d.forward(&[0.0; 5]).is_err());
    }

    #[test]
    fn blur_identity_and_constants() {
        let geom = g(6, 5, 2);
        let x = noise(geom.len(), 1);
        let b1 = BlurOperator::new(geom, 1).unwrap();
        assert_eq!(b1.forward(&x).unwrap(), x);
        let b3 = BlurOperator::new(geom, 3).unwrap();
        for v in b3.forward(&vec![0.42; geom.len()]).unwrap() {
            assert!((v - 0.42).abs() < 1e-15);
        }
        assert!(BlurOperator::new(geom, 6).is_err());
    }

    #[test]
    fn blur_matches_direct_window_means() {
        let geom = g(5, 7, 1);
        let x = noise(geom.len(), 2);
        let k = 3;
        let out = BlurOperator::new(geom, k).unwrap().forward(&x).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let mut s = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        s += x[(i + a).min(4) * 7 + (j + b).min(6)];
                    }
                }
                assert!((out[i * 7 + j] - s / 9.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn downsample_examples() {
        let geom = g(4, 4, 1);
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let s = DownsampleOperator::new(geom, 2).unwrap();
        assert_eq!(s.forward(&x).unwrap(), vec![0.0, 2.0, 8.0, 10.0]);
        assert_eq!(DownsampleOperator::new(geom, 1).unwrap().forward(&x).unwrap(), x);
        assert!(matches!(
            DownsampleOperator::new(g(5, 4, 1), 2),
            Err(Error::NotDivisible { .. })
        ));
    }

    #[test]
    fn sts_is_diagonal_selector() {
        let s = DownsampleOperator::new(g(4, 6, 2), 2).unwrap();
        let cols = dense(&s);
        for (c, col) in cols.iter().enumerate() {
            let back = s.adjoint(col).unwrap();
            let p = c % 24;
            let sampled = (p / 6) % 2 == 0 && (p % 6) % 2 == 0;
            for (r, v) in back.iter().enumerate() {
                let expect = if r == c && sampled { 1.0 } else { 0.0 };
                assert_eq!(*v, expect);
            }
        }
    }

    #[test]
    fn adjoints_match_dense_transpose() {
        let geom = g(5, 4, 2);
        let ops: Vec<Box<dyn LinearOperator>> = vec![
            Box::new(DiffOperator::stacked(geom)),
            Box::new(BlurOperator::new(geom, 3).unwrap()),
            Box::new(BlurDownsample::new(g(4, 4, 2), 2).unwrap()),
        ];
        for op in &ops {
            let cols = dense(op.as_ref());
            for r in 0..op.output_len() {
                let mut e = vec![0.0; op.output_len()];
                e[r] = 1.0;
                let row = op.adjoint(&e).unwrap();
                for c in 0..op.input_len() {
                    assert!((row[c] - cols[c][r]).abs() < 1e-15, "{} ({r},{c})", op.name());
                }
            }
        }
    }

    #[test]
    fn adjoint_identity_random_pairs() {
        let geom = g(9, 12, 3);
        let ops: Vec<Box<dyn LinearOperator>> = vec![
            Box::new(DiffOperator::stacked(geom)),
            Box::new(DiffOperator::new(geom, Direction::Horizontal)),
            Box::new(BlurOperator::new(geom, 4).unwrap()),
            Box::new(DownsampleOperator::new(geom, 3).unwrap()),
            Box::new(BlurDownsample::new(geom, 3).unwrap()),
        ];
        for op in &ops {
            for t in 0..20 {
                let x = noise(op.input_len(), 100 + t);
                let y = noise(op.output_len(), 200 + t);
                let lhs = dot(&op.forward(&x).unwrap(), &y);
                let rhs = dot(&x, &op.adjoint(&y).unwrap());
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn declared_bounds() {
        let geom = g(8, 8, 1);
        assert_eq!(op_norm_sq_bound(&DiffOperator::stacked(geom)), 8.0);
        assert_eq!(op_norm_sq_bound(&Identity::new(64)), 1.0);
        assert_eq!(op_norm_sq_bound(&BlurDownsample::new(geom, 2).unwrap()), 2.0);
        let neg = Scaled::new(Arc::new(DiffOperator::stacked(geom)), -1.0);
        assert_eq!(neg.norm_sq_bound(), 8.0);
    }

    #[test]
    fn power_iteration_examples() {
        let id = power_iteration_norm(&Identity::new(50), 5, 3);
        assert!((id - 1.0).abs() < 1e-9);

        let d = power_iteration_norm(&DiffOperator::stacked(g(32, 32, 1)), 300, 7);
        assert!(d <= 8f64.sqrt() && d > 2.5, "{d}");

        let sb = power_iteration_norm(&BlurDownsample::new(g(8, 8, 1), 2).unwrap(), 100, 9);
        assert!(sb <= 2f64.sqrt());
        assert!((sb - 0.5).abs() < 1e-9, "block average of 2x2 has norm 1/2, got {sb}");

        let blur = BlurOperator::new(g(16, 16, 1), 4).unwrap();
        assert!(power_iteration_norm(&blur, 200, 1).powi(2) <= blur.norm_sq_bound());
    }

    #[test]
    fn blur_downsample_equals_composition() {
        let geom = g(16, 24, 2);
        let sb = BlurDownsample::new(geom, 4).unwrap();
        let (b, s) = (BlurOperator::new(geom, 4).unwrap(), DownsampleOperator::new(geom, 4).unwrap());
        let x = noise(geom.len(), 31);
        let composed = s.forward(&b.forward(&x).unwrap()).unwrap();
        for (a, c) in sb.forward(&x).unwrap().iter().zip(&composed) {
            assert!((a - c).abs() < 1e-14);
        }
        let y = noise(sb.output_len(), 32);
        let composed = b.adjoint(&s.adjoint(&y).unwrap()).unwrap();
        for (a, c) in sb.adjoint(&y).unwrap().iter().zip(&composed) {
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn power_iteration_is_deterministic() {
        let op = DiffOperator::stacked(g(10, 10, 2));
        assert_eq!(
            power_iteration_norm(&op, 20, 5).to_bits(),
            power_iteration_norm(&op, 20, 5).to_bits()
        );
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let geom = g(128, 128, 4);
        let x = noise(geom.len(), 11);
        let d_s = DiffOperator::stacked(geom).with_exec(Exec::Sequential);
        let d_p = DiffOperator::stacked(geom).with_exec(Exec::Parallel);
        assert_eq!(d_s.forward(&x).unwrap(), d_p.forward(&x).unwrap());
        let sb_s = BlurDownsample::new(geom, 8).unwrap().with_exec(Exec::Sequential);
        let sb_p = BlurDownsample::new(geom, 8).unwrap().with_exec(Exec::Parallel);
        assert_eq!(sb_s.forward(&x).unwrap(), sb_p.forward(&x).unwrap());
        let y = noise(sb_s.output_len(), 12);
        assert_eq!(sb_s.adjoint(&y).unwrap(), sb_p.adjoint(&y).unwrap());
    }

    #[test]
    fn operators_commute_with_band_permutation() {
        let geom = g(6, 6, 3);
        let x = noise(geom.len(), 21);
        let n = geom.pixels();
        let perm = [2usize, 0, 1];
        let permute = |v: &[f64], per_band: usize| -> Vec<f64> {
            perm.iter()
                .flat_map(|&b| v[b * per_band..(b + 1) * per_band].to_vec())
                .collect()
        };
        let sb = BlurDownsample::new(geom, 3).unwrap();
        let lhs = sb.forward(&permute(&x, n)).unwrap();
        let rhs = permute(&sb.forward(&x).unwrap(), 4);
        assert_eq!(lhs, rhs);
        let b = BlurOperator::new(geom, 2).unwrap();
        assert_eq!(b.forward(&permute(&x, n)).unwrap(), permute(&b.forward(&x).unwrap(), n));
    }
}
