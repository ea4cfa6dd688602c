//! Synthetic fixtures and the observation noise model.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, and Gaussian samples from `rand_distr::Normal`, so a
//! fixture is a pure function of its spec, noise configuration and seed.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionInput;
use crate::linops::BlurDownsample;
use crate::raster::{write_raster, Geometry, MultiBandImage};

/// Noise levels of the observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    /// Gaussian standard deviation on the HR observation.
    pub sigma_h: f64,
    /// Gaussian standard deviation on the LR observations.
    pub sigma_l: f64,
    /// Salt-and-pepper rate on the HR observation.
    pub r_h: f64,
    /// Salt-and-pepper rate on the LR observations.
    pub r_l: f64,
    pub seed: u64,
}

pub const CASE_NAMES: [&str; 4] = ["case1", "case2", "case3", "case4"];

impl CaseConfig {
    /// Noiseless observations.
    pub fn case1(seed: u64) -> Self {
        CaseConfig {
            sigma_h: 0.0,
            sigma_l: 0.0,
            r_h: 0.0,
            r_l: 0.0,
            seed,
        }
    }

    /// Gaussian noise with σ_h = 0.05 on the HR observation.
    pub fn case2(seed: u64) -> Self {
        CaseConfig {
            sigma_h: 0.05,
            ..Self::case1(seed)
        }
    }

    /// Salt-and-pepper noise with r_h = 0.05 on the HR observation.
    pub fn case3(seed: u64) -> Self {
        CaseConfig {
            r_h: 0.05,
            ..Self::case1(seed)
        }
    }

    /// Both kinds of noise on the HR observation.
    pub fn case4(seed: u64) -> Self {
        CaseConfig {
            sigma_h: 0.05,
            r_h: 0.05,
            ..Self::case1(seed)
        }
    }

    /// Preset by name (`case1` … `case4`).
    pub fn by_name(name: &str, seed: u64) -> Option<Self> {
        match name {
            "case1" => Some(Self::case1(seed)),
            "case2" => Some(Self::case2(seed)),
            "case3" => Some(Self::case3(seed)),
            "case4" => Some(Self::case4(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_h", self.sigma_h), ("sigma_l", self.sigma_l)] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {s}")));
            }
        }
        for (name, r) in [("r_h", self.r_h), ("r_l", self.r_l)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// Which observation a noise field is drawn for. Each target uses its own
/// random stream, so the two LR images get independent noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Hr,
    LrRef,
    LrTgt,
}

impl Which {
    fn stream(self) -> u64 {
        match self {
            Which::Hr => 1,
            Which::LrRef => 2,
            Which::LrTgt => 3,
        }
    }
}

/// `S B hr`: k×k block means.
pub fn make_lr(hr: &MultiBandImage, k: usize) -> Result<MultiBandImage> {
    BlurDownsample::new(hr.geometry(), k)?.apply_image(hr)
}

/// Adds Gaussian noise, then overwrites exactly `round(r · len)` samples,
/// chosen without replacement, with 0 or 1.
pub fn add_noise(img: &MultiBandImage, cfg: &CaseConfig, which: Which) -> Result<MultiBandImage> {
    cfg.validate()?;
    let (sigma, rate) = match which {
        Which::Hr => (cfg.sigma_h, cfg.r_h),
        Which::LrRef | Which::LrTgt => (cfg.sigma_l, cfg.r_l),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(which.stream());
    let mut data = img.data().to_vec();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    let count = corruption_count(rate, data.len());
    if count > 0 {
        for i in index::sample(&mut rng, data.len(), count) {
            data[i] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    }
    MultiBandImage::from_vec(img.geometry(), data)
}

/// Number of samples replaced by salt-and-pepper noise.
pub fn corruption_count(rate: f64, len: usize) -> usize {
    ((rate * len as f64).round() as usize).min(len)
}

/// Piecewise-constant scene on seeded Voronoi regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub k: usize,
    pub regions: usize,
    /// Range of the region reflectances on the reference date.
    pub reflectance: (f64, f64),
    /// Per-band brightness change between the dates is drawn from ±this.
    pub band_shift: f64,
    /// Additional per-region, per-band change drawn from ±this.
    pub region_shift: f64,
    /// Per-pixel target-date change drawn from ±this; finer than one LR pixel.
    pub texture: f64,
    pub seed: u64,
}

impl FixtureSpec {
    /// 64×64×4, k = 8, six regions with fine-scale target-date change.
    pub fn standard(seed: u64) -> Self {
        FixtureSpec {
            height: 64,
            width: 64,
            bands: 4,
            k: 8,
            regions: 6,
            reflectance: (0.1, 0.6),
            band_shift: 0.08,
            region_shift: 0.02,
            texture: 0.034,
            seed,
        }
    }

    pub fn with_size(self, size: usize) -> Self {
        FixtureSpec {
            height: size,
            width: size,
            ..self
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.height, self.width, self.bands)
    }

    fn validate(&self) -> Result<()> {
        let geom = self.geometry()?;
        if self.k == 0 || geom.height % self.k != 0 || geom.width % self.k != 0 {
            return Err(Error::NotDivisible {
                height: geom.height,
                width: geom.width,
                k: self.k,
            });
        }
        if self.regions == 0 {
            return Err(Error::InvalidParameter("a fixture needs at least one region".into()));
        }
        let (lo, hi) = self.reflectance;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad reflectance range ({lo}, {hi})")));
        }
        if !(self.band_shift >= 0.0 && self.region_shift >= 0.0 && self.texture >= 0.0) {
            return Err(Error::InvalidParameter("shift magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth on both dates plus the observed inputs.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub h_r_true: MultiBandImage,
    pub h_t_true: MultiBandImage,
    pub inputs: FusionInput,
}

/// Region label of every pixel, row-major.
pub fn voronoi_labels(spec: &FixtureSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sites: Vec<(f64, f64)> = (0..spec.regions)
        .map(|_| {
            (
                rng.random::<f64>() * spec.height as f64,
                rng.random::<f64>() * spec.width as f64,
            )
        })
        .collect();
    let mut labels = Vec::with_capacity(spec.height * spec.width);
    for i in 0..spec.height {
        for j in 0..spec.width {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let nearest = sites
                .iter()
                .enumerate()
                .map(|(r, (sy, sx))| (r, (y - sy).powi(2) + (x - sx).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(r, _)| r)
                .expect("at least one region");
            labels.push(nearest);
        }
    }
    Ok(labels)
}

/// Builds the clean scene pair and the noisy observations.
pub fn make_fixture(spec: &FixtureSpec, noise: &CaseConfig) -> Result<Fixture> {
    let geom = spec.geometry()?;
    let labels = voronoi_labels(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // skip past the stream used for the Voronoi sites
    rng.set_stream(1);
    let (lo, hi) = spec.reflectance;
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let base: Vec<Vec<f64>> = (0..spec.regions)
        .map(|_| (0..spec.bands).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect())
        .collect();
    let band_shift: Vec<f64> = (0..spec.bands)
        .map(|_| spec.band_shift * unit.sample(&mut rng))
        .collect();
    let region_shift: Vec<Vec<f64>> = (0..spec.regions)
        .map(|_| {
            (0..spec.bands)
                .map(|_| spec.region_shift * unit.sample(&mut rng))
                .collect()
        })
        .collect();

    rng.set_stream(2);
    let texture: Vec<f64> = (0..geom.len())
        .map(|_| spec.texture * unit.sample(&mut rng))
        .collect();

    let w = spec.width;
    let h_r_true = MultiBandImage::from_fn(geom, |b, i, j| base[labels[i * w + j]][b])?;
    let h_t_true = MultiBandImage::from_fn(geom, |b, i, j| {
        let r = labels[i * w + j];
        base[r][b] + band_shift[b] + region_shift[r][b] + texture[(b * spec.height + i) * w + j]
    })?;

    let l_r = make_lr(&h_r_true, spec.k)?;
    let l_t = make_lr(&h_t_true, spec.k)?;
    let inputs = FusionInput::new(
        add_noise(&h_r_true, noise, Which::Hr)?,
        add_noise(&l_r, noise, Which::LrRef)?,
        add_noise(&l_t, noise, Which::LrTgt)?,
    )?;
    Ok(Fixture {
        h_r_true,
        h_t_true,
        inputs,
    })
}

/// Contents of `manifest.json` next to a written fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub schema_version: u32,
    pub case: String,
    pub noise: CaseConfig,
    pub fixture: FixtureSpec,
    pub files: FixtureFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureFiles {
    pub h_r: String,
    pub l_r: String,
    pub l_t: String,
    pub h_t_truth: String,
}

impl Default for FixtureFiles {
    fn default() -> Self {
        FixtureFiles {
            h_r: "h_r.bmr".into(),
            l_r: "l_r.bmr".into(),
            l_t: "l_t.bmr".into(),
            h_t_truth: "h_t.bmr".into(),
        }
    }
}

/// Writes the observations, the target truth and `manifest.json` into `dir`.
pub fn write_fixture(
    dir: impl AsRef<Path>,
    fixture: &Fixture,
    spec: &FixtureSpec,
    case: &str,
    noise: &CaseConfig,
) -> Result<FixtureManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = FixtureFiles::default();
    write_raster(&fixture.inputs.h_r, dir.join(&files.h_r))?;
    write_raster(&fixture.inputs.l_r, dir.join(&files.l_r))?;
    write_raster(&fixture.inputs.l_t, dir.join(&files.l_t))?;
    write_raster(&fixture.h_t_true, dir.join(&files.h_t_truth))?;
    let manifest = FixtureManifest {
        schema_version: 1,
        case: case.to_string(),
        noise: *noise,
        fixture: spec.clone(),
        files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(h: usize, w: usize, b: usize) -> Geometry {
        Geometry::new(h, w, b).unwrap()
    }

    fn ramp(g: Geometry) -> MultiBandImage {
        MultiBandImage::from_fn(g, |b, i, j| 0.1 + 0.05 * b as f64 + 0.01 * ((i * 3 + j) % 17) as f64).unwrap()
    }

    #[test]
    fn presets() {
        assert_eq!(CaseConfig::case2(3).sigma_h, 0.05);
        assert_eq!(CaseConfig::case3(3).r_h, 0.05);
        let c4 = CaseConfig::case4(3);
        assert_eq!((c4.sigma_h, c4.r_h, c4.sigma_l, c4.r_l), (0.05, 0.05, 0.0, 0.0));
        assert_eq!(CaseConfig::by_name("case4", 3), Some(c4));
        assert_eq!(CaseConfig::by_name("case5", 3), None);
    }

    #[test]
    fn make_lr_examples() {
        let g = geom(4, 4, 1);
        let c = MultiBandImage::filled(g, 0.7);
        assert!(make_lr(&c, 2).unwrap().data().iter().all(|v| (*v - 0.7).abs() < 1e-15));
        let r = ramp(geom(6, 6, 2));
        assert_eq!(make_lr(&r, 1).unwrap(), r);
        let checker = MultiBandImage::from_fn(g, |_, i, j| ((i + j) % 2) as f64).unwrap();
        assert_eq!(make_lr(&checker, 2).unwrap().data(), &[0.5; 4]);
        assert!(make_lr(&checker, 3).is_err());
    }

    #[test]
    fn make_lr_commutes_with_band_restriction() {
        let img = ramp(geom(8, 8, 3));
        let lr = make_lr(&img, 4).unwrap();
        for b in 0..3 {
            let a = make_lr(&img.extract_band(b).unwrap(), 4).unwrap();
            assert_eq!(a, lr.extract_band(b).unwrap());
        }
    }

    #[test]
    fn case1_noise_is_identity() {
        let img = ramp(geom(8, 8, 2));
        for w in [Which::Hr, Which::LrRef, Which::LrTgt] {
            assert_eq!(add_noise(&img, &CaseConfig::case1(9), w).unwrap(), img);
        }
    }

    #[test]
    fn full_corruption() {
        let img = ramp(geom(8, 8, 2));
        let cfg = CaseConfig {
            r_h: 1.0,
            ..CaseConfig::case1(1)
        };
        let out = add_noise(&img, &cfg, Which::Hr).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn corruption_count_is_exact() {
        let img = MultiBandImage::filled(geom(16, 16, 3), 0.5);
        for rate in [0.0, 0.01, 0.05, 0.33, 1.0] {
            let cfg = CaseConfig {
                r_h: rate,
                ..CaseConfig::case1(4)
            };
            let out = add_noise(&img, &cfg, Which::Hr).unwrap();
            let changed = out.data().iter().filter(|v| **v != 0.5).count();
            assert_eq!(changed, (rate * 768.0_f64).round() as usize);
        }
    }

    #[test]
    fn gaussian_std_within_band() {
        let img = MultiBandImage::filled(geom(64, 64, 4), 0.4);
        let out = add_noise(&img, &CaseConfig::case4(7), Which::Hr).unwrap();
        let dev: Vec<f64> = out
            .data()
            .iter()
            .filter(|v| **v != 0.0 && **v != 1.0)
            .map(|v| v - 0.4)
            .collect();
        let n = dev.len() as f64;
        let mean = dev.iter().sum::<f64>() / n;
        let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.045..=0.055).contains(&sd), "{sd}");
    }

    #[test]
    fn noise_is_seeded_and_streams_differ() {
        let img = MultiBandImage::filled(geom(8, 8, 1), 0.3);
        let cfg = CaseConfig {
            sigma_l: 0.1,
            ..CaseConfig::case2(5)
        };
        let a = add_noise(&img, &cfg, Which::Hr).unwrap();
        assert_eq!(a, add_noise(&img, &cfg, Which::Hr).unwrap());
        assert_ne!(add_noise(&img, &cfg, Which::LrRef).unwrap(), add_noise(&img, &cfg, Which::LrTgt).unwrap());
        let other = CaseConfig { seed: 6, ..cfg };
        assert_ne!(a, add_noise(&img, &other, Which::Hr).unwrap());
    }

    #[test]
    fn invalid_rates_rejected() {
        let img = MultiBandImage::filled(geom(2, 2, 1), 0.3);
        let cfg = CaseConfig {
            r_h: 1.5,
            ..CaseConfig::case1(0)
        };
        assert!(add_noise(&img, &cfg, Which::Hr).is_err());
    }

    #[test]
    fn zero_shift_fixture_has_equal_truths() {
        let spec = FixtureSpec {
            band_shift: 0.0,
            region_shift: 0.0,
            texture: 0.0,
            ..FixtureSpec::standard(3)
        }
        .with_size(32);
        let f = make_fixture(&spec, &CaseConfig::case1(0)).unwrap();
        assert_eq!(f.h_r_true, f.h_t_true);
    }

    #[test]
    fn fixture_edges_share_support() {
        let spec = FixtureSpec {
            texture: 0.0,
            ..FixtureSpec::standard(11)
        };
        let f = make_fixture(&spec, &CaseConfig::case1(0)).unwrap();
        let d = crate::linops::DiffOperator::stacked(spec.geometry().unwrap());
        let a = d.apply_image(&f.h_r_true).unwrap();
        let b = d.apply_image(&f.h_t_true).unwrap();
        let labels = voronoi_labels(&spec).unwrap();
        assert!(labels.iter().any(|l| *l != labels[0]));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x == 0.0, *y == 0.0);
        }
    }

    #[test]
    fn case1_fixture_observations_are_clean() {
        let spec = FixtureSpec::standard(7);
        let f = make_fixture(&spec, &CaseConfig::case1(7)).unwrap();
        assert_eq!(f.inputs.h_r, f.h_r_true);
        assert_eq!(f.inputs.l_t, make_lr(&f.h_t_true, 8).unwrap());
        assert_eq!(f.inputs.l_r.geometry(), geom(8, 8, 4));
    }

    #[test]
    fn fixture_is_reproducible_on_disk() {
        let spec = FixtureSpec::standard(7);
        let cfg = CaseConfig::case4(7);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let f = make_fixture(&spec, &cfg).unwrap();
            write_fixture(d.path(), &f, &spec, "case4", &cfg).unwrap();
        }
        for name in ["h_r.bmr", "l_r.bmr", "l_t.bmr", "h_t.bmr", "manifest.json"] {
            let a = std::fs::read(dirs[0].path().join(name)).unwrap();
            let b = std::fs::read(dirs[1].path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn fixture_rejects_bad_geometry() {
        let spec = FixtureSpec {
            k: 5,
            ..FixtureSpec::standard(0)
        };
        assert!(make_fixture(&spec, &CaseConfig::case1(0)).is_err());
    }
}
