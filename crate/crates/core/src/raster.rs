//! Multiband raster container and the `.bmr` on-disk format.
//!
//! Samples are stored band-major: band `b` occupies `data[b*N..(b+1)*N]` with
//! `N = height * width`, row-major inside a band.
//!
//! `.bmr` layout:
//!
//! ```text
//! b"BMRAST01"
//! {"height":H,"width":W,"bands":B,"dtype":"f64","layout":"band-major"}\n
//! H*W*B little-endian f64 samples
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BMRAST01";

/// Image shape shared by images and operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

impl Geometry {
    pub fn new(height: usize, width: usize, bands: usize) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Geometry(format!(
                "dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        Ok(Geometry {
            height,
            width,
            bands,
        })
    }

    /// Pixels per band.
    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Total sample count.
    #[inline]
    pub fn len(&self) -> usize {
        self.pixels() * self.bands
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiBandImage {
    geom: Geometry,
    data: Vec<f64>,
}

/// The three norms of an image viewed as a stacked vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    /// Sum over pixels of the ℓ2 norm of the pixel's spectrum.
    pub l12: f64,
}

impl MultiBandImage {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(Geometry::new(height, width, bands)?, data)
    }

    pub fn from_vec(geom: Geometry, data: Vec<f64>) -> Result<Self> {
        Geometry::new(geom.height, geom.width, geom.bands)?;
        if data.len() != geom.len() {
            return Err(Error::DimensionMismatch {
                expected: geom.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(MultiBandImage { geom, data })
    }

    pub fn filled(geom: Geometry, value: f64) -> Self {
        assert!(value.is_finite());
        MultiBandImage {
            geom,
            data: vec![value; geom.len()],
        }
    }

    pub fn zeros(geom: Geometry) -> Self {
        Self::filled(geom, 0.0)
    }

    /// Builds an image from `f(band, row, col)`.
    pub fn from_fn(geom: Geometry, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(geom.len());
        for b in 0..geom.bands {
            for i in 0..geom.height {
                for j in 0..geom.width {
                    data.push(f(b, i, j));
                }
            }
        }
        Self::from_vec(geom, data)
    }

    #[inline]
    pub fn geometry(&self) -> Geometry {
        self.geom
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.geom.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.geom.width
    }
    #[inline]
    pub fn bands(&self) -> usize {
        self.geom.bands
    }
    #[inline]
    pub fn pixels(&self) -> usize {
        self.geom.pixels()
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[band * self.pixels() + row * self.geom.width + col]
    }

    pub fn band(&self, b: usize) -> Result<BandView<'_>> {
        if b >= self.bands() {
            return Err(Error::BandOutOfRange {
                band: b,
                bands: self.bands(),
            });
        }
        Ok(BandView { parent: self, b })
    }

    /// Copies band `b` into a single-band image.
    pub fn extract_band(&self, b: usize) -> Result<MultiBandImage> {
        let view = self.band(b)?;
        Self::new(self.height(), self.width(), 1, view.as_slice().to_vec())
    }

    /// Mean value of band `b`.
    pub fn band_mean(&self, b: usize) -> Result<f64> {
        let view = self.band(b)?;
        Ok(view.as_slice().iter().sum::<f64>() / self.pixels() as f64)
    }

    pub fn band_means(&self) -> Vec<f64> {
        (0..self.bands())
            .map(|b| self.band_mean(b).expect("band in range"))
            .collect()
    }

    pub fn norms(&self) -> Norms {
        let l1 = self.data.iter().map(|v| v.abs()).sum();
        let l2 = self.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n = self.pixels();
        let l12 = (0..n)
            .map(|p| {
                (0..self.bands())
                    .map(|b| self.data[b * n + p].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        Norms { l1, l2, l12 }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<MultiBandImage> {
        Self::from_vec(self.geom, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, k: usize) -> Result<MultiBandImage> {
        if k == 0 {
            return Err(Error::InvalidParameter("upsampling factor must be positive".into()));
        }
        let geom = Geometry::new(self.height() * k, self.width() * k, self.bands())?;
        Self::from_fn(geom, |b, i, j| self.get(b, i / k, j / k))
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            height: self.height(),
            width: self.width(),
            bands: self.bands(),
            dtype: "f64".into(),
            layout: "band-major".into(),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<MultiBandImage> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Decode("missing BMRAST01 magic".into()));
        }
        let rest = &bytes[MAGIC.len()..];
        let nl = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::Decode("header line not terminated".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| Error::Decode(format!("bad header: {e}")))?;
        if header.dtype != "f64" {
            return Err(Error::Decode(format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.layout != "band-major" {
            return Err(Error::Decode(format!("unsupported layout {:?}", header.layout)));
        }
        let geom = Geometry::new(header.height, header.width, header.bands)
            .map_err(|e| Error::Decode(e.to_string()))?;
        let payload = &rest[nl + 1..];
        let expected = geom
            .len()
            .checked_mul(8)
            .ok_or_else(|| Error::Decode("header dimensions overflow".into()))?;
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::Decode(format!(
                "payload length mismatch: expected {expected} bytes, got {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_vec(geom, data)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    layout: String,
}

/// Read-only view of one band.
#[derive(Clone, Copy, Debug)]
pub struct BandView<'a> {
    parent: &'a MultiBandImage,
    b: usize,
}

impl<'a> BandView<'a> {
    pub fn index(&self) -> usize {
        self.b
    }

    pub fn as_slice(&self) -> &'a [f64] {
        let n = self.parent.pixels();
        &self.parent.data[self.b * n..(self.b + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.as_slice()[row * self.parent.width() + col]
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<MultiBandImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    MultiBandImage::decode(&bytes)
}

pub fn write_raster(img: &MultiBandImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&img.encode()).map_err(|e| Error::io(path, e))
}

/// How samples are mapped to 8-bit values in PNG previews.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PngScaling {
    /// Clamp to [0, 1] and scale by 255.
    Fixed,
    /// Stretch each band's own min..max to 0..255.
    MinMax,
}

/// Writes an 8-bit preview: bands 0, 1, 2 as RGB, or band 0 as grey when
/// fewer than three bands exist.
pub fn write_png(img: &MultiBandImage, path: impl AsRef<Path>, scaling: PngScaling) -> Result<()> {
    let path = path.as_ref();
    let to_u8 = |b: usize| -> Vec<u8> {
        let band = img.band(b).expect("band in range").as_slice();
        let (lo, hi) = match scaling {
            PngScaling::Fixed => (0.0, 1.0),
            PngScaling::MinMax => band
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        band.iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    if img.bands() >= 3 {
        let (r, g, b) = (to_u8(0), to_u8(1), to_u8(2));
        let buf: Vec<u8> = (0..img.pixels()).flat_map(|p| [r[p], g[p], b[p]]).collect();
        let out = image::RgbImage::from_raw(w, h, buf).expect("buffer matches geometry");
        out.save(path)?;
    } else {
        let out = image::GrayImage::from_raw(w, h, to_u8(0)).expect("buffer matches geometry");
        out.save(path)?;
    }
    Ok(())
}
