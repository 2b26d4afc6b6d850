//! Raster imaging, spectroscopic maps, image analysis and lithography.

mod litho;
mod scan;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use litho::{
    lattice_point, line_width_nm, run_lithography, square_spiral, DoseModel, LatticePoint,
    LithoEvent, LithoJob, LithoPattern, LithoRegime, LithoReport, ELEMENTARY_CHARGE_C,
};
pub use scan::{
    raster_scan, spectroscopic_maps, ScanConfig, ScanFailure, ScanMetadata, ScanResult,
    SpectroscopicMaps,
};

/// Row-major scalar image; row 0 is the first scan line (lowest `y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Lower-left corner of the scanned area (nm).
    pub origin_nm: (f64, f64),
    /// Pixel pitch along x and y (nm).
    pub pixel_nm: (f64, f64),
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, origin_nm: (f64, f64), pixel_nm: (f64, f64)) -> Self {
        Self {
            width,
            height,
            origin_nm,
            pixel_nm,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            data: vec![value; width * height],
            ..Self::new(width, height, (0.0, 0.0), (1.0, 1.0))
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.width + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.data[iy * self.width + ix] = v;
    }

    pub fn row(&self, iy: usize) -> &[f64] {
        &self.data[iy * self.width..(iy + 1) * self.width]
    }

    pub fn column(&self, ix: usize) -> Vec<f64> {
        (0..self.height).map(|iy| self.get(ix, iy)).collect()
    }

    /// Centre of pixel `(ix, iy)` in nm.
    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_nm.0 + (ix as f64 + 0.5) * self.pixel_nm.0,
            self.origin_nm.1 + (iy as f64 + 0.5) * self.pixel_nm.1,
        )
    }

    pub fn contains(&self, x_nm: f64, y_nm: f64) -> bool {
        let (x1, y1) = (
            self.origin_nm.0 + self.width as f64 * self.pixel_nm.0,
            self.origin_nm.1 + self.height as f64 * self.pixel_nm.1,
        );
        (self.origin_nm.0..=x1).contains(&x_nm) && (self.origin_nm.1..=y1).contains(&y_nm)
    }

    /// Bilinear interpolation between pixel centres; the half-pixel border
    /// takes the edge value.
    pub fn sample(&self, x_nm: f64, y_nm: f64) -> Option<f64> {
        if !self.contains(x_nm, y_nm) || self.data.is_empty() {
            return None;
        }
        let fx =
            ((x_nm - self.origin_nm.0) / self.pixel_nm.0 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = ((y_nm - self.origin_nm.1) / self.pixel_nm.1 - 0.5)
            .clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        Some(top * (1.0 - ty) + bottom * ty)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Samples along a straight line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Distance from the first endpoint (nm).
    pub s_nm: Vec<f64>,
    pub values: Vec<f64>,
}

/// Bilinear profile from `p1` to `p2` (nm) with `n` evenly spaced samples.
pub fn line_profile(image: &Image, p1: (f64, f64), p2: (f64, f64), n: usize) -> Result<Profile> {
    if n < 2 {
        return Err(Error::Domain("a profile needs at least two samples".into()));
    }
    for p in [p1, p2] {
        if !image.contains(p.0, p.1) {
            return Err(Error::Domain(format!(
                "profile endpoint ({:.3}, {:.3}) nm outside the image",
                p.0, p.1
            )));
        }
    }
    let len = ((p2.0 - p1.0).powi(2) + (p2.1 - p1.1).powi(2)).sqrt();
    let mut prof = Profile {
        s_nm: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = k as f64 / (n - 1) as f64;
        let (x, y) = (p1.0 + t * (p2.0 - p1.0), p1.1 + t * (p2.1 - p1.1));
        prof.s_nm.push(t * len);
        prof.values.push(image.sample(x, y).unwrap_or(f64::NAN));
    }
    Ok(prof)
}

/// Interior local maxima whose prominence is at least `min_prominence`.
pub fn count_peaks(values: &[f64], min_prominence: f64) -> usize {
    peak_indices(values, min_prominence).len()
}

pub fn peak_indices(values: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            // walk across a flat top
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                let v = values[i];
                let left = values[..i]
                    .iter()
                    .rev()
                    .take_while(|&&u| u <= v)
                    .fold(v, |m, &u| m.min(u));
                let right = values[j + 1..]
                    .iter()
                    .take_while(|&&u| u <= v)
                    .fold(v, |m, &u| m.min(u));
                if v - left.max(right) >= min_prominence {
                    out.push(i);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// Dominant spatial frequency (nm⁻¹) along `axis`, from the mean Hann-
/// windowed power spectrum of all lines, zero-padded and refined by a
/// parabola through the peak bin. Frequencies below `min_freq` are ignored.
pub fn lattice_frequency(image: &Image, axis: Axis, min_freq: f64) -> Result<f64> {
    let (lines, n, pitch) = match axis {
        Axis::X => (
            (0..image.height)
                .map(|iy| image.row(iy).to_vec())
                .collect::<Vec<_>>(),
            image.width,
            image.pixel_nm.0,
        ),
        Axis::Y => (
            (0..image.width).map(|ix| image.column(ix)).collect(),
            image.height,
            image.pixel_nm.1,
        ),
    };
    if n < 8 {
        return Err(Error::Domain("image too small for a spectrum".into()));
    }
    let padded = (16 * n).next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(padded);
    let mut power = vec![0.0; padded / 2];
    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    for line in &lines {
        let mean = line.iter().sum::<f64>() / n as f64;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (k, &v) in line.iter().enumerate() {
            let w = 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / (n - 1) as f64).cos();
            buf[k] = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    let df = 1.0 / (padded as f64 * pitch);
    let start = ((min_freq / df).ceil() as usize).max(1);
    if start + 2 >= power.len() {
        return Err(Error::Domain("minimum frequency above Nyquist".into()));
    }
    let k = (start..power.len() - 1)
        .max_by(|&a, &b| power[a].total_cmp(&power[b]))
        .unwrap_or(start);
    let (a, b, c) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 && denom.is_finite() {
        0.5 * (a - c) / denom
    } else {
        0.0
    };
    Ok((k as f64 + shift) * df)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn constant_image_gives_flat_profile() {
        let img = Image::filled(10, 10, 3.0);
        let p = line_profile(&img, (0.5, 0.5), (9.0, 7.0), 50).unwrap();
        assert!(p.values.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!((p.s_nm[49] - (8.5f64.powi(2) + 6.5f64.powi(2)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn profile_outside_image_is_an_error() {
        let img = Image::filled(10, 10, 0.0);
        assert!(line_profile(&img, (0.5, 0.5), (11.0, 5.0), 10).is_err());
    }

    #[test]
    fn bilinear_is_exact_on_planes() {
        let mut img = Image::new(8, 6, (1.0, 2.0), (0.5, 0.25));
        for iy in 0..6 {
            for ix in 0..8 {
                let (x, y) = img.pixel_center(ix, iy);
                img.set(ix, iy, 2.0 * x - 3.0 * y);
            }
        }
        let v = img.sample(2.1, 2.7).unwrap();
        assert!((v - (4.2 - 8.1)).abs() < 1e-12);
    }

    #[test]
    fn peaks_of_a_cosine() {
        let v: Vec<f64> = (0..=1100)
            .map(|k| -(TAU * k as f64 / 100.0).cos())
            .collect();
        assert_eq!(count_peaks(&v, 0.5), 11);
        assert_eq!(count_peaks(&v, 3.0), 0);
    }

    #[test]
    fn small_ripples_are_not_peaks() {
        let v: Vec<f64> = (0..=400)
            .map(|k| -(TAU * k as f64 / 100.0).cos() + 0.01 * (TAU * k as f64 / 7.0).sin())
            .collect();
        assert_eq!(count_peaks(&v, 0.2), 4);
    }

    #[test]
    fn lattice_frequency_of_synthetic_rows() {
        let mut img = Image::new(128, 128, (0.0, 0.0), (12.0 / 128.0, 12.0 / 128.0));
        for iy in 0..128 {
            for ix in 0..128 {
                let (_, y) = img.pixel_center(ix, iy);
                img.set(ix, iy, (TAU * y / 0.384).cos());
            }
        }
        let f = lattice_frequency(&img, Axis::Y, 1.0).unwrap();
        assert!((f * 0.384 - 1.0).abs() < 0.01, "{f}");
    }
}
