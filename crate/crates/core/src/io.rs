//! File formats: CSV with a header row, 16-bit binary PGM, JSON sidecars and
//! plain-text model coefficient files.

use std::io::{BufRead, Read, Write};

use num_complex::Complex64;
use serde::Serialize;

use crate::control::LoopRecord;
use crate::imaging::{Image, LithoEvent, Profile};
use crate::lti::{Domain, LinearSystem};
use crate::surface::SurfaceMap;
use crate::sysid::{FrfDataset, Injection, TuningRegion};
use crate::{Error, Result};

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn num(v: f64) -> String {
    // shortest representation that reads back to the same bits
    format!("{v}")
}

/// Loop time series, one row per tick.
pub fn write_records_csv<W: Write>(w: W, records: &[LoopRecord]) -> Result<()> {
    let mut c = csv_writer(w);
    c.write_record([
        "t_s", "x_nm", "y_nm", "u", "z_t_nm", "h_nm", "delta_nm", "i_na", "ln_ri", "lia_amp_v", "ln_rdidz",
        "didz_na_per_nm", "bias_lia_amp_v", "error", "mode", "capture",
    ])?;
    for r in records {
        let mut row: Vec<String> = [
            r.t_s, r.x_nm, r.y_nm, r.u, r.z_t_nm, r.h_nm, r.delta_nm, r.i_na, r.ln_ri, r.lia_amp_v, r.ln_rdidz,
            r.didz_na_per_nm, r.bias_lia_amp_v, r.error,
        ]
        .iter()
        .map(|&v| num(v))
        .collect();
        row.push(r.mode.as_str().to_string());
        row.push(u8::from(r.capture).to_string());
        c.write_record(&row)?;
    }
    c.flush()?;
    Ok(())
}

/// One frequency of the four closed-loop responses. The set-point
/// injection gives `Y/r_e` and `U/r_e`; the output injection `Y/r_u` and
/// `U/r_u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrfRow {
    pub freq_hz: f64,
    pub re_y: Option<Complex64>,
    pub re_u: Option<Complex64>,
    pub ru_y: Option<Complex64>,
    pub ru_u: Option<Complex64>,
}

const FRF_HEADER: [&str; 9] = [
    "freq_hz", "re_y_re", "re_y_im", "re_u_re", "re_u_im", "ru_y_re", "ru_y_im", "ru_u_re", "ru_u_im",
];

/// Both experiments of a campaign on one frequency grid; either may be
/// missing, leaving its columns empty.
pub fn write_frf_csv<W: Write>(w: W, setpoint: Option<&FrfDataset>, output: Option<&FrfDataset>) -> Result<()> {
    for (ds, want) in [(setpoint, Injection::Setpoint), (output, Injection::ControllerOutput)] {
        if ds.is_some_and(|d| d.injection != want) {
            return Err(Error::Sysid(format!("expected a {want:?} dataset")));
        }
    }
    let freqs: Vec<f64> = match (setpoint, output) {
        (Some(a), Some(b)) => {
            let (fa, fb): (Vec<f64>, Vec<f64>) =
                (a.points.iter().map(|p| p.freq_hz).collect(), b.points.iter().map(|p| p.freq_hz).collect());
            if fa != fb {
                return Err(Error::Sysid("datasets use different frequency grids".into()));
            }
            fa
        }
        (Some(d), None) | (None, Some(d)) => d.points.iter().map(|p| p.freq_hz).collect(),
        (None, None) => return Err(Error::Sysid("no dataset to write".into())),
    };
    let cells = |ds: Option<&FrfDataset>, k: usize| -> [String; 4] {
        match ds {
            Some(d) => {
                let p = &d.points[k];
                [num(p.y.re), num(p.y.im), num(p.u.re), num(p.u.im)]
            }
            None => Default::default(),
        }
    };
    let mut c = csv_writer(w);
    c.write_record(FRF_HEADER)?;
    for (k, &f) in freqs.iter().enumerate() {
        let mut row = vec![num(f)];
        row.extend(cells(setpoint, k));
        row.extend(cells(output, k));
        c.write_record(&row)?;
    }
    c.flush()?;
    Ok(())
}

pub fn read_frf_csv<R: Read>(r: R) -> Result<Vec<FrfRow>> {
    let mut c = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    if c.headers()?.iter().collect::<Vec<_>>() != FRF_HEADER {
        return Err(Error::Parse("unexpected FRF header".into()));
    }
    let mut out = Vec::new();
    for rec in c.records() {
        let rec = rec?;
        let field = |k: usize| -> Result<Option<f64>> {
            let s = rec.get(k).ok_or_else(|| Error::Parse("short FRF row".into()))?.trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Parse(format!("bad number {s:?}")))
        };
        let pair = |k: usize| -> Result<Option<Complex64>> {
            Ok(match (field(k)?, field(k + 1)?) {
                (Some(re), Some(im)) => Some(Complex64::new(re, im)),
                (None, None) => None,
                _ => return Err(Error::Parse("half-empty complex value".into())),
            })
        };
        out.push(FrfRow {
            freq_hz: field(0)?.ok_or_else(|| Error::Parse("missing frequency".into()))?,
            re_y: pair(1)?,
            re_u: pair(3)?,
            ru_y: pair(5)?,
            ru_u: pair(7)?,
        });
    }
    Ok(out)
}

/// Every grid point of a tuning region, `omega_c` outer.
pub fn write_tuning_csv<W: Write>(w: W, region: &TuningRegion) -> Result<()> {
    let mut c = csv_writer(w);
    c.write_record(["omega_c_rad_s", "ki", "gain_margin", "bandwidth_hz", "inf_norm_db", "closedloop_stable", "feasible"])?;
    for p in &region.points {
        c.write_record([
            num(p.omega_c),
            num(p.ki),
            num(p.gain_margin),
            num(p.bandwidth_hz),
            num(p.inf_norm_db),
            u8::from(p.closedloop_stable).to_string(),
            u8::from(p.feasible).to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// `(freq, magnitude dB, phase deg)` rows.
pub fn write_response_csv<W: Write>(w: W, freqs_hz: &[f64], values: &[Complex64]) -> Result<()> {
    if freqs_hz.len() != values.len() {
        return Err(Error::Domain("frequency and response lengths differ".into()));
    }
    let mut c = csv_writer(w);
    c.write_record(["freq_hz", "magnitude_db", "phase_deg"])?;
    for (&f, v) in freqs_hz.iter().zip(values) {
        c.write_record([num(f), num(20.0 * v.norm().log10()), num(v.arg().to_degrees())])?;
    }
    c.flush()?;
    Ok(())
}

pub fn write_profile_csv<W: Write>(w: W, profile: &Profile) -> Result<()> {
    let mut c = csv_writer(w);
    c.write_record(["s_nm", "value"])?;
    for (&s, &v) in profile.s_nm.iter().zip(&profile.values) {
        c.write_record([num(s), num(v)])?;
    }
    c.flush()?;
    Ok(())
}

/// Full-precision image dump at pixel centres.
pub fn write_image_csv<W: Write>(w: W, image: &Image) -> Result<()> {
    let mut c = csv_writer(w);
    c.write_record(["ix", "iy", "x_nm", "y_nm", "value"])?;
    for iy in 0..image.height {
        for ix in 0..image.width {
            let (x, y) = image.pixel_center(ix, iy);
            c.write_record([ix.to_string(), iy.to_string(), num(x), num(y), num(image.get(ix, iy))])?;
        }
    }
    c.flush()?;
    Ok(())
}

/// One row per lattice site, at its centre.
pub fn write_surface_csv<W: Write>(w: W, surface: &SurfaceMap) -> Result<()> {
    let mut c = csv_writer(w);
    c.write_record(["x_nm", "y_nm", "h_nm", "sigma_na_per_v", "phi_ev", "hydrogenated"])?;
    for (idx, s) in surface.sites().iter().enumerate() {
        let (x, y) = surface.site_center(idx);
        c.write_record([
            num(x),
            num(y),
            num(surface.height(x, y)),
            num(s.sigma),
            num(s.phi),
            u8::from(s.hydrogenated).to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// Exposed sites of a lithography job.
pub fn write_events_csv<W: Write>(w: W, events: &[LithoEvent]) -> Result<()> {
    let mut c = csv_writer(w);
    c.write_record(["site", "x_nm", "y_nm", "exposure", "probability", "depassivated"])?;
    for e in events {
        c.write_record([
            e.site.to_string(),
            num(e.x_nm),
            num(e.y_nm),
            num(e.exposure),
            num(e.probability),
            u8::from(e.depassivated).to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// Linear map of finite pixel values onto 0..=65535.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

impl PgmScale {
    pub fn of(image: &Image) -> Self {
        let (min, max) = image
            .data
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if min > max {
            Self { min: 0.0, max: 0.0 }
        } else {
            Self { min, max }
        }
    }

    pub fn level(&self, v: f64) -> u16 {
        if !v.is_finite() || self.max <= self.min {
            return 0;
        }
        (((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0) * 65535.0).round() as u16
    }

    pub fn value(&self, level: u16) -> f64 {
        self.min + (self.max - self.min) * level as f64 / 65535.0
    }
}

/// Binary 16-bit PGM, big-endian samples, first scan line at the bottom
/// so `y` points up in viewers. Non-finite pixels become 0.
pub fn write_pgm<W: Write>(mut w: W, image: &Image) -> Result<PgmScale> {
    let scale = PgmScale::of(image);
    write!(w, "P5\n{} {}\n65535\n", image.width, image.height)?;
    let mut buf = Vec::with_capacity(2 * image.width * image.height);
    for iy in (0..image.height).rev() {
        for &v in image.row(iy) {
            buf.extend_from_slice(&scale.level(v).to_be_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(scale)
}

/// Raw PGM samples in file order (top line first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Pgm> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Parse("not a binary PGM".into()));
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PGM field {s:?}")));
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("bad PGM maxval {maxval}")));
    }
    // a single whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or_else(|| Error::Parse("truncated PGM raster".into()))?;
    let samples = if wide {
        raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm { width, height, maxval: maxval as u16, samples })
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

/// Model file:
///
/// ```text
/// # comment
/// domain continuous            (or: domain discrete 100000)
/// num b0 b1 ... bm             (descending powers)
/// den a0 a1 ... an             (descending powers)
/// ```
pub fn write_model<W: Write>(mut w: W, sys: &LinearSystem) -> Result<()> {
    let (n, d) = sys.coefficients();
    match sys.domain {
        Domain::Continuous => writeln!(w, "domain continuous")?,
        Domain::Discrete { sample_rate_hz } => writeln!(w, "domain discrete {}", num(sample_rate_hz))?,
    }
    let join = |v: &[f64]| v.iter().map(|&c| num(c)).collect::<Vec<_>>().join(" ");
    writeln!(w, "num {}", join(&n))?;
    writeln!(w, "den {}", join(&d))?;
    Ok(())
}

pub fn read_model(text: &str) -> Result<LinearSystem> {
    let (mut domain, mut numer, mut denom) = (None, None, None);
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        let rest: Vec<&str> = it.collect();
        let floats = || -> Result<Vec<f64>> {
            rest.iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", k + 1))))
                .collect()
        };
        match key {
            "domain" => {
                domain = Some(match rest.as_slice() {
                    ["continuous"] => Domain::Continuous,
                    ["discrete", fs] => Domain::Discrete {
                        sample_rate_hz: fs.parse().map_err(|_| Error::Parse(format!("line {}: bad sample rate", k + 1)))?,
                    },
                    _ => return Err(Error::Parse(format!("line {}: unknown domain", k + 1))),
                })
            }
            "num" => numer = Some(floats()?),
            "den" => denom = Some(floats()?),
            other => return Err(Error::Parse(format!("line {}: unknown key {other:?}", k + 1))),
        }
    }
    let missing = |what: &str| Error::Parse(format!("model file has no {what} line"));
    LinearSystem::from_coefficients(
        &numer.ok_or_else(|| missing("num"))?,
        &denom.ok_or_else(|| missing("den"))?,
        domain.ok_or_else(|| missing("domain"))?,
    )
}
