//! Synthetic hydrogen-passivated Si(100)-2×1 sample.
//!
//! Dimer rows run along `y`. Row centres sit at `x = (i + ½)·row_pitch` and
//! dimer maxima along a row at `y = (j + ½)·dimer_pitch`. Each dimer is one
//! electronic site; a site owns the rectangular cell around its centre, so
//! electronic properties are piecewise constant with atomically sharp edges.
//! Topography is analytic: a product of row and dimer corrugations plus the
//! terrace offset.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dimer_pitch_nm: f64,
    pub row_pitch_nm: f64,
    pub step_height_nm: f64,
    pub corrugation_amplitude_nm: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            dimer_pitch_nm: 0.384,
            row_pitch_nm: 0.768,
            step_height_nm: 0.136,
            corrugation_amplitude_nm: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub extent_x_nm: f64,
    pub extent_y_nm: f64,
    pub lattice: LatticeSpec,
    /// Barrier height of a hydrogenated site (eV).
    pub phi_h_ev: f64,
    /// Conductivity of a hydrogenated site (nA/V).
    pub sigma_h_na_per_v: f64,
    pub db_sigma_factor: f64,
    pub db_phi_factor: f64,
    /// x positions of step edges; each edge raises the terrace by one step.
    pub step_edges_x_nm: Vec<f64>,
    /// Rotate the dimer-row direction by 90° on every other terrace.
    pub alternate_row_orientation: bool,
    /// Fraction of sites depassivated at construction.
    pub initial_db_fraction: f64,
    pub seed: u64,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        Self {
            extent_x_nm: 48.0,
            extent_y_nm: 48.0,
            lattice: LatticeSpec::default(),
            phi_h_ev: 4.5,
            sigma_h_na_per_v: 1.0e4,
            db_sigma_factor: 2.0,
            db_phi_factor: 0.5,
            step_edges_x_nm: Vec::new(),
            alternate_row_orientation: false,
            initial_db_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SurfaceSpec {
    pub fn square(extent_nm: f64) -> Self {
        Self {
            extent_x_nm: extent_nm,
            extent_y_nm: extent_nm,
            ..Self::default()
        }
    }

    /// Same spec without corrugation or steps.
    pub fn flat(mut self) -> Self {
        self.lattice.corrugation_amplitude_nm = 0.0;
        self.step_edges_x_nm.clear();
        self
    }
}

/// Electronic state stored per lattice site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteElectronic {
    pub sigma: f64,
    pub phi: f64,
    pub hydrogenated: bool,
}

/// Surface properties at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteState {
    pub h: f64,
    pub sigma: f64,
    pub phi: f64,
    pub hydrogenated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depassivation {
    Depassivated,
    /// The site had no hydrogen left; nothing changed.
    AlreadyBare,
}

#[derive(Debug, Clone)]
pub struct SurfaceMap {
    spec: SurfaceSpec,
    nx: usize,
    ny: usize,
    sites: Vec<SiteElectronic>,
}

pub fn build_surface(spec: &SurfaceSpec) -> Result<SurfaceMap> {
    SurfaceMap::new(spec.clone())
}

impl SurfaceMap {
    pub fn new(spec: SurfaceSpec) -> Result<Self> {
        let lat = &spec.lattice;
        if !(lat.dimer_pitch_nm > 0.0 && lat.row_pitch_nm > 0.0) {
            return Err(Error::Surface("lattice pitches must be positive".into()));
        }
        if !(spec.extent_x_nm >= lat.row_pitch_nm && spec.extent_y_nm >= lat.dimer_pitch_nm) {
            return Err(Error::Surface(format!(
                "extent {}×{} nm is smaller than one lattice cell",
                spec.extent_x_nm, spec.extent_y_nm
            )));
        }
        if !(spec.phi_h_ev > 0.0 && spec.sigma_h_na_per_v > 0.0) {
            return Err(Error::Surface("phi_h and sigma_h must be positive".into()));
        }
        if !(spec.db_sigma_factor > 0.0 && spec.db_phi_factor > 0.0) {
            return Err(Error::Surface(
                "dangling-bond factors must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&spec.initial_db_fraction) {
            return Err(Error::Surface(
                "initial_db_fraction must lie in [0, 1]".into(),
            ));
        }
        let nx = (spec.extent_x_nm / lat.row_pitch_nm).floor() as usize;
        let ny = (spec.extent_y_nm / lat.dimer_pitch_nm).floor() as usize;
        let h_site = SiteElectronic {
            sigma: spec.sigma_h_na_per_v,
            phi: spec.phi_h_ev,
            hydrogenated: true,
        };
        let mut map = Self {
            nx,
            ny,
            sites: vec![h_site; nx * ny],
            spec,
        };
        if map.spec.initial_db_fraction > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(map.spec.seed);
            for idx in 0..map.sites.len() {
                if rng.random::<f64>() < map.spec.initial_db_fraction {
                    map.depassivate_site(idx)?;
                }
            }
        }
        Ok(map)
    }

    pub fn spec(&self) -> &SurfaceSpec {
        &self.spec
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.spec.lattice
    }

    /// Number of dimer rows across `x`.
    pub fn rows(&self) -> usize {
        self.nx
    }

    /// Number of dimers along each row.
    pub fn dimers_per_row(&self) -> usize {
        self.ny
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.spec.extent_x_nm, self.spec.extent_y_nm)
    }

    pub fn site_index(&self, row: usize, dimer: usize) -> usize {
        dimer * self.nx + row
    }

    pub fn site_coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn site_center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.site_coords(idx);
        let lat = &self.spec.lattice;
        (
            (i as f64 + 0.5) * lat.row_pitch_nm,
            (j as f64 + 0.5) * lat.dimer_pitch_nm,
        )
    }

    /// Site whose cell contains `(x, y)`; points past the last full cell map
    /// to the edge site.
    pub fn site_at(&self, x: f64, y: f64) -> usize {
        let lat = &self.spec.lattice;
        let i = ((x / lat.row_pitch_nm).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((y / lat.dimer_pitch_nm).floor().max(0.0) as usize).min(self.ny - 1);
        self.site_index(i, j)
    }

    pub fn site(&self, idx: usize) -> &SiteElectronic {
        &self.sites[idx]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.spec.extent_x_nm).contains(&x) && (0.0..=self.spec.extent_y_nm).contains(&y)
    }

    fn terrace_index(&self, x: f64) -> usize {
        self.spec
            .step_edges_x_nm
            .iter()
            .filter(|&&e| x >= e)
            .count()
    }

    /// Geometric height at any point, without bounds checks.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let lat = &self.spec.lattice;
        let terrace = self.terrace_index(x);
        let base = terrace as f64 * lat.step_height_nm;
        if lat.corrugation_amplitude_nm == 0.0 {
            return base;
        }
        let (across, along) = if self.spec.alternate_row_orientation && terrace % 2 == 1 {
            (y, x)
        } else {
            (x, y)
        };
        let row = 0.5 - 0.5 * (TAU * across / lat.row_pitch_nm).cos();
        let dimer = 0.5 - 0.5 * (TAU * along / lat.dimer_pitch_nm).cos();
        base + lat.corrugation_amplitude_nm * row * (0.5 + 0.5 * dimer)
    }

    /// Height plus nearest-site electronic properties, without bounds checks.
    #[inline]
    pub fn sample_unchecked(&self, x: f64, y: f64) -> SiteState {
        let site = &self.sites[self.site_at(x, y)];
        SiteState {
            h: self.height(x, y),
            sigma: site.sigma,
            phi: site.phi,
            hydrogenated: site.hydrogenated,
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> Result<SiteState> {
        if !self.contains(x, y) {
            return Err(Error::OutOfExtent { x_nm: x, y_nm: y });
        }
        Ok(self.sample_unchecked(x, y))
    }

    pub fn depassivate_site(&mut self, idx: usize) -> Result<Depassivation> {
        let (sf, pf) = (self.spec.db_sigma_factor, self.spec.db_phi_factor);
        let site = self
            .sites
            .get_mut(idx)
            .ok_or_else(|| Error::Surface(format!("site index {idx} out of range")))?;
        if !site.hydrogenated {
            return Ok(Depassivation::AlreadyBare);
        }
        site.hydrogenated = false;
        site.sigma *= sf;
        site.phi *= pf;
        Ok(Depassivation::Depassivated)
    }

    pub fn dangling_bonds(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.hydrogenated)
            .map(|(i, _)| i)
    }

    /// Connected groups of dangling-bond sites (8-neighbourhood on the site
    /// grid), each sorted, ordered by first member.
    pub fn db_clusters(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.sites.len()];
        let mut clusters = Vec::new();
        for start in self.dangling_bonds() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut members = Vec::new();
            while let Some(idx) = stack.pop() {
                members.push(idx);
                let (i, j) = self.site_coords(idx);
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= self.nx as i64 || nj >= self.ny as i64 {
                            continue;
                        }
                        let n = self.site_index(ni as usize, nj as usize);
                        if !seen[n] && !self.sites[n].hydrogenated {
                            seen[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
            members.sort_unstable();
            clusters.push(members);
        }
        clusters
    }

    pub fn sites(&self) -> &[SiteElectronic] {
        &self.sites
    }
}
