//! Seeded generators for test landscapes, covariate fields and point patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::flow::{accumulate, d8_flow, fill_depressions};
use crate::raster::{GridHeader, Raster};

/// Spatial pattern of the steepness used to build a steady-state DEM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KsnField {
    Constant(f64),
    /// Linear in x from the west edge value to the east edge value.
    EastWest { west: f64, east: f64 },
}

impl KsnField {
    fn at(&self, h: &GridHeader, idx: usize) -> f64 {
        match *self {
            KsnField::Constant(k) => k,
            KsnField::EastWest { west, east } => {
                let (_, c) = h.row_col(idx);
                let t = if h.ncols > 1 { c as f64 / (h.ncols - 1) as f64 } else { 0.0 };
                west + (east - west) * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluvialDemSpec {
    pub ncols: usize,
    pub nrows: usize,
    pub cell_size: f64,
    pub theta: f64,
    pub ksn: KsnField,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for FluvialDemSpec {
    fn default() -> Self {
        Self {
            ncols: 64,
            nrows: 64,
            cell_size: 30.0,
            theta: 0.5,
            ksn: KsnField::Constant(100.0),
            seed: 7,
            max_iter: 100,
        }
    }
}

/// Uniform noise surface in [0, 1) m.
pub fn random_surface(ncols: usize, nrows: usize, cell_size: f64, seed: u64) -> Result<Raster> {
    let h = GridHeader::new(ncols, nrows, 0.0, 0.0, cell_size, -9999.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Raster::new(h, (0..h.len()).map(|_| rng.random::<f64>()).collect())
}

/// Steady-state DEM in which every flow path obeys
/// `dz = ksn * 0.5 * (A_i^-theta + A_r^-theta) * dx` towards its receiver.
///
/// Starting from noise, elevations are rebuilt along the current D8 receivers
/// until the routing stops changing. Returns the DEM and whether the routing
/// reached a fixed point.
pub fn fluvial_dem_report(spec: &FluvialDemSpec) -> Result<(Raster, bool)> {
    let mut dem = random_surface(spec.ncols, spec.nrows, spec.cell_size, spec.seed)?;
    let h = dem.header;
    let mut last: Option<Vec<usize>> = None;
    for _ in 0..spec.max_iter.max(1) {
        let ff = d8_flow(&fill_depressions(&dem)?)?;
        if last.as_deref() == Some(&ff.receiver[..]) {
            return Ok((dem, true));
        }
        let acc = accumulate(&ff);
        let area = acc.area.cells();
        let cells = dem.cells_mut();
        for &i in &ff.stack {
            let r = ff.receiver[i];
            if r == i {
                cells[i] = 0.0;
                continue;
            }
            let rate = 0.5
                * (spec.ksn.at(&h, i) * area[i].powf(-spec.theta)
                    + spec.ksn.at(&h, r) * area[r].powf(-spec.theta));
            cells[i] = cells[r] + rate * ff.step_length(i);
        }
        last = Some(ff.receiver);
    }
    let ff = d8_flow(&fill_depressions(&dem)?)?;
    let stable = last.as_deref() == Some(&ff.receiver[..]);
    Ok((dem, stable))
}

pub fn fluvial_dem(spec: &FluvialDemSpec) -> Result<Raster> {
    fluvial_dem_report(spec).map(|(dem, _)| dem)
}

/// Smooth field built from a few random plane waves, standardised to zero
/// mean and unit variance over the grid. `wavelength` is in map units.
pub fn smooth_field(h: &GridHeader, wavelength: f64, n_waves: usize, seed: u64) -> Result<Raster> {
    if n_waves == 0 || !(wavelength > 0.0) {
        return Err(Error::Config("smooth field needs n_waves >= 1 and a positive wavelength".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            let dir = rng.random::<f64>() * std::f64::consts::TAU;
            let k = std::f64::consts::TAU / (wavelength * (0.75 + 0.5 * rng.random::<f64>()));
            (k * dir.cos(), k * dir.sin(), rng.random::<f64>() * std::f64::consts::TAU)
        })
        .collect();
    let raw: Vec<f64> = (0..h.len())
        .map(|i| {
            let (x, y) = h.cell_center(i);
            waves.iter().map(|(kx, ky, ph)| (kx * x + ky * y + ph).cos()).sum()
        })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    Raster::new(*h, raw.into_iter().map(|v| (v - mean) / sd).collect())
}

/// Draw a Poisson process whose intensity (per km²) is constant within each
/// cell; points are uniform inside their cell.
pub fn simulate_poisson_points(intensity_per_km2: &Raster, seed: u64) -> Result<Vec<(f64, f64)>> {
    let h = intensity_per_km2.header;
    let cell_km2 = h.cell_area() / 1e6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for i in 0..h.len() {
        let Some(lam) = intensity_per_km2.value(i) else { continue };
        let mean = lam * cell_km2;
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(Error::Data(format!("invalid intensity {lam} at cell {i}")));
        }
        if mean == 0.0 {
            continue;
        }
        let k = Poisson::new(mean).map_err(|e| Error::Data(e.to_string()))?.sample(&mut rng) as u64;
        let (cx, cy) = h.cell_center(i);
        for _ in 0..k {
            let dx = (rng.random::<f64>() - 0.5) * h.cell_size;
            let dy = (rng.random::<f64>() - 0.5) * h.cell_size;
            pts.push((cx + dx, cy + dy));
        }
    }
    Ok(pts)
}
