//! Cross-validation splits, predictive count aggregation and proper scoring
//! rules (squared error, Dawid–Sebastiani, logarithmic, CRPS).
//!
//! Count forecasts are equal-weight mixtures of Poisson distributions, one per
//! posterior intensity draw; log-size forecasts are mixtures of normals.
//! Moments and scores are computed analytically from the mixture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::mesh::Quadrature;
use crate::model::{eta_of, Covariates, PointData, Posterior};
use crate::raster::{GridHeader, Raster};

/// LS recorded when every mixture component gives the outcome less than
/// 1e-300 probability (about -ln of the smallest normal double).
pub const LS_SENTINEL: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThinningSplit {
    /// Sorted point indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ThinningSplit {
    /// The complementary fold with roles exchanged.
    pub fn swapped(&self) -> Self {
        Self { train: self.test.clone(), test: self.train.clone() }
    }
}

/// Seeded random halving: the first ceil(n/2) of a shuffled order train.
pub fn thinning_split(data: &PointData, seed: u64) -> Result<ThinningSplit> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Split(format!("thinning needs at least 2 points, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = n.div_ceil(2);
    let mut train = order[..k].to_vec();
    let mut test = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(ThinningSplit { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fold {
    White,
    Black,
}

/// Square evaluation lattice anchored at the region's lower-left corner.
/// Cell `(i, j)` has column `i` from the west and row `j` from the south;
/// its id is `j * ncols + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGrid {
    pub x0: f64,
    pub y0: f64,
    pub size: f64,
    pub ncols: usize,
    pub nrows: usize,
}

impl EvalGrid {
    pub fn new(region: &GridHeader, size: f64) -> Result<Self> {
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::Config(format!("grid_size must be positive, got {size}")));
        }
        let ncols = ((region.width() / size).ceil() as usize).max(1);
        let nrows = ((region.height() / size).ceil() as usize).max(1);
        if ncols * nrows == 1 {
            warn!("evaluation grid of {size} m covers the region with a single cell");
        }
        Ok(Self { x0: region.x_origin, y0: region.y_origin, size, ncols, nrows })
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let i = ((x - self.x0) / self.size).floor();
        let j = ((y - self.y0) / self.size).floor();
        if i < 0.0 || j < 0.0 || i >= self.ncols as f64 || j >= self.nrows as f64 {
            return None;
        }
        Some(j as usize * self.ncols + i as usize)
    }

    pub fn ij(&self, id: usize) -> (usize, usize) {
        (id % self.ncols, id / self.ncols)
    }

    /// Raster with one pixel per lattice cell (row 0 north).
    pub fn header(&self) -> GridHeader {
        GridHeader::new(self.ncols, self.nrows, self.x0, self.y0, self.size, -9999.0)
            .expect("positive lattice dimensions")
    }

    /// Raster pixel index of lattice cell `id`.
    pub fn pixel(&self, id: usize) -> usize {
        let (i, j) = self.ij(id);
        (self.nrows - 1 - j) * self.ncols + i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChequerboardSplit {
    pub grid: EvalGrid,
    pub fold: Fold,
    /// Per lattice cell: true when the cell is in the training set.
    pub train: Vec<bool>,
}

impl ChequerboardSplit {
    pub fn is_train_at(&self, x: f64, y: f64) -> Option<bool> {
        self.grid.cell_of(x, y).map(|c| self.train[c])
    }

    pub fn test_cells(&self) -> Vec<usize> {
        (0..self.train.len()).filter(|&c| !self.train[c]).collect()
    }
}

/// White fold trains on cells with even `i + j`; black is its complement.
pub fn chequerboard_split(region: &GridHeader, grid_size: f64, fold: Fold) -> Result<ChequerboardSplit> {
    let grid = EvalGrid::new(region, grid_size)?;
    let train = (0..grid.len())
        .map(|c| {
            let (i, j) = grid.ij(c);
            ((i + j) % 2 == 0) == (fold == Fold::White)
        })
        .collect();
    Ok(ChequerboardSplit { grid, fold, train })
}

/// Observed and predicted counts on evaluation cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCounts {
    pub cell_ids: Vec<usize>,
    pub observed: Vec<u64>,
    /// Per cell, the integrated intensity under each posterior draw.
    pub intensities: Vec<Vec<f64>>,
    /// Per cell, one Poisson count drawn for each intensity.
    pub counts: Vec<Vec<u64>>,
}

/// Integrate each posterior draw over the quadrature nodes falling in each
/// requested cell, scale by `scale`, and draw predictive counts.
#[allow(clippy::too_many_arguments)]
pub fn predictive_counts(
    post: &Posterior,
    covs: &Covariates,
    quad: &Quadrature,
    grid: &EvalGrid,
    cells: &[usize],
    test_points: &[(f64, f64)],
    samples: &[DVector<f64>],
    scale: f64,
    seed: u64,
) -> Result<GridCounts> {
    let (rows, _) = post.layout.rows_at_points(covs, &quad.points)?;
    let mut members: BTreeMap<usize, Vec<(usize, f64)>> = cells.iter().map(|&c| (c, Vec::new())).collect();
    for (q, (&(x, y), row)) in quad.points.iter().zip(&rows).enumerate() {
        if row.is_none() {
            continue;
        }
        if let Some(m) = grid.cell_of(x, y).and_then(|c| members.get_mut(&c)) {
            m.push((q, quad.weights[q] / 1e6));
        }
    }
    let empty: Vec<usize> = members.iter().filter(|(_, m)| m.is_empty()).map(|(&c, _)| c).collect();
    if !empty.is_empty() {
        warn!("{} evaluation cells have no quadrature weight and are skipped", empty.len());
    }
    members.retain(|_, m| !m.is_empty());
    let mut observed_by_cell: BTreeMap<usize, u64> = BTreeMap::new();
    for &(x, y) in test_points {
        if let Some(c) = grid.cell_of(x, y) {
            *observed_by_cell.entry(c).or_default() += 1;
        }
    }
    let cell_ids: Vec<usize> = members.keys().copied().collect();
    let intensities: Vec<Vec<f64>> = cell_ids
        .par_iter()
        .map(|c| {
            let m = &members[c];
            samples
                .iter()
                .map(|x| {
                    scale * m.iter().map(|&(q, w)| w * eta_of(rows[q].as_ref().unwrap(), x).exp()).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let counts = intensities
        .par_iter()
        .zip(&cell_ids)
        .map(|(lams, &c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            lams.iter()
                .map(|&l| {
                    if l > 0.0 {
                        Poisson::new(l)
                            .map(|p| p.sample(&mut rng) as u64)
                            .map_err(|e| Error::Numerical(format!("cell {c}: {e}")))
                    } else {
                        Ok(0)
                    }
                })
                .collect::<Result<Vec<u64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(GridCounts {
        observed: cell_ids.iter().map(|c| observed_by_cell.get(c).copied().unwrap_or(0)).collect(),
        cell_ids,
        intensities,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub se: f64,
    pub ds: f64,
    pub ls: f64,
    /// Absent for log-size forecasts.
    pub crps: Option<f64>,
    /// LS hit the underflow sentinel.
    pub ls_capped: bool,
}

fn dawid_sebastiani(y: f64, e: f64, v: f64) -> f64 {
    if v > 0.0 {
        (y - e) * (y - e) / v + v.ln()
    } else if y == e {
        0.0
    } else {
        f64::INFINITY
    }
}

fn log_mean_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (logs.iter().map(|l| (l - m).exp()).sum::<f64>() / logs.len() as f64).ln()
}

fn poisson_ln_pmf(k: u64, lam: f64) -> f64 {
    if lam == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lam.ln() - lam - ln_factorial(k)
}

/// Truncation point of the CRPS sum.
pub fn crps_kmax(y: u64, max_lam: f64) -> u64 {
    y.max(max_lam.ceil() as u64) + (40.0 * max_lam.sqrt()).ceil() as u64 + 40
}

/// CRPS of a Poisson mixture summed over `0..=kmax`.
pub fn poisson_mixture_crps(lams: &[f64], y: u64, kmax: u64) -> f64 {
    let len = kmax as usize + 1;
    // Sum over draws of each draw's CDF, built from per-draw windows around
    // the mode; outside a window the CDF is 0 below and 1 above.
    let mut cdf_sum = vec![0.0f64; len];
    let mut ones_from = vec![0u32; len + 1];
    for &lam in lams {
        if lam <= 0.0 {
            ones_from[0] += 1;
            continue;
        }
        let spread = 40.0 * lam.sqrt() + 40.0;
        let lo = (lam - spread).floor().max(0.0) as usize;
        let hi = ((lam + spread).ceil() as usize).min(kmax as usize);
        if lo > hi {
            continue;
        }
        let mode = (lam.floor() as usize).clamp(lo, hi);
        let mut pmf = vec![0.0f64; hi - lo + 1];
        pmf[mode - lo] = poisson_ln_pmf(mode as u64, lam).exp();
        for k in mode + 1..=hi {
            pmf[k - lo] = pmf[k - 1 - lo] * lam / k as f64;
        }
        for k in (lo..mode).rev() {
            pmf[k - lo] = pmf[k + 1 - lo] * (k + 1) as f64 / lam;
        }
        let mut c = 0.0;
        for k in lo..=hi {
            c += pmf[k - lo];
            cdf_sum[k] += c.min(1.0);
        }
        ones_from[hi + 1] += 1;
    }
    let n = lams.len() as f64;
    let mut ones = 0u32;
    let mut total = 0.0;
    for k in 0..len {
        ones += ones_from[k];
        let f = (cdf_sum[k] + ones as f64) / n;
        let ind = if y <= k as u64 { 1.0 } else { 0.0 };
        total += (f - ind) * (f - ind);
    }
    total
}

/// Scores of a count `y` under an equal-weight mixture of Poisson(lambda_s).
pub fn score_poisson_mixture(lams: &[f64], y: u64) -> Result<Scores> {
    if lams.is_empty() {
        return Err(Error::Config("scoring needs at least one predictive sample".into()));
    }
    if let Some(l) = lams.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Numerical(format!("invalid predictive intensity {l}")));
    }
    let n = lams.len() as f64;
    let e = lams.iter().sum::<f64>() / n;
    let var = lams.iter().map(|l| (l - e) * (l - e)).sum::<f64>() / n;
    let v = e + var;
    let yf = y as f64;
    let logs: Vec<f64> = lams.iter().map(|&l| poisson_ln_pmf(y, l)).collect();
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (ls, ls_capped) = if max_log < (1e-300f64).ln() {
        (LS_SENTINEL, true)
    } else {
        (-log_mean_exp(&logs), false)
    };
    let max_lam = lams.iter().copied().fold(0.0, f64::max);
    Ok(Scores {
        se: (yf - e) * (yf - e),
        ds: dawid_sebastiani(yf, e, v),
        ls,
        crps: Some(poisson_mixture_crps(lams, y, crps_kmax(y, max_lam))),
        ls_capped,
    })
}

/// Scores of `y` under an equal-weight mixture of N(mu_s, sigma2_s).
pub fn score_normal_mixture(mus: &[f64], sigma2: &[f64], y: f64) -> Result<Scores> {
    if mus.is_empty() || mus.len() != sigma2.len() {
        return Err(Error::Config("normal mixture needs matching, non-empty means and variances".into()));
    }
    if let Some(s) = sigma2.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Numerical(format!("non-positive predictive variance {s}")));
    }
    let n = mus.len() as f64;
    let e = mus.iter().sum::<f64>() / n;
    let v = sigma2.iter().sum::<f64>() / n + mus.iter().map(|m| (m - e) * (m - e)).sum::<f64>() / n;
    let logs: Vec<f64> = mus
        .iter()
        .zip(sigma2)
        .map(|(m, s)| -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (y - m) * (y - m) / s))
        .collect();
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (ls, ls_capped) = if max_log < (1e-300f64).ln() {
        (LS_SENTINEL, true)
    } else {
        (-log_mean_exp(&logs), false)
    };
    Ok(Scores { se: (y - e) * (y - e), ds: dawid_sebastiani(y, e, v), ls, crps: None, ls_capped })
}

/// One scored unit: an evaluation cell for counts, a point for log sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub fold: String,
    pub model: String,
    pub cell_id: usize,
    pub y_obs: f64,
    pub scores: Scores,
}

pub fn score_counts(gc: &GridCounts, fold: &str, model: &str) -> Result<Vec<ScoreRow>> {
    gc.cell_ids
        .par_iter()
        .enumerate()
        .map(|(k, &c)| {
            let s = score_poisson_mixture(&gc.intensities[k], gc.observed[k])?;
            Ok(ScoreRow { fold: fold.into(), model: model.into(), cell_id: c, y_obs: gc.observed[k] as f64, scores: s })
        })
        .collect()
}

/// Score held-out log sizes under a log-size posterior.
pub fn score_gaussian(
    post: &Posterior,
    covs: &Covariates,
    test: &PointData,
    samples: &[DVector<f64>],
    fold: &str,
    model: &str,
) -> Result<Vec<ScoreRow>> {
    let marks = test
        .marks
        .as_ref()
        .ok_or_else(|| Error::Data("log-size scoring needs marks".into()))?;
    let tau = post
        .noise_precision
        .ok_or_else(|| Error::Config(format!("model `{}` is not a log-size model", post.model)))?;
    let (rows, _) = post.layout.rows_at_points(covs, &test.points)?;
    let sigma2 = vec![1.0 / tau; samples.len()];
    rows.par_iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
        .map(|(i, r)| {
            let mus: Vec<f64> = samples.iter().map(|x| eta_of(r, x)).collect();
            let s = score_normal_mixture(&mus, &sigma2, marks[i])?;
            Ok(ScoreRow { fold: fold.into(), model: model.into(), cell_id: i, y_obs: marks[i], scores: s })
        })
        .collect()
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if !v.is_nan() => v.to_string(),
        _ => "NA".into(),
    }
}

/// Write `fold,model,cell_id,y_obs,se,ds,ls,crps`.
pub fn write_scores_csv(rows: &[ScoreRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("fold,model,cell_id,y_obs,se,ds,ls,crps\n");
    for r in rows {
        let s = &r.scores;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.fold,
            r.model,
            r.cell_id,
            r.y_obs,
            s.se,
            s.ds,
            s.ls,
            num(s.crps)
        );
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub fold: String,
    pub model: String,
    pub rmse: f64,
    pub ds: f64,
    pub ls: f64,
    pub crps: Option<f64>,
}

/// Mean scores per (fold, model) in first-seen order; RMSE is the root of
/// the mean squared error.
pub fn summarize_scores(rows: &[ScoreRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut acc: BTreeMap<(String, String), (usize, f64, f64, f64, f64, bool)> = BTreeMap::new();
    for r in rows {
        let key = (r.fold.clone(), r.model.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0.0, 0.0, 0.0, 0.0, true)
        });
        e.0 += 1;
        e.1 += r.scores.se;
        e.2 += r.scores.ds;
        e.3 += r.scores.ls;
        match r.scores.crps {
            Some(c) => e.4 += c,
            None => e.5 = false,
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (n, se, ds, ls, crps, has) = acc[&key];
            let n = n as f64;
            SummaryRow {
                fold: key.0,
                model: key.1,
                rmse: (se / n).sqrt(),
                ds: ds / n,
                ls: ls / n,
                crps: has.then_some(crps / n),
            }
        })
        .collect()
}

/// Write `fold,model,rmse,ds,ls,crps`.
pub fn write_score_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("fold,model,rmse,ds,ls,crps\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.fold, r.model, r.rmse, r.ds, r.ls, num(r.crps));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Empirical CDF with a strict inequality: `F(s) = #{x < s} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("ECDF of an empty score list".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Data("ECDF input contains NaN".into()));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.sorted.partition_point(|&x| x < s) as f64 / self.sorted.len() as f64
    }

    /// `(value, F(value))` at each distinct value, then `(inf, 1)`.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = Vec::new();
        for &x in &self.sorted {
            if v.last().is_none_or(|l| l.0 != x) {
                v.push((x, self.eval(x)));
            }
        }
        v.push((f64::INFINITY, 1.0));
        v
    }
}

/// Write `delta,F`.
pub fn write_ecdf_csv(ecdf: &Ecdf, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("delta,F\n");
    for (d, f) in ecdf.steps() {
        let _ = writeln!(out, "{d},{f}");
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Se,
    Ds,
    Ls,
    Crps,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Se => "se",
            ScoreKind::Ds => "ds",
            ScoreKind::Ls => "ls",
            ScoreKind::Crps => "crps",
        }
    }

    fn of(self, s: &Scores) -> Option<f64> {
        match self {
            ScoreKind::Se => Some(s.se),
            ScoreKind::Ds => Some(s.ds),
            ScoreKind::Ls => Some(s.ls),
            ScoreKind::Crps => s.crps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMap {
    /// Per lattice cell `other - base`; nodata where no cell was scored.
    pub raster: Raster,
    pub deltas: Vec<f64>,
    pub ecdf: Ecdf,
}

/// Per-unit `other - base` joined on `cell_id`; the two tables must cover
/// the same units.
pub fn score_differences(base: &[ScoreRow], other: &[ScoreRow], kind: ScoreKind) -> Result<BTreeMap<usize, f64>> {
    let index = |rows: &[ScoreRow]| -> Result<BTreeMap<usize, f64>> {
        rows.iter()
            .map(|r| {
                kind.of(&r.scores)
                    .map(|v| (r.cell_id, v))
                    .ok_or_else(|| Error::Join(format!("score `{}` missing for cell {}", kind.name(), r.cell_id)))
            })
            .collect()
    };
    let (a, b) = (index(base)?, index(other)?);
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Join("score tables cover different cells".into()));
    }
    Ok(a.into_iter().map(|(c, va)| (c, b[&c] - va)).collect())
}

/// Cellwise `other - base` for one fold; negative means `other` is better.
pub fn score_difference_map(
    base: &[ScoreRow],
    other: &[ScoreRow],
    grid: &EvalGrid,
    kind: ScoreKind,
) -> Result<DifferenceMap> {
    let diffs = score_differences(base, other, kind)?;
    let h = grid.header();
    let mut raster = Raster::nodata_like(h);
    let mut deltas = Vec::with_capacity(diffs.len());
    for (&c, &d) in &diffs {
        if c >= grid.len() {
            return Err(Error::Join(format!("cell {c} is outside the evaluation grid")));
        }
        raster.set(grid.pixel(c), Some(d));
        deltas.push(d);
    }
    let ecdf = Ecdf::new(&deltas)?;
    Ok(DifferenceMap { raster, deltas, ecdf })
}
