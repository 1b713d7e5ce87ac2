//! Prediction rasters, coefficient of variation and posterior summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;

use super::design::{RowEval, SparseRow};
use super::inference::{sample_posterior, Posterior};
use super::{Covariates, Response};
use crate::error::{Error, Result};
use crate::raster::{GridHeader, Raster};

/// Linear predictor of one design row under latent vector `x`.
pub fn eta_of(row: &SparseRow, x: &DVector<f64>) -> f64 {
    row.iter().map(|&(j, v)| x[j] * v).sum()
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Mean of exp(eta) per cell: intensity per km² for centroid models.
    /// For log-size models this holds the mean of eta (the log-size surface).
    pub mean: Raster,
    /// Population standard deviation of exp(eta) over its mean.
    pub cv: Raster,
    /// Per-term contribution to eta at the posterior mode.
    pub effects: Vec<(String, Raster)>,
    /// Cells whose categorical level was absent from the training data.
    pub unseen_cells: usize,
}

/// Draw `n_samples` latent vectors and summarise them on `target`.
pub fn predict_raster(
    post: &Posterior,
    covs: &Covariates,
    target: &GridHeader,
    n_samples: usize,
    seed: u64,
) -> Result<Prediction> {
    let samples = sample_posterior(post, n_samples, seed)?;
    predict_from_samples(post, covs, target, &samples)
}

pub fn predict_from_samples(
    post: &Posterior,
    covs: &Covariates,
    target: &GridHeader,
    samples: &[DVector<f64>],
) -> Result<Prediction> {
    if samples.is_empty() {
        return Err(Error::Config("prediction needs at least one posterior sample".into()));
    }
    if let Some(h) = covs.header() {
        target.ensure_aligned(&h, "prediction covariates")?;
    }
    let layout = &post.layout;
    let layers = layout.layers(covs)?;
    let per_cell: Vec<Option<(SparseRow, bool)>> = (0..target.len())
        .into_par_iter()
        .map(|i| match layout.row(&layout.values_at_cell(&layers, i)) {
            RowEval::Missing => None,
            RowEval::Row { row, unseen_level } => Some((row, unseen_level)),
        })
        .collect();
    let unseen_cells = per_cell.iter().flatten().filter(|(_, u)| *u).count();
    if unseen_cells > 0 {
        warn!("{}: {unseen_cells} cells carry categorical levels absent from training; effect set to 0", post.model);
    }
    let log_sizes = layout.response == Response::LogSizes;
    let stats: Vec<Option<(f64, f64)>> = per_cell
        .par_iter()
        .map(|cell| {
            let (row, _) = cell.as_ref()?;
            // Welford over exp(eta); eta mean tracked for log-size surfaces.
            let (mut mean, mut m2, mut eta_mean) = (0.0f64, 0.0f64, 0.0f64);
            for (k, x) in samples.iter().enumerate() {
                let e = eta_of(row, x);
                let v = e.exp();
                let d = v - mean;
                mean += d / (k + 1) as f64;
                m2 += d * (v - mean);
                eta_mean += (e - eta_mean) / (k + 1) as f64;
            }
            let sd = (m2 / samples.len() as f64).sqrt();
            let cv = if mean > 0.0 { sd / mean } else { 0.0 };
            Some((if log_sizes { eta_mean } else { mean }, cv))
        })
        .collect();
    let nodata = target.nodata;
    let mean = Raster::new(*target, stats.iter().map(|s| s.map_or(nodata, |s| s.0)).collect())?;
    let cv = Raster::new(*target, stats.iter().map(|s| s.map_or(nodata, |s| s.1)).collect())?;
    let effects = layout
        .blocks
        .iter()
        .filter(|b| b.term.is_some())
        .map(|b| {
            let range = b.offset..b.offset + b.size;
            let cells = per_cell
                .iter()
                .map(|cell| match cell {
                    None => nodata,
                    Some((row, _)) => row
                        .iter()
                        .filter(|(j, _)| range.contains(j))
                        .map(|&(j, v)| post.mode[j] * v)
                        .sum(),
                })
                .collect();
            Ok((b.label.clone(), Raster::new(*target, cells)?))
        })
        .collect::<Result<_>>()?;
    Ok(Prediction { mean, cv, effects, unseen_cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub term: String,
    pub level_or_bin: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

const Z975: f64 = 1.959_963_984_540_054;

/// Gaussian marginals of every latent entry, followed by the modal
/// precisions (without spread).
pub fn summarize(post: &Posterior) -> Vec<SummaryRow> {
    let sd = post.sd();
    let mut out = Vec::new();
    for b in &post.layout.blocks {
        for k in 0..b.size {
            let j = b.offset + k;
            let m = post.mode[j];
            out.push(SummaryRow {
                term: b.label.clone(),
                level_or_bin: b.entry_label(k),
                mean: m,
                sd: sd[j],
                q025: m - Z975 * sd[j],
                q975: m + Z975 * sd[j],
            });
        }
    }
    for (label, t) in post.hyper_labels.iter().zip(&post.hyper) {
        let p = t.exp();
        out.push(SummaryRow {
            term: label.clone(),
            level_or_bin: String::new(),
            mean: p,
            sd: f64::NAN,
            q025: f64::NAN,
            q975: f64::NAN,
        });
    }
    out
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        v.to_string()
    }
}

/// Write `term,level_or_bin,mean,sd,q025,q975`.
pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("term,level_or_bin,mean,sd,q025,q975\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.term,
            r.level_or_bin,
            num(r.mean),
            num(r.sd),
            num(r.q025),
            num(r.q975)
        );
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Quadrature;
    use crate::model::{build_design, fit, degenerate_samples, FitOptions, ModelSpec, PointData, Term, Transform, Effect};

    fn homogeneous() -> Posterior {
        let spec = ModelSpec { name: "h".into(), response: Response::Centroids, terms: vec![], intercept: true };
        let quad = Quadrature { points: vec![(0.0, 0.0); 5], weights: vec![1e6; 5] };
        let lm = build_design(&spec, &PointData::new(vec![(0.0, 0.0); 10], None).unwrap(), &quad, &Covariates::new())
            .unwrap();
        fit(&lm, &FitOptions::default()).unwrap()
    }

    #[test]
    fn intercept_only_surface_is_constant() {
        let post = homogeneous();
        let h = GridHeader::new(4, 3, 0.0, 0.0, 100.0, -9999.0).unwrap();
        let p = predict_from_samples(&post, &Covariates::new(), &h, &degenerate_samples(&post, 10)).unwrap();
        assert!(p.mean.cells().iter().all(|&v| (v - 2.0).abs() < 1e-8));
        assert!(p.cv.cells().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_sample_mean_and_cv() {
        let mut post = homogeneous();
        post.mode[0] = 0.0;
        let samples = vec![DVector::from_element(1, 0.0), DVector::from_element(1, 3f64.ln())];
        let h = GridHeader::new(1, 1, 0.0, 0.0, 100.0, -9999.0).unwrap();
        let p = predict_from_samples(&post, &Covariates::new(), &h, &samples).unwrap();
        assert!((p.mean.cells()[0] - 2.0).abs() < 1e-12);
        assert!((p.cv.cells()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misaligned_covariates_and_unseen_levels() {
        let h = GridHeader::new(3, 1, 0.0, 0.0, 100.0, -9999.0).unwrap();
        let mut c = Covariates::new();
        c.insert("g", Raster::categorical(h, vec![1.0, 2.0, 1.0]).unwrap()).unwrap();
        let spec = ModelSpec {
            name: "g".into(),
            response: Response::Centroids,
            terms: vec![Term::new("g", Transform::Identity, Effect::Iid)],
            intercept: true,
        };
        let quad = Quadrature { points: vec![(50.0, 50.0), (150.0, 50.0)], weights: vec![1e4, 1e4] };
        let lm = build_design(&spec, &PointData::new(vec![(50.0, 50.0)], None).unwrap(), &quad, &c).unwrap();
        let post = fit(&lm, &FitOptions::default()).unwrap();
        let mut c2 = Covariates::new();
        c2.insert("g", Raster::categorical(h, vec![1.0, 5.0, -9999.0]).unwrap()).unwrap();
        let p = predict_from_samples(&post, &c2, &h, &degenerate_samples(&post, 2)).unwrap();
        assert_eq!(p.unseen_cells, 1);
        assert_eq!(p.effects[0].1.value(1), Some(0.0));
        assert_eq!(p.mean.value(2), None);
        let other = GridHeader::new(3, 1, 10.0, 0.0, 100.0, -9999.0).unwrap();
        assert!(predict_from_samples(&post, &c, &other, &degenerate_samples(&post, 2)).is_err());
    }

    #[test]
    fn summary_csv_layout() {
        let post = homogeneous();
        let rows = summarize(&post);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].term, "intercept");
        assert!((rows[0].q975 - rows[0].mean - Z975 * rows[0].sd).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_summary_csv(&rows, &p).unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert!(text.starts_with("term,level_or_bin,mean,sd,q025,q975\nintercept,,"));
    }
}
