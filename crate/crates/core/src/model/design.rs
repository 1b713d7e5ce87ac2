//! Latent layout and the sparse design rows of a model.

use log::warn;
use nalgebra::DMatrix;

use super::{Covariates, Effect, ModelSpec, Response, Term};
use crate::error::{Error, Result};
use crate::mesh::Quadrature;
use crate::raster::Raster;

/// (latent index, coefficient) pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Observed landslides: centroids in metres, optional log sizes (log m²).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointData {
    pub points: Vec<(f64, f64)>,
    pub marks: Option<Vec<f64>>,
}

impl PointData {
    pub fn new(points: Vec<(f64, f64)>, marks: Option<Vec<f64>>) -> Result<Self> {
        if let Some(m) = &marks {
            if m.len() != points.len() {
                return Err(Error::Data(format!("{} marks for {} points", m.len(), points.len())));
            }
            if let Some(i) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("mark {i} is not finite")));
            }
        }
        Ok(Self { points, marks })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            marks: self.marks.as_ref().map(|m| idx.iter().map(|&i| m[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    Intercept,
    Linear,
    /// Sorted category codes seen in the training rows.
    Iid { levels: Vec<i64> },
    /// Equal-width bins over `[lo, hi]`.
    Rw2 { lo: f64, hi: f64, bins: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Index into the model terms; `None` for the intercept.
    pub term: Option<usize>,
    pub label: String,
    pub offset: usize,
    pub size: usize,
    pub kind: BlockKind,
}

impl Block {
    pub fn has_hyper(&self) -> bool {
        matches!(self.kind, BlockKind::Iid { .. } | BlockKind::Rw2 { .. })
    }

    /// Rank of the block's prior precision on the sum-to-zero subspace.
    pub fn prior_rank(&self) -> usize {
        match self.kind {
            BlockKind::Iid { .. } => self.size - 1,
            BlockKind::Rw2 { .. } => self.size - 2,
            _ => 0,
        }
    }

    /// Human-readable name of entry `k` of the block.
    pub fn entry_label(&self, k: usize) -> String {
        match &self.kind {
            BlockKind::Intercept | BlockKind::Linear => String::new(),
            BlockKind::Iid { levels } => levels[k].to_string(),
            BlockKind::Rw2 { lo, hi, bins } => {
                let w = (hi - lo) / *bins as f64;
                format!("{}", lo + (k as f64 + 0.5) * w)
            }
        }
    }
}

/// Result of evaluating one location against the layout.
#[derive(Debug, Clone, PartialEq)]
pub enum RowEval {
    /// Some covariate is nodata or outside its transform's domain.
    Missing,
    Row { row: SparseRow, unseen_level: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub response: Response,
    pub terms: Vec<Term>,
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl Layout {
    /// Covariate layers in term order.
    pub fn layers<'a>(&self, covs: &'a Covariates) -> Result<Vec<&'a Raster>> {
        self.terms.iter().map(|t| covs.get(&t.covariate)).collect()
    }

    /// Transformed covariate values at one cell.
    pub fn values_at_cell(&self, layers: &[&Raster], idx: usize) -> Vec<Option<f64>> {
        self.terms
            .iter()
            .zip(layers)
            .map(|(t, r)| r.value(idx).and_then(|v| t.transform.apply(v)))
            .collect()
    }

    pub fn row(&self, values: &[Option<f64>]) -> RowEval {
        let mut row = SparseRow::with_capacity(self.blocks.len());
        let mut unseen_level = false;
        for b in &self.blocks {
            let v = match b.term {
                None => {
                    row.push((b.offset, 1.0));
                    continue;
                }
                Some(t) => match values[t] {
                    Some(v) => v,
                    None => return RowEval::Missing,
                },
            };
            match &b.kind {
                BlockKind::Intercept => unreachable!("intercept has no term"),
                BlockKind::Linear => row.push((b.offset, v)),
                BlockKind::Iid { levels } => match levels.binary_search(&(v.round() as i64)) {
                    Ok(k) => row.push((b.offset + k, 1.0)),
                    Err(_) => unseen_level = true,
                },
                BlockKind::Rw2 { lo, hi, bins } => row.push((b.offset + bin_of(v, *lo, *hi, *bins), 1.0)),
            }
        }
        RowEval::Row { row, unseen_level }
    }

    /// Rows at arbitrary points (cell lookup). Missing rows are `None`; the
    /// second value counts rows touching an unseen category.
    pub fn rows_at_points(&self, covs: &Covariates, pts: &[(f64, f64)]) -> Result<(Vec<Option<SparseRow>>, usize)> {
        let layers = self.layers(covs)?;
        let Some(h) = covs.header() else {
            return Ok((pts.iter().map(|_| self.row(&[]).into_row()).collect(), 0));
        };
        let mut unseen = 0;
        let rows = pts
            .iter()
            .map(|&(x, y)| {
                let idx = h.locate(x, y)?;
                match self.row(&self.values_at_cell(&layers, idx)) {
                    RowEval::Missing => None,
                    RowEval::Row { row, unseen_level } => {
                        unseen += unseen_level as usize;
                        Some(row)
                    }
                }
            })
            .collect();
        Ok((rows, unseen))
    }

    pub fn hyper_blocks(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&b| self.blocks[b].has_hyper()).collect()
    }

    /// One sum-to-zero row per iid / RW2 block.
    pub fn constraints(&self) -> DMatrix<f64> {
        let hb = self.hyper_blocks();
        let mut a = DMatrix::zeros(hb.len(), self.dim);
        for (r, &b) in hb.iter().enumerate() {
            let blk = &self.blocks[b];
            for k in 0..blk.size {
                a[(r, blk.offset + k)] = 1.0;
            }
        }
        a
    }

    /// Block of latent index `i`.
    pub fn block_of(&self, i: usize) -> &Block {
        self.blocks
            .iter()
            .find(|b| i >= b.offset && i < b.offset + b.size)
            .expect("index within layout")
    }
}

impl RowEval {
    fn into_row(self) -> Option<SparseRow> {
        match self {
            RowEval::Row { row, .. } => Some(row),
            RowEval::Missing => None,
        }
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if !(hi > lo) {
        return 0;
    }
    let k = ((v - lo) / (hi - lo) * bins as f64).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(bins - 1)
    }
}

/// RW2 structure matrix `D2ᵀ D2` for `n` bins.
pub fn rw2_structure(n: usize) -> Result<DMatrix<f64>> {
    if n < 5 {
        return Err(Error::Config(format!("rw2 needs at least 5 bins, got {n}")));
    }
    let mut q = DMatrix::zeros(n, n);
    let d = [1.0, -2.0, 1.0];
    for r in 0..n - 2 {
        for a in 0..3 {
            for b in 0..3 {
                q[(r + a, r + b)] += d[a] * d[b];
            }
        }
    }
    Ok(q)
}

/// Design and response of one model.
///
/// For centroids the first `n_point_rows` rows are the observed points and
/// the rest are quadrature nodes with weights in km²; for log sizes every row
/// is a marked point with response `y`.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub spec: ModelSpec,
    pub layout: Layout,
    pub rows: Vec<SparseRow>,
    pub n_point_rows: usize,
    pub quad_weights: Vec<f64>,
    pub y: Vec<f64>,
    pub dropped_points: usize,
    /// Quadrature weight (m²) lost to nodata covariates.
    pub dropped_weight: f64,
}

impl LatentModel {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Total retained quadrature weight, km².
    pub fn total_weight(&self) -> f64 {
        self.quad_weights.iter().sum()
    }
}

pub fn build_design(spec: &ModelSpec, data: &PointData, quad: &Quadrature, covs: &Covariates) -> Result<LatentModel> {
    spec.validate()?;
    let terms = spec.terms.clone();
    let mut layers = Vec::with_capacity(terms.len());
    for t in &terms {
        let r = covs.get(&t.covariate)?;
        if r.valid_count() == 0 {
            return Err(Error::Config(format!("covariate `{}` is entirely nodata", t.covariate)));
        }
        layers.push(r);
    }
    let header = covs.header();
    let values_at = |(x, y): (f64, f64)| -> Option<Vec<f64>> {
        let h = header?;
        let idx = h.locate(x, y)?;
        terms
            .iter()
            .zip(&layers)
            .map(|(t, r)| r.value(idx).and_then(|v| t.transform.apply(v)))
            .collect()
    };
    let marks = match spec.response {
        Response::LogSizes => Some(
            data.marks
                .as_ref()
                .ok_or_else(|| Error::Data(format!("model `{}` needs log sizes but points carry none", spec.name)))?,
        ),
        Response::Centroids => None,
    };

    let mut point_vals = Vec::new();
    let mut y = Vec::new();
    let mut dropped_points = 0;
    for (i, &p) in data.points.iter().enumerate() {
        match if terms.is_empty() { Some(vec![]) } else { values_at(p) } {
            Some(v) => {
                point_vals.push(v);
                if let Some(m) = marks {
                    y.push(m[i]);
                }
            }
            None => dropped_points += 1,
        }
    }
    let mut quad_vals = Vec::new();
    let mut quad_weights = Vec::new();
    let mut dropped_weight = 0.0;
    if spec.response == Response::Centroids {
        for (&p, &w) in quad.points.iter().zip(&quad.weights) {
            match if terms.is_empty() { Some(vec![]) } else { values_at(p) } {
                Some(v) => {
                    quad_vals.push(v);
                    quad_weights.push(w / 1e6);
                }
                None => dropped_weight += w,
            }
        }
        if quad_weights.is_empty() {
            return Err(Error::Data("no quadrature node has complete covariates".into()));
        }
    }
    if dropped_points > 0 {
        warn!("{}: dropped {dropped_points} points with nodata covariates", spec.name);
    }
    if dropped_weight > 0.0 {
        warn!("{}: dropped {dropped_weight} m² of quadrature weight with nodata covariates", spec.name);
    }

    let all: Vec<&Vec<f64>> = point_vals.iter().chain(&quad_vals).collect();
    if all.is_empty() {
        return Err(Error::Data(format!("model `{}` has no usable observations", spec.name)));
    }
    let mut blocks = Vec::new();
    let mut dim = 0;
    if spec.intercept {
        blocks.push(Block { term: None, label: "intercept".into(), offset: 0, size: 1, kind: BlockKind::Intercept });
        dim = 1;
    }
    for (ti, t) in terms.iter().enumerate() {
        let kind = match t.effect {
            Effect::Linear => BlockKind::Linear,
            Effect::Iid => {
                let mut levels: Vec<i64> = all.iter().map(|v| v[ti].round() as i64).collect();
                levels.sort_unstable();
                levels.dedup();
                BlockKind::Iid { levels }
            }
            Effect::Rw2 { bins } => {
                let lo = all.iter().map(|v| v[ti]).fold(f64::INFINITY, f64::min);
                let hi = all.iter().map(|v| v[ti]).fold(f64::NEG_INFINITY, f64::max);
                BlockKind::Rw2 { lo, hi, bins }
            }
        };
        let size = match &kind {
            BlockKind::Iid { levels } => levels.len(),
            BlockKind::Rw2 { bins, .. } => *bins,
            _ => 1,
        };
        blocks.push(Block { term: Some(ti), label: t.label(), offset: dim, size, kind });
        dim += size;
    }
    let layout = Layout { response: spec.response, terms: terms.clone(), blocks, dim };
    let to_row = |v: &Vec<f64>| -> SparseRow {
        let vals: Vec<Option<f64>> = v.iter().map(|&x| Some(x)).collect();
        layout.row(&vals).into_row().expect("complete values")
    };
    let rows: Vec<SparseRow> = point_vals.iter().chain(&quad_vals).map(to_row).collect();
    if spec.response == Response::Centroids {
        // A bin or level holding points but no quadrature weight has an
        // unbounded likelihood; the mesh is too coarse for the covariate.
        let mut covered = vec![false; dim];
        for r in &rows[point_vals.len()..] {
            for &(j, _) in r {
                covered[j] = true;
            }
        }
        let mut orphans: Vec<usize> = rows[..point_vals.len()].iter().flatten().map(|&(j, _)| j).filter(|&j| !covered[j]).collect();
        orphans.sort_unstable();
        orphans.dedup();
        for j in orphans {
            let b = layout.block_of(j);
            warn!(
                "{}: `{}` entry {} holds points but no quadrature weight; refine the mesh",
                spec.name,
                b.label,
                b.entry_label(j - b.offset)
            );
        }
    }
    Ok(LatentModel {
        spec: spec.clone(),
        n_point_rows: point_vals.len(),
        layout,
        rows,
        quad_weights,
        y,
        dropped_points,
        dropped_weight,
    })
}
