//! Regular-grid rasters, ESRI ASCII grid I/O, resampling and point sampling.
//!
//! Cells are stored row-major with row 0 at the northern edge. All coordinate
//! arithmetic is done relative to the lower-left corner of the grid, as in the
//! ESRI ASCII header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Grid geometry plus the nodata sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub ncols: usize,
    pub nrows: usize,
    /// Easting of the lower-left corner (m).
    pub x_origin: f64,
    /// Northing of the lower-left corner (m).
    pub y_origin: f64,
    pub cell_size: f64,
    pub nodata: f64,
}

impl GridHeader {
    pub fn new(
        ncols: usize,
        nrows: usize,
        x_origin: f64,
        y_origin: f64,
        cell_size: f64,
        nodata: f64,
    ) -> Result<Self> {
        if ncols == 0 {
            return Err(Error::Format { key: "NCOLS".into(), reason: "must be >= 1".into() });
        }
        if nrows == 0 {
            return Err(Error::Format { key: "NROWS".into(), reason: "must be >= 1".into() });
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Format { key: "CELLSIZE".into(), reason: "must be > 0".into() });
        }
        if !x_origin.is_finite() || !y_origin.is_finite() {
            return Err(Error::Format { key: "XLLCORNER".into(), reason: "must be finite".into() });
        }
        Ok(Self { ncols, nrows, x_origin, y_origin, cell_size, nodata })
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> f64 {
        self.ncols as f64 * self.cell_size
    }

    pub fn height(&self) -> f64 {
        self.nrows as f64 * self.cell_size
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// Alignment compares geometry only; the nodata sentinel may differ.
    pub fn is_aligned(&self, other: &GridHeader) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.x_origin == other.x_origin
            && self.y_origin == other.y_origin
            && self.cell_size == other.cell_size
    }

    pub fn ensure_aligned(&self, other: &GridHeader, what: &str) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::Alignment(format!(
                "{what}: {}x{} @ ({}, {}) cs {} vs {}x{} @ ({}, {}) cs {}",
                self.ncols,
                self.nrows,
                self.x_origin,
                self.y_origin,
                self.cell_size,
                other.ncols,
                other.nrows,
                other.x_origin,
                other.y_origin,
                other.cell_size
            )))
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    #[inline]
    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.ncols, idx % self.ncols)
    }

    /// Map coordinates of the centre of cell `idx`.
    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (row, col) = self.row_col(idx);
        (
            self.x_origin + (col as f64 + 0.5) * self.cell_size,
            self.y_origin + (self.nrows as f64 - row as f64 - 0.5) * self.cell_size,
        )
    }

    /// Cell containing `(x, y)`. Points on a shared boundary belong to the cell
    /// with the larger column index / larger northing index.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let fc = ((x - self.x_origin) / self.cell_size).floor();
        let fr = ((y - self.y_origin) / self.cell_size).floor();
        if !(fc >= 0.0 && fr >= 0.0) || fc >= self.ncols as f64 || fr >= self.nrows as f64 {
            return None;
        }
        let col = fc as usize;
        let row = self.nrows - 1 - fr as usize;
        Some(self.index(row, col))
    }

    /// Axis-aligned extent `(xmin, ymin, xmax, ymax)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.x_origin,
            self.y_origin,
            self.x_origin + self.width(),
            self.y_origin + self.height(),
        )
    }
}

/// Whether cell values are continuous measurements or category codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub header: GridHeader,
    pub kind: CellKind,
    cells: Vec<f64>,
}

impl Raster {
    pub fn new(header: GridHeader, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != header.len() {
            return Err(Error::Truncation { expected: header.len(), found: cells.len() });
        }
        Ok(Self { header, kind: CellKind::Continuous, cells })
    }

    pub fn categorical(header: GridHeader, cells: Vec<f64>) -> Result<Self> {
        Ok(Self::new(header, cells)?.with_kind(CellKind::Categorical))
    }

    pub fn filled(header: GridHeader, value: f64) -> Self {
        Self { header, kind: CellKind::Continuous, cells: vec![value; header.len()] }
    }

    pub fn nodata_like(header: GridHeader) -> Self {
        Self::filled(header, header.nodata)
    }

    pub fn with_kind(mut self, kind: CellKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<f64> {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn is_nodata_value(&self, v: f64) -> bool {
        v.is_nan() || v == self.header.nodata
    }

    #[inline]
    pub fn is_nodata(&self, idx: usize) -> bool {
        self.is_nodata_value(self.cells[idx])
    }

    #[inline]
    pub fn value(&self, idx: usize) -> Option<f64> {
        let v = self.cells[idx];
        if self.is_nodata_value(v) {
            None
        } else {
            Some(v)
        }
    }

    pub fn set(&mut self, idx: usize, value: Option<f64>) {
        self.cells[idx] = value.unwrap_or(self.header.nodata);
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| !self.is_nodata(i)).count()
    }

    /// Pointwise map; nodata in gives nodata out, and `None` from `f` marks
    /// the output cell nodata.
    pub fn map(&self, f: impl Fn(f64) -> Option<f64> + Sync) -> Raster {
        let nodata = self.header.nodata;
        let cells = self
            .cells
            .par_iter()
            .map(|&v| if self.is_nodata_value(v) { nodata } else { f(v).unwrap_or(nodata) })
            .collect();
        Raster { header: self.header, kind: CellKind::Continuous, cells }
    }

    /// Pointwise binary map over two aligned rasters with nodata propagation.
    pub fn zip_map(&self, other: &Raster, f: impl Fn(f64, f64) -> Option<f64> + Sync) -> Result<Raster> {
        self.header.ensure_aligned(&other.header, "zip_map")?;
        let nodata = self.header.nodata;
        let cells = (0..self.len())
            .into_par_iter()
            .map(|i| match (self.value(i), other.value(i)) {
                (Some(a), Some(b)) => f(a, b).unwrap_or(nodata),
                _ => nodata,
            })
            .collect();
        Ok(Raster { header: self.header, kind: CellKind::Continuous, cells })
    }
}

/// Boolean layer aligned to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub header: GridHeader,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(header: GridHeader, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != header.len() {
            return Err(Error::Truncation { expected: header.len(), found: cells.len() });
        }
        Ok(Self { header, cells })
    }

    pub fn empty(header: GridHeader) -> Self {
        Self { header, cells: vec![false; header.len()] }
    }

    /// True where the raster holds a non-zero valid value.
    pub fn from_raster(r: &Raster) -> Self {
        let cells = (0..r.len()).map(|i| r.value(i).is_some_and(|v| v != 0.0)).collect();
        Self { header: r.header, cells }
    }

    /// True where the raster holds any valid value.
    pub fn valid_cells(r: &Raster) -> Self {
        let cells = (0..r.len()).map(|i| !r.is_nodata(i)).collect();
        Self { header: r.header, cells }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.cells[idx]
    }

    pub fn set(&mut self, idx: usize, v: bool) {
        self.cells[idx] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn to_raster(&self) -> Raster {
        let cells = self.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Raster { header: self.header, kind: CellKind::Categorical, cells }
    }
}

// ---------------------------------------------------------------------------
// ESRI ASCII grid

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<Raster> {
    let text = fs::read_to_string(path)?;
    parse_ascii_grid(&text)
}

pub fn parse_ascii_grid(text: &str) -> Result<Raster> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut x_center = false;
    let mut y_center = false;
    let mut cellsize = None;
    let mut nodata = -9999.0;

    let mut lines = text.lines().peekable();
    while let Some(line) = lines.peek() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            lines.next();
            continue;
        }
        let first = trimmed.chars().next().unwrap_or(' ');
        if !first.is_ascii_alphabetic() {
            break;
        }
        let mut parts = trimmed.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_uppercase();
        let raw = parts.next().ok_or_else(|| Error::Format {
            key: key.clone(),
            reason: "missing value".into(),
        })?;
        let num = |k: &str| -> Result<f64> {
            raw.parse::<f64>()
                .map_err(|_| Error::Format { key: k.into(), reason: format!("cannot parse `{raw}`") })
        };
        let int = |k: &str| -> Result<usize> {
            raw.parse::<usize>()
                .map_err(|_| Error::Format { key: k.into(), reason: format!("cannot parse `{raw}`") })
        };
        match key.as_str() {
            "NCOLS" => ncols = Some(int("NCOLS")?),
            "NROWS" => nrows = Some(int("NROWS")?),
            "XLLCORNER" => xll = Some(num("XLLCORNER")?),
            "YLLCORNER" => yll = Some(num("YLLCORNER")?),
            "XLLCENTER" => {
                xll = Some(num("XLLCENTER")?);
                x_center = true;
            }
            "YLLCENTER" => {
                yll = Some(num("YLLCENTER")?);
                y_center = true;
            }
            "CELLSIZE" => cellsize = Some(num("CELLSIZE")?),
            "NODATA_VALUE" => nodata = num("NODATA_VALUE")?,
            other => {
                return Err(Error::Format { key: other.to_string(), reason: "unknown header key".into() })
            }
        }
        lines.next();
    }

    let missing = |k: &str| Error::Format { key: k.into(), reason: "missing".into() };
    let ncols = ncols.ok_or_else(|| missing("NCOLS"))?;
    let nrows = nrows.ok_or_else(|| missing("NROWS"))?;
    let cellsize = cellsize.ok_or_else(|| missing("CELLSIZE"))?;
    let mut xll = xll.ok_or_else(|| missing("XLLCORNER"))?;
    let mut yll = yll.ok_or_else(|| missing("YLLCORNER"))?;
    if x_center {
        xll -= 0.5 * cellsize;
    }
    if y_center {
        yll -= 0.5 * cellsize;
    }
    let header = GridHeader::new(ncols, nrows, xll, yll, cellsize, nodata)?;

    let expected = header.len();
    let mut cells = Vec::with_capacity(expected);
    for line in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Format {
                key: "DATA".into(),
                reason: format!("cannot parse cell value `{tok}`"),
            })?;
            cells.push(v);
        }
    }
    if cells.len() != expected {
        return Err(Error::Truncation { expected, found: cells.len() });
    }
    Raster::new(header, cells)
}

pub fn to_ascii_string(r: &Raster) -> String {
    let h = &r.header;
    let mut out = String::with_capacity(h.len() * 8 + 128);
    let _ = writeln!(out, "NCOLS {}", h.ncols);
    let _ = writeln!(out, "NROWS {}", h.nrows);
    let _ = writeln!(out, "XLLCORNER {}", h.x_origin);
    let _ = writeln!(out, "YLLCORNER {}", h.y_origin);
    let _ = writeln!(out, "CELLSIZE {}", h.cell_size);
    let _ = writeln!(out, "NODATA_VALUE {}", h.nodata);
    for row in 0..h.nrows {
        for col in 0..h.ncols {
            if col > 0 {
                out.push(' ');
            }
            let i = h.index(row, col);
            // Display for f64 emits the shortest string that parses back to the same bits.
            let v = if r.is_nodata(i) { h.nodata } else { r.cells[i] };
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_ascii_string(r))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Resampling and sampling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
}

pub fn resample(src: &Raster, target: &GridHeader, method: ResampleMethod) -> Result<Raster> {
    if method == ResampleMethod::Bilinear && src.kind == CellKind::Categorical {
        return Err(Error::Type("bilinear resampling of a categorical raster".into()));
    }
    let nodata = target.nodata;
    let cells: Vec<f64> = (0..target.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = target.cell_center(i);
            let v = match method {
                ResampleMethod::Nearest => src.header.locate(x, y).and_then(|j| src.value(j)),
                ResampleMethod::Bilinear => bilinear_at(src, x, y),
            };
            v.unwrap_or(nodata)
        })
        .collect();
    Ok(Raster { header: *target, kind: src.kind, cells })
}

/// Bilinear interpolation between the four enclosing cell centres. Within half a
/// cell of the edge the interpolation clamps to the edge cells.
pub fn bilinear_at(r: &Raster, x: f64, y: f64) -> Option<f64> {
    let h = &r.header;
    let (xmin, ymin, xmax, ymax) = h.extent();
    if !(x >= xmin && x <= xmax && y >= ymin && y <= ymax) {
        return None;
    }
    let fx = ((x - xmin) / h.cell_size - 0.5).clamp(0.0, (h.ncols - 1) as f64);
    let fy = ((ymax - y) / h.cell_size - 0.5).clamp(0.0, (h.nrows - 1) as f64);
    let c0 = (fx.floor() as usize).min(h.ncols.saturating_sub(2));
    let r0 = (fy.floor() as usize).min(h.nrows.saturating_sub(2));
    let c1 = (c0 + 1).min(h.ncols - 1);
    let r1 = (r0 + 1).min(h.nrows - 1);
    let tx = fx - c0 as f64;
    let ty = fy - r0 as f64;
    let v00 = r.value(h.index(r0, c0))?;
    let v01 = r.value(h.index(r0, c1))?;
    let v10 = r.value(h.index(r1, c0))?;
    let v11 = r.value(h.index(r1, c1))?;
    let top = v00 + tx * (v01 - v00);
    let bottom = v10 + tx * (v11 - v10);
    Some(top + ty * (bottom - top))
}

/// Nearest-cell value for each point; `None` outside the extent or on nodata.
pub fn sample_at(r: &Raster, points: &[(f64, f64)]) -> Vec<Option<f64>> {
    points
        .iter()
        .map(|&(x, y)| r.header.locate(x, y).and_then(|i| r.value(i)))
        .collect()
}

// ---------------------------------------------------------------------------
// Point tables

/// One row of an `x,y[,value]` CSV table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub value: Option<f64>,
}

pub fn read_points_csv(path: impl AsRef<Path>) -> Result<Vec<PointRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let xi = col("x").ok_or_else(|| Error::Data("point table lacks an `x` column".into()))?;
    let yi = col("y").ok_or_else(|| Error::Data("point table lacks a `y` column".into()))?;
    let vi = col("value");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Data(format!("point table row {}: bad number", line + 2)))
        };
        let value = match vi {
            Some(i) if rec.get(i).is_some_and(|s| !s.is_empty()) => Some(parse(i)?),
            _ => None,
        };
        out.push(PointRecord { x: parse(xi)?, y: parse(yi)?, value });
    }
    Ok(out)
}

pub fn write_points_csv(points: &[PointRecord], path: impl AsRef<Path>) -> Result<()> {
    let with_value = points.iter().any(|p| p.value.is_some());
    let mut out = String::from(if with_value { "x,y,value\n" } else { "x,y\n" });
    for p in points {
        if with_value {
            match p.value {
                Some(v) => {
                    let _ = writeln!(out, "{},{},{}", p.x, p.y, v);
                }
                None => {
                    let _ = writeln!(out, "{},{},", p.x, p.y);
                }
            }
        } else {
            let _ = writeln!(out, "{},{}", p.x, p.y);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hdr(ncols: usize, nrows: usize, cs: f64) -> GridHeader {
        GridHeader::new(ncols, nrows, 0.0, 0.0, cs, -9999.0).unwrap()
    }

    #[test]
    fn reads_two_by_two() {
        let text = "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 30\nNODATA_VALUE -9999\n1 2\n3 4\n";
        let r = parse_ascii_grid(text).unwrap();
        assert_eq!(r.cells(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((r.header.ncols, r.header.nrows, r.header.cell_size), (2, 2, 30.0));
    }

    #[test]
    fn nodata_sentinel_is_flagged() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -9999\n5 -9999\n";
        let r = parse_ascii_grid(text).unwrap();
        assert!(!r.is_nodata(0));
        assert!(r.is_nodata(1));
        assert_eq!(r.value(1), None);
    }

    #[test]
    fn short_row_is_truncation() {
        let text = "NCOLS 3\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\n1 2\n";
        assert!(matches!(parse_ascii_grid(text), Err(Error::Truncation { expected: 3, found: 2 })));
    }

    #[test]
    fn bad_header_names_key() {
        let text = "NCOLS x\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\n1\n";
        match parse_ascii_grid(text) {
            Err(Error::Format { key, .. }) => assert_eq!(key, "NCOLS"),
            other => panic!("unexpected {other:?}"),
        }
        let text = "NCOLS 1\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\n1\n";
        match parse_ascii_grid(text) {
            Err(Error::Format { key, .. }) => assert_eq!(key, "CELLSIZE"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn writes_nodata_sentinel() {
        let mut r = Raster::new(hdr(2, 1, 1.0), vec![1.5, 0.0]).unwrap();
        r.set(1, None);
        let s = to_ascii_string(&r);
        assert!(s.ends_with("1.5 -9999\n"), "{s}");
    }

    #[test]
    fn empty_path_is_io_error() {
        let r = Raster::filled(hdr(1, 1, 1.0), 1.0);
        assert!(matches!(write_ascii_grid(&r, ""), Err(Error::Io(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.asc");
        let mut r = Raster::new(hdr(3, 2, 30.0), vec![0.1, 1e-300, -2.5e12, 7.0, 1.0 / 3.0, 0.0]).unwrap();
        r.set(4, None);
        write_ascii_grid(&r, &p).unwrap();
        let back = read_ascii_grid(&p).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn identity_nearest_resample() {
        let r = Raster::new(hdr(3, 2, 30.0), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = resample(&r, &r.header, ResampleMethod::Nearest).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn constant_bilinear() {
        let r = Raster::filled(hdr(4, 4, 10.0), 7.0);
        let target = GridHeader::new(7, 5, 3.0, 2.0, 5.0, -9999.0).unwrap();
        let out = resample(&r, &target, ResampleMethod::Bilinear).unwrap();
        assert!(out.cells().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn bilinear_midway_between_columns() {
        let r = Raster::new(hdr(2, 2, 1.0), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        // Cell centres at x = 0.5 and 1.5; midway is x = 1.0.
        assert_eq!(bilinear_at(&r, 1.0, 1.0), Some(0.5));
        assert_eq!(bilinear_at(&r, 1.0, 0.7), Some(0.5));
    }

    #[test]
    fn bilinear_rejects_categorical() {
        let r = Raster::categorical(hdr(2, 2, 1.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(resample(&r, &r.header, ResampleMethod::Bilinear), Err(Error::Type(_))));
        assert!(resample(&r, &r.header, ResampleMethod::Nearest).is_ok());
    }

    #[test]
    fn sampling_conventions() {
        let r = Raster::new(hdr(2, 2, 10.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // Centre of the lower-left cell (row 1, col 0).
        assert_eq!(sample_at(&r, &[(5.0, 5.0)]), vec![Some(3.0)]);
        assert_eq!(sample_at(&r, &[(-1.0, 5.0), (5.0, 20.0)]), vec![None, None]);
        // x = 10 is the boundary between columns 0 and 1: goes to column 1.
        assert_eq!(sample_at(&r, &[(10.0, 5.0)]), vec![Some(4.0)]);
        // y = 10 is the boundary between the two rows: goes to the upper row.
        assert_eq!(sample_at(&r, &[(5.0, 10.0)]), vec![Some(1.0)]);
    }

    #[test]
    fn alignment_ignores_nodata() {
        let a = hdr(2, 3, 1.0);
        let mut b = a;
        b.nodata = 0.0;
        assert!(a.is_aligned(&b) && b.is_aligned(&a));
        let mut c = a;
        c.x_origin = 1.0;
        assert!(!a.is_aligned(&c));
    }

    #[test]
    fn points_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        let pts = vec![
            PointRecord { x: 1.5, y: 2.0, value: Some(100.0) },
            PointRecord { x: 3.0, y: -4.25, value: Some(0.5) },
        ];
        write_points_csv(&pts, &p).unwrap();
        assert_eq!(read_points_csv(&p).unwrap(), pts);
    }

    proptest! {
        #[test]
        fn ascii_round_trip_is_exact(
            ncols in 1usize..6,
            nrows in 1usize..6,
            seed in proptest::collection::vec(-1e9f64..1e9, 36),
            holes in proptest::collection::vec(any::<bool>(), 36),
        ) {
            let h = GridHeader::new(ncols, nrows, 12.5, -3.0, 0.75, -9999.0).unwrap();
            let cells: Vec<f64> = (0..h.len())
                .map(|i| if holes[i] { -9999.0 } else { seed[i] })
                .collect();
            let r = Raster::new(h, cells).unwrap();
            let back = parse_ascii_grid(&to_ascii_string(&r)).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn zip_map_propagates_nodata(
            a in proptest::collection::vec(proptest::option::of(-1e3f64..1e3), 12),
            b in proptest::collection::vec(proptest::option::of(-1e3f64..1e3), 12),
        ) {
            let h = hdr(4, 3, 1.0);
            let mk = |v: &[Option<f64>]| Raster::new(h, v.iter().map(|x| x.unwrap_or(-9999.0)).collect()).unwrap();
            let (ra, rb) = (mk(&a), mk(&b));
            let out = ra.zip_map(&rb, |x, y| Some(x + y)).unwrap();
            for i in 0..12 {
                prop_assert_eq!(out.is_nodata(i), ra.is_nodata(i) || rb.is_nodata(i));
            }
        }
    }
}
