//! Triangulated study region on a regular hexagonal lattice, and the
//! one-point-per-triangle quadrature used for the intensity integral.
//!
//! Triangles crossing the region boundary are clipped: their quadrature
//! weight is the area of the part inside the region and their point sits at
//! that part's centroid. Triangles with no area inside are dropped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Mask;

type Pt = (f64, f64);

/// Study region: a simple polygon (either orientation) or a raster mask.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Polygon(Vec<Pt>),
    Mask(Mask),
}

impl Region {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Region::Polygon(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn area(&self) -> f64 {
        match self {
            Region::Polygon(p) => signed_area(p).abs(),
            Region::Mask(m) => m.count() as f64 * m.header.cell_area(),
        }
    }

    /// (xmin, ymin, xmax, ymax); `None` for an empty region.
    pub fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        match self {
            Region::Polygon(p) => {
                if p.len() < 3 {
                    return None;
                }
                let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for &(x, y) in p {
                    b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
                }
                Some(b)
            }
            Region::Mask(m) => {
                let h = &m.header;
                let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
                for i in (0..h.len()).filter(|&i| m.get(i)) {
                    let (r, c) = h.row_col(i);
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
                if r0 == usize::MAX {
                    return None;
                }
                let cs = h.cell_size;
                Some((
                    h.x_origin + c0 as f64 * cs,
                    h.y_origin + (h.nrows - 1 - r1) as f64 * cs,
                    h.x_origin + (c1 + 1) as f64 * cs,
                    h.y_origin + (h.nrows - r0) as f64 * cs,
                ))
            }
        }
    }

    /// Area and centroid of `tri ∩ region`.
    fn clip(&self, tri: &[Pt; 3]) -> (f64, Pt) {
        let mut moments = Moments::default();
        match self {
            Region::Polygon(p) => moments.add(&clip_convex(p, tri)),
            Region::Mask(m) => {
                let h = &m.header;
                let cs = h.cell_size;
                let xmin = tri.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let xmax = tri.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let ymin = tri.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                let ymax = tri.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                let col = |x: f64| ((x - h.x_origin) / cs).floor();
                let c0 = col(xmin).max(0.0) as usize;
                let c1 = col(xmax).min(h.ncols as f64 - 1.0);
                // Row counted from the south edge.
                let srow = |y: f64| ((y - h.y_origin) / cs).floor();
                let s0 = srow(ymin).max(0.0) as usize;
                let s1 = srow(ymax).min(h.nrows as f64 - 1.0);
                if c1 < 0.0 || s1 < 0.0 {
                    return (0.0, (0.0, 0.0));
                }
                for s in s0..=s1 as usize {
                    for c in c0..=c1 as usize {
                        let idx = h.index(h.nrows - 1 - s, c);
                        if !m.get(idx) {
                            continue;
                        }
                        let x0 = h.x_origin + c as f64 * cs;
                        let y0 = h.y_origin + s as f64 * cs;
                        let square = [(x0, y0), (x0 + cs, y0), (x0 + cs, y0 + cs), (x0, y0 + cs)];
                        moments.add(&clip_convex(tri, &square));
                    }
                }
            }
        }
        moments.finish()
    }
}

#[derive(Default)]
struct Moments {
    a: f64,
    mx: f64,
    my: f64,
}

impl Moments {
    fn add(&mut self, poly: &[Pt]) {
        let n = poly.len();
        if n < 3 {
            return;
        }
        for i in 0..n {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            self.a += cross / 2.0;
            self.mx += (x0 + x1) * cross / 6.0;
            self.my += (y0 + y1) * cross / 6.0;
        }
    }

    fn finish(self) -> (f64, Pt) {
        if self.a == 0.0 {
            return (0.0, (0.0, 0.0));
        }
        (self.a.abs(), (self.mx / self.a, self.my / self.a))
    }
}

fn signed_area(p: &[Pt]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].0 * p[(i + 1) % n].1 - p[(i + 1) % n].0 * p[i].1).sum::<f64>() / 2.0
}

/// Sutherland–Hodgman: clip `subject` against the convex counter-clockwise
/// polygon `clipper`.
fn clip_convex(subject: &[Pt], clipper: &[Pt]) -> Vec<Pt> {
    let mut out: Vec<Pt> = subject.to_vec();
    let m = clipper.len();
    for k in 0..m {
        if out.is_empty() {
            break;
        }
        let a = clipper[k];
        let b = clipper[(k + 1) % m];
        let side = |p: Pt| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: Pt, q: Pt, sp: f64, sq: f64) -> Pt {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Pt>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub region: Region,
    /// Lattice edge length, m.
    pub edge: f64,
    clipped_area: Vec<f64>,
    clipped_centroid: Vec<Pt>,
}

impl TriMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        signed_area(&[a, b, c])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Quadrature {
    pub points: Vec<Pt>,
    /// m².
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Default target triangle area, m².
pub const DEFAULT_TRI_AREA: f64 = 1e5;

/// Triangulate `region` with equilateral triangles of area `target_tri_area`.
pub fn build_mesh(region: &Region, target_tri_area: f64) -> Result<TriMesh> {
    if !(target_tri_area > 0.0 && target_tri_area.is_finite()) {
        return Err(Error::Config(format!("target_tri_area must be positive, got {target_tri_area}")));
    }
    let area = region.area();
    let Some((xmin, ymin, xmax, ymax)) = region.bbox() else {
        return Err(Error::DegenerateRegion("region is empty".into()));
    };
    if area < target_tri_area * (1.0 - 1e-9) {
        return Err(Error::DegenerateRegion(format!(
            "region area {area} m² is smaller than one triangle ({target_tri_area} m²)"
        )));
    }
    let edge = (4.0 * target_tri_area / 3f64.sqrt()).sqrt();
    let rise = edge * 3f64.sqrt() / 2.0;
    let x0 = xmin - edge;
    let y0 = ymin;
    let ncols = ((xmax - x0) / edge).ceil() as usize + 2;
    let nrows = ((ymax - y0) / rise).ceil() as usize + 1;
    let vx = |j: usize, i: usize| (x0 + i as f64 * edge + if j % 2 == 1 { edge / 2.0 } else { 0.0 }, y0 + j as f64 * rise);
    let lattice_id = |j: usize, i: usize| j * ncols + i;

    let mut candidates: Vec<[(usize, usize); 3]> = Vec::new();
    for j in 0..nrows - 1 {
        for i in 0..ncols - 1 {
            if j % 2 == 0 {
                candidates.push([(j, i), (j, i + 1), (j + 1, i)]);
                candidates.push([(j, i + 1), (j + 1, i + 1), (j + 1, i)]);
            } else {
                candidates.push([(j, i), (j, i + 1), (j + 1, i + 1)]);
                candidates.push([(j, i), (j + 1, i + 1), (j + 1, i)]);
            }
        }
    }
    let clipped: Vec<(f64, Pt)> = candidates
        .par_iter()
        .map(|t| region.clip(&t.map(|(j, i)| vx(j, i))))
        .collect();

    let mut remap = vec![usize::MAX; nrows * ncols];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut clipped_area = Vec::new();
    let mut clipped_centroid = Vec::new();
    for (t, &(a, c)) in candidates.iter().zip(&clipped) {
        // Slivers from round-off on shared edges are not area.
        if a <= target_tri_area * 1e-12 {
            continue;
        }
        let ids = t.map(|(j, i)| {
            let l = lattice_id(j, i);
            if remap[l] == usize::MAX {
                remap[l] = vertices.len();
                vertices.push(vx(j, i));
            }
            remap[l]
        });
        let [p, q, r] = ids.map(|v| vertices[v]);
        let tri = if signed_area(&[p, q, r]) > 0.0 { ids } else { [ids[0], ids[2], ids[1]] };
        triangles.push(tri);
        clipped_area.push(a);
        clipped_centroid.push(c);
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateRegion("no triangle overlaps the region".into()));
    }
    Ok(TriMesh { vertices, triangles, region: region.clone(), edge, clipped_area, clipped_centroid })
}

/// One point per triangle at the centroid of its in-region part, weighted by
/// that part's area.
pub fn quadrature_of(mesh: &TriMesh) -> Quadrature {
    Quadrature { points: mesh.clipped_centroid.clone(), weights: mesh.clipped_area.clone() }
}

/// Write `vid,x,y` and `tid,v0,v1,v2`.
pub fn write_mesh_csv(mesh: &TriMesh, vertices_path: impl AsRef<Path>, triangles_path: impl AsRef<Path>) -> Result<()> {
    let mut v = String::from("vid,x,y\n");
    for (i, (x, y)) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(v, "{i},{x},{y}");
    }
    fs::write(vertices_path, v)?;
    let mut t = String::from("tid,v0,v1,v2\n");
    for (i, [a, b, c]) in mesh.triangles.iter().enumerate() {
        let _ = writeln!(t, "{i},{a},{b},{c}");
    }
    fs::write(triangles_path, t)?;
    Ok(())
}
