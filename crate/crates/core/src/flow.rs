//! Depression filling, D8 routing, topological ordering and drainage area.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{GridHeader, Mask, Raster};

/// D8 neighbour offsets `(drow, dcol)` in tie-break order: E, N, W, S, NE, NW, SW, SE.
pub const D8_OFFSETS: [(isize, isize); 8] = [
    (0, 1),
    (-1, 0),
    (0, -1),
    (1, 0),
    (-1, 1),
    (-1, -1),
    (1, -1),
    (1, 1),
];

/// Neighbour distance in cell units, matching [`D8_OFFSETS`].
pub const D8_DIST: [f64; 8] = [
    1.0,
    1.0,
    1.0,
    1.0,
    std::f64::consts::SQRT_2,
    std::f64::consts::SQRT_2,
    std::f64::consts::SQRT_2,
    std::f64::consts::SQRT_2,
];

#[inline]
pub(crate) fn neighbour(h: &GridHeader, idx: usize, k: usize) -> Option<usize> {
    let (row, col) = h.row_col(idx);
    let (dr, dc) = D8_OFFSETS[k];
    let r = row as isize + dr;
    let c = col as isize + dc;
    if r < 0 || c < 0 || r >= h.nrows as isize || c >= h.ncols as isize {
        None
    } else {
        Some(h.index(r as usize, c as usize))
    }
}

#[derive(Debug, Clone, Copy)]
struct FloodItem {
    z: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for FloodItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FloodItem {}
impl PartialOrd for FloodItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FloodItem {
    // Min-heap on (z, insertion sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        other.z.total_cmp(&self.z).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Flood {
    filled: Vec<f64>,
    /// Pop position of each valid cell; `usize::MAX` on nodata.
    rank: Vec<usize>,
    /// Raster-edge cells and cells touching nodata.
    seed: Vec<bool>,
    valid: Vec<bool>,
}

fn priority_flood(dem: &Raster) -> Result<Flood> {
    let h = dem.header;
    let n = h.len();
    let valid: Vec<bool> = (0..n).map(|i| !dem.is_nodata(i)).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyDomain("DEM has no valid cells".into()));
    }
    let mut seed = vec![false; n];
    for i in (0..n).filter(|&i| valid[i]) {
        seed[i] = (0..8).any(|k| neighbour(&h, i, k).is_none_or(|j| !valid[j]));
    }

    let z = dem.cells();
    let mut filled = z.to_vec();
    let mut rank = vec![usize::MAX; n];
    let mut queued = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for i in 0..n {
        if seed[i] {
            queued[i] = true;
            heap.push(FloodItem { z: z[i], seq, idx: i });
            seq += 1;
        }
    }
    let mut next_rank = 0;
    while let Some(FloodItem { idx, .. }) = heap.pop() {
        rank[idx] = next_rank;
        next_rank += 1;
        let level = filled[idx];
        for k in 0..8 {
            let Some(j) = neighbour(&h, idx, k) else { continue };
            if !valid[j] || queued[j] {
                continue;
            }
            queued[j] = true;
            if filled[j] < level {
                filled[j] = level;
            }
            heap.push(FloodItem { z: filled[j], seq, idx: j });
            seq += 1;
        }
    }
    Ok(Flood { filled, rank, seed, valid })
}

/// Priority-flood depression filling with no gradient imposed on flats.
pub fn fill_depressions(dem: &Raster) -> Result<Raster> {
    let flood = priority_flood(dem)?;
    let mut cells = flood.filled;
    for (i, v) in cells.iter_mut().enumerate() {
        if !flood.valid[i] {
            *v = dem.header.nodata;
        }
    }
    Raster::new(dem.header, cells)
}

/// Per-cell D8 receivers plus a baselevel-first topological order.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub header: GridHeader,
    /// Steepest-descent receiver; the cell itself at outlets and nodata cells.
    pub receiver: Vec<usize>,
    /// Every valid cell, each appearing after its receiver.
    pub stack: Vec<usize>,
    pub valid: Vec<bool>,
    /// The filled surface the routing was derived from.
    pub elevation: Vec<f64>,
}

impl FlowField {
    pub fn len(&self) -> usize {
        self.receiver.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receiver.is_empty()
    }

    #[inline]
    pub fn is_outlet(&self, i: usize) -> bool {
        self.valid[i] && self.receiver[i] == i
    }

    pub fn outlets(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_outlet(i)).collect()
    }

    /// Distance in metres from `i` to its receiver (0 at outlets).
    #[inline]
    pub fn step_length(&self, i: usize) -> f64 {
        let r = self.receiver[i];
        if r == i {
            return 0.0;
        }
        let (r0, c0) = self.header.row_col(i);
        let (r1, c1) = self.header.row_col(r);
        if r0 != r1 && c0 != c1 {
            self.header.cell_size * std::f64::consts::SQRT_2
        } else {
            self.header.cell_size
        }
    }

    /// Donor lists in compressed form: donors of `i` are
    /// `donors[offsets[i]..offsets[i + 1]]`, in increasing cell index.
    pub fn donors(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            if self.valid[i] && self.receiver[i] != i {
                offsets[self.receiver[i] + 1] += 1;
            }
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut donors = vec![0usize; offsets[n]];
        for i in 0..n {
            if self.valid[i] && self.receiver[i] != i {
                let r = self.receiver[i];
                donors[fill[r]] = i;
                fill[r] += 1;
            }
        }
        (offsets, donors)
    }
}

/// D8 routing on a depression-filled surface.
///
/// Receivers maximise drop / distance, preferring cardinal neighbours and then
/// the order of [`D8_OFFSETS`] on ties. Cells on a flat drain to the
/// neighbour of equal height that the priority flood reached first, which
/// routes flats towards their spill point.
pub fn d8_flow(filled_dem: &Raster) -> Result<FlowField> {
    let h = filled_dem.header;
    let flood = priority_flood(filled_dem)?;
    let z = filled_dem.cells();
    if let Some(i) = (0..h.len()).find(|&i| flood.valid[i] && flood.filled[i] != z[i]) {
        let (row, col) = h.row_col(i);
        return Err(Error::Consistency(format!(
            "surface is not depression-filled: pit at row {row}, col {col}"
        )));
    }

    let receiver: Vec<usize> = (0..h.len())
        .into_par_iter()
        .map(|i| -> Result<usize> {
            if !flood.valid[i] {
                return Ok(i);
            }
            let mut best = i;
            let mut best_slope = 0.0;
            for k in 0..8 {
                let Some(j) = neighbour(&h, i, k) else { continue };
                if !flood.valid[j] {
                    continue;
                }
                let slope = (z[i] - z[j]) / D8_DIST[k];
                if slope > best_slope {
                    best_slope = slope;
                    best = j;
                }
            }
            if best != i || flood.seed[i] {
                return Ok(best);
            }
            let mut best_rank = flood.rank[i];
            for k in 0..8 {
                let Some(j) = neighbour(&h, i, k) else { continue };
                if flood.valid[j] && z[j] == z[i] && flood.rank[j] < best_rank {
                    best_rank = flood.rank[j];
                    best = j;
                }
            }
            if best == i {
                let (row, col) = h.row_col(i);
                return Err(Error::Consistency(format!(
                    "no downslope or flat outflow at row {row}, col {col}"
                )));
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;

    let mut ff = FlowField {
        header: h,
        receiver,
        stack: Vec::new(),
        valid: flood.valid,
        elevation: z.to_vec(),
    };
    ff.stack = build_stack(&ff);
    Ok(ff)
}

fn build_stack(ff: &FlowField) -> Vec<usize> {
    let (offsets, donors) = ff.donors();
    let mut stack = Vec::with_capacity(ff.len());
    let mut todo = Vec::new();
    for root in ff.outlets() {
        todo.push(root);
        while let Some(c) = todo.pop() {
            stack.push(c);
            todo.extend(donors[offsets[c]..offsets[c + 1]].iter().rev());
        }
    }
    stack
}

/// Drainage area per cell.
#[derive(Debug, Clone)]
pub struct Accumulation {
    /// Contributing area in m², nodata outside the valid domain.
    pub area: Raster,
    /// Contributing cell count, including the cell itself.
    pub cells: Vec<u64>,
}

pub fn accumulate(ff: &FlowField) -> Accumulation {
    let h = ff.header;
    let mut count = vec![0u64; ff.len()];
    for &i in &ff.stack {
        count[i] = 1;
    }
    for &i in ff.stack.iter().rev() {
        let r = ff.receiver[i];
        if r != i {
            count[r] += count[i];
        }
    }
    let cell_area = h.cell_area();
    let cells = (0..ff.len())
        .map(|i| if ff.valid[i] { count[i] as f64 * cell_area } else { h.nodata })
        .collect();
    Accumulation { area: Raster::new(h, cells).expect("length matches header"), cells: count }
}

/// First cell on each flow path (starting with the cell itself) that is set in
/// `stop`, or `None` when the path ends at an outlet that is not set.
pub fn first_on_path(ff: &FlowField, stop: &Mask) -> Result<Vec<Option<usize>>> {
    ff.header.ensure_aligned(&stop.header, "stop mask")?;
    let mut hit = vec![None; ff.len()];
    for &i in &ff.stack {
        hit[i] = if stop.get(i) {
            Some(i)
        } else {
            let r = ff.receiver[i];
            if r == i {
                None
            } else {
                hit[r]
            }
        };
    }
    Ok(hit)
}

/// Along-path distance (m) to the first cell set in `stop_mask`; 0 on masked
/// cells and nodata where the path ends at an unmasked outlet.
pub fn flow_path_length(ff: &FlowField, stop_mask: &Mask) -> Result<Raster> {
    ff.header.ensure_aligned(&stop_mask.header, "stop mask")?;
    let mut dist: Vec<Option<f64>> = vec![None; ff.len()];
    for &i in &ff.stack {
        dist[i] = if stop_mask.get(i) {
            Some(0.0)
        } else {
            let r = ff.receiver[i];
            if r == i {
                None
            } else {
                dist[r].map(|d| d + ff.step_length(i))
            }
        };
    }
    let nodata = ff.header.nodata;
    Raster::new(ff.header, dist.into_iter().map(|d| d.unwrap_or(nodata)).collect())
}
