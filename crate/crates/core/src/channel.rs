//! Channel network extraction, Strahler ordering, junction basins and the
//! channel-distance covariates.
//!
//! "Nearest channel node" for Fd2Ch and Rf2Ch means the first channel cell met
//! when following D8 receivers downstream, not the Euclidean nearest one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{first_on_path, flow_path_length, Accumulation, FlowField};
use crate::raster::{CellKind, GridHeader, Mask, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNode {
    pub cell: usize,
    /// Elevation of the routed (filled) surface, m.
    pub z: f64,
    /// Drainage area, m².
    pub area: f64,
    pub strahler: u32,
    pub downstream: Option<usize>,
    /// Along-channel distance from the outlet, m.
    pub flow_distance: f64,
}

/// Channel cells in baselevel-first order: a node's downstream neighbour
/// always has a smaller id.
#[derive(Debug, Clone)]
pub struct ChannelNetwork {
    pub header: GridHeader,
    pub nodes: Vec<ChannelNode>,
    /// Nodes with two or more channel donors.
    pub junctions: Vec<usize>,
    /// Self-receiving nodes.
    pub outlets: Vec<usize>,
    pub threshold_pixels: u64,
    node_of_cell: Vec<Option<usize>>,
    donor_offsets: Vec<usize>,
    donors: Vec<usize>,
}

impl ChannelNetwork {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_at(&self, cell: usize) -> Option<usize> {
        self.node_of_cell[cell]
    }

    /// Upstream channel neighbours of `node`, in increasing id.
    pub fn donors_of(&self, node: usize) -> &[usize] {
        &self.donors[self.donor_offsets[node]..self.donor_offsets[node + 1]]
    }

    pub fn is_junction(&self, node: usize) -> bool {
        self.donors_of(node).len() >= 2
    }

    pub fn mask(&self) -> Mask {
        let cells = self.node_of_cell.iter().map(Option::is_some).collect();
        Mask::new(self.header, cells).expect("length matches header")
    }

    /// Outlets lying on the raster border.
    pub fn edge_outlet_count(&self) -> usize {
        let h = &self.header;
        self.outlets
            .iter()
            .filter(|&&o| {
                let (r, c) = h.row_col(self.nodes[o].cell);
                r == 0 || c == 0 || r + 1 == h.nrows || c + 1 == h.ncols
            })
            .count()
    }

    /// Maximal unbranched reaches, each listed upstream to downstream. A reach
    /// starts at a headwater or a junction and stops one node above the next
    /// junction (or at an outlet). Reaches are ordered by the id of their head.
    pub fn segments(&self) -> Vec<Vec<usize>> {
        let mut heads: Vec<usize> = (0..self.len()).filter(|&n| self.donors_of(n).len() != 1).collect();
        heads.sort_unstable();
        heads
            .into_iter()
            .map(|head| {
                let mut seg = vec![head];
                let mut cur = head;
                while let Some(next) = self.nodes[cur].downstream {
                    if self.donors_of(next).len() != 1 {
                        break;
                    }
                    seg.push(next);
                    cur = next;
                }
                seg
            })
            .collect()
    }
}

/// Strahler order from a downstream-link forest; independent of node labels
/// and donor enumeration order.
pub fn strahler_orders(downstream: &[Option<usize>]) -> Vec<u32> {
    let n = downstream.len();
    let mut pending = vec![0usize; n];
    for d in downstream.iter().flatten() {
        pending[*d] += 1;
    }
    // Per node: highest incoming order and how many donors carry it.
    let mut best = vec![(0u32, 0u32); n];
    let mut order = vec![0u32; n];
    let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    while let Some(i) = ready.pop() {
        let (m, k) = best[i];
        order[i] = match (m, k) {
            (0, _) => 1,
            (m, k) if k >= 2 => m + 1,
            (m, _) => m,
        };
        if let Some(d) = downstream[i] {
            let (bm, bk) = &mut best[d];
            if order[i] > *bm {
                *bm = order[i];
                *bk = 1;
            } else if order[i] == *bm {
                *bk += 1;
            }
            pending[d] -= 1;
            if pending[d] == 0 {
                ready.push(d);
            }
        }
    }
    order
}

/// Channel cells are those draining at least `threshold_pixels` cells.
pub fn extract_channels(ff: &FlowField, acc: &Accumulation, threshold_pixels: u64) -> Result<ChannelNetwork> {
    if threshold_pixels == 0 {
        return Err(Error::Config("threshold_pixels must be >= 1".into()));
    }
    ff.header.ensure_aligned(&acc.area.header, "accumulation")?;
    let mut node_of_cell = vec![None; ff.len()];
    let mut cells = Vec::new();
    for &i in &ff.stack {
        if acc.cells[i] >= threshold_pixels {
            node_of_cell[i] = Some(cells.len());
            cells.push(i);
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyNetwork(format!("no cell drains >= {threshold_pixels} pixels")));
    }

    let mut nodes: Vec<ChannelNode> = Vec::with_capacity(cells.len());
    for &c in &cells {
        let r = ff.receiver[c];
        let downstream = if r == c {
            None
        } else {
            Some(node_of_cell[r].ok_or_else(|| {
                Error::Invariant("channel cell drains into a non-channel cell".into())
            })?)
        };
        let flow_distance = match downstream {
            None => 0.0,
            Some(d) => nodes[d].flow_distance + ff.step_length(c),
        };
        nodes.push(ChannelNode {
            cell: c,
            z: ff.elevation[c],
            area: acc.area.cells()[c],
            strahler: 0,
            downstream,
            flow_distance,
        });
    }

    let links: Vec<Option<usize>> = nodes.iter().map(|n| n.downstream).collect();
    for (node, order) in nodes.iter_mut().zip(strahler_orders(&links)) {
        node.strahler = order;
    }

    let n = nodes.len();
    let mut donor_offsets = vec![0usize; n + 1];
    for d in links.iter().flatten() {
        donor_offsets[d + 1] += 1;
    }
    for i in 0..n {
        donor_offsets[i + 1] += donor_offsets[i];
    }
    let mut fill = donor_offsets.clone();
    let mut donors = vec![0usize; donor_offsets[n]];
    for (i, d) in links.iter().enumerate() {
        if let Some(d) = d {
            donors[fill[*d]] = i;
            fill[*d] += 1;
        }
    }
    let junctions = (0..n).filter(|&i| donor_offsets[i + 1] - donor_offsets[i] >= 2).collect();
    let outlets = (0..n).filter(|&i| links[i].is_none()).collect();

    Ok(ChannelNetwork {
        header: ff.header,
        nodes,
        junctions,
        outlets,
        threshold_pixels,
        node_of_cell,
        donor_offsets,
        donors,
    })
}

/// Label per cell of the reach its flow path enters first. A junction cell
/// belongs to the reach below it, so cells draining straight into a junction
/// take the downstream label. Labels run from 1 in reach order.
pub fn delineate_basins(ff: &FlowField, net: &ChannelNetwork) -> Result<Raster> {
    let mut node_label = vec![0u32; net.len()];
    for (k, seg) in net.segments().iter().enumerate() {
        for &node in seg {
            node_label[node] = k as u32 + 1;
        }
    }
    let hit = first_on_path(ff, &net.mask())?;
    let nodata = ff.header.nodata;
    let cells = hit
        .iter()
        .map(|h| match h {
            Some(cell) => node_label[net.node_at(*cell).expect("hit is a channel cell")] as f64,
            None => nodata,
        })
        .collect();
    Raster::categorical(ff.header, cells)
}

/// Node id of the first channel cell on each flow path.
pub fn donor_channel_index(ff: &FlowField, net: &ChannelNetwork) -> Result<Raster> {
    let hit = first_on_path(ff, &net.mask())?;
    let nodata = ff.header.nodata;
    let cells = hit
        .iter()
        .map(|h| h.map_or(nodata, |cell| net.node_at(cell).expect("channel cell") as f64))
        .collect();
    Raster::categorical(ff.header, cells)
}

/// Flow distance to channel in km.
pub fn fd2ch(ff: &FlowField, net: &ChannelNetwork) -> Result<Raster> {
    let metres = flow_path_length(ff, &net.mask())?;
    Ok(metres.map(|d| Some(d / 1000.0)))
}

#[derive(Debug, Clone)]
pub struct ReliefToChannel {
    /// Elevation above the first channel node on the flow path, km.
    pub relief: Raster,
    /// Cells sitting below their channel node (kept as negative values).
    pub negative_cells: usize,
}

pub fn rf2ch(ff: &FlowField, net: &ChannelNetwork, dem: &Raster) -> Result<ReliefToChannel> {
    ff.header.ensure_aligned(&dem.header, "dem")?;
    let hit = first_on_path(ff, &net.mask())?;
    let nodata = ff.header.nodata;
    let mut negative_cells = 0;
    let cells = (0..ff.len())
        .map(|i| {
            let Some(c) = hit[i] else { return nodata };
            match (dem.value(i), dem.value(c)) {
                (Some(z), Some(zc)) => {
                    let rel = (z - zc) / 1000.0;
                    if rel < 0.0 {
                        negative_cells += 1;
                    }
                    rel
                }
                _ => nodata,
            }
        })
        .collect();
    if negative_cells > 0 {
        log::warn!("rf2ch: {negative_cells} cells lie below their channel node");
    }
    Ok(ReliefToChannel { relief: Raster::new(ff.header, cells)?, negative_cells })
}

/// Euclidean-nearest channel node to each point (exploratory use only).
pub fn nearest_channel_node(net: &ChannelNetwork, points: &[(f64, f64)]) -> Vec<Option<usize>> {
    let centres: Vec<(f64, f64)> = net.nodes.iter().map(|n| net.header.cell_center(n.cell)).collect();
    points
        .par_iter()
        .map(|&(x, y)| {
            let mut best: Option<(f64, usize)> = None;
            for (k, &(cx, cy)) in centres.iter().enumerate() {
                let d = (cx - x).powi(2) + (cy - y).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
            best.map(|(_, k)| k)
        })
        .collect()
}

/// Write `node_id,x_m,y_m,z_m,area_m2,strahler,downstream_id,flow_dist_m,chi,ksn`.
/// Outlets carry `downstream_id = -1`; missing chi/ksn are written as `NA`.
pub fn write_channel_csv(
    net: &ChannelNetwork,
    chi: Option<&[f64]>,
    ksn: Option<&[Option<f64>]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = String::from("node_id,x_m,y_m,z_m,area_m2,strahler,downstream_id,flow_dist_m,chi,ksn\n");
    for (id, n) in net.nodes.iter().enumerate() {
        let (x, y) = net.header.cell_center(n.cell);
        let down = n.downstream.map_or(-1, |d| d as i64);
        let chi_s = chi.map_or("NA".to_string(), |c| c[id].to_string());
        let ksn_s = ksn.and_then(|k| k[id]).map_or("NA".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{id},{x},{y},{},{},{},{down},{},{chi_s},{ksn_s}",
            n.z, n.area, n.strahler, n.flow_distance
        );
    }
    fs::write(path, out)?;
    Ok(())
}

impl ChannelNetwork {
    /// Channel cells as a categorical raster of Strahler orders.
    pub fn strahler_raster(&self) -> Raster {
        let mut r = Raster::nodata_like(self.header).with_kind(CellKind::Categorical);
        for n in &self.nodes {
            r.set(n.cell, Some(n.strahler as f64));
        }
        r
    }
}
