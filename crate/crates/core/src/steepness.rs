//! Chi transform, normalised channel steepness (ksn) and its spread onto
//! hillslopes.
//!
//! With a reference area of 1 m², ksn is the gradient of elevation against
//! chi. It is estimated per node by ordinary least squares over a window of
//! neighbouring nodes that never crosses a junction; negative gradients are
//! floored to zero.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::channel::{donor_channel_index, extract_channels, ChannelNetwork};
use crate::error::{Error, Result};
use crate::flow::{Accumulation, FlowField};
use crate::raster::{CellKind, Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsnParams {
    /// Concavity index m/n.
    pub theta: f64,
    /// Regression window length in nodes (odd).
    pub window_nodes: usize,
    /// Minimum contributing cells for a channel.
    pub threshold_pixels: u64,
}

impl Default for KsnParams {
    fn default() -> Self {
        Self { theta: 0.5, window_nodes: 9, threshold_pixels: 1000 }
    }
}

impl KsnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.window_nodes < 3 || self.window_nodes.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window_nodes must be odd and >= 3, got {}",
                self.window_nodes
            )));
        }
        if self.threshold_pixels == 0 {
            return Err(Error::Config("threshold_pixels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-node chi coordinate alongside the profile data it was built from.
#[derive(Debug, Clone)]
pub struct ChiProfile {
    pub theta: f64,
    pub chi: Vec<f64>,
    pub z: Vec<f64>,
    pub flow_distance: Vec<f64>,
    pub area: Vec<f64>,
    /// Junction-bounded reaches, upstream to downstream.
    pub segments: Vec<Vec<usize>>,
}

fn node_step(net: &ChannelNetwork, node: usize) -> f64 {
    let n = &net.nodes[node];
    let Some(d) = n.downstream else { return 0.0 };
    let (r0, c0) = net.header.row_col(n.cell);
    let (r1, c1) = net.header.row_col(net.nodes[d].cell);
    if r0 != r1 && c0 != c1 {
        net.header.cell_size * std::f64::consts::SQRT_2
    } else {
        net.header.cell_size
    }
}

/// Trapezoidal integration of `A^-theta` upstream from each outlet
/// (reference area 1 m²).
pub fn chi_transform(net: &ChannelNetwork, theta: f64) -> Result<ChiProfile> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!("theta must be finite and >= 0, got {theta}")));
    }
    if let Some((i, n)) = net.nodes.iter().enumerate().find(|(_, n)| !(n.area > 0.0)) {
        return Err(Error::Invariant(format!("node {i} has drainage area {}", n.area)));
    }
    let mut chi = vec![0.0; net.len()];
    for (i, n) in net.nodes.iter().enumerate() {
        if let Some(d) = n.downstream {
            let integrand = 0.5 * (n.area.powf(-theta) + net.nodes[d].area.powf(-theta));
            chi[i] = chi[d] + integrand * node_step(net, i);
        }
    }
    Ok(ChiProfile {
        theta,
        chi,
        z: net.nodes.iter().map(|n| n.z).collect(),
        flow_distance: net.nodes.iter().map(|n| n.flow_distance).collect(),
        area: net.nodes.iter().map(|n| n.area).collect(),
        segments: net.segments(),
    })
}

/// Ordinary least-squares gradient of `y` on `x`; `None` without spread in `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx > 0.0 {
        Some(sxy / sxx)
    } else {
        None
    }
}

/// ksn from a local slope and drainage area: `S * A^theta`.
pub fn ksn_from_slope(slope: f64, area: f64, theta: f64) -> f64 {
    slope * area.powf(theta)
}

/// Windowed chi-gradient per node; `None` where the window lacks two
/// distinct chi values.
pub fn ksn_estimate(profile: &ChiProfile, params: &KsnParams) -> Result<Vec<Option<f64>>> {
    params.validate()?;
    if (profile.theta - params.theta).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "chi profile built with theta {} but ksn requested at {}",
            profile.theta, params.theta
        )));
    }
    let half = params.window_nodes / 2;
    let mut ksn = vec![None; profile.chi.len()];
    let per_segment: Vec<Vec<(usize, Option<f64>)>> = profile
        .segments
        .par_iter()
        .map(|seg| {
            (0..seg.len())
                .map(|p| {
                    let lo = p.saturating_sub(half);
                    let hi = (p + half).min(seg.len() - 1);
                    let xs: Vec<f64> = seg[lo..=hi].iter().map(|&n| profile.chi[n]).collect();
                    let ys: Vec<f64> = seg[lo..=hi].iter().map(|&n| profile.z[n]).collect();
                    (seg[p], ols_slope(&xs, &ys).map(|s| if s < 0.0 { 0.0 } else { s }))
                })
                .collect()
        })
        .collect();
    for (node, v) in per_segment.into_iter().flatten() {
        ksn[node] = v;
    }
    Ok(ksn)
}

/// Each pixel takes the ksn of the channel node its flow path reaches first.
pub fn ksn_to_hillslopes(ksn_nodes: &[Option<f64>], donor_map: &Raster) -> Raster {
    donor_map
        .map(|d| {
            let node = d as usize;
            ksn_nodes.get(node).copied().flatten()
        })
        .with_kind(CellKind::Continuous)
}

/// Static 2-d tree over integer cell coordinates answering nearest queries
/// with ties broken by the lowest cell index.
struct CellTree {
    pts: Vec<(i64, i64, usize)>,
}

impl CellTree {
    fn new(mut pts: Vec<(i64, i64, usize)>) -> Self {
        Self::build(&mut pts, 0);
        Self { pts }
    }

    fn build(pts: &mut [(i64, i64, usize)], depth: usize) {
        if pts.len() <= 1 {
            return;
        }
        let mid = pts.len() / 2;
        if depth.is_multiple_of(2) {
            pts.select_nth_unstable_by_key(mid, |p| (p.0, p.1, p.2));
        } else {
            pts.select_nth_unstable_by_key(mid, |p| (p.1, p.0, p.2));
        }
        let (left, right) = pts.split_at_mut(mid);
        Self::build(left, depth + 1);
        Self::build(&mut right[1..], depth + 1);
    }

    fn nearest(&self, r: i64, c: i64) -> Option<usize> {
        let mut best: Option<(i64, usize)> = None;
        Self::search(&self.pts, 0, r, c, &mut best);
        best.map(|(_, idx)| idx)
    }

    fn search(pts: &[(i64, i64, usize)], depth: usize, r: i64, c: i64, best: &mut Option<(i64, usize)>) {
        if pts.is_empty() {
            return;
        }
        let mid = pts.len() / 2;
        let p = pts[mid];
        let d2 = (p.0 - r).pow(2) + (p.1 - c).pow(2);
        if best.is_none_or(|b| (d2, p.2) < b) {
            *best = Some((d2, p.2));
        }
        let diff = if depth.is_multiple_of(2) { r - p.0 } else { c - p.1 };
        let (near, far) = if diff < 0 {
            (&pts[..mid], &pts[mid + 1..])
        } else {
            (&pts[mid + 1..], &pts[..mid])
        };
        Self::search(near, depth + 1, r, c, best);
        if best.is_none_or(|b| diff * diff <= b.0) {
            Self::search(far, depth + 1, r, c, best);
        }
    }
}

/// Replace masked and nodata cells with the value of the Euclidean-nearest
/// unmasked valid cell (ties go to the lowest cell index).
pub fn masked_nearest_fill(r: &Raster, mask: &Mask) -> Result<Raster> {
    r.header.ensure_aligned(&mask.header, "fill mask")?;
    let h = r.header;
    let sources: Vec<(i64, i64, usize)> = (0..h.len())
        .filter(|&i| !mask.get(i) && !r.is_nodata(i))
        .map(|i| {
            let (row, col) = h.row_col(i);
            (row as i64, col as i64, i)
        })
        .collect();
    if sources.is_empty() {
        return Err(Error::Fill("no unmasked valid cell to copy from".into()));
    }
    let tree = CellTree::new(sources);
    let cells: Vec<f64> = (0..h.len())
        .into_par_iter()
        .map(|i| {
            if !mask.get(i) && !r.is_nodata(i) {
                return r.cells()[i];
            }
            let (row, col) = h.row_col(i);
            let src = tree.nearest(row as i64, col as i64).expect("non-empty tree");
            r.cells()[src]
        })
        .collect();
    Ok(Raster::new(h, cells)?.with_kind(r.kind))
}

/// Everything derived from one ksn run.
#[derive(Debug, Clone)]
pub struct KsnResult {
    pub network: ChannelNetwork,
    pub profile: ChiProfile,
    pub ksn_nodes: Vec<Option<f64>>,
    pub donor: Raster,
    /// Per-pixel ksn.
    pub raster: Raster,
}

pub fn ksn_pipeline(ff: &FlowField, acc: &Accumulation, params: &KsnParams) -> Result<KsnResult> {
    params.validate()?;
    let network = extract_channels(ff, acc, params.threshold_pixels)?;
    ksn_on_network(ff, network, params)
}

fn ksn_on_network(ff: &FlowField, network: ChannelNetwork, params: &KsnParams) -> Result<KsnResult> {
    let profile = chi_transform(&network, params.theta)?;
    let ksn_nodes = ksn_estimate(&profile, params)?;
    let donor = donor_channel_index(ff, &network)?;
    let raster = ksn_to_hillslopes(&ksn_nodes, &donor);
    Ok(KsnResult { network, profile, ksn_nodes, donor, raster })
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side has no spread.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut e = k;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
                e += 1;
            }
            let avg = (k + e) as f64 / 2.0 + 1.0;
            for &i in &idx[k..=e] {
                out[i] = avg;
            }
            k = e + 1;
        }
        out
    }
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub theta: f64,
    pub threshold_pixels: u64,
    pub ksn_nodes: Vec<Option<f64>>,
    pub raster: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCorrelation {
    pub theta_a: f64,
    pub theta_b: f64,
    pub threshold_pixels: u64,
    pub spearman_rho: f64,
    pub n_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct ConcavitySweep {
    /// Ordered threshold-major, then by position in the theta list.
    pub entries: Vec<SweepEntry>,
    pub correlations: Vec<SweepCorrelation>,
}

/// Recompute ksn for every (theta, threshold) pair and rank-correlate
/// log(1 + ksn) between each pair of theta settings over shared nodes.
pub fn concavity_sweep(
    ff: &FlowField,
    acc: &Accumulation,
    thetas: &[f64],
    thresholds: &[u64],
    window_nodes: usize,
) -> Result<ConcavitySweep> {
    if thetas.is_empty() || thresholds.is_empty() {
        return Err(Error::Config("concavity sweep needs at least one theta and one threshold".into()));
    }
    let mut entries = Vec::new();
    let mut correlations = Vec::new();
    for &threshold in thresholds {
        let network = extract_channels(ff, acc, threshold)?;
        let runs: Vec<KsnResult> = thetas
            .par_iter()
            .map(|&theta| {
                let params = KsnParams { theta, window_nodes, threshold_pixels: threshold };
                params.validate()?;
                ksn_on_network(ff, network.clone(), &params)
            })
            .collect::<Result<_>>()?;
        for a in 0..thetas.len() {
            for b in a + 1..thetas.len() {
                let (xs, ys): (Vec<f64>, Vec<f64>) = runs[a]
                    .ksn_nodes
                    .iter()
                    .zip(&runs[b].ksn_nodes)
                    .filter_map(|(x, y)| Some((x.as_ref()?.ln_1p(), y.as_ref()?.ln_1p())))
                    .unzip();
                correlations.push(SweepCorrelation {
                    theta_a: thetas[a],
                    theta_b: thetas[b],
                    threshold_pixels: threshold,
                    spearman_rho: spearman(&xs, &ys),
                    n_nodes: xs.len(),
                });
            }
        }
        for (run, &theta) in runs.into_iter().zip(thetas) {
            entries.push(SweepEntry {
                theta,
                threshold_pixels: threshold,
                ksn_nodes: run.ksn_nodes,
                raster: run.raster,
            });
        }
    }
    Ok(ConcavitySweep { entries, correlations })
}

/// Write `theta_a,theta_b,threshold,spearman_rho,n_nodes`.
pub fn write_sweep_csv(correlations: &[SweepCorrelation], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("theta_a,theta_b,threshold,spearman_rho,n_nodes\n");
    for c in correlations {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.theta_a, c.theta_b, c.threshold_pixels, c.spearman_rho, c.n_nodes
        );
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{accumulate, d8_flow, fill_depressions};
    use crate::raster::GridHeader;
    use proptest::prelude::*;

    fn grid(ncols: usize, nrows: usize, cells: Vec<f64>) -> Raster {
        Raster::new(GridHeader::new(ncols, nrows, 0.0, 0.0, 30.0, -9999.0).unwrap(), cells).unwrap()
    }

    fn chain(n: usize) -> (FlowField, Accumulation, ChannelNetwork) {
        let dem = grid(n, 1, (0..n).map(|i| (n - i) as f64 * 3.0).collect());
        let ff = d8_flow(&fill_depressions(&dem).unwrap()).unwrap();
        let acc = accumulate(&ff);
        let net = extract_channels(&ff, &acc, 1).unwrap();
        (ff, acc, net)
    }

    fn with_area(mut net: ChannelNetwork, a: f64) -> ChannelNetwork {
        for n in &mut net.nodes {
            n.area = a;
        }
        net
    }

    #[test]
    fn chi_equals_distance_for_unit_area() {
        let (_, _, net) = chain(12);
        let net = with_area(net, 1.0);
        let p = chi_transform(&net, 0.5).unwrap();
        assert_eq!(p.chi, p.flow_distance);
        let outlet = net.outlets[0];
        assert_eq!(p.chi[outlet], 0.0);
    }

    #[test]
    fn chi_is_half_distance_for_area_four() {
        let (_, _, net) = chain(12);
        let net = with_area(net, 4.0);
        let p = chi_transform(&net, 0.5).unwrap();
        for (c, x) in p.chi.iter().zip(&p.flow_distance) {
            assert_eq!(*c, x / 2.0);
        }
    }

    #[test]
    fn zero_area_is_rejected() {
        let (_, _, net) = chain(4);
        let net = with_area(net, 0.0);
        assert!(matches!(chi_transform(&net, 0.5), Err(Error::Invariant(_))));
    }

    #[test]
    fn theta_zero_gives_flow_distance() {
        let (_, _, net) = chain(9);
        let p = chi_transform(&net, 0.0).unwrap();
        assert_eq!(p.chi, p.flow_distance);
    }

    #[test]
    fn flat_segment_has_zero_ksn() {
        let (_, _, net) = chain(9);
        let mut p = chi_transform(&net, 0.5).unwrap();
        p.z.iter_mut().for_each(|z| *z = 100.0);
        let k = ksn_estimate(&p, &KsnParams { window_nodes: 5, ..Default::default() }).unwrap();
        assert!(k.iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn linear_profile_recovers_gradient() {
        let (_, _, net) = chain(30);
        let mut p = chi_transform(&net, 0.5).unwrap();
        for i in 0..p.z.len() {
            p.z[i] = 250.0 + 100.0 * p.chi[i];
        }
        let k = ksn_estimate(&p, &KsnParams::default()).unwrap();
        for v in k {
            assert!((v.unwrap() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_gradient_floors_to_zero_and_lonely_node_is_none() {
        let (_, _, net) = chain(6);
        let mut p = chi_transform(&net, 0.5).unwrap();
        for i in 0..p.z.len() {
            p.z[i] = -p.chi[i];
        }
        let k = ksn_estimate(&p, &KsnParams { window_nodes: 3, ..Default::default() }).unwrap();
        assert!(k.iter().all(|v| *v == Some(0.0)));
        p.segments = vec![vec![0]];
        let k = ksn_estimate(&p, &KsnParams { window_nodes: 3, ..Default::default() }).unwrap();
        assert_eq!(k[0], None);
    }

    #[test]
    fn theta_mismatch_is_config_error() {
        let (_, _, net) = chain(6);
        let p = chi_transform(&net, 0.4).unwrap();
        assert!(matches!(ksn_estimate(&p, &KsnParams::default()), Err(Error::Config(_))));
    }

    #[test]
    fn slope_area_spot_check() {
        assert!((ksn_from_slope(0.05, 1e6, 0.5) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn windows_stop_at_junctions() {
        // Y network: the trunk below the junction sees a different gradient.
        let (_, _, mut net) = chain(10);
        // Synthesise a profile whose reaches differ; segments split at node 5.
        let mut p = chi_transform(&with_area(net.clone(), 1.0), 0.5).unwrap();
        p.segments = vec![(5..10).rev().collect(), (0..5).rev().collect()];
        for i in 0..10 {
            p.z[i] = if i < 5 { 2.0 * p.chi[i] } else { 2.0 * p.chi[4] + 7.0 * (p.chi[i] - p.chi[4]) };
        }
        let k = ksn_estimate(&p, &KsnParams { window_nodes: 9, ..Default::default() }).unwrap();
        for i in 0..5 {
            assert!((k[i].unwrap() - 2.0).abs() < 1e-9);
        }
        for i in 5..10 {
            assert!((k[i].unwrap() - 7.0).abs() < 1e-9);
        }
        net.nodes.truncate(10);
    }

    #[test]
    fn hillslope_mapping() {
        let h = GridHeader::new(3, 1, 0.0, 0.0, 30.0, -9999.0).unwrap();
        let donor = Raster::categorical(h, vec![0.0, 1.0, -9999.0]).unwrap();
        let out = ksn_to_hillslopes(&[Some(4.0), None], &donor);
        assert_eq!(out.value(0), Some(4.0));
        assert_eq!(out.value(1), None);
        assert_eq!(out.value(2), None);
    }

    #[test]
    fn fill_identity_and_single_cell() {
        let h = GridHeader::new(3, 3, 0.0, 0.0, 30.0, -9999.0).unwrap();
        let r = Raster::new(h, (0..9).map(|i| i as f64).collect()).unwrap();
        assert_eq!(masked_nearest_fill(&r, &Mask::empty(h)).unwrap(), r);
        let mut m = Mask::new(h, vec![true; 9]).unwrap();
        m.set(5, false);
        let out = masked_nearest_fill(&r, &m).unwrap();
        assert!(out.cells().iter().all(|&v| v == 5.0));
        let all = Mask::new(h, vec![true; 9]).unwrap();
        assert!(matches!(masked_nearest_fill(&r, &all), Err(Error::Fill(_))));
    }

    fn brute_fill(r: &Raster, mask: &Mask) -> Vec<f64> {
        let h = r.header;
        (0..h.len())
            .map(|i| {
                if !mask.get(i) && !r.is_nodata(i) {
                    return r.cells()[i];
                }
                let (ri, ci) = h.row_col(i);
                let mut best = (i64::MAX, usize::MAX);
                for j in 0..h.len() {
                    if mask.get(j) || r.is_nodata(j) {
                        continue;
                    }
                    let (rj, cj) = h.row_col(j);
                    let d = (ri as i64 - rj as i64).pow(2) + (ci as i64 - cj as i64).pow(2);
                    if (d, j) < best {
                        best = (d, j);
                    }
                }
                r.cells()[best.1]
            })
            .collect()
    }

    #[test]
    fn masked_block_in_gradient_takes_edge_values() {
        let h = GridHeader::new(6, 6, 0.0, 0.0, 30.0, -9999.0).unwrap();
        let r = Raster::new(h, (0..36).map(|i| (i % 6) as f64 * 10.0 + (i / 6) as f64).collect()).unwrap();
        let mut m = Mask::empty(h);
        for (row, col) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            m.set(h.index(row, col), true);
        }
        let out = masked_nearest_fill(&r, &m).unwrap();
        assert_eq!(out.cells(), &brute_fill(&r, &m)[..]);
        // (2,2) is equidistant from (1,2) and (2,1); (1,2) has the lower index.
        assert_eq!(out.cells()[h.index(2, 2)], r.cells()[h.index(1, 2)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fill_matches_brute_force(
            ncols in 1usize..12,
            nrows in 1usize..12,
            masked in proptest::collection::vec(proptest::bool::weighted(0.4), 144),
            holes in proptest::collection::vec(proptest::bool::weighted(0.2), 144),
        ) {
            let h = GridHeader::new(ncols, nrows, 0.0, 0.0, 30.0, -9999.0).unwrap();
            let cells = (0..h.len()).map(|i| if holes[i] { -9999.0 } else { i as f64 * 1.5 }).collect();
            let r = Raster::new(h, cells).unwrap();
            let m = Mask::new(h, masked[..h.len()].to_vec()).unwrap();
            let src = (0..h.len()).any(|i| !m.get(i) && !r.is_nodata(i));
            match masked_nearest_fill(&r, &m) {
                Ok(out) => { prop_assert!(src); prop_assert_eq!(out.cells(), &brute_fill(&r, &m)[..]); }
                Err(_) => prop_assert!(!src),
            }
        }

        #[test]
        fn ksn_scales_with_elevation(
            zs in proptest::collection::vec(0.0f64..500.0, 15),
            scale in 0.1f64..20.0,
        ) {
            let (_, _, net) = chain(15);
            let mut p = chi_transform(&net, 0.5).unwrap();
            p.z = zs.clone();
            let params = KsnParams { window_nodes: 5, ..Default::default() };
            let base = ksn_estimate(&p, &params).unwrap();
            p.z = zs.iter().map(|z| z * scale).collect();
            let scaled = ksn_estimate(&p, &params).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                let (a, b) = (a.unwrap(), b.unwrap());
                prop_assert!((a * scale - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    #[test]
    fn singleton_and_duplicate_sweep() {
        let dem = crate::synthetic::fluvial_dem(&crate::synthetic::FluvialDemSpec {
            ncols: 40,
            nrows: 40,
            ..Default::default()
        })
        .unwrap();
        let ff = d8_flow(&fill_depressions(&dem).unwrap()).unwrap();
        let acc = accumulate(&ff);
        let params = KsnParams { threshold_pixels: 50, ..Default::default() };
        let reference = ksn_pipeline(&ff, &acc, &params).unwrap();
        let sweep = concavity_sweep(&ff, &acc, &[0.5], &[50], 9).unwrap();
        assert_eq!(sweep.entries.len(), 1);
        assert_eq!(sweep.entries[0].raster, reference.raster);
        assert!(sweep.correlations.is_empty());

        let dup = concavity_sweep(&ff, &acc, &[0.45, 0.45], &[50], 9).unwrap();
        assert_eq!(dup.entries[0].raster, dup.entries[1].raster);
        assert_eq!(dup.entries[0].ksn_nodes, dup.entries[1].ksn_nodes);
    }
}
