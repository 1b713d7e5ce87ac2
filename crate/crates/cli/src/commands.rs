//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slidescape::assess::{
    chequerboard_split, predictive_counts, score_counts, score_difference_map, score_differences, score_gaussian,
    summarize_scores, thinning_split, write_ecdf_csv, write_score_summary_csv, write_scores_csv, Ecdf, EvalGrid,
    Fold, ScoreKind, ScoreRow,
};
use slidescape::channel::{delineate_basins, fd2ch, rf2ch, write_channel_csv};
use slidescape::flow::{accumulate, d8_flow, fill_depressions};
use slidescape::mesh::{build_mesh, quadrature_of, write_mesh_csv, Quadrature, Region};
use slidescape::model::{
    build_design, fit, predict_raster, sample_posterior, summarize, write_summary_csv, Covariates, FitOptions,
    ModelSpec, PointData, Response,
};
use slidescape::raster::{
    read_ascii_grid, read_points_csv, resample, write_ascii_grid, write_points_csv, CellKind, GridHeader, Mask,
    PointRecord, Raster, ResampleMethod,
};
use slidescape::steepness::{concavity_sweep, ksn_pipeline, masked_nearest_fill, write_sweep_csv};
use slidescape::synthetic::{fluvial_dem, smooth_field, FluvialDemSpec, KsnField};
use slidescape::{Error, Result};

use crate::config::PipelineConfig;

fn out(cfg: &PipelineConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.join(name))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.inspect_err(|_| log::error!("stage `{name}` failed"))
}

pub fn terrain(cfg: &PipelineConfig) -> Result<()> {
    let dem = stage("read dem", read_ascii_grid(&cfg.dem))?;
    let filled = stage("fill", fill_depressions(&dem))?;
    let ff = stage("flow", d8_flow(&filled))?;
    let acc = accumulate(&ff);
    let outlet_cells: u64 = ff.outlets().iter().map(|&o| acc.cells[o]).sum();
    let valid = ff.valid.iter().filter(|&&v| v).count() as u64;
    if outlet_cells != valid {
        return Err(Error::Invariant(format!(
            "outlet accumulation {outlet_cells} cells differs from {valid} valid cells"
        )));
    }
    info!("flow routing conserves {valid} cells");
    let ksn = stage("steepness", ksn_pipeline(&ff, &acc, &cfg.ksn_params()))?;
    let mut ksn_raster = ksn.raster.clone();
    if let Some(p) = &cfg.glacial_mask {
        let mask_r = resample(&read_ascii_grid(p)?.with_kind(CellKind::Categorical), &dem.header, ResampleMethod::Nearest)?;
        let filled_ksn = stage("ksn infill", masked_nearest_fill(&ksn_raster, &Mask::from_raster(&mask_r)))?;
        ksn_raster = filled_ksn.zip_map(&dem, |k, _| Some(k))?;
    }
    let fd = stage("fd2ch", fd2ch(&ff, &ksn.network))?;
    let rf = stage("rf2ch", rf2ch(&ff, &ksn.network, &dem))?;
    if rf.negative_cells > 0 {
        warn!("{} cells sit below their channel node", rf.negative_cells);
    }
    write_ascii_grid(&filled, out(cfg, "filled_dem.asc")?)?;
    write_ascii_grid(&acc.area, out(cfg, "accumulation.asc")?)?;
    write_ascii_grid(&ksn_raster, out(cfg, "ksn.asc")?)?;
    write_ascii_grid(&fd, out(cfg, "fd2ch.asc")?)?;
    write_ascii_grid(&rf.relief, out(cfg, "rf2ch.asc")?)?;
    write_ascii_grid(&ksn.network.strahler_raster(), out(cfg, "strahler.asc")?)?;
    write_ascii_grid(&delineate_basins(&ff, &ksn.network)?, out(cfg, "basins.asc")?)?;
    write_channel_csv(&ksn.network, Some(&ksn.profile.chi), Some(&ksn.ksn_nodes), out(cfg, "channels.csv")?)?;
    info!("{} channel nodes, {} junctions", ksn.network.len(), ksn.network.junctions.len());
    Ok(())
}

fn study_quadrature(dem: &Raster, cfg: &PipelineConfig) -> Result<(slidescape::mesh::TriMesh, Quadrature)> {
    let mesh = stage("mesh", build_mesh(&Region::Mask(Mask::valid_cells(dem)), cfg.target_tri_area))?;
    let quad = quadrature_of(&mesh);
    Ok((mesh, quad))
}

pub fn mesh(cfg: &PipelineConfig) -> Result<()> {
    let dem = read_ascii_grid(&cfg.dem)?;
    let (mesh, quad) = study_quadrature(&dem, cfg)?;
    write_mesh_csv(&mesh, out(cfg, "mesh_vertices.csv")?, out(cfg, "mesh_triangles.csv")?)?;
    let mut text = String::from("x,y,weight\n");
    for ((x, y), w) in quad.points.iter().zip(&quad.weights) {
        text.push_str(&format!("{x},{y},{w}\n"));
    }
    fs::write(out(cfg, "quadrature.csv")?, text)?;
    info!("{} triangles, {} m² of quadrature weight", mesh.triangles.len(), quad.total_weight());
    Ok(())
}

fn load_layer(path: &Path, target: &GridHeader, kind: CellKind) -> Result<Raster> {
    let r = read_ascii_grid(path)?.with_kind(kind);
    if r.header.is_aligned(target) {
        return Ok(r);
    }
    let method = match kind {
        CellKind::Continuous => ResampleMethod::Bilinear,
        CellKind::Categorical => ResampleMethod::Nearest,
    };
    resample(&r, target, method)
}

/// Every covariate a model may reference, on the DEM grid.
fn covariates(cfg: &PipelineConfig, dem: &Raster) -> Result<Covariates> {
    let h = dem.header;
    let mut c = Covariates::new();
    c.insert("dem", dem.clone())?;
    for (name, path, kind) in [
        ("pga", &cfg.pga, CellKind::Continuous),
        ("landcover", &cfg.landcover, CellKind::Categorical),
        ("geology", &cfg.geology, CellKind::Categorical),
    ] {
        if let Some(p) = path {
            c.insert(name, load_layer(p, &h, kind)?)?;
        }
    }
    for name in ["ksn", "fd2ch", "rf2ch"] {
        let p = cfg.output_dir.join(format!("{name}.asc"));
        if p.is_file() {
            c.insert(name, load_layer(&p, &h, CellKind::Continuous)?)?;
        }
    }
    Ok(c)
}

fn check_covariates(specs: &[ModelSpec], covs: &Covariates) -> Result<()> {
    for s in specs {
        for t in &s.terms {
            if covs.get(&t.covariate).is_err() {
                let hint = if ["ksn", "fd2ch", "rf2ch"].contains(&t.covariate.as_str()) {
                    " (run `terrain` first)"
                } else {
                    ""
                };
                return Err(Error::Config(format!(
                    "model `{}` needs covariate `{}`{hint}",
                    s.name, t.covariate
                )));
            }
        }
    }
    Ok(())
}

/// Centroids with log sizes taken from the `value` column (area in m²).
fn load_points(cfg: &PipelineConfig) -> Result<PointData> {
    let path = cfg
        .points
        .as_ref()
        .ok_or_else(|| Error::Config("config must set `points` for this command".into()))?;
    let recs = read_points_csv(path)?;
    let points = recs.iter().map(|r| (r.x, r.y)).collect();
    let marks = if recs.iter().all(|r| r.value.is_some()) && !recs.is_empty() {
        let m: Vec<f64> = recs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let a = r.value.unwrap();
                if a > 0.0 {
                    Ok(a.ln())
                } else {
                    Err(Error::Data(format!("point {i} has non-positive area {a}")))
                }
            })
            .collect::<Result<_>>()?;
        Some(m)
    } else {
        None
    };
    PointData::new(points, marks)
}

fn selected_specs(cfg: &PipelineConfig, only: Option<&str>) -> Result<Vec<ModelSpec>> {
    let specs = cfg.model_specs()?;
    match only {
        None => Ok(specs),
        Some(name) => {
            if let Some(s) = specs.iter().find(|s| s.name == name) {
                return Ok(vec![s.clone()]);
            }
            Ok(vec![ModelSpec::preset(name)?])
        }
    }
}

fn file_label(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn fit_models(cfg: &PipelineConfig, only: Option<&str>) -> Result<()> {
    let dem = read_ascii_grid(&cfg.dem)?;
    let specs = selected_specs(cfg, only)?;
    let covs = covariates(cfg, &dem)?;
    check_covariates(&specs, &covs)?;
    let data = load_points(cfg)?;
    let (_, quad) = study_quadrature(&dem, cfg)?;
    for spec in &specs {
        let lm = stage("design", build_design(spec, &data, &quad, &covs))?;
        let post = stage("fit", fit(&lm, &FitOptions::default()))?;
        info!("{}: log marginal {:.4}", spec.name, post.log_marginal);
        write_summary_csv(&summarize(&post), out(cfg, &format!("{}_summary.csv", spec.name))?)?;
        let pred = stage(
            "predict",
            predict_raster(&post, &covs, &dem.header, cfg.cv_map_samples, cfg.sample_seed),
        )?;
        write_ascii_grid(&pred.mean, out(cfg, &format!("{}_mean.asc", spec.name))?)?;
        write_ascii_grid(&pred.cv, out(cfg, &format!("{}_cv.asc", spec.name))?)?;
        for (label, r) in &pred.effects {
            write_ascii_grid(r, out(cfg, &format!("{}_effect_{}.asc", spec.name, file_label(label)))?)?;
        }
    }
    Ok(())
}

struct FoldPlan {
    name: &'static str,
    train_points: Vec<usize>,
    test_points: Vec<usize>,
    /// Quadrature restricted to the training area (grid folds) or all of it.
    train_quad: Quadrature,
    eval_cells: Vec<usize>,
    /// Ratio of held-out to training points for thinning folds, else 1.
    scale: f64,
}

fn fold_plans(data: &PointData, quad: &Quadrature, grid: &EvalGrid, dem: &GridHeader, cfg: &PipelineConfig) -> Result<Vec<FoldPlan>> {
    let mut plans = Vec::new();
    let a = thinning_split(data, cfg.split_seed)?;
    let all_cells: Vec<usize> = (0..grid.len()).collect();
    for (name, s) in [("thinning_A", a.clone()), ("thinning_B", a.swapped())] {
        let scale = s.test.len() as f64 / s.train.len() as f64;
        plans.push(FoldPlan {
            name,
            train_points: s.train,
            test_points: s.test,
            train_quad: quad.clone(),
            eval_cells: all_cells.clone(),
            scale,
        });
    }
    for (name, fold) in [("grid_white", Fold::White), ("grid_black", Fold::Black)] {
        let split = chequerboard_split(dem, cfg.grid_size, fold)?;
        let (mut train_points, mut test_points) = (Vec::new(), Vec::new());
        for (i, &(x, y)) in data.points.iter().enumerate() {
            match split.is_train_at(x, y) {
                Some(true) => train_points.push(i),
                Some(false) => test_points.push(i),
                None => {}
            }
        }
        let keep: Vec<usize> = (0..quad.len())
            .filter(|&q| split.is_train_at(quad.points[q].0, quad.points[q].1) == Some(true))
            .collect();
        let train_quad = Quadrature {
            points: keep.iter().map(|&q| quad.points[q]).collect(),
            weights: keep.iter().map(|&q| quad.weights[q]).collect(),
        };
        plans.push(FoldPlan { name, train_points, test_points, train_quad, eval_cells: split.test_cells(), scale: 1.0 });
    }
    Ok(plans)
}

pub fn cv(cfg: &PipelineConfig) -> Result<()> {
    let dem = read_ascii_grid(&cfg.dem)?;
    let specs = cfg.model_specs()?;
    let covs = covariates(cfg, &dem)?;
    check_covariates(&specs, &covs)?;
    let data = load_points(cfg)?;
    let (_, quad) = study_quadrature(&dem, cfg)?;
    let grid = EvalGrid::new(&dem.header, cfg.grid_size)?;
    let plans = fold_plans(&data, &quad, &grid, &dem.header, cfg)?;

    let mut tables: BTreeMap<&'static str, Vec<ScoreRow>> = BTreeMap::new();
    for plan in &plans {
        let train = data.subset(&plan.train_points);
        let test = data.subset(&plan.test_points);
        for spec in &specs {
            info!("cv {} {}", plan.name, spec.name);
            let lm = stage("design", build_design(spec, &train, &plan.train_quad, &covs))?;
            let post = stage("fit", fit(&lm, &FitOptions::default()))?;
            let samples = sample_posterior(&post, cfg.n_samples, cfg.sample_seed)?;
            let rows = match spec.response {
                Response::Centroids => {
                    let gc = predictive_counts(
                        &post,
                        &covs,
                        &quad,
                        &grid,
                        &plan.eval_cells,
                        &test.points,
                        &samples,
                        plan.scale,
                        cfg.sample_seed,
                    )?;
                    score_counts(&gc, plan.name, &spec.name)?
                }
                Response::LogSizes => score_gaussian(&post, &covs, &test, &samples, plan.name, &spec.name)?,
            };
            let key = match spec.response {
                Response::Centroids => "centroids",
                Response::LogSizes => "log_sizes",
            };
            tables.entry(key).or_default().extend(rows);
        }
    }

    for (key, rows) in &tables {
        write_scores_csv(rows, out(cfg, &format!("scores_{key}.csv"))?)?;
        write_score_summary_csv(&summarize_scores(rows), out(cfg, &format!("summary_{key}.csv"))?)?;
        let models: Vec<&str> = specs
            .iter()
            .filter(|s| (s.response == Response::Centroids) == (*key == "centroids"))
            .map(|s| s.name.as_str())
            .collect();
        let Some((base, others)) = models.split_first() else { continue };
        let kinds: &[ScoreKind] = if *key == "centroids" { &[ScoreKind::Ls, ScoreKind::Crps] } else { &[ScoreKind::Ls] };
        for plan in &plans {
            let pick = |m: &str| -> Vec<ScoreRow> {
                rows.iter().filter(|r| r.fold == plan.name && r.model == m).cloned().collect()
            };
            let base_all = pick(base);
            for other in others {
                let (base_rows, other_rows) = shared_cells(&base_all, &pick(other));
                for &kind in kinds {
                    let stem = format!("{}_{}_vs_{}_{}", plan.name, other, base, kind.name());
                    if *key == "centroids" {
                        let map = score_difference_map(&base_rows, &other_rows, &grid, kind)?;
                        write_ascii_grid(&map.raster, out(cfg, &format!("delta_{stem}.asc"))?)?;
                        write_ecdf_csv(&map.ecdf, out(cfg, &format!("ecdf_{stem}.csv"))?)?;
                    } else {
                        let d: Vec<f64> = score_differences(&base_rows, &other_rows, kind)?.into_values().collect();
                        if !d.is_empty() {
                            write_ecdf_csv(&Ecdf::new(&d)?, out(cfg, &format!("ecdf_{stem}.csv"))?)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Restrict two score tables to the cells both models scored. Models with
/// different nodata footprints can leave different cells without weight.
fn shared_cells(a: &[ScoreRow], b: &[ScoreRow]) -> (Vec<ScoreRow>, Vec<ScoreRow>) {
    let ids = |t: &[ScoreRow]| t.iter().map(|r| r.cell_id).collect::<std::collections::BTreeSet<_>>();
    let (ia, ib) = (ids(a), ids(b));
    let keep = |t: &[ScoreRow], other: &std::collections::BTreeSet<usize>| -> Vec<ScoreRow> {
        t.iter().filter(|r| other.contains(&r.cell_id)).cloned().collect()
    };
    let (ka, kb) = (keep(a, &ib), keep(b, &ia));
    if ka.len() != a.len() || kb.len() != b.len() {
        warn!(
            "comparing {} vs {} on {} shared cells ({} and {} scored)",
            b.first().map_or("", |r| r.model.as_str()),
            a.first().map_or("", |r| r.model.as_str()),
            ka.len(),
            a.len(),
            b.len()
        );
    }
    (ka, kb)
}

pub fn sweep(cfg: &PipelineConfig) -> Result<()> {
    let dem = read_ascii_grid(&cfg.dem)?;
    let ff = d8_flow(&fill_depressions(&dem)?)?;
    let acc = accumulate(&ff);
    let s = stage(
        "sweep",
        concavity_sweep(&ff, &acc, &cfg.sweep_thetas, &cfg.sweep_thresholds, cfg.window_nodes),
    )?;
    write_sweep_csv(&s.correlations, out(cfg, "sweep.csv")?)?;
    for e in &s.entries {
        write_ascii_grid(&e.raster, out(cfg, &format!("sweep_ksn_theta{}_thr{}.asc", e.theta, e.threshold_pixels))?)?;
    }
    Ok(())
}

/// Write a synthetic landscape, covariates, an inventory and a config that
/// drives the whole pipeline on them.
pub fn simulate(dir: &Path, seed: u64, size: usize) -> Result<PathBuf> {
    if size < 16 {
        return Err(Error::Config("simulate needs --size of at least 16".into()));
    }
    fs::create_dir_all(dir)?;
    let dem = fluvial_dem(&FluvialDemSpec {
        ncols: size,
        nrows: size,
        ksn: KsnField::EastWest { west: 60.0, east: 160.0 },
        seed,
        ..Default::default()
    })?;
    let h = dem.header;
    let pga_z = smooth_field(&h, 2000.0, 4, seed + 1)?;
    let pga = pga_z.map(|v| Some(0.4 + 0.08 * v));
    let classes = |r: &Raster, n: f64| r.map(move |v| Some((((v + 2.5) / 5.0 * n).floor()).clamp(0.0, n - 1.0) + 1.0));
    let landcover = classes(&smooth_field(&h, 1500.0, 3, seed + 2)?, 4.0).with_kind(CellKind::Categorical);
    let geology = classes(&smooth_field(&h, 2500.0, 3, seed + 3)?, 3.0).with_kind(CellKind::Categorical);
    // Elevation standardised over the grid.
    let n = dem.len() as f64;
    let mean = dem.cells().iter().sum::<f64>() / n;
    let sd = (dem.cells().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-9);
    let lam = pga_z.zip_map(&dem, |p, z| Some(40.0 * (0.8 * p - 0.4 * (z - mean) / sd).exp()))?;
    let pts = slidescape::synthetic::simulate_poisson_points(&lam, seed + 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    let records: Vec<PointRecord> = pts
        .iter()
        .map(|&(x, y)| {
            let p = pga_z.header.locate(x, y).map_or(0.0, |i| pga_z.cells()[i]);
            let z: f64 = StandardNormal.sample(&mut rng);
            let ln_area = 6.0 + 0.3 * p + 0.8 * z;
            PointRecord { x, y, value: Some(ln_area.exp()) }
        })
        .collect();
    write_ascii_grid(&dem, dir.join("dem.asc"))?;
    write_ascii_grid(&pga, dir.join("pga.asc"))?;
    write_ascii_grid(&landcover, dir.join("landcover.asc"))?;
    write_ascii_grid(&geology, dir.join("geology.asc"))?;
    write_points_csv(&records, dir.join("points.csv"))?;
    let cfg = format!(
        "# synthetic run generated with seed {seed}\n\
         dem=dem.asc\npga=pga.asc\nlandcover=landcover.asc\ngeology=geology.asc\npoints=points.csv\n\
         output_dir=output\nthreshold_pixels=100\ntheta=0.5\nwindow_nodes=9\ntarget_tri_area=10000\n\
         grid_size=1000\nn_samples=200\ncv_map_samples=50\nsplit_seed=11\nsample_seed=12\nsim_seed={seed}\n\
         models=fit1a,fit6a,fit1b,fit6b\nsweep_thetas=0.4,0.5,0.6\nsweep_thresholds=100\n"
    );
    let path = dir.join("config.txt");
    fs::write(&path, cfg)?;
    info!("wrote {} points to {}", records.len(), dir.display());
    Ok(path)
}
