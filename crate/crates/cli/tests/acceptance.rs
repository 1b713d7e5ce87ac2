//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runtime limits are part of each check.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slidescape::assess::{
    chequerboard_split, predictive_counts, score_counts, score_normal_mixture, score_poisson_mixture, thinning_split,
    EvalGrid, Fold,
};
use slidescape::flow::{accumulate, d8_flow, fill_depressions};
use slidescape::mesh::{build_mesh, quadrature_of, Quadrature, Region};
use slidescape::model::{
    build_design, degenerate_samples, fit, predict_from_samples, rw2_structure, sample_posterior, Covariates, Effect,
    FitOptions, ModelSpec, PointData, Posterior, Response, Term, Transform,
};
use slidescape::raster::{GridHeader, Raster};
use slidescape::steepness::{concavity_sweep, ksn_pipeline, KsnParams};
use slidescape::synthetic::{fluvial_dem, random_surface, simulate_poisson_points, smooth_field, FluvialDemSpec, KsnField};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- flow

fn mass_conservation() -> Check {
    let mut dems = vec![
        ("random 512x512", random_surface(512, 512, 30.0, 1).map_err(err)?),
        ("fluvial 64x64", fluvial_dem(&FluvialDemSpec::default()).map_err(err)?),
        ("flat 50x40", Raster::filled(GridHeader::new(50, 40, 0.0, 0.0, 10.0, -9999.0).map_err(err)?, 5.0)),
    ];
    let mut holes = random_surface(200, 150, 25.0, 2).map_err(err)?;
    for i in (0..holes.len()).step_by(7) {
        holes.set(i, None);
    }
    dems.push(("random with nodata holes", holes));
    let mut notes = Vec::new();
    for (name, dem) in &dems {
        let ff = d8_flow(&fill_depressions(dem).map_err(err)?).map_err(err)?;
        let acc = accumulate(&ff);
        let valid = dem.valid_count() as u64;
        let cell_sum: u64 = ff.outlets().iter().map(|&o| acc.cells[o]).sum();
        let area_sum: f64 = ff.outlets().iter().map(|&o| acc.area.cells()[o]).sum();
        let cs = dem.header.cell_size;
        if cell_sum != valid || area_sum != valid as f64 * cs * cs {
            return Err(format!("{name}: outlets hold {cell_sum} cells / {area_sum} m², expected {valid}"));
        }
        notes.push(format!("{name}: {valid}"));
    }
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- steepness

fn ksn_recovery() -> Check {
    let dem = fluvial_dem(&FluvialDemSpec { ncols: 96, nrows: 96, ..Default::default() }).map_err(err)?;
    let ff = d8_flow(&fill_depressions(&dem).map_err(err)?).map_err(err)?;
    let acc = accumulate(&ff);
    let res = ksn_pipeline(&ff, &acc, &KsnParams { threshold_pixels: 50, ..Default::default() }).map_err(err)?;
    let n = res.ksn_nodes.len();
    let good = res.ksn_nodes.iter().filter(|k| k.is_some_and(|k| (k - 100.0).abs() <= 2.0)).count();
    let frac = good as f64 / n as f64;
    if n == 0 || frac < 0.95 {
        return Err(format!("{good}/{n} nodes within 2% of 100"));
    }

    let varying = fluvial_dem(&FluvialDemSpec {
        ncols: 96,
        nrows: 96,
        ksn: KsnField::EastWest { west: 50.0, east: 200.0 },
        ..Default::default()
    })
    .map_err(err)?;
    let ff = d8_flow(&fill_depressions(&varying).map_err(err)?).map_err(err)?;
    let acc = accumulate(&ff);
    let sweep = concavity_sweep(&ff, &acc, &[0.5, 0.4, 0.6], &[50], 9).map_err(err)?;
    let rho: Vec<(f64, f64)> = sweep
        .correlations
        .iter()
        .filter(|c| c.theta_a == 0.5)
        .map(|c| (c.theta_b, c.spearman_rho))
        .collect();
    ensure(
        rho.len() == 2 && rho.iter().all(|&(_, r)| r > 0.9),
        format!("{good}/{n} nodes within 2%; spearman vs 0.5: {rho:?}"),
    )
}

// ---------------------------------------------------------------- model

fn intercept_only() -> ModelSpec {
    ModelSpec { name: "intercept".into(), response: Response::Centroids, terms: vec![], intercept: true }
}

fn homogeneous_poisson() -> Check {
    let region = Region::rectangle(0.0, 0.0, 2500.0, 2000.0);
    let quad = quadrature_of(&build_mesh(&region, 1e5).map_err(err)?);
    let pts = (0..10).map(|i| (100.0 + 230.0 * i as f64, 300.0 + 150.0 * i as f64)).collect();
    let lm = build_design(&intercept_only(), &PointData::new(pts, None).map_err(err)?, &quad, &Covariates::new())
        .map_err(err)?;
    let post = fit(&lm, &FitOptions::default()).map_err(err)?;
    let oracle = 10.0 / (quad.total_weight() / 1e6);
    let lam = post.mode[0].exp();
    let rel = (lam - 2.0).abs() / 2.0;
    ensure(
        rel < 1e-8 && (oracle - 2.0).abs() < 1e-12,
        format!("lambda = {lam:.12}, relative error {rel:.1e}"),
    )
}

const BETA: [f64; 3] = [3.912_023_005_428_146, 1.0, -0.5];

struct Replicate {
    header: GridHeader,
    covs: Covariates,
    data: PointData,
    quad: Quadrature,
}

/// Inhomogeneous Poisson draw on a 10 km square with two smooth covariates.
fn replicate(seed: u64, quad: &Quadrature) -> Result<Replicate, String> {
    let h = GridHeader::new(100, 100, 0.0, 0.0, 100.0, -9999.0).map_err(err)?;
    let x1 = smooth_field(&h, 4000.0, 3, 1000 + seed).map_err(err)?;
    let x2 = smooth_field(&h, 4000.0, 3, 2000 + seed).map_err(err)?;
    let lam = x1.zip_map(&x2, |a, b| Some((BETA[0] + BETA[1] * a + BETA[2] * b).exp())).map_err(err)?;
    let pts = simulate_poisson_points(&lam, 3000 + seed).map_err(err)?;
    let mut covs = Covariates::new();
    covs.insert("x1", x1).map_err(err)?;
    covs.insert("x2", x2).map_err(err)?;
    Ok(Replicate { header: h, covs, data: PointData::new(pts, None).map_err(err)?, quad: quad.clone() })
}

/// Triangles at half the covariate pixel area, so the centroid rule follows
/// the pixel-constant intensity the points were drawn from. The 0.1 km²
/// default leaves a quadrature bias near one posterior SD on 4 km waves.
fn domain_quadrature() -> Result<Quadrature, String> {
    let mesh = build_mesh(&Region::rectangle(0.0, 0.0, 10_000.0, 10_000.0), 5e3).map_err(err)?;
    Ok(quadrature_of(&mesh))
}

fn true_form() -> ModelSpec {
    ModelSpec {
        name: "true_form".into(),
        response: Response::Centroids,
        terms: vec![
            Term::new("x1", Transform::Identity, Effect::Linear),
            Term::new("x2", Transform::Identity, Effect::Linear),
        ],
        intercept: true,
    }
}

fn fit_on(covs: &Covariates, data: &PointData, quad: &Quadrature) -> Result<Posterior, String> {
    let lm = build_design(&true_form(), data, quad, covs).map_err(err)?;
    fit(&lm, &FitOptions::default()).map_err(err)
}

fn coefficient_recovery() -> Check {
    let quad = domain_quadrature()?;
    let mut covered = 0;
    let mut abs_err = [0.0f64; 2];
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let r = replicate(seed, &quad)?;
        let post = fit_on(&r.covs, &r.data, &r.quad)?;
        let sd = post.sd();
        let z = (0..3).map(|k| (post.mode[k] - BETA[k]).abs() / sd[k]).fold(0.0, f64::max);
        worst = worst.max(z);
        if z <= 3.0 {
            covered += 1;
        }
        abs_err[0] += (post.mode[1] - BETA[1]).abs() / 20.0;
        abs_err[1] += (post.mode[2] - BETA[2]).abs() / 20.0;
    }
    ensure(
        covered >= 19 && abs_err[0] < 0.1 && abs_err[1] < 0.1,
        format!(
            "{covered}/20 within 3 SD (worst {worst:.2} SD); MAE beta1 {:.4}, beta2 {:.4}",
            abs_err[0], abs_err[1]
        ),
    )
}

// ---------------------------------------------------------------- scores

fn poisson_cdf_brute(lam: f64, k: u64) -> f64 {
    let mut p = (-lam).exp();
    let mut total = p;
    for j in 1..=k {
        p *= lam / j as f64;
        total += p;
    }
    total
}

fn score_closed_forms() -> Check {
    let ls_pois = score_poisson_mixture(&[2.0], 2).map_err(err)?.ls;
    let ls_norm = score_normal_mixture(&[0.0], &[1.0], 0.0).map_err(err)?.ls;
    let crps = score_poisson_mixture(&[1.0], 0).map_err(err)?.crps.ok_or("missing crps")?;
    let brute: f64 = (0..=60).map(|k| (poisson_cdf_brute(1.0, k) - 1.0).powi(2)).sum();
    let ds = score_normal_mixture(&[-1.0, 1.0], &[1.0, 1.0], 0.0).map_err(err)?.ds;
    let e = [
        (ls_pois - (2.0 - 2f64.ln())).abs(),
        (ls_norm - 0.5 * std::f64::consts::TAU.ln()).abs(),
        (crps - brute).abs(),
        (ds - 2f64.ln()).abs(),
    ];
    ensure(
        e[0] <= 1e-12 && e[1] <= 1e-12 && e[2] <= 1e-9 && e[3] <= 1e-12,
        format!("errors LS pois {:.1e}, LS norm {:.1e}, CRPS {:.1e}, DS {:.1e}", e[0], e[1], e[2], e[3]),
    )
}

fn shuffled(covs: &Covariates, seed: u64) -> Result<Covariates, String> {
    let mut out = Covariates::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in ["x1", "x2"] {
        let r = covs.get(name).map_err(err)?;
        let mut cells = r.cells().to_vec();
        cells.shuffle(&mut rng);
        out.insert(name, Raster::new(r.header, cells).map_err(err)?).map_err(err)?;
    }
    Ok(out)
}

/// Mean LS and CRPS of held-out counts on a 2 km lattice.
fn heldout_scores(post: &Posterior, covs: &Covariates, r: &Replicate, test: &PointData, scale: f64, seed: u64) -> Result<(f64, f64), String> {
    let grid = EvalGrid::new(&r.header, 2000.0).map_err(err)?;
    let cells: Vec<usize> = (0..grid.len()).collect();
    let samples = sample_posterior(post, 200, seed).map_err(err)?;
    let gc = predictive_counts(post, covs, &r.quad, &grid, &cells, &test.points, &samples, scale, seed).map_err(err)?;
    let rows = score_counts(&gc, "thinning", "m").map_err(err)?;
    let n = rows.len() as f64;
    let ls = rows.iter().map(|s| s.scores.ls).sum::<f64>() / n;
    let crps = rows.iter().map(|s| s.scores.crps.unwrap_or(f64::NAN)).sum::<f64>() / n;
    Ok((ls, crps))
}

fn propriety() -> Check {
    let quad = domain_quadrature()?;
    let mut wins = 0;
    for seed in 0..20 {
        let r = replicate(seed, &quad)?;
        let split = thinning_split(&r.data, 500 + seed).map_err(err)?;
        let (train, test) = (r.data.subset(&split.train), r.data.subset(&split.test));
        let scale = split.test.len() as f64 / split.train.len() as f64;
        let noise = shuffled(&r.covs, 700 + seed)?;
        let good = heldout_scores(&fit_on(&r.covs, &train, &r.quad)?, &r.covs, &r, &test, scale, seed)?;
        let bad = heldout_scores(&fit_on(&noise, &train, &r.quad)?, &noise, &r, &test, scale, seed)?;
        if good.0 < bad.0 && good.1 < bad.1 {
            wins += 1;
        }
    }
    ensure(wins >= 18, format!("true form wins {wins}/20"))
}

// ---------------------------------------------------------------- structure and splits

fn rw2_structure_check() -> Check {
    for n in [5usize, 10, 25] {
        let q = rw2_structure(n).map_err(err)?;
        let ones = nalgebra::DVector::from_element(n, 1.0);
        let lin = nalgebra::DVector::from_fn(n, |i, _| (i + 1) as f64);
        let sq = nalgebra::DVector::from_fn(n, |i, _| ((i + 1) * (i + 1)) as f64);
        let energy = sq.dot(&(&q * &sq));
        if (&q * ones).iter().any(|&v| v != 0.0) || (&q * lin).iter().any(|&v| v != 0.0) || energy != 4.0 * (n - 2) as f64 {
            return Err(format!("n = {n}: energy {energy}"));
        }
    }
    Ok("n = 5, 10, 25 exact".into())
}

fn split_bookkeeping() -> Check {
    let pts = (0..20_471).map(|i| ((i % 143) as f64 * 70.0, (i / 143) as f64 * 70.0)).collect();
    let data = PointData::new(pts, None).map_err(err)?;
    let a = thinning_split(&data, 42).map_err(err)?;
    let b = thinning_split(&data, 42).map_err(err)?;
    let mut joined: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
    joined.sort_unstable();
    let thinning_ok = a.train.len() == 10_236
        && a.test.len() == 10_235
        && a == b
        && joined.iter().enumerate().all(|(i, &j)| i == j);

    let h = GridHeader::new(317, 211, 1000.0, 2000.0, 30.0, -9999.0).map_err(err)?;
    let white = chequerboard_split(&h, 3000.0, Fold::White).map_err(err)?;
    let black = chequerboard_split(&h, 3000.0, Fold::Black).map_err(err)?;
    let again = chequerboard_split(&h, 3000.0, Fold::White).map_err(err)?;
    let complement = white.train.iter().zip(&black.train).all(|(w, b)| w != b)
        && (0..h.len()).all(|i| {
            let (x, y) = h.cell_center(i);
            matches!((white.is_train_at(x, y), black.is_train_at(x, y)), (Some(w), Some(b)) if w != b)
        });
    ensure(
        thinning_ok && complement && white == again,
        format!("{}/{} split, {} lattice cells complementary", a.train.len(), a.test.len(), white.train.len()),
    )
}

// ---------------------------------------------------------------- pipeline

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slidescape"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn csv_snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let p = entry.map_err(err)?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?);
        }
    }
    Ok(out)
}

fn cv_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let sim = tmp.path().join("sim");
    let sim_s = sim.to_str().ok_or("non-utf8 temp path")?;
    let cfg = sim.join("config.txt");
    let cfg_s = cfg.to_str().ok_or("non-utf8 temp path")?;
    run_cli(&["simulate", "--out", sim_s, "--size", "64", "--seed", "5"])?;
    run_cli(&["terrain", "--config", cfg_s])?;
    run_cli(&["cv", "--config", cfg_s])?;
    let first = csv_snapshot(&sim.join("output"))?;
    run_cli(&["cv", "--config", cfg_s, "--threads", "2"])?;
    let second = csv_snapshot(&sim.join("output"))?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure(
        first.contains_key("scores_centroids.csv") && differing.is_empty() && first.len() == second.len(),
        format!("{} CSVs compared, differing: {differing:?}", first.len()),
    )
}

fn degenerate_cv_map() -> Check {
    let quad = domain_quadrature()?;
    let r = replicate(0, &quad)?;
    let post = fit_on(&r.covs, &r.data, &r.quad)?;
    let pred = predict_from_samples(&post, &r.covs, &r.header, &degenerate_samples(&post, 25)).map_err(err)?;
    let valid: Vec<f64> = (0..pred.cv.len()).filter_map(|i| pred.cv.value(i)).collect();
    let nonzero = valid.iter().filter(|&&v| v != 0.0).count();
    ensure(!valid.is_empty() && nonzero == 0, format!("{} cells, {nonzero} nonzero", valid.len()))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Check)> = vec![
        ("flow mass conservation", Duration::from_secs(5), mass_conservation),
        ("ksn recovery and concavity ranking", Duration::from_secs(30), ksn_recovery),
        ("homogeneous Poisson closed form", Duration::from_secs(1), homogeneous_poisson),
        ("coefficient recovery", Duration::from_secs(300), coefficient_recovery),
        ("score closed forms", Duration::from_secs(1), score_closed_forms),
        ("propriety against shuffled covariates", Duration::from_secs(300), propriety),
        ("rw2 structure", Duration::from_secs(1), rw2_structure_check),
        ("split bookkeeping", Duration::from_secs(5), split_bookkeeping),
        ("cv determinism", Duration::from_secs(300), cv_determinism),
        ("degenerate cv map", Duration::from_secs(60), degenerate_cv_map),
    ];
    let mut failures = 0;
    for (k, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; took longer than {limit:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} [{}] {name}: {detail} ({:.2} s)",
            if ok { "PASS" } else { "FAIL" },
            k + 1,
            took.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
