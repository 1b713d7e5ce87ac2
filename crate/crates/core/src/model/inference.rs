//! Newton inner solve, Laplace marginal, hyperparameter search and posterior
//! sampling.

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::design::{rw2_structure, BlockKind, Layout, LatentModel};
use super::Response;
use crate::error::{Error, Result};

/// Prior precision of linear coefficients.
const LINEAR_PRECISION: f64 = 0.001;
/// Gamma(shape 1, rate) prior on every precision.
const GAMMA_RATE: f64 = 5e-5;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when every Newton step component is below this.
    pub latent_tol: f64,
    /// Stop the outer search when a sweep gains less than this (nats).
    pub outer_tol: f64,
    /// Width at which a golden-section search stops.
    pub golden_tol: f64,
    pub hyper_lo: f64,
    pub hyper_hi: f64,
    pub max_newton: usize,
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            latent_tol: 1e-6,
            outer_tol: 1e-4,
            golden_tol: 1e-3,
            hyper_lo: -6.0,
            hyper_hi: 10.0,
            max_newton: 200,
            max_sweeps: 20,
        }
    }
}

/// Fixed-hyperparameter pieces of the log posterior.
struct Objective<'a> {
    lm: &'a LatentModel,
    q: DMatrix<f64>,
    noise_tau: f64,
    a: DMatrix<f64>,
}

impl<'a> Objective<'a> {
    fn new(lm: &'a LatentModel, hyper: &[f64]) -> Result<Self> {
        let layout = &lm.layout;
        let n_hyper = hyper_count(lm);
        if hyper.len() != n_hyper {
            return Err(Error::Config(format!("expected {n_hyper} hyperparameters, got {}", hyper.len())));
        }
        let p = layout.dim;
        let mut q = DMatrix::zeros(p, p);
        let mut h = 0;
        for b in &layout.blocks {
            match &b.kind {
                BlockKind::Intercept => {}
                BlockKind::Linear => q[(b.offset, b.offset)] = LINEAR_PRECISION,
                BlockKind::Iid { .. } => {
                    let tau = hyper[h].exp();
                    h += 1;
                    for k in 0..b.size {
                        q[(b.offset + k, b.offset + k)] = tau;
                    }
                }
                BlockKind::Rw2 { bins, .. } => {
                    let tau = hyper[h].exp();
                    h += 1;
                    let r = rw2_structure(*bins)?;
                    q.view_mut((b.offset, b.offset), (*bins, *bins)).copy_from(&(r * tau));
                }
            }
        }
        let noise_tau = if lm.spec.response == Response::LogSizes { hyper[h].exp() } else { 0.0 };
        Ok(Self { lm, q, noise_tau, a: layout.constraints() })
    }

    fn eta(&self, x: &DVector<f64>) -> Vec<f64> {
        self.lm.rows.iter().map(|r| r.iter().map(|&(j, v)| x[j] * v).sum()).collect()
    }

    fn log_lik(&self, eta: &[f64]) -> f64 {
        let lm = self.lm;
        match lm.spec.response {
            Response::Centroids => {
                let np = lm.n_point_rows;
                let pts: f64 = eta[..np].iter().sum();
                let integral: f64 = eta[np..].iter().zip(&lm.quad_weights).map(|(e, w)| w * e.exp()).sum();
                pts - integral
            }
            Response::LogSizes => {
                let n = lm.y.len() as f64;
                let rss: f64 = lm.y.iter().zip(eta).map(|(y, e)| (y - e) * (y - e)).sum();
                0.5 * n * (self.noise_tau.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5 * self.noise_tau * rss
            }
        }
    }

    fn log_post(&self, x: &DVector<f64>) -> f64 {
        let v = self.log_lik(&self.eta(x)) - 0.5 * x.dot(&(&self.q * x));
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Gradient of the log posterior and its negative Hessian.
    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let lm = self.lm;
        let p = x.len();
        let eta = self.eta(x);
        let mut g = -(&self.q * x);
        let mut h = self.q.clone();
        let mut add = |row: &[(usize, f64)], gw: f64, hw: f64| {
            for &(j, vj) in row {
                g[j] += gw * vj;
                if hw != 0.0 {
                    for &(k, vk) in row {
                        h[(j, k)] += hw * vj * vk;
                    }
                }
            }
        };
        match lm.spec.response {
            Response::Centroids => {
                let np = lm.n_point_rows;
                for r in &lm.rows[..np] {
                    add(r, 1.0, 0.0);
                }
                for ((r, e), w) in lm.rows[np..].iter().zip(&eta[np..]).zip(&lm.quad_weights) {
                    let mu = w * e.exp();
                    add(r, -mu, mu);
                }
            }
            Response::LogSizes => {
                let t = self.noise_tau;
                for ((r, e), y) in lm.rows.iter().zip(&eta).zip(&lm.y) {
                    add(r, t * (y - e), t);
                }
            }
        }
        debug_assert_eq!(h.nrows(), p);
        (g, h)
    }

    /// Negative Hessian plus `kappa AᵀA`, which is positive definite when the
    /// only flat directions are the ones the constraints remove.
    fn augmented(&self, h: DMatrix<f64>) -> DMatrix<f64> {
        if self.a.nrows() == 0 {
            return h;
        }
        let kappa = h.diagonal().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        h + self.a.transpose() * &self.a * kappa
    }
}

fn hyper_count(lm: &LatentModel) -> usize {
    lm.layout.hyper_blocks().len() + (lm.spec.response == Response::LogSizes) as usize
}

pub fn hyper_labels(lm: &LatentModel) -> Vec<String> {
    let mut v: Vec<String> = lm
        .layout
        .hyper_blocks()
        .iter()
        .map(|&b| format!("precision:{}", lm.layout.blocks[b].label))
        .collect();
    if lm.spec.response == Response::LogSizes {
        v.push("precision:noise".into());
    }
    v
}

fn chol(h: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    h.cholesky().ok_or_else(|| Error::Numerical("negative Hessian is not positive definite".into()))
}

/// Conditioning by kriging: shift `d` so that `A (x + d) = 0`.
fn krige(ch: &Cholesky<f64, Dyn>, a: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let w = ch.solve(&a.transpose());
    let s = a * &w;
    let s_ch = chol(s)?;
    Ok(w * s_ch.solve(target))
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub mode: DVector<f64>,
    /// Newton steps larger than the tolerance.
    pub iterations: usize,
    pub log_post: f64,
}

fn initial_latent(lm: &LatentModel) -> DVector<f64> {
    let mut x = DVector::zeros(lm.dim());
    if lm.spec.intercept {
        x[0] = match lm.spec.response {
            Response::Centroids if lm.n_point_rows > 0 => (lm.n_point_rows as f64 / lm.total_weight()).ln(),
            Response::Centroids => 0.0,
            Response::LogSizes if !lm.y.is_empty() => lm.y.iter().sum::<f64>() / lm.y.len() as f64,
            Response::LogSizes => 0.0,
        };
    }
    x
}

/// Posterior mode of the latent vector at fixed log-precisions.
pub fn inner_mode(lm: &LatentModel, hyper: &[f64], init: Option<&DVector<f64>>) -> Result<InnerResult> {
    inner_with(&Objective::new(lm, hyper)?, init, &FitOptions::default())
}

fn inner_with(obj: &Objective, init: Option<&DVector<f64>>, opts: &FitOptions) -> Result<InnerResult> {
    let lm = obj.lm;
    let mut x = init.cloned().unwrap_or_else(|| initial_latent(lm));
    if x.len() != lm.dim() {
        return Err(Error::Config(format!("initial latent has length {}, expected {}", x.len(), lm.dim())));
    }
    let mut f = obj.log_post(&x);
    if !f.is_finite() {
        x = initial_latent(lm);
        f = obj.log_post(&x);
    }
    let mut iterations = 0;
    for _ in 0..opts.max_newton {
        let (g, h) = obj.grad_hess(&x);
        let ch = chol(obj.augmented(h))?;
        let mut d = ch.solve(&g);
        if obj.a.nrows() > 0 {
            let target = &obj.a * (&x + &d);
            d -= krige(&ch, &obj.a, &target)?;
        }
        let step = d.amax();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &x + &d * t;
            let fc = obj.log_post(&cand);
            if fc.is_finite() && fc >= f - 1e-12 * (1.0 + f.abs()) {
                accepted = Some((cand, fc));
                break;
            }
            if fc.is_finite() && t * step < opts.latent_tol {
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            if f.is_finite() && t * step < opts.latent_tol * 2.0 {
                // No further ascent at round-off scale.
                break;
            }
            let worst = (0..d.len()).max_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs())).unwrap_or(0);
            return Err(Error::Divergence {
                term: lm.layout.block_of(worst).label.clone(),
                reason: format!("log posterior not finite after {MAX_HALVINGS} step halvings"),
            });
        };
        x = cand;
        f = fc;
        if step * t < opts.latent_tol {
            break;
        }
        iterations += 1;
    }
    Ok(InnerResult { mode: x, iterations, log_post: f })
}

/// Laplace approximation of the log marginal likelihood and the pieces
/// needed to build the posterior.
struct Laplace {
    value: f64,
    inner: InnerResult,
    chol: Cholesky<f64, Dyn>,
}

fn laplace(lm: &LatentModel, hyper: &[f64], init: Option<&DVector<f64>>, opts: &FitOptions) -> Result<Laplace> {
    let obj = Objective::new(lm, hyper)?;
    let inner = inner_with(&obj, init, opts)?;
    let (_, h) = obj.grad_hess(&inner.mode);
    let ch = chol(obj.augmented(h))?;
    let mut logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if obj.a.nrows() > 0 {
        let s = &obj.a * ch.solve(&obj.a.transpose());
        let aat = &obj.a * obj.a.transpose();
        logdet += chol(s)?.ln_determinant() - chol(aat)?.ln_determinant();
    }
    let mut value = inner.log_post - 0.5 * logdet;
    let mut h = 0;
    for b in &lm.layout.blocks {
        if b.has_hyper() {
            value += 0.5 * b.prior_rank() as f64 * hyper[h];
            h += 1;
        }
    }
    for &t in hyper {
        value += GAMMA_RATE.ln() - GAMMA_RATE * t.exp() + t;
    }
    Ok(Laplace { value, inner, chol: ch })
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub model: String,
    pub layout: Layout,
    pub mode: DVector<f64>,
    /// Log-precisions at their modal values.
    pub hyper: Vec<f64>,
    pub hyper_labels: Vec<String>,
    pub log_marginal: f64,
    /// Gaussian noise precision for log-size models.
    pub noise_precision: Option<f64>,
    /// Lower Cholesky factor of the augmented negative Hessian at the mode.
    pub factor: DMatrix<f64>,
    /// `H⁻¹ Aᵀ (A H⁻¹ Aᵀ)⁻¹`, used to project draws onto the constraints.
    kriging: DMatrix<f64>,
    constraints: DMatrix<f64>,
    /// Constrained posterior covariance.
    pub covariance: DMatrix<f64>,
}

impl Posterior {
    pub fn sd(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    fn from_laplace(lm: &LatentModel, hyper: Vec<f64>, lp: Laplace) -> Result<Self> {
        let a = lm.layout.constraints();
        let p = lm.dim();
        let hinv = lp.chol.inverse();
        let (kriging, covariance) = if a.nrows() > 0 {
            let w = &hinv * a.transpose();
            let s = chol(&a * &w)?;
            let k = &w * s.inverse();
            let cov = &hinv - &k * w.transpose();
            (k, cov)
        } else {
            (DMatrix::zeros(p, 0), hinv)
        };
        let noise_precision = (lm.spec.response == Response::LogSizes).then(|| hyper[hyper.len() - 1].exp());
        Ok(Self {
            model: lm.spec.name.clone(),
            layout: lm.layout.clone(),
            mode: lp.inner.mode,
            hyper_labels: hyper_labels(lm),
            hyper,
            log_marginal: lp.value,
            noise_precision,
            factor: lp.chol.l(),
            kriging,
            constraints: a,
            covariance,
        })
    }
}

fn golden(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Empirical-Bayes Laplace fit: log-precisions maximise the approximate
/// marginal likelihood by coordinate golden-section search.
pub fn fit(lm: &LatentModel, opts: &FitOptions) -> Result<Posterior> {
    let m = hyper_count(lm);
    let mut hyper = vec![0.0; m];
    if lm.spec.response == Response::LogSizes && lm.y.len() > 1 {
        let n = lm.y.len() as f64;
        let mean = lm.y.iter().sum::<f64>() / n;
        let var = lm.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            hyper[m - 1] = (-var.ln()).clamp(opts.hyper_lo, opts.hyper_hi);
        }
    }
    let mut best = laplace(lm, &hyper, None, opts)?;
    if m > 0 {
        for sweep in 0..opts.max_sweeps {
            let start = best.value;
            for j in 0..m {
                let mut warm = best.inner.mode.clone();
                let mut trial = hyper.clone();
                let (t, v) = golden(
                    |t| {
                        trial[j] = t;
                        match laplace(lm, &trial, Some(&warm), opts) {
                            Ok(lp) => {
                                warm = lp.inner.mode.clone();
                                lp.value
                            }
                            Err(_) => f64::NEG_INFINITY,
                        }
                    },
                    opts.hyper_lo,
                    opts.hyper_hi,
                    opts.golden_tol,
                );
                if v > best.value {
                    hyper[j] = t;
                    best = laplace(lm, &hyper, Some(&best.inner.mode), opts)?;
                }
            }
            debug!("{}: sweep {sweep} log marginal {}", lm.spec.name, best.value);
            if best.value - start < opts.outer_tol {
                break;
            }
        }
    }
    Posterior::from_laplace(lm, hyper, best)
}

/// `n` latent draws from the Gaussian posterior, projected onto the
/// sum-to-zero constraints. Draw `s` depends only on `(seed, s)`.
pub fn sample_posterior(post: &Posterior, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let lt = post.factor.transpose();
    Ok((0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let z = DVector::from_fn(post.mode.len(), |_, _| StandardNormal.sample(&mut rng));
            let u = lt.solve_upper_triangular(&z).expect("factor has a positive diagonal");
            let mut x = &post.mode + u;
            if post.constraints.nrows() > 0 {
                let c = &post.constraints * &x;
                x -= &post.kriging * c;
            }
            x
        })
        .collect())
}

/// `n` copies of the mode: a posterior collapsed to a point.
pub fn degenerate_samples(post: &Posterior, n: usize) -> Vec<DVector<f64>> {
    vec![post.mode.clone(); n]
}
