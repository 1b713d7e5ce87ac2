//! Model formulas, latent Gaussian construction and Laplace inference for
//! landslide centroids (log-Gaussian Poisson process) and log sizes
//! (Gaussian).
//!
//! Hyperparameters are set to the maximiser of the Laplace-approximate
//! marginal likelihood; the latent posterior is Gaussian at that point.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::{GridHeader, Raster};

mod design;
mod inference;
mod predict;

pub use design::{build_design, rw2_structure, Block, BlockKind, Layout, LatentModel, PointData, SparseRow};
pub use design::RowEval;
pub use inference::{
    degenerate_samples, fit, hyper_labels, inner_mode, sample_posterior, FitOptions, InnerResult, Posterior,
};
pub use predict::{
    eta_of, predict_from_samples, predict_raster, summarize, write_summary_csv, Prediction, SummaryRow,
};

/// Default number of RW2 bins.
pub const DEFAULT_BINS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Centroids,
    LogSizes,
}

impl FromStr for Response {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroids" => Ok(Response::Centroids),
            "log_sizes" => Ok(Response::LogSizes),
            _ => Err(Error::Config(format!("unknown response `{s}` (centroids, log_sizes)"))),
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Response::Centroids => "centroids",
            Response::LogSizes => "log_sizes",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
    /// log(1 + x); stands in for log(ksn) since ksn may be 0.
    Log1p,
    Sqrt,
    /// exp(-x), used on km distances.
    ExpNeg,
}

impl Transform {
    /// `None` outside the transform's domain.
    pub fn apply(self, x: f64) -> Option<f64> {
        let v = match self {
            Transform::Identity => x,
            Transform::Log if x > 0.0 => x.ln(),
            Transform::Log1p if x > -1.0 => x.ln_1p(),
            Transform::Sqrt if x >= 0.0 => x.sqrt(),
            Transform::ExpNeg => (-x).exp(),
            _ => return None,
        };
        v.is_finite().then_some(v)
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "log" => Ok(Transform::Log),
            "log1p" => Ok(Transform::Log1p),
            "sqrt" => Ok(Transform::Sqrt),
            "exp_neg" => Ok(Transform::ExpNeg),
            _ => Err(Error::Config(format!(
                "unknown transform `{s}` (identity, log, log1p, sqrt, exp_neg)"
            ))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Identity => "identity",
            Transform::Log => "log",
            Transform::Log1p => "log1p",
            Transform::Sqrt => "sqrt",
            Transform::ExpNeg => "exp_neg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Linear,
    Iid,
    Rw2 { bins: usize },
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effect::Linear => f.write_str("linear"),
            Effect::Iid => f.write_str("iid"),
            Effect::Rw2 { bins } => write!(f, "rw2:{bins}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub covariate: String,
    pub transform: Transform,
    pub effect: Effect,
}

impl Term {
    pub fn new(covariate: &str, transform: Transform, effect: Effect) -> Self {
        Self { covariate: covariate.to_string(), transform, effect }
    }

    pub fn label(&self) -> String {
        format!("{}:{}:{}", self.covariate, self.transform, self.effect)
    }
}

impl FromStr for Term {
    type Err = Error;
    /// `covariate:transform:effect[:bins]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::Config(format!("bad term `{s}`, expected covariate:transform:effect[:bins]"));
        if parts.len() < 3 || parts.len() > 4 || parts[0].is_empty() {
            return Err(bad());
        }
        let effect = match (parts[2], parts.get(3)) {
            ("linear", None) => Effect::Linear,
            ("iid", None) => Effect::Iid,
            ("rw2", None) => Effect::Rw2 { bins: DEFAULT_BINS },
            ("rw2", Some(b)) => Effect::Rw2 {
                bins: b.parse().map_err(|_| Error::Config(format!("bad bin count `{b}` in term `{s}`")))?,
            },
            _ => return Err(bad()),
        };
        Ok(Term::new(parts[0], parts[1].parse()?, effect))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub response: Response,
    pub terms: Vec<Term>,
    pub intercept: bool,
}

pub const PRESETS: [&str; 12] = [
    "fit1a", "fit2a", "fit3a", "fit4a", "fit5a", "fit6a", "fit1b", "fit2b", "fit3b", "fit4b", "fit5b", "fit6b",
];

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if let Effect::Rw2 { bins } = t.effect {
                if bins < 5 {
                    return Err(Error::Config(format!("term `{}` needs at least 5 bins", t.label())));
                }
            }
        }
        if self.terms.is_empty() && !self.intercept {
            return Err(Error::Config(format!("model `{}` has no terms and no intercept", self.name)));
        }
        Ok(())
    }

    /// Named formulas: `fitNa` for centroids, `fitNb` for log sizes. Land cover
    /// and geology enter every formula as i.i.d. categorical effects.
    pub fn preset(name: &str) -> Result<Self> {
        use Effect::*;
        use Transform::*;
        let rw2 = Rw2 { bins: DEFAULT_BINS };
        let (response, pga) = match name.strip_prefix("fit").and_then(|r| r.chars().nth(1)) {
            Some('a') => (Response::Centroids, Term::new("pga", Identity, rw2)),
            Some('b') => (Response::LogSizes, Term::new("pga", Log, Linear)),
            _ => return Err(unknown_preset(name)),
        };
        let a = response == Response::Centroids;
        let specific: Vec<Term> = match name.get(..4).unwrap_or("") {
            "fit1" => vec![Term::new("ksn", Log1p, Linear)],
            "fit2" => vec![Term::new("ksn", Sqrt, rw2)],
            "fit3" => vec![Term::new("ksn", Log1p, rw2)],
            "fit4" => vec![Term::new("dem", Identity, Linear)],
            "fit5" if a => vec![Term::new("ksn", Log1p, rw2), Term::new("rf2ch", ExpNeg, Linear)],
            "fit6" if a => vec![Term::new("ksn", Log1p, rw2), Term::new("fd2ch", ExpNeg, Linear)],
            "fit5" => vec![Term::new("rf2ch", Identity, Linear)],
            "fit6" => vec![Term::new("fd2ch", Identity, Linear)],
            _ => return Err(unknown_preset(name)),
        };
        if name.len() != 5 {
            return Err(unknown_preset(name));
        }
        let mut terms = vec![pga];
        terms.extend(specific);
        terms.push(Term::new("landcover", Identity, Iid));
        terms.push(Term::new("geology", Identity, Iid));
        Ok(Self { name: name.to_string(), response, terms, intercept: true })
    }

    /// Parse a flat `key=value` model description. `preset=` seeds the
    /// formula; `term=` lines append to it.
    pub fn parse(text: &str, default_name: &str) -> Result<Self> {
        let mut spec: Option<ModelSpec> = None;
        let mut name = None;
        let mut response = None;
        let mut intercept = None;
        let mut extra = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("model line {}: expected key=value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "preset" => spec = Some(Self::preset(v)?),
                "name" => name = Some(v.to_string()),
                "response" => response = Some(v.parse()?),
                "intercept" => {
                    intercept = Some(v.parse::<bool>().map_err(|_| {
                        Error::Config(format!("model line {}: intercept must be true or false", ln + 1))
                    })?)
                }
                "term" => extra.push(v.parse()?),
                _ => return Err(Error::Config(format!("model line {}: unknown key `{k}`", ln + 1))),
            }
        }
        let mut spec = spec.unwrap_or(ModelSpec {
            name: default_name.to_string(),
            response: Response::Centroids,
            terms: Vec::new(),
            intercept: true,
        });
        spec.terms.extend(extra);
        if let Some(n) = name {
            spec.name = n;
        } else if spec.name.is_empty() {
            spec.name = default_name.to_string();
        }
        if let Some(r) = response {
            spec.response = r;
        }
        if let Some(i) = intercept {
            spec.intercept = i;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        Self::parse(&std::fs::read_to_string(path)?, stem)
    }
}

fn unknown_preset(name: &str) -> Error {
    Error::Config(format!("unknown preset `{name}`; valid presets: {}", PRESETS.join(", ")))
}

/// Named covariate rasters on one common grid.
#[derive(Debug, Clone, Default)]
pub struct Covariates {
    layers: BTreeMap<String, Raster>,
}

impl Covariates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, r: Raster) -> Result<()> {
        if let Some(h) = self.header() {
            h.ensure_aligned(&r.header, name)?;
        }
        self.layers.insert(name.to_string(), r);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Raster> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::Config(format!("covariate `{name}` was not supplied")))
    }

    pub fn header(&self) -> Option<GridHeader> {
        self.layers.values().next().map(|r| r.header)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit1a_matches_formula_table() {
        let s = ModelSpec::preset("fit1a").unwrap();
        assert_eq!(s.response, Response::Centroids);
        assert!(s.intercept);
        let labels: Vec<String> = s.terms.iter().map(Term::label).collect();
        assert_eq!(
            labels,
            [
                "pga:identity:rw2:25",
                "ksn:log1p:linear",
                "landcover:identity:iid",
                "geology:identity:iid"
            ]
        );
    }

    #[test]
    fn fit6b_matches_formula_table() {
        let s = ModelSpec::preset("fit6b").unwrap();
        assert_eq!(s.response, Response::LogSizes);
        let labels: Vec<String> = s.terms.iter().map(Term::label).collect();
        assert_eq!(
            labels,
            ["pga:log:linear", "fd2ch:identity:linear", "landcover:identity:iid", "geology:identity:iid"]
        );
    }

    #[test]
    fn every_preset_resolves_and_unknown_lists_valid_names() {
        for p in PRESETS {
            ModelSpec::preset(p).unwrap().validate().unwrap();
        }
        let s5 = ModelSpec::preset("fit5a").unwrap();
        assert!(s5.terms.iter().any(|t| t.label() == "rf2ch:exp_neg:linear"));
        assert!(s5.terms.iter().any(|t| t.label() == "ksn:log1p:rw2:25"));
        let err = ModelSpec::preset("fit7a").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("fit6b")));
        assert!(ModelSpec::preset("fit1ab").is_err());
    }

    #[test]
    fn config_text() {
        let s = ModelSpec::parse(
            "# custom\nresponse=centroids\nterm=pga:identity:rw2:10\nterm=ksn:log1p:linear\n",
            "custom",
        )
        .unwrap();
        assert_eq!(s.name, "custom");
        assert_eq!(s.terms.len(), 2);
        assert_eq!(s.terms[0].effect, Effect::Rw2 { bins: 10 });
        let p = ModelSpec::parse("preset=fit6a\n", "x").unwrap();
        assert_eq!(p, ModelSpec::preset("fit6a").unwrap());
        assert!(ModelSpec::parse("term=pga:identity:rw2:4", "x").is_err());
        assert!(ModelSpec::parse("foo=1", "x").is_err());
        assert!(ModelSpec::parse("term=pga:cube:linear", "x").is_err());
    }

    #[test]
    fn transforms() {
        assert_eq!(Transform::Log.apply(0.0), None);
        assert_eq!(Transform::Log1p.apply(0.0), Some(0.0));
        assert_eq!(Transform::Sqrt.apply(-1.0), None);
        assert_eq!(Transform::ExpNeg.apply(0.0), Some(1.0));
    }
}
