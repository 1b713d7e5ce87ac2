//! Flat `key=value` pipeline configuration.
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use slidescape::model::{ModelSpec, PRESETS};
use slidescape::steepness::KsnParams;
use slidescape::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dem: PathBuf,
    pub pga: Option<PathBuf>,
    pub landcover: Option<PathBuf>,
    pub geology: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub glacial_mask: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub threshold_pixels: u64,
    pub theta: f64,
    pub window_nodes: usize,
    pub target_tri_area: f64,
    pub grid_size: f64,
    pub n_samples: usize,
    pub cv_map_samples: usize,
    pub split_seed: u64,
    pub sample_seed: u64,
    pub sim_seed: u64,
    /// Preset names or model file paths.
    pub models: Vec<String>,
    pub sweep_thetas: Vec<f64>,
    pub sweep_thresholds: Vec<u64>,
    base: PathBuf,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = PipelineConfig {
            dem: PathBuf::new(),
            pga: None,
            landcover: None,
            geology: None,
            points: None,
            glacial_mask: None,
            output_dir: base.join("output"),
            threshold_pixels: 1000,
            theta: 0.5,
            window_nodes: 9,
            target_tri_area: slidescape::mesh::DEFAULT_TRI_AREA,
            grid_size: 3000.0,
            n_samples: 1000,
            cv_map_samples: 100,
            split_seed: 1,
            sample_seed: 2,
            sim_seed: 3,
            models: PRESETS.iter().map(|s| s.to_string()).collect(),
            sweep_thetas: vec![0.4, 0.45, 0.5, 0.55, 0.6],
            sweep_thresholds: vec![1000],
            base: base.to_path_buf(),
        };
        let mut have_dem = false;
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let path = || base.join(v);
            match k {
                "dem" => {
                    c.dem = path();
                    have_dem = true;
                }
                "pga" => c.pga = Some(path()),
                "landcover" => c.landcover = Some(path()),
                "geology" => c.geology = Some(path()),
                "points" => c.points = Some(path()),
                "glacial_mask" => c.glacial_mask = Some(path()),
                "output_dir" => c.output_dir = path(),
                "threshold_pixels" => c.threshold_pixels = parse_num(k, v)?,
                "theta" => c.theta = parse_num(k, v)?,
                "window_nodes" => c.window_nodes = parse_num(k, v)?,
                "target_tri_area" => c.target_tri_area = parse_num(k, v)?,
                "grid_size" => c.grid_size = parse_num(k, v)?,
                "n_samples" => c.n_samples = parse_num(k, v)?,
                "cv_map_samples" => c.cv_map_samples = parse_num(k, v)?,
                "split_seed" => c.split_seed = parse_num(k, v)?,
                "sample_seed" => c.sample_seed = parse_num(k, v)?,
                "sim_seed" => c.sim_seed = parse_num(k, v)?,
                "models" => c.models = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                "sweep_thetas" => c.sweep_thetas = parse_list(k, v)?,
                "sweep_thresholds" => c.sweep_thresholds = parse_list(k, v)?,
                _ => return Err(Error::Config(format!("config line {}: unknown key `{k}`", ln + 1))),
            }
        }
        if !have_dem {
            return Err(Error::Config("config must set `dem`".into()));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    fn validate(&self) -> Result<()> {
        let inputs = [
            ("dem", Some(&self.dem)),
            ("pga", self.pga.as_ref()),
            ("landcover", self.landcover.as_ref()),
            ("geology", self.geology.as_ref()),
            ("points", self.points.as_ref()),
            ("glacial_mask", self.glacial_mask.as_ref()),
        ];
        for (key, p) in inputs {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("`{key}` file not found: {}", p.display())));
                }
            }
        }
        self.ksn_params().validate()?;
        if !(self.target_tri_area > 0.0) {
            return Err(Error::Config("target_tri_area must be positive".into()));
        }
        if !(self.grid_size > 0.0) {
            return Err(Error::Config("grid_size must be positive".into()));
        }
        if self.n_samples == 0 || self.cv_map_samples == 0 {
            return Err(Error::Config("n_samples and cv_map_samples must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("`models` is empty".into()));
        }
        self.model_specs()?;
        Ok(())
    }

    pub fn ksn_params(&self) -> KsnParams {
        KsnParams { theta: self.theta, window_nodes: self.window_nodes, threshold_pixels: self.threshold_pixels }
    }

    /// Resolve each entry of `models` as a preset name or a model file.
    pub fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        self.models
            .iter()
            .map(|m| {
                if PRESETS.contains(&m.as_str()) {
                    ModelSpec::preset(m)
                } else if m.contains('/') || m.contains('.') {
                    let p = self.base.join(m);
                    if !p.is_file() {
                        return Err(Error::Config(format!("model file not found: {}", p.display())));
                    }
                    ModelSpec::read(p)
                } else {
                    ModelSpec::preset(m)
                }
            })
            .collect()
    }
}
