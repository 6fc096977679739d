//! Layered run configuration: built-in defaults, overridden by a
//! key=value config file, overridden by `SONOTRACK_*` environment
//! variables, overridden by command-line flags. Every artifact-producing
//! run writes the fully resolved configuration next to its output so a
//! run can be reproduced from the file alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sonotrack::config::Constants;
use sonotrack::error::{Error, Result};
use sonotrack::nn::network::{default_profile, format_profile, parse_profile};
use sonotrack::similarity::loss::LogisticWeighting;
use sonotrack::similarity::xcorr::XcorrPath;
use sonotrack::train::{LossKind, SigmaLossGrid, TrainConfig};

pub const ENV_PREFIX: &str = "SONOTRACK_";

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn defaults() -> BTreeMap<String, String> {
    let c = Constants::default();
    let t = TrainConfig::default();
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("spacing_mm_per_px", c.spacing_mm_per_px.to_string());
    put("sigma_loss_mm", c.sigma_loss_mm.to_string());
    put("sigma_prior_mm", c.sigma_prior_mm.to_string());
    put("k", c.k.to_string());
    put("tau", c.tau.to_string());
    put("d_max_mm", c.d_max_mm.to_string());
    put("template_size", c.template_size.to_string());
    put("search_size", c.search_size.to_string());
    put("train_search_size", t.search_size.to_string());
    put("lr", t.lr.to_string());
    put("epochs", t.epochs.to_string());
    put("batch_size", t.batch_size.to_string());
    put("pairs_per_epoch", t.pairs_per_epoch.to_string());
    put("val_pairs", t.val_pairs.to_string());
    put("seed", t.seed.to_string());
    put("loss", "l2".to_string());
    put("sigma_loss_grid", "image".to_string());
    put("net_profile", format_profile(&default_profile()));
    put("checkpoint_every", t.checkpoint_every.to_string());
    put("logistic_radius_px", t.logistic_radius_px.to_string());
    put("logistic_weighting", "balanced".to_string());
    put("xcorr", "auto".to_string());
    m
}

impl RunConfig {
    /// Resolve defaults -> file -> environment. Flag overrides are
    /// applied afterwards through [`RunConfig::set`].
    pub fn resolve(config_file: Option<&Path>) -> Result<RunConfig> {
        let mut values = defaults();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::usage(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let key = k.trim();
                if !values.contains_key(key) {
                    return Err(Error::usage(format!(
                        "{}:{}: unknown configuration key {key:?}",
                        path.display(),
                        lineno + 1
                    )));
                }
                values.insert(key.to_string(), v.trim().to_string());
            }
        }
        let keys: Vec<String> = values.keys().cloned().collect();
        for key in keys {
            let env_key = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(v) = std::env::var(&env_key) {
                values.insert(key, v);
            }
        }
        Ok(RunConfig { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(self.values.contains_key(key), "unknown config key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::usage(format!("configuration {key}={:?} is not a number", self.get(key))))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| Error::usage(format!("configuration {key}={:?} is not an integer", self.get(key))))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::usage(format!("configuration {key}={:?} is not an integer", self.get(key))))
    }

    pub fn constants(&self) -> Result<Constants> {
        Ok(Constants {
            spacing_mm_per_px: self.get_f64("spacing_mm_per_px")?,
            sigma_loss_mm: self.get_f64("sigma_loss_mm")?,
            sigma_prior_mm: self.get_f64("sigma_prior_mm")?,
            k: self.get_f64("k")?,
            tau: self.get_f64("tau")?,
            d_max_mm: self.get_f64("d_max_mm")?,
            template_size: self.get_usize("template_size")?,
            search_size: self.get_usize("search_size")?,
        })
    }

    pub fn xcorr_path(&self) -> Result<XcorrPath> {
        match self.get("xcorr") {
            "auto" => Ok(XcorrPath::Auto),
            "direct" => Ok(XcorrPath::Direct),
            "fft" => Ok(XcorrPath::Fft),
            other => Err(Error::usage(format!(
                "xcorr must be auto, direct or fft, got {other:?}"
            ))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let loss = match self.get("loss") {
            "l2" => LossKind::L2,
            "logistic" => LossKind::Logistic,
            other => return Err(Error::usage(format!("loss must be l2 or logistic, got {other:?}"))),
        };
        let sigma_loss_grid = match self.get("sigma_loss_grid") {
            "image" => SigmaLossGrid::Image,
            "map" => SigmaLossGrid::Map,
            other => {
                return Err(Error::usage(format!(
                    "sigma_loss_grid must be image or map, got {other:?}"
                )))
            }
        };
        let logistic_weighting = match self.get("logistic_weighting") {
            "none" => LogisticWeighting::None,
            "balanced" => LogisticWeighting::ClassBalanced,
            other => {
                return Err(Error::usage(format!(
                    "logistic_weighting must be none or balanced, got {other:?}"
                )))
            }
        };
        Ok(TrainConfig {
            profile: parse_profile(self.get("net_profile"))?,
            batch_size: self.get_usize("batch_size")?,
            lr: self.get_f64("lr")?,
            epochs: self.get_usize("epochs")?,
            sigma_loss_mm: self.get_f64("sigma_loss_mm")?,
            sigma_loss_grid,
            spacing_mm_per_px: self.get_f64("spacing_mm_per_px")?,
            seed: self.get_u64("seed")?,
            checkpoint_every: self.get_usize("checkpoint_every")?,
            loss,
            pairs_per_epoch: self.get_usize("pairs_per_epoch")?,
            val_pairs: self.get_usize("val_pairs")?,
            template_size: self.get_usize("template_size")?,
            search_size: self.get_usize("train_search_size")?,
            logistic_radius_px: self.get_f64("logistic_radius_px")?,
            logistic_weighting,
            ..TrainConfig::default()
        })
    }

    /// The fully resolved configuration as sorted `key=value` text.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Write the resolved config beside an artifact: into
    /// `resolved_config.txt` for directory artifacts, `<file>.config.txt`
    /// for file artifacts.
    pub fn write_beside(&self, artifact: &Path) -> Result<()> {
        let target: PathBuf = if artifact.is_dir() {
            artifact.join("resolved_config.txt")
        } else {
            let mut name = artifact
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "artifact".to_string());
            name.push_str(".config.txt");
            artifact.with_file_name(name)
        };
        std::fs::write(&target, self.resolved_text()).map_err(|e| Error::io(&target, e))
    }
}
