//! Run configuration: one TOML table per section, every key optional.
//!
//! Unknown keys are rejected, defaults are materialized in the parsed value
//! and every error carries the line it refers to. Environment variables of the
//! form `AGENTPREFS_<SECTION>__<KEY>` (nested tables joined by `__`) override
//! file values.

use serde::{Deserialize, Serialize};

use crate::dqn::{DqnHyperparams, EvalSettings, SweepSettings};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::harness::{BootstrapSettings, CollectionSettings, GridSettings, SearchSettings};
use crate::pipeline::PipelineSettings;
use crate::probe::{AutoencoderHyperparams, Variant};

pub const ENV_PREFIX: &str = "AGENTPREFS_";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Base environment; `penalize_take` is set per variant by the pipeline.
    pub env: EnvConfig,
    pub dqn: DqnHyperparams,
    pub sweep: SweepSettings,
    pub eval: EvalSettings,
    pub collection: CollectionSettings,
    pub search: SearchSettings,
    pub autoencoder: AutoencoderHyperparams,
    pub grid: GridSettings,
    pub bootstrap: BootstrapSettings,
    pub pipeline: PipelineSettings,
}

impl Config {
    /// The environment of one variant.
    pub fn env_for(&self, variant: Variant) -> EnvConfig {
        match variant {
            Variant::Penalized => EnvConfig {
                penalize_take: true,
                ..self.env.clone()
            },
            Variant::NoPenalty => EnvConfig {
                penalize_take: false,
                r_take: 0.0,
                ..self.env.clone()
            },
        }
    }

    /// Every section's invariants, tagged with the section name.
    pub fn validate_sections(&self) -> std::result::Result<(), (&'static str, Error)> {
        let checks: [(&'static str, Result<()>); 9] = [
            ("env", self.env.validate()),
            ("dqn", self.dqn.validate()),
            ("sweep", self.sweep.validate()),
            ("eval", self.eval.validate()),
            ("collection", self.collection.validate()),
            ("search", self.search.validate()),
            ("autoencoder", self.autoencoder.validate()),
            ("grid", self.grid.validate(&self.search)),
            ("bootstrap", self.bootstrap.validate()),
        ];
        for (section, r) in checks {
            r.map_err(|e| (section, e))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_sections().map_err(|(_, e)| e)
    }

    /// A seconds-scale profile that exercises every stage; results are not
    /// meaningful.
    pub fn smoke() -> Self {
        let mut c = Config::default();
        c.dqn.total_steps = 1_500;
        c.dqn.learning_starts = 200;
        c.dqn.replay_capacity = 2_000;
        c.dqn.target_sync = 200;
        c.dqn.epsilon_decay_steps = 1_000;
        c.sweep.learning_rates = vec![1e-3, 2e-3];
        c.sweep.epsilon_decay_steps = vec![800, 1_200];
        c.eval.episodes = 5;
        // barely trained agents rarely anger the human without extra exploration
        c.collection.epsilon = 0.3;
        c.search.n_configs = 2;
        c.search.splits = 2;
        c.search.train_size = 40;
        c.search.eval_size = 40;
        c.search.final_runs = 2;
        c.search.final_eval_size = 60;
        c.search.final_stop_size = 30;
        c.search.space.reduction_k = vec![2, 4];
        c.search.space.hidden = vec![vec![8]];
        c.search.space.conv_channels = vec![vec![4]];
        c.search.space.max_epochs = 3;
        c.search.space.patience = vec![2];
        c.grid.unlabeled_size = crate::probe::autoencoder::MIN_IMAGES;
        c.grid.labeled_size = 200;
        c.grid.image_fit_rows = 100;
        c.grid.nmf_iterations = 10;
        c.grid.autoencoder_inits = 1;
        c.grid.agents_per_cell = 1;
        c.autoencoder.epochs = 1;
        c.autoencoder.decoder_hidden = 32;
        c.autoencoder.bottleneck = 16;
        c.bootstrap.rounds = 2;
        c.bootstrap.retrain_steps = 600;
        c.bootstrap.epsilon_decay_steps = 300;
        c.bootstrap.probe_train_size = 150;
        c.bootstrap.probe_stop_size = 60;
        c.bootstrap.auc_check_size = 150;
        c.bootstrap.min_probe_auc = 0.0;
        c.bootstrap.probe.max_epochs = 3;
        c.pipeline.null_grid = true;
        c.pipeline.bootstrap_probe = true;
        c.pipeline.bootstrap_oracle = true;
        c
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::Format(format!("cannot serialize configuration: {e}")))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Line of the first key in `[section]` named in `message`, else of the
/// section header, else 1.
fn locate(text: &str, section: &str, message: &str) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if let Some((key, _)) = line.split_once('=') {
            let key = key.trim();
            if in_section && !key.is_empty() && message.contains(key) {
                return i + 1;
            }
        }
    }
    header.unwrap_or(1)
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
    Error::Parse {
        line,
        message: e.message().to_string(),
    }
}

/// Parse and validate a configuration file.
pub fn parse_config(text: &str) -> Result<Config> {
    let config: Config = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    config
        .validate_sections()
        .map_err(|(section, e)| Error::Parse {
            line: locate(text, section, &e.to_string()),
            message: format!("[{section}] {e}"),
        })?;
    Ok(config)
}

/// A TOML value from an override string; bare words become strings.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parse `text`, then apply `AGENTPREFS_*` overrides from `vars`, then validate.
pub fn load_config<I>(text: &str, vars: I) -> Result<Config>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut overrides: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    if overrides.is_empty() {
        return parse_config(text);
    }
    // structural errors in the file still get their line
    toml::from_str::<Config>(text).map_err(|e| parse_error(text, e))?;
    let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    overrides.sort();
    for (name, raw) in &overrides {
        let path: Vec<String> = name[ENV_PREFIX.len()..]
            .split("__")
            .map(|p| p.to_ascii_lowercase())
            .collect();
        if path.len() < 2 || path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!(
                "{name}: overrides need the form {ENV_PREFIX}<SECTION>__<KEY>"
            )));
        }
        let mut node = &mut table;
        for part in &path[..path.len() - 1] {
            let entry = node
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{name}: `{part}` is not a section")))?;
        }
        node.insert(path[path.len() - 1].clone(), override_value(raw));
    }
    let names: Vec<&str> = overrides.iter().map(|(k, _)| k.as_str()).collect();
    let config: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| {
            Error::Config(format!(
                "environment override ({}): {}",
                names.join(", "),
                e.message()
            ))
        })?;
    config.validate_sections().map_err(|(section, e)| {
        Error::Config(format!(
            "after environment overrides ({}): [{section}] {e}",
            names.join(", ")
        ))
    })?;
    Ok(config)
}
