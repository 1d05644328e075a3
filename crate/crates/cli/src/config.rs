//! Run configuration: a preset, overlaid by a TOML file, overlaid by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ppinn::evaluator::EvaluationConfig;
use ppinn::loss::LossConfig;
use ppinn::model::NetworkConfig;
use ppinn::physics::MaterialParameters;
use ppinn::sampler::SamplingCounts;
use ppinn::trainer::{Schedule, TrainingConfig, DEFAULT_SEED};
use ppinn::Precision;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

/// Material constants; `rho` and `e33` default to the values that make the
/// closed-form standing wave an exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialBlock {
    pub c_e: f64,
    pub eps0: f64,
    pub eps_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e33: Option<f64>,
}

impl Default for MaterialBlock {
    fn default() -> Self {
        MaterialBlock {
            c_e: 1.0,
            eps0: 1.0,
            eps_s: 1.0,
            rho: None,
            e33: None,
        }
    }
}

impl MaterialBlock {
    pub fn resolve(&self) -> Result<MaterialParameters> {
        let derived = MaterialParameters::derive_consistent(self.c_e, self.eps0, self.eps_s)?;
        let mat = MaterialParameters {
            rho: self.rho.unwrap_or(derived.rho),
            e33: self.e33.unwrap_or(derived.e33),
            ..derived
        };
        mat.validate()?;
        Ok(mat)
    }

    fn materialized(&self) -> Result<Self> {
        let m = self.resolve()?;
        Ok(MaterialBlock {
            rho: Some(m.rho),
            e33: Some(m.e33),
            ..*self
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// 32 or 64.
    pub precision: u8,
    pub out_dir: PathBuf,
    pub material: MaterialBlock,
    pub network: NetworkConfig,
    pub sampling: SamplingCounts,
    pub training: Schedule,
    pub loss: LossConfig,
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = RunConfig {
            preset,
            seed: DEFAULT_SEED,
            precision: 32,
            out_dir: PathBuf::from("runs/paper"),
            material: MaterialBlock::default(),
            network: NetworkConfig::PAPER,
            sampling: SamplingCounts::PAPER,
            training: Schedule::PAPER,
            loss: LossConfig::default(),
            evaluation: EvaluationConfig::default(),
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => {
                let desk = TrainingConfig::desk();
                RunConfig {
                    precision: 64,
                    out_dir: PathBuf::from("runs/desk"),
                    network: desk.network,
                    sampling: desk.sampling,
                    training: desk.schedule,
                    ..paper
                }
            }
        }
    }

    pub fn precision(&self) -> Result<Precision> {
        match self.precision {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            p => bail!("precision must be 32 or 64, got {p}"),
        }
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let cfg = TrainingConfig {
            network: self.network,
            sampling: self.sampling,
            loss: self.loss,
            material: self.material.resolve()?,
            schedule: self.training,
            seed: self.seed,
            precision: self.precision()?,
        };
        cfg.validate()?;
        self.evaluation.validate()?;
        Ok(cfg)
    }

    /// Snapshot with every default spelled out.
    pub fn to_resolved_toml(&self) -> Result<String> {
        let mut full = self.clone();
        full.material = self.material.materialized()?;
        Ok(toml::to_string_pretty(&full)?)
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub precision: Option<u8>,
    pub out_dir: Option<PathBuf>,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolves preset, then the file's keys, then flag overrides.
pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
    let (text, origin) = match file {
        Some(p) => (
            std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?,
            p.display().to_string(),
        ),
        None => (String::new(), "<defaults>".to_string()),
    };
    resolve_str(&text, &origin, flags)
}

pub fn resolve_str(text: &str, origin: &str, flags: &Overrides) -> Result<RunConfig> {
    let file: Table = toml::from_str(text).with_context(|| format!("invalid config {origin}"))?;
    let file_preset = match file.get("preset") {
        None => None,
        Some(v) => Some(
            Preset::deserialize(v.clone()).with_context(|| format!("{origin}: field `preset` must be \"paper\" or \"desk\""))?,
        ),
    };
    let preset = flags.preset.or(file_preset).unwrap_or(Preset::Paper);
    let mut table = Table::try_from(RunConfig::preset(preset))?;
    merge(&mut table, file);
    table.insert("preset".into(), Value::String(preset.name().into()));

    // Round-trip through text so schema errors carry a span, then map the
    // offending key back to the user's file.
    let merged = toml::to_string(&table)?;
    let mut cfg: RunConfig = toml::from_str(&merged).map_err(|e| {
        let key = e.span().and_then(|sp| key_at(&merged, sp.start));
        match key {
            Some((header, name)) => {
                let at = line_of(text, &header, &name).map(|l| format!(":{l}")).unwrap_or_default();
                let path = if header.is_empty() { name } else { format!("{header}.{name}") };
                anyhow::anyhow!("{origin}{at}: field `{path}`: {}", e.message())
            }
            None => anyhow::anyhow!("{origin}: {}", e.message()),
        }
    })?;
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(p) = flags.precision {
        cfg.precision = p;
    }
    if let Some(o) = &flags.out_dir {
        cfg.out_dir = o.clone();
    }
    cfg.training_config()
        .with_context(|| format!("{origin}: configuration is inconsistent"))?;
    Ok(cfg)
}

/// Table header and key name of the line containing byte `pos`.
fn key_at(text: &str, pos: usize) -> Option<(String, String)> {
    let mut header = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(h) = trimmed.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            header = h.trim().to_string();
        }
        if pos < offset + line.len() {
            let name = trimmed.split('=').next()?.trim();
            if name.is_empty() || name.starts_with('[') {
                return None;
            }
            return Some((header, name.to_string()));
        }
        offset += line.len();
    }
    None
}

/// 1-based line of `name` under `[header]` in `text`.
fn line_of(text: &str, header: &str, name: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(h) = trimmed.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = h.trim().to_string();
        } else if current == header && trimmed.split('=').next().map(str::trim) == Some(name) {
            return Some(i + 1);
        }
    }
    None
}
