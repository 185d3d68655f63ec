//! Config file, environment and flag layering.
//!
//! Precedence: flags (and the env vars clap reads for them) > config file >
//! built-in defaults. Relative paths in the config file resolve against the
//! file's own directory.

use std::fs;
use std::path::{Path, PathBuf};

use lmsuppress_core::risk_scorer::{PartnerPool, Positions, SamplingConfig};
use lmsuppress_core::smoothing::{DEFAULT_MIN_SCALE, DEFAULT_SMOOTHNESS};
use lmsuppress_core::text_metrics::FlagRule;
use lmsuppress_core::{parse_range_spec, UnicodeRangeSet};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_RANGE: &str = "U+4E00-U+9FFF";
pub const ENV_SEED: &str = "LMSUPPRESS_SEED";
pub const ENV_THREADS: &str = "LMSUPPRESS_THREADS";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingFile {
    pub n_values: Option<Vec<usize>>,
    pub samples_per_n: Option<usize>,
    pub seed: Option<u64>,
    pub partner_pool: Option<PartnerPool>,
    pub positions: Option<Positions>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub rule: Option<String>,
    pub threshold: Option<f64>,
}

/// Everything the JSON config file may set. All fields are optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub specials: Option<PathBuf>,
    pub ranges: Option<Vec<String>>,
    pub min_scale: Option<f64>,
    pub smoothness: Option<f64>,
    #[serde(default)]
    pub sampling: SamplingFile,
    pub dry_run: Option<bool>,
    pub allow_untie: Option<bool>,
    pub threads: Option<usize>,
    pub risk_table: Option<PathBuf>,
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub metrics: MetricsFile,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut cfg: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: invalid config: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.model_dir,
            &mut cfg.output_dir,
            &mut cfg.tokenizer,
            &mut cfg.specials,
            &mut cfg.risk_table,
            &mut cfg.report,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// The configuration a command actually ran with; echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specials: Option<PathBuf>,
    pub ranges: Vec<String>,
    pub min_scale: f64,
    pub smoothness: f64,
    pub sampling: SamplingConfig,
    pub dry_run: bool,
    pub allow_untie: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

/// Flag values common to the subcommands; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub specials: Option<PathBuf>,
    pub ranges: Option<Vec<String>>,
    pub min_scale: Option<f64>,
    pub smoothness: Option<f64>,
    pub n_values: Option<Vec<usize>>,
    pub samples_per_n: Option<usize>,
    pub seed: Option<u64>,
    pub partner_pool: Option<PartnerPool>,
    pub positions: Option<Positions>,
    pub dry_run: bool,
    pub allow_untie: bool,
    pub threads: Option<usize>,
    pub risk_table: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl EffectiveConfig {
    /// `ranges_required` makes a missing range list a config error instead
    /// of falling back to the default CJK block.
    pub fn resolve(
        file: FileConfig,
        o: Overrides,
        ranges_required: bool,
    ) -> Result<Self, CliError> {
        let ranges = match o.ranges.or(file.ranges) {
            Some(r) if !r.is_empty() => r,
            _ if ranges_required => {
                return Err(CliError::config(
                    "no Unicode ranges given: pass --ranges (e.g. --ranges U+4E00-U+9FFF) or set \"ranges\" in --config",
                ))
            }
            _ => vec![DEFAULT_RANGE.to_string()],
        };
        let defaults = SamplingConfig::default();
        let s = file.sampling;
        let sampling = SamplingConfig {
            n_values: o.n_values.or(s.n_values).unwrap_or(defaults.n_values),
            samples_per_n: o
                .samples_per_n
                .or(s.samples_per_n)
                .unwrap_or(defaults.samples_per_n),
            seed: o.seed.or(s.seed).unwrap_or(defaults.seed),
            partner_pool: o
                .partner_pool
                .or(s.partner_pool)
                .unwrap_or(defaults.partner_pool),
            positions: o.positions.or(s.positions).unwrap_or(defaults.positions),
        };
        Ok(EffectiveConfig {
            model_dir: o.model_dir.or(file.model_dir),
            output_dir: o.output_dir.or(file.output_dir),
            tokenizer: o.tokenizer.or(file.tokenizer),
            specials: o.specials.or(file.specials),
            ranges,
            min_scale: o.min_scale.or(file.min_scale).unwrap_or(DEFAULT_MIN_SCALE),
            smoothness: o
                .smoothness
                .or(file.smoothness)
                .unwrap_or(DEFAULT_SMOOTHNESS),
            sampling,
            dry_run: o.dry_run || file.dry_run.unwrap_or(false),
            allow_untie: o.allow_untie || file.allow_untie.unwrap_or(false),
            threads: o.threads.or(file.threads),
            risk_table: o.risk_table.or(file.risk_table),
            report: o.report.or(file.report),
        })
    }

    pub fn range_set(&self) -> Result<UnicodeRangeSet, CliError> {
        Ok(parse_range_spec(&self.ranges)?)
    }

    pub fn tokenizer_path(&self) -> Result<PathBuf, CliError> {
        match (&self.tokenizer, &self.model_dir) {
            (Some(t), _) => Ok(t.clone()),
            (None, Some(m)) => Ok(m.join("tokenizer.json")),
            (None, None) => Err(CliError::config(
                "no tokenizer: pass --model <dir> or --tokenizer <file>",
            )),
        }
    }

    pub fn require_model_dir(&self) -> Result<&Path, CliError> {
        self.model_dir.as_deref().ok_or_else(|| {
            CliError::config(
                "no model directory: pass --model <dir> or set \"model_dir\" in --config",
            )
        })
    }
}

pub fn flag_rule(
    rule: Option<String>,
    threshold: Option<f64>,
    file: &MetricsFile,
) -> Result<FlagRule, CliError> {
    let rule = rule
        .or_else(|| file.rule.clone())
        .unwrap_or_else(|| "any".to_string());
    let threshold = threshold.or(file.threshold);
    match rule.as_str() {
        "any" | "any_target_char" => Ok(FlagRule::AnyTargetChar),
        "ratio" | "ratio_above" => {
            let t =
                threshold.ok_or_else(|| CliError::config("rule \"ratio\" needs --threshold"))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::config(format!(
                    "threshold must be in [0, 1], got {t}"
                )));
            }
            Ok(FlagRule::RatioAbove(t))
        }
        other => Err(CliError::config(format!(
            "unknown flag rule {other:?}; expected \"any\" or \"ratio\""
        ))),
    }
}
