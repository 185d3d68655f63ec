use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use lmsuppress_core::model_editor::{self, write_slice_csv, ApplyOptions, SliceReduction};
use lmsuppress_core::risk_scorer::build_risk_table;
use lmsuppress_core::smoothing::{emit_curve, write_curve_csv};
use lmsuppress_core::text_metrics::{read_ndjson, read_plain, write_docs_csv};
use lmsuppress_core::vocab_scanner::{load_vocabulary_with_specials, scan, ScanReport};
use lmsuppress_core::{
    corpus_report, RiskTable, SmoothingParams, TokenClass, TokenRecord, Vocabulary,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{flag_rule, EffectiveConfig, FileConfig, Overrides};
use crate::{
    Cli, CliError, Command, ReductionArg, RuleArg, SamplingArgs, SmoothingArgs, VocabArgs,
};

fn overrides(
    vocab: Option<&VocabArgs>,
    sampling: Option<&SamplingArgs>,
    smoothing: Option<&SmoothingArgs>,
) -> Overrides {
    let mut o = Overrides::default();
    if let Some(v) = vocab {
        o.model_dir = v.model_dir.clone();
        o.tokenizer = v.tokenizer.clone();
        o.specials = v.specials.clone();
        o.ranges = v.ranges.clone();
    }
    if let Some(s) = sampling {
        o.n_values = s.n_values.clone();
        o.samples_per_n = s.samples_per_n;
        o.seed = s.seed;
        o.partner_pool = s.partner_pool.map(Into::into);
        o.positions = s.positions.map(Into::into);
    }
    if let Some(s) = smoothing {
        o.min_scale = s.min_scale;
        o.smoothness = s.smoothness;
    }
    o
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(format!("stdout: {e}"))),
    }
}

/// CSV to a file, or stdout when no path is given.
fn emit_csv(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    match path {
        Some(p) => write_file(p, &buf),
        None => io::stdout()
            .write_all(&buf)
            .map_err(|e| CliError::io(format!("stdout: {e}"))),
    }
}

fn load_vocab(cfg: &EffectiveConfig) -> Result<Vocabulary, CliError> {
    Ok(load_vocabulary_with_specials(
        cfg.tokenizer_path()?,
        cfg.specials.as_deref(),
    )?)
}

fn smoothing_params(cfg: &EffectiveConfig) -> Result<SmoothingParams, CliError> {
    Ok(SmoothingParams::new(cfg.min_scale, cfg.smoothness)?)
}

#[derive(Serialize)]
struct BrokenStats {
    count: usize,
    scored_positive: usize,
    mean: f64,
    max: f64,
}

fn broken_stats(table: &RiskTable) -> BrokenStats {
    let scores: Vec<f64> = (0..table.len() as u32)
        .filter(|&id| table.class(id) == Some(TokenClass::Broken))
        .filter_map(|id| table.score(id))
        .collect();
    BrokenStats {
        count: scores.len(),
        scored_positive: scores.iter().filter(|&&s| s > 0.0).count(),
        mean: if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        },
        max: scores.iter().copied().fold(0.0, f64::max),
    }
}

fn score_records(records: &[TokenRecord], cfg: &EffectiveConfig) -> Result<RiskTable, CliError> {
    cfg.sampling.validate()?;
    Ok(build_risk_table(records, &cfg.sampling, &cfg.range_set()?)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Scan {
            vocab,
            json_records,
            report,
        } => {
            let mut o = overrides(Some(&vocab), None, None);
            o.report = report;
            o.threads = cli.threads;
            let cfg = EffectiveConfig::resolve(file, o, true)?;
            let ranges = cfg.range_set()?;
            let v = load_vocab(&cfg)?;
            let (records, summary) = scan(&v, &ranges)?;
            if let Some(path) = &json_records {
                let full = ScanReport {
                    ranges: ranges.clone(),
                    summary,
                    records: Some(records),
                };
                write_file(
                    path,
                    serde_json::to_string(&full)
                        .expect("report serializes")
                        .as_bytes(),
                )?;
            }
            emit(
                &json!({"command": "scan", "config": cfg, "summary": summary, "records_file": json_records}),
                cfg.report.as_deref(),
            )
        }

        Command::Score {
            vocab,
            sampling,
            risk_table,
            binary,
            report,
        } => {
            let mut o = overrides(Some(&vocab), Some(&sampling), None);
            o.risk_table = risk_table;
            o.report = report;
            o.threads = cli.threads;
            let cfg = EffectiveConfig::resolve(file, o, false)?;
            let v = load_vocab(&cfg)?;
            let (records, summary) = scan(&v, &cfg.range_set()?)?;
            let table = score_records(&records, &cfg)?;
            if let Some(path) = &cfg.risk_table {
                table.save_json(path)?;
            }
            if let Some(path) = &binary {
                table.save_binary(path)?;
            }
            emit(
                &json!({
                    "command": "score",
                    "config": cfg,
                    "size": table.len(),
                    "digest": table.digest(),
                    "class_counts": table.class_counts(),
                    "scan_summary": summary,
                    "broken": broken_stats(&table),
                    "binary_file": binary,
                }),
                cfg.report.as_deref(),
            )
        }

        Command::Smooth {
            vocab,
            sampling,
            smoothing,
            output_dir,
            risk_table,
            save_risk_table,
            dry_run,
            allow_untie,
            force,
            hard_link,
            report,
        } => {
            let mut o = overrides(Some(&vocab), Some(&sampling), Some(&smoothing));
            o.output_dir = output_dir;
            o.risk_table = risk_table;
            o.dry_run = dry_run;
            o.allow_untie = allow_untie;
            o.report = report;
            o.threads = cli.threads;
            let cfg = EffectiveConfig::resolve(file, o, true)?;
            let params = smoothing_params(&cfg)?;
            let model_dir = cfg.require_model_dir()?.to_path_buf();
            let out_dir: PathBuf = match (&cfg.output_dir, cfg.dry_run) {
                (Some(d), _) => d.clone(),
                // nothing is written in a dry run; any distinct path will do
                (None, true) => model_dir.join("lmsuppress-dry-run"),
                (None, false) => {
                    return Err(CliError::config("no output directory: pass --output <dir>"))
                }
            };
            let v = load_vocab(&cfg)?;
            let ranges = cfg.range_set()?;
            let (records, summary) = scan(&v, &ranges)?;
            let table = match &cfg.risk_table {
                Some(path) => {
                    let t = RiskTable::load_json(path)?;
                    if t.len() != records.len() {
                        return Err(lmsuppress_core::Error::Validation(format!(
                            "risk table {} covers {} ids, vocabulary has {}",
                            path.display(),
                            t.len(),
                            records.len()
                        ))
                        .into());
                    }
                    t
                }
                None => score_records(&records, &cfg)?,
            };
            if let Some(path) = &save_risk_table {
                table.save_json(path)?;
            }
            let mut plan =
                model_editor::plan_for_checkpoint(&model_dir, &table, &params, v.special_ids())?;
            plan.dry_run = cfg.dry_run;
            let opts = ApplyOptions {
                allow_untie: cfg.allow_untie,
                force,
                hard_link,
            };
            let edit = model_editor::apply_edit(&model_dir, &out_dir, &plan, &opts)?;
            emit(
                &json!({"command": "smooth", "config": cfg, "scan_summary": summary, "edit": edit}),
                cfg.report.as_deref(),
            )
        }

        Command::Curve {
            smoothing,
            steps,
            out,
        } => {
            let cfg =
                EffectiveConfig::resolve(file, overrides(None, None, Some(&smoothing)), false)?;
            let points = emit_curve(&smoothing_params(&cfg)?, steps)?;
            emit_csv(out.as_deref(), |w| write_curve_csv(w, &points))?;
            if let Some(path) = &out {
                emit(
                    &json!({"command": "curve", "config": {"min_scale": cfg.min_scale, "smoothness": cfg.smoothness, "steps": steps}, "csv_file": path}),
                    None,
                )?;
            }
            Ok(())
        }

        Command::Slice {
            before,
            after,
            start,
            end,
            reduction,
            risk_table,
            smoothing,
            out,
        } => {
            let mut o = overrides(None, None, Some(&smoothing));
            o.risk_table = risk_table;
            let cfg = EffectiveConfig::resolve(file, o, false)?;
            let params = smoothing_params(&cfg)?;
            let table = cfg
                .risk_table
                .as_ref()
                .map(RiskTable::load_json)
                .transpose()?;
            let reduction = match reduction {
                ReductionArg::RowNorm => SliceReduction::RowNorm,
                ReductionArg::Raw => SliceReduction::Raw,
            };
            let rows = model_editor::export_weight_slice(
                &before,
                after.as_deref(),
                start..end,
                reduction,
                table.as_ref(),
                &params,
            )?;
            emit_csv(out.as_deref(), |w| write_slice_csv(w, &rows, reduction))?;
            if let Some(path) = &out {
                emit(
                    &json!({
                        "command": "slice",
                        "config": {"before": before, "after": after, "start": start, "end": end,
                                   "reduction": reduction, "risk_table": cfg.risk_table,
                                   "min_scale": cfg.min_scale, "smoothness": cfg.smoothness},
                        "rows": rows.len(),
                        "csv_file": path,
                    }),
                    None,
                )?;
            }
            Ok(())
        }

        Command::Metrics {
            input,
            plain,
            ranges,
            rule,
            threshold,
            csv,
            report,
        } => {
            let rule_name = rule.map(|r| match r {
                RuleArg::Any => "any".to_string(),
                RuleArg::Ratio => "ratio".to_string(),
            });
            let flag = flag_rule(rule_name, threshold, &file.metrics)?;
            let o = Overrides {
                ranges,
                report,
                ..Default::default()
            };
            let cfg = EffectiveConfig::resolve(file, o, false)?;
            let range_set = cfg.range_set()?;
            let docs = if input == Path::new("-") {
                let stdin = io::stdin().lock();
                if plain {
                    read_plain(stdin)?
                } else {
                    read_ndjson(stdin)?
                }
            } else {
                let f = fs::File::open(&input)
                    .map_err(|e| CliError::io(format!("{}: {e}", input.display())))?;
                let r = BufReader::new(f);
                if plain {
                    read_plain(r)?
                } else {
                    read_ndjson(r)?
                }
            };
            let result = corpus_report(&docs, &range_set, flag);
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(path) = &csv {
                emit_csv(Some(path), |w| write_docs_csv(w, &result))?;
            }
            emit(
                &json!({
                    "command": "metrics",
                    "config": {"input": input, "plain": plain, "ranges": cfg.ranges, "rule": flag},
                    "report": result,
                }),
                cfg.report.as_deref(),
            )
        }
    }
}
