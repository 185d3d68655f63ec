//! Planning and applying the output-head edit.
//!
//! Every row with a positive risk score (Special tokens excluded) is scaled
//! by `S = scale_factor(risk)`: widened to f64, multiplied, and rounded
//! back to the storage dtype. The result is written to a fresh directory;
//! every other file is copied and verified byte for byte. A provenance
//! sidecar records the parameters so an edited checkpoint is not edited twice
//! by accident.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::risk_scorer::RiskTable;
use crate::smoothing::{scale_factor, SmoothingParams};
use crate::tensor_store::{
    load_model_config, read_container, resolve_in, Checkpoint, Dtype, HeadLocation, Layout,
    NamedTensor, CONFIG_FILE, HEAD_CANDIDATES, INDEX_FILE,
};
use crate::vocab_scanner::TokenClass;

/// Sidecar written next to every edited checkpoint.
pub const PROVENANCE_FILE: &str = "edit_provenance.json";
pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRow {
    pub id: u32,
    pub risk: f64,
    pub scale: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class: Option<TokenClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub head_tensor: String,
    pub head_rows: usize,
    pub rows_to_scale: Vec<PlannedRow>,
    pub untouched_row_count: usize,
    pub params: SmoothingParams,
    pub dry_run: bool,
    pub risk_table_digest: String,
    pub vocab_class_counts: BTreeMap<TokenClass, usize>,
}

/// Lists the rows to scale: every id with risk > 0 that is not special.
///
/// Rows whose scale factor rounds to exactly 1 (possible only for
/// `min_scale = 1` or vanishing risk) are left out, since scaling them is a
/// no-op.
pub fn plan_edit(
    risk_table: &RiskTable,
    params: &SmoothingParams,
    head_tensor: &str,
    head_shape: &[usize],
    specials: &BTreeSet<u32>,
) -> Result<EditPlan> {
    let head_rows = match head_shape {
        [rows, _] => *rows,
        other => {
            return Err(Error::Shape(format!(
                "head tensor {head_tensor:?} must be 2-D [vocab, hidden], got {other:?}"
            )))
        }
    };
    if risk_table.is_empty() {
        return Err(Error::Validation("risk table is empty".into()));
    }
    if head_rows < risk_table.len() {
        return Err(Error::Shape(format!(
            "head tensor {head_tensor:?} has {head_rows} rows but the vocabulary needs {}",
            risk_table.len()
        )));
    }
    let mut rows = Vec::new();
    for (id, &risk) in risk_table.scores().iter().enumerate() {
        let id = id as u32;
        if !(0.0..=1.0).contains(&risk) {
            return Err(Error::Validation(format!(
                "risk score {risk} for id {id} outside [0, 1]"
            )));
        }
        if risk <= 0.0
            || specials.contains(&id)
            || risk_table.class(id) == Some(TokenClass::Special)
        {
            continue;
        }
        let scale = scale_factor(risk, params)?;
        if scale < 1.0 {
            rows.push(PlannedRow {
                id,
                risk,
                scale,
                class: risk_table.class(id),
            });
        }
    }
    Ok(EditPlan {
        head_tensor: head_tensor.to_string(),
        head_rows,
        untouched_row_count: head_rows - rows.len(),
        rows_to_scale: rows,
        params: *params,
        dry_run: false,
        risk_table_digest: risk_table.digest(),
        vocab_class_counts: risk_table.class_counts(),
    })
}

/// Resolves the head in `model_dir` and plans against its declared shape.
pub fn plan_for_checkpoint(
    model_dir: &Path,
    risk_table: &RiskTable,
    params: &SmoothingParams,
    specials: &BTreeSet<u32>,
) -> Result<EditPlan> {
    let config = load_model_config(model_dir)?;
    let checkpoint = Checkpoint::open(model_dir)?;
    let head = resolve_in(&checkpoint, &config)?;
    let meta = checkpoint.tensor_meta(&head.tensor)?;
    plan_edit(risk_table, params, &head.tensor, &meta.shape, specials)
}

#[derive(Debug, Clone, Default)]
pub struct ApplyOptions {
    /// Write a separate head tensor when the head is tied to the embedding.
    pub allow_untie: bool,
    /// Edit even if the input already carries a provenance marker, and write
    /// into a non-empty output directory.
    pub force: bool,
    /// Hard-link untouched files instead of copying them.
    pub hard_link: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightChange {
    pub min_abs: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub head_tensor: String,
    pub output_head_tensor: String,
    pub head_dtype: Dtype,
    pub head_shape: Vec<usize>,
    pub tied: bool,
    pub untied: bool,
    pub dry_run: bool,
    pub scaled_row_count: usize,
    pub untouched_row_count: usize,
    pub vocab_class_counts: BTreeMap<TokenClass, usize>,
    pub scaled_class_counts: BTreeMap<String, usize>,
    pub scale_histogram: Vec<HistogramBin>,
    pub weight_change: WeightChange,
    pub params: SmoothingParams,
    pub risk_table_digest: String,
    pub input_digest: String,
    pub output_digest: String,
    pub files_written: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub tool: String,
    pub version: String,
    pub params: SmoothingParams,
    pub risk_table_digest: String,
    pub head_tensor: String,
    pub scaled_row_count: usize,
    pub input_digest: String,
    pub output_digest: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    use std::io::Read;
    let mut hasher = Sha256::new();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest over `name:file-digest` lines of every container file, sorted by name.
fn checkpoint_digest(files: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (name, digest) in files {
        hasher.update(name.as_bytes());
        hasher.update(b":");
        hasher.update(digest.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

fn scale_histogram(plan: &EditPlan) -> Vec<HistogramBin> {
    let lo = plan.params.min_scale();
    let width = (1.0 - lo) / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == HISTOGRAM_BINS {
                1.0
            } else {
                lo + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    if width <= 0.0 {
        return bins;
    }
    for row in &plan.rows_to_scale {
        let idx = (((row.scale - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx].count += 1;
    }
    bins
}

/// Scales the planned rows of a 2-D tensor in place. Returns the elementwise
/// absolute change statistics.
pub fn scale_rows(tensor: &mut NamedTensor, plan: &EditPlan) -> Result<WeightChange> {
    let stride = tensor
        .row_stride()
        .ok_or_else(|| Error::Shape(format!("tensor {:?} is not 2-D", tensor.name)))?;
    let rows = tensor.shape[0];
    let mut row_scale: Vec<Option<f64>> = vec![None; rows];
    for r in &plan.rows_to_scale {
        let slot = row_scale
            .get_mut(r.id as usize)
            .ok_or_else(|| Error::Shape(format!("planned row {} beyond {rows} head rows", r.id)))?;
        *slot = Some(r.scale);
    }
    let dtype = tensor.dtype;
    if stride == 0 {
        return Ok(WeightChange::default());
    }
    let (min, max, sum, count) = tensor
        .data
        .par_chunks_mut(stride)
        .zip(row_scale.par_iter())
        .filter_map(|(row, scale)| scale.map(|s| (row, s)))
        .map(|(row, s)| {
            let before = dtype.decode(row);
            let after: Vec<f64> = before.iter().map(|&w| s * w).collect();
            dtype.encode_into(&after, row);
            let rounded = dtype.decode(row);
            before.iter().zip(&rounded).fold(
                (f64::INFINITY, 0.0f64, 0.0f64, 0usize),
                |(mn, mx, sum, n), (b, a)| {
                    let d = (a - b).abs();
                    (mn.min(d), mx.max(d), sum + d, n + 1)
                },
            )
        })
        .reduce(
            || (f64::INFINITY, 0.0, 0.0, 0),
            |a, b| (a.0.min(b.0), a.1.max(b.1), a.2 + b.2, a.3 + b.3),
        );
    Ok(if count == 0 {
        WeightChange::default()
    } else {
        WeightChange {
            min_abs: min,
            max_abs: max,
            mean_abs: sum / count as f64,
        }
    })
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn list_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let dir = root.join(rel);
    let mut entries: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        let rel_path = rel.join(entry.file_name());
        if ty.is_dir() {
            list_files(root, &rel_path, out)?;
        } else if ty.is_file() {
            out.push(rel_path);
        }
    }
    Ok(())
}

/// Applies `plan` to the checkpoint in `model_dir`, writing the result to
/// `out_dir` (or only computing the report when `plan.dry_run`).
pub fn apply_edit(
    model_dir: &Path,
    out_dir: &Path,
    plan: &EditPlan,
    opts: &ApplyOptions,
) -> Result<EditReport> {
    if same_dir(model_dir, out_dir) {
        return Err(Error::SameDirectory(out_dir.to_path_buf()));
    }
    let marker = model_dir.join(PROVENANCE_FILE);
    if marker.exists() && !opts.force {
        return Err(Error::AlreadyEdited { marker });
    }

    let mut config = load_model_config(model_dir)?;
    let checkpoint = Checkpoint::open(model_dir)?;
    let head: HeadLocation = resolve_in(&checkpoint, &config)?;
    if head.tensor != plan.head_tensor {
        return Err(Error::Validation(format!(
            "plan targets {:?} but the checkpoint head is {:?}",
            plan.head_tensor, head.tensor
        )));
    }
    if head.tied && !opts.allow_untie {
        return Err(Error::TiedEmbeddings {
            tensor: head.tensor,
        });
    }

    let head_path = model_dir.join(&head.shard_file);
    let mut container = read_container(&head_path)?;
    let original = container.get(&head.tensor).cloned().ok_or_else(|| {
        Error::Validation(format!(
            "{} does not contain {:?}",
            head.shard_file, head.tensor
        ))
    })?;
    let (rows, _) = match original.shape.as_slice() {
        [r, c] => (*r, *c),
        other => {
            return Err(Error::Shape(format!(
                "head tensor must be 2-D, got {other:?}"
            )))
        }
    };
    if rows != plan.head_rows {
        return Err(Error::Shape(format!(
            "plan expects {} head rows, tensor has {rows}",
            plan.head_rows
        )));
    }
    if let Some(vocab) = config.vocab_size() {
        if vocab != rows {
            return Err(Error::Shape(format!(
                "head tensor {:?} has {rows} rows but config vocab_size is {vocab}; expected [vocab, hidden] layout",
                head.tensor
            )));
        }
    }

    let mut edited = original.clone();
    let output_head_tensor = if head.tied {
        let name = HEAD_CANDIDATES[0].to_string();
        if checkpoint.contains(&name) {
            return Err(Error::Validation(format!(
                "cannot untie: {name:?} already exists"
            )));
        }
        edited.name = name.clone();
        name
    } else {
        head.tensor.clone()
    };
    let weight_change = scale_rows(&mut edited, plan)?;

    if head.tied {
        container.tensors.push(edited);
    } else {
        *container.get_mut(&head.tensor).expect("present") = edited;
    }
    let head_bytes = container.to_bytes().map_err(|source| Error::Container {
        path: head_path.clone(),
        source,
    })?;

    // input digests, and the output digests implied by the edit
    let mut input_files = BTreeMap::new();
    for file in checkpoint.container_files() {
        input_files.insert(file.clone(), file_digest(&model_dir.join(&file))?);
    }
    let mut output_files = input_files.clone();
    output_files.insert(head.shard_file.clone(), sha256_hex(&head_bytes));

    let mut replaced: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    replaced.insert(PathBuf::from(&head.shard_file), head_bytes);
    if head.tied {
        config.set_tie_word_embeddings(false);
        replaced.insert(
            PathBuf::from(CONFIG_FILE),
            serde_json::to_vec_pretty(config.as_value()).expect("config serializes"),
        );
        if let Layout::Sharded(index) = checkpoint.layout() {
            let mut index = index.clone();
            index
                .weight_map
                .insert(output_head_tensor.clone(), head.shard_file.clone());
            replaced.insert(
                PathBuf::from(INDEX_FILE),
                serde_json::to_vec_pretty(&index).expect("index serializes"),
            );
        }
    }

    let mut scaled_class_counts = BTreeMap::new();
    for row in &plan.rows_to_scale {
        let key = row.class.map_or("unknown", TokenClass::as_str).to_string();
        *scaled_class_counts.entry(key).or_insert(0) += 1;
    }
    let mut report = EditReport {
        head_tensor: head.tensor.clone(),
        output_head_tensor,
        head_dtype: original.dtype,
        head_shape: original.shape.clone(),
        tied: head.tied,
        untied: head.tied,
        dry_run: plan.dry_run,
        scaled_row_count: plan.rows_to_scale.len(),
        untouched_row_count: plan.untouched_row_count,
        vocab_class_counts: plan.vocab_class_counts.clone(),
        scaled_class_counts,
        scale_histogram: scale_histogram(plan),
        weight_change,
        params: plan.params,
        risk_table_digest: plan.risk_table_digest.clone(),
        input_digest: checkpoint_digest(&input_files),
        output_digest: checkpoint_digest(&output_files),
        files_written: Vec::new(),
    };
    if plan.dry_run {
        return Ok(report);
    }

    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .map_err(|e| Error::io(out_dir, e))?
            .next()
            .is_some();
        if non_empty && !opts.force {
            return Err(Error::Validation(format!(
                "output directory {} is not empty",
                out_dir.display()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut files = Vec::new();
    list_files(model_dir, Path::new(""), &mut files)?;
    for rel in files {
        if rel == Path::new(PROVENANCE_FILE) || replaced.contains_key(&rel) {
            continue;
        }
        let src = model_dir.join(&rel);
        let dst = out_dir.join(&rel);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        if dst.exists() {
            fs::remove_file(&dst).map_err(|e| Error::io(&dst, e))?;
        }
        let linked = opts.hard_link && fs::hard_link(&src, &dst).is_ok();
        if !linked {
            fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
        }
        let name = rel.to_string_lossy().into_owned();
        if let Some(expected) = input_files.get(&name) {
            if &file_digest(&dst)? != expected {
                return Err(Error::Integrity { path: dst });
            }
        }
        report.files_written.push(name);
    }
    for (rel, bytes) in &replaced {
        let dst = out_dir.join(rel);
        fs::write(&dst, bytes).map_err(|e| Error::io(&dst, e))?;
        report
            .files_written
            .push(rel.to_string_lossy().into_owned());
    }

    let record = ProvenanceRecord {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        params: plan.params,
        risk_table_digest: plan.risk_table_digest.clone(),
        head_tensor: report.output_head_tensor.clone(),
        scaled_row_count: report.scaled_row_count,
        input_digest: report.input_digest.clone(),
        output_digest: report.output_digest.clone(),
    };
    let marker_out = out_dir.join(PROVENANCE_FILE);
    let mut f = fs::File::create(&marker_out).map_err(|e| Error::io(&marker_out, e))?;
    serde_json::to_writer_pretty(&mut f, &record)
        .map_err(|e| Error::io(&marker_out, std::io::Error::other(e)))?;
    f.write_all(b"\n").map_err(|e| Error::io(&marker_out, e))?;
    report.files_written.push(PROVENANCE_FILE.to_string());
    report.files_written.sort();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceReduction {
    RowNorm,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceRow {
    pub token_id: u32,
    pub class: Option<TokenClass>,
    pub risk: Option<f64>,
    pub scale: Option<f64>,
    pub before: Vec<f64>,
    pub after: Option<Vec<f64>>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn load_head(model_dir: &Path) -> Result<NamedTensor> {
    let config = load_model_config(model_dir)?;
    let checkpoint = Checkpoint::open(model_dir)?;
    let head = resolve_in(&checkpoint, &config)?;
    let tensor = checkpoint.read_tensor(&head.tensor)?;
    if tensor.shape.len() != 2 {
        return Err(Error::Shape(format!(
            "head tensor must be 2-D, got {:?}",
            tensor.shape
        )));
    }
    Ok(tensor)
}

/// Per-token rows of the head over `ids`, from `before_dir` and optionally
/// `after_dir`. With `RowNorm` each row carries its L2 norm; with `Raw`, its
/// widened elements.
pub fn export_weight_slice(
    before_dir: &Path,
    after_dir: Option<&Path>,
    ids: Range<u32>,
    reduction: SliceReduction,
    risk: Option<&RiskTable>,
    params: &SmoothingParams,
) -> Result<Vec<SliceRow>> {
    let before = load_head(before_dir)?;
    let after = after_dir.map(load_head).transpose()?;
    let rows = before.shape[0];
    if ids.start > ids.end || ids.end as usize > rows {
        return Err(Error::Validation(format!(
            "token range {}..{} outside head rows 0..{rows}",
            ids.start, ids.end
        )));
    }
    if let Some(a) = &after {
        if a.shape != before.shape {
            return Err(Error::Shape(format!(
                "head shapes differ: {:?} vs {:?}",
                before.shape, a.shape
            )));
        }
    }
    let reduce = |v: Vec<f64>| match reduction {
        SliceReduction::RowNorm => vec![l2(&v)],
        SliceReduction::Raw => v,
    };
    ids.map(|id| {
        let row = id as usize;
        let score = risk.and_then(|t| t.score(id));
        let scale = match score {
            Some(r) if r > 0.0 => Some(scale_factor(r, params)?),
            Some(_) => Some(1.0),
            None => None,
        };
        Ok(SliceRow {
            token_id: id,
            class: risk.and_then(|t| t.class(id)),
            risk: score,
            scale,
            before: reduce(
                before
                    .dtype
                    .decode(before.row_bytes(row).expect("in range")),
            ),
            after: after
                .as_ref()
                .map(|a| reduce(a.dtype.decode(a.row_bytes(row).expect("in range")))),
        })
    })
    .collect()
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `token_id,class,risk,scale,stat_before,stat_after` for row norms,
/// or `token_id,class,risk,scale,dim,value_before,value_after` for raw rows.
pub fn write_slice_csv<W: Write>(
    mut out: W,
    rows: &[SliceRow],
    reduction: SliceReduction,
) -> std::io::Result<()> {
    match reduction {
        SliceReduction::RowNorm => {
            writeln!(out, "token_id,class,risk,scale,stat_before,stat_after")?
        }
        SliceReduction::Raw => writeln!(
            out,
            "token_id,class,risk,scale,dim,value_before,value_after"
        )?,
    }
    for r in rows {
        let prefix = format!(
            "{},{},{},{}",
            r.token_id,
            opt(r.class),
            opt(r.risk),
            opt(r.scale)
        );
        match reduction {
            SliceReduction::RowNorm => {
                let after = r.after.as_ref().map(|a| a[0]);
                writeln!(out, "{prefix},{},{}", r.before[0], opt(after))?;
            }
            SliceReduction::Raw => {
                for (dim, b) in r.before.iter().enumerate() {
                    let after = r.after.as_ref().map(|a| a[dim]);
                    writeln!(out, "{prefix},{dim},{b},{}", opt(after))?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, write_fixture_checkpoint, FixtureOptions};
    use crate::risk_scorer::{build_risk_table, SamplingConfig};
    use crate::tensor_store::{read_container, SINGLE_FILE};
    use crate::unicode_ranges::UnicodeRangeSet;
    use crate::vocab_scanner::{scan, Vocabulary};

    fn fixture_table() -> (Vocabulary, RiskTable) {
        let v = fixtures::synthetic_vocab_64();
        let (records, _) = scan(&v, &UnicodeRangeSet::cjk_unified()).unwrap();
        let table = build_risk_table(
            &records,
            &SamplingConfig::default(),
            &UnicodeRangeSet::cjk_unified(),
        )
        .unwrap();
        (v, table)
    }

    fn table_from_scores(scores: &[(u32, f64)], len: usize) -> RiskTable {
        let mut entries = serde_json::Map::new();
        for &(id, s) in scores {
            entries.insert(
                id.to_string(),
                serde_json::json!({"score": s, "provenance": "fixed"}),
            );
        }
        RiskTable::from_json(serde_json::json!({
            "config": SamplingConfig::default(),
            "ranges": ["U+4E00-U+9FFF"],
            "size": len,
            "entries": entries,
        }))
        .unwrap()
    }

    #[test]
    fn all_safe_plan_is_empty() {
        let t = table_from_scores(&[], 10);
        let plan = plan_edit(
            &t,
            &SmoothingParams::default(),
            "lm_head.weight",
            &[10, 4],
            &BTreeSet::new(),
        )
        .unwrap();
        assert!(plan.rows_to_scale.is_empty());
        assert_eq!(plan.untouched_row_count, 10);
    }

    #[test]
    fn broken_row_at_twelve_percent() {
        let t = table_from_scores(&[(3, 0.12)], 8);
        let plan = plan_edit(
            &t,
            &SmoothingParams::default(),
            "lm_head.weight",
            &[8, 4],
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(plan.rows_to_scale.len(), 1);
        assert_eq!(plan.rows_to_scale[0].id, 3);
        assert!((plan.rows_to_scale[0].scale - 0.840_968_332_518_619_2).abs() < 1e-12);
    }

    #[test]
    fn specials_and_shapes() {
        let t = table_from_scores(&[(1, 1.0), (2, 1.0)], 4);
        let specials: BTreeSet<u32> = [2].into();
        let plan = plan_edit(&t, &SmoothingParams::default(), "h", &[6, 2], &specials).unwrap();
        assert_eq!(
            plan.rows_to_scale.iter().map(|r| r.id).collect::<Vec<_>>(),
            vec![1]
        );
        assert_eq!(plan.untouched_row_count, 5);
        assert!(matches!(
            plan_edit(&t, &SmoothingParams::default(), "h", &[3, 2], &specials),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            plan_edit(&t, &SmoothingParams::default(), "h", &[6], &specials),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn min_scale_one_plans_nothing() {
        let t = table_from_scores(&[(1, 1.0), (2, 0.5)], 4);
        let params = SmoothingParams::new(1.0, 10.0).unwrap();
        let plan = plan_edit(&t, &params, "h", &[4, 2], &BTreeSet::new()).unwrap();
        assert!(plan.rows_to_scale.is_empty());
    }

    #[test]
    fn synthetic_plan_covers_all_target_rows() {
        let (v, table) = fixture_table();
        let plan = plan_edit(
            &table,
            &SmoothingParams::default(),
            "lm_head.weight",
            &[64, 8],
            v.special_ids(),
        )
        .unwrap();
        for id in fixtures::SYNTHETIC_TARGET_IDS {
            let row = plan
                .rows_to_scale
                .iter()
                .find(|r| r.id == id)
                .expect("target planned");
            assert_eq!(row.scale, 0.5);
        }
        for row in &plan.rows_to_scale {
            assert!(row.scale >= 0.5 && row.scale < 1.0);
            assert!(!v.is_special(row.id));
        }
        assert!(plan.rows_to_scale.len() >= 16);
    }

    #[test]
    fn halves_an_f32_row_exactly() {
        let mut t = NamedTensor::from_f64(
            "h",
            Dtype::F32,
            vec![2, 3],
            &[1.0, -2.0, 0.5, 3.0, 3.0, 3.0],
        )
        .unwrap();
        let table = table_from_scores(&[(0, 1.0)], 2);
        let plan = plan_edit(
            &table,
            &SmoothingParams::default(),
            "h",
            &[2, 3],
            &BTreeSet::new(),
        )
        .unwrap();
        let change = scale_rows(&mut t, &plan).unwrap();
        assert_eq!(t.to_f64(), vec![0.5, -1.0, 0.25, 3.0, 3.0, 3.0]);
        assert_eq!(change.max_abs, 1.0);
        assert_eq!(change.min_abs, 0.25);
    }

    #[test]
    fn apply_writes_scaled_head_and_marker() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let out_dir = out.path().join("edited");
        write_fixture_checkpoint(src.path(), &FixtureOptions::default()).unwrap();
        let (v, table) = fixture_table();
        let plan = plan_for_checkpoint(
            src.path(),
            &table,
            &SmoothingParams::default(),
            v.special_ids(),
        )
        .unwrap();
        let report = apply_edit(src.path(), &out_dir, &plan, &ApplyOptions::default()).unwrap();
        assert_eq!(report.scaled_row_count, plan.rows_to_scale.len());
        assert!(out_dir.join(PROVENANCE_FILE).is_file());
        assert!(report.files_written.contains(&"tokenizer.json".to_string()));

        let before = read_container(src.path().join(SINGLE_FILE)).unwrap();
        let after = read_container(out_dir.join(SINGLE_FILE)).unwrap();
        let (hb, ha) = (
            before.get("lm_head.weight").unwrap(),
            after.get("lm_head.weight").unwrap(),
        );
        for id in fixtures::SYNTHETIC_TARGET_IDS {
            let b = hb.dtype.decode(hb.row_bytes(id as usize).unwrap());
            let a = ha.dtype.decode(ha.row_bytes(id as usize).unwrap());
            // never zeroed, exactly halved (fixture values are multiples of 1/32)
            assert!(a.iter().zip(&b).all(|(x, y)| *x == 0.5 * y));
        }
        assert_eq!(
            before.get(fixtures::EMBED_NAME),
            after.get(fixtures::EMBED_NAME)
        );

        // a second application on the edited output is refused
        let again = apply_edit(
            &out_dir,
            &out.path().join("twice"),
            &plan,
            &ApplyOptions::default(),
        );
        assert!(matches!(again, Err(Error::AlreadyEdited { .. })));
        let forced = ApplyOptions {
            force: true,
            ..Default::default()
        };
        assert!(apply_edit(&out_dir, &out.path().join("twice"), &plan, &forced).is_ok());
    }

    #[test]
    fn dry_run_writes_nothing_but_reports() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let out_dir = out.path().join("never");
        write_fixture_checkpoint(src.path(), &FixtureOptions::default()).unwrap();
        let (v, table) = fixture_table();
        let mut plan = plan_for_checkpoint(
            src.path(),
            &table,
            &SmoothingParams::default(),
            v.special_ids(),
        )
        .unwrap();
        plan.dry_run = true;
        let report = apply_edit(src.path(), &out_dir, &plan, &ApplyOptions::default()).unwrap();
        assert!(!out_dir.exists());
        assert!(report.dry_run);
        assert!(report.scaled_row_count > 0);
        assert!(report.files_written.is_empty());
        assert_ne!(report.input_digest, report.output_digest);

        plan.dry_run = false;
        let real = apply_edit(src.path(), &out_dir, &plan, &ApplyOptions::default()).unwrap();
        assert_eq!(real.output_digest, report.output_digest);
    }

    #[test]
    fn same_directory_refused() {
        let src = tempfile::tempdir().unwrap();
        write_fixture_checkpoint(src.path(), &FixtureOptions::default()).unwrap();
        let (v, table) = fixture_table();
        let plan = plan_for_checkpoint(
            src.path(),
            &table,
            &SmoothingParams::default(),
            v.special_ids(),
        )
        .unwrap();
        let err = apply_edit(src.path(), src.path(), &plan, &ApplyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SameDirectory(_)));
    }

    #[test]
    fn tied_head_needs_consent_then_unties() {
        for sharded in [false, true] {
            let src = tempfile::tempdir().unwrap();
            let out = tempfile::tempdir().unwrap();
            let out_dir = out.path().join("untied");
            let opts = FixtureOptions {
                tied: true,
                sharded,
                ..Default::default()
            };
            write_fixture_checkpoint(src.path(), &opts).unwrap();
            let (v, table) = fixture_table();
            let plan = plan_for_checkpoint(
                src.path(),
                &table,
                &SmoothingParams::default(),
                v.special_ids(),
            )
            .unwrap();
            assert_eq!(plan.head_tensor, fixtures::EMBED_NAME);
            let err =
                apply_edit(src.path(), &out_dir, &plan, &ApplyOptions::default()).unwrap_err();
            assert!(matches!(err, Error::TiedEmbeddings { .. }));
            assert!(!out_dir.exists());

            let consent = ApplyOptions {
                allow_untie: true,
                ..Default::default()
            };
            let report = apply_edit(src.path(), &out_dir, &plan, &consent).unwrap();
            assert!(report.untied);
            assert_eq!(report.output_head_tensor, "lm_head.weight");

            let cfg = load_model_config(&out_dir).unwrap();
            assert!(!cfg.tie_word_embeddings());
            let ckpt = Checkpoint::open(&out_dir).unwrap();
            let head = resolve_in(&ckpt, &cfg).unwrap();
            assert_eq!(head.tensor, "lm_head.weight");
            let embed_before = Checkpoint::open(src.path())
                .unwrap()
                .read_tensor(fixtures::EMBED_NAME)
                .unwrap();
            let embed_after = ckpt.read_tensor(fixtures::EMBED_NAME).unwrap();
            assert_eq!(embed_before, embed_after);
            let new_head = ckpt.read_tensor("lm_head.weight").unwrap();
            let row = *fixtures::SYNTHETIC_TARGET_IDS.start();
            let b = embed_before
                .dtype
                .decode(embed_before.row_bytes(row as usize).unwrap());
            let a = new_head
                .dtype
                .decode(new_head.row_bytes(row as usize).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| *x == 0.5 * y));
        }
    }

    #[test]
    fn config_vocab_mismatch_is_a_shape_error() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_fixture_checkpoint(src.path(), &FixtureOptions::default()).unwrap();
        let cfg_path = src.path().join(CONFIG_FILE);
        let mut cfg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
        cfg["vocab_size"] = serde_json::json!(8);
        fs::write(&cfg_path, cfg.to_string()).unwrap();
        let (v, table) = fixture_table();
        let plan = plan_for_checkpoint(
            src.path(),
            &table,
            &SmoothingParams::default(),
            v.special_ids(),
        )
        .unwrap();
        let err = apply_edit(
            src.path(),
            &out.path().join("x"),
            &plan,
            &ApplyOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn slice_norms_and_csv() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let out_dir = out.path().join("edited");
        write_fixture_checkpoint(src.path(), &FixtureOptions::default()).unwrap();
        let (v, table) = fixture_table();
        let params = SmoothingParams::default();
        let plan = plan_for_checkpoint(src.path(), &table, &params, v.special_ids()).unwrap();
        apply_edit(src.path(), &out_dir, &plan, &ApplyOptions::default()).unwrap();

        let rows = export_weight_slice(
            src.path(),
            Some(&out_dir),
            0..64,
            SliceReduction::RowNorm,
            Some(&table),
            &params,
        )
        .unwrap();
        let planned: BTreeMap<u32, f64> =
            plan.rows_to_scale.iter().map(|r| (r.id, r.scale)).collect();
        for r in &rows {
            let (b, a) = (r.before[0], r.after.as_ref().unwrap()[0]);
            match planned.get(&r.token_id) {
                Some(s) => assert!((a - s * b).abs() <= 1e-6 * b.max(1.0), "row {}", r.token_id),
                None => assert_eq!(a, b),
            }
        }
        let mut csv = Vec::new();
        write_slice_csv(&mut csv, &rows[..2], SliceReduction::RowNorm).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("token_id,class,risk,scale,stat_before,stat_after\n0,safe,0,1,"));

        let raw = export_weight_slice(src.path(), None, 40..41, SliceReduction::Raw, None, &params)
            .unwrap();
        assert_eq!(raw[0].before.len(), 8);
        let mut csv = Vec::new();
        write_slice_csv(&mut csv, &raw, SliceReduction::Raw).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);

        assert!(export_weight_slice(
            src.path(),
            None,
            60..70,
            SliceReduction::RowNorm,
            None,
            &params
        )
        .is_err());
    }
}
