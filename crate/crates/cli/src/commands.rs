use std::collections::HashSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graphcliff::analysis::{analyze as run_analysis, export_gate_scores};
use graphcliff::chem::{murcko_scaffold, write_smiles};
use graphcliff::cliff::{
    annotate_cliffs, apply_flags, ingest_benchmark, load_dataset, stratified_split, CliffAnnotation, CompoundRecord,
    Dataset, Split,
};
use graphcliff::fingerprint::ecfp;
use graphcliff::format_float;
use graphcliff::train::{evaluate, train_model, write_history_csv, Checkpoint};
use serde::Serialize;
use serde_json::json;

use crate::config::{EvalSubset, RunConfig};
use crate::UsageError;

/// Creates the output directory and echoes the effective configuration and
/// tool version into it.
fn prepare_output(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.output()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(
        &dir.join("run.json"),
        &json!({
            "tool": "graphcliff",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
        }),
    )?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    let input = cfg.input()?;
    let ds = load_dataset(input, &cfg.columns).with_context(|| format!("loading {}", input.display()))?;
    for s in &ds.skipped {
        log::warn!("line {}: skipped '{}': {}", s.line, s.smiles, s.reason);
    }
    Ok(ds)
}

/// The input CSV with the cliff and split columns replaced (or appended)
/// for the rows that were loaded.
fn write_augmented(cfg: &RunConfig, ds: &Dataset, path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(cfg.input()?)?;
    let mut headers = reader.headers()?.clone();
    let find = |h: &csv::StringRecord, name: &str| h.iter().position(|x| x.trim() == name);
    let cliff_col = match find(&headers, &cfg.columns.cliff) {
        Some(c) => c,
        None => {
            headers.push_field(&cfg.columns.cliff);
            headers.len() - 1
        }
    };
    let split_col = match find(&headers, &cfg.columns.split) {
        Some(c) => c,
        None => {
            headers.push_field(&cfg.columns.split);
            headers.len() - 1
        }
    };
    let skipped: HashSet<usize> = ds.skipped.iter().map(|s| s.line).collect();
    let mut out = csv_writer(path)?;
    out.write_record(&headers)?;
    let mut kept = ds.records.iter();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if skipped.contains(&(i + 2)) {
            continue;
        }
        let rec = kept.next().context("input changed while it was being read")?;
        let mut fields: Vec<String> = row.iter().map(String::from).collect();
        fields.resize(headers.len(), String::new());
        fields[cliff_col] = rec.cliff.map(|c| u8::from(c).to_string()).unwrap_or_default();
        fields[split_col] = rec.split.map(|s| s.to_string()).unwrap_or_default();
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MoleculeSummary<'a> {
    id: usize,
    smiles: &'a str,
    atoms: usize,
    bonds: usize,
    aromatic_atoms: usize,
    ring_atoms: usize,
    /// Murcko scaffold written from its first atom; absent for acyclic
    /// molecules.
    scaffold: Option<String>,
}

pub fn parse(cfg: &RunConfig, command: &str) -> Result<()> {
    let ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let summaries: Vec<MoleculeSummary> = ds
        .records
        .iter()
        .map(|r| {
            let scaffold = murcko_scaffold(&r.mol);
            MoleculeSummary {
                id: r.id,
                smiles: &r.smiles,
                atoms: r.mol.num_atoms(),
                bonds: r.mol.num_bonds(),
                aromatic_atoms: r.mol.aromatic_atom_count(),
                ring_atoms: r.mol.ring_atom_count(),
                scaffold: (!scaffold.is_empty()).then(|| write_smiles(&scaffold, 0, cfg.seed)),
            }
        })
        .collect();
    write_json(&dir.join("molecules.json"), &summaries)?;
    write_json(&dir.join("skipped.json"), &ds.skipped)?;
    log::info!("parsed {} molecules, skipped {}", ds.records.len(), ds.skipped.len());
    Ok(())
}

pub fn fingerprints(cfg: &RunConfig, command: &str) -> Result<()> {
    cfg.fp.validate()?;
    let ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let mut out = csv_writer(&dir.join("fingerprints.csv"))?;
    out.write_record(["id", "smiles", "ecfp"])?;
    for r in &ds.records {
        out.write_record([r.id.to_string(), r.smiles.clone(), ecfp(&r.mol, &cfg.fp).to_hex()])?;
    }
    out.flush()?;
    write_json(&dir.join("skipped.json"), &ds.skipped)?;
    Ok(())
}

fn annotate_records(cfg: &RunConfig, records: &mut [CompoundRecord]) -> Result<CliffAnnotation> {
    let ann = annotate_cliffs(records, &cfg.cliff_config())?;
    apply_flags(records, &ann);
    Ok(ann)
}

fn write_pairs(ds: &Dataset, ann: &CliffAnnotation, path: &Path) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["i", "j", "smiles_i", "smiles_j", "sim_sub", "sim_scaf", "sim_smiles", "delta_pki"])?;
    for p in ann.cliff_pairs() {
        out.write_record([
            p.i.to_string(),
            p.j.to_string(),
            ds.records[p.i].smiles.clone(),
            ds.records[p.j].smiles.clone(),
            format_float(p.sim_sub),
            format_float(p.sim_scaf),
            format_float(p.sim_smiles),
            format_float(p.delta_pki),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn split_counts(records: &[CompoundRecord]) -> serde_json::Value {
    let count = |f: &dyn Fn(&CompoundRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let total = records.len();
    let cliff = count(&|r| r.is_cliff());
    let test = count(&|r| r.split == Some(Split::Test));
    let test_cliff = count(&|r| r.split == Some(Split::Test) && r.is_cliff());
    json!({
        "total": total,
        "cliff": cliff,
        "cliff_ratio": cliff as f64 / total as f64,
        "train": count(&|r| r.split == Some(Split::Train)),
        "test": test,
        "test_cliff": test_cliff,
        "test_cliff_ratio": if test > 0 { Some(test_cliff as f64 / test as f64) } else { None },
    })
}

pub fn annotate(cfg: &RunConfig, command: &str) -> Result<()> {
    let mut ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let ann = annotate_records(cfg, &mut ds.records)?;
    write_augmented(cfg, &ds, &dir.join("annotated.csv"))?;
    write_pairs(&ds, &ann, &dir.join("cliff_pairs.csv"))?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "counts": split_counts(&ds.records),
            "pairs_scored": ann.pairs_scored,
            "similar_pairs": ann.pairs.len(),
            "cliff_pairs": ann.cliff_pairs().count(),
            "skipped": ds.skipped,
        }),
    )?;
    log::info!("{} of {} compounds are cliffs", ds.cliff_count(), ds.records.len());
    Ok(())
}

pub fn split(cfg: &RunConfig, command: &str) -> Result<()> {
    let mut ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let annotated = ds.records.iter().any(|r| r.cliff.is_none());
    if annotated {
        annotate_records(cfg, &mut ds.records)?;
    }
    stratified_split(&mut ds.records, cfg.split.test_frac, cfg.seed)?;
    write_augmented(cfg, &ds, &dir.join("split.csv"))?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "counts": split_counts(&ds.records),
            "annotated": annotated,
            "skipped": ds.skipped,
        }),
    )?;
    Ok(())
}

pub fn train(cfg: &RunConfig, command: &str) -> Result<()> {
    let ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let warm = match &cfg.paths.checkpoint {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let outcome = train_model(&ds.records, &cfg.train, &cfg.model, warm.as_ref())?;
    outcome.checkpoint.save(dir.join("model.gclf"))?;
    write_history_csv(&outcome.history, BufWriter::new(File::create(dir.join("history.csv"))?))?;
    log::info!(
        "trained {} epochs; best epoch {:?}",
        outcome.history.len(),
        outcome.checkpoint.manifest.best_epoch
    );
    Ok(())
}

fn eval_records(cfg: &RunConfig, records: Vec<CompoundRecord>) -> Result<Vec<CompoundRecord>> {
    let has_test = records.iter().any(|r| r.split == Some(Split::Test));
    let keep = |r: &CompoundRecord| match cfg.eval.subset {
        EvalSubset::Auto if has_test => r.split == Some(Split::Test),
        EvalSubset::Auto | EvalSubset::All => true,
        EvalSubset::Test => r.split == Some(Split::Test),
        EvalSubset::Train => r.split != Some(Split::Test),
    };
    let chosen: Vec<CompoundRecord> = records.into_iter().filter(keep).collect();
    if chosen.is_empty() {
        bail!(graphcliff::Error::Data(format!("no records in the {:?} subset", cfg.eval.subset)));
    }
    Ok(chosen)
}

fn load_model(cfg: &RunConfig) -> Result<graphcliff::graphnn::GraphCliff> {
    let path = cfg.checkpoint()?;
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ck.model()?)
}

pub fn eval(cfg: &RunConfig, command: &str) -> Result<()> {
    let model = load_model(cfg)?;
    let ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let records = eval_records(cfg, ds.records)?;
    let m = evaluate(&model, &records)?;
    write_json(&dir.join("metrics.json"), &m)?;
    log::info!("rmse {:.4}, rmse_cliff {:?} over {} records", m.rmse, m.rmse_cliff, m.n);
    Ok(())
}

fn write_series(path: &Path, header: [&str; 2], rows: impl IntoIterator<Item = (String, Option<f64>)>) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(header)?;
    for (k, v) in rows {
        out.write_record([k, v.map(format_float).unwrap_or_default()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn analyze(cfg: &RunConfig, command: &str) -> Result<()> {
    let model = load_model(cfg)?;
    let ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let pairs: Vec<(usize, usize)> = if ds.records.len() >= 2 {
        annotate_cliffs(&ds.records, &cfg.cliff_config())?
            .cliff_pairs()
            .map(|p| (p.i, p.j))
            .collect()
    } else {
        Vec::new()
    };
    let report = run_analysis(&model, &ds.records, &pairs, &cfg.fp, &cfg.analysis)?;
    write_json(&dir.join("report.json"), &report)?;
    write_series(
        &dir.join("hop_sensitivity.csv"),
        ["hop", "sensitivity"],
        report.hop_sensitivity.iter().enumerate().map(|(k, v)| (k.to_string(), *v)),
    )?;
    write_series(
        &dir.join("dirichlet.csv"),
        ["layer", "energy"],
        report.dirichlet.iter().enumerate().map(|(l, v)| (l.to_string(), Some(*v))),
    )?;
    write_series(
        &dir.join("jacobian.csv"),
        ["layer", "singular_value"],
        report.jacobian_sv.iter().enumerate().map(|(l, v)| (l.to_string(), Some(*v))),
    )?;
    let mut scatter = csv_writer(&dir.join("slope_points.csv"))?;
    scatter.write_record(["x", "y"])?;
    if let Some(fit) = &report.slope {
        for (x, y) in &fit.points {
            scatter.write_record([format_float(*x), format_float(*y)])?;
        }
    }
    scatter.flush()?;
    Ok(())
}

pub fn export_gates(cfg: &RunConfig, command: &str) -> Result<()> {
    let model = load_model(cfg)?;
    let layer = cfg.analysis.gate_layer.unwrap_or(model.config.layers.saturating_sub(1));
    if layer >= model.config.layers {
        bail!(UsageError(format!("layer {layer} out of range for a {}-layer model", model.config.layers)));
    }
    let ds = load(cfg)?;
    let dir = prepare_output(cfg, command)?;
    let mut out = csv_writer(&dir.join("gates.csv"))?;
    out.write_record(["id", "smiles", "atom", "element", "score"])?;
    for r in &ds.records {
        let scores = export_gate_scores(&model, &r.mol, layer)?;
        for (a, s) in scores.iter().enumerate() {
            out.write_record([
                r.id.to_string(),
                r.smiles.clone(),
                a.to_string(),
                r.mol.atoms[a].element.to_string(),
                format_float(*s),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn registry(cfg: &RunConfig, command: &str) -> Result<()> {
    let input = cfg.input()?;
    let reg = ingest_benchmark(input, &cfg.columns).with_context(|| format!("reading {}", input.display()))?;
    let dir = prepare_output(cfg, command)?;
    for (name, reason) in &reg.failures {
        log::warn!("{name}: {reason}");
    }
    write_json(&dir.join("registry.json"), &reg)?;
    let mut out = csv_writer(&dir.join("registry.csv"))?;
    out.write_record(["name", "total", "cliff", "train", "test", "test_cliff", "skipped"])?;
    for e in &reg.entries {
        out.write_record([
            e.name.clone(),
            e.total.to_string(),
            e.cliff.to_string(),
            e.train.to_string(),
            e.test.to_string(),
            e.test_cliff.to_string(),
            e.skipped.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
