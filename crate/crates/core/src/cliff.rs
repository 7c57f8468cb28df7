//! Dataset ingestion, activity-cliff annotation and cliff-stratified splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chem::{generic_framework, murcko_scaffold, parse_smiles, Molecule};
use crate::fingerprint::{ecfp, levenshtein_similarity, tanimoto, Fingerprint, FpConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split label '{other}'"))),
        }
    }
}

/// CSV column names for each record field. `cliff` and `split` are read when
/// the file has them and left unset otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub smiles: String,
    pub pki: String,
    pub cliff: String,
    pub split: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            smiles: "smiles".into(),
            pki: "y".into(),
            cliff: "cliff_mol".into(),
            split: "split".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompoundRecord {
    pub id: usize,
    pub smiles: String,
    /// Regression label on a negative-log potency scale.
    pub pki: f64,
    pub cliff: Option<bool>,
    pub split: Option<Split>,
    #[serde(skip)]
    pub mol: Molecule,
}

impl CompoundRecord {
    pub fn new(id: usize, smiles: &str, pki: f64) -> Result<Self> {
        if !pki.is_finite() {
            return Err(Error::Data(format!("label {pki} is not finite")));
        }
        Ok(CompoundRecord {
            id,
            smiles: smiles.to_string(),
            pki,
            cliff: None,
            split: None,
            mol: parse_smiles(smiles)?,
        })
    }

    pub fn is_cliff(&self) -> bool {
        self.cliff == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub smiles: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<CompoundRecord>,
    pub skipped: Vec<SkippedRow>,
}

impl Dataset {
    pub fn cliff_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_cliff()).count()
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == Some(split)).count()
    }
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "1.0" => Ok(true),
        "0" | "false" | "0.0" => Ok(false),
        other => Err(Error::Data(format!("cannot read '{other}' as a cliff flag"))),
    }
}

pub fn load_dataset(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    read_dataset(&mut reader, columns)
}

/// Reads records from any CSV source with a header row.
pub fn read_dataset<R: std::io::Read>(reader: &mut csv::Reader<R>, columns: &ColumnMap) -> Result<Dataset> {
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let smiles_col = find(&columns.smiles).ok_or_else(|| Error::MissingColumn(columns.smiles.clone()))?;
    let pki_col = find(&columns.pki).ok_or_else(|| Error::MissingColumn(columns.pki.clone()))?;
    let cliff_col = find(&columns.cliff);
    let split_col = find(&columns.split);

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut rows = 0;
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        rows += 1;
        let line = i + 2;
        let smiles = row.get(smiles_col).unwrap_or("").trim().to_string();
        let parsed = (|| -> Result<CompoundRecord> {
            let pki: f64 = row
                .get(pki_col)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("label '{}' is not a number", row.get(pki_col).unwrap_or(""))))?;
            let mut rec = CompoundRecord::new(records.len(), &smiles, pki)?;
            if let Some(c) = cliff_col {
                rec.cliff = Some(parse_flag(row.get(c).unwrap_or(""))?);
            }
            if let Some(c) = split_col {
                rec.split = Some(row.get(c).unwrap_or("").parse()?);
            }
            Ok(rec)
        })();
        match parsed {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("skipping line {line}: {e}");
                skipped.push(SkippedRow {
                    line,
                    smiles,
                    reason: e.to_string(),
                });
            }
        }
    }
    if rows == 0 {
        return Err(Error::Data("file has no data rows".into()));
    }
    if records.is_empty() {
        return Err(Error::Data(format!("all {rows} rows were skipped")));
    }
    Ok(Dataset { records, skipped })
}

/// Which reduced graph the scaffold similarity fingerprints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaffoldMode {
    /// Ring systems plus linkers, side chains removed.
    Murcko,
    /// The whole molecule with all atoms carbon and all bonds single; this is
    /// what the MoleculeACE tooling fingerprints for its published flags.
    Framework,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliffConfig {
    /// A pair is similar when any of its three similarities exceeds this.
    pub sim_threshold: f64,
    /// Minimum potency ratio; compared as `|Δpki| ≥ log10(fold)`.
    pub fold: f64,
    pub fp: FpConfig,
    pub scaffold: ScaffoldMode,
}

impl Default for CliffConfig {
    fn default() -> Self {
        CliffConfig {
            sim_threshold: 0.9,
            fold: 10.0,
            fp: FpConfig::default(),
            scaffold: ScaffoldMode::Murcko,
        }
    }
}

impl CliffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fold > 1.0) {
            return Err(Error::Config(format!("fold {} must exceed 1", self.fold)));
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold < 1.0) {
            return Err(Error::Config(format!("similarity threshold {} outside (0, 1)", self.sim_threshold)));
        }
        self.fp.validate()?;
        Ok(())
    }

    /// Slack on the potency test so that labels stored after a log
    /// transform (e.g. 8.0 vs 7.000000000000001) still count as 10-fold.
    const POTENCY_SLACK: f64 = 1e-9;

    pub fn potent_enough(&self, delta: f64) -> bool {
        delta.abs() >= self.fold.log10() - Self::POTENCY_SLACK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CliffPair {
    pub i: usize,
    pub j: usize,
    pub sim_sub: f64,
    pub sim_scaf: f64,
    pub sim_smiles: f64,
    /// `pki[j] − pki[i]`.
    pub delta_pki: f64,
    pub is_cliff: bool,
}

/// Similar pairs (every pair above the threshold on at least one measure)
/// and per-compound cliff flags. Dissimilar pairs are scored but not kept.
#[derive(Debug, Clone, Serialize)]
pub struct CliffAnnotation {
    pub pairs: Vec<CliffPair>,
    pub flags: Vec<bool>,
    pub pairs_scored: usize,
}

impl CliffAnnotation {
    pub fn cliff_pairs(&self) -> impl Iterator<Item = &CliffPair> {
        self.pairs.iter().filter(|p| p.is_cliff)
    }
}

/// Substructure and scaffold fingerprints for one compound.
#[derive(Debug, Clone)]
pub struct CompoundFingerprints {
    pub ecfp: Fingerprint,
    /// `None` when the compound has no ring (empty scaffold).
    pub scaffold: Option<Fingerprint>,
}

pub fn compound_fingerprints(mol: &Molecule, fp: &FpConfig, mode: ScaffoldMode) -> CompoundFingerprints {
    let scaffold = match mode {
        ScaffoldMode::Murcko => murcko_scaffold(mol),
        ScaffoldMode::Framework => generic_framework(mol),
    };
    CompoundFingerprints {
        ecfp: ecfp(mol, fp),
        scaffold: (!scaffold.is_empty()).then(|| ecfp(&scaffold, fp)),
    }
}

/// Scaffold similarity; zero whenever either scaffold is empty.
pub fn scaffold_similarity(a: &CompoundFingerprints, b: &CompoundFingerprints) -> Result<f64> {
    match (&a.scaffold, &b.scaffold) {
        (Some(x), Some(y)) => Ok(tanimoto(x, y)?),
        _ => Ok(0.0),
    }
}

/// Edit distance if it is at most `bound`, using a diagonal band of width
/// `2·bound + 1`.
fn bounded_levenshtein(a: &[u8], b: &[u8], bound: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > bound {
        return None;
    }
    let inf = usize::MAX / 2;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    for (j, p) in prev.iter_mut().enumerate().take(bound.min(m) + 1) {
        *p = j;
    }
    for i in 1..=n {
        let lo = i.saturating_sub(bound).max(1);
        let hi = (i + bound).min(m);
        cur.fill(inf);
        if i <= bound {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > bound {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= bound).then_some(prev[m])
}

/// SMILES similarity if it exceeds `threshold`, otherwise `None`. Agrees
/// with [`levenshtein_similarity`] wherever it returns a value.
fn smiles_similarity_above(a: &str, b: &str, threshold: f64) -> Option<f64> {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return Some(1.0);
    }
    if !a.is_ascii() || !b.is_ascii() {
        let s = levenshtein_similarity(a, b);
        return (s > threshold).then_some(s);
    }
    // Largest distance that still clears the threshold.
    let mut bound = ((1.0 - threshold) * longest as f64).floor() as usize;
    while bound > 0 && 1.0 - bound as f64 / longest as f64 <= threshold {
        bound -= 1;
    }
    if 1.0 - bound as f64 / longest as f64 <= threshold {
        return None;
    }
    let d = bounded_levenshtein(a.as_bytes(), b.as_bytes(), bound)?;
    let s = 1.0 - d as f64 / longest as f64;
    (s > threshold).then_some(s)
}

fn score_pair(
    i: usize,
    j: usize,
    records: &[CompoundRecord],
    fps: &[CompoundFingerprints],
    cfg: &CliffConfig,
) -> Result<Option<CliffPair>> {
    let sim_sub = tanimoto(&fps[i].ecfp, &fps[j].ecfp)?;
    let sim_scaf = scaffold_similarity(&fps[i], &fps[j])?;
    let thr = cfg.sim_threshold;
    let sim_smiles = if sim_sub > thr || sim_scaf > thr {
        levenshtein_similarity(&records[i].smiles, &records[j].smiles)
    } else {
        match smiles_similarity_above(&records[i].smiles, &records[j].smiles, thr) {
            Some(s) => s,
            None => return Ok(None),
        }
    };
    let delta_pki = records[j].pki - records[i].pki;
    Ok(Some(CliffPair {
        i,
        j,
        sim_sub,
        sim_scaf,
        sim_smiles,
        delta_pki,
        is_cliff: cfg.potent_enough(delta_pki),
    }))
}

/// Scores all `n(n−1)/2` pairs in parallel over the first index; the pair
/// list comes back ordered by `(i, j)`.
pub fn annotate_cliffs(records: &[CompoundRecord], cfg: &CliffConfig) -> Result<CliffAnnotation> {
    cfg.validate()?;
    let n = records.len();
    if n < 2 {
        return Err(Error::Data(format!("cliff annotation needs at least 2 compounds, got {n}")));
    }
    let fps: Vec<CompoundFingerprints> = records
        .par_iter()
        .map(|r| compound_fingerprints(&r.mol, &cfg.fp, cfg.scaffold))
        .collect();
    let rows: Vec<Vec<CliffPair>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in i + 1..n {
                if let Some(p) = score_pair(i, j, records, &fps, cfg)? {
                    row.push(p);
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<CliffPair> = rows.into_iter().flatten().collect();
    let mut flags = vec![false; n];
    for p in pairs.iter().filter(|p| p.is_cliff) {
        flags[p.i] = true;
        flags[p.j] = true;
    }
    Ok(CliffAnnotation {
        pairs,
        flags,
        pairs_scored: n * (n - 1) / 2,
    })
}

/// Writes annotation flags back onto the records.
pub fn apply_flags(records: &mut [CompoundRecord], annotation: &CliffAnnotation) {
    for (r, &f) in records.iter_mut().zip(&annotation.flags) {
        r.cliff = Some(f);
    }
}

/// Assigns train/test so that each stratum (cliff / non-cliff) contributes
/// `round(test_frac · size)` test compounds. Records without a cliff flag
/// count as non-cliff.
pub fn stratified_split(records: &mut [CompoundRecord], test_frac: f64, seed: u64) -> Result<()> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Config(format!("test fraction {test_frac} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for stratum in [false, true] {
        let mut members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].is_cliff() == stratum)
            .collect();
        members.shuffle(&mut rng);
        let n_test = (test_frac * members.len() as f64).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            records[i].split = Some(if k < n_test { Split::Test } else { Split::Train });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistryEntry {
    pub name: String,
    pub total: usize,
    pub cliff: usize,
    pub train: usize,
    pub test: usize,
    pub test_cliff: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Registry {
    pub entries: Vec<RegistryEntry>,
    /// Files that could not be read, with the reason.
    pub failures: Vec<(String, String)>,
}

impl Registry {
    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Loads every `*.csv` in `dir` (sorted by file name) and tallies counts.
/// Malformed files are recorded in `failures`; the rest proceed.
pub fn ingest_benchmark(dir: impl AsRef<Path>, columns: &ColumnMap) -> Result<Registry> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    if files.is_empty() {
        return Err(Error::Data(format!("no CSV files in {}", dir.display())));
    }
    files.sort();
    let results: Vec<_> = files
        .par_iter()
        .map(|path| {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            (name, load_dataset(path, columns))
        })
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (name, result) in results {
        match result {
            Ok(ds) => {
                let test_cliff = ds
                    .records
                    .iter()
                    .filter(|r| r.split == Some(Split::Test) && r.is_cliff())
                    .count();
                entries.push(RegistryEntry {
                    total: ds.records.len(),
                    cliff: ds.cliff_count(),
                    train: ds.split_count(Split::Train),
                    test: ds.split_count(Split::Test),
                    test_cliff,
                    skipped: ds.skipped.len(),
                    name,
                });
            }
            Err(e) => failures.push((name, e.to_string())),
        }
    }
    Ok(Registry { entries, failures })
}
