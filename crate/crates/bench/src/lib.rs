//! Fixtures for the kernel benchmarks.

use std::path::PathBuf;

use graphcliff::cliff::{load_dataset, ColumnMap, CompoundRecord};
use graphcliff::graphnn::{featurize, GraphBatch, MolGraph};

pub fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/moleculeace")
        .join(format!("{name}.csv"))
}

/// The first `n` compounds of a benchmark file.
pub fn records(name: &str, n: usize) -> Vec<CompoundRecord> {
    let ds = load_dataset(corpus_path(name), &ColumnMap::default()).expect("benchmark data present");
    ds.records.into_iter().take(n).collect()
}

pub fn graphs(records: &[CompoundRecord]) -> Vec<MolGraph> {
    records.iter().map(|r| featurize(&r.mol)).collect()
}

pub fn batch(graphs: &[MolGraph]) -> GraphBatch {
    GraphBatch::from_graphs(&graphs.iter().collect::<Vec<_>>(), true).expect("non-empty graphs")
}
