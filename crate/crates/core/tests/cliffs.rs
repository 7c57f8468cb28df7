mod common;

use common::{corpus_file, hand_set, oracle_cliffs};
use graphcliff::cliff::{annotate_cliffs, load_dataset, stratified_split, CliffConfig, ColumnMap, CompoundRecord, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[test]
fn hand_set_matches_brute_force() {
    let records = hand_set();
    let cfg = CliffConfig::default();
    let ann = annotate_cliffs(&records, &cfg).unwrap();
    let (pairs, flags) = oracle_cliffs(&records, &cfg);
    let got: Vec<_> = ann
        .pairs
        .iter()
        .map(|p| (p.i, p.j, p.sim_sub, p.sim_scaf, p.sim_smiles, p.is_cliff))
        .collect();
    assert_eq!(got, pairs);
    assert_eq!(ann.flags, flags);
    assert_eq!(ann.pairs_scored, 15);
    // The set exercises both outcomes.
    assert!(flags.iter().any(|&f| f) && flags.iter().any(|&f| !f));
}

fn cliff_smiles(records: &[CompoundRecord], flags: &[bool]) -> BTreeSet<String> {
    records.iter().zip(flags).filter(|(_, &f)| f).map(|(r, _)| r.smiles.clone()).collect()
}

#[test]
fn annotation_ignores_record_order() {
    let ds = load_dataset(corpus_file("CHEMBL2047_EC50"), &ColumnMap::default()).unwrap();
    let cfg = CliffConfig::default();
    let base = annotate_cliffs(&ds.records, &cfg).unwrap();
    let mut shuffled = ds.records.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let again = annotate_cliffs(&shuffled, &cfg).unwrap();
    assert_eq!(cliff_smiles(&ds.records, &base.flags), cliff_smiles(&shuffled, &again.flags));
}

#[test]
fn split_preserves_cliff_ratio() {
    let ds = load_dataset(corpus_file("CHEMBL234_Ki"), &ColumnMap::default()).unwrap();
    let mut split = ds.records.clone();
    stratified_split(&mut split, 0.2, 1).unwrap();
    let ratio = |rs: Vec<&CompoundRecord>| rs.iter().filter(|r| r.is_cliff()).count() as f64 / rs.len() as f64;
    let global = ratio(split.iter().collect());
    let test = ratio(split.iter().filter(|r| r.split == Some(Split::Test)).collect());
    assert!((global - test).abs() <= 0.02, "{global} vs {test}");
    let mut again = ds.records.clone();
    stratified_split(&mut again, 0.2, 1).unwrap();
    let splits = |rs: &[CompoundRecord]| rs.iter().map(|r| r.split).collect::<Vec<_>>();
    assert_eq!(splits(&split), splits(&again));
}
