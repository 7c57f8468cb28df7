mod common;

use common::{corpus_file, CORPUS};
use graphcliff::chem::{parse_smiles, write_smiles};
use graphcliff::cliff::{load_dataset, ColumnMap};
use graphcliff::fingerprint::{ecfp, tanimoto, Fingerprint, FpConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_benchmark_file_parses_completely() {
    let mut files = 0;
    for entry in std::fs::read_dir(CORPUS).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let ds = load_dataset(&path, &ColumnMap::default()).unwrap();
        assert!(ds.skipped.is_empty(), "{}: {:?}", path.display(), ds.skipped.first());
        assert!(ds.records.iter().all(|r| r.cliff.is_some() && r.split.is_some()));
        files += 1;
    }
    assert_eq!(files, 30);
}

#[test]
fn rerooted_smiles_give_the_same_fingerprint() {
    let ds = load_dataset(corpus_file("CHEMBL2147_Ki"), &ColumnMap::default()).unwrap();
    let fp = FpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let step = ds.records.len() / 50;
    for r in ds.records.iter().step_by(step).take(50) {
        let reference = ecfp(&r.mol, &fp);
        for _ in 0..3 {
            let root = rng.gen_range(0..r.mol.num_atoms());
            let text = write_smiles(&r.mol, root, rng.gen());
            let again = parse_smiles(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(ecfp(&again, &fp), reference, "{} vs {text}", r.smiles);
        }
    }
}

#[test]
fn tanimoto_is_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let n = 64;
        let a = Fingerprint::from_bits(n, (0..n).filter(|_| rng.gen_bool(0.3)));
        let b = Fingerprint::from_bits(n, (0..n).filter(|_| rng.gen_bool(0.3)));
        let ab = tanimoto(&a, &b).unwrap();
        assert_eq!(ab, tanimoto(&b, &a).unwrap());
        assert!((0.0..=1.0).contains(&ab));
        if a.count_ones() > 0 {
            assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        }
    }
}
