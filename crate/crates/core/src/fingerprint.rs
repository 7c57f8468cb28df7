//! Morgan/ECFP bit fingerprints and the similarity measures used to call
//! activity cliffs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::Molecule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint widths differ ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("fingerprint width {0} is not a power of two")]
    BadWidth(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpConfig {
    pub radius: u32,
    pub nbits: usize,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            radius: 2,
            nbits: 1024,
        }
    }
}

impl FpConfig {
    pub fn validate(&self) -> Result<(), FingerprintError> {
        if self.nbits == 0 || !self.nbits.is_power_of_two() {
            return Err(FingerprintError::BadWidth(self.nbits));
        }
        Ok(())
    }
}

/// Fixed-width bit vector stored as 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(nbits: usize) -> Self {
        Fingerprint {
            nbits,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    pub fn from_bits(nbits: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::empty(nbits);
        for b in bits {
            fp.set(b);
        }
        fp
    }

    /// # Panics
    /// If `bit >= nbits`.
    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits, "bit {bit} out of range {}", self.nbits);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn contains(&self, bit: usize) -> bool {
        bit < self.nbits && self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn on_bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.contains(b))
    }

    /// Big-endian hex over the bit vector: bit 0 is the lowest bit of the
    /// last hex digit.
    pub fn to_hex(&self) -> String {
        let digits = self.nbits.div_ceil(4);
        (0..digits)
            .rev()
            .map(|d| {
                let nibble = (0..4).fold(0u32, |acc, k| acc | (u32::from(self.contains(d * 4 + k)) << k));
                char::from_digit(nibble, 16).expect("nibble")
            })
            .collect()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seeded 64-bit FNV-1a over a sequence of integers, each fed as 8
/// little-endian bytes.
fn fnv1a(values: &[i64]) -> u64 {
    let mut h = FNV_OFFSET;
    for v in std::iter::once(HASH_SEED as i64).chain(values.iter().copied()) {
        for byte in v.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

fn initial_identifier(mol: &Molecule, atom: usize) -> u64 {
    let a = &mol.atoms[atom];
    fnv1a(&[
        i64::from(a.atomic_number()),
        a.degree as i64,
        i64::from(a.formal_charge),
        i64::from(a.implicit_h),
        i64::from(a.aromatic),
        i64::from(a.in_ring),
    ])
}

/// Raw Morgan identifiers of every radius, deduplicated by value, in
/// ascending order.
pub fn morgan_identifiers(mol: &Molecule, radius: u32) -> BTreeSet<u64> {
    let adj = mol.adjacency();
    let mut ids: Vec<u64> = (0..mol.atoms.len()).map(|i| initial_identifier(mol, i)).collect();
    let mut all: BTreeSet<u64> = ids.iter().copied().collect();
    for r in 1..=radius {
        let next: Vec<u64> = (0..mol.atoms.len())
            .map(|i| {
                let mut neigh: Vec<(i64, i64)> = adj[i]
                    .iter()
                    .map(|&(nb, bond)| (i64::from(mol.bonds[bond].order.code()), ids[nb] as i64))
                    .collect();
                neigh.sort_unstable();
                let mut tuple = Vec::with_capacity(2 + 2 * neigh.len());
                tuple.push(i64::from(r));
                tuple.push(ids[i] as i64);
                for (code, id) in neigh {
                    tuple.push(code);
                    tuple.push(id);
                }
                fnv1a(&tuple)
            })
            .collect();
        all.extend(next.iter().copied());
        ids = next;
    }
    all
}

/// Folded Morgan fingerprint: every identifier from radius 0 up to
/// `cfg.radius` sets bit `id mod nbits`.
pub fn ecfp(mol: &Molecule, cfg: &FpConfig) -> Fingerprint {
    let ids = morgan_identifiers(mol, cfg.radius);
    Fingerprint::from_bits(cfg.nbits, ids.into_iter().map(|id| (id % cfg.nbits as u64) as usize))
}

/// `|A ∩ B| / |A ∪ B|`; two empty fingerprints have similarity 0.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::WidthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 {
        0.0
    } else {
        f64::from(inter) / f64::from(union)
    })
}

/// Edit distance over bytes (insert, delete, substitute; unit costs).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// `1 - lev(a, b) / max(|a|, |b|)`; two empty strings are identical (1.0).
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use proptest::prelude::*;

    #[test]
    fn single_carbon_radius_zero() {
        let m = parse_smiles("C").unwrap();
        let fp = ecfp(&m, &FpConfig { radius: 0, nbits: 1024 });
        assert_eq!(fp.count_ones(), 1);
    }

    #[test]
    fn atom_order_does_not_matter() {
        let cfg = FpConfig::default();
        let a = ecfp(&parse_smiles("CCO").unwrap(), &cfg);
        let b = ecfp(&parse_smiles("OCC").unwrap(), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn benzene_collapses_per_radius() {
        // Six symmetric atoms give one identifier per radius.
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(morgan_identifiers(&m, 2).len(), 3);
        assert!(ecfp(&m, &FpConfig::default()).count_ones() <= 3);
    }

    #[test]
    fn tanimoto_examples() {
        let a = Fingerprint::from_bits(16, [1, 2, 3]);
        let b = Fingerprint::from_bits(16, [2, 3, 4]);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        let e = Fingerprint::empty(16);
        assert_eq!(tanimoto(&e, &e).unwrap(), 0.0);
        assert_eq!(
            tanimoto(&a, &Fingerprint::empty(32)),
            Err(FingerprintError::WidthMismatch(16, 32))
        );
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert!((levenshtein_similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-15);
        assert_eq!(levenshtein_similarity("CCO", "CCO"), 1.0);
        assert_eq!(levenshtein_similarity("A", ""), 0.0);
        assert_eq!(levenshtein_similarity("", ""), 1.0);
    }

    #[test]
    fn hex_layout() {
        let fp = Fingerprint::from_bits(8, [0, 5]);
        assert_eq!(fp.to_hex(), "21");
        assert_eq!(Fingerprint::empty(1024).to_hex().len(), 256);
    }

    #[test]
    fn config_validation() {
        assert!(FpConfig::default().validate().is_ok());
        assert_eq!(FpConfig { radius: 2, nbits: 1000 }.validate(), Err(FingerprintError::BadWidth(1000)));
    }

    /// Brute-force edit distance by exhaustive recursion (exponential; short strings only).
    fn edit_distance_brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ha, ta)), Some((hb, tb))) => {
                let sub = edit_distance_brute(ta, tb) + usize::from(ha != hb);
                let del = edit_distance_brute(ta, b) + 1;
                let ins = edit_distance_brute(a, tb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    proptest! {
        #[test]
        fn levenshtein_matches_brute_force(a in "[abc]{0,6}", b in "[abc]{0,6}") {
            prop_assert_eq!(levenshtein(&a, &b), edit_distance_brute(a.as_bytes(), b.as_bytes()));
        }

        #[test]
        fn levenshtein_triangle(a in "[abc]{0,7}", b in "[abc]{0,7}", c in "[abc]{0,7}") {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn tanimoto_symmetric_and_bounded(
            xs in proptest::collection::btree_set(0usize..128, 0..40),
            ys in proptest::collection::btree_set(0usize..128, 0..40),
        ) {
            let a = Fingerprint::from_bits(128, xs.iter().copied());
            let b = Fingerprint::from_bits(128, ys.iter().copied());
            let ab = tanimoto(&a, &b).unwrap();
            prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            if !xs.is_empty() {
                prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
            }
        }
    }
}
