use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BondOrder, Molecule};

/// Writes a non-canonical SMILES for a connected molecule, starting the
/// depth-first walk at `root` and visiting neighbors in an order shuffled by
/// `seed`. Every atom is written in bracket form with its hydrogen count and
/// charge, and every bond symbol is explicit, so re-parsing reproduces the
/// same graph under a different atom numbering.
pub fn write_smiles(mol: &Molecule, root: usize, seed: u64) -> String {
    let n = mol.atoms.len();
    if n == 0 {
        return String::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = mol.adjacency();
    for list in &mut adj {
        list.shuffle(&mut rng);
    }

    // Spanning tree by DFS; remaining bonds become ring closures.
    let mut visited = vec![false; n];
    let mut order = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut tree_bond = vec![false; mol.bonds.len()];
    let mut counter = 0;
    let mut stack = vec![(root, usize::MAX)];
    while let Some((atom, via)) = stack.pop() {
        if visited[atom] {
            continue;
        }
        visited[atom] = true;
        order[atom] = counter;
        counter += 1;
        if via != usize::MAX {
            tree_bond[via] = true;
            let parent = mol.bonds[via].other(atom);
            children[parent].push((atom, via));
        }
        for &(nb, bond) in adj[atom].iter().rev() {
            if !visited[nb] {
                stack.push((nb, bond));
            }
        }
    }

    let mut out = String::new();
    let mut open: Vec<Option<usize>> = Vec::new();
    let mut digit_of_bond = vec![usize::MAX; mol.bonds.len()];
    emit(
        mol,
        root,
        &adj,
        &children,
        &tree_bond,
        &order,
        &mut open,
        &mut digit_of_bond,
        &mut out,
    );
    out
}

fn bond_symbol(order: BondOrder) -> char {
    match order {
        BondOrder::Single => '-',
        BondOrder::Double => '=',
        BondOrder::Triple => '#',
        BondOrder::Aromatic => ':',
    }
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

#[allow(clippy::too_many_arguments)]
fn emit(
    mol: &Molecule,
    atom: usize,
    adj: &[Vec<(usize, usize)>],
    children: &[Vec<(usize, usize)>],
    tree_bond: &[bool],
    order: &[usize],
    open: &mut Vec<Option<usize>>,
    digit_of_bond: &mut [usize],
    out: &mut String,
) {
    let a = &mol.atoms[atom];
    out.push('[');
    if a.aromatic {
        out.push_str(&a.element.symbol().to_ascii_lowercase());
    } else {
        out.push_str(a.element.symbol());
    }
    if a.implicit_h > 0 {
        out.push('H');
        if a.implicit_h > 1 {
            out.push_str(&a.implicit_h.to_string());
        }
    }
    if a.formal_charge != 0 {
        out.push(if a.formal_charge > 0 { '+' } else { '-' });
        let m = a.formal_charge.unsigned_abs();
        if m > 1 {
            out.push_str(&m.to_string());
        }
    }
    out.push(']');

    for &(nb, bond) in &adj[atom] {
        if tree_bond[bond] {
            continue;
        }
        if digit_of_bond[bond] != usize::MAX {
            let d = digit_of_bond[bond];
            push_digit(out, d);
            open[d] = None;
        } else if order[nb] > order[atom] {
            let d = match open.iter().skip(1).position(|s| s.is_none()) {
                Some(p) => p + 1,
                None => {
                    if open.is_empty() {
                        open.push(None);
                    }
                    open.push(None);
                    open.len() - 1
                }
            };
            open[d] = Some(bond);
            digit_of_bond[bond] = d;
            out.push(bond_symbol(mol.bonds[bond].order));
            push_digit(out, d);
        }
    }

    let kids = &children[atom];
    for (i, &(child, bond)) in kids.iter().enumerate() {
        let last = i + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push(bond_symbol(mol.bonds[bond].order));
        emit(mol, child, adj, children, tree_bond, order, open, digit_of_bond, out);
        if !last {
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn signature(m: &Molecule) -> (Vec<(u32, usize, u32, bool, bool, i32)>, Vec<(u8, bool)>) {
        let mut atoms: Vec<_> = m
            .atoms
            .iter()
            .map(|a| (a.atomic_number(), a.degree, a.implicit_h, a.aromatic, a.in_ring, a.formal_charge))
            .collect();
        atoms.sort();
        let mut bonds: Vec<_> = m.bonds.iter().map(|b| (b.order.code(), b.in_ring)).collect();
        bonds.sort();
        (atoms, bonds)
    }

    #[test]
    fn rerooted_roundtrip_preserves_graph_invariants() {
        for smi in [
            "CCO",
            "c1ccc2ccccc2c1",
            "CC(=O)Nc1ccc(O)cc1",
            "C1CC2CCC1C2",
            "[NH3+]CC(=O)[O-]",
            "C#CC1=CC=CC=C1",
        ] {
            let m = parse_smiles(smi).unwrap();
            for root in 0..m.atoms.len() {
                let w = write_smiles(&m, root, root as u64 * 7 + 1);
                let back = parse_smiles(&w).unwrap_or_else(|e| panic!("{smi} -> {w}: {e}"));
                assert_eq!(signature(&back), signature(&m), "{smi} -> {w}");
            }
        }
    }

    #[test]
    fn many_ring_closures_use_percent_digits() {
        // Cubane-like cage forces several simultaneously open closures.
        let m = parse_smiles("C12C3C4C1C5C2C3C45").unwrap();
        let w = write_smiles(&m, 0, 3);
        let back = parse_smiles(&w).unwrap();
        assert_eq!(back.bonds.len(), m.bonds.len());
    }
}
