use super::{BondOrder, Element, Molecule};

/// Murcko scaffold: repeatedly strips non-ring atoms of degree 1 until none
/// remain, leaving ring systems and the linkers between them. Hydrogens are
/// added back to atoms that lost a neighbor so the scaffold is a valid
/// molecule on its own. Acyclic input yields an empty molecule.
///
/// Expects ring flags to be set (as [`super::parse_smiles`] does).
pub fn murcko_scaffold(mol: &Molecule) -> Molecule {
    let n = mol.atoms.len();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = vec![0; n];
    for b in &mol.bonds {
        degree[b.begin] += 1;
        degree[b.end] += 1;
    }
    let adj = mol.adjacency();
    let mut queue: Vec<usize> = (0..n)
        .filter(|&i| !mol.atoms[i].in_ring && degree[i] <= 1)
        .collect();
    while let Some(a) = queue.pop() {
        if !alive[a] {
            continue;
        }
        alive[a] = false;
        for &(nb, _) in &adj[a] {
            if alive[nb] {
                degree[nb] -= 1;
                if !mol.atoms[nb].in_ring && degree[nb] <= 1 {
                    queue.push(nb);
                }
            }
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut atoms = Vec::new();
    for (i, atom) in mol.atoms.iter().enumerate() {
        if alive[i] {
            remap[i] = atoms.len();
            atoms.push(atom.clone());
        }
    }
    let mut bonds = Vec::new();
    for b in &mol.bonds {
        match (alive[b.begin], alive[b.end]) {
            (true, true) => bonds.push(super::Bond {
                begin: remap[b.begin],
                end: remap[b.end],
                ..b.clone()
            }),
            (true, false) => atoms[remap[b.begin]].implicit_h += b.order.valence(),
            (false, true) => atoms[remap[b.end]].implicit_h += b.order.valence(),
            (false, false) => {}
        }
    }
    let mut out = Molecule {
        atoms,
        bonds,
        source_smiles: mol.source_smiles.clone(),
    };
    out.recompute_degrees();
    out
}

/// Generic graph framework of the whole molecule: every atom becomes an
/// uncharged aliphatic carbon and every bond a single bond, with hydrogens
/// filled up to valence four. No atoms are removed.
pub fn generic_framework(mol: &Molecule) -> Molecule {
    let mut out = mol.clone();
    for a in &mut out.atoms {
        a.element = Element::C;
        a.formal_charge = 0;
        a.aromatic = false;
        a.implicit_h = 4u32.saturating_sub(a.degree as u32);
    }
    for b in &mut out.bonds {
        b.order = BondOrder::Single;
    }
    out
}
