use super::Molecule;

/// Flags every atom and bond lying on a cycle. A bond is a ring bond iff it
/// is not a bridge; an atom is a ring atom iff it has at least one ring bond.
pub fn perceive_rings(mol: &mut Molecule) {
    let n = mol.atoms.len();
    let adj = mol.adjacency();
    let mut is_bridge = vec![false; mol.bonds.len()];

    // Iterative Tarjan bridge finding with discovery times and low links.
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (atom, bond used to enter it, next adjacency position)
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (atom, parent_bond, ref mut next)) = stack.last_mut() {
            if *next < adj[atom].len() {
                let (nb, bond) = adj[atom][*next];
                *next += 1;
                if Some(bond) == parent_bond {
                    continue;
                }
                if disc[nb] == usize::MAX {
                    disc[nb] = timer;
                    low[nb] = timer;
                    timer += 1;
                    stack.push((nb, Some(bond), 0));
                } else {
                    low[atom] = low[atom].min(disc[nb]);
                }
            } else {
                stack.pop();
                if let (Some(bond), Some(&(parent, _, _))) = (parent_bond, stack.last()) {
                    low[parent] = low[parent].min(low[atom]);
                    if low[atom] > disc[parent] {
                        is_bridge[bond] = true;
                    }
                }
            }
        }
    }

    for a in &mut mol.atoms {
        a.in_ring = false;
    }
    for (bi, bond) in mol.bonds.iter_mut().enumerate() {
        bond.in_ring = !is_bridge[bi];
        if bond.in_ring {
            mol.atoms[bond.begin].in_ring = true;
            mol.atoms[bond.end].in_ring = true;
        }
    }
}
