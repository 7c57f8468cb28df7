//! Molecular graphs: a practical SMILES subset, ring perception and
//! Murcko scaffolds.

mod elements;
mod rings;
mod scaffold;
mod smiles;
mod writer;

pub use elements::Element;
pub use rings::perceive_rings;
pub use scaffold::{generic_framework, murcko_scaffold};
pub use smiles::{parse_smiles, SmilesError};
pub use writer::write_smiles;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count as 1 here and
    /// the aromatic duty is added once per atom (see [`parse_smiles`]).
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Stable small-integer code used by fingerprints and features.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i32,
    pub aromatic: bool,
    pub implicit_h: u32,
    pub in_ring: bool,
    pub degree: usize,
}

impl Atom {
    pub fn atomic_number(&self) -> u32 {
        self.element.atomic_number()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub source_smiles: String,
}

impl Molecule {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Adjacency as `(neighbor, bond index)` lists.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (bi, b) in self.bonds.iter().enumerate() {
            adj[b.begin].push((b.end, bi));
            adj[b.end].push((b.begin, bi));
        }
        adj
    }

    /// Hop distances from `source` over the bond graph; unreachable atoms are `None`.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.atoms.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(a) = queue.pop_front() {
            let da = dist[a].unwrap_or(0);
            for &(n, _) in &adj[a] {
                if dist[n].is_none() {
                    dist[n] = Some(da + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn aromatic_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.aromatic).count()
    }

    pub fn ring_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.in_ring).count()
    }

    pub(crate) fn recompute_degrees(&mut self) {
        for a in &mut self.atoms {
            a.degree = 0;
        }
        for b in &self.bonds {
            self.atoms[b.begin].degree += 1;
            self.atoms[b.end].degree += 1;
        }
    }
}
