use std::rc::Rc;

use crate::chem::{BondOrder, Element, Molecule};
use crate::tensor::{SparseMatrix, Tensor};
use crate::Result;

/// Width of the per-atom feature vector.
pub const NODE_FEATURES: usize = 29;
/// Width of the per-bond feature vector.
pub const EDGE_FEATURES: usize = 5;

const ELEMENT_SLOTS: [Element; 10] = [
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::F,
    Element::CL,
    Element::BR,
    Element::I,
    Element::P,
    Element::B,
];
const DEGREE_OFFSET: usize = 11;
const CHARGE_OFFSET: usize = 17;
const AROMATIC_SLOT: usize = 22;
const HYDROGEN_OFFSET: usize = 23;
const RING_SLOT: usize = 28;

/// Featurized single molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    /// `N × 29`: element (10 + other) ∥ degree 0..5 ∥ charge −2..2 ∥
    /// aromatic ∥ hydrogens 0..4 ∥ in-ring. Out-of-range values land in the
    /// last slot of their block.
    pub node_features: Tensor,
    /// Directed edges as `(source, target)`; every bond appears in both directions.
    pub edges: Vec<(usize, usize)>,
    /// `2E × 5`: bond order one-hot (single, double, triple, aromatic) ∥ in-ring.
    pub edge_features: Tensor,
    /// Undirected bonds, each once.
    pub bonds: Vec<(usize, usize)>,
}

impl MolGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }
}

pub fn atom_features(mol: &Molecule, atom: usize) -> [f64; NODE_FEATURES] {
    let a = &mol.atoms[atom];
    let mut f = [0.0; NODE_FEATURES];
    let element = ELEMENT_SLOTS.iter().position(|&e| e == a.element).unwrap_or(10);
    f[element] = 1.0;
    f[DEGREE_OFFSET + a.degree.min(5)] = 1.0;
    f[CHARGE_OFFSET + (a.formal_charge.clamp(-2, 2) + 2) as usize] = 1.0;
    f[AROMATIC_SLOT] = f64::from(u8::from(a.aromatic));
    f[HYDROGEN_OFFSET + a.implicit_h.min(4) as usize] = 1.0;
    f[RING_SLOT] = f64::from(u8::from(a.in_ring));
    f
}

pub fn bond_features(order: BondOrder, in_ring: bool) -> [f64; EDGE_FEATURES] {
    let mut f = [0.0; EDGE_FEATURES];
    f[order.code() as usize] = 1.0;
    f[4] = f64::from(u8::from(in_ring));
    f
}

/// Node features, directed edge list and edge features of a molecule whose
/// rings have been perceived.
pub fn featurize(mol: &Molecule) -> MolGraph {
    let n = mol.atoms.len();
    let mut x = Vec::with_capacity(n * NODE_FEATURES);
    for i in 0..n {
        x.extend_from_slice(&atom_features(mol, i));
    }
    let mut edges = Vec::with_capacity(2 * mol.bonds.len());
    let mut e = Vec::with_capacity(2 * mol.bonds.len() * EDGE_FEATURES);
    let mut bonds = Vec::with_capacity(mol.bonds.len());
    for b in &mol.bonds {
        let f = bond_features(b.order, b.in_ring);
        edges.push((b.begin, b.end));
        edges.push((b.end, b.begin));
        e.extend_from_slice(&f);
        e.extend_from_slice(&f);
        bonds.push((b.begin, b.end));
    }
    MolGraph {
        node_features: Tensor::matrix(n, NODE_FEATURES, x).expect("sized above"),
        edge_features: Tensor::matrix(edges.len(), EDGE_FEATURES, e).expect("sized above"),
        edges,
        bonds,
    }
}

/// Several molecules stacked into one disjoint graph.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_features: Tensor,
    pub edge_src: Rc<[usize]>,
    pub edge_dst: Rc<[usize]>,
    pub edge_features: Tensor,
    /// Graph membership of every node.
    pub graph_id: Vec<usize>,
    pub num_graphs: usize,
    /// Block-diagonal normalized adjacency.
    pub norm_adj: Rc<SparseMatrix>,
    /// First node of each graph, plus a final entry equal to the node count.
    pub node_offsets: Vec<usize>,
    /// Undirected bonds in batch numbering.
    pub bonds: Vec<(usize, usize)>,
}

/// Symmetric normalization `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree
/// matrix of `A + I`; without self-loops `D^{-1/2} A D^{-1/2}`, leaving
/// isolated nodes with an empty row.
pub fn normalized_adjacency(n: usize, bonds: &[(usize, usize)], self_loops: bool) -> Result<SparseMatrix> {
    let mut degree = vec![if self_loops { 1.0 } else { 0.0 }; n];
    for &(a, b) in bonds {
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d: &f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut triplets = Vec::with_capacity(2 * bonds.len() + n);
    if self_loops {
        for i in 0..n {
            triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        }
    }
    for &(a, b) in bonds {
        let w = inv_sqrt[a] * inv_sqrt[b];
        triplets.push((a, b, w));
        triplets.push((b, a, w));
    }
    Ok(SparseMatrix::from_triplets(n, n, triplets)?)
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&MolGraph], self_loops: bool) -> Result<Self> {
        let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let total_edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut x = Vec::with_capacity(total_nodes * NODE_FEATURES);
        let mut e = Vec::with_capacity(total_edges * EDGE_FEATURES);
        let mut src = Vec::with_capacity(total_edges);
        let mut dst = Vec::with_capacity(total_edges);
        let mut graph_id = Vec::with_capacity(total_nodes);
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut bonds = Vec::new();
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            offsets.push(offset);
            x.extend_from_slice(g.node_features.data());
            e.extend_from_slice(g.edge_features.data());
            for &(s, t) in &g.edges {
                src.push(s + offset);
                dst.push(t + offset);
            }
            bonds.extend(g.bonds.iter().map(|&(a, b)| (a + offset, b + offset)));
            graph_id.extend(std::iter::repeat(gi).take(g.num_nodes()));
            offset += g.num_nodes();
        }
        offsets.push(offset);
        let norm_adj = normalized_adjacency(total_nodes, &bonds, self_loops)?;
        Ok(GraphBatch {
            node_features: Tensor::matrix(total_nodes, NODE_FEATURES, x)?,
            edge_src: src.into(),
            edge_dst: dst.into(),
            edge_features: Tensor::matrix(total_edges, EDGE_FEATURES, e)?,
            graph_id,
            num_graphs: graphs.len(),
            norm_adj: Rc::new(norm_adj),
            node_offsets: offsets,
            bonds,
        })
    }

    pub fn single(graph: &MolGraph, self_loops: bool) -> Result<Self> {
        GraphBatch::from_graphs(&[graph], self_loops)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph_id.len()
    }

    /// Same batch with different node features (used by perturbation analyses).
    pub fn with_node_features(&self, x: Tensor) -> GraphBatch {
        GraphBatch {
            node_features: x,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn methane_encoding() {
        let g = featurize(&parse_smiles("C").unwrap());
        let row = g.node_features.row(0);
        let hot: Vec<usize> = (0..NODE_FEATURES).filter(|&i| row[i] == 1.0).collect();
        // element C, degree 0, charge 0, four hydrogens
        assert_eq!(hot, vec![0, DEGREE_OFFSET, CHARGE_OFFSET + 2, HYDROGEN_OFFSET + 4]);
        assert_eq!(row[AROMATIC_SLOT], 0.0);
        assert_eq!(row[RING_SLOT], 0.0);
    }

    #[test]
    fn benzene_bond_encoding() {
        let g = featurize(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!(g.edge_features.row(0), &[0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn ethanol_directed_edges() {
        let g = featurize(&parse_smiles("CCO").unwrap());
        assert_eq!(g.edges, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert_eq!(g.edge_features.rows(), 4);
    }

    #[test]
    fn out_of_range_values_clip() {
        let g = featurize(&parse_smiles("[Si-3]").unwrap());
        let row = g.node_features.row(0);
        assert_eq!(row[10], 1.0);
        assert_eq!(row[CHARGE_OFFSET], 1.0);
    }

    #[test]
    fn normalized_adjacency_entries() {
        // Path 0-1-2 with self loops: degrees 2, 3, 2.
        let a = normalized_adjacency(3, &[(0, 1), (1, 2)], true).unwrap().to_dense();
        let expect = [
            [0.5, 1.0 / 6f64.sqrt(), 0.0],
            [1.0 / 6f64.sqrt(), 1.0 / 3.0, 1.0 / 6f64.sqrt()],
            [0.0, 1.0 / 6f64.sqrt(), 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.get(i, j) - expect[i][j]).abs() < 1e-15);
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
        let iso = normalized_adjacency(1, &[], false).unwrap();
        assert_eq!(iso.nnz(), 0);
    }

    #[test]
    fn batch_offsets_edges() {
        let a = featurize(&parse_smiles("CC").unwrap());
        let b = featurize(&parse_smiles("CCO").unwrap());
        let batch = GraphBatch::from_graphs(&[&a, &b], true).unwrap();
        assert_eq!(batch.graph_id, vec![0, 0, 1, 1, 1]);
        assert_eq!(batch.node_offsets, vec![0, 2, 5]);
        assert_eq!(&batch.edge_src[..], &[0, 1, 2, 3, 3, 4]);
        let dense = batch.norm_adj.to_dense();
        assert_eq!(dense.get(0, 2), 0.0);
        assert_eq!(dense.get(1, 3), 0.0);
    }
}
