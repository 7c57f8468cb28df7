use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{perceive_rings, Atom, Bond, BondOrder, Element, Molecule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("non-ASCII character at byte {0}")]
    NonAscii(usize),
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("unmatched ring-closure {0}")]
    UnmatchedRingClosure(u32),
    #[error("unknown atom symbol '{symbol}' at byte {pos}")]
    UnknownAtom { symbol: String, pos: usize },
    #[error("formal charge {0} outside [-4, 4]")]
    ChargeOutOfRange(i32),
    #[error("unexpected character '{ch}' at byte {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("bond or ring closure at byte {0} has no preceding atom")]
    DanglingBond(usize),
    #[error("atoms {0} and {1} bonded twice")]
    ParallelBond(usize, usize),
    #[error("ring closure at byte {0} bonds an atom to itself")]
    SelfBond(usize),
    #[error("unterminated bracket atom at byte {0}")]
    UnterminatedBracket(usize),
    #[error("aromatic atom {0} is not in a ring")]
    AromaticOutsideRing(usize),
    #[error("no atoms left after fragment selection")]
    EmptyResult,
}

#[derive(Debug)]
struct PendingBond {
    order: Option<BondOrder>,
    pos: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    /// Bracket atoms carry an explicit hydrogen count; organic-subset atoms get
    /// theirs from valence rules afterwards.
    explicit_h: Vec<Option<u32>>,
    bonds: Vec<Bond>,
    bonded: HashSet<(usize, usize)>,
    prev: Option<usize>,
    branches: Vec<(Option<usize>, usize)>,
    rings: HashMap<u32, (usize, Option<BondOrder>)>,
    pending: Option<PendingBond>,
}

/// Parses a SMILES string into a heavy-atom molecular graph.
///
/// Supported: organic-subset atoms (`B C N O P S F Cl Br I` and aromatic
/// `b c n o p s`), bracket atoms with isotope, chirality, hydrogen count,
/// charge and atom class, branches, ring closures (`1`-`9`, `%nn`), bond
/// symbols `- = # :` and the directional markers `/ \`. Isotopes and stereo
/// are discarded. Of dot-separated fragments only the one with the most atoms
/// is kept (the first on ties).
///
/// Implicit hydrogens of organic-subset atoms: let `s` be the sum of bond
/// valences, with aromatic bonds counted as 1, plus 1 if the atom is aromatic.
/// The target valence is the smallest default valence `>= s` (aromatic atoms
/// only consider their lowest default valence) and the hydrogen count is
/// `target - s`, or 0 if no default valence is large enough. Bracket atoms use
/// their explicit count.
///
/// Ring perception runs before returning, so `in_ring` flags are set. Bonds
/// written as aromatic that end up outside any ring are downgraded to single.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(pos) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::NonAscii(pos));
    }
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        explicit_h: Vec::new(),
        bonds: Vec::new(),
        bonded: HashSet::new(),
        prev: None,
        branches: Vec::new(),
        rings: HashMap::new(),
        pending: None,
    };
    p.run()?;
    let mut mol = p.finish(text)?;
    perceive_rings(&mut mol);
    for bond in &mut mol.bonds {
        if bond.order == BondOrder::Aromatic && !bond.in_ring {
            bond.order = BondOrder::Single;
        }
    }
    if let Some(i) = mol.atoms.iter().position(|a| a.aromatic && !a.in_ring) {
        return Err(SmilesError::AromaticOutsideRing(i));
    }
    Ok(mol)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<u8> {
        self.bytes.get(self.pos + offset).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(SmilesError::UnbalancedParens(start));
                    }
                    self.branches.push((self.prev, start));
                    self.pos += 1;
                }
                b')' => {
                    let (prev, _) = self
                        .branches
                        .pop()
                        .ok_or(SmilesError::UnbalancedParens(start))?;
                    if self.pending.is_some() {
                        return Err(SmilesError::DanglingBond(start));
                    }
                    self.prev = prev;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(SmilesError::DanglingBond(start));
                    }
                    let order = match c {
                        b'=' => Some(BondOrder::Double),
                        b'#' => Some(BondOrder::Triple),
                        b':' => Some(BondOrder::Aromatic),
                        b'-' => Some(BondOrder::Single),
                        // Directional bonds are single bonds with stereo we discard.
                        _ => None,
                    };
                    self.pending = Some(PendingBond { order, pos: start });
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure((c - b'0') as u32, start)?;
                }
                b'%' => {
                    let (d1, d2) = (self.peek_at(1), self.peek_at(2));
                    match (d1, d2) {
                        (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                            self.pos += 3;
                            self.ring_closure(((a - b'0') * 10 + (b - b'0')) as u32, start)?;
                        }
                        _ => return Err(SmilesError::UnexpectedChar { ch: '%', pos: start }),
                    }
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(SmilesError::DanglingBond(start));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom.0, atom.1)?;
                }
                _ if c.is_ascii_alphabetic() || c == b'*' => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, None)?;
                }
                _ => {
                    return Err(SmilesError::UnexpectedChar {
                        ch: c as char,
                        pos: start,
                    })
                }
            }
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParens(pos));
        }
        if let Some(p) = &self.pending {
            return Err(SmilesError::DanglingBond(p.pos));
        }
        if let Some((&digit, _)) = self.rings.iter().min_by_key(|(d, _)| **d) {
            return Err(SmilesError::UnmatchedRingClosure(digit));
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let c = self.bytes[start];
        let two = self.peek_at(1);
        let (symbol, aromatic, len) = match (c, two) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B', _) => ("B", false, 1),
            (b'C', _) => ("C", false, 1),
            (b'N', _) => ("N", false, 1),
            (b'O', _) => ("O", false, 1),
            (b'P', _) => ("P", false, 1),
            (b'S', _) => ("S", false, 1),
            (b'F', _) => ("F", false, 1),
            (b'I', _) => ("I", false, 1),
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => {
                return Err(SmilesError::UnknownAtom {
                    symbol: (c as char).to_string(),
                    pos: start,
                })
            }
        };
        self.pos += len;
        let element = Element::from_symbol(symbol).expect("organic subset symbol");
        Ok(Atom {
            element,
            formal_charge: 0,
            aromatic,
            implicit_h: 0,
            in_ring: false,
            degree: 0,
        })
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos])
                .ok()
                .and_then(|s| s.parse().ok())
        }
    }

    fn bracket_atom(&mut self) -> Result<(Atom, Option<u32>), SmilesError> {
        let open = self.pos;
        self.pos += 1;
        // Isotope: parsed and discarded.
        let _ = self.read_number();

        let sym_start = self.pos;
        let first = self.peek().ok_or(SmilesError::UnterminatedBracket(open))?;
        let (element, aromatic) = if first.is_ascii_lowercase() {
            let two = self.peek_at(1).filter(|b| b.is_ascii_lowercase());
            let candidates: [(&str, usize); 2] = match two {
                Some(b) => {
                    let s = [first, b];
                    let s = std::str::from_utf8(&s).unwrap_or("").to_string();
                    match s.as_str() {
                        "se" => [("Se", 2), ("", 0)],
                        "as" => [("As", 2), ("", 0)],
                        "te" => [("Te", 2), ("", 0)],
                        _ => [("", 0), ("", 0)],
                    }
                }
                None => [("", 0), ("", 0)],
            };
            if !candidates[0].0.is_empty() {
                self.pos += candidates[0].1;
                (Element::from_symbol(candidates[0].0).expect("aromatic symbol"), true)
            } else {
                let upper = (first.to_ascii_uppercase() as char).to_string();
                let element = Element::from_symbol(&upper)
                    .filter(|e| e.can_be_aromatic())
                    .ok_or_else(|| SmilesError::UnknownAtom {
                        symbol: (first as char).to_string(),
                        pos: sym_start,
                    })?;
                self.pos += 1;
                (element, true)
            }
        } else if first.is_ascii_uppercase() {
            let two = self.peek_at(1).filter(|b| b.is_ascii_lowercase());
            let two_sym = two.and_then(|b| {
                let s = [first, b];
                std::str::from_utf8(&s).ok().and_then(Element::from_symbol)
            });
            if let Some(e) = two_sym {
                self.pos += 2;
                (e, false)
            } else {
                let s = (first as char).to_string();
                let e = Element::from_symbol(&s).ok_or(SmilesError::UnknownAtom {
                    symbol: s,
                    pos: sym_start,
                })?;
                self.pos += 1;
                (e, false)
            }
        } else {
            return Err(SmilesError::UnknownAtom {
                symbol: (first as char).to_string(),
                pos: sym_start,
            });
        };

        // Chirality: '@', '@@', or '@TH1'-style classes; all discarded.
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            }
            while self.peek().is_some_and(|b| b.is_ascii_uppercase() && b != b'H') {
                self.pos += 1;
            }
            let _ = self.read_number();
        }

        let mut hcount = 0;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hcount = self.read_number().unwrap_or(1);
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if !(-4..=4).contains(&charge) {
            return Err(SmilesError::ChargeOutOfRange(charge));
        }

        // Atom class.
        if self.peek() == Some(b':') {
            self.pos += 1;
            let _ = self.read_number();
        }

        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(c) => {
                return Err(SmilesError::UnexpectedChar {
                    ch: c as char,
                    pos: self.pos,
                })
            }
            None => return Err(SmilesError::UnterminatedBracket(open)),
        }

        Ok((
            Atom {
                element,
                formal_charge: charge,
                aromatic,
                implicit_h: hcount,
                in_ring: false,
                degree: 0,
            },
            Some(hcount),
        ))
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, pos: usize) -> Result<(), SmilesError> {
        if a == b {
            return Err(SmilesError::SelfBond(pos));
        }
        let key = (a.min(b), a.max(b));
        if !self.bonded.insert(key) {
            return Err(SmilesError::ParallelBond(key.0, key.1));
        }
        self.bonds.push(Bond {
            begin: a,
            end: b,
            order,
            in_ring: false,
        });
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, explicit_h: Option<u32>) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.explicit_h.push(explicit_h);
        let pending = self.pending.take();
        if let Some(prev) = self.prev {
            let pos = pending.as_ref().map_or(self.pos, |p| p.pos);
            let order = pending
                .and_then(|p| p.order)
                .unwrap_or_else(|| self.default_order(prev, idx));
            self.add_bond(prev, idx, order, pos)?;
        } else if let Some(p) = pending {
            return Err(SmilesError::DanglingBond(p.pos));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, digit: u32, pos: usize) -> Result<(), SmilesError> {
        let cur = self.prev.ok_or(SmilesError::DanglingBond(pos))?;
        let pending = self.pending.take().and_then(|p| p.order);
        match self.rings.remove(&digit) {
            Some((other, open_order)) => {
                let order = pending
                    .or(open_order)
                    .unwrap_or_else(|| self.default_order(other, cur));
                self.add_bond(other, cur, order, pos)
            }
            None => {
                self.rings.insert(digit, (cur, pending));
                Ok(())
            }
        }
    }

    fn finish(self, text: &str) -> Result<Molecule, SmilesError> {
        let n = self.atoms.len();
        if n == 0 {
            return Err(SmilesError::EmptyResult);
        }
        // Connected components; keep the largest (first on ties).
        let mut comp = vec![usize::MAX; n];
        let mut adj = vec![Vec::new(); n];
        for b in &self.bonds {
            adj[b.begin].push(b.end);
            adj[b.end].push(b.begin);
        }
        let mut sizes = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let c = sizes.len();
            let mut stack = vec![start];
            comp[start] = c;
            let mut size = 0;
            while let Some(a) = stack.pop() {
                size += 1;
                for &nb in &adj[a] {
                    if comp[nb] == usize::MAX {
                        comp[nb] = c;
                        stack.push(nb);
                    }
                }
            }
            sizes.push(size);
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .ok_or(SmilesError::EmptyResult)?;

        let mut remap = vec![usize::MAX; n];
        let mut atoms = Vec::with_capacity(sizes[best]);
        let mut explicit_h = Vec::with_capacity(sizes[best]);
        for (i, atom) in self.atoms.into_iter().enumerate() {
            if comp[i] == best {
                remap[i] = atoms.len();
                atoms.push(atom);
                explicit_h.push(self.explicit_h[i]);
            }
        }
        let bonds: Vec<Bond> = self
            .bonds
            .into_iter()
            .filter(|b| comp[b.begin] == best)
            .map(|b| Bond {
                begin: remap[b.begin],
                end: remap[b.end],
                ..b
            })
            .collect();

        let mut mol = Molecule {
            atoms,
            bonds,
            source_smiles: text.to_string(),
        };
        mol.recompute_degrees();
        assign_implicit_hydrogens(&mut mol, &explicit_h);
        Ok(mol)
    }
}

fn assign_implicit_hydrogens(mol: &mut Molecule, explicit_h: &[Option<u32>]) {
    let mut bond_sum = vec![0u32; mol.atoms.len()];
    for b in &mol.bonds {
        bond_sum[b.begin] += b.order.valence();
        bond_sum[b.end] += b.order.valence();
    }
    for (i, atom) in mol.atoms.iter_mut().enumerate() {
        atom.implicit_h = match explicit_h[i] {
            Some(h) => h,
            None => {
                let sum = bond_sum[i] + u32::from(atom.aromatic);
                let valences = atom.element.default_valences();
                let valences = if atom.aromatic {
                    &valences[..valences.len().min(1)]
                } else {
                    valences
                };
                valences
                    .iter()
                    .find(|&&v| v >= sum)
                    .map_or(0, |&v| v - sum)
            }
        };
    }
}
