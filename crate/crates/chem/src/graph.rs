use crate::element::Element;
use crate::features::{EDGE_FEATURE_DIM, NODE_FEATURE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomRecord {
    pub element: Element,
    /// Number of incident heavy-atom bonds.
    pub degree: usize,
    pub formal_charge: i32,
    pub aromatic: bool,
    pub hybridization: Hybridization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BondRecord {
    pub order: BondOrder,
    pub in_ring: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub u: usize,
    pub v: usize,
    pub record: BondRecord,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.u == atom {
            self.v
        } else {
            self.u
        }
    }

    pub fn touches(&self, atom: usize) -> bool {
        self.u == atom || self.v == atom
    }
}

/// A single connected heavy-atom molecule.
///
/// Feature matrices are row-major with [`NODE_FEATURE_DIM`] and
/// [`EDGE_FEATURE_DIM`] columns and stay empty until featurized.
#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGraph {
    pub atoms: Vec<AtomRecord>,
    pub bonds: Vec<Bond>,
    pub node_features: Vec<f64>,
    pub edge_features: Vec<f64>,
}

impl MolecularGraph {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_featurized(&self) -> bool {
        self.node_features.len() == self.atoms.len() * NODE_FEATURE_DIM
            && self.edge_features.len() == self.bonds.len() * EDGE_FEATURE_DIM
            && !self.atoms.is_empty()
    }

    pub fn node_feature_row(&self, atom: usize) -> &[f64] {
        &self.node_features[atom * NODE_FEATURE_DIM..(atom + 1) * NODE_FEATURE_DIM]
    }

    pub fn edge_feature_row(&self, bond: usize) -> &[f64] {
        &self.edge_features[bond * EDGE_FEATURE_DIM..(bond + 1) * EDGE_FEATURE_DIM]
    }

    /// Bond indices incident to each atom, in bond order.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.atoms.len()];
        for (b, bond) in self.bonds.iter().enumerate() {
            inc[bond.u].push(b);
            inc[bond.v].push(b);
        }
        inc
    }

    /// Atom neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bond in &self.bonds {
            adj[bond.u].push(bond.v);
            adj[bond.v].push(bond.u);
        }
        adj
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.bonds
            .iter()
            .position(|bond| (bond.u == a && bond.v == b) || (bond.u == b && bond.v == a))
    }

    /// True when some carbon carries a double bond to an oxygen.
    pub fn contains_carbonyl(&self) -> bool {
        self.bonds.iter().any(|b| {
            b.record.order == BondOrder::Double && {
                let (x, y) = (self.atoms[b.u].element, self.atoms[b.v].element);
                (x == Element::C && y == Element::O) || (x == Element::O && y == Element::C)
            }
        })
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`. Bond order
    /// is kept; feature rows move with their atoms.
    ///
    /// Panics if `perm` is not a permutation of `0..num_atoms`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let n = self.atoms.len();
        assert_eq!(perm.len(), n, "permutation length");
        let mut seen = vec![false; n];
        for &p in perm {
            assert!(p < n && !seen[p], "not a permutation");
            seen[p] = true;
        }
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                u: perm[b.u],
                v: perm[b.v],
                record: b.record,
            })
            .collect();
        let mut node_features = self.node_features.clone();
        if self.node_features.len() == n * NODE_FEATURE_DIM {
            for (old, &new) in perm.iter().enumerate() {
                node_features[new * NODE_FEATURE_DIM..(new + 1) * NODE_FEATURE_DIM]
                    .copy_from_slice(self.node_feature_row(old));
            }
        }
        MolecularGraph {
            atoms,
            bonds,
            node_features,
            edge_features: self.edge_features.clone(),
        }
    }
}
