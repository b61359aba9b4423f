//! Fixed one-hot featurization of atoms and bonds.
//!
//! Node row layout (27 columns):
//! element (10 vocabulary slots + other), degree 0..=5 (clipped),
//! formal charge -2..=+2 (clipped), hybridization (sp, sp2, sp3, other),
//! aromatic flag.
//!
//! Edge row layout (5 columns): bond order (single, double, triple,
//! aromatic), in-ring flag.

use crate::graph::{AtomRecord, BondOrder, BondRecord, Hybridization, MolecularGraph};

pub const ELEMENT_SLOTS: usize = 11;
pub const DEGREE_SLOTS: usize = 6;
pub const CHARGE_SLOTS: usize = 5;
pub const HYBRIDIZATION_SLOTS: usize = 4;
pub const NODE_FEATURE_DIM: usize = ELEMENT_SLOTS + DEGREE_SLOTS + CHARGE_SLOTS + HYBRIDIZATION_SLOTS + 1;
pub const EDGE_FEATURE_DIM: usize = 5;

/// Column ranges of the node feature blocks, in layout order.
pub const NODE_BLOCKS: [(usize, usize); 5] = [
    (0, ELEMENT_SLOTS),
    (ELEMENT_SLOTS, DEGREE_SLOTS),
    (ELEMENT_SLOTS + DEGREE_SLOTS, CHARGE_SLOTS),
    (ELEMENT_SLOTS + DEGREE_SLOTS + CHARGE_SLOTS, HYBRIDIZATION_SLOTS),
    (NODE_FEATURE_DIM - 1, 1),
];

pub fn atom_features(atom: &AtomRecord) -> [f64; NODE_FEATURE_DIM] {
    let mut row = [0.0; NODE_FEATURE_DIM];
    let element = atom.element.vocabulary_index().unwrap_or(ELEMENT_SLOTS - 1);
    row[element] = 1.0;
    row[NODE_BLOCKS[1].0 + atom.degree.min(DEGREE_SLOTS - 1)] = 1.0;
    row[NODE_BLOCKS[2].0 + (atom.formal_charge.clamp(-2, 2) + 2) as usize] = 1.0;
    let hyb = match atom.hybridization {
        Hybridization::Sp => 0,
        Hybridization::Sp2 => 1,
        Hybridization::Sp3 => 2,
        Hybridization::Other => 3,
    };
    row[NODE_BLOCKS[3].0 + hyb] = 1.0;
    if atom.aromatic {
        row[NODE_FEATURE_DIM - 1] = 1.0;
    }
    row
}

pub fn bond_features(bond: &BondRecord) -> [f64; EDGE_FEATURE_DIM] {
    let mut row = [0.0; EDGE_FEATURE_DIM];
    let order = match bond.order {
        BondOrder::Single => 0,
        BondOrder::Double => 1,
        BondOrder::Triple => 2,
        BondOrder::Aromatic => 3,
    };
    row[order] = 1.0;
    if bond.in_ring {
        row[4] = 1.0;
    }
    row
}

/// Fills the node and edge feature matrices, replacing any existing ones.
pub fn featurize_graph(mut graph: MolecularGraph) -> MolecularGraph {
    graph.node_features = graph.atoms.iter().flat_map(atom_features).collect();
    graph.edge_features = graph.bonds.iter().flat_map(|b| bond_features(&b.record)).collect();
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::Element;

    #[test]
    fn dimensions() {
        assert_eq!(NODE_FEATURE_DIM, 27);
        assert_eq!(NODE_BLOCKS.iter().map(|b| b.1).sum::<usize>(), NODE_FEATURE_DIM);
    }

    #[test]
    fn clipping_and_other_slot() {
        let atom = AtomRecord {
            element: Element::from_symbol("Fe").unwrap(),
            degree: 8,
            formal_charge: 3,
            aromatic: false,
            hybridization: Hybridization::Other,
        };
        let row = atom_features(&atom);
        assert_eq!(row[10], 1.0);
        assert_eq!(row[11 + 5], 1.0);
        assert_eq!(row[17 + 4], 1.0);
        assert_eq!(row[22 + 3], 1.0);
        assert_eq!(row[26], 0.0);
        assert_eq!(row.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn aromatic_ring_bond() {
        let row = bond_features(&BondRecord {
            order: BondOrder::Aromatic,
            in_ring: true,
        });
        assert_eq!(row, [0.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
