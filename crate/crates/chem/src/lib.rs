//! Heavy-atom molecular graphs from a subset of SMILES.
//!
//! [`parse_smiles`] builds a [`MolecularGraph`] (atoms, bonds, ring flags,
//! hybridization classes); [`featurize_graph`] fills its node and edge
//! feature matrices with the one-hot encodings described in [`features`].

mod element;
pub mod features;
mod graph;
mod rings;
mod smiles;

pub use element::Element;
pub use features::{featurize_graph, EDGE_FEATURE_DIM, NODE_FEATURE_DIM};
pub use graph::{AtomRecord, Bond, BondOrder, BondRecord, Hybridization, MolecularGraph};
pub use rings::bridges;
pub use smiles::{parse_smiles, SmilesError, SmilesErrorKind};

/// Parses and featurizes in one step.
pub fn molecule(smiles: &str) -> Result<MolecularGraph, SmilesError> {
    parse_smiles(smiles).map(featurize_graph)
}
