use mpnp_chem::MolecularGraph;

use crate::error::{CoreError, Result};
use crate::model::PairBatch;

/// One labelled drug pair; `left`/`right` index [`PairDataset::graphs`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub left: usize,
    pub right: usize,
    pub relation: usize,
    pub label: f64,
}

/// Featurized molecules plus labelled pairs over them.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub graphs: Vec<MolecularGraph>,
    pub examples: Vec<Example>,
    pub relations: usize,
}

impl PairDataset {
    pub fn new(graphs: Vec<MolecularGraph>, examples: Vec<Example>, relations: usize) -> Result<Self> {
        let d = PairDataset {
            graphs,
            examples,
            relations,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.examples.iter().enumerate() {
            if e.left >= self.graphs.len() || e.right >= self.graphs.len() {
                return Err(CoreError::Config(format!(
                    "example {i} references drug {} of {}",
                    e.left.max(e.right),
                    self.graphs.len()
                )));
            }
            if e.relation >= self.relations {
                return Err(CoreError::UnknownRelation {
                    id: e.relation,
                    count: self.relations,
                });
            }
            if e.label != 0.0 && e.label != 1.0 {
                return Err(CoreError::Config(format!("example {i} has label {}", e.label)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn pair_batch(&self, indices: &[usize]) -> PairBatch<'_> {
        let ex = indices.iter().map(|&i| &self.examples[i]);
        PairBatch {
            left: ex.clone().map(|e| &self.graphs[e.left]).collect(),
            right: ex.clone().map(|e| &self.graphs[e.right]).collect(),
            relations: ex.map(|e| e.relation).collect(),
        }
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.examples[i].label).collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.examples.len()).collect()
    }
}
