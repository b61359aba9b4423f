//! Synthetic molecules and labelled pair corpora with known ground truth.
//!
//! Molecules are random valence-respecting heavy-atom graphs over C, N, O
//! and S with optional ring closures and C=C / C=N double bonds. A
//! "carbonyl" molecule additionally carries exactly one C=O group; all
//! others contain no C=O bond at all.

use mpnp_chem::{molecule, MolecularGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Example, PairDataset};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Atom {
    C,
    N,
    O,
    S,
}

impl Atom {
    fn valence(self) -> usize {
        match self {
            Atom::C => 4,
            Atom::N => 3,
            Atom::O | Atom::S => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Atom::C => "C",
            Atom::N => "N",
            Atom::O => "O",
            Atom::S => "S",
        }
    }
}

struct Draft {
    atoms: Vec<Atom>,
    /// `(u, v, order)`.
    bonds: Vec<(usize, usize, usize)>,
}

impl Draft {
    fn used(&self, a: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.0 == a || b.1 == a)
            .map(|b| b.2)
            .sum()
    }

    fn free(&self, a: usize) -> usize {
        self.atoms[a].valence() - self.used(a)
    }

    fn bonded(&self, a: usize, b: usize) -> bool {
        self.bonds.iter().any(|x| (x.0 == a && x.1 == b) || (x.0 == b && x.1 == a))
    }
}

/// Writes a connected draft as SMILES: spanning-tree bonds become chain and
/// branch bonds, the rest ring closures.
fn write_smiles(d: &Draft) -> String {
    let n = d.atoms.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, &(u, v, _)) in d.bonds.iter().enumerate() {
        adj[u].push((v, i));
        adj[v].push((u, i));
    }
    // DFS tree from atom 0
    let mut parent_bond = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut tree = vec![false; d.bonds.len()];
    while let Some(a) = stack.pop() {
        for &(b, bi) in adj[a].iter().rev() {
            if !seen[b] {
                seen[b] = true;
                parent_bond[b] = bi;
                tree[bi] = true;
                children[a].push((b, bi));
                stack.push(b);
            }
        }
    }
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut label = 0;
    for (bi, &(u, v, order)) in d.bonds.iter().enumerate() {
        if !tree[bi] {
            label += 1;
            closures[u].push((label, order));
            closures[v].push((label, order));
        }
    }
    let sym = |order: usize| match order {
        2 => "=",
        3 => "#",
        _ => "",
    };
    fn emit(
        a: usize,
        d: &Draft,
        children: &[Vec<(usize, usize)>],
        closures: &[Vec<(usize, usize)>],
        sym: &dyn Fn(usize) -> &'static str,
        out: &mut String,
    ) {
        out.push_str(d.atoms[a].symbol());
        for &(label, order) in &closures[a] {
            out.push_str(sym(order));
            if label < 10 {
                out.push_str(&label.to_string());
            } else {
                out.push_str(&format!("%{label:02}"));
            }
        }
        let kids = &children[a];
        for (k, &(c, bi)) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            out.push_str(sym(d.bonds[bi].2));
            emit(c, d, children, closures, sym, out);
            if !last {
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    emit(0, d, &children, &closures, &sym, &mut out);
    out
}

/// Options for [`random_smiles`].
#[derive(Clone, Copy, Debug)]
pub struct MoleculeSpec {
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Probability of attempting one extra ring-closing bond.
    pub ring_probability: f64,
    /// Probability of upgrading one eligible C–C or C–N bond to double.
    pub double_bond_probability: f64,
    pub carbonyl: bool,
}

impl Default for MoleculeSpec {
    fn default() -> Self {
        MoleculeSpec {
            min_atoms: 4,
            max_atoms: 10,
            ring_probability: 0.4,
            double_bond_probability: 0.3,
            carbonyl: false,
        }
    }
}

/// A random molecule as SMILES. The atom count includes the carbonyl
/// oxygen when one is requested.
pub fn random_smiles(rng: &mut impl Rng, spec: &MoleculeSpec) -> String {
    loop {
        if let Some(s) = try_random_smiles(rng, spec) {
            return s;
        }
    }
}

fn try_random_smiles(rng: &mut impl Rng, spec: &MoleculeSpec) -> Option<String> {
    let total = rng.random_range(spec.min_atoms..=spec.max_atoms);
    let skeleton = if spec.carbonyl { total.saturating_sub(1).max(1) } else { total };
    let mut d = Draft {
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    d.atoms.push(Atom::C);
    for i in 1..skeleton {
        let atom = match rng.random_range(0..10) {
            0..=5 => Atom::C,
            6 | 7 => Atom::N,
            8 => Atom::O,
            _ => Atom::S,
        };
        let candidates: Vec<usize> = (0..i).filter(|&p| d.free(p) >= 1).collect();
        if candidates.is_empty() {
            return None;
        }
        let p = candidates[rng.random_range(0..candidates.len())];
        d.atoms.push(atom);
        d.bonds.push((p, i, 1));
    }
    if skeleton >= 4 && rng.random_bool(spec.ring_probability) {
        let a = rng.random_range(0..skeleton);
        let b = rng.random_range(0..skeleton);
        if a != b && !d.bonded(a, b) && d.free(a) >= 1 && d.free(b) >= 1 {
            d.bonds.push((a.min(b), a.max(b), 1));
        }
    }
    if rng.random_bool(spec.double_bond_probability) {
        let eligible: Vec<usize> = (0..d.bonds.len())
            .filter(|&i| {
                let (u, v, o) = d.bonds[i];
                let pair = (d.atoms[u], d.atoms[v]);
                o == 1
                    && matches!(pair, (Atom::C, Atom::C) | (Atom::C, Atom::N) | (Atom::N, Atom::C))
                    && d.free(u) >= 1
                    && d.free(v) >= 1
            })
            .collect();
        if !eligible.is_empty() {
            let i = eligible[rng.random_range(0..eligible.len())];
            d.bonds[i].2 = 2;
        }
    }
    if spec.carbonyl {
        let hosts: Vec<usize> = (0..d.atoms.len())
            .filter(|&a| d.atoms[a] == Atom::C && d.free(a) >= 2)
            .collect();
        if hosts.is_empty() {
            return None;
        }
        let host = hosts[rng.random_range(0..hosts.len())];
        d.atoms.push(Atom::O);
        let o = d.atoms.len() - 1;
        d.bonds.push((host, o, 2));
    }
    Some(write_smiles(&d))
}

/// Parses and featurizes a list of generated SMILES.
pub fn featurize_all(smiles: &[String]) -> Result<Vec<MolecularGraph>> {
    smiles
        .iter()
        .map(|s| {
            molecule(s).map_err(|source| CoreError::Smiles {
                smiles: s.clone(),
                source,
            })
        })
        .collect()
}

/// A generated corpus with its SMILES kept for inspection.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub smiles: Vec<String>,
    pub dataset: PairDataset,
    /// Ground-truth property of each molecule (carbonyl presence).
    pub carbonyl: Vec<bool>,
}

/// `count` molecules, each a carbonyl molecule with probability
/// `carbonyl_fraction`.
pub fn molecule_pool(rng: &mut impl Rng, count: usize, carbonyl_fraction: f64, spec: &MoleculeSpec) -> (Vec<String>, Vec<bool>) {
    let mut smiles = Vec::with_capacity(count);
    let mut flags = Vec::with_capacity(count);
    for _ in 0..count {
        let carbonyl = rng.random_bool(carbonyl_fraction);
        smiles.push(random_smiles(rng, &MoleculeSpec { carbonyl, ..*spec }));
        flags.push(carbonyl);
    }
    (smiles, flags)
}

/// Distinct unordered pairs `(i, j)`, `i < j`, drawn uniformly.
fn distinct_pairs(rng: &mut impl Rng, molecules: usize, count: usize) -> Vec<(usize, usize)> {
    let max = molecules * (molecules - 1) / 2;
    let count = count.min(max);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.random_range(0..molecules);
        let b = rng.random_range(0..molecules);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            out.push(key);
        }
    }
    out
}

/// Single-relation corpus where `y = 1` iff both molecules carry a
/// carbonyl. `label_noise` is the probability each label is flipped.
pub fn carbonyl_corpus(molecules: usize, pairs: usize, label_noise: f64, seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // ~0.7² ≈ 0.5 of pairs are positive
    let (smiles, carbonyl) = molecule_pool(&mut rng, molecules, 0.7, &MoleculeSpec::default());
    let graphs = featurize_all(&smiles)?;
    let examples = distinct_pairs(&mut rng, molecules, pairs)
        .into_iter()
        .map(|(a, b)| {
            let clean = carbonyl[a] && carbonyl[b];
            let flip = label_noise > 0.0 && rng.random_bool(label_noise);
            Example {
                left: a,
                right: b,
                relation: 0,
                label: if clean != flip { 1.0 } else { 0.0 },
            }
        })
        .collect();
    Ok(SyntheticCorpus {
        smiles,
        dataset: PairDataset::new(graphs, examples, 1)?,
        carbonyl,
    })
}

/// The relation type of a pair in [`relation_corpus`]: which of the two
/// molecules carry a carbonyl, as a two-bit code.
pub fn true_relation(carbonyl: &[bool], left: usize, right: usize) -> usize {
    2 * carbonyl[left] as usize + carbonyl[right] as usize
}

/// Four-relation corpus. Each sampled pair yields one positive example
/// under its true relation ([`true_relation`]) and one negative under a
/// uniformly chosen wrong relation, so the label is decided by the
/// relation alone.
pub fn relation_corpus(molecules: usize, pairs: usize, seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (smiles, carbonyl) = molecule_pool(&mut rng, molecules, 0.5, &MoleculeSpec::default());
    let graphs = featurize_all(&smiles)?;
    let mut examples = Vec::with_capacity(2 * pairs);
    for (a, b) in distinct_pairs(&mut rng, molecules, pairs) {
        let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let truth = true_relation(&carbonyl, a, b);
        let wrong = (truth + rng.random_range(1..4)) % 4;
        examples.push(Example {
            left: a,
            right: b,
            relation: truth,
            label: 1.0,
        });
        examples.push(Example {
            left: a,
            right: b,
            relation: wrong,
            label: 0.0,
        });
    }
    Ok(SyntheticCorpus {
        smiles,
        dataset: PairDataset::new(graphs, examples, 4)?,
        carbonyl,
    })
}

/// Random labelled pairs over random molecules (no learnable rule).
pub fn random_label_corpus(molecules: usize, pairs: usize, spec: &MoleculeSpec, seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (smiles, carbonyl) = molecule_pool(&mut rng, molecules, 0.5, spec);
    let graphs = featurize_all(&smiles)?;
    let examples = distinct_pairs(&mut rng, molecules, pairs)
        .into_iter()
        .map(|(a, b)| Example {
            left: a,
            right: b,
            relation: 0,
            label: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        })
        .collect();
    Ok(SyntheticCorpus {
        smiles,
        dataset: PairDataset::new(graphs, examples, 1)?,
        carbonyl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_molecules_parse_and_obey_the_carbonyl_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..300 {
            let carbonyl = i % 2 == 0;
            let spec = MoleculeSpec {
                carbonyl,
                ..MoleculeSpec::default()
            };
            let s = random_smiles(&mut rng, &spec);
            let g = molecule(&s).unwrap_or_else(|e| panic!("{s}: {e}"));
            assert_eq!(g.contains_carbonyl(), carbonyl, "{s}");
            assert!(g.num_atoms() >= spec.min_atoms && g.num_atoms() <= spec.max_atoms, "{s}");
        }
    }

    #[test]
    fn carbonyl_labels_follow_the_rule() {
        let c = carbonyl_corpus(50, 100, 0.0, 1).unwrap();
        for e in &c.dataset.examples {
            let both = c.dataset.graphs[e.left].contains_carbonyl() && c.dataset.graphs[e.right].contains_carbonyl();
            assert_eq!(e.label == 1.0, both);
        }
        let positives = c.dataset.examples.iter().filter(|e| e.label == 1.0).count();
        assert!(positives > 20 && positives < 80, "{positives}");
    }

    #[test]
    fn relation_corpus_balances_labels() {
        let c = relation_corpus(40, 60, 2).unwrap();
        assert_eq!(c.dataset.len(), 120);
        for pair in c.dataset.examples.chunks(2) {
            assert_eq!(pair[0].relation, true_relation(&c.carbonyl, pair[0].left, pair[0].right));
            assert_ne!(pair[1].relation, pair[0].relation);
            assert_eq!((pair[0].label, pair[1].label), (1.0, 0.0));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = carbonyl_corpus(30, 40, 0.2, 9).unwrap();
        let b = carbonyl_corpus(30, 40, 0.2, 9).unwrap();
        assert_eq!(a.smiles, b.smiles);
        assert_eq!(a.dataset, b.dataset);
    }
}
