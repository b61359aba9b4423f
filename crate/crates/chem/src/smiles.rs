//! SMILES subset parser.
//!
//! Supported: organic-subset atoms (`B C N O P S F Cl Br I`), their aromatic
//! lowercase forms (`b c n o p s`), bracket atoms with isotope, chirality,
//! hydrogen count, charge and class (only element, aromaticity and charge are
//! kept), bond symbols `- = # :`, directional bonds `/ \` (read as single),
//! branches and ring closures `0-9` / `%nn`. Hydrogens are implicit and never
//! become nodes. Dot-separated fragments are rejected.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::element::{Element, VOCABULARY};
use crate::graph::{AtomRecord, Bond, BondOrder, BondRecord, Hybridization, MolecularGraph};
use crate::rings::bridges;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("empty input")]
    Empty,
    #[error("non-ASCII character")]
    NonAscii,
    #[error("unbalanced parenthesis")]
    UnbalancedParenthesis,
    #[error("ring-closure label {0} is never closed")]
    UnmatchedRingClosure(u32),
    #[error("unknown atom symbol {0:?}")]
    UnknownAtom(String),
    #[error("multiple fragments ('.') are not supported")]
    MultipleFragments,
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("bond symbol without a following atom")]
    DanglingBond,
    #[error("branch or ring closure before any atom")]
    MissingAtom,
    #[error("unterminated bracket atom")]
    UnterminatedBracket,
    #[error("duplicate bond between the same pair of atoms")]
    DuplicateBond,
    #[error("ring closure bonds an atom to itself")]
    SelfBond,
    #[error("ring-closure bond symbols disagree")]
    ConflictingRingBond,
    #[error("aromatic atom outside any ring")]
    AromaticOutsideRing,
    #[error("aromatic bond between non-aromatic atoms")]
    AromaticBondMismatch,
}

/// Parse failure with the byte offset it was detected at.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("SMILES error at position {position}: {kind}")]
pub struct SmilesError {
    pub position: usize,
    pub kind: SmilesErrorKind,
}

fn err<T>(position: usize, kind: SmilesErrorKind) -> Result<T, SmilesError> {
    Err(SmilesError { position, kind })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondSymbol {
    fn order(self) -> BondOrder {
        match self {
            BondSymbol::Single => BondOrder::Single,
            BondSymbol::Double => BondOrder::Double,
            BondSymbol::Triple => BondOrder::Triple,
            BondSymbol::Aromatic => BondOrder::Aromatic,
        }
    }
}

struct ParsedAtom {
    element: Element,
    aromatic: bool,
    charge: i32,
    bracket: bool,
    position: usize,
}

struct RawBond {
    u: usize,
    v: usize,
    order: BondOrder,
    /// Order came from context rather than a bond symbol.
    implicit: bool,
    position: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<ParsedAtom>,
    bonds: Vec<RawBond>,
}

const AROMATIC_ORGANIC: [(&str, &str); 6] = [("b", "B"), ("c", "C"), ("n", "N"), ("o", "O"), ("p", "P"), ("s", "S")];
const AROMATIC_BRACKET: [(&str, &str); 8] = [
    ("se", "Se"),
    ("as", "As"),
    ("b", "B"),
    ("c", "C"),
    ("n", "N"),
    ("o", "O"),
    ("p", "P"),
    ("s", "S"),
];

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn add_bond(&mut self, u: usize, v: usize, symbol: Option<BondSymbol>, position: usize) -> Result<(), SmilesError> {
        if u == v {
            return err(position, SmilesErrorKind::SelfBond);
        }
        if self
            .bonds
            .iter()
            .any(|b| (b.u == u && b.v == v) || (b.u == v && b.v == u))
        {
            return err(position, SmilesErrorKind::DuplicateBond);
        }
        let (order, implicit) = match symbol {
            Some(s) => (s.order(), false),
            None if self.atoms[u].aromatic && self.atoms[v].aromatic => (BondOrder::Aromatic, true),
            None => (BondOrder::Single, true),
        };
        self.bonds.push(RawBond {
            u,
            v,
            order,
            implicit,
            position,
        });
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<ParsedAtom, SmilesError> {
        let start = self.pos;
        let rest = &self.text[self.pos..];
        for two in ["Cl", "Br"] {
            if rest.starts_with(two.as_bytes()) {
                self.pos += 2;
                return Ok(ParsedAtom {
                    element: Element::from_symbol(two).expect("organic symbol"),
                    aromatic: false,
                    charge: 0,
                    bracket: false,
                    position: start,
                });
            }
        }
        let c = rest[0] as char;
        let one = c.to_string();
        if VOCABULARY.contains(&one.as_str()) {
            self.pos += 1;
            return Ok(ParsedAtom {
                element: Element::from_symbol(&one).expect("organic symbol"),
                aromatic: false,
                charge: 0,
                bracket: false,
                position: start,
            });
        }
        if let Some((_, upper)) = AROMATIC_ORGANIC.iter().find(|(l, _)| *l == one) {
            self.pos += 1;
            return Ok(ParsedAtom {
                element: Element::from_symbol(upper).expect("organic symbol"),
                aromatic: true,
                charge: 0,
                bracket: false,
                position: start,
            });
        }
        // Report the longest plausible symbol.
        let mut sym = one;
        if let Some(&n) = rest.get(1) {
            if n.is_ascii_lowercase() && c.is_ascii_uppercase() {
                sym.push(n as char);
            }
        }
        err(start, SmilesErrorKind::UnknownAtom(sym))
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| {
            std::str::from_utf8(&self.text[start..self.pos])
                .expect("ascii")
                .parse()
                .unwrap_or(u32::MAX)
        })
    }

    fn bracket_atom(&mut self) -> Result<ParsedAtom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let close = match self.text[self.pos..].iter().position(|&c| c == b']') {
            Some(off) => self.pos + off,
            None => return err(open, SmilesErrorKind::UnterminatedBracket),
        };
        // isotope
        self.digits();
        let sym_start = self.pos;
        let rest = &self.text[self.pos..close];
        let (element, aromatic, len) = if let Some((l, u)) =
            AROMATIC_BRACKET.iter().find(|(l, _)| rest.starts_with(l.as_bytes()))
        {
            (Element::from_symbol(u), true, l.len())
        } else {
            let two = (rest.len() >= 2 && rest[0].is_ascii_uppercase() && rest[1].is_ascii_lowercase())
                .then(|| std::str::from_utf8(&rest[..2]).expect("ascii"))
                .and_then(|s| Element::from_symbol(s).map(|e| (e, 2)));
            match two {
                Some((e, l)) => (Some(e), false, l),
                None => {
                    let one = rest
                        .first()
                        .filter(|c| c.is_ascii_uppercase())
                        .and_then(|&c| Element::from_symbol(&(c as char).to_string()));
                    (one, false, 1)
                }
            }
        };
        let Some(element) = element else {
            let shown: String = rest
                .iter()
                .take_while(|c| c.is_ascii_alphabetic())
                .map(|&c| c as char)
                .collect();
            return err(sym_start, SmilesErrorKind::UnknownAtom(shown));
        };
        self.pos += len;

        // chirality
        while self.peek() == Some(b'@') {
            self.pos += 1;
        }
        if self.pos < close && self.text[self.pos].is_ascii_uppercase() && self.text[self.pos] != b'H' {
            // @TH1, @AL2 and similar chirality classes
            while self.pos < close && self.text[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
        }
        // hydrogen count
        if self.peek() == Some(b'H') {
            self.pos += 1;
            self.digits();
        }
        // charge
        let mut charge = 0i32;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            let mut magnitude = 1;
            if let Some(d) = self.digits() {
                magnitude = d as i32;
            } else {
                while self.peek() == Some(sign) {
                    magnitude += 1;
                    self.pos += 1;
                }
            }
            charge = unit * magnitude;
        }
        // atom class
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.digits();
        }
        if self.pos != close {
            return err(self.pos, SmilesErrorKind::UnexpectedChar(self.text[self.pos] as char));
        }
        self.pos = close + 1;
        Ok(ParsedAtom {
            element,
            aromatic,
            charge,
            bracket: true,
            position: open,
        })
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let at = self.pos;
        if self.peek() == Some(b'%') {
            self.pos += 1;
            let digits = self.text.get(self.pos..self.pos + 2);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 2;
                    Ok(std::str::from_utf8(d).expect("ascii").parse().expect("two digits"))
                }
                _ => err(at, SmilesErrorKind::UnexpectedChar('%')),
            }
        } else {
            let d = self.text[self.pos] - b'0';
            self.pos += 1;
            Ok(d as u32)
        }
    }

    fn parse(mut self) -> Result<(Vec<ParsedAtom>, Vec<RawBond>), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondSymbol, usize)> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        let mut rings: BTreeMap<u32, (usize, Option<BondSymbol>, usize)> = BTreeMap::new();

        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return err(at, SmilesErrorKind::MissingAtom);
                    };
                    if pending.is_some() {
                        return err(at, SmilesErrorKind::DanglingBond);
                    }
                    branches.push((p, at));
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return err(at, SmilesErrorKind::DanglingBond);
                    }
                    match branches.pop() {
                        Some((p, _)) => prev = Some(p),
                        None => return err(at, SmilesErrorKind::UnbalancedParenthesis),
                    }
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() {
                        return err(at, SmilesErrorKind::UnexpectedChar(c as char));
                    }
                    if prev.is_none() {
                        return err(at, SmilesErrorKind::MissingAtom);
                    }
                    let sym = match c {
                        b'=' => BondSymbol::Double,
                        b'#' => BondSymbol::Triple,
                        b':' => BondSymbol::Aromatic,
                        _ => BondSymbol::Single,
                    };
                    pending = Some((sym, at));
                    self.pos += 1;
                }
                b'.' => return err(at, SmilesErrorKind::MultipleFragments),
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return err(at, SmilesErrorKind::MissingAtom);
                    };
                    let label = self.ring_label()?;
                    let sym = pending.take().map(|(s, _)| s);
                    match rings.remove(&label) {
                        Some((opener, open_sym, _)) => {
                            let symbol = match (open_sym, sym) {
                                (Some(a), Some(b)) if a != b => {
                                    return err(at, SmilesErrorKind::ConflictingRingBond)
                                }
                                (a, b) => a.or(b),
                            };
                            self.add_bond(opener, p, symbol, at)?;
                        }
                        None => {
                            rings.insert(label, (p, sym, at));
                        }
                    }
                }
                b'[' | b'A'..=b'Z' | b'a'..=b'z' | b'*' => {
                    let atom = if c == b'[' {
                        self.bracket_atom()?
                    } else if c == b'*' {
                        return err(at, SmilesErrorKind::UnknownAtom("*".into()));
                    } else {
                        self.organic_atom()?
                    };
                    self.atoms.push(atom);
                    let idx = self.atoms.len() - 1;
                    if let Some(p) = prev {
                        let sym = pending.take().map(|(s, _)| s);
                        self.add_bond(p, idx, sym, at)?;
                    }
                    prev = Some(idx);
                }
                c if !c.is_ascii() => return err(at, SmilesErrorKind::NonAscii),
                _ => return err(at, SmilesErrorKind::UnexpectedChar(c as char)),
            }
        }
        if let Some((_, at)) = pending {
            return err(at, SmilesErrorKind::DanglingBond);
        }
        if let Some(&(_, at)) = branches.first() {
            return err(at, SmilesErrorKind::UnbalancedParenthesis);
        }
        if let Some((&label, &(_, _, at))) = rings.iter().min_by_key(|(_, v)| v.2) {
            return err(at, SmilesErrorKind::UnmatchedRingClosure(label));
        }
        Ok((self.atoms, self.bonds))
    }
}

fn hybridization(atom: &ParsedAtom, orders: &[BondOrder]) -> Hybridization {
    if atom.bracket && atom.element.vocabulary_index().is_none() {
        return Hybridization::Other;
    }
    let doubles = orders.iter().filter(|o| **o == BondOrder::Double).count();
    let triples = orders.iter().filter(|o| **o == BondOrder::Triple).count();
    if triples > 0 || doubles >= 2 {
        Hybridization::Sp
    } else if atom.aromatic || doubles == 1 {
        Hybridization::Sp2
    } else {
        Hybridization::Sp3
    }
}

/// Parses one molecule. Feature matrices of the result are left empty; see
/// [`crate::featurize_graph`].
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    if text.is_empty() {
        return err(0, SmilesErrorKind::Empty);
    }
    if let Some(pos) = text.bytes().position(|b| !b.is_ascii()) {
        return err(pos, SmilesErrorKind::NonAscii);
    }
    let parser = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    let (parsed, mut raw) = parser.parse()?;
    if parsed.is_empty() {
        return err(0, SmilesErrorKind::Empty);
    }

    let edges: Vec<(usize, usize)> = raw.iter().map(|b| (b.u, b.v)).collect();
    let bridge = bridges(parsed.len(), &edges);
    for (b, is_bridge) in raw.iter_mut().zip(&bridge) {
        // An implied bond between aromatic atoms of different rings is single.
        if b.implicit && b.order == BondOrder::Aromatic && *is_bridge {
            b.order = BondOrder::Single;
        }
    }
    for b in &raw {
        if b.order == BondOrder::Aromatic && !(parsed[b.u].aromatic && parsed[b.v].aromatic) {
            return err(b.position, SmilesErrorKind::AromaticBondMismatch);
        }
    }

    let mut orders: Vec<Vec<BondOrder>> = vec![Vec::new(); parsed.len()];
    let mut in_ring_atom = vec![false; parsed.len()];
    for (b, is_bridge) in raw.iter().zip(&bridge) {
        orders[b.u].push(b.order);
        orders[b.v].push(b.order);
        if !is_bridge {
            in_ring_atom[b.u] = true;
            in_ring_atom[b.v] = true;
        }
    }
    if let Some(a) = (0..parsed.len()).find(|&a| parsed[a].aromatic && !in_ring_atom[a]) {
        return err(parsed[a].position, SmilesErrorKind::AromaticOutsideRing);
    }

    let atoms = parsed
        .iter()
        .zip(&orders)
        .map(|(a, o)| AtomRecord {
            element: a.element,
            degree: o.len(),
            formal_charge: a.charge,
            aromatic: a.aromatic,
            hybridization: hybridization(a, o),
        })
        .collect();
    let bonds = raw
        .iter()
        .zip(&bridge)
        .map(|(b, is_bridge)| Bond {
            u: b.u,
            v: b.v,
            record: BondRecord {
                order: b.order,
                in_ring: !is_bridge,
            },
        })
        .collect();
    Ok(MolecularGraph {
        atoms,
        bonds,
        node_features: Vec::new(),
        edge_features: Vec::new(),
    })
}
