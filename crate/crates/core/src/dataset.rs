//! Delimited-text drug and pair tables.
//!
//! Drugs: columns `drug_id`, `smiles`. Pairs: `drug_id_1`, `drug_id_2`,
//! `relation_id`, `label`. The first line is a header; the delimiter is a
//! tab when the header contains one, a comma otherwise.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use mpnp_chem::molecule;

use crate::data::{Example, PairDataset};
use crate::error::{CoreError, Result};

/// A drug row whose SMILES failed to parse.
#[derive(Clone, Debug, PartialEq)]
pub struct DroppedDrug {
    pub line: usize,
    pub drug_id: String,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    /// Drug ids in file order (parseable rows only); index = graph index.
    pub drug_ids: Vec<String>,
    pub smiles: Vec<String>,
    pub dataset: PairDataset,
    pub dropped_drugs: Vec<DroppedDrug>,
    /// Pairs skipped because they reference a dropped drug.
    pub dropped_pairs: usize,
}

impl DatasetBundle {
    pub fn drug_index(&self, id: &str) -> Option<usize> {
        self.drug_ids.iter().position(|d| d == id)
    }
}

struct Table {
    delimiter: char,
    columns: Vec<String>,
    /// `(line number, fields)`.
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(CoreError::Dataset {
            path: path.display().to_string(),
            line: 1,
            message: "empty file".into(),
        });
    };
    let delimiter = if header.contains('\t') { '\t' } else { ',' };
    let columns = header.split(delimiter).map(|c| c.trim().to_string()).collect();
    let rows = lines
        .map(|(i, l)| (i + 1, l.split(delimiter).map(|f| f.trim().to_string()).collect()))
        .collect();
    Ok(Table {
        delimiter,
        columns,
        rows,
    })
}

impl Table {
    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| CoreError::Dataset {
            path: path.display().to_string(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
    }
}

fn field<'a>(path: &Path, line: usize, row: &'a [String], col: usize) -> Result<&'a str> {
    row.get(col).map(String::as_str).ok_or_else(|| CoreError::Dataset {
        path: path.display().to_string(),
        line,
        message: format!("expected at least {} fields, found {}", col + 1, row.len()),
    })
}

pub fn load_dataset(drugs_path: impl AsRef<Path>, pairs_path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let (dp, pp) = (drugs_path.as_ref(), pairs_path.as_ref());
    let drugs = read_table(dp)?;
    let (id_col, smiles_col) = (drugs.column(dp, "drug_id")?, drugs.column(dp, "smiles")?);
    let mut drug_ids = Vec::new();
    let mut smiles = Vec::new();
    let mut graphs = Vec::new();
    let mut dropped_drugs = Vec::new();
    let mut seen: HashMap<String, Option<usize>> = HashMap::new();
    for (line, row) in &drugs.rows {
        let id = field(dp, *line, row, id_col)?;
        let s = field(dp, *line, row, smiles_col)?;
        if seen.contains_key(id) {
            return Err(CoreError::Dataset {
                path: dp.display().to_string(),
                line: *line,
                message: format!("duplicate drug id {id:?}"),
            });
        }
        match molecule(s) {
            Ok(g) => {
                seen.insert(id.to_string(), Some(graphs.len()));
                drug_ids.push(id.to_string());
                smiles.push(s.to_string());
                graphs.push(g);
            }
            Err(e) => {
                log::warn!("{}:{line}: dropping drug {id}: {e}", dp.display());
                seen.insert(id.to_string(), None);
                dropped_drugs.push(DroppedDrug {
                    line: *line,
                    drug_id: id.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }

    let pairs = read_table(pp)?;
    let cols = [
        pairs.column(pp, "drug_id_1")?,
        pairs.column(pp, "drug_id_2")?,
        pairs.column(pp, "relation_id")?,
        pairs.column(pp, "label")?,
    ];
    let bad = |line: usize, message: String| CoreError::Dataset {
        path: pp.display().to_string(),
        line,
        message,
    };
    let mut examples = Vec::new();
    let mut dropped_pairs = 0;
    for (line, row) in &pairs.rows {
        let mut ends = [0usize; 2];
        let mut skip = false;
        for (k, end) in ends.iter_mut().enumerate() {
            let id = field(pp, *line, row, cols[k])?;
            match seen.get(id) {
                Some(Some(i)) => *end = *i,
                Some(None) => skip = true,
                None => return Err(bad(*line, format!("unknown drug id {id:?}"))),
            }
        }
        let relation: usize = field(pp, *line, row, cols[2])?
            .parse()
            .map_err(|e| bad(*line, format!("relation_id: {e}")))?;
        let label = match field(pp, *line, row, cols[3])? {
            "0" => 0.0,
            "1" => 1.0,
            other => return Err(bad(*line, format!("label must be 0 or 1, found {other:?}"))),
        };
        if skip {
            dropped_pairs += 1;
            continue;
        }
        examples.push(Example {
            left: ends[0],
            right: ends[1],
            relation,
            label,
        });
    }
    let relations = examples.iter().map(|e| e.relation + 1).max().unwrap_or(1);
    let _ = drugs.delimiter;
    Ok(DatasetBundle {
        drug_ids,
        smiles,
        dataset: PairDataset::new(graphs, examples, relations)?,
        dropped_drugs,
        dropped_pairs,
    })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| CoreError::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CoreError::io(path, e)
    })
}

/// Pair rows for `indices` in the pairs-table format.
pub fn pairs_table(bundle: &DatasetBundle, indices: &[usize]) -> String {
    let mut out = String::from("drug_id_1\tdrug_id_2\trelation_id\tlabel\n");
    for &i in indices {
        let e = &bundle.dataset.examples[i];
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            bundle.drug_ids[e.left], bundle.drug_ids[e.right], e.relation, e.label as u8
        ));
    }
    out
}

/// Drug table in the drugs-table format.
pub fn drugs_table(ids: &[String], smiles: &[String]) -> String {
    let mut out = String::from("drug_id\tsmiles\n");
    for (id, s) in ids.iter().zip(smiles) {
        out.push_str(&format!("{id}\t{s}\n"));
    }
    out
}
