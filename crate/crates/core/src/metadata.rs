//! Document metadata files.
//!
//! A metadata CSV has a header with a `doc_id` column (1-based, matching the
//! corpus) and either a `node` column, for graph metadata, or numeric feature
//! columns plus an optional categorical `author` column. An edge list is a
//! CSV with header `source,target` naming graph nodes.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::kernels::{self, FeaturePoint, FeatureSpace, KernelError};

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid metadata: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub type Result<T> = std::result::Result<T, MetadataError>;

pub const DOC_ID: &str = "doc_id";
pub const NODE: &str = "node";
pub const AUTHOR: &str = "author";

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| MetadataError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| MetadataError::Invalid(format!("{what}: {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(MetadataError::Invalid(format!("{what}: {s:?} is not finite")));
    }
    Ok(v)
}

/// Rows reordered by `doc_id`, which must cover `1..=num_docs` exactly once.
fn order_rows(table: &Table, num_docs: usize) -> Result<Vec<usize>> {
    let col = table
        .header
        .iter()
        .position(|h| h == DOC_ID)
        .ok_or_else(|| MetadataError::Invalid(format!("missing {DOC_ID:?} column")))?;
    if table.rows.len() != num_docs {
        return Err(MetadataError::Invalid(format!(
            "{} metadata rows for {num_docs} documents",
            table.rows.len()
        )));
    }
    let mut order = vec![usize::MAX; num_docs];
    for (i, row) in table.rows.iter().enumerate() {
        let id: usize = row[col]
            .parse()
            .map_err(|_| MetadataError::Invalid(format!("bad doc_id {:?} on row {}", row[col], i + 1)))?;
        if id == 0 || id > num_docs {
            return Err(MetadataError::Invalid(format!("doc_id {id} outside 1..={num_docs}")));
        }
        if order[id - 1] != usize::MAX {
            return Err(MetadataError::Invalid(format!("doc_id {id} appears twice")));
        }
        order[id - 1] = i;
    }
    Ok(order)
}

/// Parses a metadata CSV for `num_docs` documents. Graph metadata needs
/// `edges`; they are ignored for numeric metadata.
pub fn read_metadata<R: Read>(
    reader: R,
    num_docs: usize,
    edges: Option<&[(String, String)]>,
) -> Result<FeatureSpace> {
    let table = read_table(reader)?;
    let order = order_rows(&table, num_docs)?;
    if let Some(node_col) = table.header.iter().position(|h| h == NODE) {
        let mut nodes: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut doc_nodes = Vec::with_capacity(num_docs);
        for &r in &order {
            let name = table.rows[r][node_col].clone();
            let next = nodes.len();
            let i = *index.entry(name.clone()).or_insert(next);
            if i == next {
                nodes.push(name);
            }
            doc_nodes.push(i);
        }
        let (names, embedding) = kernels::graph_embed_named(nodes, edges.unwrap_or(&[]))?;
        if embedding.disconnected {
            log::warn!(
                "graph is disconnected; unreachable pairs use distance {}",
                embedding.cap
            );
        }
        return Ok(FeatureSpace::graph(names, embedding, doc_nodes)?);
    }
    let author_col = table.header.iter().position(|h| h == AUTHOR);
    let numeric: Vec<usize> = (0..table.header.len())
        .filter(|&c| table.header[c] != DOC_ID && Some(c) != author_col)
        .collect();
    if numeric.is_empty() {
        return Err(MetadataError::Invalid("no numeric feature columns".into()));
    }
    let mut values = DMatrix::zeros(num_docs, numeric.len());
    for (d, &r) in order.iter().enumerate() {
        for (f, &c) in numeric.iter().enumerate() {
            values[(d, f)] = parse_f64(&table.rows[r][c], &format!("doc {} column {}", d + 1, table.header[c]))?;
        }
    }
    let columns = numeric.iter().map(|&c| table.header[c].clone()).collect();
    let (authors, author_names) = match author_col {
        Some(ac) => {
            let mut names: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            let ids = order
                .iter()
                .map(|&r| {
                    let name = &table.rows[r][ac];
                    let next = names.len();
                    let i = *index.entry(name.clone()).or_insert(next);
                    if i == next {
                        names.push(name.clone());
                    }
                    i
                })
                .collect();
            (Some(ids), names)
        }
        None => (None, Vec::new()),
    };
    Ok(FeatureSpace::euclidean_with_authors(columns, values, authors, author_names)?)
}

pub fn read_metadata_file(
    path: &Path,
    num_docs: usize,
    edges: Option<&[(String, String)]>,
) -> Result<FeatureSpace> {
    read_metadata(open(path)?, num_docs, edges)
}

/// Parses a `source,target` edge list.
pub fn read_edges<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let table = read_table(reader)?;
    let col = |name: &str| {
        table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MetadataError::Invalid(format!("edge list lacks a {name:?} column")))
    };
    let (s, t) = (col("source")?, col("target")?);
    Ok(table.rows.iter().map(|r| (r[s].clone(), r[t].clone())).collect())
}

pub fn read_edges_file(path: &Path) -> Result<Vec<(String, String)>> {
    read_edges(open(path)?)
}

fn lookup(names: &[String], name: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| MetadataError::Kernel(KernelError::Unsupported(format!("unknown {what} {name:?}"))))
}

/// Parses a query point: a node name for graph metadata, otherwise the
/// numeric features in column order followed by the author when the training
/// metadata has one, all separated by commas.
pub fn parse_query(space: &FeatureSpace, text: &str) -> Result<FeaturePoint> {
    match space {
        FeatureSpace::Graph { node_names, .. } => Ok(FeaturePoint::Node(lookup(node_names, text.trim(), "node")?)),
        FeatureSpace::Euclidean {
            columns,
            authors,
            author_names,
            ..
        } => {
            let parts: Vec<&str> = text.split(',').map(str::trim).collect();
            let want = columns.len() + usize::from(authors.is_some());
            if parts.len() != want {
                return Err(MetadataError::Invalid(format!(
                    "query {text:?} has {} fields, expected {want}",
                    parts.len()
                )));
            }
            let values = parts[..columns.len()]
                .iter()
                .zip(columns)
                .map(|(p, c)| parse_f64(p, c))
                .collect::<Result<Vec<_>>>()?;
            let author = match authors {
                Some(_) => Some(lookup(author_names, parts[columns.len()], "author")?),
                None => None,
            };
            Ok(FeaturePoint::Euclidean { values, author })
        }
    }
}

/// Parses a grid CSV whose header names the training feature columns (and
/// `author` or `node` as applicable). Other columns are ignored.
pub fn read_grid<R: Read>(space: &FeatureSpace, reader: R) -> Result<Vec<FeaturePoint>> {
    let table = read_table(reader)?;
    let col = |name: &str| {
        table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MetadataError::Invalid(format!("grid lacks a {name:?} column")))
    };
    match space {
        FeatureSpace::Graph { node_names, .. } => {
            let c = col(NODE)?;
            table
                .rows
                .iter()
                .map(|r| Ok(FeaturePoint::Node(lookup(node_names, &r[c], "node")?)))
                .collect()
        }
        FeatureSpace::Euclidean {
            columns,
            authors,
            author_names,
            ..
        } => {
            let cols = columns.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
            let ac = if authors.is_some() { Some(col(AUTHOR)?) } else { None };
            table
                .rows
                .iter()
                .map(|r| {
                    let values = cols
                        .iter()
                        .zip(columns)
                        .map(|(&c, name)| parse_f64(&r[c], name))
                        .collect::<Result<Vec<_>>>()?;
                    let author = match ac {
                        Some(c) => Some(lookup(author_names, &r[c], "author")?),
                        None => None,
                    };
                    Ok(FeaturePoint::Euclidean { values, author })
                })
                .collect()
        }
    }
}

pub fn read_grid_file(space: &FeatureSpace, path: &Path) -> Result<Vec<FeaturePoint>> {
    read_grid(space, open(path)?)
}

/// Writes metadata in the format [`read_metadata`] accepts.
pub fn write_metadata<W: std::io::Write>(space: &FeatureSpace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match space {
        FeatureSpace::Graph {
            node_names,
            doc_nodes,
            ..
        } => {
            w.write_record([DOC_ID, NODE])?;
            for (d, &n) in doc_nodes.iter().enumerate() {
                w.write_record([(d + 1).to_string(), node_names[n].clone()])?;
            }
        }
        FeatureSpace::Euclidean {
            columns,
            values,
            authors,
            author_names,
        } => {
            let mut header = vec![DOC_ID.to_string()];
            header.extend(columns.iter().cloned());
            if authors.is_some() {
                header.push(AUTHOR.to_string());
            }
            w.write_record(&header)?;
            let f = columns.len();
            for d in 0..values.len() / f {
                let mut row = vec![(d + 1).to_string()];
                row.extend(values[d * f..(d + 1) * f].iter().map(|v| v.to_string()));
                if let Some(a) = authors {
                    row.push(author_names[a[d]].clone());
                }
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|e| MetadataError::Csv(e.into()))?;
    Ok(())
}
