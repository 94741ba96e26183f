//! Bundle directory I/O.
//!
//! A bundle directory holds:
//! - `edges.tsv`: two whitespace-separated node ids per line.
//! - `features.csv`: header `node_id,f0,...`, then one row per node.
//! - `labels.tsv`: `node_id<TAB>class`; nodes absent here are unlabeled.
//! - `splits.json`: `{"train": [...], "val": [...], "test": [...]}`.
//! - `provenance.tsv` (optional): `u<TAB>v<TAB>{clean|adversarial}`.
//!
//! Saving writes canonical ordering (sorted edges, full-precision floats),
//! so load -> save -> load reproduces the same bundle byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{Edge, GraphBundle, NodeId, Provenance, Splits};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

struct LineReader {
    path: PathBuf,
    reader: BufReader<File>,
    line_no: usize,
}

impl LineReader {
    fn new(path: &Path) -> Result<LineReader> {
        Ok(LineReader {
            path: path.to_path_buf(),
            reader: open(path)?,
            line_no: 0,
        })
    }

    /// Next non-empty line, or `None` at end of file.
    fn next_line(&mut self) -> Result<Option<(usize, String)>> {
        loop {
            let mut buf = String::new();
            let n = self
                .reader
                .read_line(&mut buf)
                .map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let trimmed = buf.trim_end_matches(['\n', '\r']);
            if trimmed.is_empty() {
                continue;
            }
            return Ok(Some((self.line_no, trimmed.to_string())));
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, line, msg)
    }
}

fn parse_node(r: &LineReader, line: usize, tok: &str, num_nodes: usize) -> Result<NodeId> {
    let id: u64 = tok
        .parse()
        .map_err(|_| r.err(line, format!("expected a node id, got {tok:?}")))?;
    if id >= num_nodes as u64 {
        return Err(r.err(
            line,
            format!("node id {id} out of range (graph has {num_nodes} nodes)"),
        ));
    }
    Ok(id as NodeId)
}

fn read_features(path: &Path) -> Result<Array2<f32>> {
    let mut r = LineReader::new(path)?;
    let (hline, header) = r
        .next_line()?
        .ok_or_else(|| Error::parse(path, 0, "empty features file"))?;
    if !header.starts_with("node_id") {
        return Err(r.err(hline, "missing header row starting with node_id"));
    }
    let num_cols = header.split(',').count();
    if num_cols < 2 {
        return Err(r.err(hline, "header declares no feature columns"));
    }
    let dim = num_cols - 1;

    let mut rows: Vec<f32> = Vec::new();
    let mut expected = 0usize;
    while let Some((line, text)) = r.next_line()? {
        let mut parts = text.split(',');
        let id = parts
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| r.err(line, "expected a node id in the first column"))?;
        if id != expected {
            return Err(r.err(
                line,
                format!("feature rows must be dense and ordered; expected node {expected}, got {id}"),
            ));
        }
        let mut count = 0usize;
        for tok in parts {
            let value: f32 = tok
                .parse()
                .map_err(|_| r.err(line, format!("expected a real value, got {tok:?}")))?;
            if !value.is_finite() {
                return Err(r.err(line, format!("non-finite feature value {tok:?}")));
            }
            rows.push(value);
            count += 1;
        }
        if count != dim {
            return Err(r.err(
                line,
                format!("expected {dim} feature values, got {count}"),
            ));
        }
        expected += 1;
    }
    Array2::from_shape_vec((expected, dim), rows)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn read_edges(path: &Path, num_nodes: usize) -> Result<Vec<Edge>> {
    let mut r = LineReader::new(path)?;
    let mut edges = Vec::new();
    while let Some((line, text)) = r.next_line()? {
        let mut parts = text.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(r.err(line, "expected exactly two node ids")),
        };
        let a = parse_node(&r, line, a, num_nodes)?;
        let b = parse_node(&r, line, b, num_nodes)?;
        let edge = Edge::new(a, b).map_err(|e| r.err(line, e.to_string()))?;
        edges.push(edge);
    }
    Ok(edges)
}

fn read_labels(path: &Path, num_nodes: usize) -> Result<Vec<Option<u16>>> {
    let mut r = LineReader::new(path)?;
    let mut labels = vec![None; num_nodes];
    while let Some((line, text)) = r.next_line()? {
        let mut parts = text.split('\t');
        let (node, class) = match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(c), None) => (n, c),
            _ => return Err(r.err(line, "expected node_id<TAB>class")),
        };
        let node = parse_node(&r, line, node, num_nodes)?;
        let class: u16 = class
            .parse()
            .map_err(|_| r.err(line, format!("expected a class index, got {class:?}")))?;
        if labels[node as usize].is_some() {
            return Err(r.err(line, format!("duplicate label for node {node}")));
        }
        labels[node as usize] = Some(class);
    }
    Ok(labels)
}

fn read_provenance(path: &Path, num_nodes: usize) -> Result<Vec<(Edge, Provenance)>> {
    let mut r = LineReader::new(path)?;
    let mut tags = Vec::new();
    while let Some((line, text)) = r.next_line()? {
        let mut parts = text.split('\t');
        let (a, b, tag) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(t), None) => (a, b, t),
            _ => return Err(r.err(line, "expected u<TAB>v<TAB>tag")),
        };
        let a = parse_node(&r, line, a, num_nodes)?;
        let b = parse_node(&r, line, b, num_nodes)?;
        let edge = Edge::new(a, b).map_err(|e| r.err(line, e.to_string()))?;
        let tag = match tag {
            "clean" => Provenance::Clean,
            "adversarial" => Provenance::Adversarial,
            other => {
                return Err(r.err(
                    line,
                    format!("expected clean or adversarial, got {other:?}"),
                ))
            }
        };
        tags.push((edge, tag));
    }
    Ok(tags)
}

/// Loads a bundle directory; see the module docs for the layout.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    let dir = dir.as_ref();
    let features = read_features(&dir.join("features.csv"))?;
    let num_nodes = features.nrows();
    let edges = read_edges(&dir.join("edges.tsv"), num_nodes)?;
    let labels = read_labels(&dir.join("labels.tsv"), num_nodes)?;

    let splits_path = dir.join("splits.json");
    let splits_file = open(&splits_path)?;
    let splits: Splits = serde_json::from_reader(splits_file)
        .map_err(|e| Error::parse(&splits_path, e.line(), e.to_string()))?;

    let prov_path = dir.join("provenance.tsv");
    if prov_path.exists() {
        let tagged = read_provenance(&prov_path, num_nodes)?;
        // provenance.tsv must tag exactly the edges of edges.tsv.
        let plain: std::collections::BTreeSet<Edge> = edges.iter().copied().collect();
        let tagged_set: std::collections::BTreeSet<Edge> =
            tagged.iter().map(|(e, _)| *e).collect();
        if let Some(edge) = tagged_set.difference(&plain).next() {
            return Err(Error::invalid(format!(
                "provenance.tsv tags edge ({}, {}) absent from edges.tsv",
                edge.u(),
                edge.v()
            )));
        }
        if let Some(edge) = plain.difference(&tagged_set).next() {
            return Err(Error::invalid(format!(
                "edge ({}, {}) has no tag in provenance.tsv",
                edge.u(),
                edge.v()
            )));
        }
        let (e, t): (Vec<Edge>, Vec<Provenance>) = tagged.into_iter().unzip();
        return GraphBundle::new(num_nodes, e, features, labels, splits, Some(t));
    }

    GraphBundle::new(num_nodes, edges, features, labels, splits, None)
}

/// Writes a bundle directory in canonical order.
pub fn save_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("edges.tsv");
    let mut w = create(&path)?;
    for e in bundle.edges() {
        writeln!(w, "{}\t{}", e.u(), e.v()).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("features.csv");
    let mut w = create(&path)?;
    let dim = bundle.num_features();
    let mut header = String::from("node_id");
    for f in 0..dim {
        header.push_str(&format!(",f{f}"));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(&path, e))?;
    for (n, row) in bundle.features().rows().into_iter().enumerate() {
        let mut line = n.to_string();
        for v in row {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("labels.tsv");
    let mut w = create(&path)?;
    for (n, label) in bundle.labels().iter().enumerate() {
        if let Some(c) = label {
            writeln!(w, "{n}\t{c}").map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("splits.json");
    let file = create(&path)?;
    serde_json::to_writer_pretty(file, bundle.splits())
        .map_err(|e| Error::parse(&path, 0, e.to_string()))?;

    if let Some(tags) = bundle.provenance() {
        let path = dir.join("provenance.tsv");
        let mut w = create(&path)?;
        for (e, t) in bundle.edges().iter().zip(tags) {
            let tag = match t {
                Provenance::Clean => "clean",
                Provenance::Adversarial => "adversarial",
            };
            writeln!(w, "{}\t{}\t{}", e.u(), e.v(), tag).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    Ok(())
}
