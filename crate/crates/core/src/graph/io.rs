use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Graph, Splits};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphFormat {
    /// Single JSON document (see [`GraphDocument`]).
    Json,
    /// Tab-separated `i<TAB>j[<TAB>w]` edge list with an optional row-per-node
    /// CSV feature file.
    EdgeList { features: Option<PathBuf> },
}

impl GraphFormat {
    /// `.json` files are JSON, everything else is an edge list without
    /// features.
    pub fn infer(path: &Path) -> GraphFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => GraphFormat::Json,
            _ => GraphFormat::EdgeList { features: None },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

/// On-disk JSON schema. Edges are `[i, j]` or `[i, j, w]`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphDocument {
    pub num_nodes: usize,
    pub edges: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
}

pub fn load_graph(path: &Path, format: &GraphFormat) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        GraphFormat::Json => {
            let doc: GraphDocument = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            from_document(doc)
        }
        GraphFormat::EdgeList { features } => {
            let edges = parse_edge_list(&text)?;
            let features = match features {
                Some(p) => Some(read_feature_csv(p)?),
                None => None,
            };
            let max_index = edges.iter().map(|&(i, j, _)| i.max(j) + 1).max();
            let n = features
                .as_ref()
                .map(|f| f.nrows())
                .into_iter()
                .chain(max_index)
                .max()
                .unwrap_or(0);
            let mut g = build(n, &edges)?;
            if let Some(f) = features {
                g = g.with_features(f)?;
            }
            Ok(g)
        }
    }
}

pub fn from_document(doc: GraphDocument) -> Result<Graph> {
    let n = doc.num_nodes;
    let mut edges = Vec::with_capacity(doc.edges.len());
    for (k, e) in doc.edges.iter().enumerate() {
        let (i, j, w) = match e.as_slice() {
            [i, j] => (*i, *j, 1.0),
            [i, j, w] => (*i, *j, *w),
            _ => {
                return Err(Error::Parse(format!(
                    "edge {k} has {} entries, expected 2 or 3",
                    e.len()
                )))
            }
        };
        edges.push((to_index(i)?, to_index(j)?, w));
    }
    let mut g = build(n, &edges)?;
    if let Some(rows) = doc.features {
        g = g.with_features(rows_to_matrix(&rows)?)?;
    }
    if let Some(labels) = doc.labels {
        g = g.with_labels(labels)?;
    }
    if let Some(splits) = doc.splits {
        g = g.with_splits(splits)?;
    }
    Ok(g)
}

pub fn to_document(g: &Graph) -> GraphDocument {
    GraphDocument {
        num_nodes: g.n(),
        edges: g
            .edges()
            .into_iter()
            .map(|(i, j, w)| vec![i as f64, j as f64, w])
            .collect(),
        features: g
            .features()
            .map(|f| f.rows().into_iter().map(|r| r.to_vec()).collect()),
        labels: g.labels().map(<[usize]>::to_vec),
        splits: g.splits().cloned(),
    }
}

pub fn export_graph(g: &Graph, format: ExportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ExportFormat::Dot => to_dot(g),
        ExportFormat::Json => serde_json::to_string(&to_document(g))
            .map_err(|e| Error::Parse(format!("serializing graph: {e}")))?,
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn to_dot(g: &Graph) -> String {
    let mut out = String::from("graph G {\n");
    for i in 0..g.n() {
        match g.labels() {
            Some(l) => writeln!(out, "  {i} [label=\"{i}\", class={}];", l[i]),
            None => writeln!(out, "  {i};"),
        }
        .expect("writing to a String cannot fail");
    }
    for (i, j, w) in g.edges() {
        writeln!(out, "  {i} -- {j} [weight={w}];").expect("writing to a String cannot fail");
    }
    out.push_str("}\n");
    out
}

/// Duplicate pairs in either orientation are fine as long as they agree on
/// the weight; disagreeing explicit weights are reported.
fn build(n: usize, edges: &[(usize, usize, f64)]) -> Result<Graph> {
    let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
    for &(i, j, w) in edges {
        let key = (i.min(j), i.max(j));
        if let Some(&prev) = seen.get(&key) {
            if prev != w {
                let (w_ij, w_ji) = if (i, j) == key { (w, prev) } else { (prev, w) };
                return Err(Error::WeightConflict {
                    i: key.0,
                    j: key.1,
                    w_ij,
                    w_ji,
                });
            }
        }
        seen.insert(key, w);
    }
    Graph::from_edges(n, edges)
}

fn to_index(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Parse(format!("{v} is not a node index")))
    }
}

fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Parse(format!("line {}: cannot parse `{line}`", lineno + 1));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let edge = match fields.as_slice() {
            [i, j] => (idx(i)?, idx(j)?, 1.0),
            [i, j, w] => (idx(i)?, idx(j)?, w.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        edges.push(edge);
    }
    Ok(edges)
}

fn read_feature_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{} row {}: bad value `{s}`", path.display(), k + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    rows_to_matrix(&rows)
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::DimensionMismatch(format!(
            "row {k} has {} columns, expected {width}",
            r.len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn json_single_edge() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.json", r#"{"num_nodes": 2, "edges": [[0, 1]]}"#);
        let g = load_graph(&p, &GraphFormat::Json).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(1, 0), 1.0);
    }

    #[test]
    fn duplicate_orientations_merge() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.tsv", "0\t1\n1\t0\n1\t2\n");
        let g = load_graph(&p, &GraphFormat::EdgeList { features: None }).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.weight(0, 1), 1.0);
    }

    #[test]
    fn conflicting_weights_name_the_pair() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.tsv", "0\t1\t1.0\n2\t1\t0.5\n1\t2\t0.25\n");
        let err = load_graph(&p, &GraphFormat::EdgeList { features: None }).unwrap_err();
        match err {
            Error::WeightConflict { i, j, w_ij, w_ji } => {
                assert_eq!((i, j), (1, 2));
                assert_eq!((w_ij, w_ji), (0.25, 0.5));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.json", r#"{"num_nodes": 2, "edges": [[0, 5]]}"#);
        assert!(matches!(
            load_graph(&p, &GraphFormat::Json),
            Err(Error::NodeOutOfRange { index: 5, n: 2 })
        ));
        let p = write(dir.path(), "bad.json", r#"{"num_nodes": 2, "edges": [[0]]}"#);
        assert!(matches!(load_graph(&p, &GraphFormat::Json), Err(Error::Parse(_))));
        let p = write(dir.path(), "bad.tsv", "0 x\n");
        assert!(load_graph(&p, &GraphFormat::EdgeList { features: None }).is_err());
    }

    #[test]
    fn edge_list_with_features() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "g.tsv", "# comment\n0\t1\t0.5\n");
        let f = write(dir.path(), "x.csv", "1,0\n0,1\n0.5,0.5\n");
        let g = load_graph(
            &e,
            &GraphFormat::EdgeList {
                features: Some(f),
            },
        )
        .unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.features().unwrap()[[2, 1]], 0.5);
        assert_eq!(g.weight(0, 1), 0.5);
    }

    #[test]
    fn dot_export() {
        let g = Graph::from_edges(2, &[(0, 1, 0.5)]).unwrap();
        let dot = to_dot(&g);
        assert!(dot.contains("0 -- 1"));
        assert!(dot.contains("weight=0.5"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges(3, &[(0, 1, 0.123456789012345), (1, 2, 2.0)])
            .unwrap()
            .with_features(array![[1.0, 2.0], [3.0, 1e-17], [-0.1, 0.7]])
            .unwrap()
            .with_labels(vec![0, 1, 1])
            .unwrap()
            .with_splits(Splits {
                train: vec![0],
                val: vec![1],
                test: vec![2],
            })
            .unwrap();
        let p = dir.path().join("rt.json");
        export_graph(&g, ExportFormat::Json, &p).unwrap();
        let back = load_graph(&p, &GraphFormat::Json).unwrap();
        let diff = (back.adjacency() - g.adjacency()).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d <= 1e-12));
        assert_eq!(back, g);
    }
}
