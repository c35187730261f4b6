//! Reading inputs and writing artifacts.

use std::fs;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use ricci_gsl::graph::io::{from_document, to_document, GraphDocument};
use ricci_gsl::graph::{load_graph, make_synthetic, GraphFormat, Synthetic};
use ricci_gsl::refine::RefinedGraph;
use ricci_gsl::Graph;
use serde::Serialize;

pub const A_STAR: &str = "a_star.json";
pub const X_STAR: &str = "x_star.csv";
pub const VIEWS: &str = "views.csv";

/// A graph file, or a generator: `karate`, `barbell:K`, `complete:N`,
/// `cycle:N`, `path:N`, `sbm:SIZES:P_IN:P_OUT` with comma-separated sizes.
pub fn load_input(spec: &str, seed: u64) -> Result<Graph> {
    let path = Path::new(spec);
    if path.exists() {
        let path = if path.is_dir() { path.join(A_STAR) } else { path.to_path_buf() };
        return load_graph(&path, &GraphFormat::infer(&path))
            .with_context(|| format!("loading {}", path.display()));
    }
    let kind = parse_generator(spec)?;
    Ok(make_synthetic(&kind, seed)?)
}

fn parse_generator(spec: &str) -> Result<Synthetic> {
    let parts: Vec<&str> = spec.split(':').collect();
    let size = |s: &str| -> Result<usize> {
        s.parse().with_context(|| format!("bad size {s:?} in {spec:?}"))
    };
    let prob = |s: &str| -> Result<f64> {
        s.parse().with_context(|| format!("bad probability {s:?} in {spec:?}"))
    };
    Ok(match parts.as_slice() {
        ["karate"] => Synthetic::Karate,
        ["barbell", k] => Synthetic::Barbell(size(k)?),
        ["complete", n] => Synthetic::Complete(size(n)?),
        ["cycle", n] => Synthetic::Cycle(size(n)?),
        ["path", n] => Synthetic::Path(size(n)?),
        ["sbm", sizes, p_in, p_out] => Synthetic::Sbm {
            sizes: sizes.split(',').map(size).collect::<Result<_>>()?,
            p_in: prob(p_in)?,
            p_out: prob(p_out)?,
        },
        _ => bail!("{spec:?} is neither an existing file nor a known generator"),
    })
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

/// Rows of `m` as headerless CSV at full precision.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    write_text(path, std::str::from_utf8(&w.into_inner()?)?)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("non-numeric entry in {}", path.display()))?,
        );
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        bail!("ragged rows in {}", path.display());
    }
    Ok(Array2::from_shape_vec((rows.len(), width), rows.concat())?)
}

/// `A*` (as a weighted graph carrying the base labels and splits), `X*` and
/// the concatenated views.
pub fn write_refined(dir: &Path, refined: &RefinedGraph, base: &Graph, threshold: f64) -> Result<()> {
    let mut doc: GraphDocument = to_document(&refined.graph(base)?);
    doc.edges.retain(|e| e[2] >= threshold);
    write_json(&dir.join(A_STAR), &doc)?;
    write_matrix(&dir.join(X_STAR), &refined.x_star)?;
    write_matrix(&dir.join(VIEWS), &refined.concatenated_views())
}

pub struct RefinedDir {
    pub graph: Graph,
    pub x_star: Array2<f64>,
    pub views: Array2<f64>,
}

pub fn read_refined(dir: &Path) -> Result<RefinedDir> {
    let path = dir.join(A_STAR);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let doc: GraphDocument =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let graph = from_document(doc)?;
    let x_star = read_matrix(&dir.join(X_STAR))?;
    let views = read_matrix(&dir.join(VIEWS))?;
    for (name, m) in [(X_STAR, &x_star), (VIEWS, &views)] {
        if m.nrows() != graph.n() {
            return Err(anyhow!("{name} has {} rows for {} nodes", m.nrows(), graph.n()));
        }
    }
    Ok(RefinedDir { graph, x_star, views })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a [String],
    seed: Option<u64>,
    versions: Versions,
    started_unix_secs: u64,
    wall_time_secs: f64,
    exit_code: u8,
}

#[derive(Serialize)]
struct Versions {
    ricci_gsl_cli: &'static str,
    ricci_gsl: &'static str,
    arch: &'static str,
}

pub fn write_manifest(out: &Path, argv: &[String], seed: Option<u64>, elapsed: Duration, code: u8) -> Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let manifest = Manifest {
        command: argv,
        seed,
        versions: Versions {
            ricci_gsl_cli: env!("CARGO_PKG_VERSION"),
            ricci_gsl: ricci_gsl::VERSION,
            arch: std::env::consts::ARCH,
        },
        started_unix_secs: now.saturating_sub(elapsed).as_secs(),
        wall_time_secs: elapsed.as_secs_f64(),
        exit_code: code,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

/// Four significant digits for the console.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..5).contains(&mag) {
        format!("{:.*}", (3 - mag).max(0) as usize, x)
    } else {
        format!("{x:.3e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_parse() {
        assert_eq!(load_input("barbell:4", 0).unwrap().n(), 8);
        assert_eq!(load_input("sbm:5,6:0.9:0.1", 1).unwrap().n(), 11);
        assert!(load_input("barbell:x", 0).is_err());
        assert!(load_input("no-such-thing", 0).is_err());
    }

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(0.123456), "0.1235");
        assert_eq!(sig4(12.3456), "12.35");
        assert_eq!(sig4(1234.6), "1235");
        assert_eq!(sig4(1.5e-7), "1.500e-7");
    }

    #[test]
    fn matrices_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = Array2::from_shape_fn((3, 2), |(i, j)| (i as f64 + 0.1) / (j as f64 + 3.0));
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }
}
