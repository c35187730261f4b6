use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ricci_gsl::curvature::{
    diff_ricci_matrix, lipschitz_normalize, ricci_matrix_exact, AffineMap, PairSet,
};
use ricci_gsl::diagnostics::{oversquash_report, OversquashReport};
use ricci_gsl::eval::{classify, cluster, ClassifyConfig, MetricsReport};
use ricci_gsl::flow::{run_flow, FlowConfig, FlowDirection, SurgeryConfig};
use ricci_gsl::graph::io::to_dot;
use ricci_gsl::graph::{export_graph, hop_ground_matrix, ExportFormat};
use ricci_gsl::trainer::{embed_in_full, objective_grad_check, raw_features, train, TrainConfig};
use ricci_gsl::Error;

use crate::files::{self, load_input, sig4};
use crate::{Cli, Command, Direction, EvalTask, FlowArgs};

/// A failed numerical check that is not a library error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericalFailure(String);

/// Exit code 2 territory: the computation ran but the numbers are bad.
pub fn is_numerical(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<NumericalFailure>().is_some() {
        return true;
    }
    matches!(
        e.downcast_ref::<Error>(),
        Some(
            Error::NonFinite(_)
                | Error::NonFiniteLoss { .. }
                | Error::Unstable(_)
                | Error::Singular(_)
                | Error::Infeasible { .. }
                | Error::CurvatureMismatch(..)
        )
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_path();
    match &cli.command {
        Command::Curvature { graph, alpha } => curvature(graph, *alpha, seed, out),
        Command::Flow(args) => flow(args, seed, out),
        Command::Diagnose {
            graph,
            compare,
            alpha,
        } => diagnose(graph, compare.as_deref(), *alpha, seed, out),
        Command::Refine {
            graph,
            config,
            threshold,
        } => refine(graph, config.as_deref(), *threshold, cli.seed, out),
        Command::Eval { task, graph, runs, k } => evaluate(*task, graph, *runs, *k, seed, out),
        Command::Gradcheck { graph, coords } => gradcheck(graph, *coords, seed, out),
        Command::ExportDot { graph } => {
            let g = load_input(graph, seed)?;
            let path = out.join("graph.dot");
            files::write_text(&path, &to_dot(&g))?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn curvature(spec: &str, alpha: f64, seed: u64, out: &Path) -> Result<()> {
    let g = load_input(spec, seed)?;
    let exact = ricci_matrix_exact(&g, alpha, PairSet::EdgesOnly)?;
    // a random Lipschitz readout of the raw features over hop distance
    let raw = raw_features(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Array2::from_shape_fn((raw.ncols(), 1), |_| rng.random_range(-1.0..1.0));
    let f = lipschitz_normalize(AffineMap::euclidean(w, 0.0));
    let hops = hop_ground_matrix(&g);
    let diff = diff_ricci_matrix(g.adjacency(), &[], &raw, &f, alpha, |i, j| hops[[i, j]])?;

    let mut csv = String::from("i,j,exact,differentiable\n");
    let mut min_exact = f64::INFINITY;
    for (i, j, v) in exact.on_edges(&g) {
        let d = diff.get(i, j).unwrap_or(f64::NAN);
        writeln!(csv, "{i},{j},{v},{d}")?;
        min_exact = min_exact.min(v);
    }
    files::write_text(&out.join("curvature.csv"), &csv)?;
    println!(
        "{} edges, min exact curvature {}, written to {}",
        g.num_edges(),
        sig4(min_exact),
        out.join("curvature.csv").display()
    );
    Ok(())
}

fn flow(args: &FlowArgs, seed: u64, out: &Path) -> Result<()> {
    let g = load_input(&args.graph, seed)?;
    let cfg = FlowConfig {
        steps: args.steps,
        dt: args.dt,
        direction: match args.direction {
            Direction::Forward => FlowDirection::Forward,
            Direction::Backward => FlowDirection::Backward,
        },
        alpha: args.alpha,
        surgery: args.remove_above.map(|remove_above| SurgeryConfig {
            remove_above,
            add_below: args.add_below,
        }),
    };
    let trajectory = run_flow(&g, &cfg)?;
    let mut csv = String::from("step,min_curvature,spectral_gap,connected\n");
    println!("{:>5} {:>12} {:>12}", "step", "min curv", "gap");
    for snap in &trajectory.snapshots {
        let min = snap.min_edge_curvature().unwrap_or(f64::NAN);
        writeln!(csv, "{},{},{},{}", snap.step, min, snap.spectral_gap, snap.connected)?;
        println!("{:>5} {:>12} {:>12}", snap.step, sig4(min), sig4(snap.spectral_gap));
        let last = snap.step == cfg.steps;
        if args.snapshot_every > 0 && (snap.step % args.snapshot_every == 0 || last) {
            let stem = out.join("snapshots").join(format!("step_{:04}", snap.step));
            std::fs::create_dir_all(stem.parent().expect("has parent"))?;
            export_graph(&snap.graph, ExportFormat::Dot, &stem.with_extension("dot"))?;
            export_graph(&snap.graph, ExportFormat::Json, &stem.with_extension("json"))?;
        }
    }
    files::write_text(&out.join("flow.csv"), &csv)
}

fn diagnose(spec: &str, compare: Option<&str>, alpha: f64, seed: u64, out: &Path) -> Result<()> {
    let g = load_input(spec, seed)?;
    let body = match compare {
        None => serde_json::to_string_pretty(&OversquashReport::of(&g, alpha)?)?,
        Some(other) => {
            let after = load_input(other, seed)?;
            serde_json::to_string_pretty(&oversquash_report(&g, &after, alpha)?)?
        }
    };
    files::write_text(&out.join("report.json"), &body)?;
    println!("{body}");
    Ok(())
}

fn refine(spec: &str, config: Option<&Path>, threshold: f64, seed: Option<u64>, out: &Path) -> Result<()> {
    let g = load_input(spec, seed.unwrap_or(0))?;
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let result = train(&g, &cfg)?;
    let refined = embed_in_full(&result.refined, &result.nodes, g.n());
    files::write_refined(out, &refined, &g, threshold)?;

    let mut csv = String::from("epoch,structure,feature,total\n");
    for h in &result.history {
        writeln!(csv, "{},{},{},{}", h.epoch, h.structure, h.feature, h.total)?;
    }
    files::write_text(&out.join("history.csv"), &csv)?;
    files::write_text(&out.join("config.toml"), &toml::to_string(&cfg)?)?;
    if let Some(last) = result.history.last() {
        println!(
            "epoch {}: structure {} feature {} total {}",
            last.epoch,
            sig4(last.structure),
            sig4(last.feature),
            sig4(last.total)
        );
    }
    info!("refined graph written to {}", out.display());
    Ok(())
}

fn evaluate(task: EvalTask, dir: &Path, runs: usize, k: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let refined = files::read_refined(dir)?;
    let g = &refined.graph;
    let Some(labels) = g.labels() else {
        bail!("{} carries no labels", dir.join(files::A_STAR).display());
    };
    let report: MetricsReport = match task {
        EvalTask::Classify => classify(
            g.adjacency(),
            &refined.x_star,
            labels,
            g.splits(),
            runs,
            seed,
            &ClassifyConfig::default(),
        )?,
        EvalTask::Cluster => {
            let k = k.or(g.num_classes()).context("number of clusters unknown")?;
            cluster(&refined.views, labels, k, runs, seed)?
        }
    };
    print!("{}", report.table());
    let mut csv = String::from("metric,mean,std,values\n");
    for (name, m) in &report.metrics {
        let values: Vec<String> = m.values.iter().map(f64::to_string).collect();
        writeln!(csv, "{name},{},{},{}", m.mean, m.std, values.join(";"))?;
    }
    files::write_text(&out.join("metrics.csv"), &csv)?;
    files::write_json(&out.join("metrics.json"), &report)
}

fn gradcheck(spec: &str, coords: usize, seed: u64, out: &Path) -> Result<()> {
    let g = load_input(spec, seed)?;
    let cfg = TrainConfig {
        seed,
        ..Default::default()
    };
    let reports = objective_grad_check(&g, &cfg, coords, seed)?;
    let mut csv = String::from("component,max_rel_error,non_finite,passed\n");
    println!("{:<10} {:>14} {:>7}", "component", "max rel error", "passed");
    let mut failed = Vec::new();
    for (name, r) in &reports {
        writeln!(csv, "{name},{},{},{}", r.max_rel_error, r.non_finite.len(), r.passed())?;
        println!("{name:<10} {:>14} {:>7}", sig4(r.max_rel_error), r.passed());
        if !r.passed() {
            failed.push(*name);
        }
    }
    files::write_text(&out.join("gradcheck.csv"), &csv)?;
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}
