//! Central finite-difference verification of tape gradients.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tape::{Tape, Var};

/// Pass threshold on the maximum relative error.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Step is `eps * max(1, |x|)`.
    pub eps: f64,
    /// Random coordinates to probe; `None` checks all of them.
    pub coords: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            coords: Some(20),
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateCheck {
    pub input: usize,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordinateCheck>,
    /// Coordinates where the function or its gradient was not finite.
    pub non_finite: Vec<(usize, (usize, usize))>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_empty() && self.max_rel_error <= GRAD_TOL
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f` at `inputs` against
/// central differences. `f` builds its graph on the tape it is given from
/// parameter leaves holding `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Array2<f64>], opts: GradCheckOptions) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic: Vec<Array2<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars);
        let grads = tape.backward(out);
        vars.iter().map(|v| grads.wrt(*v)).collect()
    };

    let eval = |inputs: &[Array2<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&tape, &vars).item()
    };

    let all: Vec<(usize, (usize, usize))> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, x)| x.indexed_iter().map(move |(idx, _)| (k, idx)))
        .collect();
    let chosen: Vec<(usize, (usize, usize))> = match opts.coords {
        Some(c) if c < all.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picks: Vec<usize> = sample(&mut rng, all.len(), c).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| all[i]).collect()
        }
        _ => all,
    };

    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    let mut checks = Vec::with_capacity(chosen.len());
    let mut non_finite = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (k, idx) in chosen {
        let x0 = inputs[k][idx];
        let h = opts.eps * x0.abs().max(1.0);
        work[k][idx] = x0 + h;
        let up = eval(&work);
        work[k][idx] = x0 - h;
        let down = eval(&work);
        work[k][idx] = x0;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k][idx];
        if !numeric.is_finite() || !a.is_finite() {
            non_finite.push((k, idx));
            continue;
        }
        let rel = relative_error(a, numeric, opts.floor);
        max_rel = max_rel.max(rel);
        checks.push(CoordinateCheck {
            input: k,
            index: idx,
            analytic: a,
            numeric,
            rel_error: rel,
        });
    }
    GradCheckReport {
        max_rel_error: max_rel,
        checks,
        non_finite,
    }
}
