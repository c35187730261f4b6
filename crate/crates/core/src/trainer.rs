//! Joint structure-feature refinement.
//!
//! Learnable gyrovector features live in one ball per curvature factor. Each
//! epoch maps them through frozen gyrovector waves, compares views with cosine
//! heads to get `π`, samples a relaxed `A*`, and scores it two ways: the
//! curvature-flow likelihood of the observed edges and a contrastive loss
//! between GCN views propagated over `A*`.

use log::{debug, info, warn};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curvature::{lipschitz_normalize, AffineMap, AffineVars};
use crate::error::{Error, Result};
use crate::feature_map::{sample_feature_map, FeatureMapSpec, HorocycleForm};
use crate::graph::Graph;
use crate::manifold::{Factor, ManifoldConfig};
use crate::nn::ops::{feature_waves, log_map_zero};
use crate::nn::{grad_check, Adam, GcnParams, GcnVars, GradCheckOptions, GradCheckReport, RiemannianAdam, Tape, Var};
use crate::refine::{
    backward_flow_distance, check_tau, feature_loss, fermi_dirac, logistic_noise, pairwise_similarity,
    relaxed_adjacency, structure_loss_on, with_self_loops, EdgeSample, FermiDirac, RefinedGraph,
};

/// Relaxed samples averaged into the exported `A*`.
const FINAL_SAMPLES: usize = 8;
/// The exported `A*` is sampled at this fraction of the training temperature.
const FINAL_TAU_FRACTION: f64 = 0.25;
/// Initial gyro features lie within this fraction of `1/√|κ|`.
const INIT_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Use `log₀` coordinates instead of gyrovector waves.
    pub no_gyro: bool,
    /// Export raw features only.
    pub no_feature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub lr: f64,
    pub riemannian_lr: f64,
    pub tau: f64,
    pub fermi_r: f64,
    pub fermi_s: f64,
    pub neg_per_pos: usize,
    pub manifold: Vec<Factor>,
    /// Output width of each gyrovector feature map.
    pub map_dim: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub horocycle: HorocycleForm,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.5,
            alpha: 0.5,
            epochs: 400,
            lr: 1e-2,
            // Larger rates push the gyro points toward the boundary fast enough
            // for the wave amplitudes to swamp the contrastive term.
            riemannian_lr: 5e-4,
            tau: 0.5,
            fermi_r: 2.0,
            fermi_s: 1.0,
            neg_per_pos: 5,
            manifold: vec![Factor { kappa: -1.0, dim: 32 }, Factor { kappa: 1.0, dim: 32 }],
            map_dim: 32,
            head_dim: 32,
            hidden_dim: 64,
            output_dim: 32,
            horocycle: HorocycleForm::default(),
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta = {} must lie in [0, 1]", self.beta));
        }
        crate::graph::check_alpha(self.alpha)?;
        for (name, v) in [("lr", self.lr), ("riemannian_lr", self.riemannian_lr), ("fermi_s", self.fermi_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        check_tau(self.tau)?;
        if self.manifold.iter().any(|f| f.kappa == 0.0) {
            return bad("curved factors need nonzero curvature".into());
        }
        for (name, v) in [
            ("map_dim", self.map_dim),
            ("head_dim", self.head_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn fermi(&self) -> FermiDirac {
        FermiDirac {
            r: self.fermi_r,
            s: self.fermi_s,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learnable parameters and their optimizer state.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub manifold: ManifoldConfig,
    /// `N x d_m` gyrovector features, one block per curved factor.
    pub gyro: Vec<Array2<f64>>,
    /// Frozen gyrovector wave maps, one per curved factor.
    pub feature_maps: Vec<FeatureMapSpec>,
    /// Plane waves of the raw features: the Euclidean view input.
    pub euclidean_waves: Array2<f64>,
    /// One projection per view: Euclidean first, then each curved factor.
    pub heads: Vec<Array2<f64>>,
    pub affine: AffineMap,
    pub gcns: Vec<GcnParams>,
    pub ablation: Ablation,
    adam: Adam,
    riemannian: Vec<RiemannianAdam>,
}

/// All model parameters on one tape.
pub struct ModelVars<'t> {
    pub gyro: Vec<Var<'t>>,
    pub heads: Vec<Var<'t>>,
    pub affine: AffineVars<'t>,
    pub gcns: Vec<GcnVars<'t>>,
}

/// The randomness of one epoch, fixed so the objective is a deterministic
/// function of the parameters.
#[derive(Debug, Clone)]
pub struct EpochNoise {
    pub gumbel: Array2<f64>,
    pub pairs: EdgeSample,
}

impl EpochNoise {
    pub fn draw(g: &Graph, neg_per_pos: usize, rng: &mut impl Rng) -> Self {
        EpochNoise {
            gumbel: logistic_noise(g.n(), rng),
            pairs: EdgeSample::draw(g, neg_per_pos, rng),
        }
    }
}

pub struct Objective<'t> {
    pub structure: Var<'t>,
    pub feature: Var<'t>,
    pub total: Var<'t>,
    pub a_star: Var<'t>,
    pub views: Vec<Var<'t>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub structure: f64,
    pub feature: f64,
    pub total: f64,
}

impl ModelState {
    pub fn init(g: &Graph, raw: &Array2<f64>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let f = raw.ncols();
        let manifold = ManifoldConfig::new(cfg.manifold.clone(), f)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = g.n();

        let gyro: Vec<Array2<f64>> = manifold
            .factors
            .iter()
            .map(|fac| uniform_ball(n, fac.dim, INIT_RADIUS / fac.kappa.abs().sqrt(), &mut rng))
            .collect();
        let feature_maps = manifold
            .factors
            .iter()
            .map(|fac| {
                sample_feature_map(fac.kappa, fac.dim, cfg.map_dim, rng.random())
                    .map(|m| m.with_form(cfg.horocycle))
            })
            .collect::<Result<Vec<_>>>()?;
        let euclidean_waves = sample_feature_map(0.0, f, f, rng.random())?.apply_rows(raw.view())?;

        let view_inputs: Vec<usize> = std::iter::once(f)
            .chain(manifold.factors.iter().map(|fac| {
                if cfg.ablation.no_gyro {
                    fac.dim
                } else {
                    cfg.map_dim
                }
            }))
            .collect();
        let heads = view_inputs
            .iter()
            .map(|&d| {
                let scale = (1.0 / d as f64).sqrt();
                Array2::from_shape_fn((d, cfg.head_dim), |_| scale * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let affine = lipschitz_normalize(AffineMap::random(&manifold, &mut rng));
        let gcns = view_inputs
            .iter()
            .map(|&d| GcnParams::init(d, cfg.hidden_dim, cfg.output_dim, &mut rng))
            .collect();
        let riemannian = manifold
            .factors
            .iter()
            .map(|fac| RiemannianAdam::new(cfg.riemannian_lr, fac.kappa))
            .collect();
        Ok(ModelState {
            manifold,
            gyro,
            feature_maps,
            euclidean_waves,
            heads,
            affine,
            gcns,
            ablation: cfg.ablation,
            adam: Adam::new(cfg.lr),
            riemannian,
        })
    }

    /// Every parameter tensor: gyro blocks, heads, affine map, GCNs.
    pub fn tensors(&self) -> Vec<Array2<f64>> {
        let mut out: Vec<Array2<f64>> = self.gyro.clone();
        out.extend(self.heads.iter().cloned());
        let mut affine = self.affine.clone();
        out.extend(affine.tensors_mut().into_iter().map(|t| t.clone()));
        for g in &self.gcns {
            out.extend([g.w1.clone(), g.b1.clone(), g.w2.clone(), g.b2.clone()]);
        }
        out
    }

    pub fn on<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        let vars: Vec<Var<'t>> = self.tensors().into_iter().map(|t| tape.param(t)).collect();
        self.vars_from(&vars)
    }

    /// Rebuilds structured handles from a flat list in [`ModelState::tensors`] order.
    pub fn vars_from<'t>(&self, flat: &[Var<'t>]) -> ModelVars<'t> {
        let m = self.gyro.len();
        let gyro = flat[..m].to_vec();
        let heads = flat[m..2 * m + 1].to_vec();
        let affine_len = 2 * self.affine.num_factors() + 2;
        let affine = self.affine.vars_from(&flat[2 * m + 1..2 * m + 1 + affine_len]);
        let gcns = flat[2 * m + 1 + affine_len..]
            .chunks(4)
            .map(|c| GcnVars {
                w1: c[0],
                b1: c[1],
                w2: c[2],
                b2: c[3],
            })
            .collect();
        ModelVars {
            gyro,
            heads,
            affine,
            gcns,
        }
    }

    /// Inputs of every view before its GCN: plane waves of the raw features,
    /// then gyrovector waves (or `log₀` coordinates) of each factor.
    pub fn view_inputs<'t>(&self, tape: &'t Tape, gyro: &[Var<'t>]) -> Vec<Var<'t>> {
        let mut out = vec![tape.constant(self.euclidean_waves.clone())];
        for (k, x) in gyro.iter().enumerate() {
            out.push(if self.ablation.no_gyro {
                log_map_zero(*x, self.manifold.factors[k].kappa)
            } else {
                feature_waves(*x, &self.feature_maps[k])
            });
        }
        out
    }

    /// The training objective for fixed epoch noise.
    pub fn objective<'t>(
        &self,
        tape: &'t Tape,
        vars: &ModelVars<'t>,
        raw: &Array2<f64>,
        noise: &EpochNoise,
        cfg: &TrainConfig,
    ) -> Result<Objective<'t>> {
        let inputs = self.view_inputs(tape, &vars.gyro);
        let pi = pairwise_similarity(&inputs, &vars.heads)?;
        let a_star = relaxed_adjacency(pi, &noise.gumbel, cfg.tau);

        let scalars = vars.affine.node_scalars(&vars.gyro, tape.constant(raw.clone()));
        let d = backward_flow_distance(a_star, scalars, cfg.alpha);
        let structure = structure_loss_on(fermi_dirac(d, cfg.fermi()), &noise.pairs);

        let propagate = crate::nn::ops::gcn_normalize(with_self_loops(a_star));
        let views: Vec<Var<'t>> = inputs
            .iter()
            .zip(&vars.gcns)
            .map(|(h, p)| p.propagate(propagate, *h, None))
            .collect();
        let feature = feature_loss(&views)?;
        let total = structure.scale(cfg.beta) + feature.scale(1.0 - cfg.beta);
        Ok(Objective {
            structure,
            feature,
            total,
            a_star,
            views,
        })
    }

    fn step(&mut self, grads: &[Array2<f64>]) {
        let m = self.gyro.len();
        for (k, opt) in self.riemannian.iter_mut().enumerate() {
            opt.step(&mut self.gyro[k], &grads[k]);
        }
        let mut params: Vec<&mut Array2<f64>> = self.heads.iter_mut().collect();
        params.extend(self.affine.tensors_mut());
        for g in &mut self.gcns {
            params.extend(g.tensors_mut());
        }
        self.adam.step(&mut params, &grads[m..]);
        self.affine.project_biases();
        self.affine = lipschitz_normalize(self.affine.clone());
    }

    /// Every gyrovector strictly inside its ball.
    pub fn in_balls(&self) -> bool {
        self.gyro.iter().zip(&self.manifold.factors).all(|(x, f)| {
            x.rows().into_iter().all(|r| f.kappa > 0.0 || f.kappa.abs() * r.dot(&r) < 1.0)
        })
    }

    /// `X* = [X, φ¹(x¹), …]`, or `X` alone under the feature ablation.
    pub fn refined_features(&self, raw: &Array2<f64>) -> Array2<f64> {
        if self.ablation.no_feature {
            return raw.clone();
        }
        let tape = Tape::new();
        let gyro: Vec<Var<'_>> = self.gyro.iter().map(|x| tape.constant(x.clone())).collect();
        let mut blocks = vec![tape.constant(raw.clone())];
        blocks.extend(self.view_inputs(&tape, &gyro).into_iter().skip(1));
        let out = Var::concat_cols(&blocks).value().clone();
        out
    }
}

fn uniform_ball(n: usize, d: usize, radius: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in x.rows_mut() {
        let norm = row.dot(&row).sqrt().max(1e-12);
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        row *= r / norm;
    }
    x
}

/// Raw features of `g`, or one-hot node identities when it has none.
pub fn raw_features(g: &Graph) -> Array2<f64> {
    match g.features() {
        Some(x) => x.clone(),
        None => Array2::eye(g.n()),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub refined: RefinedGraph,
    pub state: ModelState,
    pub history: Vec<EpochLoss>,
    /// Nodes of the input that were trained on (all of them unless the input
    /// was disconnected).
    pub nodes: Vec<usize>,
}

/// Runs the refinement. Disconnected inputs are reduced to their largest
/// component first.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let (g, nodes) = if g.is_connected() {
        (g.clone(), (0..g.n()).collect())
    } else {
        let (sub, nodes) = g.largest_component()?;
        warn!(
            "input has {} components; training on the largest ({} of {} nodes)",
            g.num_components(),
            sub.n(),
            g.n()
        );
        (sub, nodes)
    };
    if g.num_edges() == 0 {
        return Err(Error::InvalidGraph("refinement needs at least one edge".into()));
    }
    let raw = raw_features(&g);
    let mut state = ModelState::init(&g, &raw, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let noise = EpochNoise::draw(&g, cfg.neg_per_pos, &mut rng);
        let tape = Tape::new();
        let flat: Vec<Var<'_>> = state.tensors().into_iter().map(|t| tape.param(t)).collect();
        let vars = state.vars_from(&flat);
        let obj = state.objective(&tape, &vars, &raw, &noise, cfg)?;
        let loss = EpochLoss {
            epoch,
            structure: obj.structure.item(),
            feature: obj.feature.item(),
            total: obj.total.item(),
        };
        if !(loss.total.is_finite() && loss.structure.is_finite() && loss.feature.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                structure: loss.structure,
                feature: loss.feature,
            });
        }
        let grads = tape.backward(obj.total);
        let grads: Vec<Array2<f64>> = flat.iter().map(|v| grads.wrt(*v)).collect();
        drop(obj);
        state.step(&grads);
        debug_assert!(state.in_balls(), "gyro features left their balls at epoch {epoch}");
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            debug!(
                "epoch {epoch}: structure {:.4} feature {:.4} total {:.4}",
                loss.structure, loss.feature, loss.total
            );
        }
        history.push(loss);
    }

    let refined = finalize(&g, &state, &raw, cfg, &mut rng)?;
    info!("refinement finished after {} epochs", cfg.epochs);
    Ok(TrainOutput {
        refined,
        state,
        history,
        nodes,
    })
}

/// Averages relaxed samples at a lowered temperature into the exported `A*`
/// and recomputes the views on it.
fn finalize(
    g: &Graph,
    state: &ModelState,
    raw: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<RefinedGraph> {
    let n = g.n();
    let tape = Tape::new();
    let gyro: Vec<Var<'_>> = state.gyro.iter().map(|x| tape.constant(x.clone())).collect();
    let heads: Vec<Var<'_>> = state.heads.iter().map(|x| tape.constant(x.clone())).collect();
    let inputs = state.view_inputs(&tape, &gyro);
    let pi = pairwise_similarity(&inputs, &heads)?;
    let tau = cfg.tau * FINAL_TAU_FRACTION;
    let mut sum = Array2::<f64>::zeros((n, n));
    for _ in 0..FINAL_SAMPLES {
        let noise = logistic_noise(n, rng);
        sum += &*relaxed_adjacency(pi, &noise, tau).value();
    }
    let mut a_star = sum / FINAL_SAMPLES as f64;
    a_star = (&a_star + &a_star.t()) / 2.0;

    let a = tape.constant(a_star.clone());
    let propagate = crate::nn::ops::gcn_normalize(with_self_loops(a));
    let views = inputs
        .iter()
        .zip(&state.gcns)
        .map(|(h, p)| {
            let vars = GcnVars {
                w1: tape.constant(p.w1.clone()),
                b1: tape.constant(p.b1.clone()),
                w2: tape.constant(p.w2.clone()),
                b2: tape.constant(p.b2.clone()),
            };
            let out = vars.propagate(propagate, *h, None).value().clone();
            out
        })
        .collect();
    Ok(RefinedGraph {
        a_star,
        x_star: state.refined_features(raw),
        views,
    })
}

/// Finite-difference check of the structure, feature and total objectives at
/// a fresh initialization, each on `coords` random coordinates.
pub fn objective_grad_check(
    g: &Graph,
    cfg: &TrainConfig,
    coords: usize,
    seed: u64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    cfg.validate()?;
    let raw = raw_features(g);
    let state = ModelState::init(g, &raw, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = EpochNoise::draw(g, cfg.neg_per_pos, &mut rng);
    // the objective's own errors are shape errors, ruled out by init
    {
        let tape = Tape::new();
        state.objective(&tape, &state.on(&tape), &raw, &noise, cfg)?;
    }
    Ok(["structure", "feature", "total"]
        .into_iter()
        .enumerate()
        .map(|(part, name)| {
            let report = grad_check(
                |tape, v| {
                    let vars = state.vars_from(v);
                    let obj = state.objective(tape, &vars, &raw, &noise, cfg).expect("checked above");
                    [obj.structure, obj.feature, obj.total][part]
                },
                &state.tensors(),
                GradCheckOptions {
                    coords: Some(coords),
                    seed: seed.wrapping_add(part as u64),
                    ..Default::default()
                },
            );
            (name, report)
        })
        .collect())
}

/// Places refined results of a component back on the full node set: rows of
/// nodes outside the trained component are zero.
pub fn embed_in_full(refined: &RefinedGraph, nodes: &[usize], n: usize) -> RefinedGraph {
    if nodes.len() == n {
        return refined.clone();
    }
    let mut a = Array2::zeros((n, n));
    for (r, &i) in nodes.iter().enumerate() {
        for (c, &j) in nodes.iter().enumerate() {
            a[[i, j]] = refined.a_star[[r, c]];
        }
    }
    let lift = |m: &Array2<f64>| {
        let mut out = Array2::zeros((n, m.ncols()));
        for (r, &i) in nodes.iter().enumerate() {
            out.slice_mut(s![i, ..]).assign(&m.row(r));
        }
        out
    };
    RefinedGraph {
        a_star: a,
        x_star: lift(&refined.x_star),
        views: refined.views.iter().map(lift).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::spectral_gap;
    use crate::graph::{make_synthetic, Synthetic};

    fn small() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            manifold: vec![Factor { kappa: -1.0, dim: 4 }, Factor { kappa: 1.0, dim: 4 }],
            map_dim: 8,
            head_dim: 6,
            hidden_dim: 8,
            output_dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_history() {
        let g = make_synthetic(&Synthetic::Barbell(4), 0).unwrap();
        let a = train(&g, &small()).unwrap();
        let b = train(&g, &small()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.refined.a_star, b.refined.a_star);
    }

    #[test]
    fn beta_one_is_structure_only() {
        let g = make_synthetic(&Synthetic::Barbell(4), 0).unwrap();
        let cfg = TrainConfig { beta: 1.0, ..small() };
        let out = train(&g, &cfg).unwrap();
        assert!(out.history.iter().all(|l| l.total == l.structure));
    }

    #[test]
    fn beta_zero_leaves_affine_map_without_gradient() {
        let g = make_synthetic(&Synthetic::Barbell(3), 0).unwrap();
        let cfg = TrainConfig { beta: 0.0, ..small() };
        let raw = raw_features(&g);
        let state = ModelState::init(&g, &raw, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = EpochNoise::draw(&g, 5, &mut rng);
        let tape = Tape::new();
        let vars = state.on(&tape);
        let obj = state.objective(&tape, &vars, &raw, &noise, &cfg).unwrap();
        let grads = tape.backward(obj.total);
        for v in vars.affine.all() {
            assert!(grads.wrt(v).iter().all(|&x| x == 0.0));
        }
        assert!(grads.wrt(vars.heads[0]).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn refined_outputs_have_expected_shapes() {
        let g = make_synthetic(&Synthetic::Barbell(4), 0).unwrap();
        let out = train(&g, &small()).unwrap();
        let r = &out.refined;
        assert_eq!(r.a_star.dim(), (8, 8));
        assert_eq!(r.a_star, r.a_star.t());
        assert!(r.a_star.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(r.x_star.ncols(), 8 + 2 * 8);
        assert_eq!(r.views.len(), 3);
        assert!(out.state.in_balls());
    }

    #[test]
    fn ablations_run() {
        let g = make_synthetic(&Synthetic::Barbell(4), 0).unwrap();
        let no_gyro = TrainConfig {
            ablation: Ablation {
                no_gyro: true,
                no_feature: false,
            },
            ..small()
        };
        let out = train(&g, &no_gyro).unwrap();
        assert_eq!(out.refined.x_star.ncols(), 8 + 4 + 4);
        let no_feature = TrainConfig {
            ablation: Ablation {
                no_gyro: false,
                no_feature: true,
            },
            ..small()
        };
        assert_eq!(train(&g, &no_feature).unwrap().refined.x_star, Array2::<f64>::eye(8));
        let no_ricci = TrainConfig { beta: 0.0, ..small() };
        assert!(train(&g, &no_ricci).is_ok());
    }

    #[test]
    fn disconnected_input_uses_largest_component() {
        let g = Graph::from_edges(6, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 1.0), (4, 5, 1.0)]).unwrap();
        let out = train(&g, &TrainConfig { epochs: 3, ..small() }).unwrap();
        assert_eq!(out.nodes, vec![0, 1, 2, 3]);
        let full = embed_in_full(&out.refined, &out.nodes, 6);
        assert_eq!(full.a_star.dim(), (6, 6));
        assert!(full.a_star.row(5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let g = make_synthetic(&Synthetic::Barbell(3), 0).unwrap();
        for (name, report) in objective_grad_check(&g, &small(), 20, 2).unwrap() {
            assert!(report.passed(), "{name}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn karate_refinement_widens_the_gap() {
        let g = make_synthetic(&Synthetic::Karate, 0).unwrap();
        let before = spectral_gap(&g).unwrap();
        for seed in 0..3 {
            let cfg = TrainConfig { epochs: 200, seed, ..Default::default() };
            let out = train(&g, &cfg).unwrap();
            let after = spectral_gap(&out.refined.graph(&g).unwrap()).unwrap();
            assert!(after > before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig::from_toml("beta = 0.25\nepochs = 10\nmanifold = [{ kappa = -0.5, dim = 8 }]\n").unwrap();
        assert_eq!(cfg.beta, 0.25);
        assert_eq!(cfg.manifold, vec![Factor { kappa: -0.5, dim: 8 }]);
        assert_eq!(cfg.tau, 0.5);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("beta = 2.0").is_err());
        let text = toml::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), TrainConfig::default());
    }
}
