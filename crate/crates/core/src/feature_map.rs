//! Random feature maps on gyrovector spaces.
//!
//! Each output coordinate is a "gyrovector wave": a cosine of the signed
//! distance from `x` to a horocycle with ideal direction `ω`, modulated by
//! an exponential growth factor. At κ = 0 the map degenerates to ordinary
//! random Fourier plane waves.

use std::f64::consts::{PI, SQRT_2};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{artan_k, GyroPoint};

/// Cap on `|(n-1)/2 · s|` before exponentiation.
pub const GROWTH_CLAMP: f64 = 30.0;

const SINGULAR_EPS: f64 = 1e-12;

/// Closed form used for the signed horocycle distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorocycleForm {
    /// Busemann function of the ideal point `ω`, rescaled to curvature κ.
    /// Positive when `x` moves toward `ω`; exactly isometry-covariant for
    /// κ < 0, which is what makes the induced kernel translation invariant.
    #[default]
    Busemann,
    /// `(1/√|κ|)·artan_κ(√|κ|(‖x‖² − ⟨ω,x⟩)/(1 + ⟨ω,x⟩))`. Kept for
    /// comparison; it does not yield an invariant kernel.
    Literal,
}

impl HorocycleForm {
    fn eval(self, c: f64, r2: f64, kappa: f64) -> Result<f64> {
        let sk = kappa.abs().sqrt();
        match self {
            HorocycleForm::Busemann => {
                let den = 1.0 - sk * c;
                if den <= SINGULAR_EPS {
                    return Err(Error::Singular(den));
                }
                Ok(2.0 / sk * artan_k((sk * c - kappa.abs() * r2) / den, kappa))
            }
            HorocycleForm::Literal => {
                let den = 1.0 + c;
                if den <= SINGULAR_EPS {
                    return Err(Error::Singular(den));
                }
                Ok(artan_k(sk * (r2 - c) / den, kappa) / sk)
            }
        }
    }
}

/// Signed distance in the literal form; see [`HorocycleForm::Literal`].
pub fn signed_distance(omega: ArrayView1<f64>, x: &GyroPoint) -> Result<f64> {
    let c = omega.dot(x.coords());
    HorocycleForm::Literal.eval(c, x.coords().dot(x.coords()), x.kappa())
}

/// Signed Busemann distance; see [`HorocycleForm::Busemann`].
pub fn busemann_distance(omega: ArrayView1<f64>, x: &GyroPoint) -> Result<f64> {
    let c = omega.dot(x.coords());
    HorocycleForm::Busemann.eval(c, x.coords().dot(x.coords()), x.kappa())
}

/// What is needed to redraw a [`FeatureMapSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapKey {
    pub kappa: f64,
    pub dim_in: usize,
    pub dim_out: usize,
    pub seed: u64,
    #[serde(default)]
    pub form: HorocycleForm,
}

/// Frozen random draws of one feature map. Serializes as its key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapKey", into = "FeatureMapKey")]
pub struct FeatureMapSpec {
    pub kappa: f64,
    pub dim_in: usize,
    pub dim_out: usize,
    /// `dim_out x dim_in`, unit rows.
    pub omegas: Array2<f64>,
    pub biases: Array1<f64>,
    pub lambdas: Array1<f64>,
    pub seed: u64,
    pub form: HorocycleForm,
}

impl TryFrom<FeatureMapKey> for FeatureMapSpec {
    type Error = Error;

    fn try_from(k: FeatureMapKey) -> Result<Self> {
        Ok(sample_feature_map(k.kappa, k.dim_in, k.dim_out, k.seed)?.with_form(k.form))
    }
}

impl From<FeatureMapSpec> for FeatureMapKey {
    fn from(s: FeatureMapSpec) -> Self {
        FeatureMapKey {
            kappa: s.kappa,
            dim_in: s.dim_in,
            dim_out: s.dim_out,
            seed: s.seed,
            form: s.form,
        }
    }
}

/// Draws ω uniformly on the unit sphere, b uniformly on `[0, 2π]` and λ from
/// the standard normal.
pub fn sample_feature_map(
    kappa: f64,
    dim_in: usize,
    dim_out: usize,
    seed: u64,
) -> Result<FeatureMapSpec> {
    if dim_out == 0 || dim_in == 0 {
        return Err(Error::InvalidParameter(format!(
            "feature map dimensions {dim_in} -> {dim_out}"
        )));
    }
    if !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("curvature {kappa}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omegas = Array2::zeros((dim_out, dim_in));
    for mut row in omegas.rows_mut() {
        loop {
            row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
            let n = row.dot(&row).sqrt();
            if n > 1e-12 {
                row /= n;
                break;
            }
        }
    }
    let biases = (0..dim_out).map(|_| rng.random_range(0.0..=2.0 * PI)).collect();
    let lambdas = (0..dim_out).map(|_| rng.sample(StandardNormal)).collect();
    Ok(FeatureMapSpec {
        kappa,
        dim_in,
        dim_out,
        omegas,
        biases,
        lambdas,
        seed,
        form: HorocycleForm::default(),
    })
}

impl FeatureMapSpec {
    pub fn with_form(mut self, form: HorocycleForm) -> Self {
        self.form = form;
        self
    }

    /// Maps every row of `x` (`N x dim_in`) to `N x dim_out`.
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim_in {
            return Err(Error::DimensionMismatch(format!(
                "feature map expects {} inputs, got {}",
                self.dim_in,
                x.ncols()
            )));
        }
        let scale = 1.0 / (self.dim_out as f64).sqrt();
        let proj = x.dot(&self.omegas.t());
        let mut out = Array2::zeros(proj.dim());
        if self.kappa == 0.0 {
            for ((i, k), v) in out.indexed_iter_mut() {
                *v = scale * SQRT_2 * (proj[[i, k]] + self.biases[k]).cos();
            }
            return Ok(out);
        }
        let growth = (self.dim_in as f64 - 1.0) / 2.0;
        let r2 = x.map_axis(Axis(1), |r| r.dot(&r));
        for ((i, k), v) in out.indexed_iter_mut() {
            let s = self.form.eval(proj[[i, k]], r2[i], self.kappa)?;
            let amp = (growth * s).clamp(-GROWTH_CLAMP, GROWTH_CLAMP).exp();
            *v = scale * amp * (self.lambdas[k] * s + self.biases[k]).cos();
        }
        Ok(out)
    }
}

/// Feature vector of one point (`dim_out` entries).
pub fn apply_map(spec: &FeatureMapSpec, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let rows = x.insert_axis(Axis(0));
    Ok(spec.apply_rows(rows)?.row(0).to_owned())
}

/// Monte Carlo estimate of the kernel induced by the map.
pub fn kernel_estimate(spec: &FeatureMapSpec, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    Ok(apply_map(spec, x)?.dot(&apply_map(spec, y)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_feature_map(-1.0, 3, 16, 9).unwrap();
        let b = sample_feature_map(-1.0, 3, 16, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_feature_map(-1.0, 3, 16, 10).unwrap());
        for row in a.omegas.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        assert!(a.biases.iter().all(|b| (0.0..=2.0 * PI).contains(b)));
    }

    #[test]
    fn single_output_draw() {
        let s = sample_feature_map(1.0, 4, 1, 0).unwrap();
        assert_eq!(s.omegas.dim(), (1, 4));
        assert_eq!(s.biases.len(), 1);
        assert_eq!(s.lambdas.len(), 1);
    }

    #[test]
    fn bias_mean_is_pi() {
        let s = sample_feature_map(-1.0, 2, 10_000, 5).unwrap();
        assert!((s.biases.mean().unwrap() - PI).abs() < 0.05);
    }

    #[test]
    fn literal_signed_distance() {
        let omega = array![0.6, 0.8];
        let origin = GyroPoint::origin(2, -1.0);
        assert_eq!(signed_distance(omega.view(), &origin).unwrap(), 0.0);
        let x = GyroPoint::new(&omega * 0.5, -1.0).unwrap();
        let s = signed_distance(omega.view(), &x).unwrap();
        assert!((s - (-1.0f64 / 6.0).atanh()).abs() < 1e-12);
        assert!((s + 0.16824).abs() < 1e-5);
        // crossing the ‖x‖² = ⟨ω,x⟩ locus along ω flips the sign
        let inner = GyroPoint::new(&omega * 0.9, 1.0).unwrap();
        let outer = GyroPoint::new(&omega * 1.1, 1.0).unwrap();
        assert!(signed_distance(omega.view(), &inner).unwrap() < 0.0);
        assert!(signed_distance(omega.view(), &outer).unwrap() > 0.0);
    }

    #[test]
    fn literal_singularity() {
        let omega = array![1.0];
        let x = GyroPoint::new(array![-1.0], 1.0).unwrap();
        assert!(matches!(signed_distance(omega.view(), &x), Err(Error::Singular(_))));
    }

    #[test]
    fn busemann_along_direction_is_geodesic_distance() {
        let omega = array![0.6, 0.8];
        let x = GyroPoint::new(&omega * 0.5, -1.0).unwrap();
        let s = busemann_distance(omega.view(), &x).unwrap();
        assert!((s - 0.5f64.atanh() * 2.0).abs() < 1e-12);
        let back = GyroPoint::new(&omega * -0.5, -1.0).unwrap();
        assert!((busemann_distance(omega.view(), &back).unwrap() + s).abs() < 1e-12);
    }

    #[test]
    fn origin_maps_to_cosine_biases() {
        let spec = sample_feature_map(-1.0, 3, 8, 1).unwrap();
        let phi = apply_map(&spec, Array1::<f64>::zeros(3).view()).unwrap();
        let expected = spec.biases.mapv(f64::cos) / 8f64.sqrt();
        assert!((&phi - &expected).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_feature_is_unaveraged() {
        let spec = sample_feature_map(1.0, 2, 1, 3).unwrap();
        let x = array![0.1, 0.2];
        let phi = apply_map(&spec, x.view()).unwrap();
        let s = busemann_distance(spec.omegas.row(0), &GyroPoint::new(x, 1.0).unwrap()).unwrap();
        let expected = (0.5 * s).exp() * (spec.lambdas[0] * s + spec.biases[0]).cos();
        assert!((phi[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn plane_wave_peak() {
        let mut spec = sample_feature_map(0.0, 1, 4, 2).unwrap();
        spec.omegas = array![[1.0], [1.0], [1.0], [1.0]];
        let b = spec.biases[0];
        let phi = apply_map(&spec, array![-b].view()).unwrap();
        assert!((phi[0] - SQRT_2 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_is_symmetric() {
        let spec = sample_feature_map(-1.0, 2, 64, 4).unwrap();
        let x = array![0.2, -0.1];
        let y = array![-0.3, 0.25];
        assert_eq!(
            kernel_estimate(&spec, x.view(), y.view()).unwrap(),
            kernel_estimate(&spec, y.view(), x.view()).unwrap()
        );
    }

    #[test]
    fn outputs_finite_near_boundary() {
        let spec = sample_feature_map(-1.0, 8, 32, 0).unwrap();
        let x = Array2::<f64>::eye(8) * 0.95;
        let out = spec.apply_rows(x.view()).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn serializes_as_key() {
        let spec = sample_feature_map(-1.0, 3, 5, 42).unwrap().with_form(HorocycleForm::Literal);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(!json.contains("omegas"));
        let back: FeatureMapSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
