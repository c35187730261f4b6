//! κ-stereographic gyrovector arithmetic and the product space built from
//! constant-curvature factors plus a rotational factor carried by raw
//! features.
//!
//! Negative κ lives on the open ball of radius `1/√|κ|`; positive κ on all of
//! `ℝᵈ` (the stereographic sphere). κ = 0 is only meaningful as a limit and is
//! rejected by [`ManifoldConfig`].

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative margin kept inside the ball boundary for κ < 0.
pub const BALL_EPS: f64 = 1e-5;

/// `tan` for κ > 0, `tanh` for κ < 0, identity at κ = 0.
pub fn tan_k(z: f64, kappa: f64) -> f64 {
    if kappa > 0.0 {
        z.tan()
    } else if kappa < 0.0 {
        z.tanh()
    } else {
        z
    }
}

/// Inverse of [`tan_k`]. The hyperbolic branch clamps its argument just
/// inside (-1, 1).
pub fn artan_k(z: f64, kappa: f64) -> f64 {
    if kappa > 0.0 {
        z.atan()
    } else if kappa < 0.0 {
        z.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh()
    } else {
        z
    }
}

/// Largest admissible norm for κ < 0, `None` otherwise.
pub fn max_radius(kappa: f64) -> Option<f64> {
    (kappa < 0.0).then(|| (1.0 - BALL_EPS) / kappa.abs().sqrt())
}

/// Rescales `x` onto the admissible ball when it falls outside.
pub fn project(mut x: Array1<f64>, kappa: f64) -> Array1<f64> {
    if let Some(r) = max_radius(kappa) {
        let norm = x.dot(&x).sqrt();
        if norm > r {
            x *= r / norm;
        }
    }
    x
}

/// Möbius addition on raw coordinates, projected for κ < 0.
pub fn mobius_add(x: ArrayView1<f64>, y: ArrayView1<f64>, kappa: f64) -> Array1<f64> {
    let xy = x.dot(&y);
    let x2 = x.dot(&x);
    let y2 = y.dot(&y);
    let a = 1.0 - 2.0 * kappa * xy - kappa * y2;
    let b = 1.0 + kappa * x2;
    let den = 1.0 - 2.0 * kappa * xy + kappa * kappa * x2 * y2;
    let out = (&x * a + &y * b) / den;
    project(out, kappa)
}

/// Möbius matrix-vector product on raw coordinates.
pub fn mobius_matvec(w: ArrayView2<f64>, x: ArrayView1<f64>, kappa: f64) -> Array1<f64> {
    let wx = w.dot(&x);
    let xn = x.dot(&x).sqrt();
    let wxn = wx.dot(&wx).sqrt();
    if xn == 0.0 || wxn == 0.0 {
        return Array1::zeros(wx.len());
    }
    let sk = kappa.abs().sqrt();
    let scale = if kappa == 0.0 {
        1.0
    } else {
        tan_k(wxn / xn * artan_k(sk * xn, kappa), kappa) / (sk * wxn)
    };
    project(wx * scale, kappa)
}

/// Geodesic distance on raw coordinates.
pub fn distance(x: ArrayView1<f64>, y: ArrayView1<f64>, kappa: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let diff = mobius_add((-&x).view(), y, kappa);
    let n = diff.dot(&diff).sqrt();
    if kappa == 0.0 {
        return 2.0 * n;
    }
    let sk = kappa.abs().sqrt();
    2.0 / sk * artan_k(sk * n, kappa)
}

/// Logarithmic map at the origin on raw coordinates.
pub fn log0(x: ArrayView1<f64>, kappa: f64) -> Array1<f64> {
    let n = x.dot(&x).sqrt();
    if n == 0.0 {
        return Array1::zeros(x.len());
    }
    let sk = kappa.abs().sqrt();
    let scale = if kappa == 0.0 {
        2.0
    } else {
        2.0 / sk * artan_k(sk * n, kappa) / n
    };
    &x * scale
}

/// Conformal factor `2 / (1 + κ‖x‖²)`.
pub fn conformal_factor(x: ArrayView1<f64>, kappa: f64) -> f64 {
    2.0 / (1.0 + kappa * x.dot(&x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GyroPoint {
    coords: Array1<f64>,
    kappa: f64,
}

impl GyroPoint {
    /// Fails when a κ < 0 point lies on or outside the ball boundary.
    pub fn new(coords: Array1<f64>, kappa: f64) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) || !kappa.is_finite() {
            return Err(Error::NonFinite("gyrovector coordinates".into()));
        }
        if kappa < 0.0 && kappa * coords.dot(&coords) <= -1.0 {
            return Err(Error::InvalidParameter(format!(
                "point with squared norm {} is outside the ball of curvature {kappa}",
                coords.dot(&coords)
            )));
        }
        Ok(GyroPoint { coords, kappa })
    }

    /// Like [`GyroPoint::new`] but projects outside points onto the ball.
    pub fn projected(coords: Array1<f64>, kappa: f64) -> Self {
        GyroPoint {
            coords: project(coords, kappa),
            kappa,
        }
    }

    pub fn origin(dim: usize, kappa: f64) -> Self {
        GyroPoint {
            coords: Array1::zeros(dim),
            kappa,
        }
    }

    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn neg(&self) -> GyroPoint {
        GyroPoint {
            coords: -&self.coords,
            kappa: self.kappa,
        }
    }

    pub fn into_coords(self) -> Array1<f64> {
        self.coords
    }
}

fn same_space(x: &GyroPoint, y: &GyroPoint) -> Result<()> {
    if x.kappa != y.kappa {
        return Err(Error::CurvatureMismatch(x.kappa, y.kappa));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gyrovectors of dimension {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

pub fn gyro_add(x: &GyroPoint, y: &GyroPoint) -> Result<GyroPoint> {
    same_space(x, y)?;
    Ok(GyroPoint {
        coords: mobius_add(x.coords.view(), y.coords.view(), x.kappa),
        kappa: x.kappa,
    })
}

pub fn gyro_matvec(w: ArrayView2<f64>, x: &GyroPoint) -> Result<GyroPoint> {
    if w.ncols() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} x {} matrix applied to {}-dim gyrovector",
            w.nrows(),
            w.ncols(),
            x.dim()
        )));
    }
    Ok(GyroPoint {
        coords: mobius_matvec(w, x.coords.view(), x.kappa),
        kappa: x.kappa,
    })
}

pub fn gyro_distance(x: &GyroPoint, y: &GyroPoint) -> Result<f64> {
    same_space(x, y)?;
    Ok(distance(x.coords.view(), y.coords.view(), x.kappa))
}

pub fn log_map_zero(x: &GyroPoint) -> Array1<f64> {
    log0(x.coords.view(), x.kappa)
}

/// Euclidean to Riemannian gradient: divide by the squared conformal factor.
pub fn egrad_to_rgrad(x: &GyroPoint, g: ArrayView1<f64>) -> Result<Array1<f64>> {
    if g.len() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}-dim gradient at {}-dim gyrovector",
            g.len(),
            x.dim()
        )));
    }
    let lambda = conformal_factor(x.coords.view(), x.kappa);
    Ok(&g / (lambda * lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub kappa: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    pub factors: Vec<Factor>,
    /// Width of the rotational factor, i.e. the raw feature dimension.
    pub euclidean_dim: usize,
}

impl ManifoldConfig {
    pub fn new(factors: Vec<Factor>, euclidean_dim: usize) -> Result<Self> {
        let cfg = ManifoldConfig {
            factors,
            euclidean_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One hyperbolic and one spherical factor of dimension 32.
    pub fn default_for(euclidean_dim: usize) -> Self {
        ManifoldConfig {
            factors: vec![
                Factor {
                    kappa: -1.0,
                    dim: 32,
                },
                Factor {
                    kappa: 1.0,
                    dim: 32,
                },
            ],
            euclidean_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::InvalidParameter(
                "product needs at least one curved factor".into(),
            ));
        }
        for f in &self.factors {
            if f.kappa == 0.0 || !f.kappa.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "factor curvature {} must be finite and nonzero",
                    f.kappa
                )));
            }
            if f.dim == 0 {
                return Err(Error::InvalidParameter("factor dimension 0".into()));
            }
        }
        Ok(())
    }

    /// Number of views: curved factors plus the rotational one.
    pub fn num_views(&self) -> usize {
        self.factors.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    pub factors: Vec<GyroPoint>,
    pub euclidean: Array1<f64>,
}

impl ProductPoint {
    fn conforms(&self, cfg: &ManifoldConfig) -> Result<()> {
        if self.factors.len() != cfg.factors.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} factors, config has {}",
                self.factors.len(),
                cfg.factors.len()
            )));
        }
        for (p, f) in self.factors.iter().zip(&cfg.factors) {
            if p.kappa != f.kappa {
                return Err(Error::CurvatureMismatch(p.kappa, f.kappa));
            }
            if p.dim() != f.dim {
                return Err(Error::DimensionMismatch(format!(
                    "factor of dim {}, config says {}",
                    p.dim(),
                    f.dim
                )));
            }
        }
        if self.euclidean.len() != cfg.euclidean_dim {
            return Err(Error::DimensionMismatch(format!(
                "euclidean part of dim {}, config says {}",
                self.euclidean.len(),
                cfg.euclidean_dim
            )));
        }
        Ok(())
    }
}

/// `sqrt(Σ d²_κ + (‖p_e‖ − ‖q_e‖)²)`; the rotational factor only sees norms.
pub fn product_distance(p: &ProductPoint, q: &ProductPoint, cfg: &ManifoldConfig) -> Result<f64> {
    p.conforms(cfg)?;
    q.conforms(cfg)?;
    let mut sq = 0.0;
    for (a, b) in p.factors.iter().zip(&q.factors) {
        let d = gyro_distance(a, b)?;
        sq += d * d;
    }
    let radial = p.euclidean.dot(&p.euclidean).sqrt() - q.euclidean.dot(&q.euclidean).sqrt();
    Ok((sq + radial * radial).sqrt())
}
