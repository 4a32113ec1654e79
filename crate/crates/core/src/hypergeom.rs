//! Poincaré-ball operations at the origin: exponential map, Möbius addition,
//! logarithmic map and the projection that keeps points strictly inside the
//! unit ball.
//!
//! The maps follow the printed forms exactly:
//!
//! ```text
//! exp0(x) = tanh(κ‖x‖) · x/‖x‖
//! log0(y) = 2 · artanh(‖y‖) · y/‖y‖
//! x ⊕ y   = ((1 + 2⟨x,y⟩ + ‖y‖²)x + (1 − ‖x‖²)y) / (1 + 2⟨x,y⟩ + ‖x‖²‖y‖²)
//! ```
//!
//! Note that `log0(exp0(x)) = 2κ·x` for these forms, so the pair is only
//! mutually inverse at κ = 0.5.
//!
//! Each operation also has a vector-Jacobian product (`*_vjp`) used by the
//! autodiff tape. All geometry runs in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as exactly zero by both maps.
pub const ZERO_NORM: f64 = 1e-12;

/// Smallest Möbius denominator magnitude accepted before reporting degeneracy.
pub const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point norm {norm} is outside the open unit ball")]
    Domain { norm: f64 },
    #[error("Möbius denominator {denominator:e} is numerically degenerate")]
    Degenerate { denominator: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("invalid Poincaré config: {0}")]
    Config(String),
}

pub type GeomResult<T> = Result<T, GeomError>;

/// Curvature and clamp margin shared by every ball operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareConfig {
    pub curvature: f64,
    pub ball_epsilon: f64,
}

impl Default for PoincareConfig {
    fn default() -> Self {
        Self {
            curvature: 1.0,
            ball_epsilon: 1e-5,
        }
    }
}

impl PoincareConfig {
    pub fn new(curvature: f64, ball_epsilon: f64) -> GeomResult<Self> {
        let cfg = Self {
            curvature,
            ball_epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_curvature(curvature: f64) -> GeomResult<Self> {
        Self::new(curvature, Self::default().ball_epsilon)
    }

    pub fn validate(&self) -> GeomResult<()> {
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return Err(GeomError::Config(format!(
                "curvature must be > 0, got {}",
                self.curvature
            )));
        }
        if !(self.ball_epsilon > 0.0 && self.ball_epsilon < 1e-2) {
            return Err(GeomError::Config(format!(
                "ball_epsilon must lie in (0, 1e-2), got {}",
                self.ball_epsilon
            )));
        }
        Ok(())
    }

    /// Largest norm a projected point may have.
    #[inline]
    pub fn max_norm(&self) -> f64 {
        1.0 - self.ball_epsilon
    }
}

/// A point strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
}

impl BallPoint {
    /// Wraps coordinates that are already known to lie inside the ball.
    pub fn new(coords: Vec<f64>) -> GeomResult<Self> {
        check_finite(&coords)?;
        let n = norm(&coords);
        if n >= 1.0 {
            return Err(GeomError::Domain { norm: n });
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|v| -v).collect(),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_finite(v: &[f64]) -> GeomResult<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(GeomError::InvalidInput(format!(
            "non-finite value {} at index {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> GeomResult<()> {
    if a.len() != b.len() {
        return Err(GeomError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Atanh via the log form, with the argument clamped below `1 - ball_epsilon`.
#[inline]
fn clamped_artanh(r: f64, cfg: &PoincareConfig) -> f64 {
    let r = r.min(cfg.max_norm());
    0.5 * ((1.0 + r) / (1.0 - r)).ln()
}

/// Rescales `v` onto the sphere of radius `1 - ball_epsilon` when it lies
/// outside it; interior vectors are returned unchanged.
pub fn project_to_ball(v: &[f64], cfg: &PoincareConfig) -> BallPoint {
    let n = norm(v);
    let max = cfg.max_norm();
    if n <= max {
        return BallPoint { coords: v.to_vec() };
    }
    let mut scale = max / n;
    loop {
        let coords: Vec<f64> = v.iter().map(|x| x * scale).collect();
        // rounding can leave the rescaled norm a hair above the target
        if norm(&coords) <= max {
            return BallPoint { coords };
        }
        scale *= 1.0 - f64::EPSILON;
    }
}

/// Pulls the upstream gradient back through [`project_to_ball`].
fn project_vjp(v: &[f64], grad_out: &[f64], cfg: &PoincareConfig) -> Vec<f64> {
    let n = norm(v);
    let max = cfg.max_norm();
    if n <= max {
        return grad_out.to_vec();
    }
    // p = max · v/‖v‖  ⇒  Jᵀg = (max/‖v‖)(g − ⟨û,g⟩û)
    let along = dot(v, grad_out) / (n * n);
    let s = max / n;
    grad_out
        .iter()
        .zip(v)
        .map(|(g, x)| s * (g - along * x))
        .collect()
}

/// Exponential map at the origin, projected into the ball.
pub fn exp_map_zero(x: &[f64], cfg: &PoincareConfig) -> GeomResult<BallPoint> {
    check_finite(x)?;
    let n = norm(x);
    if n < ZERO_NORM {
        return Ok(BallPoint::zeros(x.len()));
    }
    let scale = (cfg.curvature * n).tanh() / n;
    let raw: Vec<f64> = x.iter().map(|v| v * scale).collect();
    Ok(project_to_ball(&raw, cfg))
}

/// Gradient of `exp_map_zero` (including the projection) with respect to `x`.
pub fn exp_map_zero_vjp(x: &[f64], grad_out: &[f64], cfg: &PoincareConfig) -> GeomResult<Vec<f64>> {
    check_finite(x)?;
    check_dims(x, grad_out)?;
    let k = cfg.curvature;
    let n = norm(x);
    if n < ZERO_NORM {
        return Ok(grad_out.iter().map(|g| k * g).collect());
    }
    let t = (k * n).tanh();
    // f(x) = s(‖x‖)·x  ⇒  Jᵀg = s·g + s'(‖x‖)·⟨x,g⟩/‖x‖ · x
    let (s, ds) = if t > cfg.max_norm() {
        let m = cfg.max_norm();
        (m / n, -m / (n * n))
    } else {
        let sech2 = 1.0 - t * t;
        (t / n, (k * sech2 * n - t) / (n * n))
    };
    let coef = ds * dot(x, grad_out) / n;
    Ok(grad_out
        .iter()
        .zip(x)
        .map(|(g, xi)| s * g + coef * xi)
        .collect())
}

/// Logarithmic map at the origin.
pub fn log_map_zero(y: &BallPoint, cfg: &PoincareConfig) -> GeomResult<Vec<f64>> {
    log_map_zero_raw(y.coords(), cfg)
}

/// Same as [`log_map_zero`] on an unchecked slice; fails with a domain error
/// when the norm has escaped the ball.
pub fn log_map_zero_raw(y: &[f64], cfg: &PoincareConfig) -> GeomResult<Vec<f64>> {
    check_finite(y)?;
    let n = norm(y);
    if n >= 1.0 {
        return Err(GeomError::Domain { norm: n });
    }
    if n < ZERO_NORM {
        return Ok(vec![0.0; y.len()]);
    }
    let scale = 2.0 * clamped_artanh(n, cfg) / n;
    Ok(y.iter().map(|v| v * scale).collect())
}

/// Gradient of `log_map_zero` with respect to `y`.
pub fn log_map_zero_vjp(y: &[f64], grad_out: &[f64], cfg: &PoincareConfig) -> GeomResult<Vec<f64>> {
    check_finite(y)?;
    check_dims(y, grad_out)?;
    let n = norm(y);
    if n >= 1.0 {
        return Err(GeomError::Domain { norm: n });
    }
    if n < ZERO_NORM {
        return Ok(grad_out.iter().map(|g| 2.0 * g).collect());
    }
    let a = 2.0 * clamped_artanh(n, cfg);
    let (s, ds) = if n > cfg.max_norm() {
        (a / n, -a / (n * n))
    } else {
        (a / n, (2.0 / (1.0 - n * n) * n - a) / (n * n))
    };
    let coef = ds * dot(y, grad_out) / n;
    Ok(grad_out
        .iter()
        .zip(y)
        .map(|(g, yi)| s * g + coef * yi)
        .collect())
}

struct MobiusParts {
    xx: f64,
    yy: f64,
    num_x: f64,
    num_y: f64,
    den: f64,
}

fn mobius_parts(x: &[f64], y: &[f64]) -> GeomResult<MobiusParts> {
    check_dims(x, y)?;
    let xy = dot(x, y);
    let xx = dot(x, x);
    let yy = dot(y, y);
    let den = 1.0 + 2.0 * xy + xx * yy;
    if den.abs() < MIN_DENOMINATOR {
        return Err(GeomError::Degenerate { denominator: den });
    }
    Ok(MobiusParts {
        xx,
        yy,
        num_x: 1.0 + 2.0 * xy + yy,
        num_y: 1.0 - xx,
        den,
    })
}

fn mobius_raw(x: &[f64], y: &[f64], p: &MobiusParts) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(a, b)| (p.num_x * a + p.num_y * b) / p.den)
        .collect()
}

/// Möbius addition `x ⊕ y`, projected into the ball.
pub fn mobius_add(x: &BallPoint, y: &BallPoint, cfg: &PoincareConfig) -> GeomResult<BallPoint> {
    mobius_add_raw(x.coords(), y.coords(), cfg)
}

pub fn mobius_add_raw(x: &[f64], y: &[f64], cfg: &PoincareConfig) -> GeomResult<BallPoint> {
    check_finite(x)?;
    check_finite(y)?;
    let parts = mobius_parts(x, y)?;
    Ok(project_to_ball(&mobius_raw(x, y, &parts), cfg))
}

/// Gradients of `x ⊕ y` (including the projection) with respect to both
/// operands.
pub fn mobius_add_vjp(
    x: &[f64],
    y: &[f64],
    grad_out: &[f64],
    cfg: &PoincareConfig,
) -> GeomResult<(Vec<f64>, Vec<f64>)> {
    check_dims(x, grad_out)?;
    let p = mobius_parts(x, y)?;
    let raw = mobius_raw(x, y, &p);
    let g = project_vjp(&raw, grad_out, cfg);

    let gx = dot(x, &g);
    let gy = dot(y, &g);
    // ⟨g, N⟩ / D with N the numerator, i.e. ⟨g, out⟩
    let g_num = dot(&g, &raw);
    let inv = 1.0 / p.den;

    let grad_x = (0..x.len())
        .map(|i| {
            let dn = p.num_x * g[i] + 2.0 * gx * y[i] - 2.0 * gy * x[i];
            let dd = 2.0 * y[i] + 2.0 * p.yy * x[i];
            inv * (dn - g_num * dd)
        })
        .collect();
    let grad_y = (0..y.len())
        .map(|i| {
            let dn = p.num_y * g[i] + 2.0 * gx * (x[i] + y[i]);
            let dd = 2.0 * x[i] + 2.0 * p.xx * y[i];
            inv * (dn - g_num * dd)
        })
        .collect();
    Ok((grad_x, grad_y))
}
