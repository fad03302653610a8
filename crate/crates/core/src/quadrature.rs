//! Weighted integration in the (theta, r) half-strip.
//!
//! Every velocity-space integral of the pipeline reduces, for integrands of
//! the form g(v.Omega/|v|, |v|), to
//!
//!   |S^{d-2}| int_0^inf r^{d-1} int_0^pi g(cos t, r) e(cos t, r) sin^{d-2} t dt dr
//!
//! with e(c, r) = exp(rc/sigma - (r^2+1)/(2 sigma) - eta V(r)/sigma). Working
//! in theta rather than c removes the (1-c^2)^{(d-3)/2} endpoint singularity.

use crate::error::{Error, Result};

/// Confining velocity potential V(|v|).
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Zero,
    /// V(r) = beta r^4/4 - alpha r^2/2.
    SelfPropulsion { alpha: f64, beta: f64 },
    /// Natural cubic spline through (nodes, values); querying beyond the last
    /// node is an error.
    TabulatedRadial { nodes: Vec<f64>, values: Vec<f64> },
}

impl PotentialSpec {
    pub fn value(&self, r: f64) -> Result<f64> {
        match self {
            PotentialSpec::Zero => Ok(0.0),
            PotentialSpec::SelfPropulsion { alpha, beta } => {
                Ok(beta * r.powi(4) / 4.0 - alpha * r * r / 2.0)
            }
            PotentialSpec::TabulatedRadial { nodes, values } => {
                spline_eval(nodes, values, r).map(|(v, _)| v)
            }
        }
    }

    /// V'(r), needed by the kinetic drift.
    pub fn deriv(&self, r: f64) -> Result<f64> {
        match self {
            PotentialSpec::Zero => Ok(0.0),
            PotentialSpec::SelfPropulsion { alpha, beta } => Ok(beta * r.powi(3) - alpha * r),
            PotentialSpec::TabulatedRadial { nodes, values } => {
                spline_eval(nodes, values, r).map(|(_, dv)| dv)
            }
        }
    }

    /// Scales the potential to lambda V, used by the penalized family e_lambda.
    pub fn scaled(&self, lambda: f64) -> PotentialSpec {
        match self {
            PotentialSpec::Zero => PotentialSpec::Zero,
            PotentialSpec::SelfPropulsion { alpha, beta } => PotentialSpec::SelfPropulsion {
                alpha: alpha * lambda,
                beta: beta * lambda,
            },
            PotentialSpec::TabulatedRadial { nodes, values } => PotentialSpec::TabulatedRadial {
                nodes: nodes.clone(),
                values: values.iter().map(|v| v * lambda).collect(),
            },
        }
    }
}

/// Model parameters: noise sigma, dimension d, potential and its strength eta.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sigma: f64,
    pub dim: usize,
    pub potential: PotentialSpec,
    pub eta: f64,
}

impl ModelParams {
    pub fn new(sigma: f64, dim: usize, potential: PotentialSpec) -> Result<Self> {
        Self::with_eta(sigma, dim, potential, 1.0)
    }

    pub fn with_eta(sigma: f64, dim: usize, potential: PotentialSpec, eta: f64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if dim < 2 || dim > 3 {
            return Err(Error::Domain(format!("dim must be 2 or 3, got {dim}")));
        }
        if eta <= 0.0 || !eta.is_finite() {
            return Err(Error::Domain(format!("eta must be positive, got {eta}")));
        }
        Ok(ModelParams { sigma, dim, potential, eta })
    }
}

/// w(c, r) = exp(rc/sigma - (r^2+1)/(2 sigma) - eta V(r)/sigma).
pub fn weight_e(c: f64, r: f64, params: &ModelParams) -> Result<f64> {
    if !(-1.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!("c = {c} outside [-1, 1]")));
    }
    if r < 0.0 {
        return Err(Error::Domain(format!("r = {r} negative")));
    }
    let v = params.potential.value(r)?;
    let s = params.sigma;
    Ok((r * c / s - (r * r + 1.0) / (2.0 * s) - params.eta * v / s).exp())
}

/// Surface of the unit sphere S^{d-2}: 2 for d = 2, 2 pi for d = 3.
pub fn sphere_surface(d: usize) -> f64 {
    match d {
        2 => 2.0,
        3 => 2.0 * std::f64::consts::PI,
        _ => unreachable!("dim restricted to 2 or 3"),
    }
}

/// Tensor Gauss-Legendre rule on (0, pi) x (0, r_max), nodes strictly interior.
#[derive(Debug, Clone)]
pub struct PolarGrid {
    pub n_theta: usize,
    pub n_r: usize,
    pub r_max: f64,
    pub theta_nodes: Vec<f64>,
    pub theta_weights: Vec<f64>,
    pub r_nodes: Vec<f64>,
    pub r_weights: Vec<f64>,
}

/// Gauss-Legendre nodes/weights on (-1, 1), Newton on the recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    (
        x.iter().map(|xi| mid + half * xi).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

/// Hard cap on the truncation-radius search.
const R_CAP: f64 = 1e3;

/// Truncation radius: smallest R past the mode with max_c e(c, R) below
/// `tol` times the global max, then a 1.2 safety factor.
pub fn truncation_radius(params: &ModelParams, tol: f64) -> Result<f64> {
    // max over c in [-1, 1] of e(c, r) is at c = 1
    let profile = |r: f64| weight_e(1.0, r, params);
    let step = 1e-3;
    let mut max = 0.0;
    let mut r_argmax = 0.0;
    let mut r = 0.0;
    while r <= R_CAP {
        let e = profile(r)?;
        if e > max {
            max = e;
            r_argmax = r;
        }
        r += step;
    }
    let mut r = r_argmax;
    while r <= R_CAP {
        if profile(r)? <= tol * max {
            return Ok(1.2 * r);
        }
        r += step;
    }
    Err(Error::NonconfiningPotential { cap: R_CAP, tol })
}

/// Builds the tensor quadrature grid, choosing r_max from the decay of the weight.
pub fn build_polar_grid(
    params: &ModelParams,
    n_theta: usize,
    n_r: usize,
    truncation_tol: f64,
) -> Result<PolarGrid> {
    if n_theta < 4 || n_r < 4 {
        return Err(Error::Domain(format!(
            "grid needs n_theta >= 4 and n_r >= 4, got ({n_theta}, {n_r})"
        )));
    }
    if !(0.0 < truncation_tol && truncation_tol < 1.0) {
        return Err(Error::Domain(format!(
            "truncation_tol must be in (0, 1), got {truncation_tol}"
        )));
    }
    let r_max = truncation_radius(params, truncation_tol)?;
    let (theta_nodes, theta_weights) = gauss_legendre_on(n_theta, 0.0, std::f64::consts::PI);
    let (r_nodes, r_weights) = gauss_legendre_on(n_r, 0.0, r_max);
    Ok(PolarGrid {
        n_theta,
        n_r,
        r_max,
        theta_nodes,
        theta_weights,
        r_nodes,
        r_weights,
    })
}

/// int r^{d-1} int f(cos t, r) e(cos t, r) sin^{d-2} t dt dr over the
/// truncated half-strip. The |S^{d-2}| prefactor is left to callers.
pub fn integrate_weighted<F>(f: F, grid: &PolarGrid, params: &ModelParams) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let d = params.dim;
    let mut total = 0.0;
    for (&r, &wr) in grid.r_nodes.iter().zip(&grid.r_weights) {
        let rad = r.powi(d as i32 - 1);
        for (&theta, &wt) in grid.theta_nodes.iter().zip(&grid.theta_weights) {
            let c = theta.cos();
            let s = theta.sin();
            let e = weight_e(c, r, params)?;
            let val = f(c, r);
            if !val.is_finite() {
                return Err(Error::Integrand { theta, r });
            }
            total += wr * wt * val * e * rad * s.powi(d as i32 - 2);
        }
    }
    Ok(total)
}

/// Natural cubic spline evaluation returning (value, derivative).
fn spline_eval(nodes: &[f64], values: &[f64], r: f64) -> Result<(f64, f64)> {
    let n = nodes.len();
    assert!(n >= 2 && n == values.len());
    if r < nodes[0] || r > nodes[n - 1] {
        return Err(Error::Extrapolation(r));
    }
    // second derivatives by the standard tridiagonal sweep
    let mut m = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut work = vec![0.0; n];
    for i in 1..n - 1 {
        let sig = (nodes[i] - nodes[i - 1]) / (nodes[i + 1] - nodes[i - 1]);
        let p = sig * m[i - 1] + 2.0;
        m[i] = (sig - 1.0) / p;
        work[i] = (values[i + 1] - values[i]) / (nodes[i + 1] - nodes[i])
            - (values[i] - values[i - 1]) / (nodes[i] - nodes[i - 1]);
        work[i] = (6.0 * work[i] / (nodes[i + 1] - nodes[i - 1]) - sig * u[i - 1]) / p;
        u[i] = work[i];
    }
    let mut y2 = vec![0.0; n];
    for i in (1..n - 1).rev() {
        y2[i] = m[i] * y2[i + 1] + u[i];
    }
    let k = match nodes.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
        Ok(k) => k.min(n - 2),
        Err(k) => k.saturating_sub(1).min(n - 2),
    };
    let h = nodes[k + 1] - nodes[k];
    let a = (nodes[k + 1] - r) / h;
    let b = (r - nodes[k]) / h;
    let val = a * values[k]
        + b * values[k + 1]
        + ((a * a * a - a) * y2[k] + (b * b * b - b) * y2[k + 1]) * h * h / 6.0;
    let dv = (values[k + 1] - values[k]) / h
        + (-(3.0 * a * a - 1.0) * y2[k] + (3.0 * b * b - 1.0) * y2[k + 1]) * h / 6.0;
    Ok((val, dv))
}
