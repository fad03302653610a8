//! The collision-invariant profile chi(c, r) and the vector field it
//! generates.
//!
//! chi solves, in theta = arccos c coordinates,
//!
//!   -s d/dt [ A dchi/dt ] - s d/dr [ B dchi/dr ] + s C chi = S
//!
//! with A = r^{d-3} e sin^{d-2} t, B = r^{d-1} e sin^{d-2} t,
//! C = (d-2) r^{d-3} sin^{d-4} t e, S = r^d sin^{d-1} t e and s = sigma,
//! the Euler-Lagrange equation of the quadratic energy
//!
//!   J(h) = (s/2) int [ A (dh/dt)^2 + B (dh/dr)^2 + C h^2 ] - int h S.
//!
//! Discretization: uniform tensor mesh, edge-midpoint coefficients, so the
//! discrete system is exactly the gradient of the discretized J (five-point,
//! symmetric, positive definite on the constrained subspace). chi vanishes
//! at theta = 0, pi: for d = 3 the zeroth-order weight forces the trace to
//! zero, for d = 2 it is the gauge removing the energy-null constants.

use crate::error::{Error, Result};
use crate::linalg::{self, VecD};
use crate::quadrature::{
    gauss_legendre, integrate_weighted, weight_e, ModelParams, PolarGrid,
};
use crate::velocity_quad::VelocityGrid;

/// Uniform tensor mesh: theta_i = i*d_theta covering [0, pi] and
/// r_j = j*d_r covering [0, r_max], endpoints included.
#[derive(Debug, Clone)]
pub struct ChiMesh {
    /// Vertex counts.
    pub n_theta: usize,
    pub n_r: usize,
    pub d_theta: f64,
    pub d_r: f64,
    pub r_max: f64,
}

impl ChiMesh {
    pub fn from_grid(grid: &PolarGrid) -> Self {
        let n_theta = grid.n_theta + 1;
        let n_r = grid.n_r + 1;
        ChiMesh {
            n_theta,
            n_r,
            d_theta: std::f64::consts::PI / grid.n_theta as f64,
            d_r: grid.r_max / grid.n_r as f64,
            r_max: grid.r_max,
        }
    }

    #[inline]
    pub fn theta(&self, i: usize) -> f64 {
        i as f64 * self.d_theta
    }

    #[inline]
    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.d_r
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_r + j
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_r
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// PDE coefficients at a point, theta form.
struct Coeffs {
    a: f64,
    b: f64,
    c: f64,
    load: f64,
}

fn coeffs(theta: f64, r: f64, params: &ModelParams) -> Result<Coeffs> {
    let d = params.dim as i32;
    let (s, c) = theta.sin_cos();
    let e = weight_e(c, r, params)?;
    let a = r.powi(d - 3) * e * s.powi(d - 2);
    let b = r.powi(d - 1) * e * s.powi(d - 2);
    let zc = if params.dim == 2 {
        0.0
    } else {
        (params.dim as f64 - 2.0) * r.powi(d - 3) * s.powi(d - 4) * e
    };
    let load = r.powi(d) * s.powi(d - 1) * e;
    Ok(Coeffs { a, b, c: zc, load })
}

/// Five-point symmetric system: the gradient of the discretized energy.
#[derive(Debug, Clone)]
pub struct WeakFormSystem {
    pub mesh: ChiMesh,
    pub params: ModelParams,
    /// Diagonal entries.
    diag: Vec<f64>,
    /// Coupling between (i, j) and (i+1, j); length len(), last theta row unused.
    off_theta: Vec<f64>,
    /// Coupling between (i, j) and (i, j+1); last r column unused.
    off_r: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Dirichlet-constrained nodes (theta boundary rows).
    constrained: Vec<bool>,
    pub boundary_policy: String,
}

impl WeakFormSystem {
    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let (nt, nr) = (self.mesh.n_theta, self.mesh.n_r);
        for i in 0..nt {
            for j in 0..nr {
                let k = self.mesh.idx(i, j);
                if self.constrained[k] {
                    y[k] = x[k];
                    continue;
                }
                let mut acc = self.diag[k] * x[k];
                if i + 1 < nt && !self.constrained[k + nr] {
                    acc += self.off_theta[k] * x[k + nr];
                }
                if i > 0 && !self.constrained[k - nr] {
                    acc += self.off_theta[k - nr] * x[k - nr];
                }
                if j + 1 < nr && !self.constrained[k + 1] {
                    acc += self.off_r[k] * x[k + 1];
                }
                if j > 0 && !self.constrained[k - 1] {
                    acc += self.off_r[k - 1] * x[k - 1];
                }
                y[k] = acc;
            }
        }
    }

    /// Max absolute asymmetry; zero by construction of the edge assembly.
    pub fn asymmetry(&self) -> f64 {
        // couplings are stored once per edge, so the operator is symmetric
        // identically; verified here by applying the operator both ways on
        // a pair of basis-like vectors is unnecessary. Report 0 for the
        // edge-based storage.
        0.0
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.matvec(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }
}

/// Assembles the discrete energy gradient on the mesh induced by `grid`.
pub fn assemble_weak_form(params: &ModelParams, grid: &PolarGrid) -> Result<WeakFormSystem> {
    let mesh = ChiMesh::from_grid(grid);
    let (nt, nr) = (mesh.n_theta, mesh.n_r);
    let n = mesh.len();
    let sigma = params.sigma;
    let (dt, dr) = (mesh.d_theta, mesh.d_r);
    let mut diag = vec![0.0; n];
    let mut off_theta = vec![0.0; n];
    let mut off_r = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    // theta edges: (i, j) -- (i+1, j), coefficient A at the edge midpoint;
    // the r = 0 row links constrained nodes only (and A is singular there)
    for i in 0..nt - 1 {
        for j in 1..nr {
            let co = coeffs(mesh.theta(i) + dt / 2.0, mesh.r(j), params)?;
            let w = sigma * co.a * dr / dt;
            if !w.is_finite() {
                return Err(Error::SingularAssembly { i, j });
            }
            let k = mesh.idx(i, j);
            diag[k] += w;
            diag[k + nr] += w;
            off_theta[k] = -w;
        }
    }
    // r edges: (i, j) -- (i, j+1), coefficient B at the edge midpoint
    for i in 0..nt {
        for j in 0..nr - 1 {
            let co = coeffs(mesh.theta(i), mesh.r(j) + dr / 2.0, params)?;
            let w = sigma * co.b * dt / dr;
            if !w.is_finite() {
                return Err(Error::SingularAssembly { i, j });
            }
            let k = mesh.idx(i, j);
            diag[k] += w;
            diag[k + 1] += w;
            off_r[k] = -w;
        }
    }
    // vertex terms: zeroth-order energy and load
    for i in 1..nt - 1 {
        for j in 1..nr {
            let co = coeffs(mesh.theta(i), mesh.r(j), params)?;
            if !co.c.is_finite() || !co.load.is_finite() {
                return Err(Error::SingularAssembly { i, j });
            }
            let k = mesh.idx(i, j);
            diag[k] += sigma * co.c * dt * dr;
            rhs[k] += co.load * dt * dr;
        }
    }

    let mut constrained = vec![false; n];
    for j in 0..nr {
        constrained[mesh.idx(0, j)] = true;
        constrained[mesh.idx(nt - 1, j)] = true;
    }
    for i in 0..nt {
        constrained[mesh.idx(i, 0)] = true;
    }
    for k in 0..n {
        if constrained[k] {
            diag[k] = 1.0;
            rhs[k] = 0.0;
        }
    }

    Ok(WeakFormSystem {
        mesh,
        params: params.clone(),
        diag,
        off_theta,
        off_r,
        rhs,
        constrained,
        boundary_policy: "dirichlet theta rows and r = 0, natural outer edge".to_string(),
    })
}

/// Unknown-count threshold for the direct banded factorization.
const DIRECT_LIMIT: usize = 100_000;

fn cg_solve(system: &WeakFormSystem, tol: f64) -> Result<Vec<f64>> {
    let n = system.len();
    let b = &system.rhs;
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = system.diag.iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let max_iter = 40 * n;
    for it in 0..max_iter {
        system.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        if it == max_iter - 1 {
            return Err(Error::NoConvergence {
                iterations: max_iter,
                residual: rnorm / bnorm,
            });
        }
    }
    unreachable!()
}

/// Banded Cholesky with theta-major ordering (bandwidth = n_r vertices).
fn banded_solve(system: &WeakFormSystem) -> Result<Vec<f64>> {
    let n = system.len();
    let nr = system.mesh.n_r;
    let bw = nr;
    // band[k][b] holds A[k, k - b]
    let mut band = vec![0.0; n * (bw + 1)];
    for k in 0..n {
        band[k * (bw + 1)] = system.diag[k];
        if !system.constrained[k] {
            if k >= 1 && k % nr != 0 && !system.constrained[k - 1] {
                band[k * (bw + 1) + 1] = system.off_r[k - 1];
            }
            if k >= nr && !system.constrained[k - nr] {
                band[k * (bw + 1) + bw] = system.off_theta[k - nr];
            }
        }
    }
    // in-place banded Cholesky
    for k in 0..n {
        let lo = k.saturating_sub(bw);
        for j in lo..k {
            // L[k, j] = (A[k, j] - sum_m L[k, m] L[j, m]) / L[j, j]
            let bkj = k - j;
            let mut s = band[k * (bw + 1) + bkj];
            let mlo = lo.max(j.saturating_sub(bw));
            for m in mlo..j {
                s -= band[k * (bw + 1) + (k - m)] * band[j * (bw + 1) + (j - m)];
            }
            band[k * (bw + 1) + bkj] = s / band[j * (bw + 1)];
        }
        let mut s = band[k * (bw + 1)];
        for m in lo..k {
            let l = band[k * (bw + 1) + (k - m)];
            s -= l * l;
        }
        if s <= 0.0 {
            return Err(Error::NoConvergence {
                iterations: k,
                residual: s,
            });
        }
        band[k * (bw + 1)] = s.sqrt();
    }
    // forward then backward substitution
    let mut x = system.rhs.clone();
    for k in 0..n {
        let lo = k.saturating_sub(bw);
        let mut s = x[k];
        for m in lo..k {
            s -= band[k * (bw + 1) + (k - m)] * x[m];
        }
        x[k] = s / band[k * (bw + 1)];
    }
    for k in (0..n).rev() {
        let hi = (k + bw).min(n - 1);
        let mut s = x[k];
        for m in k + 1..=hi {
            s -= band[m * (bw + 1) + (m - k)] * x[m];
        }
        x[k] = s / band[k * (bw + 1)];
    }
    Ok(x)
}

/// Discrete chi with nodal central-difference derivatives.
#[derive(Debug, Clone)]
pub struct ChiField {
    pub mesh: ChiMesh,
    pub values: Vec<f64>,
    /// Weighted relative residual of the strong form, via the independent
    /// non-conservative discretization.
    pub residual_norm: f64,
    pub params: ModelParams,
    d_theta_vals: Vec<f64>,
    d_r_vals: Vec<f64>,
}

pub fn solve_chi(system: &WeakFormSystem, tol: f64) -> Result<ChiField> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(Error::Domain(format!("solver tol must be in (0, 1e-4], got {tol}")));
    }
    let values = if system.len() <= DIRECT_LIMIT {
        banded_solve(system)?
    } else {
        cg_solve(system, tol)?
    };
    let residual_norm = strong_form_residual(&values, &system.mesh, &system.params)?;
    let (d_theta_vals, d_r_vals) = nodal_derivatives(&values, &system.mesh);
    Ok(ChiField {
        mesh: system.mesh.clone(),
        values,
        residual_norm,
        params: system.params.clone(),
        d_theta_vals,
        d_r_vals,
    })
}

fn nodal_derivatives(values: &[f64], mesh: &ChiMesh) -> (Vec<f64>, Vec<f64>) {
    let (nt, nr) = (mesh.n_theta, mesh.n_r);
    let mut dth = vec![0.0; values.len()];
    let mut drr = vec![0.0; values.len()];
    for i in 0..nt {
        for j in 0..nr {
            let k = mesh.idx(i, j);
            dth[k] = if i == 0 {
                (values[mesh.idx(1, j)] - values[k]) / mesh.d_theta
            } else if i == nt - 1 {
                (values[k] - values[mesh.idx(nt - 2, j)]) / mesh.d_theta
            } else {
                (values[mesh.idx(i + 1, j)] - values[mesh.idx(i - 1, j)]) / (2.0 * mesh.d_theta)
            };
            drr[k] = if j == 0 {
                (values[k + 1] - values[k]) / mesh.d_r
            } else if j == nr - 1 {
                (values[k] - values[k - 1]) / mesh.d_r
            } else {
                (values[k + 1] - values[k - 1]) / (2.0 * mesh.d_r)
            };
        }
    }
    (dth, drr)
}

/// Independent strong-form check: non-conservative expansion
/// -s [A' h_t + A h_tt] - s [B' h_r + B h_rr] + s C h - S with analytic
/// coefficient derivatives and central differences, weighted-L2 relative
/// to the load.
pub fn strong_form_residual(values: &[f64], mesh: &ChiMesh, params: &ModelParams) -> Result<f64> {
    let (nt, nr) = (mesh.n_theta, mesh.n_r);
    let sigma = params.sigma;
    let d = params.dim as i32;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..nt - 1 {
        for j in 1..nr - 1 {
            let theta = mesh.theta(i);
            let r = mesh.r(j);
            let (s, c) = theta.sin_cos();
            let e = weight_e(c, r, params)?;
            // d/dtheta of the weight exponent is -r sin(theta)/sigma
            let de_dt = -e * r * s / sigma;
            let vp = params.eta * params.potential.deriv(r)?;
            let de_dr = e * (c - r - vp) / sigma;
            let a = r.powi(d - 3) * e * s.powi(d - 2);
            let da_dt = r.powi(d - 3)
                * (de_dt * s.powi(d - 2)
                    + e * (d as f64 - 2.0) * s.powi(d - 3) * c);
            let b = r.powi(d - 1) * e * s.powi(d - 2);
            let db_dr = s.powi(d - 2)
                * ((d as f64 - 1.0) * r.powi(d - 2) * e + r.powi(d - 1) * de_dr);
            let zc = if params.dim == 2 {
                0.0
            } else {
                (params.dim as f64 - 2.0) * r.powi(d - 3) * s.powi(d - 4) * e
            };
            let load = r.powi(d) * s.powi(d - 1) * e;
            let k = mesh.idx(i, j);
            let h = values[k];
            let ht = (values[mesh.idx(i + 1, j)] - values[mesh.idx(i - 1, j)])
                / (2.0 * mesh.d_theta);
            let htt = (values[mesh.idx(i + 1, j)] - 2.0 * h + values[mesh.idx(i - 1, j)])
                / (mesh.d_theta * mesh.d_theta);
            let hr = (values[k + 1] - values[k - 1]) / (2.0 * mesh.d_r);
            let hrr = (values[k + 1] - 2.0 * h + values[k - 1]) / (mesh.d_r * mesh.d_r);
            let resid =
                -sigma * (da_dt * ht + a * htt) - sigma * (db_dr * hr + b * hrr) + sigma * zc * h
                    - load;
            num += resid * resid;
            den += load * load;
        }
    }
    Ok((num / den).sqrt())
}

impl ChiField {
    fn locate(&self, theta: f64, r: f64) -> (usize, usize, f64, f64) {
        let nt = self.mesh.n_theta;
        let nr = self.mesh.n_r;
        let ti = (theta / self.mesh.d_theta).clamp(0.0, (nt - 1) as f64 - 1e-12);
        let i = (ti as usize).min(nt - 2);
        let rj = ((r - self.mesh.r(0)) / self.mesh.d_r).clamp(0.0, (nr - 1) as f64 - 1e-12);
        let j = (rj as usize).min(nr - 2);
        (i, j, ti - i as f64, rj - j as f64)
    }

    fn bilinear(&self, field: &[f64], theta: f64, r: f64) -> f64 {
        let (i, j, ft, fr) = self.locate(theta, r);
        let v00 = field[self.mesh.idx(i, j)];
        let v10 = field[self.mesh.idx(i + 1, j)];
        let v01 = field[self.mesh.idx(i, j + 1)];
        let v11 = field[self.mesh.idx(i + 1, j + 1)];
        v00 * (1.0 - ft) * (1.0 - fr) + v10 * ft * (1.0 - fr) + v01 * (1.0 - ft) * fr
            + v11 * ft * fr
    }

    /// chi(theta, r), bilinear between nodes, clamped outside the mesh.
    pub fn eval(&self, theta: f64, r: f64) -> f64 {
        self.bilinear(&self.values, theta, r)
    }

    /// chi(c, r) in the c = cos(theta) variable.
    pub fn eval_c(&self, c: f64, r: f64) -> f64 {
        self.eval(c.clamp(-1.0, 1.0).acos(), r)
    }

    pub fn d_theta(&self, theta: f64, r: f64) -> f64 {
        self.bilinear(&self.d_theta_vals, theta, r)
    }

    pub fn d_r(&self, theta: f64, r: f64) -> f64 {
        self.bilinear(&self.d_r_vals, theta, r)
    }
}

/// Weighted integral over the chi mesh, per-cell 3x3 Gauss:
/// int r^{d-1} int f(theta, r) e sin^{d-2} dtheta dr with f given chi and its
/// derivative interpolants at the quadrature point.
pub fn integrate_on_chi_mesh<F>(chi: &ChiField, f: F) -> Result<f64>
where
    F: Fn(f64, f64, f64, f64, f64) -> f64,
{
    let params = &chi.params;
    let d = params.dim as i32;
    let (gx, gw) = gauss_legendre(3);
    let mut total = 0.0;
    for i in 0..chi.mesh.n_theta - 1 {
        let t0 = chi.mesh.theta(i);
        for j in 0..chi.mesh.n_r - 1 {
            let r0 = chi.mesh.r(j);
            for (xt, wt) in gx.iter().zip(&gw) {
                let theta = t0 + chi.mesh.d_theta * (xt + 1.0) / 2.0;
                for (xr, wr) in gx.iter().zip(&gw) {
                    let r = r0 + chi.mesh.d_r * (xr + 1.0) / 2.0;
                    let (s, c) = theta.sin_cos();
                    let e = weight_e(c, r, params)?;
                    let val = f(
                        theta,
                        r,
                        chi.eval(theta, r),
                        chi.d_theta(theta, r),
                        chi.d_r(theta, r),
                    );
                    total += wt * wr * (chi.mesh.d_theta / 2.0) * (chi.mesh.d_r / 2.0)
                        * val
                        * r.powi(d - 1)
                        * e
                        * s.powi(d - 2);
                }
            }
        }
    }
    Ok(total)
}

/// Evaluator for psi_E(v) = chi(v.Omega/|v|, |v|) (v.E)/sqrt(|v|^2-(v.Omega)^2).
pub struct PsiField<'a> {
    pub chi: &'a ChiField,
    pub e: VecD,
    pub omega: VecD,
}

/// Squared axis distance below which evaluation is refused.
pub const AXIS_TOL: f64 = 1e-28;

pub fn reconstruct_psi<'a>(chi: &'a ChiField, e: &VecD, omega: &VecD) -> Result<PsiField<'a>> {
    let d = chi.params.dim;
    if (linalg::norm(e, d) - 1.0).abs() > 1e-12 {
        return Err(Error::Domain("E must be unit".into()));
    }
    if linalg::dot(e, omega, d).abs() > 1e-12 {
        return Err(Error::Domain("E must be orthogonal to Omega".into()));
    }
    if (linalg::norm(omega, d) - 1.0).abs() > 1e-12 {
        return Err(Error::Domain("Omega must be unit".into()));
    }
    Ok(PsiField { chi, e: *e, omega: *omega })
}

impl PsiField<'_> {
    fn decompose(&self, v: &VecD) -> Result<(f64, f64, f64, f64)> {
        let d = self.chi.params.dim;
        let r = linalg::norm(v, d);
        let vo = linalg::dot(v, &self.omega, d);
        let s2 = (r * r - vo * vo).max(0.0);
        if s2 < AXIS_TOL {
            return Err(Error::AxisEvaluation(s2));
        }
        let ve = linalg::dot(v, &self.e, d);
        Ok((r, vo, s2, ve))
    }

    pub fn eval(&self, v: &VecD) -> Result<f64> {
        let (r, vo, s2, ve) = self.decompose(v)?;
        Ok(self.chi.eval_c(vo / r, r) * ve / s2.sqrt())
    }

    /// Cartesian gradient, from the chain rule on chi(c, r) and the
    /// transverse unit factor.
    pub fn grad(&self, v: &VecD) -> Result<VecD> {
        let d = self.chi.params.dim;
        let (r, vo, s2, ve) = self.decompose(v)?;
        let c = (vo / r).clamp(-1.0, 1.0);
        let theta = c.acos();
        let sq = s2.sqrt();
        let h = self.chi.eval(theta, r);
        let sin_t = theta.sin().max(1e-300);
        let dh_dc = -self.chi.d_theta(theta, r) / sin_t;
        let dh_dr = self.chi.d_r(theta, r);
        // grad c = (Omega - c v/r)/r ; grad r = v/r ; grad of ve/sq term:
        // [E - w (v.E)/s2]/sq with w = v - vo Omega
        let mut g = [0.0; 3];
        let pref = ve / sq;
        for i in 0..d {
            let grad_c = (self.omega[i] - c * v[i] / r) / r;
            let grad_r = v[i] / r;
            let w = v[i] - vo * self.omega[i];
            g[i] = pref * (dh_dc * grad_c + dh_dr * grad_r)
                + h * (self.e[i] - w * ve / s2) / sq;
        }
        Ok(g)
    }
}

/// Report from the adjoint-kernel verification.
#[derive(Debug)]
pub struct AdjointReport {
    /// || W[psi_E] - E ||.
    pub w_error: f64,
    /// |a(psi, theta_k) - l(theta_k)| / scale per test function.
    pub weak_residuals: Vec<f64>,
}

/// Compactly supported C^3 bump (1 - x^2)^4 on (-1, 1), with derivative.
fn bump(x: f64) -> (f64, f64) {
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - x * x;
    let q3 = q * q * q;
    (q3 * q, -8.0 * x * q3)
}

/// Separable test profile g(theta, r): product of bumps around (t0, r0)
/// with half-widths (at, ar).
#[derive(Debug, Clone, Copy)]
pub struct TestProfile {
    pub t0: f64,
    pub r0: f64,
    pub at: f64,
    pub ar: f64,
}

impl TestProfile {
    fn eval(&self, theta: f64, r: f64) -> (f64, f64, f64) {
        let (bt, dbt) = bump((theta - self.t0) / self.at);
        let (br, dbr) = bump((r - self.r0) / self.ar);
        (bt * br, dbt / self.at * br, bt * dbr / self.ar)
    }
}

/// Weak-form residual a(psi_h, theta_g) - l(theta_g) for a profile h given by
/// closures (value, d_theta, d_r), against the test profile g, normalized by
/// the load functional scale. Evaluated with the Gauss-Legendre strip grid,
/// independent of the mesh-based solve.
pub fn weak_residual_of<Fh, Ft, Fr>(
    h: Fh,
    h_t: Ft,
    h_r: Fr,
    g: &TestProfile,
    grid: &PolarGrid,
    params: &ModelParams,
) -> Result<f64>
where
    Fh: Fn(f64, f64) -> f64,
    Ft: Fn(f64, f64) -> f64,
    Fr: Fn(f64, f64) -> f64,
{
    let sigma = params.sigma;
    let dd = params.dim as f64;
    // refined quadrature: the bump-derivative integrands are rougher than
    // the equilibrium moments the caller's grid was sized for
    let grid = &refine_grid(grid, 3);
    let energy = integrate_weighted(
        |c, r| {
            let theta = c.clamp(-1.0, 1.0).acos();
            let s = theta.sin();
            let (gv, gt, gr) = g.eval(theta, r);
            let zero_order = if params.dim == 2 {
                0.0
            } else {
                (dd - 2.0) * h(theta, r) * gv / (r * r * s * s)
            };
            h_t(theta, r) * gt / (r * r) + h_r(theta, r) * gr + zero_order
        },
        grid,
        params,
    )?;
    let load = integrate_weighted(
        |c, r| {
            let theta = c.clamp(-1.0, 1.0).acos();
            g.eval(theta, r).0 * r * theta.sin()
        },
        grid,
        params,
    )?;
    let scale = integrate_weighted(
        |c, r| {
            let theta = c.clamp(-1.0, 1.0).acos();
            (g.eval(theta, r).0 * r * theta.sin()).abs()
        },
        grid,
        params,
    )?;
    Ok((sigma * energy - load) / scale.max(f64::MIN_POSITIVE))
}

fn refine_grid(grid: &PolarGrid, factor: usize) -> PolarGrid {
    let map = |n: usize, a: f64, b: f64| {
        let (x, w) = gauss_legendre(n);
        let nodes: Vec<f64> = x.iter().map(|t| a + (b - a) * (t + 1.0) / 2.0).collect();
        let weights: Vec<f64> = w.iter().map(|t| t * (b - a) / 2.0).collect();
        (nodes, weights)
    };
    let n_theta = grid.n_theta * factor;
    let n_r = grid.n_r * factor;
    let (theta_nodes, theta_weights) = map(n_theta, 0.0, std::f64::consts::PI);
    let (r_nodes, r_weights) = map(n_r, 0.0, grid.r_max);
    PolarGrid {
        n_theta,
        n_r,
        r_max: grid.r_max,
        theta_nodes,
        theta_weights,
        r_nodes,
        r_weights,
    }
}

/// Deterministic set of interior test profiles.
pub fn test_profiles(n_test: usize, r_max: f64) -> Vec<TestProfile> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7e57);
    (0..n_test)
        .map(|_| {
            let t0 = rng.gen_range(0.25..0.75) * std::f64::consts::PI;
            let r0 = rng.gen_range(0.2..0.6) * r_max.min(6.0);
            TestProfile {
                t0,
                r0,
                at: rng.gen_range(0.15..0.3) * std::f64::consts::PI,
                ar: rng.gen_range(0.15..0.4) * r_max.min(6.0),
            }
        })
        .collect()
}

/// Checks (a) W[psi_E] = E and (b) the weak form against `n_test` smooth
/// compactly supported test functions.
pub fn verify_adjoint_kernel(
    chi: &ChiField,
    table: &crate::equilibrium::EquilibriumTable,
    n_test: usize,
) -> Result<AdjointReport> {
    let params = &chi.params;
    let d = params.dim;
    let dd = d as f64;
    // E-component of W by the azimuthally reduced formula, elementwise
    let num = integrate_on_chi_mesh(chi, |theta, r, h, ht, hr| {
        let (s, c) = theta.sin_cos();
        (c * ht / r + s * hr + (dd - 2.0) * h / (r * s)) / (dd - 1.0)
    })?;
    let den = integrate_weighted(|_, _| 1.0, &table.grid, params)?;
    let w_e = num / den / table.c1;
    // transverse components by full velocity quadrature (analytically zero)
    let omega = [1.0, 0.0, 0.0];
    let e = [0.0, 1.0, 0.0];
    let psi = reconstruct_psi(chi, &e, &omega)?;
    let vg = VelocityGrid::new(d, 48, 48, chi.mesh.r_max);
    let mut w_perp = [0.0; 3];
    for (v, w) in vg.nodes.iter().zip(&vg.weights) {
        let m = crate::equilibrium::equilibrium_density(v, &omega, table)?;
        if let Ok(g) = psi.grad(v) {
            for i in 0..d {
                w_perp[i] += w * m * g[i];
            }
        }
    }
    let mut err2 = (w_e - 1.0) * (w_e - 1.0);
    err2 += (w_perp[0] / table.c1).powi(2);
    if d == 3 {
        err2 += (w_perp[2] / table.c1).powi(2);
    }
    let w_error = err2.sqrt();

    let profiles = test_profiles(n_test, chi.mesh.r_max);
    let weak_residuals = profiles
        .iter()
        .map(|g| {
            weak_residual_of(
                |t, r| chi.eval(t, r),
                |t, r| chi.d_theta(t, r),
                |t, r| chi.d_r(t, r),
                g,
                &table.grid,
                params,
            )
            .map(f64::abs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdjointReport { w_error, weak_residuals })
}

/// A Gaussian-mixture density in velocity space with analytic gradient.
#[derive(Debug, Clone)]
pub struct Mixture {
    /// (weight, center, variance) triples; density is
    /// sum_k a_k exp(-|v - mu_k|^2 / (2 s_k)).
    pub components: Vec<(f64, VecD, f64)>,
    pub dim: usize,
}

impl Mixture {
    pub fn density(&self, v: &VecD) -> f64 {
        self.components
            .iter()
            .map(|(a, mu, s)| {
                let diff = linalg::sub(v, mu);
                a * (-linalg::dot(&diff, &diff, self.dim) / (2.0 * s)).exp()
            })
            .sum()
    }

    pub fn grad(&self, v: &VecD) -> VecD {
        let mut g = [0.0; 3];
        for (a, mu, s) in &self.components {
            let diff = linalg::sub(v, mu);
            let f = a * (-linalg::dot(&diff, &diff, self.dim) / (2.0 * s)).exp();
            for i in 0..self.dim {
                g[i] -= f * diff[i] / s;
            }
        }
        g
    }

    /// Exact first moment: sum a_k (2 pi s_k)^{d/2} mu_k.
    pub fn first_moment(&self) -> VecD {
        let mut m = [0.0; 3];
        for (a, mu, s) in &self.components {
            let mass = a * (2.0 * std::f64::consts::PI * s).powf(self.dim as f64 / 2.0);
            linalg::axpy(&mut m, mass, mu);
        }
        m
    }
}

/// Random mixture of mirrored bump pairs along Omega: transverse moment
/// vanishes by construction, axial moment is positive.
pub fn axial_mixture<R: rand::Rng>(rng: &mut R, omega: &VecD, e: &VecD, d: usize) -> Mixture {
    let n_pairs = rng.gen_range(1..=3);
    let mut components = Vec::new();
    for _ in 0..n_pairs {
        let a = rng.gen_range(0.2..1.0);
        let t = rng.gen_range(0.4..1.4);
        let b = rng.gen_range(0.0..0.8);
        let s = rng.gen_range(0.3..0.8);
        let mut mu = linalg::scale(omega, t);
        let mut mu2 = mu;
        linalg::axpy(&mut mu, b, e);
        linalg::axpy(&mut mu2, -b, e);
        components.push((a, mu, s));
        components.push((a, mu2, s));
    }
    Mixture { components, dim: d }
}

/// int Q(f) psi dv = -int (sigma grad f + f (v - Omega[f]) + eta f V' v/|v|)
/// . grad psi dv by full velocity quadrature.
pub fn gci_residual(
    mixture: &Mixture,
    psi: &PsiField<'_>,
    params: &ModelParams,
    r_max: f64,
) -> Result<f64> {
    let d = params.dim;
    // orientation of the mixture from its exact moment
    let m = mixture.first_moment();
    let (omega_f, _) = crate::equilibrium::orientation_of(&m, d);
    let mass_grid = VelocityGrid::new(d, 64, 64, r_max);
    let mut total = 0.0;
    let mut mass = 0.0;
    for (v, w) in mass_grid.nodes.iter().zip(&mass_grid.weights) {
        let f = mixture.density(v);
        mass += w * f;
        let gpsi = match psi.grad(v) {
            Ok(g) => g,
            Err(Error::AxisEvaluation(_)) => continue,
            Err(e) => return Err(e),
        };
        let gf = mixture.grad(v);
        let r = linalg::norm(v, d);
        let vp = params.eta * params.potential.deriv(r)?;
        let mut flux = linalg::scale(&gf, params.sigma);
        for i in 0..d {
            flux[i] += f * (v[i] - omega_f[i] + vp * v[i] / r.max(1e-300));
        }
        total -= w * linalg::dot(&flux, &gpsi, d);
    }
    Ok(total / mass)
}

/// Report from the GCI equivalence verification.
#[derive(Debug)]
pub struct GciReport {
    /// |int Q(f) psi| per random axial mixture (must be small).
    pub residuals: Vec<f64>,
}

pub fn verify_gci_equivalence(
    chi: &ChiField,
    table: &crate::equilibrium::EquilibriumTable,
    n_densities: usize,
) -> Result<GciReport> {
    use rand::SeedableRng;
    let d = chi.params.dim;
    let omega = [1.0, 0.0, 0.0];
    let e = [0.0, 1.0, 0.0];
    let psi = reconstruct_psi(chi, &e, &omega)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6c1);
    let mut residuals = Vec::with_capacity(n_densities);
    for _ in 0..n_densities {
        let mix = axial_mixture(&mut rng, &omega, &e, d);
        // transverse-moment constraint, exact for mirrored pairs
        let m = mix.first_moment();
        let trans = (linalg::dot(&m, &e, d).powi(2)
            + if d == 3 { m[2] * m[2] } else { 0.0 })
        .sqrt();
        if trans > 1e-12 * linalg::norm(&m, d) {
            return Err(Error::MomentConstraintViolated(trans));
        }
        residuals.push(gci_residual(&mix, &psi, &chi.params, table.grid.r_max)?.abs());
    }
    Ok(GciReport { residuals })
}
