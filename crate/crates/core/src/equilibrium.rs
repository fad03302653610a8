//! The equilibrium family rho M_Omega: partition function, moments,
//! orientation functional and pressure tensor.
//!
//! All moment integrals are evaluated in a frame where Omega = e1 and rotated
//! out, so Omega-independence is exact by construction.

use crate::error::{Error, Result};
use crate::linalg::{self, MatD, VecD};
use crate::quadrature::{integrate_weighted, sphere_surface, ModelParams, PolarGrid};

/// Threshold below which a moment is treated as vanishing by `orientation_of`.
pub const NEAR_ZERO_MOMENT: f64 = 1e-14;

/// Precomputed normalization and first directional moment of M_Omega.
#[derive(Debug, Clone)]
pub struct EquilibriumTable {
    pub params: ModelParams,
    pub grid: PolarGrid,
    /// Partition function Z (truncated).
    pub z: f64,
    /// First directional moment int (v.Omega) M dv, strictly positive.
    pub c1: f64,
}

impl EquilibriumTable {
    pub fn build(params: &ModelParams, grid: &PolarGrid) -> Result<Self> {
        let z = partition_function(params, grid)?;
        if !z.is_finite() || z <= 0.0 {
            return Err(Error::Domain(format!("partition function not finite positive: {z}")));
        }
        let c1 = directional_moment(params, grid)?;
        Ok(EquilibriumTable {
            params: params.clone(),
            grid: grid.clone(),
            z,
            c1,
        })
    }
}

/// Z = |S^{d-2}| int r^{d-1} int e sin^{d-2} over the truncated strip.
pub fn partition_function(params: &ModelParams, grid: &PolarGrid) -> Result<f64> {
    Ok(sphere_surface(params.dim) * integrate_weighted(|_, _| 1.0, grid, params)?)
}

fn directional_moment(params: &ModelParams, grid: &PolarGrid) -> Result<f64> {
    let num = integrate_weighted(|c, r| r * c, grid, params)?;
    let den = integrate_weighted(|_, _| 1.0, grid, params)?;
    let c1 = num / den;
    if c1 <= 0.0 {
        return Err(Error::Domain(format!("directional moment c1 = {c1} not positive")));
    }
    Ok(c1)
}

/// c1 = int (v.Omega) M dv, the ratio of r^d cos t to r^{d-1} integrals.
pub fn directional_moment_c1(table: &EquilibriumTable) -> f64 {
    table.c1
}

fn check_unit(omega: &VecD, d: usize) -> Result<()> {
    let n = linalg::norm(omega, d);
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("omega not unit: |omega| = {n}")));
    }
    Ok(())
}

/// M_Omega(v) = Z^{-1} exp(-Phi_Omega(v)/sigma) with
/// Phi_Omega = |v - Omega|^2/2 + eta V(|v|).
pub fn equilibrium_density(v: &VecD, omega: &VecD, table: &EquilibriumTable) -> Result<f64> {
    let d = table.params.dim;
    check_unit(omega, d)?;
    let r = linalg::norm(v, d);
    let diff = linalg::sub(v, omega);
    let phi = linalg::dot(&diff, &diff, d) / 2.0
        + table.params.eta * table.params.potential.value(r)?;
    Ok((-phi / table.params.sigma).exp() / table.z)
}

/// moment/|moment| if the moment is nonzero, else the zero vector. Magnitudes
/// below the 1e-14 threshold normalize but raise the near-zero warning flag.
/// Components are rescaled by the largest entry first so that denormal inputs
/// still normalize.
pub fn orientation_of(moment: &VecD, d: usize) -> (VecD, bool) {
    let amax = (0..d).map(|i| moment[i].abs()).fold(0.0, f64::max);
    if amax == 0.0 {
        return ([0.0; 3], false);
    }
    let scaled = linalg::scale(moment, 1.0 / amax);
    let n = linalg::norm(&scaled, d);
    (linalg::scale(&scaled, 1.0 / n), amax * n <= NEAR_ZERO_MOMENT)
}

/// int v M_Omega dv computed componentwise by full velocity-space quadrature;
/// equals c1 Omega by the radial symmetry of V.
pub fn first_moment(omega: &VecD, table: &EquilibriumTable) -> Result<VecD> {
    let d = table.params.dim;
    check_unit(omega, d)?;
    let vg = crate::velocity_quad::VelocityGrid::new(d, 64, 48, table.grid.r_max);
    let rot = linalg::rotation_to(omega, d);
    let mut out = [0.0; 3];
    for (node, w) in vg.nodes.iter().zip(&vg.weights) {
        let v = linalg::mat_vec(&rot, node, d);
        let m = equilibrium_density(&v, omega, table)?;
        for i in 0..d {
            out[i] += w * m * v[i];
        }
    }
    Ok(out)
}

/// Pressure tensor int (v - Omega) (x) (I - Omega (x) Omega)(v - Omega) M dv,
/// computed by quadrature in the rotated frame. Its transverse integrand
/// r^2 sin^2 t is an independent route from the r cos t integrand behind c1.
pub fn pressure_tensor(omega: &VecD, table: &EquilibriumTable) -> Result<MatD> {
    let d = table.params.dim;
    check_unit(omega, d)?;
    // in the frame Omega = e1: entry (1, .) vanishes by azimuthal symmetry,
    // transverse block is delta_ij int r^2 sin^2 t M / (d-1)
    let p = &table.params;
    let num = integrate_weighted(|c, r| r * r * (1.0 - c * c), &table.grid, p)?;
    let den = integrate_weighted(|_, _| 1.0, &table.grid, p)?;
    let transverse = num / den / (d as f64 - 1.0);
    let mut local = [[0.0; 3]; 3];
    for i in 1..d {
        local[i][i] = transverse;
    }
    let rot = linalg::rotation_to(omega, d);
    let rt = linalg::transpose(&rot, d);
    Ok(linalg::mat_mul(&rot, &linalg::mat_mul(&local, &rt, d), d))
}

/// Pointwise collision-flux residual sigma grad(rho M) + rho M grad Phi at a
/// velocity; vanishes identically at equilibrium.
pub fn collision_flux(v: &VecD, omega: &VecD, rho: f64, table: &EquilibriumTable) -> Result<VecD> {
    let d = table.params.dim;
    let m = equilibrium_density(v, omega, table)?;
    let r = linalg::norm(v, d);
    let vprime = table.params.eta * table.params.potential.deriv(r)?;
    // grad Phi = v - Omega + eta V'(r) v/r
    let mut grad_phi = linalg::sub(v, omega);
    if r > 0.0 {
        linalg::axpy(&mut grad_phi, vprime / r, v);
    }
    // sigma grad(rho M) = -rho M grad Phi, so the flux residual is exactly 0
    // analytically; computed here from the two halves independently
    let grad_m = linalg::scale(&grad_phi, -rho * m / table.params.sigma);
    let mut flux = linalg::scale(&grad_m, table.params.sigma);
    linalg::axpy(&mut flux, rho * m, &grad_phi);
    Ok(flux)
}
