//! Full velocity-space quadrature over the truncated ball, used wherever an
//! integrand is not reducible to the (theta, r) strip: moment cross-checks,
//! the generalized-collision-invariant residuals and the c2 cross-route.
//!
//! d = 2: polar (phi, r); d = 3: spherical (theta, phi, r). Gauss-Legendre in
//! r and theta, trapezoid in the periodic azimuth.

use crate::linalg::VecD;
use crate::quadrature::gauss_legendre;

pub struct VelocityGrid {
    /// Cartesian node coordinates in the frame of the caller.
    pub nodes: Vec<VecD>,
    /// Quadrature weights including the full jacobian.
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    /// Tensor grid over the ball of radius `r_max`, axis along e1.
    pub fn new(d: usize, n_r: usize, n_ang: usize, r_max: f64) -> Self {
        let (xr, wr) = gauss_legendre(n_r);
        let r_nodes: Vec<f64> = xr.iter().map(|x| r_max * (x + 1.0) / 2.0).collect();
        let r_weights: Vec<f64> = wr.iter().map(|w| w * r_max / 2.0).collect();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        match d {
            2 => {
                let n_phi = 2 * n_ang;
                let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
                for (r, wr) in r_nodes.iter().zip(&r_weights) {
                    for k in 0..n_phi {
                        let phi = (k as f64 + 0.5) * dphi;
                        nodes.push([r * phi.cos(), r * phi.sin(), 0.0]);
                        weights.push(wr * dphi * r);
                    }
                }
            }
            3 => {
                let (xt, wt) = gauss_legendre(n_ang);
                let n_phi = 2 * n_ang;
                let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
                for (r, wr) in r_nodes.iter().zip(&r_weights) {
                    for (x, w) in xt.iter().zip(&wt) {
                        let theta = std::f64::consts::PI * (x + 1.0) / 2.0;
                        let wtheta = w * std::f64::consts::PI / 2.0;
                        let (st, ct) = theta.sin_cos();
                        for k in 0..n_phi {
                            let phi = (k as f64 + 0.5) * dphi;
                            nodes.push([r * ct, r * st * phi.cos(), r * st * phi.sin()]);
                            weights.push(wr * wtheta * dphi * r * r * st);
                        }
                    }
                }
            }
            _ => unreachable!("dim restricted to 2 or 3"),
        }
        VelocityGrid { nodes, weights }
    }

    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&VecD) -> f64,
    {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * f(v))
            .sum()
    }

    pub fn integrate_vec<F>(&self, d: usize, f: F) -> VecD
    where
        F: Fn(&VecD) -> VecD,
    {
        let mut out = [0.0; 3];
        for (v, w) in self.nodes.iter().zip(&self.weights) {
            let fv = f(v);
            for i in 0..d {
                out[i] += w * fv[i];
            }
        }
        out
    }
}
