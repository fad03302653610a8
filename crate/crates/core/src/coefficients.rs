//! Transport coefficients of the macroscopic limit: the density drift c1,
//! the orientation drift c2 (with the intermediates c1_tilde, c2_tilde),
//! and the large-penalization asymptotics of c1.

use crate::error::{Error, Result};
use crate::gci_chi::{integrate_on_chi_mesh, ChiField};
use crate::quadrature::{
    build_polar_grid, gauss_legendre, integrate_weighted, sphere_surface, ModelParams, PolarGrid,
    PotentialSpec,
};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Coefficients {
    pub c1: f64,
    pub c2: f64,
    pub c1_tilde: f64,
    pub c2_tilde: f64,
    pub params: ModelParams,
    /// Human-readable descriptor of the profile mesh behind c2.
    pub chi_meta: String,
}

/// c1 = <r cos(theta)> under the weighted strip measure: the speed of the
/// equilibrium mean velocity.
pub fn compute_c1(params: &ModelParams, grid: &PolarGrid) -> Result<f64> {
    let num = integrate_weighted(|c, r| r * c, grid, params)?;
    let den = integrate_weighted(|_, _| 1.0, grid, params)?;
    Ok(num / den)
}

/// c2 as the ratio of the chi-weighted integrals
/// [int r^{d+1} cos(theta) chi e sin^{d-1}] / [int r^d chi e sin^{d-1}],
/// evaluated cell-by-cell on the profile mesh (the interpolant is only C^0,
/// so Gauss points must not straddle cells).
pub fn compute_c2(chi: &ChiField, params: &ModelParams, _grid: &PolarGrid) -> Result<f64> {
    if chi.params.dim != params.dim || chi.params.sigma != params.sigma {
        return Err(Error::Domain("chi was solved for different params".into()));
    }
    let num = integrate_on_chi_mesh(chi, |theta, r, h, _, _| r * r * theta.cos() * h * theta.sin())?;
    let den = integrate_on_chi_mesh(chi, |theta, r, h, _, _| r * h * theta.sin())?;
    let scale = integrate_on_chi_mesh(chi, |theta, r, h, _, _| (r * h * theta.sin()).abs())?;
    if den.abs() < 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateDenominator { denom: den, scale });
    }
    Ok(num / den)
}

/// All four coefficients, with c2 cross-checked through the normalized
/// c2_tilde / c1_tilde route.
pub fn compute_coefficients(chi: &ChiField, grid: &PolarGrid) -> Result<Coefficients> {
    let params = &chi.params;
    let d = params.dim as f64;
    let c1 = compute_c1(params, grid)?;
    let c2 = compute_c2(chi, params, grid)?;
    let z = sphere_surface(params.dim) * integrate_weighted(|_, _| 1.0, grid, params)?;
    let norm = sphere_surface(params.dim) / ((d - 1.0) * z);
    let c1_tilde = norm * integrate_on_chi_mesh(chi, |theta, r, h, _, _| h * r * theta.sin())?;
    let c2_tilde = norm
        * integrate_on_chi_mesh(chi, |theta, r, h, _, _| h * r * r * theta.cos() * theta.sin())?;
    Ok(Coefficients {
        c1,
        c2,
        c1_tilde,
        c2_tilde,
        params: params.clone(),
        chi_meta: format!(
            "profile mesh {}x{}, r_max {:.6}, strong residual {:.3e}",
            chi.mesh.n_theta, chi.mesh.n_r, chi.mesh.r_max, chi.residual_norm
        ),
    })
}

/// Interior minimizer of the radial potential, with a convexity check.
fn potential_minimum(potential: &PotentialSpec) -> Result<f64> {
    match potential {
        PotentialSpec::Zero => Err(Error::NoInteriorMinimum),
        PotentialSpec::SelfPropulsion { alpha, beta } => {
            if *alpha <= 0.0 || *beta <= 0.0 {
                return Err(Error::NoInteriorMinimum);
            }
            Ok((alpha / beta).sqrt())
        }
        PotentialSpec::TabulatedRadial { nodes, .. } => {
            let (a, b) = (nodes[0].max(1e-12), *nodes.last().unwrap());
            // golden-section search on the spline
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut lo, mut hi) = (a, b);
            let mut x1 = hi - phi * (hi - lo);
            let mut x2 = lo + phi * (hi - lo);
            let mut f1 = potential.value(x1)?;
            let mut f2 = potential.value(x2)?;
            for _ in 0..200 {
                if f1 < f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = potential.value(x1)?;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = potential.value(x2)?;
                }
            }
            let r0 = 0.5 * (lo + hi);
            let h = 1e-4 * (b - a);
            if r0 - a < 1e-6 * (b - a) || b - r0 < 1e-6 * (b - a) {
                return Err(Error::NoInteriorMinimum);
            }
            let second =
                (potential.value(r0 + h)? - 2.0 * potential.value(r0)? + potential.value(r0 - h)?)
                    / (h * h);
            if second <= 0.0 {
                return Err(Error::NoInteriorMinimum);
            }
            Ok(r0)
        }
    }
}

/// Limit of c1 under an infinitely penalized potential: the speed pins to
/// the potential minimum r0 and only the angular average survives,
/// r0 int cos(t) exp(r0 cos(t)/sigma) sin^{d-2} / int exp(...) sin^{d-2}.
pub fn laplace_limit_c1(potential: &PotentialSpec, sigma: f64, d: usize) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(d == 2 || d == 3) {
        return Err(Error::Domain(format!("dim must be 2 or 3, got {d}")));
    }
    let r0 = potential_minimum(potential)?;
    let (x, w) = gauss_legendre(400);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let theta = half_pi * (xi + 1.0);
        let (s, c) = theta.sin_cos();
        // subtract the max (at theta = 0) to keep the exponent tame at
        // small sigma
        let f = (r0 * (c - 1.0) / sigma).exp() * s.powi(d as i32 - 2);
        num += wi * c * f;
        den += wi * f;
    }
    Ok(r0 * num / den)
}

/// One point of the penalized-coefficient curve.
#[derive(Debug, Clone, Copy)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub c1: f64,
    /// The weight's effective radial support covered fewer than 8 grid
    /// nodes, so the value may be underresolved.
    pub resolution_warning: bool,
}

/// c1 with the potential scaled by each lambda, grid rebuilt per value so the
/// truncation radius tracks the sharpening concentration.
pub fn c1_lambda_curve(
    potential: &PotentialSpec,
    sigma: f64,
    d: usize,
    lambdas: &[f64],
) -> Result<Vec<LambdaPoint>> {
    if lambdas.iter().any(|&l| l <= 0.0) {
        return Err(Error::Domain("lambdas must be positive".into()));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("lambdas must be increasing".into()));
    }
    lambdas
        .par_iter()
        .map(|&lambda| {
            let params = ModelParams::new(sigma, d, potential.scaled(lambda))?;
            let grid = build_polar_grid(&params, 256, 256, 1e-18)?;
            let c1 = compute_c1(&params, &grid)?;
            // count radial nodes inside the weight's effective support
            let peak = grid
                .r_nodes
                .iter()
                .map(|&r| crate::quadrature::weight_e(1.0, r, &params).unwrap_or(0.0))
                .fold(0.0f64, f64::max);
            let covered = grid
                .r_nodes
                .iter()
                .filter(|&&r| {
                    crate::quadrature::weight_e(1.0, r, &params).unwrap_or(0.0) > 1e-8 * peak
                })
                .count();
            Ok(LambdaPoint {
                lambda,
                c1,
                resolution_warning: covered < 8,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::EquilibriumTable;
    use crate::gci_chi::{assemble_weak_form, solve_chi};

    fn v11() -> PotentialSpec {
        PotentialSpec::SelfPropulsion { alpha: 1.0, beta: 1.0 }
    }

    #[test]
    fn c1_agrees_with_equilibrium_paths() {
        for (sigma, d) in [(0.3, 2), (1.0, 2), (0.7, 3)] {
            let params = ModelParams::new(sigma, d, v11()).unwrap();
            let grid = build_polar_grid(&params, 128, 128, 1e-18).unwrap();
            let a = compute_c1(&params, &grid).unwrap();
            let table = EquilibriumTable::build(&params, &grid).unwrap();
            let b = crate::equilibrium::directional_moment_c1(&table);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            // independent route: full velocity-space quadrature of the mean
            let omega = [1.0, 0.0, 0.0];
            let m = crate::equilibrium::first_moment(&omega, &table).unwrap();
            assert!((a - m[0]).abs() < 1e-10, "{a} vs {}", m[0]);
        }
    }

    #[test]
    fn c1_gaussian_is_one() {
        for sigma in [0.25, 1.0, 4.0] {
            for d in [2usize, 3] {
                let params = ModelParams::new(sigma, d, PotentialSpec::Zero).unwrap();
                let grid = build_polar_grid(&params, 128, 128, 1e-18).unwrap();
                let c1 = compute_c1(&params, &grid).unwrap();
                assert!((c1 - 1.0).abs() < 1e-11, "sigma {sigma} d {d}: c1 = {c1}");
            }
        }
    }

    #[test]
    fn c1_quartic_golden() {
        // frozen by the 256^2 refined run (examples/golden_oracle.rs)
        let params = ModelParams::new(0.3, 2, v11()).unwrap();
        let grid = build_polar_grid(&params, 256, 256, 1e-18).unwrap();
        let c1 = compute_c1(&params, &grid).unwrap();
        assert!((c1 - 0.7986553548774898).abs() < 1e-10, "c1 = {c1:.16e}");
    }

    #[test]
    fn c1_small_sigma_concentrates_at_potential_minimum() {
        let params = ModelParams::new(0.01, 2, v11()).unwrap();
        let grid = build_polar_grid(&params, 256, 256, 1e-18).unwrap();
        let c1 = compute_c1(&params, &grid).unwrap();
        assert!((c1 - 1.0).abs() < 0.05, "c1 = {c1}");
    }

    fn chi_for(sigma: f64, d: usize, pot: PotentialSpec, n: usize) -> (ChiField, PolarGrid) {
        let params = ModelParams::new(sigma, d, pot).unwrap();
        let grid = build_polar_grid(&params, n, n, 1e-18).unwrap();
        let system = assemble_weak_form(&params, &grid).unwrap();
        (solve_chi(&system, 1e-10).unwrap(), grid)
    }

    #[test]
    fn c2_golden_gaussian_d2() {
        // the Gaussian case factorizes: the axial and transverse components
        // are independent, so c2 = c1 = 1; frozen 512^2 value
        // 0.9999977550530370 (examples/golden_oracle.rs)
        let (chi, grid) = chi_for(1.0, 2, PotentialSpec::Zero, 256);
        let c2 = compute_c2(&chi, &chi.params.clone(), &grid).unwrap();
        assert!((c2 - 0.9999977550530370).abs() < 5e-5, "c2 = {c2:.10e}");
        assert!((c2 - 1.0).abs() < 5e-5, "c2 = {c2:.10e}");
    }

    #[test]
    fn c2_two_route_agreement() {
        for (sigma, d, pot) in [
            (1.0, 2, PotentialSpec::Zero),
            (0.5, 2, v11()),
            (1.0, 3, v11()),
        ] {
            let (chi, grid) = chi_for(sigma, d, pot, 96);
            let co = compute_coefficients(&chi, &grid).unwrap();
            let via_tilde = co.c2_tilde / co.c1_tilde;
            assert!(
                (co.c2 - via_tilde).abs() < 1e-10 * co.c2.abs().max(1.0),
                "ratio {} vs tilde {}",
                co.c2,
                via_tilde
            );
            assert!(co.c1 > 0.0);
        }
    }

    #[test]
    fn c2_invariant_under_profile_scaling() {
        let params = ModelParams::new(0.5, 2, v11()).unwrap();
        let grid = build_polar_grid(&params, 64, 64, 1e-18).unwrap();
        let system = assemble_weak_form(&params, &grid).unwrap();
        let chi = solve_chi(&system, 1e-10).unwrap();
        let mut scaled_system = system.clone();
        for v in &mut scaled_system.rhs {
            *v *= 3.75;
        }
        let chi_scaled = solve_chi(&scaled_system, 1e-10).unwrap();
        let a = compute_c2(&chi, &params, &grid).unwrap();
        let b = compute_c2(&chi_scaled, &params, &grid).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs(), "{a} vs {b}");
    }

    #[test]
    fn c2_degenerate_denominator() {
        let params = ModelParams::new(0.5, 2, v11()).unwrap();
        let grid = build_polar_grid(&params, 32, 32, 1e-18).unwrap();
        let mut system = assemble_weak_form(&params, &grid).unwrap();
        for v in &mut system.rhs {
            *v = 0.0;
        }
        let chi = solve_chi(&system, 1e-10).unwrap();
        assert!(matches!(
            compute_c2(&chi, &params, &grid),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn laplace_limit_closed_forms() {
        // minimizer of the quartic potential
        let lim = laplace_limit_c1(&v11(), 1.0, 2).unwrap();
        assert!(lim.is_finite() && lim > 0.0 && lim < 1.0);
        // d = 3, r0 = 1, sigma = 1: the angular ratio is coth(1) - 1
        let lim3 = laplace_limit_c1(&v11(), 1.0, 3).unwrap();
        let langevin = 1.0 / 1f64.tanh() - 1.0;
        assert!((lim3 - langevin).abs() < 1e-10, "{lim3} vs {langevin}");
        // sigma -> 0: angular concentration at theta = 0 pushes the ratio
        // to r0 itself
        let lim_small = laplace_limit_c1(&v11(), 1e-3, 2).unwrap();
        assert!((lim_small - 1.0).abs() < 0.01, "{lim_small}");
        // scale invariance of the minimizer: V_{4,1} has r0 = 2
        let lim_r2 =
            laplace_limit_c1(&PotentialSpec::SelfPropulsion { alpha: 4.0, beta: 1.0 }, 1e-3, 2)
                .unwrap();
        assert!((lim_r2 - 2.0).abs() < 0.02, "{lim_r2}");
    }

    #[test]
    fn laplace_limit_requires_interior_minimum() {
        assert!(matches!(
            laplace_limit_c1(&PotentialSpec::Zero, 1.0, 2),
            Err(Error::NoInteriorMinimum)
        ));
        // monotone tabulated potential: minimum at the boundary
        let nodes: Vec<f64> = (0..=20).map(|k| 0.1 + 0.2 * k as f64).collect();
        let values: Vec<f64> = nodes.iter().map(|r| r * r).collect();
        assert!(matches!(
            laplace_limit_c1(&PotentialSpec::TabulatedRadial { nodes, values }, 1.0, 2),
            Err(Error::NoInteriorMinimum)
        ));
    }

    #[test]
    fn laplace_limit_tabulated_minimizer() {
        // tabulate the quartic potential and recover r0 = 1 numerically
        let nodes: Vec<f64> = (0..=400).map(|k| 0.05 + 3.0 * k as f64 / 400.0).collect();
        let values: Vec<f64> =
            nodes.iter().map(|r| 0.25 * r.powi(4) - 0.5 * r * r).collect();
        let tab = PotentialSpec::TabulatedRadial { nodes, values };
        let a = laplace_limit_c1(&tab, 0.7, 2).unwrap();
        let b = laplace_limit_c1(&v11(), 0.7, 2).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn lambda_curve_matches_unscaled_at_one() {
        let params = ModelParams::new(1.0, 2, v11()).unwrap();
        let grid = build_polar_grid(&params, 256, 256, 1e-18).unwrap();
        let direct = compute_c1(&params, &grid).unwrap();
        let curve = c1_lambda_curve(&v11(), 1.0, 2, &[1.0]).unwrap();
        assert!((curve[0].c1 - direct).abs() < 1e-12);
        assert!(!curve[0].resolution_warning);
    }

    #[test]
    fn lambda_curve_converges_to_laplace_limit() {
        let limit = laplace_limit_c1(&v11(), 1.0, 2).unwrap();
        // rate window starts at lambda = 20: the 10 -> 20 step is still
        // pre-asymptotic (ratio ~ 0.68)
        let curve = c1_lambda_curve(&v11(), 1.0, 2, &[20.0, 40.0, 80.0, 160.0]).unwrap();
        let errs: Vec<f64> = curve.iter().map(|p| (p.c1 - limit).abs()).collect();
        // error at least halves per doubling of lambda
        for k in 0..3 {
            assert!(
                errs[k + 1] <= 0.55 * errs[k],
                "errors do not halve: {errs:?}"
            );
        }
        // within 2% at lambda = 100
        let at100 = c1_lambda_curve(&v11(), 1.0, 2, &[100.0]).unwrap()[0].c1;
        assert!(
            (at100 - limit).abs() < 0.02 * limit.abs(),
            "err {} limit {limit}",
            (at100 - limit).abs()
        );
    }

    #[test]
    fn lambda_curve_rejects_bad_input() {
        assert!(c1_lambda_curve(&v11(), 1.0, 2, &[1.0, -2.0]).is_err());
        assert!(c1_lambda_curve(&v11(), 1.0, 2, &[2.0, 1.0]).is_err());
    }
}
