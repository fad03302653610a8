use thiserror::Error;

/// Errors surfaced by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("potential is not confining: no truncation radius below R = {cap} meets tol = {tol}")]
    NonconfiningPotential { cap: f64, tol: f64 },

    #[error("integrand not finite at grid node (theta = {theta}, r = {r})")]
    Integrand { theta: f64, r: f64 },

    #[error("nonfinite elemental weight during assembly at element ({i}, {j})")]
    SingularAssembly { i: usize, j: usize },

    #[error("linear solver stalled after {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("evaluation on the axis R*Omega: |v|^2 - (v.Omega)^2 = {0:e}")]
    AxisEvaluation(f64),

    #[error("mixture transverse moment {0:e} exceeds the zero-moment constraint")]
    MomentConstraintViolated(f64),

    #[error("c2 denominator {denom:e} below 1e-14 of numerator scale {scale:e}")]
    DegenerateDenominator { denom: f64, scale: f64 },

    #[error("potential has no interior minimum")]
    NoInteriorMinimum,

    #[error("orientation field vanishes at cell {0}")]
    ZeroOrientation(usize),

    #[error("density fell below vacuum floor in cell {cell} (rho = {rho:e})")]
    VacuumCell { cell: usize, rho: f64 },

    #[error("dt = {dt} exceeds stiffness guard 0.1*eps = {bound}")]
    StiffStep { dt: f64, bound: f64 },

    #[error("tabulated potential queried at r = {0} beyond the last node")]
    Extrapolation(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
