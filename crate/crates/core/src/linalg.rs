//! Small dense helpers for d in {2, 3}. Vectors are stored in `[f64; 3]`
//! with the unused component zero for d = 2.

pub type VecD = [f64; 3];

pub fn dot(a: &VecD, b: &VecD, d: usize) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

pub fn norm(a: &VecD, d: usize) -> f64 {
    dot(a, a, d).sqrt()
}

pub fn scale(a: &VecD, s: f64) -> VecD {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add(a: &VecD, b: &VecD) -> VecD {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: &VecD, b: &VecD) -> VecD {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn axpy(y: &mut VecD, alpha: f64, x: &VecD) {
    y[0] += alpha * x[0];
    y[1] += alpha * x[1];
    y[2] += alpha * x[2];
}

/// An orthonormal basis {e1 = omega, e2, e3} completing a unit vector.
pub fn frame_from(omega: &VecD, d: usize) -> [VecD; 3] {
    debug_assert!((norm(omega, d) - 1.0).abs() < 1e-10);
    if d == 2 {
        return [*omega, [-omega[1], omega[0], 0.0], [0.0, 0.0, 1.0]];
    }
    // pick the coordinate axis least aligned with omega
    let mut seed = [0.0, 0.0, 0.0];
    let k = (0..3)
        .min_by(|&i, &j| omega[i].abs().partial_cmp(&omega[j].abs()).unwrap())
        .unwrap();
    seed[k] = 1.0;
    let mut e2 = sub(&seed, &scale(omega, dot(&seed, omega, 3)));
    let n = norm(&e2, 3);
    e2 = scale(&e2, 1.0 / n);
    let e3 = cross(omega, &e2);
    [*omega, e2, e3]
}

pub fn cross(a: &VecD, b: &VecD) -> VecD {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// d x d matrix stored row-major in a [[f64; 3]; 3] block.
pub type MatD = [[f64; 3]; 3];

pub fn mat_vec(m: &MatD, v: &VecD, d: usize) -> VecD {
    let mut out = [0.0; 3];
    for i in 0..d {
        for j in 0..d {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

/// R with R e1 = omega, built from the completed frame (a rotation for d = 2,
/// orthogonal for d = 3).
pub fn rotation_to(omega: &VecD, d: usize) -> MatD {
    let f = frame_from(omega, d);
    let mut r = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            r[i][j] = f[j][i];
        }
    }
    if d == 2 {
        r[2][2] = 1.0;
    }
    r
}

pub fn mat_mul(a: &MatD, b: &MatD, d: usize) -> MatD {
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &MatD, d: usize) -> MatD {
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Rotation by angle `phi` in the plane spanned by orthonormal `u`, `w`,
/// acting as the identity on the complement.
pub fn plane_rotation(u: &VecD, w: &VecD, phi: f64, d: usize) -> MatD {
    let (cp, sp) = (phi.cos(), phi.sin());
    let mut m = [[0.0; 3]; 3];
    for i in 0..d {
        m[i][i] = 1.0;
    }
    for i in 0..d {
        for j in 0..d {
            m[i][j] += (cp - 1.0) * (u[i] * u[j] + w[i] * w[j]) + sp * (w[i] * u[j] - u[i] * w[j]);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_orthonormal() {
        for omega in [[0.6, 0.8, 0.0], [0.0, 0.0, 1.0], [0.36, 0.48, 0.8]] {
            let f = frame_from(&omega, 3);
            for i in 0..3 {
                assert!((norm(&f[i], 3) - 1.0).abs() < 1e-12);
                for j in 0..i {
                    assert!(dot(&f[i], &f[j], 3).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rotation_maps_e1_to_omega() {
        let omega = [0.6, -0.8, 0.0];
        let r = rotation_to(&omega, 2);
        let v = mat_vec(&r, &[1.0, 0.0, 0.0], 2);
        assert!((v[0] - omega[0]).abs() < 1e-14 && (v[1] - omega[1]).abs() < 1e-14);
    }

    #[test]
    fn plane_rotation_fixes_complement() {
        let u = [0.0, 1.0, 0.0];
        let w = [0.0, 0.0, 1.0];
        let m = plane_rotation(&u, &w, 0.7, 3);
        let v = mat_vec(&m, &[1.0, 0.0, 0.0], 3);
        assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14 && v[2].abs() < 1e-14);
    }
}
