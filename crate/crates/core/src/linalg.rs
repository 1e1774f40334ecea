//! Dense-matrix helpers shared by the group and holonomy layers.
//!
//! Matrices are stored as `nalgebra::DMatrix<Complex64>` so a single numeric
//! kernel serves real and complex groups alike (real groups simply carry zero
//! imaginary parts). The exponential uses scaling-and-squaring with a Taylor
//! tail; the logarithm uses inverse scaling via Denman–Beavers square roots
//! followed by a Mercator series, which is robust for the near-identity
//! arguments the library guards for.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Complex square matrix.
pub type CMat = DMatrix<Complex64>;
/// Real matrix (used for subspace computations in basis coordinates).
pub type RMat = DMatrix<f64>;
/// Real vector.
pub type RVec = DVector<f64>;

/// Frobenius norm.
pub fn fro_norm(m: &CMat) -> f64 {
    m.norm()
}

/// Frobenius distance to the identity.
pub fn dist_to_identity(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut z = m[(i, j)];
            if i == j {
                z -= Complex64::new(1.0, 0.0);
            }
            acc += z.norm_sqr();
        }
    }
    acc.sqrt()
}

/// Matrix exponential by scaling and squaring with a Taylor tail.
pub fn mat_exp(m: &CMat) -> CMat {
    let n = m.nrows();
    let norm = fro_norm(m);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m.map(|z| z / 2f64.powi(squarings as i32));
    let mut sum = CMat::identity(n, n);
    let mut term = CMat::identity(n, n);
    for k in 1..=32 {
        term = (&term * &scaled).map(|z| z / k as f64);
        sum += &term;
        if fro_norm(&term) < 1e-18 * (1.0 + fro_norm(&sum)) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Principal square root via the Denman–Beavers iteration.
fn mat_sqrt(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = CMat::identity(n, n);
    for _ in 0..60 {
        let y_inv = y.clone().try_inverse().ok_or_else(|| Error::Domain(
            "matrix square root: iterate became singular".into(),
        ))?;
        let z_inv = z.clone().try_inverse().ok_or_else(|| Error::Domain(
            "matrix square root: iterate became singular".into(),
        ))?;
        let y_next = (&y + z_inv).map(|v| v * 0.5);
        let z_next = (&z + y_inv).map(|v| v * 0.5);
        let delta = fro_norm(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta < 1e-15 * (1.0 + fro_norm(&y)) {
            return Ok(y);
        }
    }
    Ok(y)
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Callers are expected to enforce their own distance guard; this routine
/// errors only if the square-root iteration cannot reduce the argument
/// toward the identity.
pub fn mat_log(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut doublings = 0u32;
    while dist_to_identity(&a) > 0.25 {
        if doublings >= 40 {
            return Err(Error::Domain(
                "matrix logarithm did not converge toward the identity".into(),
            ));
        }
        a = mat_sqrt(&a)?;
        doublings += 1;
    }
    let x = &a - CMat::identity(n, n);
    let mut sum = CMat::zeros(n, n);
    let mut power = CMat::identity(n, n);
    for j in 1..=64 {
        power = &power * &x;
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        let term = power.map(|v| v * (sign / j as f64));
        sum += &term;
        if fro_norm(&power) / (j as f64) < 1e-18 {
            break;
        }
    }
    Ok(sum.map(|v| v * 2f64.powi(doublings as i32)))
}

/// Principal logarithm of a normal matrix via the complex Schur form: the
/// spectrum is logged directly (`log λ = ln|λ| + i·arg λ`, argument in
/// `(-π, π]`), so the result is valid arbitrarily far from the identity.
/// The reconstruction `exp(L) = M` is verified and a `Domain` error is
/// returned when the input is too far from normal for the route to apply.
pub fn principal_log_normal(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    let (q, t) = m.clone().schur().unpack();
    let mut diag = CMat::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let modulus = lambda.norm();
        if modulus < 1e-300 {
            return Err(Error::Domain("logarithm of a singular matrix".into()));
        }
        diag[(k, k)] = nalgebra::Complex::new(modulus.ln(), lambda.arg());
    }
    let log = &q * diag * q.adjoint();
    let residual = fro_norm(&(mat_exp(&log) - m));
    if residual > 1e-8 {
        return Err(Error::Domain(format!(
            "principal logarithm is only available for normal matrices \
             (reconstruction residual {residual:.3e})"
        )));
    }
    Ok(log)
}

/// Nearest-unitary projection: Newton iteration for the unitary polar factor.
///
/// For real input the iterates stay real, so the same routine serves
/// orthogonal families.
pub fn polar_unitary(m: &CMat) -> Result<CMat> {
    let mut u = m.clone();
    for _ in 0..40 {
        let adj_inv = u
            .adjoint()
            .try_inverse()
            .ok_or_else(|| Error::Domain("polar projection of a singular matrix".into()))?;
        let next = (&u + adj_inv).map(|v| v * 0.5);
        let delta = fro_norm(&(&next - &u));
        u = next;
        if delta < 1e-15 * (1.0 + fro_norm(&u)) {
            break;
        }
    }
    Ok(u)
}

/// Flatten a complex matrix into the real vector
/// `[re(m_00), im(m_00), re(m_01), im(m_01), ...]` (row-major interleaved).
pub fn flatten_complex(m: &CMat) -> RVec {
    let n = m.nrows();
    let c = m.ncols();
    let mut out = RVec::zeros(2 * n * c);
    for i in 0..n {
        for j in 0..c {
            let z = m[(i, j)];
            out[2 * (i * c + j)] = z.re;
            out[2 * (i * c + j) + 1] = z.im;
        }
    }
    out
}

/// Real matrix whose columns flatten the given complex matrices.
pub fn flatten_columns(mats: &[CMat]) -> RMat {
    assert!(!mats.is_empty());
    let len = 2 * mats[0].nrows() * mats[0].ncols();
    let mut out = RMat::zeros(len, mats.len());
    for (k, m) in mats.iter().enumerate() {
        out.set_column(k, &flatten_complex(m));
    }
    out
}

/// Singular-value cutoff used for all rank decisions on spans.
pub const SPAN_SV_CUTOFF: f64 = 1e-6;

/// Orthonormal basis of the column span of `cols`, keeping singular
/// directions with singular value above `cutoff`.
pub fn orthonormal_span(cols: &[RVec], dim: usize, cutoff: f64) -> RMat {
    if cols.is_empty() {
        return RMat::zeros(dim, 0);
    }
    let mut m = RMat::zeros(dim, cols.len());
    for (k, c) in cols.iter().enumerate() {
        m.set_column(k, c);
    }
    let svd = m.svd(true, false);
    let u = svd.u.expect("svd with u requested");
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > cutoff)
        .count();
    u.columns(0, rank).into_owned()
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal matrices.
pub fn principal_angles(a: &RMat, b: &RMat) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    let product = a.transpose() * b;
    let svd = product.svd(false, false);
    let mut angles: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    angles
}

/// Largest sine of an angle from span(a) out of span(b): zero iff
/// span(a) ⊆ span(b). Both inputs must have orthonormal columns.
pub fn containment_residual(a: &RMat, b: &RMat) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let proj = b * (b.transpose() * a);
    let residual = a - proj;
    let svd = residual.svd(false, false);
    svd.singular_values.iter().cloned().fold(0.0, f64::max)
}

/// Real matrix embedding of i (used in tests and small constructions).
pub fn cplx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Build a complex matrix from rows of (re, im) pairs.
pub fn cmat_from_pairs(rows: &[Vec<(f64, f64)>]) -> CMat {
    let n = rows.len();
    let c = rows.first().map(|r| r.len()).unwrap_or(0);
    CMat::from_fn(n, c, |i, j| {
        let (re, im) = rows[i][j];
        Complex64::new(re, im)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_generator(theta: f64) -> CMat {
        cmat_from_pairs(&[
            vec![(0.0, 0.0), (-theta, 0.0)],
            vec![(theta, 0.0), (0.0, 0.0)],
        ])
    }

    #[test]
    fn principal_log_handles_matrices_far_from_identity() {
        // Planar rotations nearly a half-turn away, and a phase just short
        // of -1, are out of reach of the series logarithm but exact here.
        for &theta in &[0.5, 2.0, 3.0, -3.1, std::f64::consts::PI - 0.01] {
            let g = mat_exp(&rotation_generator(theta));
            let log = principal_log_normal(&g).unwrap();
            assert!(
                fro_norm(&(&log - rotation_generator(theta))) < 1e-10,
                "theta {theta}"
            );
        }
        let phase = cmat_from_pairs(&[vec![(
            (std::f64::consts::PI - 0.01).cos(),
            (std::f64::consts::PI - 0.01).sin(),
        )]]);
        let log = principal_log_normal(&phase).unwrap();
        assert!((log[(0, 0)].im - (std::f64::consts::PI - 0.01)).abs() < 1e-12);
        assert!(log[(0, 0)].re.abs() < 1e-12);
    }

    #[test]
    fn exp_matches_planar_rotation_closed_form() {
        for &theta in &[0.1, 0.7, 1.9, -2.4] {
            let m = mat_exp(&rotation_generator(theta));
            let expected = cmat_from_pairs(&[
                vec![(theta.cos(), 0.0), (-theta.sin(), 0.0)],
                vec![(theta.sin(), 0.0), (theta.cos(), 0.0)],
            ]);
            assert!(fro_norm(&(&m - &expected)) < 1e-14, "theta = {theta}");
        }
    }

    #[test]
    fn exp_of_complex_diagonal() {
        let d = cmat_from_pairs(&[vec![(0.0, 0.5), (0.0, 0.0)], vec![(0.0, 0.0), (0.0, -0.5)]]);
        let m = mat_exp(&d);
        assert!((m[(0, 0)] - cplx(0.5f64.cos(), 0.5f64.sin())).norm() < 1e-15);
        assert!((m[(1, 1)] - cplx(0.5f64.cos(), -0.5f64.sin())).norm() < 1e-15);
        assert!(m[(0, 1)].norm() < 1e-16);
    }

    #[test]
    fn log_inverts_exp_near_identity() {
        let gens = [
            rotation_generator(0.9),
            cmat_from_pairs(&[vec![(0.0, 0.4), (0.2, 0.1)], vec![(-0.2, 0.1), (0.0, -0.4)]]),
        ];
        for g in gens {
            let back = mat_log(&mat_exp(&g)).unwrap();
            assert!(fro_norm(&(&back - &g)) < 1e-12);
        }
    }

    #[test]
    fn polar_recovers_unitary_factor() {
        let u = mat_exp(&cmat_from_pairs(&[
            vec![(0.0, 0.3), (0.5, 0.0)],
            vec![(-0.5, 0.0), (0.0, -0.3)],
        ]));
        // Perturb away from the unitary group, then project back.
        let perturbed = u.map(|z| z * 1.001) + CMat::from_fn(2, 2, |i, j| {
            Complex64::new(1e-4 * (i as f64 - j as f64), 0.0)
        });
        let projected = polar_unitary(&perturbed).unwrap();
        let defect = fro_norm(&(&projected * projected.adjoint() - CMat::identity(2, 2)));
        assert!(defect < 1e-12);
        assert!(fro_norm(&(&projected - &u)) < 1e-2);
    }

    #[test]
    fn span_rank_respects_cutoff() {
        let e1 = RVec::from_vec(vec![1.0, 0.0, 0.0]);
        let e2 = RVec::from_vec(vec![0.0, 1.0, 0.0]);
        let tiny = RVec::from_vec(vec![0.0, 0.0, 1e-9]);
        let basis = orthonormal_span(&[e1, e2, tiny], 3, SPAN_SV_CUTOFF);
        assert_eq!(basis.ncols(), 2);
    }

    #[test]
    fn principal_angles_of_rotated_plane() {
        let a = RMat::from_columns(&[
            RVec::from_vec(vec![1.0, 0.0, 0.0]),
            RVec::from_vec(vec![0.0, 1.0, 0.0]),
        ]);
        let phi = 0.3f64;
        let b = RMat::from_columns(&[
            RVec::from_vec(vec![1.0, 0.0, 0.0]),
            RVec::from_vec(vec![0.0, phi.cos(), phi.sin()]),
        ]);
        let angles = principal_angles(&a, &b);
        assert!((angles[0] - 0.0).abs() < 1e-12);
        assert!((angles[1] - phi).abs() < 1e-12);
    }

    #[test]
    fn containment_detects_subspaces() {
        let a = RMat::from_columns(&[RVec::from_vec(vec![1.0, 0.0, 0.0])]);
        let b = RMat::from_columns(&[
            RVec::from_vec(vec![1.0, 0.0, 0.0]),
            RVec::from_vec(vec![0.0, 1.0, 0.0]),
        ]);
        assert!(containment_residual(&a, &b) < 1e-15);
        let c = RMat::from_columns(&[RVec::from_vec(vec![0.0, 0.0, 1.0])]);
        assert!(containment_residual(&c, &b) > 0.99);
    }
}
