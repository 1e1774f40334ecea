//! Matrix Lie groups at desk scale.
//!
//! A [`MatrixLieGroup`] is described concretely: an ambient matrix size, a
//! basis of its Lie algebra, and a membership family used to test and repair
//! group membership numerically. Elements and algebra vectors carry a shared
//! handle to their group, so mixed-group arithmetic is rejected instead of
//! silently producing nonsense.
//!
//! Built-ins: SU(2), SO(3), U(1), SO(2), and the one-point group used for
//! bundles with trivial structure group. The su(2) basis is
//! `E_j = -(i/2) * sigma_j`, which gives the cyclic structure constants
//! `[E_1, E_2] = E_3`, aligned with the standard so(3) basis so that the
//! double cover is the identity map on basis coordinates.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{
    self, cmat_from_pairs, dist_to_identity, flatten_columns, flatten_complex, fro_norm, CMat,
    RMat, RVec,
};
use crate::{Error, Result};

/// Scalar field tag (affects JSON parsing and membership checks only; all
/// storage is complex).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

/// Family used for membership tests and renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `g * g^H = I`.
    Unitary,
    /// Real entries and `g * g^T = I`.
    Orthogonal,
    /// No membership constraint.
    Free,
    /// Only the identity matrix (trivial structure group).
    Point,
}

/// Tolerance for membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// Tolerance at which a basis counts as closed under the commutator.
pub const CLOSURE_TOL: f64 = 1e-10;
/// Default logarithm guard: `log` refuses elements with `|g - I| >= guard`.
pub const DEFAULT_LOG_GUARD: f64 = 1.0;

/// Shared handle to a group.
pub type Group = Arc<MatrixLieGroup>;

/// A concrete matrix Lie group together with a basis of its Lie algebra.
#[derive(Debug)]
pub struct MatrixLieGroup {
    name: String,
    n: usize,
    field: Field,
    family: Family,
    det_one: bool,
    basis: Vec<CMat>,
    /// `structure[i][j]` holds the coordinates of `[E_i, E_j]`.
    structure: Vec<Vec<RVec>>,
    /// Flattened basis matrix (2n² x d) and its pseudoinverse (d x 2n²).
    flat_basis: RMat,
    pinv_basis: RMat,
    log_guard: f64,
}

impl MatrixLieGroup {
    /// Build a group from an algebra basis, verifying linear independence,
    /// closure under the commutator, antisymmetry, and the Jacobi identity.
    #[allow(clippy::needless_range_loop)]
    pub fn new(
        name: impl Into<String>,
        field: Field,
        family: Family,
        det_one: bool,
        n: usize,
        basis: Vec<CMat>,
    ) -> Result<Group> {
        let name = name.into();
        for b in &basis {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::BadMatrixSize {
                    rows: b.nrows(),
                    cols: b.ncols(),
                    expected: n,
                });
            }
        }
        let d = basis.len();
        let (flat_basis, pinv_basis) = if d > 0 {
            let flat = flatten_columns(&basis);
            let svd = flat.clone().svd(true, true);
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-10)
                .count();
            if rank < d {
                return Err(Error::Dimension(format!(
                    "algebra basis of `{name}` is linearly dependent (rank {rank} < {d})"
                )));
            }
            let pinv = svd
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Dimension(format!("basis pseudoinverse failed: {e}")))?;
            (flat, pinv)
        } else {
            (RMat::zeros(2 * n * n, 0), RMat::zeros(0, 2 * n * n))
        };

        let mut group = MatrixLieGroup {
            name,
            n,
            field,
            family,
            det_one,
            basis,
            structure: Vec::new(),
            flat_basis,
            pinv_basis,
            log_guard: DEFAULT_LOG_GUARD,
        };

        // Structure constants, with a closure check.
        let mut structure = vec![vec![RVec::zeros(d); d]; d];
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let comm = &group.basis[i] * &group.basis[j] - &group.basis[j] * &group.basis[i];
                let (coords, residual) = group.project_to_algebra(&comm);
                worst = worst.max(residual);
                structure[i][j] = coords;
            }
        }
        if worst > CLOSURE_TOL {
            return Err(Error::BasisNotClosed { residual: worst });
        }
        // Antisymmetry and Jacobi on the projected constants.
        let mut defect = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                defect = defect.max((&structure[i][j] + &structure[j][i]).amax());
                for k in 0..d {
                    for l in 0..d {
                        let mut total = 0.0;
                        for m in 0..d {
                            total += structure[j][k][m] * structure[i][m][l]
                                + structure[k][i][m] * structure[j][m][l]
                                + structure[i][j][m] * structure[k][m][l];
                        }
                        defect = defect.max(total.abs());
                    }
                }
            }
        }
        if defect > CLOSURE_TOL {
            return Err(Error::BasisNotClosed { residual: defect });
        }
        group.structure = structure;
        Ok(Arc::new(group))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Ambient matrix size.
    pub fn matrix_dim(&self) -> usize {
        self.n
    }

    /// Dimension of the Lie algebra.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn det_one(&self) -> bool {
        self.det_one
    }

    pub fn basis(&self) -> &[CMat] {
        &self.basis
    }

    pub fn log_guard(&self) -> f64 {
        self.log_guard
    }

    /// Same group with a different logarithm guard.
    pub fn with_log_guard(self: &Group, guard: f64) -> Group {
        let mut clone = MatrixLieGroup {
            name: self.name.clone(),
            n: self.n,
            field: self.field,
            family: self.family,
            det_one: self.det_one,
            basis: self.basis.clone(),
            structure: self.structure.clone(),
            flat_basis: self.flat_basis.clone(),
            pinv_basis: self.pinv_basis.clone(),
            log_guard: self.log_guard,
        };
        clone.log_guard = guard;
        Arc::new(clone)
    }

    /// Structure constants: coordinates of `[E_i, E_j]`.
    pub fn structure_constants(&self) -> &[Vec<RVec>] {
        &self.structure
    }

    /// Project an ambient matrix onto the algebra span; returns basis
    /// coordinates and the Frobenius residual of the projection.
    pub fn project_to_algebra(&self, m: &CMat) -> (RVec, f64) {
        if self.dim() == 0 {
            return (RVec::zeros(0), fro_norm(m));
        }
        let flat = flatten_complex(m);
        let coords = &self.pinv_basis * &flat;
        let residual = (&self.flat_basis * &coords - flat).norm();
        (coords, residual)
    }

    /// Membership residual of an ambient matrix under this group's family.
    pub fn membership_residual(&self, m: &CMat) -> f64 {
        let mut residual: f64 = match self.family {
            Family::Unitary => fro_norm(&(m * m.adjoint() - CMat::identity(self.n, self.n))),
            Family::Orthogonal => {
                let imag: f64 = m.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
                fro_norm(&(m * m.transpose() - CMat::identity(self.n, self.n))) + imag
            }
            Family::Free => 0.0,
            Family::Point => dist_to_identity(m),
        };
        if self.det_one {
            residual += (m.determinant() - Complex64::new(1.0, 0.0)).norm();
        }
        residual
    }
}

fn same_group(a: &Group, b: &Group) -> bool {
    Arc::ptr_eq(a, b) || (a.name == b.name && a.n == b.n && a.dim() == b.dim())
}

fn check_same_group(a: &Group, b: &Group) -> Result<()> {
    if same_group(a, b) {
        Ok(())
    } else {
        Err(Error::GroupMismatch(a.name.clone(), b.name.clone()))
    }
}

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

/// A group element: an ambient matrix plus its group handle.
#[derive(Debug, Clone)]
pub struct GroupElement {
    group: Group,
    m: CMat,
}

impl GroupElement {
    /// Membership-checked constructor.
    pub fn from_matrix(group: &Group, m: CMat) -> Result<GroupElement> {
        if m.nrows() != group.n || m.ncols() != group.n {
            return Err(Error::BadMatrixSize {
                rows: m.nrows(),
                cols: m.ncols(),
                expected: group.n,
            });
        }
        let residual = group.membership_residual(&m);
        if residual > MEMBERSHIP_TOL {
            return Err(Error::NotInGroup {
                group: group.name.clone(),
                residual,
            });
        }
        Ok(GroupElement {
            group: group.clone(),
            m,
        })
    }

    /// Constructor for matrices already known to be members (internal fast
    /// paths such as ODE renormalization output).
    pub fn from_matrix_unchecked(group: &Group, m: CMat) -> GroupElement {
        GroupElement {
            group: group.clone(),
            m,
        }
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn mul(&self, rhs: &GroupElement) -> Result<GroupElement> {
        check_same_group(&self.group, &rhs.group)?;
        Ok(GroupElement {
            group: self.group.clone(),
            m: &self.m * &rhs.m,
        })
    }

    pub fn inverse(&self) -> GroupElement {
        let m = match self.group.family {
            Family::Unitary => self.m.adjoint(),
            Family::Orthogonal => self.m.transpose(),
            Family::Point => CMat::identity(self.group.n, self.group.n),
            Family::Free => self
                .m
                .clone()
                .try_inverse()
                .expect("group element must be invertible"),
        };
        GroupElement {
            group: self.group.clone(),
            m,
        }
    }

    pub fn membership_residual(&self) -> f64 {
        self.group.membership_residual(&self.m)
    }

    /// Project back onto the membership family (unitary/orthogonal polar
    /// factor plus a determinant correction for special groups).
    pub fn renormalize(&self) -> Result<GroupElement> {
        let mut m = match self.group.family {
            Family::Unitary | Family::Orthogonal => linalg::polar_unitary(&self.m)?,
            Family::Point => CMat::identity(self.group.n, self.group.n),
            Family::Free => self.m.clone(),
        };
        if self.group.det_one {
            let det = m.determinant();
            let (r, phi) = det.to_polar();
            let n = self.group.n as f64;
            let scale = Complex64::from_polar(r.powf(-1.0 / n), -phi / n);
            m.apply(|z| *z *= scale);
        }
        Ok(GroupElement {
            group: self.group.clone(),
            m,
        })
    }

    /// Distance `|g - I|` used by the logarithm guard.
    pub fn dist_to_identity(&self) -> f64 {
        dist_to_identity(&self.m)
    }

    /// Principal logarithm into the Lie algebra.
    pub fn log(&self) -> Result<AlgebraElement> {
        let norm = self.dist_to_identity();
        let guard = self.group.log_guard;
        if norm >= guard {
            return Err(Error::OutOfInjectivityRadius { norm, guard });
        }
        let logm = linalg::mat_log(&self.m)?;
        let (coords, _residual) = self.group.project_to_algebra(&logm);
        Ok(AlgebraElement {
            group: self.group.clone(),
            coords,
        })
    }

    /// Conjugation action on the algebra: `Ad(g) V = g V g^{-1}`.
    pub fn ad(&self, v: &AlgebraElement) -> Result<AlgebraElement> {
        check_same_group(&self.group, &v.group)?;
        let conj = &self.m * v.matrix() * self.inverse().m;
        let (coords, _residual) = self.group.project_to_algebra(&conj);
        Ok(AlgebraElement {
            group: self.group.clone(),
            coords,
        })
    }

    /// Matrix of `Ad(g)` in the algebra basis.
    pub fn adjoint_matrix(&self) -> RMat {
        let d = self.group.dim();
        let inv = self.inverse();
        let mut out = RMat::zeros(d, d);
        for k in 0..d {
            let conj = &self.m * &self.group.basis[k] * &inv.m;
            let (coords, _residual) = self.group.project_to_algebra(&conj);
            out.set_column(k, &coords);
        }
        out
    }
}

/// Identity element.
pub fn identity(group: &Group) -> GroupElement {
    GroupElement {
        group: group.clone(),
        m: CMat::identity(group.n, group.n),
    }
}

/// A Lie algebra element in basis coordinates.
#[derive(Debug, Clone)]
pub struct AlgebraElement {
    group: Group,
    coords: RVec,
}

impl AlgebraElement {
    pub fn new(group: &Group, coords: RVec) -> Result<AlgebraElement> {
        if coords.len() != group.dim() {
            return Err(Error::Dimension(format!(
                "algebra vector of length {} for group `{}` of dimension {}",
                coords.len(),
                group.name,
                group.dim()
            )));
        }
        Ok(AlgebraElement {
            group: group.clone(),
            coords,
        })
    }

    pub fn zero(group: &Group) -> AlgebraElement {
        AlgebraElement {
            group: group.clone(),
            coords: RVec::zeros(group.dim()),
        }
    }

    pub fn basis_vector(group: &Group, k: usize) -> AlgebraElement {
        let mut coords = RVec::zeros(group.dim());
        coords[k] = 1.0;
        AlgebraElement {
            group: group.clone(),
            coords,
        }
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn coords(&self) -> &RVec {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    /// Ambient matrix `sum_k coords_k E_k`.
    pub fn matrix(&self) -> CMat {
        let n = self.group.n;
        let mut out = CMat::zeros(n, n);
        for (k, basis) in self.group.basis.iter().enumerate() {
            let c = self.coords[k];
            if c != 0.0 {
                out += basis.map(|z| z * c);
            }
        }
        out
    }

    pub fn add(&self, rhs: &AlgebraElement) -> Result<AlgebraElement> {
        check_same_group(&self.group, &rhs.group)?;
        Ok(AlgebraElement {
            group: self.group.clone(),
            coords: &self.coords + &rhs.coords,
        })
    }

    pub fn sub(&self, rhs: &AlgebraElement) -> Result<AlgebraElement> {
        check_same_group(&self.group, &rhs.group)?;
        Ok(AlgebraElement {
            group: self.group.clone(),
            coords: &self.coords - &rhs.coords,
        })
    }

    pub fn scale(&self, s: f64) -> AlgebraElement {
        AlgebraElement {
            group: self.group.clone(),
            coords: &self.coords * s,
        }
    }

    /// Lie bracket through the precomputed structure constants.
    pub fn bracket(&self, rhs: &AlgebraElement) -> Result<AlgebraElement> {
        check_same_group(&self.group, &rhs.group)?;
        let d = self.group.dim();
        let mut coords = RVec::zeros(d);
        for i in 0..d {
            let a = self.coords[i];
            if a == 0.0 {
                continue;
            }
            for j in 0..d {
                let b = rhs.coords[j];
                if b == 0.0 {
                    continue;
                }
                coords += &self.group.structure[i][j] * (a * b);
            }
        }
        Ok(AlgebraElement {
            group: self.group.clone(),
            coords,
        })
    }

    /// Matrix of `ad(v) = [v, ·]` in the algebra basis.
    pub fn ad_matrix(&self) -> RMat {
        let d = self.group.dim();
        let mut out = RMat::zeros(d, d);
        for k in 0..d {
            let mut column = RVec::zeros(d);
            for i in 0..d {
                let a = self.coords[i];
                if a != 0.0 {
                    column += &self.group.structure[i][k] * a;
                }
            }
            out.set_column(k, &column);
        }
        out
    }

    /// Exponential into the group.
    pub fn exp(&self) -> GroupElement {
        GroupElement {
            group: self.group.clone(),
            m: linalg::mat_exp(&self.matrix()),
        }
    }
}

/// Uniformly random algebra element with coordinates in `[-scale, scale]`.
pub fn random_algebra(group: &Group, rng: &mut impl Rng, scale: f64) -> AlgebraElement {
    let coords = RVec::from_fn(group.dim(), |_, _| rng.random_range(-scale..=scale));
    AlgebraElement {
        group: group.clone(),
        coords,
    }
}

/// Random group element obtained by exponentiating [`random_algebra`].
pub fn random_element(group: &Group, rng: &mut impl Rng, scale: f64) -> GroupElement {
    random_algebra(group, rng, scale).exp()
}

// ---------------------------------------------------------------------------
// Built-in groups
// ---------------------------------------------------------------------------

/// SU(2) with basis `E_j = -(i/2) sigma_j`, so `[E_1, E_2] = E_3` cyclically.
pub fn su2() -> Group {
    static CELL: OnceLock<Group> = OnceLock::new();
    CELL.get_or_init(|| {
        let e1 = cmat_from_pairs(&[
            vec![(0.0, 0.0), (0.0, -0.5)],
            vec![(0.0, -0.5), (0.0, 0.0)],
        ]);
        let e2 = cmat_from_pairs(&[
            vec![(0.0, 0.0), (-0.5, 0.0)],
            vec![(0.5, 0.0), (0.0, 0.0)],
        ]);
        let e3 = cmat_from_pairs(&[
            vec![(0.0, -0.5), (0.0, 0.0)],
            vec![(0.0, 0.0), (0.0, 0.5)],
        ]);
        MatrixLieGroup::new("SU(2)", Field::Complex, Family::Unitary, true, 2, vec![e1, e2, e3])
            .expect("built-in SU(2) basis")
    })
    .clone()
}

/// SO(3) with the standard generator basis `[L_1, L_2] = L_3` cyclically.
pub fn so3() -> Group {
    static CELL: OnceLock<Group> = OnceLock::new();
    CELL.get_or_init(|| {
        let l1 = cmat_from_pairs(&[
            vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
            vec![(0.0, 0.0), (0.0, 0.0), (-1.0, 0.0)],
            vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)],
        ]);
        let l2 = cmat_from_pairs(&[
            vec![(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)],
            vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
            vec![(-1.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
        ]);
        let l3 = cmat_from_pairs(&[
            vec![(0.0, 0.0), (-1.0, 0.0), (0.0, 0.0)],
            vec![(1.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
            vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
        ]);
        MatrixLieGroup::new("SO(3)", Field::Real, Family::Orthogonal, true, 3, vec![l1, l2, l3])
            .expect("built-in SO(3) basis")
    })
    .clone()
}

/// U(1) as 1x1 unitary matrices, algebra basis `[i]`.
pub fn u1() -> Group {
    static CELL: OnceLock<Group> = OnceLock::new();
    CELL.get_or_init(|| {
        let basis = vec![cmat_from_pairs(&[vec![(0.0, 1.0)]])];
        MatrixLieGroup::new("U(1)", Field::Complex, Family::Unitary, false, 1, basis)
            .expect("built-in U(1) basis")
    })
    .clone()
}

/// SO(2) with generator `[[0, 1], [-1, 0]]`.
pub fn so2() -> Group {
    static CELL: OnceLock<Group> = OnceLock::new();
    CELL.get_or_init(|| {
        let j = cmat_from_pairs(&[vec![(0.0, 0.0), (1.0, 0.0)], vec![(-1.0, 0.0), (0.0, 0.0)]]);
        MatrixLieGroup::new("SO(2)", Field::Real, Family::Orthogonal, true, 2, vec![j])
            .expect("built-in SO(2) basis")
    })
    .clone()
}

/// The one-point group (trivial structure group).
pub fn trivial() -> Group {
    static CELL: OnceLock<Group> = OnceLock::new();
    CELL.get_or_init(|| {
        MatrixLieGroup::new("trivial", Field::Real, Family::Point, false, 1, Vec::new())
            .expect("built-in trivial group")
    })
    .clone()
}

// ---------------------------------------------------------------------------
// Fibration maps
// ---------------------------------------------------------------------------

/// Projection of the unit 2x2 special unitary group onto the unit sphere:
/// for `q = [[s, t], [-conj(t), conj(s)]]`,
/// `p(q) = (-2 Re(s t), -2 Im(s t), 1 - 2 |t|^2)`.
pub fn hopf_project(q: &GroupElement) -> Result<[f64; 3]> {
    let residual = q.membership_residual();
    if q.group.n != 2 || residual > MEMBERSHIP_TOL {
        return Err(Error::NotInGroup {
            group: q.group.name.clone(),
            residual: residual.max(if q.group.n != 2 { 1.0 } else { 0.0 }),
        });
    }
    let s = q.m[(0, 0)];
    let t = q.m[(0, 1)];
    let st = s * t;
    Ok([-2.0 * st.re, -2.0 * st.im, 1.0 - 2.0 * t.norm_sqr()])
}

/// Double cover SU(2) -> SO(3): the conjugation action of `q` written in the
/// shared basis coordinates. Its kernel is `{I, -I}`.
pub fn su2_to_so3(q: &GroupElement) -> Result<GroupElement> {
    check_same_group(&q.group, &su2())?;
    let r = q.adjoint_matrix();
    let m = CMat::from_fn(3, 3, |i, j| Complex64::new(r[(i, j)], 0.0));
    GroupElement::from_matrix(&so3(), m)
}

/// Double cover U(1) -> SO(2): `e^{i theta}` maps to the rotation matrix
/// `[[cos 2theta, sin 2theta], [-sin 2theta, cos 2theta]]`. Kernel `{1, -1}`.
pub fn u1_to_so2(z: &GroupElement) -> Result<GroupElement> {
    check_same_group(&z.group, &u1())?;
    let w = z.m[(0, 0)];
    let theta = w.im.atan2(w.re);
    let (s2, c2) = (2.0 * theta).sin_cos();
    let m = cmat_from_pairs(&[vec![(c2, 0.0), (s2, 0.0)], vec![(-s2, 0.0), (c2, 0.0)]]);
    GroupElement::from_matrix(&so2(), m)
}

/// Embed a unit complex number into the 2x2 special unitary group as
/// `diag(z, conj(z))` (the circle subgroup fixed by the fibration).
pub fn embed_u1_su2(z: &GroupElement) -> Result<GroupElement> {
    check_same_group(&z.group, &u1())?;
    let w = z.m[(0, 0)];
    let m = cmat_from_pairs(&[
        vec![(w.re, w.im), (0.0, 0.0)],
        vec![(0.0, 0.0), (w.re, -w.im)],
    ]);
    GroupElement::from_matrix(&su2(), m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn su2_elt(s: (f64, f64), t: (f64, f64)) -> GroupElement {
        let m = cmat_from_pairs(&[vec![s, t], vec![(-t.0, t.1), (s.0, -s.1)]]);
        GroupElement::from_matrix(&su2(), m).unwrap()
    }

    #[test]
    fn su2_structure_constants_are_cyclic() {
        let g = su2();
        let e1 = AlgebraElement::basis_vector(&g, 0);
        let e2 = AlgebraElement::basis_vector(&g, 1);
        let e3 = AlgebraElement::basis_vector(&g, 2);
        let c12 = e1.bracket(&e2).unwrap();
        let c23 = e2.bracket(&e3).unwrap();
        let c31 = e3.bracket(&e1).unwrap();
        assert!((c12.coords() - e3.coords()).norm() < 1e-14);
        assert!((c23.coords() - e1.coords()).norm() < 1e-14);
        assert!((c31.coords() - e2.coords()).norm() < 1e-14);
    }

    #[test]
    fn so3_exp_matches_rodrigues() {
        // Rodrigues: exp(theta * K_axis) = I + sin(theta) K + (1-cos(theta)) K^2
        // for a unit axis. Oracle computed directly from the formula.
        let g = so3();
        let axis = [0.36, -0.48, 0.8]; // unit vector
        let theta = 1.1f64;
        let v = AlgebraElement::new(
            &g,
            RVec::from_vec(axis.iter().map(|a| a * theta).collect()),
        )
        .unwrap();
        let m = v.exp();

        let k = v.matrix().map(|z| z.re / theta);
        let k2 = &k * &k;
        let mut expected = RMat::identity(3, 3);
        expected += k.map(|x| x * theta.sin());
        expected += k2.map(|x| x * (1.0 - theta.cos()));
        let got = m.matrix().map(|z| z.re);
        assert!((got - expected).norm() < 1e-13);
    }

    #[test]
    fn exp_log_round_trip_small_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for group in [su2(), so3(), u1(), so2()] {
            for _ in 0..50 {
                let v = random_algebra(&group, &mut rng, 0.28); // |v| < 0.5
                let back = v.exp().log().unwrap();
                assert!(
                    (back.coords() - v.coords()).norm() < 1e-10,
                    "group {}",
                    group.name()
                );
            }
        }
    }

    #[test]
    fn log_guard_rejects_far_elements() {
        let g = su2();
        let v = AlgebraElement::new(&g, RVec::from_vec(vec![3.0, 0.0, 0.0])).unwrap();
        let far = v.exp();
        assert!(far.dist_to_identity() > 1.0);
        assert!(matches!(
            far.log(),
            Err(Error::OutOfInjectivityRadius { .. })
        ));
    }

    #[test]
    fn non_closed_basis_is_rejected()
 {
        // span{upper shift, lower shift} is not a subalgebra of gl(2).
        let x = cmat_from_pairs(&[vec![(0.0, 0.0), (1.0, 0.0)], vec![(0.0, 0.0), (0.0, 0.0)]]);
        let y = cmat_from_pairs(&[vec![(0.0, 0.0), (0.0, 0.0)], vec![(1.0, 0.0), (0.0, 0.0)]]);
        let result = MatrixLieGroup::new("bad", Field::Real, Family::Free, false, 2, vec![x, y]);
        assert!(matches!(result, Err(Error::BasisNotClosed { .. })));
    }

    #[test]
    fn mixed_group_arithmetic_is_rejected() {
        let a = identity(&su2());
        let b = identity(&so3());
        assert!(matches!(a.mul(&b), Err(Error::GroupMismatch(_, _))));
    }

    #[test]
    fn membership_and_renormalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_element(&su2(), &mut rng, 0.9);
        assert!(g.membership_residual() < 1e-12);
        // Drift the element off the group and repair it.
        let drifted = GroupElement::from_matrix_unchecked(
            &su2(),
            g.matrix().map(|z| z * 1.000001) ,
        );
        assert!(drifted.membership_residual() > 1e-7);
        let repaired = drifted.renormalize().unwrap();
        assert!(repaired.membership_residual() < 1e-12);
    }

    #[test]
    fn fibration_maps_the_three_reference_points() {
        let north = su2_elt((1.0, 0.0), (0.0, 0.0));
        let south = su2_elt((0.0, 0.0), (1.0, 0.0));
        let inv = 1.0 / 2.0f64.sqrt();
        let equator = su2_elt((inv, 0.0), (inv, 0.0));
        assert_eq!(hopf_project(&north).unwrap(), [0.0, 0.0, 1.0]);
        let p_south = hopf_project(&south).unwrap();
        assert!((p_south[2] + 1.0).abs() < 1e-15 && p_south[0].abs() < 1e-15);
        let p_eq = hopf_project(&equator).unwrap();
        assert!((p_eq[0] + 1.0).abs() < 1e-15);
        assert!(p_eq[1].abs() < 1e-15 && p_eq[2].abs() < 1e-15);
    }

    #[test]
    fn fibration_lands_on_unit_sphere_and_is_circle_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q = random_element(&su2(), &mut rng, 1.4);
            let p = hopf_project(&q).unwrap();
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-10);

            // Invariance along the circle fiber.
            let z = random_element(&u1(), &mut rng, 3.0);
            let moved = q.mul(&embed_u1_su2(&z).unwrap()).unwrap();
            let p2 = hopf_project(&moved).unwrap();
            for i in 0..3 {
                assert!((p[i] - p2[i]).abs() < 1e-10);
            }
        }
    }

    // Quaternion oracle for the double cover: q r conj(q) on pure quaternions.
    #[derive(Clone, Copy)]
    struct Quat(f64, f64, f64, f64);

    impl Quat {
        fn mul(self, o: Quat) -> Quat {
            let Quat(a, b, c, d) = self;
            let Quat(e, f, g, h) = o;
            Quat(
                a * e - b * f - c * g - d * h,
                a * f + b * e + c * h - d * g,
                a * g - b * h + c * e + d * f,
                a * h + b * g - c * f + d * e,
            )
        }
        fn conj(self) -> Quat {
            Quat(self.0, -self.1, -self.2, -self.3)
        }
    }

    fn as_quat(q: &GroupElement) -> Quat {
        let s = q.matrix()[(0, 0)];
        let t = q.matrix()[(0, 1)];
        // q = w + x i + y j + z k with s = w - i z, t = -y - i x.
        Quat(s.re, -t.im, -t.re, -s.im)
    }

    #[test]
    fn double_cover_matches_quaternion_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = random_element(&su2(), &mut rng, 1.4);
            let r = su2_to_so3(&q).unwrap();
            let quat = as_quat(&q);
            for (axis, e) in [(0usize, [1.0, 0.0, 0.0]), (1, [0.0, 1.0, 0.0]), (2, [0.0, 0.0, 1.0])]
            {
                let pure = Quat(0.0, e[0], e[1], e[2]);
                let rotated = quat.mul(pure).mul(quat.conj());
                let col = [rotated.1, rotated.2, rotated.3];
                for (i, expect) in col.iter().enumerate() {
                    let got = r.matrix()[(i, axis)].re;
                    assert!(
                        (got - expect).abs() < 1e-12,
                        "axis {axis}, row {i}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn double_cover_is_a_homomorphism_with_sign_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = random_element(&su2(), &mut rng, 1.4);
            let b = random_element(&su2(), &mut rng, 1.4);
            let lhs = su2_to_so3(&a.mul(&b).unwrap()).unwrap();
            let rhs = su2_to_so3(&a).unwrap().mul(&su2_to_so3(&b).unwrap()).unwrap();
            assert!(fro_norm(&(lhs.matrix() - rhs.matrix())) < 1e-10);

            // -q maps to the same rotation.
            let minus = GroupElement::from_matrix(&su2(), a.matrix().map(|z| -z)).unwrap();
            let same = su2_to_so3(&minus).unwrap();
            assert!(fro_norm(&(same.matrix() - su2_to_so3(&a).unwrap().matrix())) < 1e-12);
        }
        // Kernel is exactly the sign pair: anything mapping near I is near +/- I.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let q = random_element(&su2(), &mut rng, 2.2);
            let r = su2_to_so3(&q).unwrap();
            if fro_norm(&(r.matrix() - CMat::identity(3, 3))) < 1e-8 {
                let to_plus = dist_to_identity(q.matrix());
                let to_minus = dist_to_identity(&q.matrix().map(|z| -z));
                assert!(to_plus.min(to_minus) < 1e-7);
            }
        }
    }

    #[test]
    fn circle_double_cover_angle_and_kernel() {
        let theta = 0.37f64;
        let z = AlgebraElement::new(&u1(), RVec::from_vec(vec![theta]))
            .unwrap()
            .exp();
        let r = u1_to_so2(&z).unwrap();
        assert!((r.matrix()[(0, 0)].re - (2.0 * theta).cos()).abs() < 1e-14);
        assert!((r.matrix()[(0, 1)].re - (2.0 * theta).sin()).abs() < 1e-14);

        // Homomorphism.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = random_element(&u1(), &mut rng, 3.0);
            let b = random_element(&u1(), &mut rng, 3.0);
            let lhs = u1_to_so2(&a.mul(&b).unwrap()).unwrap();
            let rhs = u1_to_so2(&a).unwrap().mul(&u1_to_so2(&b).unwrap()).unwrap();
            assert!(fro_norm(&(lhs.matrix() - rhs.matrix())) < 1e-10);
        }

        // Kernel detection: scan the circle; preimages of I cluster at +/- 1.
        let mut kernel_points = Vec::new();
        for k in 0..1000 {
            let phi = 2.0 * std::f64::consts::PI * (k as f64) / 1000.0;
            let z = AlgebraElement::new(&u1(), RVec::from_vec(vec![phi]))
                .unwrap()
                .exp();
            let r = u1_to_so2(&z).unwrap();
            if fro_norm(&(r.matrix() - CMat::identity(2, 2))) < 1e-8 {
                kernel_points.push(z.matrix()[(0, 0)]);
            }
        }
        assert!(!kernel_points.is_empty());
        for z in kernel_points {
            assert!((z.im).abs() < 1e-7 && (z.re.abs() - 1.0).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn bracket_is_antisymmetric_and_jacobi(
            a in proptest::array::uniform3(-1.0..1.0f64),
            b in proptest::array::uniform3(-1.0..1.0f64),
            c in proptest::array::uniform3(-1.0..1.0f64),
        ) {
            let g = su2();
            let va = AlgebraElement::new(&g, RVec::from_vec(a.to_vec())).unwrap();
            let vb = AlgebraElement::new(&g, RVec::from_vec(b.to_vec())).unwrap();
            let vc = AlgebraElement::new(&g, RVec::from_vec(c.to_vec())).unwrap();
            let anti = va.bracket(&vb).unwrap().add(&vb.bracket(&va).unwrap()).unwrap();
            prop_assert!(anti.norm() < 1e-12);
            let jac = va.bracket(&vb.bracket(&vc).unwrap()).unwrap()
                .add(&vb.bracket(&vc.bracket(&va).unwrap()).unwrap()).unwrap()
                .add(&vc.bracket(&va.bracket(&vb).unwrap()).unwrap()).unwrap();
            prop_assert!(jac.norm() < 1e-12);
        }

        #[test]
        fn ad_is_an_algebra_automorphism(
            gc in proptest::array::uniform3(-1.0..1.0f64),
            a in proptest::array::uniform3(-1.0..1.0f64),
            b in proptest::array::uniform3(-1.0..1.0f64),
        ) {
            let g = su2();
            let elt = AlgebraElement::new(&g, RVec::from_vec(gc.to_vec())).unwrap().exp();
            let va = AlgebraElement::new(&g, RVec::from_vec(a.to_vec())).unwrap();
            let vb = AlgebraElement::new(&g, RVec::from_vec(b.to_vec())).unwrap();
            let lhs = elt.ad(&va.bracket(&vb).unwrap()).unwrap();
            let rhs = elt.ad(&va).unwrap().bracket(&elt.ad(&vb).unwrap()).unwrap();
            prop_assert!((lhs.coords() - rhs.coords()).norm() < 1e-10);
        }
    }
}
