//! Transition data of a charted extension structure: the 1-forms `χ_ij` and
//! automorphism fields `α_ij` on chart overlaps, either produced by the flat
//! local-development pipeline or supplied explicitly, together with the
//! structural checks they must satisfy.
//!
//! The pipeline: choose for every chart `k` a **flat**, isometablic local
//! connection form `θ_k`, a basepoint `u_k`, and a reference label `ℓ_k`.
//! Because `θ_k` is flat, the lift ODE transports the identity along any
//! path with the same endpoints to the same group element, so a transport
//! function `T_k(p)` is well defined (integrated here along a base line
//! followed by a vertical exponential leg). The local development is
//! `c_k(p) = T_k(p) ℓ_k`, with frame change `Ψ_k(p) = Ad(c_k(p))`. On an
//! overlap,
//!
//! ```text
//! a_ij(p) = ℓ_i^{-1} T_i(p)^{-1} T_j(Φ_ij p) ℓ_j        (H-valued),
//! χ_ij(p)(X) = Ψ_i(p)^{-1} [ θ_i(p)(X) − θ_j(Φ_ij p)(dΦ_ij X) ],
//! α_ij(p) = Ad(a_ij(p)),
//! ```
//!
//! where `Φ_ij` is the chart change of the underlying bundle and `dΦ_ij` its
//! tangent pushforward. The right logarithmic derivative of `a_ij` equals
//! `χ_ij` — computed independently by finite differences and cross-checked —
//! and the package satisfies, with `Δ(α)(X) = X(α) ∘ α^{-1}`:
//!
//! ```text
//! dχ − [χ, χ] = 0                (Maurer–Cartan),
//! Δ(α_ij) = ad ∘ χ_ij            (Darboux),
//! χ_ik = χ_ij + α_ij(χ_jk),      α_ik = α_ij ∘ α_jk      (cocycle).
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::algebroid::{flow, translate_point, GAction};
use crate::bundle::{BundlePoint, ChartedBundle, TangentVector};
use crate::connection::{frame_field, Connection, ConnectionForm, CROSS_CHECK_TOL};
use crate::expr::{eval, Env, Expr};
use crate::groupoid::Arrow;
use crate::holonomy::integrate_linear_ode;
use crate::liegroup::{identity, random_algebra, random_element, AlgebraElement, Group, GroupElement};
use crate::linalg::{fro_norm, principal_log_normal, RMat, RVec};
use crate::{Error, Result};

/// Finite-difference step for derivatives of transition data.
pub const TRANSITION_FD_STEP: f64 = 1e-4;
/// Largest curvature admitted when a family claims its local forms are flat.
pub const FLATNESS_GUARD_TOL: f64 = 1e-6;
/// Largest equivariance violation admitted for the local flat forms.
pub const ISOMETABLIC_GUARD_TOL: f64 = 1e-6;
/// Tolerance for the automorphism property of explicit `α` data.
pub const AUTOMORPHISM_TOL: f64 = 1e-8;
/// Boundary clearance used when sampling points for finite-difference checks.
pub const INTERIOR_MARGIN: f64 = 1e-2;

// ---------------------------------------------------------------------------
// Flat local families (the pipeline)
// ---------------------------------------------------------------------------

/// One flat isometablic local connection form per chart, plus the basepoints
/// and reference labels the developments are anchored to.
pub struct FlatFamily {
    bundle: Arc<ChartedBundle>,
    h_group: Group,
    action: GAction,
    forms: Vec<ConnectionForm>,
    basepoints: Vec<Vec<f64>>,
    labels: Vec<GroupElement>,
    steps: usize,
}

impl std::fmt::Debug for FlatFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatFamily")
            .field("bundle", &self.bundle.name())
            .field("charts", &self.forms.len())
            .field("steps", &self.steps)
            .finish()
    }
}

impl FlatFamily {
    /// Build a family and verify, on random samples, that every local form
    /// is flat and isometablic; violations are `NotFlat` / `NotIsometablic`
    /// errors.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bundle: Arc<ChartedBundle>,
        h_group: Group,
        action: GAction,
        forms: Vec<ConnectionForm>,
        basepoints: Vec<Vec<f64>>,
        labels: Vec<GroupElement>,
        steps: usize,
        rng: &mut impl Rng,
        guard_samples: usize,
    ) -> Result<FlatFamily> {
        let charts = bundle.chart_count();
        if forms.len() != charts || basepoints.len() != charts || labels.len() != charts {
            return Err(Error::Dimension(format!(
                "flat family needs one form, basepoint, and label per chart \
                 ({} charts, {} forms, {} basepoints, {} labels)",
                charts,
                forms.len(),
                basepoints.len(),
                labels.len()
            )));
        }
        for (k, u) in basepoints.iter().enumerate() {
            bundle.check_point(k, u)?;
        }
        let family = FlatFamily {
            bundle,
            h_group,
            action,
            forms,
            basepoints,
            labels,
            steps,
        };
        family.guard(rng, guard_samples)?;
        Ok(family)
    }

    fn guard(&self, rng: &mut impl Rng, samples: usize) -> Result<()> {
        let base_dim = self.bundle.base_dim();
        let fiber_dim = self.bundle.fiber().dim();
        let total = base_dim + fiber_dim;
        for k in 0..self.bundle.chart_count() {
            let conn = self.as_connection(k);
            for _ in 0..samples {
                let p = self.bundle.random_point(k, rng)?;
                for a in 0..total {
                    for b in (a + 1)..total {
                        let fa = frame_field(base_dim, fiber_dim, a);
                        let fb = frame_field(base_dim, fiber_dim, b);
                        let curv = conn.curvature_via_form(&p, &fa, &fb)?;
                        let residual = curv.norm();
                        if residual > FLATNESS_GUARD_TOL {
                            return Err(Error::NotFlat {
                                residual,
                                tol: FLATNESS_GUARD_TOL,
                            });
                        }
                    }
                }
                let v = crate::connection::random_tangent(&self.bundle, rng);
                let g = random_element(self.bundle.fiber(), rng, 1.0);
                let residual = conn.isometablic_residual(&p, &v, &g)?;
                if residual > ISOMETABLIC_GUARD_TOL {
                    return Err(Error::NotIsometablic {
                        residual,
                        tol: ISOMETABLIC_GUARD_TOL,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn bundle(&self) -> &Arc<ChartedBundle> {
        &self.bundle
    }

    pub fn h_group(&self) -> &Group {
        &self.h_group
    }

    pub fn action(&self) -> &GAction {
        &self.action
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn basepoint(&self, k: usize) -> &[f64] {
        &self.basepoints[k]
    }

    pub fn label(&self, k: usize) -> &GroupElement {
        &self.labels[k]
    }

    /// The `k`-th local form viewed as a connection object (valid for
    /// evaluation at chart-`k` points).
    pub fn as_connection(&self, k: usize) -> Connection {
        let forms = vec![self.forms[k].clone(); self.bundle.chart_count()];
        Connection::new(
            self.bundle.clone(),
            self.h_group.clone(),
            self.action.clone(),
            forms,
        )
        .expect("form count matches chart count")
    }

    /// Identity-fiber lift of the `k`-th basepoint.
    pub fn basepoint_lift(&self, k: usize) -> BundlePoint {
        BundlePoint {
            chart: k,
            x: self.basepoints[k].clone(),
            h: identity(self.bundle.fiber()),
        }
    }

    /// Transport along consecutive straight base legs at the identity fiber,
    /// then a vertical exponential leg up to `h_end`, integrating
    /// `T' = -θ_k(ċ) T`.
    fn transport_via(
        &self,
        k: usize,
        waypoints: &[Vec<f64>],
        h_end: &GroupElement,
    ) -> Result<GroupElement> {
        let fiber = self.bundle.fiber();
        let fiber_dim = fiber.dim();
        let mut total = identity(&self.h_group);
        for leg in waypoints.windows(2) {
            let from = leg[0].clone();
            let dir: Vec<f64> = leg[1].iter().zip(&from).map(|(b, a)| b - a).collect();
            let piece = integrate_linear_ode(
                &self.h_group,
                |t| {
                    let x: Vec<f64> = from.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                    self.bundle
                        .check_point(k, &x)
                        .map_err(|_| Error::PathLeavesChart { chart: k, t })?;
                    let p = BundlePoint {
                        chart: k,
                        x,
                        h: identity(fiber),
                    };
                    let v = TangentVector::new(
                        RVec::from_iterator(dir.len(), dir.iter().copied()),
                        RVec::zeros(fiber_dim),
                    );
                    Ok((self.forms[k])(&p, &v)?.matrix().map(|z| -z))
                },
                self.steps,
            )?;
            total = piece.mul(&total)?;
        }
        if h_end.dist_to_identity() > 1e-14 {
            let log = principal_log_normal(h_end.matrix())?;
            let (coords, residual) = fiber.project_to_algebra(&log);
            if residual > 1e-8 {
                return Err(Error::Domain(format!(
                    "fiber element logarithm leaves the structure algebra \
                     (residual {residual:.3e})"
                )));
            }
            let w = AlgebraElement::new(fiber, coords)?;
            let x = waypoints
                .last()
                .expect("transport path has at least one waypoint")
                .clone();
            let piece = integrate_linear_ode(
                &self.h_group,
                |s| {
                    let p = BundlePoint {
                        chart: k,
                        x: x.clone(),
                        h: w.scale(s).exp(),
                    };
                    let v = TangentVector::new(RVec::zeros(x.len()), w.coords().clone());
                    Ok((self.forms[k])(&p, &v)?.matrix().map(|z| -z))
                },
                self.steps,
            )?;
            total = piece.mul(&total)?;
        }
        Ok(total)
    }

    /// The flat transport `T_k(p)` from the basepoint lift of chart `k` to
    /// the point `p` (given in chart-`k` coordinates).
    pub fn transport_to(&self, k: usize, p: &BundlePoint) -> Result<GroupElement> {
        expect_chart(p, k)?;
        self.transport_via(k, &[self.basepoints[k].clone(), p.x.clone()], &p.h)
    }

    /// The local development `c_k(p) = T_k(p) ℓ_k`.
    pub fn section_label(&self, k: usize, p: &BundlePoint) -> Result<GroupElement> {
        self.transport_to(k, p)?.mul(&self.labels[k])
    }

    /// The frame change `Ψ_k(p) = Ad(c_k(p))` in the extension-algebra basis.
    pub fn psi_matrix(&self, k: usize, p: &BundlePoint) -> Result<RMat> {
        Ok(self.section_label(k, p)?.adjoint_matrix())
    }

    /// The transition function `a_ij(p) = ℓ_i^{-1} T_i(p)^{-1} T_j(Φ_ij p) ℓ_j`.
    pub fn a(&self, i: usize, j: usize, p: &BundlePoint) -> Result<GroupElement> {
        expect_chart(p, i)?;
        let q = self.bundle.to_chart(p, j)?;
        let ti = self.transport_to(i, p)?;
        let tj = self.transport_to(j, &q)?;
        let mut out = self.labels[i].inverse();
        out = out.mul(&ti.inverse())?;
        out = out.mul(&tj)?;
        out.mul(&self.labels[j])
    }

    /// `χ_ij` through the form route: the frame-adjusted difference of the
    /// two local forms on the pushed-forward tangent vector.
    pub fn chi_form(
        &self,
        i: usize,
        j: usize,
        p: &BundlePoint,
        v: &TangentVector,
    ) -> Result<AlgebraElement> {
        expect_chart(p, i)?;
        let (q, vj) = self.bundle.push_tangent(p, v, j)?;
        let wi = (self.forms[i])(p, v)?;
        let wj = (self.forms[j])(&q, &vj)?;
        let diff = wi.sub(&wj)?;
        self.section_label(i, p)?.inverse().ad(&diff)
    }

    /// `χ_ij` through the independent route: the right logarithmic
    /// derivative of `a_ij` by central finite differences along the flow
    /// of `v`.
    pub fn chi_fd(
        &self,
        i: usize,
        j: usize,
        p: &BundlePoint,
        v: &TangentVector,
    ) -> Result<AlgebraElement> {
        let h = TRANSITION_FD_STEP;
        let ap = self.a(i, j, &flow(p, v, h)?)?;
        let am = self.a(i, j, &flow(p, v, -h)?)?;
        let a0 = self.a(i, j, p)?;
        let dm = (ap.matrix() - am.matrix()).map(|z| z * (1.0 / (2.0 * h)));
        let delta = &dm * a0.inverse().matrix();
        let (coords, residual) = self.h_group.project_to_algebra(&delta);
        if residual > 1e-5 {
            return Err(Error::Domain(format!(
                "transition derivative leaves the extension algebra \
                 (residual {residual:.3e})"
            )));
        }
        AlgebraElement::new(&self.h_group, coords)
    }

    /// Cross-checked `χ_ij`: both routes must agree within the cross-check
    /// tolerance; the smoother form route is returned.
    pub fn chi(
        &self,
        i: usize,
        j: usize,
        p: &BundlePoint,
        v: &TangentVector,
    ) -> Result<AlgebraElement> {
        let form = self.chi_form(i, j, p, v)?;
        let fd = self.chi_fd(i, j, p, v)?;
        let residual = form.sub(&fd)?.norm();
        if residual > CROSS_CHECK_TOL {
            return Err(Error::CrossCheck {
                context: "transition form route vs logarithmic-derivative route".into(),
                residual,
            });
        }
        Ok(form)
    }

    /// `α_ij(p) = Ad(a_ij(p))` in the extension-algebra basis.
    pub fn alpha(&self, i: usize, j: usize, p: &BundlePoint) -> Result<RMat> {
        Ok(self.a(i, j, p)?.adjoint_matrix())
    }
}

fn expect_chart(p: &BundlePoint, k: usize) -> Result<()> {
    if p.chart != k {
        return Err(Error::Dimension(format!(
            "point is expressed in chart {} but chart {} was required",
            p.chart, k
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Explicit transition data
// ---------------------------------------------------------------------------

/// Transition data given directly as coefficient expressions:
/// `chi[(i,j)][k][c]` is the coefficient of base coordinate `c` in the `k`-th
/// extension-basis component (variables: chart-`i` base coordinates), and
/// `alpha[(i,j)]` is a matrix of expressions in the same variables.
pub struct ExplicitTransition {
    bundle: Arc<ChartedBundle>,
    h_group: Group,
    action: GAction,
    chi: BTreeMap<(usize, usize), Vec<Vec<Expr>>>,
    alpha: BTreeMap<(usize, usize), Vec<Vec<Expr>>>,
}

impl std::fmt::Debug for ExplicitTransition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExplicitTransition")
            .field("bundle", &self.bundle.name())
            .field("pairs", &self.chi.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ExplicitTransition {
    /// Build explicit data, validating shapes and — on random samples — that
    /// every `α_ij` value is a Lie-algebra automorphism (`NotAMorphism`
    /// otherwise).
    pub fn new(
        bundle: Arc<ChartedBundle>,
        h_group: Group,
        action: GAction,
        chi: BTreeMap<(usize, usize), Vec<Vec<Expr>>>,
        alpha: BTreeMap<(usize, usize), Vec<Vec<Expr>>>,
        rng: &mut impl Rng,
        guard_samples: usize,
    ) -> Result<ExplicitTransition> {
        let dim = h_group.dim();
        if chi.keys().collect::<Vec<_>>() != alpha.keys().collect::<Vec<_>>() {
            return Err(Error::Dimension(
                "chi and alpha must be given for the same overlap pairs".into(),
            ));
        }
        for (&(i, j), rows) in &chi {
            let base_dim = bundle.chart(i)?.dim();
            bundle.overlap(i, j)?;
            if rows.len() != dim || rows.iter().any(|r| r.len() != base_dim) {
                return Err(Error::Dimension(format!(
                    "chi[{i},{j}] must be {dim} x {base_dim} coefficients"
                )));
            }
        }
        for (&(i, j), rows) in &alpha {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::Dimension(format!(
                    "alpha[{i},{j}] must be {dim} x {dim} entries"
                )));
            }
        }
        let data = ExplicitTransition {
            bundle,
            h_group,
            action,
            chi,
            alpha,
        };
        for &(i, j) in data.chi.keys().cloned().collect::<Vec<_>>().iter() {
            for _ in 0..guard_samples {
                let u = data.bundle.overlap(i, j)?.domain.sample(rng)?;
                let p = canonical_lift(&data.bundle, i, u);
                let a = data.alpha_at(i, j, &p)?;
                let residual = automorphism_residual(&data.h_group, &a);
                if residual > AUTOMORPHISM_TOL {
                    return Err(Error::NotAMorphism {
                        residual,
                        tol: AUTOMORPHISM_TOL,
                    });
                }
            }
        }
        Ok(data)
    }

    fn env(&self, i: usize, p: &BundlePoint) -> Result<Env> {
        Ok(self.bundle.chart(i)?.env(&p.x))
    }

    fn chi_at(
        &self,
        i: usize,
        j: usize,
        p: &BundlePoint,
        v: &TangentVector,
    ) -> Result<AlgebraElement> {
        expect_chart(p, i)?;
        let rows = self
            .chi
            .get(&(i, j))
            .ok_or(Error::NoSuchOverlap(i, j))?;
        let env = self.env(i, p)?;
        let mut coords = RVec::zeros(self.h_group.dim());
        for (k, row) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for (c, coeff) in row.iter().enumerate() {
                acc += eval(coeff, &env)? * v.base[c];
            }
            coords[k] = acc;
        }
        AlgebraElement::new(&self.h_group, coords)
    }

    fn alpha_at(&self, i: usize, j: usize, p: &BundlePoint) -> Result<RMat> {
        expect_chart(p, i)?;
        let rows = self
            .alpha
            .get(&(i, j))
            .ok_or(Error::NoSuchOverlap(i, j))?;
        let env = self.env(i, p)?;
        let dim = self.h_group.dim();
        let mut out = RMat::zeros(dim, dim);
        for (r, row) in rows.iter().enumerate() {
            for (c, entry) in row.iter().enumerate() {
                out[(r, c)] = eval(entry, &env)?;
            }
        }
        Ok(out)
    }
}

/// How well a linear map preserves the bracket on basis pairs.
pub fn automorphism_residual(group: &Group, a: &RMat) -> f64 {
    let dim = group.dim();
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let lhs = a * &group.structure_constants()[i][j];
            let va = AlgebraElement::new(group, a.column(i).into_owned())
                .expect("column has algebra dimension");
            let vb = AlgebraElement::new(group, a.column(j).into_owned())
                .expect("column has algebra dimension");
            let rhs = va.bracket(&vb).expect("same group");
            worst = worst.max((lhs - rhs.coords()).norm());
        }
    }
    worst
}

fn canonical_lift(bundle: &Arc<ChartedBundle>, chart: usize, x: Vec<f64>) -> BundlePoint {
    BundlePoint {
        chart,
        x,
        h: identity(bundle.fiber()),
    }
}

// ---------------------------------------------------------------------------
// Unified transition data
// ---------------------------------------------------------------------------

/// Which equivariance the transition data is checked against: the local
/// action induced by the pipeline (trivial for identity reference labels) or
/// the ambient structure action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivarianceMode {
    Trivial,
    Ambient,
}

impl EquivarianceMode {
    pub fn label(self) -> &'static str {
        match self {
            EquivarianceMode::Trivial => "trivial",
            EquivarianceMode::Ambient => "ambient",
        }
    }
}

#[derive(Debug)]
pub enum TransitionKind {
    Pipeline(FlatFamily),
    Explicit(ExplicitTransition),
}

/// Transition data plus the equivariance mode its checks run under.
#[derive(Debug)]
pub struct TransitionData {
    pub kind: TransitionKind,
    pub mode: EquivarianceMode,
}

impl TransitionData {
    pub fn pipeline(family: FlatFamily, mode: EquivarianceMode) -> TransitionData {
        TransitionData {
            kind: TransitionKind::Pipeline(family),
            mode,
        }
    }

    /// Build transition data from per-chart flat isometablic local forms
    /// (rejecting non-flat or non-equivariant inputs), anchored at the given
    /// basepoints and reference labels.
    #[allow(clippy::too_many_arguments)]
    pub fn build_from_flats(
        bundle: Arc<ChartedBundle>,
        h_group: Group,
        action: GAction,
        forms: Vec<ConnectionForm>,
        basepoints: Vec<Vec<f64>>,
        labels: Vec<GroupElement>,
        steps: usize,
        mode: EquivarianceMode,
        rng: &mut impl Rng,
        guard_samples: usize,
    ) -> Result<TransitionData> {
        let family = FlatFamily::new(
            bundle, h_group, action, forms, basepoints, labels, steps, rng, guard_samples,
        )?;
        Ok(TransitionData::pipeline(family, mode))
    }

    pub fn explicit(data: ExplicitTransition, mode: EquivarianceMode) -> TransitionData {
        TransitionData {
            kind: TransitionKind::Explicit(data),
            mode,
        }
    }

    pub fn bundle(&self) -> &Arc<ChartedBundle> {
        match &self.kind {
            TransitionKind::Pipeline(f) => &f.bundle,
            TransitionKind::Explicit(e) => &e.bundle,
        }
    }

    pub fn h_group(&self) -> &Group {
        match &self.kind {
            TransitionKind::Pipeline(f) => &f.h_group,
            TransitionKind::Explicit(e) => &e.h_group,
        }
    }

    pub fn action(&self) -> &GAction {
        match &self.kind {
            TransitionKind::Pipeline(f) => &f.action,
            TransitionKind::Explicit(e) => &e.action,
        }
    }

    pub fn family(&self) -> Option<&FlatFamily> {
        match &self.kind {
            TransitionKind::Pipeline(f) => Some(f),
            TransitionKind::Explicit(_) => None,
        }
    }

    /// Ordered overlap pairs carrying transition data.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match &self.kind {
            TransitionKind::Pipeline(f) => f.bundle.overlaps().map(|o| (o.i, o.j)).collect(),
            TransitionKind::Explicit(e) => e.chi.keys().cloned().collect(),
        }
    }

    /// `χ_ij(p)(v)` by the smooth route (pipeline form route / explicit
    /// evaluation).
    pub fn chi(
        &self,
        i: usize,
        j: usize,
        p: &BundlePoint,
        v: &TangentVector,
    ) -> Result<AlgebraElement> {
        match &self.kind {
            TransitionKind::Pipeline(f) => f.chi_form(i, j, p, v),
            TransitionKind::Explicit(e) => e.chi_at(i, j, p, v),
        }
    }

    /// `α_ij(p)` as a matrix in the extension-algebra basis.
    pub fn alpha(&self, i: usize, j: usize, p: &BundlePoint) -> Result<RMat> {
        match &self.kind {
            TransitionKind::Pipeline(f) => f.alpha(i, j, p),
            TransitionKind::Explicit(e) => e.alpha_at(i, j, p),
        }
    }

    /// For pipeline data, the largest disagreement between the two `χ`
    /// routes over random overlap samples (raises `CrossCheck` beyond the
    /// tolerance). Explicit data has a single route and reports zero.
    pub fn cross_check_residual(
        &self,
        i: usize,
        j: usize,
        rng: &mut impl Rng,
        samples: usize,
    ) -> Result<f64> {
        let TransitionKind::Pipeline(f) = &self.kind else {
            return Ok(0.0);
        };
        let mut worst = 0.0f64;
        let base_dim = self.bundle().chart(i)?.dim();
        for _ in 0..samples {
            let u = self
                .bundle()
                .overlap(i, j)?
                .domain
                .sample_interior(INTERIOR_MARGIN, rng)?;
            let p = canonical_lift(self.bundle(), i, u);
            for c in 0..base_dim {
                let mut dir = RVec::zeros(base_dim);
                dir[c] = 1.0;
                let v = TangentVector::new(dir, RVec::zeros(self.bundle().fiber().dim()));
                let form = f.chi_form(i, j, &p, &v)?;
                let fd = f.chi_fd(i, j, &p, &v)?;
                let residual = form.sub(&fd)?.norm();
                if residual > CROSS_CHECK_TOL {
                    return Err(Error::CrossCheck {
                        context: "transition form route vs logarithmic-derivative route"
                            .into(),
                        residual,
                    });
                }
                worst = worst.max(residual);
            }
        }
        Ok(worst)
    }
}

// ---------------------------------------------------------------------------
// Structural checks
// ---------------------------------------------------------------------------

fn coordinate_vector(base_dim: usize, fiber_dim: usize, c: usize) -> TangentVector {
    let mut dir = RVec::zeros(base_dim);
    dir[c] = 1.0;
    TangentVector::new(dir, RVec::zeros(fiber_dim))
}

/// `‖dχ − [χ, χ]‖` on coordinate pairs over random overlap samples:
/// `∂_a χ_b − ∂_b χ_a − [χ_a, χ_b]` with central differences.
pub fn maurer_cartan_residual(
    data: &TransitionData,
    i: usize,
    j: usize,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let bundle = data.bundle();
    let base_dim = bundle.chart(i)?.dim();
    let fiber_dim = bundle.fiber().dim();
    let h = TRANSITION_FD_STEP;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let u = bundle
            .overlap(i, j)?
            .domain
            .sample_interior(INTERIOR_MARGIN, rng)?;
        let p = canonical_lift(bundle, i, u.clone());
        for a in 0..base_dim {
            for b in (a + 1)..base_dim {
                let va = coordinate_vector(base_dim, fiber_dim, a);
                let vb = coordinate_vector(base_dim, fiber_dim, b);
                let shift = |c: usize, s: f64| {
                    let mut x = u.clone();
                    x[c] += s;
                    canonical_lift(bundle, i, x)
                };
                let da = data
                    .chi(i, j, &shift(a, h), &vb)?
                    .sub(&data.chi(i, j, &shift(a, -h), &vb)?)?
                    .scale(1.0 / (2.0 * h));
                let db = data
                    .chi(i, j, &shift(b, h), &va)?
                    .sub(&data.chi(i, j, &shift(b, -h), &va)?)?
                    .scale(1.0 / (2.0 * h));
                let bracket = data.chi(i, j, &p, &va)?.bracket(&data.chi(i, j, &p, &vb)?)?;
                let residual = da.sub(&db)?.sub(&bracket)?.norm();
                worst = worst.max(residual);
            }
        }
    }
    Ok(worst)
}

/// `‖Δ(α)(∂_a) − ad(χ(∂_a))‖` over random overlap samples, with
/// `Δ(α) = (∂_a α) α^{-1}` by central differences.
pub fn darboux_residual(
    data: &TransitionData,
    i: usize,
    j: usize,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let bundle = data.bundle();
    let base_dim = bundle.chart(i)?.dim();
    let fiber_dim = bundle.fiber().dim();
    let h = TRANSITION_FD_STEP;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let u = bundle
            .overlap(i, j)?
            .domain
            .sample_interior(INTERIOR_MARGIN, rng)?;
        let p = canonical_lift(bundle, i, u.clone());
        let alpha = data.alpha(i, j, &p)?;
        let inverse = alpha.clone().try_inverse().ok_or_else(|| {
            Error::Domain("transition automorphism is numerically singular".into())
        })?;
        for a in 0..base_dim {
            let mut xp = u.clone();
            xp[a] += h;
            let mut xm = u.clone();
            xm[a] -= h;
            let derivative = (data.alpha(i, j, &canonical_lift(bundle, i, xp))?
                - data.alpha(i, j, &canonical_lift(bundle, i, xm))?)
                / (2.0 * h);
            let lhs = &derivative * &inverse;
            let chi = data.chi(i, j, &p, &coordinate_vector(base_dim, fiber_dim, a))?;
            let residual = fro_norm_real(&(lhs - chi.ad_matrix()));
            worst = worst.max(residual);
        }
    }
    Ok(worst)
}

fn fro_norm_real(m: &RMat) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cocycle residuals over a chart triple `(i, j, k)`:
/// `‖χ_ik − χ_ij − α_ij(χ_jk ∘ dΦ_ij)‖` and `‖α_ik − α_ij α_jk‖`.
pub fn cocycle_residual(
    data: &TransitionData,
    i: usize,
    j: usize,
    k: usize,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let bundle = data.bundle();
    let base_dim = bundle.chart(i)?.dim();
    let fiber_dim = bundle.fiber().dim();
    let mut worst = 0.0f64;
    let mut found = 0usize;
    for _ in 0..(samples * 40) {
        if found == samples {
            break;
        }
        let u = bundle
            .overlap(i, j)?
            .domain
            .sample_interior(INTERIOR_MARGIN, rng)?;
        if !bundle
            .overlap(i, k)?
            .domain
            .contains_with_margin(&u, INTERIOR_MARGIN)
        {
            continue;
        }
        let Ok(uj) = bundle.base_map(i, j, &u) else {
            continue;
        };
        if !bundle
            .overlap(j, k)?
            .domain
            .contains_with_margin(&uj, INTERIOR_MARGIN)
        {
            continue;
        }
        found += 1;
        let p = canonical_lift(bundle, i, u);
        let alpha_ij = data.alpha(i, j, &p)?;
        let alpha_ik = data.alpha(i, k, &p)?;
        let q = bundle.to_chart(&p, j)?;
        let alpha_jk = data.alpha(j, k, &q)?;
        worst = worst.max(fro_norm_real(&(&alpha_ik - &alpha_ij * &alpha_jk)));
        for c in 0..base_dim {
            let v = coordinate_vector(base_dim, fiber_dim, c);
            let lhs = data.chi(i, k, &p, &v)?;
            let first = data.chi(i, j, &p, &v)?;
            let (qj, vj) = bundle.push_tangent(&p, &v, j)?;
            let second = data.chi(j, k, &qj, &vj)?;
            let turned = AlgebraElement::new(data.h_group(), &alpha_ij * second.coords())?;
            let residual = lhs.sub(&first)?.sub(&turned)?.norm();
            worst = worst.max(residual);
        }
    }
    if found < samples {
        return Err(Error::Domain(format!(
            "could not sample the triple overlap ({i},{j},{k}): {found} of {samples} points"
        )));
    }
    Ok(worst)
}

/// Equivariance of `χ` under the structure-group action, in the declared
/// mode: `χ(p·g)(TR_g V)` against `χ(p)(V)` (trivial local action) or
/// against `ρ_*(g^{-1}) χ(p)(V)` (ambient action).
pub fn equivariance_residual(
    data: &TransitionData,
    i: usize,
    j: usize,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let bundle = data.bundle();
    let base_dim = bundle.chart(i)?.dim();
    let fiber_dim = bundle.fiber().dim();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let u = bundle
            .overlap(i, j)?
            .domain
            .sample_interior(INTERIOR_MARGIN, rng)?;
        let p = BundlePoint {
            chart: i,
            x: u,
            h: random_element(bundle.fiber(), rng, 1.0),
        };
        let v = TangentVector::new(
            RVec::from_fn(base_dim, |_, _| rng.random_range(-0.8..0.8)),
            if fiber_dim > 0 {
                random_algebra(bundle.fiber(), rng, 0.8).coords().clone()
            } else {
                RVec::zeros(0)
            },
        );
        let g = random_element(bundle.fiber(), rng, 1.0);
        let pg = translate_point(&p, &g)?;
        let lhs = data.chi(i, j, &pg, &v.right_translated(&g)?)?;
        let base = data.chi(i, j, &p, &v)?;
        let rhs = match data.mode {
            EquivarianceMode::Trivial => base,
            EquivarianceMode::Ambient => data.action().apply(&g.inverse(), &base)?,
        };
        worst = worst.max(lhs.sub(&rhs)?.norm());

        // α side, with the automorphism-group action
        // (α · g)(V) = (α(V · g^{-1})) · g, i.e. S(g)^{-1} α S(g) in matrices.
        let alpha_lhs = data.alpha(i, j, &pg)?;
        let alpha_base = data.alpha(i, j, &p)?;
        let alpha_rhs = match data.mode {
            EquivarianceMode::Trivial => alpha_base,
            EquivarianceMode::Ambient => {
                let s = data.action().star_matrix(&g)?;
                let s_inv = data.action().star_matrix(&g.inverse())?;
                &s_inv * &alpha_base * &s
            }
        };
        worst = worst.max(fro_norm_real(&(alpha_lhs - alpha_rhs)));
    }
    Ok(worst)
}

/// Degenerate cocycle identities on a single overlap:
/// `α_ij(p) α_ji(Φ_ij p) = id` always, and for pipeline data also
/// `α_ii(p) = id`.
pub fn alpha_inverse_residual(
    data: &TransitionData,
    i: usize,
    j: usize,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let bundle = data.bundle();
    let dim = data.h_group().dim();
    let eye = RMat::identity(dim, dim);
    let has_back = data.pairs().contains(&(j, i));
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let u = bundle
            .overlap(i, j)?
            .domain
            .sample_interior(INTERIOR_MARGIN, rng)?;
        let p = canonical_lift(bundle, i, u);
        if has_back {
            let forward = data.alpha(i, j, &p)?;
            let q = bundle.to_chart(&p, j)?;
            let backward = data.alpha(j, i, &q)?;
            worst = worst.max(fro_norm_real(&(&forward * &backward - &eye)));
        }
        if let TransitionKind::Pipeline(f) = &data.kind {
            worst = worst.max(fro_norm_real(&(f.alpha(i, i, &p)? - &eye)));
        }
    }
    Ok(worst)
}

/// Checks of the local development construction itself, per chart:
/// the development is the reference label at the basepoint, flat transports
/// are path independent, the development is horizontal
/// (`X(c_k) = −θ_k(X) c_k`), and conjugation by the developments is a
/// groupoid morphism on sampled arrows.
pub fn local_sections_residual(
    family: &FlatFamily,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let bundle = family.bundle();
    let h_group = family.h_group();
    let mut worst = 0.0f64;
    for k in 0..bundle.chart_count() {
        // Basepoint normalization.
        let base_lift = family.basepoint_lift(k);
        let at_base = family.section_label(k, &base_lift)?;
        worst = worst.max(fro_norm(
            &(at_base.matrix() - family.label(k).matrix()),
        ));

        for _ in 0..samples {
            let x = bundle
                .chart(k)?
                .domain
                .sample_interior(INTERIOR_MARGIN, rng)?;
            let p = BundlePoint {
                chart: k,
                x,
                h: random_element(bundle.fiber(), rng, 1.0),
            };

            // Path independence: transport via a jittered waypoint.
            let direct = family.transport_to(k, &p)?;
            let from = family.basepoint(k);
            let mid: Vec<f64> = from
                .iter()
                .zip(&p.x)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let span: f64 = from
                .iter()
                .zip(&p.x)
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt();
            let mut waypoint = mid.clone();
            for _ in 0..20 {
                let jittered: Vec<f64> = mid
                    .iter()
                    .map(|m| m + 0.25 * span * rng.random_range(-1.0..1.0))
                    .collect();
                if bundle.check_point(k, &jittered).is_ok() {
                    waypoint = jittered;
                    break;
                }
            }
            let detour =
                family.transport_via(k, &[from.to_vec(), waypoint, p.x.clone()], &p.h)?;
            worst = worst.max(fro_norm(&(detour.matrix() - direct.matrix())));

            // Horizontality along a random base direction.
            let dir: Vec<f64> = (0..bundle.chart(k)?.dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let h = TRANSITION_FD_STEP;
            let displace = |s: f64| -> BundlePoint {
                BundlePoint {
                    chart: k,
                    x: p.x.iter().zip(&dir).map(|(a, d)| a + s * d).collect(),
                    h: p.h.clone(),
                }
            };
            let tp = family.transport_to(k, &displace(h))?;
            let tm = family.transport_to(k, &displace(-h))?;
            let derivative = (tp.matrix() - tm.matrix()).map(|z| z * (1.0 / (2.0 * h)));
            let v = TangentVector::new(
                RVec::from_iterator(dir.len(), dir.iter().copied()),
                RVec::zeros(bundle.fiber().dim()),
            );
            let omega = (family.forms[k])(&p, &v)?;
            let predicted = omega.matrix() * direct.matrix();
            worst = worst.max(fro_norm(&(derivative + predicted)));

            // Conjugation by developments is a groupoid morphism.
            let q = bundle.random_point(k, rng)?;
            let r = bundle.random_point(k, rng)?;
            let h1 = random_element(h_group, rng, 1.0);
            let h2 = random_element(h_group, rng, 1.0);
            let sigma = |point: &BundlePoint| -> Result<Arrow> {
                Ok(Arrow::new(
                    point.clone(),
                    family.section_label(k, point)?,
                    family.basepoint_lift(k),
                ))
            };
            let embed = |target: &BundlePoint,
                         label: &GroupElement,
                         source: &BundlePoint|
             -> Result<Arrow> {
                let anchor = Arrow::new(
                    family.basepoint_lift(k),
                    label.clone(),
                    family.basepoint_lift(k),
                );
                sigma(target)?
                    .compose(&anchor)?
                    .compose(&sigma(source)?.inverse())
            };
            let lhs = embed(&r, &h2, &q)?.compose(&embed(&q, &h1, &p)?)?;
            let rhs = embed(&r, &h2.mul(&h1)?, &p)?;
            worst = worst.max(fro_norm(&(lhs.label.matrix() - rhs.label.matrix())));
        }
    }
    Ok(worst)
}
