//! Connections on the trivial transitive algebroid and their curvature.
//!
//! A [`Connection`] stores, per chart, an `h`-valued one-form ω on the total
//! space. The associated splitting is `γ(X) = X ⊕ ω(X)`; its curvature is
//! evaluated through two independent routes and cross-validated:
//!
//! * bracket route: `Ω(X,Y) = γ([X,Y]) - [γX, γY]` through the generic
//!   section machinery,
//! * form route: `Ω(X,Y) = -( dω(X,Y) + [ω(X), ω(Y)] )` with
//!   `dω(X,Y) = X(ω(Y)) - Y(ω(X)) - ω([X,Y])`.
//!
//! A connection is *isometablic* for the structure-group action when
//! `ω(TR_g v)|_{p g} = rho_*(g^{-1}) ω(v)|_p`; that property propagates to the
//! curvature and to the adjoint derivative `∇_X V = X(V) + [ω(X), V]`.
//!
//! A [`PrincipalConnection`] is the classical object on the underlying
//! G-bundle (a Lie(G)-valued form reproducing fiber generators). When ω kills
//! vertical vectors and is isometablic, composing it with the horizontal
//! projector of any principal connection reproduces ω itself — the quotient
//! construction is independent of the choice; both guards are enforced.

use std::sync::Arc;

use rand::Rng;

use crate::algebroid::{
    act_on_field, algebroid_bracket, deriv_hvalued, translate_point, vf_bracket,
    AlgebroidSection, FieldFn, GAction, HValued, FIELD_FD_STEP,
};
use crate::bundle::{BundlePoint, ChartedBundle, TangentVector};
use crate::expr::{eval, Expr};
use crate::liegroup::{random_algebra, random_element, AlgebraElement, Group, GroupElement};
use crate::linalg::RVec;
use crate::{Error, Result};

/// Disagreement threshold between the two curvature routes.
pub const CROSS_CHECK_TOL: f64 = 1e-5;
/// Tolerance for the algebraic guards (no finite differences involved).
pub const GUARD_TOL: f64 = 1e-8;

/// Pointwise `h`-valued one-form on the total space.
pub type ConnectionForm =
    Arc<dyn Fn(&BundlePoint, &TangentVector) -> Result<AlgebraElement> + Send + Sync>;

/// Per-chart connection data for the trivial algebroid.
#[derive(Clone)]
pub struct Connection {
    bundle: Arc<ChartedBundle>,
    h_group: Group,
    action: GAction,
    forms: Vec<ConnectionForm>,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("bundle", &self.bundle.name())
            .field("h_group", &self.h_group.name())
            .field("action", &self.action.name())
            .field("charts", &self.forms.len())
            .finish()
    }
}

impl Connection {
    pub fn new(
        bundle: Arc<ChartedBundle>,
        h_group: Group,
        action: GAction,
        forms: Vec<ConnectionForm>,
    ) -> Result<Connection> {
        if forms.len() != bundle.chart_count() {
            return Err(Error::Dimension(format!(
                "connection needs one form per chart ({} charts, {} forms)",
                bundle.chart_count(),
                forms.len()
            )));
        }
        Ok(Connection {
            bundle,
            h_group,
            action,
            forms,
        })
    }

    /// Connection from coefficient expressions: `coeffs[chart][k][c]` is the
    /// coefficient of tangent coordinate `c` (base coordinates first, then
    /// fiber-frame coordinates) in the `k`-th `h`-basis component. Variables:
    /// chart coordinates plus fiber-entry names `g_<r>_<c>_re/im`.
    pub fn from_exprs(
        bundle: Arc<ChartedBundle>,
        h_group: Group,
        action: GAction,
        coeffs: Vec<Vec<Vec<Expr>>>,
    ) -> Result<Connection> {
        let n = bundle.base_dim();
        let dg = bundle.fiber().dim();
        let dh = h_group.dim();
        let mut forms: Vec<ConnectionForm> = Vec::new();
        for (chart_index, chart_coeffs) in coeffs.iter().enumerate() {
            if chart_coeffs.len() != dh
                || chart_coeffs.iter().any(|row| row.len() != n + dg)
            {
                return Err(Error::Dimension(format!(
                    "chart {chart_index}: coefficient block must be {dh} x {}",
                    n + dg
                )));
            }
            let chart = bundle.chart(chart_index)?.clone();
            let rows = chart_coeffs.clone();
            let h_group = h_group.clone();
            forms.push(Arc::new(move |p: &BundlePoint, v: &TangentVector| {
                let env = crate::algebroid::point_env(&chart, p);
                let mut out = RVec::zeros(h_group.dim());
                for (k, row) in rows.iter().enumerate() {
                    let mut acc = 0.0;
                    for (c, coeff) in row.iter().enumerate() {
                        let component = if c < v.base.len() {
                            v.base[c]
                        } else {
                            v.fiber[c - v.base.len()]
                        };
                        if component != 0.0 {
                            acc += eval(coeff, &env)? * component;
                        }
                    }
                    out[k] = acc;
                }
                AlgebraElement::new(&h_group, out)
            }));
        }
        Connection::new(bundle, h_group, action, forms)
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

    /// Evaluate ω at a point on a tangent vector.
    pub fn eval(&self, p: &BundlePoint, v: &TangentVector) -> Result<AlgebraElement> {
        let form = self
            .forms
            .get(p.chart)
            .ok_or(Error::UnknownChart(p.chart, self.forms.len()))?;
        form(p, v)
    }

    /// `p ↦ ω_p(X(p))` as an `h`-valued function.
    pub fn omega_of_field(&self, x: &FieldFn) -> HValued {
        let conn = self.clone();
        let x = x.clone();
        Arc::new(move |p: &BundlePoint| conn.eval(p, &x(p)?))
    }

    /// The splitting `γ(X) = X ⊕ ω(X)` as an algebroid section.
    pub fn gamma(&self, x: &FieldFn) -> AlgebroidSection {
        AlgebroidSection::new(x.clone(), self.omega_of_field(x))
    }

    /// Curvature via the section bracket: `γ([X,Y]) - [γX, γY]`.
    pub fn curvature_via_bracket(
        &self,
        p: &BundlePoint,
        x: &FieldFn,
        y: &FieldFn,
    ) -> Result<AlgebraElement> {
        let g_group = self.bundle.fiber();
        let commutator = vf_bracket(x, y, g_group, FIELD_FD_STEP);
        let gamma_of_commutator = self.eval(p, &commutator(p)?)?;
        let bracket = algebroid_bracket(&self.gamma(x), &self.gamma(y), g_group, FIELD_FD_STEP);
        gamma_of_commutator.sub(&(bracket.v)(p)?)
    }

    /// Curvature via the form calculus: `-( dω(X,Y) + [ω(X), ω(Y)] )`.
    pub fn curvature_via_form(
        &self,
        p: &BundlePoint,
        x: &FieldFn,
        y: &FieldFn,
    ) -> Result<AlgebraElement> {
        let g_group = self.bundle.fiber();
        let omega_x = self.omega_of_field(x);
        let omega_y = self.omega_of_field(y);
        let xp = x(p)?;
        let yp = y(p)?;
        let x_of_wy = deriv_hvalued(&omega_y, p, &xp, FIELD_FD_STEP)?;
        let y_of_wx = deriv_hvalued(&omega_x, p, &yp, FIELD_FD_STEP)?;
        let commutator = vf_bracket(x, y, g_group, FIELD_FD_STEP);
        let w_of_comm = self.eval(p, &commutator(p)?)?;
        let d_omega = x_of_wy.sub(&y_of_wx)?.sub(&w_of_comm)?;
        let pointwise = self.eval(p, &xp)?.bracket(&self.eval(p, &yp)?)?;
        Ok(d_omega.add(&pointwise)?.scale(-1.0))
    }

    /// Cross-validated curvature; the two routes must agree to
    /// [`CROSS_CHECK_TOL`].
    pub fn curvature(&self, p: &BundlePoint, x: &FieldFn, y: &FieldFn) -> Result<AlgebraElement> {
        let via_bracket = self.curvature_via_bracket(p, x, y)?;
        let via_form = self.curvature_via_form(p, x, y)?;
        let disagreement = via_bracket.sub(&via_form)?.norm();
        if disagreement > CROSS_CHECK_TOL {
            return Err(Error::CrossCheck {
                context: "curvature routes".into(),
                residual: disagreement,
            });
        }
        Ok(via_form)
    }

    /// `‖ω(TR_g v)|_{pg} - rho_*(g^{-1}) ω(v)|_p‖` at one sample.
    pub fn isometablic_residual(
        &self,
        p: &BundlePoint,
        v: &TangentVector,
        g: &GroupElement,
    ) -> Result<f64> {
        let moved_point = translate_point(p, g)?;
        let moved_vector = v.right_translated(g)?;
        let lhs = self.eval(&moved_point, &moved_vector)?;
        let rhs = self.action.apply(&g.inverse(), &self.eval(p, v)?)?;
        Ok(lhs.sub(&rhs)?.norm())
    }

    /// Max isometablic residual over random samples in every chart.
    pub fn isometablic_residual_max(
        &self,
        rng: &mut impl Rng,
        samples: usize,
    ) -> Result<f64> {
        let g_group = self.bundle.fiber();
        let mut worst = 0.0f64;
        for chart in 0..self.bundle.chart_count() {
            for _ in 0..samples {
                let p = self.bundle.random_point(chart, rng)?;
                let v = random_tangent(&self.bundle, rng);
                let g = random_element(g_group, rng, 1.0);
                worst = worst.max(self.isometablic_residual(&p, &v, &g)?);
            }
        }
        Ok(worst)
    }

    /// Max `‖ω(0 ⊕ ξ)‖` over random samples (vertical-vanishing guard).
    pub fn vertical_residual_max(&self, rng: &mut impl Rng, samples: usize) -> Result<f64> {
        let mut worst = 0.0f64;
        for chart in 0..self.bundle.chart_count() {
            for _ in 0..samples {
                let p = self.bundle.random_point(chart, rng)?;
                let xi = random_algebra(self.bundle.fiber(), rng, 1.0);
                let v = TangentVector::fiber_only(self.bundle.base_dim(), xi.coords().clone());
                worst = worst.max(self.eval(&p, &v)?.norm());
            }
        }
        Ok(worst)
    }

    /// Max curvature norm over random points and coordinate-frame pairs
    /// (flatness measure).
    pub fn flatness_residual_max(&self, rng: &mut impl Rng, samples: usize) -> Result<f64> {
        let n = self.bundle.base_dim();
        let dg = self.bundle.fiber().dim();
        let total = n + dg;
        let mut worst = 0.0f64;
        for chart in 0..self.bundle.chart_count() {
            for _ in 0..samples {
                let p = self.bundle.random_point(chart, rng)?;
                for a in 0..total {
                    for b in (a + 1)..total {
                        let x = frame_field(n, dg, a);
                        let y = frame_field(n, dg, b);
                        worst = worst.max(self.curvature(&p, &x, &y)?.norm());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Adjoint derivative `∇_X V = X(V) + [ω(X), V]`.
    pub fn adjoint_derivative(&self, x: &FieldFn, v: &HValued) -> HValued {
        let conn = self.clone();
        let x = x.clone();
        let v = v.clone();
        Arc::new(move |p: &BundlePoint| {
            let xp = x(p)?;
            let x_of_v = deriv_hvalued(&v, p, &xp, FIELD_FD_STEP)?;
            let correction = conn.eval(p, &xp)?.bracket(&v(p)?)?;
            x_of_v.add(&correction)
        })
    }
}

/// Coordinate frame field: constant base direction for `index < n`, constant
/// fiber-frame direction otherwise.
pub fn frame_field(base_dim: usize, fiber_dim: usize, index: usize) -> FieldFn {
    let mut tv = TangentVector::zero(base_dim, fiber_dim);
    if index < base_dim {
        tv.base[index] = 1.0;
    } else {
        tv.fiber[index - base_dim] = 1.0;
    }
    Arc::new(move |_p: &BundlePoint| Ok(tv.clone()))
}

/// Random tangent vector with components in `[-1, 1]`.
pub fn random_tangent(bundle: &Arc<ChartedBundle>, rng: &mut impl Rng) -> TangentVector {
    TangentVector::new(
        RVec::from_fn(bundle.base_dim(), |_, _| rng.random_range(-1.0..=1.0)),
        RVec::from_fn(bundle.fiber().dim(), |_, _| rng.random_range(-1.0..=1.0)),
    )
}

/// Curvature-equivariance residual
/// `‖Ω(X·g, Y·g)|_{pg} - rho_*(g^{-1}) Ω(X,Y)|_p‖`.
pub fn curvature_equivariance_residual(
    conn: &Connection,
    p: &BundlePoint,
    x: &FieldFn,
    y: &FieldFn,
    g: &GroupElement,
) -> Result<f64> {
    let moved_point = translate_point(p, g)?;
    let lhs = conn.curvature(&moved_point, &act_on_field(x, g), &act_on_field(y, g))?;
    let rhs = conn.action.apply(&g.inverse(), &conn.curvature(p, x, y)?)?;
    lhs.sub(&rhs).map(|d| d.norm())
}

/// Derivation residual of the adjoint derivative:
/// `‖∇_X [V,W] - [∇_X V, W] - [V, ∇_X W]‖` at a point.
pub fn adjoint_derivation_residual(
    conn: &Connection,
    x: &FieldFn,
    v: &HValued,
    w: &HValued,
    p: &BundlePoint,
) -> Result<f64> {
    let (v2, w2) = (v.clone(), w.clone());
    let pointwise: HValued = Arc::new(move |q: &BundlePoint| v2(q)?.bracket(&w2(q)?));
    let lhs = conn.adjoint_derivative(x, &pointwise);
    let dv = conn.adjoint_derivative(x, v);
    let dw = conn.adjoint_derivative(x, w);
    let rhs = dv(p)?.bracket(&w(p)?)?.add(&v(p)?.bracket(&dw(p)?)?)?;
    lhs(p)?.sub(&rhs).map(|d| d.norm())
}

/// The right action on `h`-valued functions:
/// `(V · g)(p) = rho_*(g^{-1}) V(p g^{-1})`.
pub fn act_on_hvalued(v: &HValued, g: &GroupElement, action: &GAction) -> HValued {
    let v = v.clone();
    let g = g.clone();
    let action = action.clone();
    Arc::new(move |p: &BundlePoint| {
        let back = translate_point(p, &g.inverse())?;
        action.apply(&g.inverse(), &v(&back)?)
    })
}

/// Equivariance residual of the adjoint derivative:
/// `‖(∇_X V)·g - ∇_{X·g}(V·g)‖` at a point (zero for isometablic ω).
pub fn adjoint_equivariance_residual(
    conn: &Connection,
    x: &FieldFn,
    v: &HValued,
    g: &GroupElement,
    p: &BundlePoint,
) -> Result<f64> {
    let lhs = act_on_hvalued(&conn.adjoint_derivative(x, v), g, conn.action());
    let rhs = conn.adjoint_derivative(&act_on_field(x, g), &act_on_hvalued(v, g, conn.action()));
    lhs(p)?.sub(&rhs(p)?).map(|d| d.norm())
}

/// Second Bianchi identity residual:
/// `‖Σ_cyc ( ∇_X Ω(Y,Z) - Ω([X,Y], Z) )‖` at a point.
pub fn bianchi_residual(
    conn: &Connection,
    fields: &[FieldFn; 3],
    p: &BundlePoint,
) -> Result<f64> {
    let g_group = conn.bundle().fiber();
    let mut total: Option<AlgebraElement> = None;
    for (x, y, z) in [
        (&fields[0], &fields[1], &fields[2]),
        (&fields[1], &fields[2], &fields[0]),
        (&fields[2], &fields[0], &fields[1]),
    ] {
        let conn2 = conn.clone();
        let (yc, zc) = (y.clone(), z.clone());
        let curvature_yz: HValued =
            Arc::new(move |q: &BundlePoint| conn2.curvature_via_form(q, &yc, &zc));
        let first = conn.adjoint_derivative(x, &curvature_yz)(p)?;
        let xy = vf_bracket(x, y, g_group, FIELD_FD_STEP);
        let second = conn.curvature_via_form(p, &xy, z)?;
        let term = first.sub(&second)?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.unwrap().norm())
}

// ---------------------------------------------------------------------------
// Principal connections and the quotient construction
// ---------------------------------------------------------------------------

/// Lie(G)-valued one-form on the total space.
pub type GForm =
    Arc<dyn Fn(&BundlePoint, &TangentVector) -> Result<AlgebraElement> + Send + Sync>;

/// A principal connection on the underlying G-bundle.
#[derive(Clone)]
pub struct PrincipalConnection {
    bundle: Arc<ChartedBundle>,
    forms: Vec<GForm>,
}

impl PrincipalConnection {
    pub fn new(bundle: Arc<ChartedBundle>, forms: Vec<GForm>) -> Result<PrincipalConnection> {
        if forms.len() != bundle.chart_count() {
            return Err(Error::Dimension(format!(
                "principal connection needs one form per chart ({} charts, {} forms)",
                bundle.chart_count(),
                forms.len()
            )));
        }
        Ok(PrincipalConnection { bundle, forms })
    }

    /// The product connection `δ(dx, ξ) = ξ`.
    pub fn product(bundle: Arc<ChartedBundle>) -> PrincipalConnection {
        let g_group = bundle.fiber().clone();
        let count = bundle.chart_count();
        let forms = (0..count)
            .map(|_| {
                let g_group = g_group.clone();
                Arc::new(move |_p: &BundlePoint, v: &TangentVector| {
                    AlgebraElement::new(&g_group, v.fiber.clone())
                }) as GForm
            })
            .collect();
        PrincipalConnection { bundle, forms }
    }

    /// Coefficient-expression constructor, same layout as
    /// [`Connection::from_exprs`] but valued in Lie(G).
    pub fn from_exprs(bundle: Arc<ChartedBundle>, coeffs: Vec<Vec<Vec<Expr>>>) -> Result<Self> {
        let g_group = bundle.fiber().clone();
        let n = bundle.base_dim();
        let dg = g_group.dim();
        let mut forms: Vec<GForm> = Vec::new();
        for (chart_index, chart_coeffs) in coeffs.iter().enumerate() {
            if chart_coeffs.len() != dg
                || chart_coeffs.iter().any(|row| row.len() != n + dg)
            {
                return Err(Error::Dimension(format!(
                    "chart {chart_index}: principal coefficient block must be {dg} x {}",
                    n + dg
                )));
            }
            let chart = bundle.chart(chart_index)?.clone();
            let rows = chart_coeffs.clone();
            let g_group = g_group.clone();
            forms.push(Arc::new(move |p: &BundlePoint, v: &TangentVector| {
                let env = crate::algebroid::point_env(&chart, p);
                let mut out = RVec::zeros(g_group.dim());
                for (k, row) in rows.iter().enumerate() {
                    let mut acc = 0.0;
                    for (c, coeff) in row.iter().enumerate() {
                        let component = if c < v.base.len() {
                            v.base[c]
                        } else {
                            v.fiber[c - v.base.len()]
                        };
                        if component != 0.0 {
                            acc += eval(coeff, &env)? * component;
                        }
                    }
                    out[k] = acc;
                }
                AlgebraElement::new(&g_group, out)
            }));
        }
        PrincipalConnection::new(bundle, forms)
    }

    pub fn bundle(&self) -> &Arc<ChartedBundle> {
        &self.bundle
    }

    pub fn eval(&self, p: &BundlePoint, v: &TangentVector) -> Result<AlgebraElement> {
        let form = self
            .forms
            .get(p.chart)
            .ok_or(Error::UnknownChart(p.chart, self.forms.len()))?;
        form(p, v)
    }

    /// Vertical projection `(0, δ(v))`.
    pub fn vertical_part(&self, p: &BundlePoint, v: &TangentVector) -> Result<TangentVector> {
        let xi = self.eval(p, v)?;
        Ok(TangentVector::fiber_only(
            self.bundle.base_dim(),
            xi.coords().clone(),
        ))
    }

    /// Horizontal projection `v - (0, δ(v))`.
    pub fn horizontal_part(&self, p: &BundlePoint, v: &TangentVector) -> Result<TangentVector> {
        Ok(v.sub(&self.vertical_part(p, v)?))
    }

    /// Max violation of the two principal-connection axioms over samples:
    /// `δ(0 ⊕ ξ) = ξ` and `δ(TR_g v)|_{pg} = Ad(g^{-1}) δ(v)|_p`.
    pub fn axioms_residual_max(&self, rng: &mut impl Rng, samples: usize) -> Result<f64> {
        let g_group = self.bundle.fiber();
        let mut worst = 0.0f64;
        for chart in 0..self.bundle.chart_count() {
            for _ in 0..samples {
                let p = self.bundle.random_point(chart, rng)?;
                let xi = random_algebra(g_group, rng, 1.0);
                let vertical =
                    TangentVector::fiber_only(self.bundle.base_dim(), xi.coords().clone());
                let reproduced = self.eval(&p, &vertical)?;
                worst = worst.max(reproduced.sub(&xi)?.norm());

                let v = random_tangent(&self.bundle, rng);
                let g = random_element(g_group, rng, 1.0);
                let lhs = self.eval(&translate_point(&p, &g)?, &v.right_translated(&g)?)?;
                let rhs = g.inverse().ad(&self.eval(&p, &v)?)?;
                worst = worst.max(lhs.sub(&rhs)?.norm());
            }
        }
        Ok(worst)
    }
}

/// Compose ω with the horizontal projector of `delta`. Requires ω to vanish
/// on vertical vectors and to be isometablic (sampled guards); under those
/// guards the result equals ω for every choice of `delta`.
pub fn quotient_connection(
    conn: &Connection,
    delta: &PrincipalConnection,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<Connection> {
    let vertical = conn.vertical_residual_max(rng, samples)?;
    if vertical > GUARD_TOL {
        return Err(Error::NotVanishingOnVertical {
            residual: vertical,
            tol: GUARD_TOL,
        });
    }
    let iso = conn.isometablic_residual_max(rng, samples)?;
    if iso > GUARD_TOL {
        return Err(Error::NotIsometablic {
            residual: iso,
            tol: GUARD_TOL,
        });
    }
    let forms: Vec<ConnectionForm> = (0..conn.bundle.chart_count())
        .map(|_| {
            let conn = conn.clone();
            let delta = delta.clone();
            Arc::new(move |p: &BundlePoint, v: &TangentVector| {
                conn.eval(p, &delta.horizontal_part(p, v)?)
            }) as ConnectionForm
        })
        .collect();
    Connection::new(
        conn.bundle.clone(),
        conn.h_group.clone(),
        conn.action.clone(),
        forms,
    )
}
