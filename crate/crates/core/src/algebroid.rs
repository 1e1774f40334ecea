//! The trivial transitive algebroid over a charted bundle, with its group
//! action.
//!
//! The total space of a [`ChartedBundle`] with structure group G plays the
//! role of the base manifold here. Sections of the algebroid are pairs
//! `X ⊕ V`: a vector field `X` on the total space together with a function
//! `V` into a second Lie algebra `h` (the fiber algebra of the extension).
//! The anchor forgets `V`; the bracket is
//!
//! ```text
//! [X ⊕ V, Y ⊕ W] = [X, Y] ⊕ ( X(W) - Y(V) + [V, W] )
//! ```
//!
//! with the vector-field bracket computed in the left-trivialized frame:
//! base components `X(Y^a) - Y(X^a)`, fiber components
//! `X(Y^k) - Y(X^k) + c^k_{ij} X^i Y^j` (structure constants of Lie(G),
//! left-invariant frame). Derivatives are central differences along the
//! canonical flow `t -> (x + t dx, h exp(t xi))`.
//!
//! The structure group acts on sections on the right:
//! `(s · g)(p) = TR_g X(p g^{-1}) ⊕ rho_*(g^{-1}) V(p g^{-1})`,
//! where `rho_*` is the induced action of G on `h` ([`GAction`]).

use std::sync::Arc;

use rand::Rng;

use crate::bundle::{BundlePoint, Chart, ChartedBundle, TangentVector};
use crate::expr::{eval, Env, Expr};
use crate::liegroup::{AlgebraElement, Group, GroupElement};
use crate::linalg::{RMat, RVec};
use crate::{Error, Result};

/// Finite-difference step for derivatives of fields along fields.
pub const FIELD_FD_STEP: f64 = 1e-4;

/// Scalar function on the total space.
pub type ScalarFn = Arc<dyn Fn(&BundlePoint) -> Result<f64> + Send + Sync>;
/// `h`-valued function on the total space (values in a fixed Lie algebra).
pub type HValued = Arc<dyn Fn(&BundlePoint) -> Result<AlgebraElement> + Send + Sync>;
/// Vector field on the total space, in the left-trivialized frame.
pub type FieldFn = Arc<dyn Fn(&BundlePoint) -> Result<TangentVector> + Send + Sync>;

/// Section `X ⊕ V` of the trivial algebroid.
#[derive(Clone)]
pub struct AlgebroidSection {
    pub x: FieldFn,
    pub v: HValued,
}

impl AlgebroidSection {
    pub fn new(x: FieldFn, v: HValued) -> AlgebroidSection {
        AlgebroidSection { x, v }
    }

    /// The anchor image: the vector-field part.
    pub fn anchor(&self) -> FieldFn {
        self.x.clone()
    }
}

// ---------------------------------------------------------------------------
// Flows and derivatives
// ---------------------------------------------------------------------------

/// The canonical curve through `p` with velocity `v`:
/// `(x + t dx, h exp(t xi))`.
pub fn flow(p: &BundlePoint, v: &TangentVector, t: f64) -> Result<BundlePoint> {
    let x: Vec<f64> = p.x.iter().zip(v.base.iter()).map(|(a, b)| a + t * b).collect();
    let step = AlgebraElement::new(p.h.group(), &v.fiber * t)?.exp();
    Ok(BundlePoint {
        chart: p.chart,
        x,
        h: p.h.mul(&step)?,
    })
}

/// Central-difference derivative of a vector-valued function along `v`.
pub fn deriv_coords(
    f: &dyn Fn(&BundlePoint) -> Result<RVec>,
    p: &BundlePoint,
    v: &TangentVector,
    h: f64,
) -> Result<RVec> {
    let plus = f(&flow(p, v, h)?)?;
    let minus = f(&flow(p, v, -h)?)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Central-difference derivative of a scalar function along `v`.
pub fn deriv_scalar(f: &ScalarFn, p: &BundlePoint, v: &TangentVector, h: f64) -> Result<f64> {
    Ok((f(&flow(p, v, h)?)? - f(&flow(p, v, -h)?)?) / (2.0 * h))
}

/// Derivative of an `h`-valued function along a field, as an algebra element.
pub fn deriv_hvalued(
    f: &HValued,
    p: &BundlePoint,
    v: &TangentVector,
    h: f64,
) -> Result<AlgebraElement> {
    let plus = f(&flow(p, v, h)?)?;
    let minus = f(&flow(p, v, -h)?)?;
    plus.sub(&minus).map(|d| d.scale(1.0 / (2.0 * h)))
}

// ---------------------------------------------------------------------------
// Brackets
// ---------------------------------------------------------------------------

/// Vector-field bracket in the left-trivialized frame, as a lazy field.
/// `g_structure` supplies the structure constants of Lie(G).
pub fn vf_bracket(x: &FieldFn, y: &FieldFn, g_group: &Group, h_step: f64) -> FieldFn {
    let x = x.clone();
    let y = y.clone();
    let g_group = g_group.clone();
    Arc::new(move |p: &BundlePoint| {
        let xp = x(p)?;
        let yp = y(p)?;
        let x_of_y = deriv_coords(&|q| Ok(stack(&y(q)?)), p, &xp, h_step)?;
        let y_of_x = deriv_coords(&|q| Ok(stack(&x(q)?)), p, &yp, h_step)?;
        let n = xp.base.len();
        let d = xp.fiber.len();
        let mut out = unstack(&(x_of_y - y_of_x), n, d);
        // Left-invariant frame contribution on the fiber block.
        let structure = g_group.structure_constants();
        for (i, row) in structure.iter().enumerate().take(d) {
            let a = xp.fiber[i];
            if a == 0.0 {
                continue;
            }
            for (j, sij) in row.iter().enumerate().take(d) {
                let b = yp.fiber[j];
                if b == 0.0 {
                    continue;
                }
                out.fiber += sij * (a * b);
            }
        }
        Ok(out)
    })
}

fn stack(v: &TangentVector) -> RVec {
    let mut out = RVec::zeros(v.base.len() + v.fiber.len());
    out.rows_mut(0, v.base.len()).copy_from(&v.base);
    out.rows_mut(v.base.len(), v.fiber.len()).copy_from(&v.fiber);
    out
}

fn unstack(v: &RVec, n: usize, d: usize) -> TangentVector {
    TangentVector {
        base: v.rows(0, n).into_owned(),
        fiber: v.rows(n, d).into_owned(),
    }
}

/// Algebroid bracket `[X ⊕ V, Y ⊕ W] = [X,Y] ⊕ (X(W) - Y(V) + [V,W])`.
pub fn algebroid_bracket(
    s1: &AlgebroidSection,
    s2: &AlgebroidSection,
    g_group: &Group,
    h_step: f64,
) -> AlgebroidSection {
    let x_part = vf_bracket(&s1.x, &s2.x, g_group, h_step);
    let (x1, v1) = (s1.x.clone(), s1.v.clone());
    let (x2, v2) = (s2.x.clone(), s2.v.clone());
    let v_part: HValued = Arc::new(move |p: &BundlePoint| {
        let xp = x1(p)?;
        let yp = x2(p)?;
        let x_of_w = deriv_hvalued(&v2, p, &xp, h_step)?;
        let y_of_v = deriv_hvalued(&v1, p, &yp, h_step)?;
        let pointwise = v1(p)?.bracket(&v2(p)?)?;
        x_of_w.sub(&y_of_v)?.add(&pointwise)
    });
    AlgebroidSection::new(x_part, v_part)
}

/// Scalar multiple of a section (module structure for the Leibniz rule).
pub fn scale_section(f: &ScalarFn, s: &AlgebroidSection) -> AlgebroidSection {
    let (x, v, f1, f2) = (s.x.clone(), s.v.clone(), f.clone(), f.clone());
    AlgebroidSection::new(
        Arc::new(move |p| Ok(x(p)?.scale(f1(p)?))),
        Arc::new(move |p| Ok(v(p)?.scale(f2(p)?))),
    )
}

/// Vertical left-invariant field with constant fiber coordinates `v`
/// (the infinitesimal right action of Lie(G) on the total space).
pub fn vertical_field(v: &AlgebraElement, base_dim: usize) -> FieldFn {
    let coords = v.coords().clone();
    Arc::new(move |_p: &BundlePoint| {
        Ok(TangentVector::fiber_only(base_dim, coords.clone()))
    })
}

// ---------------------------------------------------------------------------
// The structure-group action
// ---------------------------------------------------------------------------

/// Matrix realization of an algebra action, `g -> rho_*(g)`.
pub type StarMap = Arc<dyn Fn(&GroupElement) -> Result<RMat> + Send + Sync>;
/// Element-level group homomorphism `G -> H`.
pub type EmbedMap = Arc<dyn Fn(&GroupElement) -> Result<GroupElement> + Send + Sync>;
/// Group-level action `(g, h) -> g . h`.
pub type GroupLevelAction =
    Arc<dyn Fn(&GroupElement, &GroupElement) -> Result<GroupElement> + Send + Sync>;

/// Action of the structure group G on the extension algebra `h`, given by
/// the matrix of `rho_*(g)` in the basis of `h`; when the action comes from
/// group-level conjugation, `on_group` is also available.
#[derive(Clone)]
pub struct GAction {
    name: String,
    h_group: Group,
    star: StarMap,
    on_group: Option<GroupLevelAction>,
}

impl std::fmt::Debug for GAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GAction")
            .field("name", &self.name)
            .field("h_group", &self.h_group.name())
            .field("group_level", &self.on_group.is_some())
            .finish()
    }
}

impl GAction {
    /// The trivial action.
    pub fn trivial(h_group: &Group) -> GAction {
        let d = h_group.dim();
        GAction {
            name: "trivial".into(),
            h_group: h_group.clone(),
            star: Arc::new(move |_| Ok(RMat::identity(d, d))),
            on_group: Some(Arc::new(|_g, h| Ok(h.clone()))),
        }
    }

    /// G = H acting on its own algebra by conjugation.
    pub fn adjoint(group: &Group) -> GAction {
        GAction {
            name: "ad".into(),
            h_group: group.clone(),
            star: Arc::new(move |g| Ok(g.adjoint_matrix())),
            on_group: Some(Arc::new(|g, h| g.mul(h)?.mul(&g.inverse()))),
        }
    }

    /// Conjugation through an embedding `iota: G -> H`.
    pub fn conjugation_by_embedding(h_group: &Group, embed: EmbedMap) -> GAction {
        let e1 = embed.clone();
        let e2 = embed;
        GAction {
            name: "embed-conjugation".into(),
            h_group: h_group.clone(),
            star: Arc::new(move |g| Ok(e1(g)?.adjoint_matrix())),
            on_group: Some(Arc::new(move |g, h| {
                let img = e2(g)?;
                img.mul(h)?.mul(&img.inverse())
            })),
        }
    }

    /// Action given directly by matrices on `h` (no group-level action).
    pub fn from_matrices(name: impl Into<String>, h_group: &Group, star: StarMap) -> GAction {
        GAction {
            name: name.into(),
            h_group: h_group.clone(),
            star,
            on_group: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn h_group(&self) -> &Group {
        &self.h_group
    }

    /// Matrix of `rho_*(g)` on the basis of `h`.
    pub fn star_matrix(&self, g: &GroupElement) -> Result<RMat> {
        (self.star)(g)
    }

    /// Apply `rho_*(g)` to an algebra element of `h`.
    pub fn apply(&self, g: &GroupElement, v: &AlgebraElement) -> Result<AlgebraElement> {
        let m = self.star_matrix(g)?;
        AlgebraElement::new(&self.h_group, &m * v.coords())
    }

    /// Group-level action `rho(g): H -> H` when available.
    pub fn apply_on_group(&self, g: &GroupElement, h: &GroupElement) -> Option<Result<GroupElement>> {
        self.on_group.as_ref().map(|f| f(g, h))
    }

    pub fn has_group_level(&self) -> bool {
        self.on_group.is_some()
    }

    /// Largest violation of `rho_*(g1 g2) = rho_*(g1) rho_*(g2)` and of
    /// bracket preservation over random samples.
    pub fn homomorphism_residual(
        &self,
        g_group: &Group,
        rng: &mut impl Rng,
        samples: usize,
    ) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let g1 = crate::liegroup::random_element(g_group, rng, 1.2);
            let g2 = crate::liegroup::random_element(g_group, rng, 1.2);
            let lhs = self.star_matrix(&g1.mul(&g2)?)?;
            let rhs = self.star_matrix(&g1)? * self.star_matrix(&g2)?;
            worst = worst.max((lhs - rhs).norm());

            let v = crate::liegroup::random_algebra(&self.h_group, rng, 1.0);
            let w = crate::liegroup::random_algebra(&self.h_group, rng, 1.0);
            let before = self.apply(&g1, &v.bracket(&w)?)?;
            let after = self.apply(&g1, &v)?.bracket(&self.apply(&g1, &w)?)?;
            worst = worst.max(before.sub(&after)?.norm());
        }
        Ok(worst)
    }
}

/// Right-translate a point: `(x, h) -> (x, h g)`.
pub fn translate_point(p: &BundlePoint, g: &GroupElement) -> Result<BundlePoint> {
    Ok(BundlePoint {
        chart: p.chart,
        x: p.x.clone(),
        h: p.h.mul(g)?,
    })
}

/// Right action of G on vector fields:
/// `(X · g)(p) = TR_g X(p g^{-1})`.
pub fn act_on_field(x: &FieldFn, g: &GroupElement) -> FieldFn {
    let x = x.clone();
    let g = g.clone();
    Arc::new(move |p: &BundlePoint| {
        let back = translate_point(p, &g.inverse())?;
        x(&back)?.right_translated(&g)
    })
}

/// Right action of G on sections:
/// `(s · g)(p) = TR_g X(p g^{-1}) ⊕ rho_*(g^{-1}) V(p g^{-1})`.
pub fn act_on_section(s: &AlgebroidSection, g: &GroupElement, action: &GAction) -> AlgebroidSection {
    let x_part = act_on_field(&s.x, g);
    let v = s.v.clone();
    let g = g.clone();
    let action = action.clone();
    let v_part: HValued = Arc::new(move |p: &BundlePoint| {
        let back = translate_point(p, &g.inverse())?;
        action.apply(&g.inverse(), &v(&back)?)
    });
    AlgebroidSection::new(x_part, v_part)
}

// ---------------------------------------------------------------------------
// Expression-backed constructors
// ---------------------------------------------------------------------------

/// Environment binding chart coordinates and the fiber-group matrix entries
/// (`g_<row>_<col>_re` / `g_<row>_<col>_im`) of a point.
pub fn point_env(chart: &Chart, p: &BundlePoint) -> Env {
    let mut env = chart.env(&p.x);
    let m = p.h.matrix();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            env.set(format!("g_{r}_{c}_re"), m[(r, c)].re);
            env.set(format!("g_{r}_{c}_im"), m[(r, c)].im);
        }
    }
    env
}

/// Vector field from coordinate expressions: `base` components then `fiber`
/// components, all in chart coordinates plus fiber-entry variables.
pub fn field_from_exprs(
    bundle: &Arc<ChartedBundle>,
    chart: usize,
    base: Vec<Expr>,
    fiber: Vec<Expr>,
) -> Result<FieldFn> {
    let chart_data = bundle.chart(chart)?.clone();
    if base.len() != bundle.base_dim() || fiber.len() != bundle.fiber().dim() {
        return Err(Error::Dimension(format!(
            "field on chart {chart} needs {} base and {} fiber components, got {} and {}",
            bundle.base_dim(),
            bundle.fiber().dim(),
            base.len(),
            fiber.len()
        )));
    }
    Ok(Arc::new(move |p: &BundlePoint| {
        let env = point_env(&chart_data, p);
        let b: Result<Vec<f64>> = base.iter().map(|e| eval(e, &env)).collect();
        let f: Result<Vec<f64>> = fiber.iter().map(|e| eval(e, &env)).collect();
        Ok(TangentVector::new(
            RVec::from_vec(b?),
            RVec::from_vec(f?),
        ))
    }))
}

/// `h`-valued function from one expression per basis coordinate.
pub fn hvalued_from_exprs(
    bundle: &Arc<ChartedBundle>,
    chart: usize,
    h_group: &Group,
    coords: Vec<Expr>,
) -> Result<HValued> {
    let chart_data = bundle.chart(chart)?.clone();
    if coords.len() != h_group.dim() {
        return Err(Error::Dimension(format!(
            "h-valued function needs {} coordinates, got {}",
            h_group.dim(),
            coords.len()
        )));
    }
    let h_group = h_group.clone();
    Ok(Arc::new(move |p: &BundlePoint| {
        let env = point_env(&chart_data, p);
        let vals: Result<Vec<f64>> = coords.iter().map(|e| eval(e, &env)).collect();
        AlgebraElement::new(&h_group, RVec::from_vec(vals?))
    }))
}

/// Scalar function from one expression.
pub fn scalar_from_expr(bundle: &Arc<ChartedBundle>, chart: usize, expr: Expr) -> Result<ScalarFn> {
    let chart_data = bundle.chart(chart)?.clone();
    Ok(Arc::new(move |p: &BundlePoint| {
        eval(&expr, &point_env(&chart_data, p))
    }))
}

// ---------------------------------------------------------------------------
// Structural residual checks
// ---------------------------------------------------------------------------

/// Jacobi residual `‖[[s1,s2],s3] + [[s2,s3],s1] + [[s3,s1],s2]‖` at a point.
pub fn jacobi_residual(
    sections: &[AlgebroidSection; 3],
    g_group: &Group,
    p: &BundlePoint,
) -> Result<f64> {
    let [s1, s2, s3] = sections;
    let mut total_x: Option<TangentVector> = None;
    let mut total_v: Option<AlgebraElement> = None;
    for (a, b, c) in [(s1, s2, s3), (s2, s3, s1), (s3, s1, s2)] {
        let inner = algebroid_bracket(a, b, g_group, FIELD_FD_STEP);
        let outer = algebroid_bracket(&inner, c, g_group, FIELD_FD_STEP);
        let x = (outer.x)(p)?;
        let v = (outer.v)(p)?;
        total_x = Some(match total_x {
            None => x,
            Some(t) => t.add(&x),
        });
        total_v = Some(match total_v {
            None => v,
            Some(t) => t.add(&v)?,
        });
    }
    Ok(total_x.unwrap().norm() + total_v.unwrap().norm())
}

/// Leibniz residual `‖[s1, f s2] - f [s1, s2] - (anchor(s1) f) s2‖` at a point.
pub fn leibniz_residual(
    s1: &AlgebroidSection,
    s2: &AlgebroidSection,
    f: &ScalarFn,
    g_group: &Group,
    p: &BundlePoint,
) -> Result<f64> {
    let lhs = algebroid_bracket(s1, &scale_section(f, s2), g_group, FIELD_FD_STEP);
    let plain = algebroid_bracket(s1, s2, g_group, FIELD_FD_STEP);
    let xp = (s1.x)(p)?;
    let df = deriv_scalar(f, p, &xp, FIELD_FD_STEP)?;
    let fp = f(p)?;

    let x_res = (lhs.x)(p)?
        .sub(&(plain.x)(p)?.scale(fp))
        .sub(&(s2.x)(p)?.scale(df));
    let v_res = (lhs.v)(p)?
        .sub(&(plain.v)(p)?.scale(fp))?
        .sub(&(s2.v)(p)?.scale(df))?;
    Ok(x_res.norm() + v_res.norm())
}

/// Anchor-morphism residual: the anchor of a bracket against the bracket of
/// the anchors, the latter evaluated with an independent difference step.
pub fn anchor_morphism_residual(
    s1: &AlgebroidSection,
    s2: &AlgebroidSection,
    g_group: &Group,
    p: &BundlePoint,
) -> Result<f64> {
    let full = algebroid_bracket(s1, s2, g_group, FIELD_FD_STEP);
    let anchored = vf_bracket(&s1.anchor(), &s2.anchor(), g_group, FIELD_FD_STEP / 2.0);
    Ok((full.x)(p)?.sub(&anchored(p)?).norm())
}

/// Equivariance residual `‖[s1, s2] · g - [s1 · g, s2 · g]‖` at a point.
pub fn bracket_equivariance_residual(
    s1: &AlgebroidSection,
    s2: &AlgebroidSection,
    g: &GroupElement,
    action: &GAction,
    g_group: &Group,
    p: &BundlePoint,
) -> Result<f64> {
    let lhs = act_on_section(&algebroid_bracket(s1, s2, g_group, FIELD_FD_STEP), g, action);
    let rhs = algebroid_bracket(
        &act_on_section(s1, g, action),
        &act_on_section(s2, g, action),
        g_group,
        FIELD_FD_STEP,
    );
    let x_res = (lhs.x)(p)?.sub(&(rhs.x)(p)?).norm();
    let v_res = (lhs.v)(p)?.sub(&(rhs.v)(p)?)?.norm();
    Ok(x_res + v_res)
}
