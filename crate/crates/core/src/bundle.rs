//! Charted principal bundles.
//!
//! A [`ChartedBundle`] is a principal H-bundle presented concretely: a list of
//! base charts with named coordinates and explicit domains, plus overlap data
//! consisting of a base transition map and a fiber transition function into H.
//!
//! Conventions. A point is stored in one chart as `(chart, x, h)`. Local
//! sections `q_i` satisfy `q_j = q_i * g_ij` on overlaps, so the fiber
//! coordinate transforms as `h_j = g_ij(x)^{-1} h_i` and the cocycle condition
//! reads `g_ik = g_ij * g_jk`. Tangent vectors use the left trivialization of
//! the fiber: the pair `(dx, xi)` stands for the curve
//! `t -> (x + t dx, h * exp(t xi))`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::expr::{eval, Env, Expr};
use crate::liegroup::{identity, random_element, Group, GroupElement};
use crate::linalg::{cplx, fro_norm, CMat, RVec};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Chart domains
// ---------------------------------------------------------------------------

/// Region of a chart's coordinate space.
#[derive(Debug, Clone)]
pub enum ChartDomain {
    /// Axis-aligned box `[lo_k, hi_k]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Euclidean ball around `center`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Spherical shell `inner <= |x - center| <= outer`.
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

impl ChartDomain {
    pub fn dim(&self) -> usize {
        match self {
            ChartDomain::Box { lo, .. } => lo.len(),
            ChartDomain::Ball { center, .. } | ChartDomain::Annulus { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            ChartDomain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
            ChartDomain::Ball { center, radius } => dist(x, center) <= *radius,
            ChartDomain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(x, center);
                r >= *inner && r <= *outer
            }
        }
    }

    /// Containment with a safety margin: every point within `margin` of `x`
    /// is also inside the domain. Used to keep finite-difference stencils
    /// away from domain boundaries.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            ChartDomain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l + margin && *v <= *h - margin),
            ChartDomain::Ball { center, radius } => dist(x, center) <= radius - margin,
            ChartDomain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(x, center);
                r >= inner + margin && r <= outer - margin
            }
        }
    }

    /// Uniform sample at least `margin` away from the domain boundary.
    pub fn sample_interior(&self, margin: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
        for _ in 0..400 {
            let x = self.sample(rng)?;
            if self.contains_with_margin(&x, margin) {
                return Ok(x);
            }
        }
        Err(Error::Domain(format!(
            "rejection sampling failed to find a point {margin} away from the domain boundary"
        )))
    }

    /// A representative interior point (used for default basepoints).
    pub fn center_point(&self) -> Vec<f64> {
        match self {
            ChartDomain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| 0.5 * (l + h))
                .collect(),
            ChartDomain::Ball { center, .. } => center.clone(),
            ChartDomain::Annulus {
                center,
                inner,
                outer,
            } => {
                let mut p = center.clone();
                p[0] += 0.5 * (inner + outer);
                p
            }
        }
    }

    /// Uniform rejection sample from the domain.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let (lo, hi): (Vec<f64>, Vec<f64>) = match self {
            ChartDomain::Box { lo, hi } => (lo.clone(), hi.clone()),
            ChartDomain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ChartDomain::Annulus { center, outer, .. } => (
                center.iter().map(|c| c - outer).collect(),
                center.iter().map(|c| c + outer).collect(),
            ),
        };
        for _ in 0..10_000 {
            let x: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| rng.random_range(*l..=*h))
                .collect();
            if self.contains(&x) {
                return Ok(x);
            }
        }
        Err(Error::Domain(
            "rejection sampling failed to hit the chart domain".into(),
        ))
    }
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Charts and overlaps
// ---------------------------------------------------------------------------

/// A base chart: named coordinates plus a domain.
#[derive(Debug, Clone)]
pub struct Chart {
    pub name: String,
    pub coords: Vec<String>,
    pub domain: ChartDomain,
}

impl Chart {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Environment binding this chart's coordinate names to a point.
    pub fn env(&self, x: &[f64]) -> Env {
        let mut env = Env::new();
        for (name, value) in self.coords.iter().zip(x) {
            env.set(name.clone(), *value);
        }
        env
    }
}

/// Base transition map between charts (numeric closure).
pub type BaseMap = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;
/// Fiber transition function on an overlap (numeric closure into H).
pub type FiberTransition = Arc<dyn Fn(&[f64]) -> Result<GroupElement> + Send + Sync>;

/// Overlap data for the ordered pair `(i, j)`, expressed in chart-i
/// coordinates. `to_j = None` means the charts share coordinates on the
/// overlap (identity base map).
#[derive(Clone)]
pub struct Overlap {
    pub i: usize,
    pub j: usize,
    pub domain: ChartDomain,
    pub to_j: Option<BaseMap>,
    pub g: FiberTransition,
}

impl std::fmt::Debug for Overlap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Overlap")
            .field("i", &self.i)
            .field("j", &self.j)
            .field("domain", &self.domain)
            .field("identity_base_map", &self.to_j.is_none())
            .finish()
    }
}

impl Overlap {
    /// Build an overlap from coordinate expressions. `g_entries[r][c]` are
    /// `(re, im)` expression pairs for the fiber transition matrix; variables
    /// are the chart-i coordinate names.
    pub fn from_exprs(
        i: usize,
        j: usize,
        domain: ChartDomain,
        chart_i: &Chart,
        to_j: Option<Vec<Expr>>,
        g_entries: Vec<Vec<(Expr, Expr)>>,
        fiber: &Group,
    ) -> Result<Overlap> {
        let n = fiber.matrix_dim();
        if g_entries.len() != n || g_entries.iter().any(|row| row.len() != n) {
            return Err(Error::BadMatrixSize {
                rows: g_entries.len(),
                cols: g_entries.first().map_or(0, |r| r.len()),
                expected: n,
            });
        }
        let names: Vec<String> = chart_i.coords.clone();
        let fiber = fiber.clone();
        let base_map: Option<BaseMap> = match to_j {
            None => None,
            Some(exprs) => {
                let names = names.clone();
                Some(Arc::new(move |x: &[f64]| {
                    let env = bind(&names, x);
                    exprs.iter().map(|e| eval(e, &env)).collect()
                }) as BaseMap)
            }
        };
        let g_names = names;
        let g: FiberTransition = Arc::new(move |x: &[f64]| {
            let env = bind(&g_names, x);
            let mut m = CMat::zeros(n, n);
            for (r, row) in g_entries.iter().enumerate() {
                for (c, (re, im)) in row.iter().enumerate() {
                    m[(r, c)] = cplx(eval(re, &env)?, eval(im, &env)?);
                }
            }
            GroupElement::from_matrix(&fiber, m)
        });
        Ok(Overlap {
            i,
            j,
            domain,
            to_j: base_map,
            g,
        })
    }

    /// Overlap with a constant fiber transition (shared-coordinate charts).
    pub fn constant(i: usize, j: usize, domain: ChartDomain, g: GroupElement) -> Overlap {
        Overlap {
            i,
            j,
            domain,
            to_j: None,
            g: Arc::new(move |_| Ok(g.clone())),
        }
    }
}

fn bind(names: &[String], x: &[f64]) -> Env {
    let mut env = Env::new();
    for (name, value) in names.iter().zip(x) {
        env.set(name.clone(), *value);
    }
    env
}

// ---------------------------------------------------------------------------
// Points and tangent vectors
// ---------------------------------------------------------------------------

/// A bundle point in a chart trivialization: `(chart, x, h)`.
#[derive(Debug, Clone)]
pub struct BundlePoint {
    pub chart: usize,
    pub x: Vec<f64>,
    pub h: GroupElement,
}

impl BundlePoint {
    pub fn new(chart: usize, x: Vec<f64>, h: GroupElement) -> BundlePoint {
        BundlePoint { chart, x, h }
    }
}

/// Tangent vector at a bundle point, fiber part in the left trivialization:
/// `(dx, xi)` stands for the curve `t -> (x + t dx, h exp(t xi))`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub base: RVec,
    pub fiber: RVec,
}

impl TangentVector {
    pub fn new(base: RVec, fiber: RVec) -> TangentVector {
        TangentVector { base, fiber }
    }

    pub fn zero(base_dim: usize, fiber_dim: usize) -> TangentVector {
        TangentVector {
            base: RVec::zeros(base_dim),
            fiber: RVec::zeros(fiber_dim),
        }
    }

    pub fn base_only(base: RVec, fiber_dim: usize) -> TangentVector {
        TangentVector {
            fiber: RVec::zeros(fiber_dim),
            base,
        }
    }

    pub fn fiber_only(base_dim: usize, fiber: RVec) -> TangentVector {
        TangentVector {
            base: RVec::zeros(base_dim),
            fiber,
        }
    }

    pub fn add(&self, rhs: &TangentVector) -> TangentVector {
        TangentVector {
            base: &self.base + &rhs.base,
            fiber: &self.fiber + &rhs.fiber,
        }
    }

    pub fn sub(&self, rhs: &TangentVector) -> TangentVector {
        TangentVector {
            base: &self.base - &rhs.base,
            fiber: &self.fiber - &rhs.fiber,
        }
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        TangentVector {
            base: &self.base * s,
            fiber: &self.fiber * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.base.norm_squared() + self.fiber.norm_squared()).sqrt()
    }

    /// Differential of right translation by `g`: base part unchanged, fiber
    /// part conjugated, since `h exp(t xi) g = (h g) exp(t Ad(g^{-1}) xi)`.
    pub fn right_translated(&self, g: &GroupElement) -> Result<TangentVector> {
        let ad_inv = g.inverse().adjoint_matrix();
        Ok(TangentVector {
            base: self.base.clone(),
            fiber: &ad_inv * &self.fiber,
        })
    }
}

// ---------------------------------------------------------------------------
// The bundle itself
// ---------------------------------------------------------------------------

/// Report from a transition cocycle check.
#[derive(Debug, Clone)]
pub struct CocycleReport {
    pub pairs_checked: usize,
    pub triples_checked: usize,
    pub max_pair_residual: f64,
    pub max_triple_residual: f64,
}

impl CocycleReport {
    pub fn max_residual(&self) -> f64 {
        self.max_pair_residual.max(self.max_triple_residual)
    }
}

/// A principal H-bundle given by charts and overlap transitions.
#[derive(Debug)]
pub struct ChartedBundle {
    name: String,
    fiber: Group,
    charts: Vec<Chart>,
    overlaps: BTreeMap<(usize, usize), Overlap>,
}

impl ChartedBundle {
    pub fn new(
        name: impl Into<String>,
        fiber: Group,
        charts: Vec<Chart>,
        overlaps: Vec<Overlap>,
    ) -> Result<ChartedBundle> {
        let name = name.into();
        if charts.is_empty() {
            return Err(Error::Dimension("a bundle needs at least one chart".into()));
        }
        let dim = charts[0].dim();
        for chart in &charts {
            if chart.dim() != dim || chart.domain.dim() != dim {
                return Err(Error::Dimension(format!(
                    "chart `{}` has inconsistent dimension",
                    chart.name
                )));
            }
        }
        let mut table: BTreeMap<(usize, usize), Overlap> = BTreeMap::new();
        for overlap in overlaps {
            let (i, j) = (overlap.i, overlap.j);
            if i >= charts.len() || j >= charts.len() || i == j {
                return Err(Error::UnknownChart(i.max(j), charts.len()));
            }
            if overlap.domain.dim() != dim {
                return Err(Error::Dimension(format!(
                    "overlap ({i},{j}) domain has wrong dimension"
                )));
            }
            table.insert((i, j), overlap);
        }
        // Synthesize reverse overlaps where the base map is the identity.
        let missing: Vec<(usize, usize)> = table
            .keys()
            .filter(|(i, j)| !table.contains_key(&(*j, *i)))
            .copied()
            .collect();
        for (i, j) in missing {
            let fwd = &table[&(i, j)];
            if fwd.to_j.is_some() {
                return Err(Error::Validation {
                    path: format!("overlaps ({i},{j})"),
                    message: "reverse overlap must be given explicitly when the base \
                              transition is not the identity"
                        .into(),
                });
            }
            let g_fwd = fwd.g.clone();
            let reverse = Overlap {
                i: j,
                j: i,
                domain: fwd.domain.clone(),
                to_j: None,
                g: Arc::new(move |x: &[f64]| Ok(g_fwd(x)?.inverse())),
            };
            table.insert((j, i), reverse);
        }
        Ok(ChartedBundle {
            name,
            fiber,
            charts,
            overlaps: table,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fiber(&self) -> &Group {
        &self.fiber
    }

    pub fn base_dim(&self) -> usize {
        self.charts[0].dim()
    }

    pub fn chart_count(&self) -> usize {
        self.charts.len()
    }

    pub fn chart(&self, i: usize) -> Result<&Chart> {
        self.charts
            .get(i)
            .ok_or(Error::UnknownChart(i, self.charts.len()))
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn overlap(&self, i: usize, j: usize) -> Result<&Overlap> {
        self.overlaps
            .get(&(i, j))
            .ok_or(Error::NoSuchOverlap(i, j))
    }

    pub fn overlaps(&self) -> impl Iterator<Item = &Overlap> {
        self.overlaps.values()
    }

    /// Error unless `x` lies in chart `i`'s domain.
    pub fn check_point(&self, i: usize, x: &[f64]) -> Result<()> {
        let chart = self.chart(i)?;
        if chart.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfChart {
                chart: i,
                point: x.to_vec(),
            })
        }
    }

    /// Fiber transition element `g_ij(x)`, `x` in chart-i coordinates.
    pub fn transition_element(&self, i: usize, j: usize, x: &[f64]) -> Result<GroupElement> {
        let overlap = self.overlap(i, j)?;
        if !overlap.domain.contains(x) {
            return Err(Error::OutOfChart {
                chart: i,
                point: x.to_vec(),
            });
        }
        (overlap.g)(x)
    }

    /// Base transition `x_j = phi_ij(x_i)`.
    pub fn base_map(&self, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        let overlap = self.overlap(i, j)?;
        if !overlap.domain.contains(x) {
            return Err(Error::OutOfChart {
                chart: i,
                point: x.to_vec(),
            });
        }
        match &overlap.to_j {
            None => Ok(x.to_vec()),
            Some(map) => map(x),
        }
    }

    /// Re-express a point in chart `j`: `h_j = g_ij(x)^{-1} h_i`.
    pub fn to_chart(&self, p: &BundlePoint, j: usize) -> Result<BundlePoint> {
        if p.chart == j {
            return Ok(p.clone());
        }
        let x_j = self.base_map(p.chart, j, &p.x)?;
        let g = self.transition_element(p.chart, j, &p.x)?;
        let h_j = g.inverse().mul(&p.h)?;
        self.check_point(j, &x_j)?;
        Ok(BundlePoint {
            chart: j,
            x: x_j,
            h: h_j,
        })
    }

    /// Pushforward of a tangent vector under the chart change `i → j`.
    ///
    /// The base leg goes through the central-difference Jacobian of the base
    /// map. From `h_j(t) = g_ij(x(t))^{-1} h_i(t)`, the left-trivialized
    /// fiber velocity transforms as
    ///
    /// ```text
    /// ξ_j = ξ_i − Ad(h_i^{-1}) Δ_R g_ij(ẋ),     Δ_R g(ẋ) = (dg ẋ) g^{-1}.
    /// ```
    pub fn push_tangent(
        &self,
        p: &BundlePoint,
        v: &TangentVector,
        j: usize,
    ) -> Result<(BundlePoint, TangentVector)> {
        if p.chart == j {
            return Ok((p.clone(), v.clone()));
        }
        let q = self.to_chart(p, j)?;
        let h = crate::expr::DEFAULT_FD_STEP;
        let dim = self.chart(p.chart)?.dim();
        let mut xp = p.x.clone();
        let mut xm = p.x.clone();
        for c in 0..dim {
            xp[c] += h * v.base[c];
            xm[c] -= h * v.base[c];
        }
        let yp = self.base_map(p.chart, j, &xp)?;
        let ym = self.base_map(p.chart, j, &xm)?;
        let base = RVec::from_iterator(yp.len(), yp.iter().zip(&ym).map(|(a, b)| (a - b) / (2.0 * h)));

        let gp = self.transition_element(p.chart, j, &xp)?;
        let gm = self.transition_element(p.chart, j, &xm)?;
        let g0 = self.transition_element(p.chart, j, &p.x)?;
        let dg = (gp.matrix() - gm.matrix()).map(|z| z * (1.0 / (2.0 * h)));
        let delta = &dg * g0.inverse().matrix();
        let (delta_coords, residual) = self.fiber.project_to_algebra(&delta);
        if residual > 1e-5 {
            return Err(Error::Domain(format!(
                "fiber transition derivative leaves the structure algebra \
                 (residual {residual:.3e})"
            )));
        }
        let delta_alg = crate::liegroup::AlgebraElement::new(&self.fiber, delta_coords)?;
        let turned = p.h.inverse().ad(&delta_alg)?;
        let fiber = &v.fiber - turned.coords();
        Ok((q, TangentVector::new(base, fiber)))
    }

    /// Identity-fiber point over the center of a chart's domain.
    pub fn center_point(&self, chart: usize) -> Result<BundlePoint> {
        let c = self.chart(chart)?;
        Ok(BundlePoint {
            chart,
            x: c.domain.center_point(),
            h: identity(&self.fiber),
        })
    }

    /// Random point in a chart (uniform base sample, exp-uniform fiber).
    pub fn random_point(&self, chart: usize, rng: &mut impl Rng) -> Result<BundlePoint> {
        let c = self.chart(chart)?;
        let x = c.domain.sample(rng)?;
        let h = random_element(&self.fiber, rng, 1.2);
        Ok(BundlePoint { chart, x, h })
    }

    /// Verify inverse consistency `g_ij(x) g_ji(phi_ij(x)) = e` on every
    /// stored ordered pair, and the cocycle `g_ik = g_ij g_jk` on every chart
    /// triple where sampled points land in all three required domains.
    pub fn cocycle_check(
        &self,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<CocycleReport> {
        let mut report = CocycleReport {
            pairs_checked: 0,
            triples_checked: 0,
            max_pair_residual: 0.0,
            max_triple_residual: 0.0,
        };
        let eye = CMat::identity(self.fiber.matrix_dim(), self.fiber.matrix_dim());
        for (&(i, j), overlap) in &self.overlaps {
            if !self.overlaps.contains_key(&(j, i)) {
                continue;
            }
            for _ in 0..samples {
                let x = overlap.domain.sample(rng)?;
                let x_j = self.base_map(i, j, &x)?;
                if !self.overlap(j, i)?.domain.contains(&x_j) {
                    continue;
                }
                let fwd = self.transition_element(i, j, &x)?;
                let back = self.transition_element(j, i, &x_j)?;
                let residual = fro_norm(&(fwd.mul(&back)?.matrix() - &eye));
                report.max_pair_residual = report.max_pair_residual.max(residual);
                report.pairs_checked += 1;
            }
        }
        let m = self.charts.len();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    if i == j || j == k || i == k {
                        continue;
                    }
                    let (Ok(o_ij), Ok(o_ik), Ok(o_jk)) =
                        (self.overlap(i, j), self.overlap(i, k), self.overlap(j, k))
                    else {
                        continue;
                    };
                    for _ in 0..samples {
                        let x = o_ij.domain.sample(rng)?;
                        if !o_ik.domain.contains(&x) {
                            continue;
                        }
                        let x_j = self.base_map(i, j, &x)?;
                        if !o_jk.domain.contains(&x_j) {
                            continue;
                        }
                        let lhs = self.transition_element(i, k, &x)?;
                        let rhs = self
                            .transition_element(i, j, &x)?
                            .mul(&self.transition_element(j, k, &x_j)?)?;
                        let residual = fro_norm(&(lhs.matrix() - rhs.matrix()));
                        report.max_triple_residual = report.max_triple_residual.max(residual);
                        report.triples_checked += 1;
                    }
                }
            }
        }
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// The circle bundle over the sphere, in two stereographic charts
// ---------------------------------------------------------------------------

/// The unit-sphere circle bundle in its standard two-chart atlas:
/// chart "north" covers everything but the south pole, chart "south"
/// everything but the north pole; both are stereographic-coordinate disks of
/// radius 2 and overlap on the shell `0.5 <= |x| <= 2`. The base transition
/// is the coordinate inversion `x / |x|^2` and the fiber transition is the
/// unit complex number `(x1 + i x2) / |x|`.
pub fn hopf_bundle() -> Result<ChartedBundle> {
    use crate::expr::parse;
    let fiber = crate::liegroup::u1();
    let north = Chart {
        name: "north".into(),
        coords: vec!["x1".into(), "x2".into()],
        domain: ChartDomain::Ball {
            center: vec![0.0, 0.0],
            radius: 2.0,
        },
    };
    let south = Chart {
        name: "south".into(),
        coords: vec!["y1".into(), "y2".into()],
        domain: ChartDomain::Ball {
            center: vec![0.0, 0.0],
            radius: 2.0,
        },
    };
    let shell = |_: ()| ChartDomain::Annulus {
        center: vec![0.0, 0.0],
        inner: 0.5,
        outer: 2.0,
    };
    let o01 = Overlap::from_exprs(
        0,
        1,
        shell(()),
        &north,
        Some(vec![
            parse("x1 / (x1^2 + x2^2)")?,
            parse("x2 / (x1^2 + x2^2)")?,
        ]),
        vec![vec![(
            parse("x1 / sqrt(x1^2 + x2^2)")?,
            parse("x2 / sqrt(x1^2 + x2^2)")?,
        )]],
        &fiber,
    )?;
    let o10 = Overlap::from_exprs(
        1,
        0,
        shell(()),
        &south,
        Some(vec![
            parse("y1 / (y1^2 + y2^2)")?,
            parse("y2 / (y1^2 + y2^2)")?,
        ]),
        vec![vec![(
            parse("y1 / sqrt(y1^2 + y2^2)")?,
            parse("0 - y2 / sqrt(y1^2 + y2^2)")?,
        )]],
        &fiber,
    )?;
    ChartedBundle::new("hopf", fiber, vec![north, south], vec![o01, o10])
}

/// Closed-form local section of the sphere's circle bundle, valued in the
/// 2x2 special unitary group (the global total space): chart 0 gives
/// `rows [[1, -(x1 + i x2)], ...] / sqrt(1 + |x|^2)`, chart 1 gives
/// `rows [[y1 + i y2, -1], ...] / sqrt(1 + |y|^2)`.
pub fn hopf_section(chart: usize, x: &[f64]) -> Result<GroupElement> {
    use crate::liegroup::su2;
    if x.len() != 2 {
        return Err(Error::Dimension("section wants 2 base coordinates".into()));
    }
    let norm2 = x[0] * x[0] + x[1] * x[1];
    let scale = 1.0 / (1.0 + norm2).sqrt();
    let (s, t) = match chart {
        0 => (cplx(scale, 0.0), cplx(-x[0] * scale, -x[1] * scale)),
        1 => (cplx(x[0] * scale, x[1] * scale), cplx(-scale, 0.0)),
        other => return Err(Error::UnknownChart(other, 2)),
    };
    let m = CMat::from_row_slice(2, 2, &[s, t, -t.conj(), s.conj()]);
    GroupElement::from_matrix(&su2(), m)
}

/// Inverse stereographic projection for a chart of the two-chart sphere
/// atlas: the base point on the unit sphere represented by `x`.
pub fn hopf_base_point(chart: usize, x: &[f64]) -> Result<[f64; 3]> {
    if x.len() != 2 {
        return Err(Error::Dimension("base point wants 2 coordinates".into()));
    }
    let norm2 = x[0] * x[0] + x[1] * x[1];
    let denom = 1.0 + norm2;
    match chart {
        0 => Ok([2.0 * x[0] / denom, 2.0 * x[1] / denom, (1.0 - norm2) / denom]),
        1 => Ok([2.0 * x[0] / denom, 2.0 * x[1] / denom, (norm2 - 1.0) / denom]),
        other => Err(Error::UnknownChart(other, 2)),
    }
}

/// Global total-space matrix represented by a trivialized point of the
/// two-chart circle bundle: `q_chart(x) * embed(h)`.
pub fn hopf_global(p: &BundlePoint) -> Result<GroupElement> {
    let section = hopf_section(p.chart, &p.x)?;
    section.mul(&crate::liegroup::embed_u1_su2(&p.h)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{hopf_project, random_element, su2, u1, AlgebraElement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn annulus_point(rng: &mut ChaCha8Rng) -> Vec<f64> {
        ChartDomain::Annulus {
            center: vec![0.0, 0.0],
            inner: 0.5,
            outer: 2.0,
        }
        .sample(rng)
        .unwrap()
    }

    #[test]
    fn domains_contain_and_sample() {
        let annulus = ChartDomain::Annulus {
            center: vec![1.0, 0.0],
            inner: 0.5,
            outer: 2.0,
        };
        assert!(annulus.contains(&[2.0, 0.0]));
        assert!(!annulus.contains(&[1.1, 0.0]));
        assert!(!annulus.contains(&[4.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = annulus.sample(&mut rng).unwrap();
            assert!(annulus.contains(&x));
        }
        assert!(annulus.contains(&annulus.center_point()));
    }

    #[test]
    fn two_chart_atlas_round_trips_points() {
        let bundle = hopf_bundle().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = annulus_point(&mut rng);
            let h = random_element(&u1(), &mut rng, 3.0);
            let p = BundlePoint::new(0, x, h);
            let q = bundle.to_chart(&p, 1).unwrap();
            let back = bundle.to_chart(&q, 0).unwrap();
            assert!((back.x[0] - p.x[0]).abs() < 1e-12);
            assert!((back.x[1] - p.x[1]).abs() < 1e-12);
            assert!(fro_norm(&(back.h.matrix() - p.h.matrix())) < 1e-12);
        }
    }

    #[test]
    fn transition_matches_section_relation() {
        // q_j(phi(x)) == q_i(x) * embed(g_ij(x)) on the overlap.
        let bundle = hopf_bundle().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = annulus_point(&mut rng);
            let y = bundle.base_map(0, 1, &x).unwrap();
            let g01 = bundle.transition_element(0, 1, &x).unwrap();
            let lhs = hopf_section(1, &y).unwrap();
            let rhs = hopf_section(0, &x)
                .unwrap()
                .mul(&crate::liegroup::embed_u1_su2(&g01).unwrap())
                .unwrap();
            assert!(fro_norm(&(lhs.matrix() - rhs.matrix())) < 1e-12);
        }
    }

    #[test]
    fn global_point_is_chart_independent_and_projects_to_base() {
        let bundle = hopf_bundle().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = annulus_point(&mut rng);
            let h = random_element(&u1(), &mut rng, 3.0);
            let p = BundlePoint::new(0, x, h);
            let q = bundle.to_chart(&p, 1).unwrap();
            let gp = hopf_global(&p).unwrap();
            let gq = hopf_global(&q).unwrap();
            assert!(fro_norm(&(gp.matrix() - gq.matrix())) < 1e-12);

            let projected = hopf_project(&gp).unwrap();
            let base = hopf_base_point(0, &p.x).unwrap();
            for k in 0..3 {
                assert!((projected[k] - base[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cocycle_check_passes_on_the_two_chart_atlas() {
        let bundle = hopf_bundle().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = bundle.cocycle_check(50, &mut rng).unwrap();
        assert!(report.pairs_checked >= 50);
        assert!(report.max_residual() < 1e-10, "{report:?}");
    }

    #[test]
    fn cocycle_check_flags_inconsistent_triple() {
        // Three box charts sharing coordinates; g_02 deliberately wrong.
        let fiber = su2();
        let boxy = || ChartDomain::Box {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let chart = |name: &str| Chart {
            name: name.into(),
            coords: vec!["u1".into(), "u2".into()],
            domain: boxy(),
        };
        let elt = |k: usize, t: f64| {
            AlgebraElement::basis_vector(&fiber, k)
                .scale(t)
                .exp()
        };
        let overlaps = vec![
            Overlap::constant(0, 1, boxy(), elt(0, 0.3)),
            Overlap::constant(1, 2, boxy(), elt(1, 0.2)),
            Overlap::constant(0, 2, boxy(), identity(&fiber)),
        ];
        let bundle = ChartedBundle::new(
            "broken",
            fiber,
            vec![chart("a"), chart("b"), chart("c")],
            overlaps,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let report = bundle.cocycle_check(20, &mut rng).unwrap();
        assert!(report.max_pair_residual < 1e-12);
        assert!(report.max_triple_residual > 0.1, "{report:?}");
    }

    #[test]
    fn chart_errors_are_reported() {
        let bundle = hopf_bundle().unwrap();
        assert!(matches!(
            bundle.chart(7),
            Err(Error::UnknownChart(7, 2))
        ));
        assert!(matches!(
            bundle.check_point(0, &[5.0, 0.0]),
            Err(Error::OutOfChart { chart: 0, .. })
        ));
        // Inside the chart but outside the overlap shell.
        assert!(matches!(
            bundle.transition_element(0, 1, &[0.1, 0.0]),
            Err(Error::OutOfChart { .. })
        ));
    }

    #[test]
    fn right_translation_conjugates_fiber_component() {
        let g = random_element(&su2(), &mut ChaCha8Rng::seed_from_u64(8), 1.0);
        let v = TangentVector::new(
            RVec::from_vec(vec![1.0, 2.0]),
            RVec::from_vec(vec![0.3, -0.1, 0.7]),
        );
        let moved = v.right_translated(&g).unwrap();
        assert_eq!(moved.base, v.base);
        let expected = g
            .inverse()
            .ad(&AlgebraElement::new(&su2(), v.fiber.clone()).unwrap())
            .unwrap();
        assert!((moved.fiber - expected.coords()).norm() < 1e-12);
    }
}
