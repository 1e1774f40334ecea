//! Path lifting, holonomy, and the curvature-span comparison.
//!
//! A connection lifts a path `c` in the total space to a curve in the
//! extension group H by the trivialized lift equation
//!
//! ```text
//! h'(t) = -ω(ċ(t)) · h(t),      h(0) = e,
//! ```
//!
//! integrated with classical fourth-order Runge–Kutta and a polar
//! renormalization after every step. The lift is functorial in the expected
//! ways: constant paths lift to the identity, lifts are invariant under
//! orientation-preserving reparametrization, reversal inverts, concatenation
//! multiplies (`lift(c₂ · c₁) = lift(c₂) lift(c₁)`), and for an isometablic
//! connection with a group-level action, `lift(R_g ∘ c) = ρ(g^{-1}) lift(c)`.
//!
//! The holonomy of a family of loops, via logarithms, spans a subalgebra of
//! `h` that is compared against the Lie-algebra closure of the curvature
//! values — the curvature span bounds the holonomy span from above, and the
//! two agree on the worked examples.

use rand::Rng;

use crate::bundle::{BundlePoint, TangentVector};
use crate::connection::{frame_field, Connection};
use crate::expr::{eval, parse, Env, Expr};
use crate::liegroup::{identity, AlgebraElement, GroupElement};
use crate::linalg::{
    containment_residual, fro_norm, orthonormal_span, principal_angles, polar_unitary, RMat,
    RVec, SPAN_SV_CUTOFF,
};
use crate::{Error, Result};

/// Finite-difference step for path velocities.
pub const PATH_FD_STEP: f64 = 1e-6;
/// Default Runge–Kutta steps per path segment.
pub const DEFAULT_LIFT_STEPS: usize = 200;
/// Guard: per-step increment `‖ω(ċ)‖ dt` beyond this aborts the integration.
pub const STEP_MAGNITUDE_GUARD: f64 = 1.0;
/// Endpoint mismatch allowed in a closed loop.
pub const LOOP_CLOSURE_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

/// One smooth piece of a path: base coordinates as expressions in `t` over
/// `[0, 1]`, at a constant fiber element.
#[derive(Debug, Clone)]
pub struct PathSegment {
    pub chart: usize,
    pub coords: Vec<Expr>,
    pub fiber: GroupElement,
}

impl PathSegment {
    pub fn new(chart: usize, coords: Vec<Expr>, fiber: GroupElement) -> PathSegment {
        PathSegment {
            chart,
            coords,
            fiber,
        }
    }

    /// Straight line between two coordinate tuples.
    pub fn line(chart: usize, from: &[f64], to: &[f64], fiber: GroupElement) -> PathSegment {
        let coords = from
            .iter()
            .zip(to)
            .map(|(a, b)| Expr::num(*a).add(Expr::var("t").mul(Expr::num(b - a))))
            .collect();
        PathSegment {
            chart,
            coords,
            fiber,
        }
    }

    pub fn point(&self, t: f64) -> Result<BundlePoint> {
        let mut env = Env::new();
        env.set("t", t);
        let x: Result<Vec<f64>> = self.coords.iter().map(|e| eval(e, &env)).collect();
        Ok(BundlePoint::new(self.chart, x?, self.fiber.clone()))
    }

    /// Central-difference velocity, fiber part zero.
    pub fn velocity(&self, t: f64) -> Result<TangentVector> {
        let mut plus = Env::new();
        plus.set("t", t + PATH_FD_STEP);
        let mut minus = Env::new();
        minus.set("t", t - PATH_FD_STEP);
        let mut base = RVec::zeros(self.coords.len());
        for (k, expr) in self.coords.iter().enumerate() {
            base[k] = (eval(expr, &plus)? - eval(expr, &minus)?) / (2.0 * PATH_FD_STEP);
        }
        Ok(TangentVector::new(base, RVec::zeros(self.fiber.group().dim())))
    }

    /// Substitute `t -> phi(t)`.
    pub fn reparametrized(&self, phi: &Expr) -> PathSegment {
        PathSegment {
            chart: self.chart,
            coords: self
                .coords
                .iter()
                .map(|c| c.substitute("t", phi))
                .collect(),
            fiber: self.fiber.clone(),
        }
    }

    /// Orientation reversal `t -> 1 - t`.
    pub fn reversed(&self) -> PathSegment {
        let phi = Expr::num(1.0).sub(Expr::var("t"));
        self.reparametrized(&phi)
    }

    /// Right-translate the segment: constant fiber moves to `fiber · g`.
    pub fn translated(&self, g: &GroupElement) -> Result<PathSegment> {
        Ok(PathSegment {
            chart: self.chart,
            coords: self.coords.clone(),
            fiber: self.fiber.mul(g)?,
        })
    }
}

/// A piecewise path: segments traversed in order, each over `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Path {
    pub segments: Vec<PathSegment>,
}

impl Path {
    pub fn single(segment: PathSegment) -> Path {
        Path {
            segments: vec![segment],
        }
    }

    pub fn concat(first: &Path, second: &Path) -> Path {
        let mut segments = first.segments.clone();
        segments.extend(second.segments.iter().cloned());
        Path { segments }
    }

    pub fn reversed(&self) -> Path {
        Path {
            segments: self.segments.iter().rev().map(|s| s.reversed()).collect(),
        }
    }

    pub fn translated(&self, g: &GroupElement) -> Result<Path> {
        Ok(Path {
            segments: self
                .segments
                .iter()
                .map(|s| s.translated(g))
                .collect::<Result<_>>()?,
        })
    }

    pub fn start(&self) -> Result<BundlePoint> {
        self.segments
            .first()
            .ok_or(Error::BadLoop("empty path".into()))?
            .point(0.0)
    }

    pub fn end(&self) -> Result<BundlePoint> {
        self.segments
            .last()
            .ok_or(Error::BadLoop("empty path".into()))?
            .point(1.0)
    }

    /// Verify segment continuity; returns the largest coordinate jump.
    pub fn continuity_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for pair in self.segments.windows(2) {
            let a = pair[0].point(1.0)?;
            let b = pair[1].point(0.0)?;
            if a.chart != b.chart {
                return Err(Error::BadLoop(
                    "consecutive segments lie in different charts".into(),
                ));
            }
            let jump = a
                .x
                .iter()
                .zip(&b.x)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            let fiber_jump = fro_norm(&(a.h.matrix() - b.h.matrix()));
            worst = worst.max(jump).max(fiber_jump);
        }
        Ok(worst)
    }

    /// Closure defect between the end point and the start point.
    pub fn closure_defect(&self) -> Result<f64> {
        let a = self.end()?;
        let b = self.start()?;
        if a.chart != b.chart {
            return Err(Error::BadLoop("loop ends in a different chart".into()));
        }
        let jump = a
            .x
            .iter()
            .zip(&b.x)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        Ok(jump.max(fro_norm(&(a.h.matrix() - b.h.matrix()))))
    }
}

/// Axis-aligned rectangle loop in a coordinate plane, counterclockwise from
/// `corner`, at a constant fiber element.
pub fn rectangle_loop(
    chart: usize,
    corner: &[f64],
    plane: (usize, usize),
    sides: (f64, f64),
    fiber: GroupElement,
) -> Path {
    let (a, b) = plane;
    let (sa, sb) = sides;
    let p0 = corner.to_vec();
    let mut p1 = corner.to_vec();
    p1[a] += sa;
    let mut p2 = p1.clone();
    p2[b] += sb;
    let mut p3 = corner.to_vec();
    p3[b] += sb;
    let segments = vec![
        PathSegment::line(chart, &p0, &p1, fiber.clone()),
        PathSegment::line(chart, &p1, &p2, fiber.clone()),
        PathSegment::line(chart, &p2, &p3, fiber.clone()),
        PathSegment::line(chart, &p3, &p0, fiber),
    ];
    Path { segments }
}

/// Two rectangle loops joined by a connecting segment (holonomies multiply,
/// so the logarithm picks up commutator directions).
pub fn two_rectangle_loop(
    chart: usize,
    corner1: &[f64],
    corner2: &[f64],
    plane: (usize, usize),
    sides: (f64, f64),
    fiber: GroupElement,
) -> Path {
    let r1 = rectangle_loop(chart, corner1, plane, sides, fiber.clone());
    let go = Path::single(PathSegment::line(chart, corner1, corner2, fiber.clone()));
    let r2 = rectangle_loop(chart, corner2, plane, sides, fiber.clone());
    let back = Path::single(PathSegment::line(chart, corner2, corner1, fiber));
    Path::concat(&Path::concat(&Path::concat(&r1, &go), &r2), &back)
}

// ---------------------------------------------------------------------------
// The lift
// ---------------------------------------------------------------------------

fn coefficient_matrix(conn: &Connection, seg: &PathSegment, t: f64) -> Result<crate::linalg::CMat> {
    let p = seg.point(t)?;
    let v = seg.velocity(t)?;
    let omega = conn.eval(&p, &v)?;
    Ok(omega.matrix().map(|z| -z))
}

/// Integrate the left-linear group ODE `h'(t) = A(t) h(t)`, `h(0) = e`, over
/// `[0, 1]` with classical RK4 and a polar renormalization after every step.
/// For a connection lift the coefficient is `A(t) = -ω(ċ(t))`.
pub fn integrate_linear_ode<F>(
    h_group: &crate::liegroup::Group,
    coeff: F,
    steps: usize,
) -> Result<GroupElement>
where
    F: Fn(f64) -> Result<crate::linalg::CMat>,
{
    if steps == 0 {
        return Err(Error::ZeroSteps);
    }
    let dt = 1.0 / steps as f64;
    let mut h = identity(h_group).matrix().clone();
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let a0 = coeff(t0)?;
        let magnitude = fro_norm(&a0) * dt;
        if magnitude > STEP_MAGNITUDE_GUARD {
            return Err(Error::StepTooLarge { magnitude });
        }
        let a_mid = coeff(t0 + 0.5 * dt)?;
        let a1 = coeff(t0 + dt)?;
        let scale = |m: &crate::linalg::CMat, s: f64| m.map(|z| z * s);
        let k1 = &a0 * &h;
        let k2 = &a_mid * &(&h + scale(&k1, 0.5 * dt));
        let k3 = &a_mid * &(&h + scale(&k2, 0.5 * dt));
        let k4 = &a1 * &(&h + scale(&k3, dt));
        h += scale(&(k1 + scale(&k2, 2.0) + scale(&k3, 2.0) + k4), dt / 6.0);
        h = polar_unitary(&h)?;
    }
    GroupElement::from_matrix_unchecked(h_group, h).renormalize()
}

/// Lift one segment: RK4 on `h' = -ω(ċ) h` with per-step renormalization.
pub fn lift_segment(conn: &Connection, seg: &PathSegment, steps: usize) -> Result<GroupElement> {
    let bundle = conn.bundle();
    let result = integrate_linear_ode(
        conn.h_group(),
        |t| {
            let p = seg.point(t)?;
            bundle
                .check_point(p.chart, &p.x)
                .map_err(|_| Error::PathLeavesChart { chart: p.chart, t })?;
            coefficient_matrix(conn, seg, t)
        },
        steps,
    )?;
    let final_point = seg.point(1.0)?;
    bundle
        .check_point(final_point.chart, &final_point.x)
        .map_err(|_| Error::PathLeavesChart {
            chart: final_point.chart,
            t: 1.0,
        })?;
    Ok(result)
}

/// Lift a piecewise path: the product of segment lifts, later segments on
/// the left.
pub fn lift(conn: &Connection, path: &Path, steps: usize) -> Result<GroupElement> {
    let defect = path.continuity_defect()?;
    if defect > LOOP_CLOSURE_TOL {
        return Err(Error::BadLoop(format!(
            "segments do not join continuously (defect {defect:.3e})"
        )));
    }
    let mut total = identity(conn.h_group());
    for seg in &path.segments {
        total = lift_segment(conn, seg, steps)?.mul(&total)?;
    }
    Ok(total)
}

/// Holonomy of a closed loop.
pub fn holonomy(conn: &Connection, loop_path: &Path, steps: usize) -> Result<GroupElement> {
    let closure = loop_path.closure_defect()?;
    if closure > LOOP_CLOSURE_TOL {
        return Err(Error::BadLoop(format!(
            "loop does not close (defect {closure:.3e})"
        )));
    }
    lift(conn, loop_path, steps)
}

/// Parallel transport along the straight line between two coordinate tuples.
pub fn transport_line(
    conn: &Connection,
    chart: usize,
    from: &[f64],
    to: &[f64],
    fiber: &GroupElement,
    steps: usize,
) -> Result<GroupElement> {
    let seg = PathSegment::line(chart, from, to, fiber.clone());
    lift_segment(conn, &seg, steps)
}

// ---------------------------------------------------------------------------
// Lift axioms report
// ---------------------------------------------------------------------------

/// Residuals of the lift's functorial properties on a given path.
#[derive(Debug, Clone)]
pub struct LiftProperties {
    pub constant_path: f64,
    pub reparametrization: f64,
    pub derivative_consistency: f64,
    pub inverse: f64,
    pub concatenation: f64,
    pub equivariance: Option<f64>,
    pub convergence_ratio: f64,
}

impl LiftProperties {
    /// The worst residual (convergence enters as a pass/fail on order).
    pub fn max_residual(&self) -> f64 {
        let mut worst = self
            .constant_path
            .max(self.reparametrization)
            .max(self.derivative_consistency)
            .max(self.inverse)
            .max(self.concatenation);
        if let Some(e) = self.equivariance {
            worst = worst.max(e);
        }
        worst
    }
}

/// Measure the lift axioms on a smooth single-segment path.
///
/// `g` is used for the equivariance test when the connection's action has a
/// group-level form (the residual is `None` otherwise).
pub fn lift_properties(
    conn: &Connection,
    seg: &PathSegment,
    g: Option<&GroupElement>,
    steps: usize,
) -> Result<LiftProperties> {
    let h_group = conn.h_group();
    let eye = identity(h_group);

    // Constant path at the segment start.
    let start = seg.point(0.0)?;
    let constant = PathSegment::new(
        seg.chart,
        start.x.iter().map(|v| Expr::num(*v)).collect(),
        start.h.clone(),
    );
    let constant_path = fro_norm(&(lift_segment(conn, &constant, steps)?.matrix() - eye.matrix()));

    // Reparametrization by t^2 (fixed endpoints, zero initial speed).
    let phi = parse("t^2")?;
    let reference = lift_segment(conn, seg, steps)?;
    let reparam = lift_segment(conn, &seg.reparametrized(&phi), 2 * steps)?;
    let reparametrization = fro_norm(&(reparam.matrix() - reference.matrix()));

    // Derivative consistency: over [0, eps] the lift is
    // exp(-eps ω(ċ(eps/2))) + O(eps^3).
    let eps = 1e-3;
    let shrink = Expr::var("t").mul(Expr::num(eps));
    let short = lift_segment(conn, &seg.reparametrized(&shrink), 16)?;
    let mid_point = seg.point(eps / 2.0)?;
    let mid_velocity = seg.velocity(eps / 2.0)?;
    let predicted = conn.eval(&mid_point, &mid_velocity)?.scale(-eps).exp();
    let derivative_consistency = fro_norm(&(short.matrix() - predicted.matrix()));

    // Reversal inverts.
    let backwards = lift_segment(conn, &seg.reversed(), steps)?;
    let inverse = fro_norm(&(backwards.mul(&reference)?.matrix() - eye.matrix()));

    // Concatenation of the two halves multiplies.
    let first_half = seg.reparametrized(&parse("t / 2")?);
    let second_half = seg.reparametrized(&parse("0.5 + t / 2")?);
    let product = lift_segment(conn, &second_half, steps)?
        .mul(&lift_segment(conn, &first_half, steps)?)?;
    let concatenation = fro_norm(&(product.matrix() - reference.matrix()));

    // Equivariance under the structure-group action.
    let equivariance = match g {
        Some(g) if conn.action().has_group_level() => {
            let moved = lift_segment(conn, &seg.translated(g)?, steps)?;
            let expected = conn
                .action()
                .apply_on_group(&g.inverse(), &reference)
                .expect("group-level action")?;
            Some(fro_norm(&(moved.matrix() - expected.matrix())))
        }
        _ => None,
    };

    // Step-halving convergence ratio (order four means ratio about 16; the
    // check requires at least 8).
    let fine = lift_segment(conn, seg, 8 * steps)?;
    let coarse_error = fro_norm(&(lift_segment(conn, seg, steps / 2)?.matrix() - fine.matrix()));
    let half_error = fro_norm(&(lift_segment(conn, seg, steps)?.matrix() - fine.matrix()));
    let convergence_ratio = if half_error > 1e-14 {
        coarse_error / half_error
    } else {
        f64::INFINITY
    };

    Ok(LiftProperties {
        constant_path,
        reparametrization,
        derivative_consistency,
        inverse,
        concatenation,
        equivariance,
        convergence_ratio,
    })
}

// ---------------------------------------------------------------------------
// Holonomy span against curvature span
// ---------------------------------------------------------------------------

/// Deterministic loop family in a chart: rectangles in every base coordinate
/// plane at several scales and corner offsets around `center`, plus joined
/// rectangle pairs (their logarithms pick up commutator directions).
pub fn loop_family(
    chart: usize,
    center: &[f64],
    scales: &[f64],
    fiber: &GroupElement,
) -> Vec<Path> {
    let n = center.len();
    let mut loops = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            for &s in scales {
                let offsets = [(-s, -s), (-s, 0.0), (0.0, -s), (0.0, 0.0)];
                for (da, db) in offsets {
                    let mut corner = center.to_vec();
                    corner[a] += da;
                    corner[b] += db;
                    loops.push(rectangle_loop(chart, &corner, (a, b), (s, s), fiber.clone()));
                }
                // A joined pair across the center.
                let mut c1 = center.to_vec();
                c1[a] -= s;
                c1[b] -= s;
                let mut c2 = center.to_vec();
                c2[a] += 0.2 * s;
                c2[b] += 0.1 * s;
                loops.push(two_rectangle_loop(
                    chart,
                    &c1,
                    &c2,
                    (a, b),
                    (s, s),
                    fiber.clone(),
                ));
            }
        }
    }
    loops
}

/// Orthonormal span of the normalized holonomy logarithms of a loop family.
pub fn holonomy_span(conn: &Connection, loops: &[Path], steps: usize) -> Result<RMat> {
    let mut vectors: Vec<RVec> = Vec::new();
    for loop_path in loops {
        let hol = holonomy(conn, loop_path, steps)?;
        let log = hol.log()?;
        let norm = log.norm();
        if norm > 1e-9 {
            vectors.push(log.coords() / norm);
        }
    }
    Ok(orthonormal_span(
        &vectors,
        conn.h_group().dim(),
        SPAN_SV_CUTOFF,
    ))
}

/// Orthonormal span of normalized curvature values over random points and
/// all coordinate-frame pairs, then closed under the Lie bracket.
pub fn curvature_span_closure(
    conn: &Connection,
    chart: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<RMat> {
    let bundle = conn.bundle();
    let n = bundle.base_dim();
    let dg = bundle.fiber().dim();
    let dh = conn.h_group().dim();
    let mut vectors: Vec<RVec> = Vec::new();
    for _ in 0..samples {
        let p = bundle.random_point(chart, rng)?;
        for a in 0..(n + dg) {
            for b in (a + 1)..(n + dg) {
                let x = frame_field(n, dg, a);
                let y = frame_field(n, dg, b);
                let value = conn.curvature(&p, &x, &y)?;
                let norm = value.norm();
                if norm > 1e-9 {
                    vectors.push(value.coords() / norm);
                }
            }
        }
    }
    // Close under the bracket.
    let h_group = conn.h_group();
    for _ in 0..dh {
        let span = orthonormal_span(&vectors, dh, SPAN_SV_CUTOFF);
        let rank_before = span.ncols();
        let basis: Vec<AlgebraElement> = (0..rank_before)
            .map(|k| AlgebraElement::new(h_group, span.column(k).into_owned()))
            .collect::<Result<_>>()?;
        let mut grew = false;
        for i in 0..rank_before {
            for j in (i + 1)..rank_before {
                let bracket = basis[i].bracket(&basis[j])?;
                let norm = bracket.norm();
                if norm > 1e-9 {
                    let candidate = bracket.coords() / norm;
                    let residual = if rank_before == 0 {
                        1.0
                    } else {
                        let cols = vec![candidate.clone()];
                        containment_residual(&orthonormal_span(&cols, dh, SPAN_SV_CUTOFF), &span)
                    };
                    if residual > 1e-6 {
                        vectors.push(candidate);
                        grew = true;
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    Ok(orthonormal_span(&vectors, dh, SPAN_SV_CUTOFF))
}

/// Comparison between the holonomy span and the curvature-span closure.
#[derive(Debug, Clone)]
pub struct SpanComparison {
    pub holonomy_dim: usize,
    pub curvature_dim: usize,
    /// How far the holonomy span sticks out of the curvature closure
    /// (zero means contained).
    pub containment: f64,
    /// Principal angles between the spans when the dimensions agree.
    pub angles: Vec<f64>,
}

/// Run the span comparison for one chart.
pub fn span_comparison(
    conn: &Connection,
    chart: usize,
    loops: &[Path],
    steps: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<SpanComparison> {
    let hol = holonomy_span(conn, loops, steps)?;
    let curv = curvature_span_closure(conn, chart, samples, rng)?;
    let containment = if hol.ncols() == 0 {
        0.0
    } else {
        containment_residual(&hol, &curv)
    };
    let angles = if hol.ncols() == curv.ncols() && hol.ncols() > 0 {
        principal_angles(&hol, &curv)
    } else {
        Vec::new()
    };
    Ok(SpanComparison {
        holonomy_dim: hol.ncols(),
        curvature_dim: curv.ncols(),
        containment,
        angles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::GAction;
    use crate::bundle::{Chart, ChartDomain, ChartedBundle};
    use std::sync::Arc;
    use crate::connection::ConnectionForm;
    use crate::liegroup::{su2, trivial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Bundle over the unit box with trivial structure group (the fiber plays
    /// no role; paths live in the base).
    fn flat_box() -> Arc<ChartedBundle> {
        Arc::new(
            ChartedBundle::new(
                "plane-box",
                trivial(),
                vec![Chart {
                    name: "main".into(),
                    coords: vec!["x1".into(), "x2".into()],
                    domain: ChartDomain::Box {
                        lo: vec![-0.2, -0.2],
                        hi: vec![1.2, 1.2],
                    },
                }],
                vec![],
            )
            .unwrap(),
        )
    }

    /// `ω = x1 dx2 ⊗ E1` — abelian image, closed-form holonomy.
    fn area_connection(bundle: &Arc<ChartedBundle>) -> Connection {
        let form: ConnectionForm = Arc::new(|p: &BundlePoint, v: &TangentVector| {
            AlgebraElement::new(
                &su2(),
                RVec::from_vec(vec![p.x[0] * v.base[1], 0.0, 0.0]),
            )
        });
        Connection::new(
            bundle.clone(),
            su2(),
            GAction::trivial(&su2()),
            vec![form],
        )
        .unwrap()
    }

    /// `ω = x1 dx2 ⊗ E1 + x2 dx1 ⊗ E2` — full-closure example.
    fn skew_connection(bundle: &Arc<ChartedBundle>) -> Connection {
        let form: ConnectionForm = Arc::new(|p: &BundlePoint, v: &TangentVector| {
            AlgebraElement::new(
                &su2(),
                RVec::from_vec(vec![p.x[0] * v.base[1], p.x[1] * v.base[0], 0.0]),
            )
        });
        Connection::new(
            bundle.clone(),
            su2(),
            GAction::trivial(&su2()),
            vec![form],
        )
        .unwrap()
    }

    fn zero_connection(bundle: &Arc<ChartedBundle>) -> Connection {
        let form: ConnectionForm = Arc::new(|_p: &BundlePoint, _v: &TangentVector| {
            Ok(AlgebraElement::zero(&su2()))
        });
        Connection::new(
            bundle.clone(),
            su2(),
            GAction::trivial(&su2()),
            vec![form],
        )
        .unwrap()
    }

    #[test]
    fn unit_square_matches_closed_form() {
        let bundle = flat_box();
        let conn = area_connection(&bundle);
        let square = rectangle_loop(0, &[0.0, 0.0], (0, 1), (1.0, 1.0), identity(&trivial()));
        let hol = holonomy(&conn, &square, 200).unwrap();
        // Line integral of x1 dx2 over the unit square is 1, so the holonomy
        // is exp(-E1) and the log has unit length.
        let expected = AlgebraElement::basis_vector(&su2(), 0).scale(-1.0).exp();
        assert!(fro_norm(&(hol.matrix() - expected.matrix())) < 1e-9);
        let log = hol.log().unwrap();
        assert!((log.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn holonomy_scales_with_enclosed_area() {
        let bundle = flat_box();
        let conn = area_connection(&bundle);
        for (corner, sides) in [
            ([0.1, 0.2], (0.5, 0.4)),
            ([0.3, 0.1], (0.2, 0.7)),
        ] {
            let area = sides.0 * sides.1;
            let lp = rectangle_loop(0, &corner, (0, 1), sides, identity(&trivial()));
            let hol = holonomy(&conn, &lp, 200).unwrap();
            let log = hol.log().unwrap();
            let expected = AlgebraElement::basis_vector(&su2(), 0).scale(-area);
            assert!(log.sub(&expected).unwrap().norm() < 1e-9);
        }
    }

    #[test]
    fn lift_properties_hold_on_a_smooth_path() {
        let bundle = flat_box();
        let conn = skew_connection(&bundle);
        let seg = PathSegment::new(
            0,
            vec![
                parse("0.2 + 0.6*t").unwrap(),
                parse("0.3 + 0.5*t*t").unwrap(),
            ],
            identity(&trivial()),
        );
        let props = lift_properties(&conn, &seg, None, 200).unwrap();
        assert!(props.constant_path < 1e-12, "{props:?}");
        assert!(props.reparametrization < 1e-7, "{props:?}");
        assert!(props.derivative_consistency < 1e-7, "{props:?}");
        assert!(props.inverse < 1e-9, "{props:?}");
        assert!(props.concatenation < 1e-9, "{props:?}");
        assert!(props.convergence_ratio > 8.0, "{props:?}");
    }

    #[test]
    fn guards_fire_on_bad_inputs() {
        let bundle = flat_box();
        let conn = area_connection(&bundle);
        let seg = PathSegment::line(0, &[0.0, 0.0], &[1.0, 1.0], identity(&trivial()));
        assert!(matches!(
            lift_segment(&conn, &seg, 0),
            Err(Error::ZeroSteps)
        ));
        // Leaves the chart.
        let escape = PathSegment::line(0, &[0.0, 0.0], &[5.0, 0.0], identity(&trivial()));
        assert!(matches!(
            lift_segment(&conn, &escape, 50),
            Err(Error::PathLeavesChart { .. })
        ));
        // Open "loop".
        let open = Path::single(seg);
        assert!(matches!(
            holonomy(&conn, &open, 50),
            Err(Error::BadLoop(_))
        ));
    }

    #[test]
    fn zero_connection_has_trivial_spans() {
        let bundle = flat_box();
        let conn = zero_connection(&bundle);
        let loops = loop_family(0, &[0.5, 0.5], &[0.2, 0.4], &identity(&trivial()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = span_comparison(&conn, 0, &loops, 60, 10, &mut rng).unwrap();
        assert_eq!(report.holonomy_dim, 0);
        assert_eq!(report.curvature_dim, 0);
        assert!(report.containment < 1e-12);
    }

    #[test]
    fn abelian_connection_spans_one_direction() {
        let bundle = flat_box();
        let conn = area_connection(&bundle);
        let loops = loop_family(0, &[0.5, 0.5], &[0.2, 0.4], &identity(&trivial()));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let report = span_comparison(&conn, 0, &loops, 60, 10, &mut rng).unwrap();
        assert_eq!(report.holonomy_dim, 1, "{report:?}");
        assert_eq!(report.curvature_dim, 1, "{report:?}");
        assert!(report.containment < 1e-6);
        assert!(report.angles.iter().all(|a| *a < 1e-3), "{report:?}");
    }

    #[test]
    fn bracket_generating_connection_spans_everything() {
        let bundle = flat_box();
        let conn = skew_connection(&bundle);
        let loops = loop_family(0, &[0.5, 0.5], &[0.2, 0.4, 0.45], &identity(&trivial()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = span_comparison(&conn, 0, &loops, 60, 10, &mut rng).unwrap();
        assert_eq!(report.curvature_dim, 3, "{report:?}");
        assert_eq!(report.holonomy_dim, 3, "{report:?}");
        assert!(report.containment < 1e-6);
        assert!(report.angles.iter().all(|a| *a < 1e-3), "{report:?}");
    }

    #[test]
    fn lift_is_equivariant_for_conjugation_actions() {
        // Structure group SU(2) acting on itself; ω = Ad(g^{-1})(x1 dx2 E1) + ξ.
        let bundle = Arc::new(
            ChartedBundle::new(
                "adjoint-box",
                su2(),
                vec![Chart {
                    name: "main".into(),
                    coords: vec!["x1".into(), "x2".into()],
                    domain: ChartDomain::Box {
                        lo: vec![-0.2, -0.2],
                        hi: vec![1.2, 1.2],
                    },
                }],
                vec![],
            )
            .unwrap(),
        );
        let form: ConnectionForm = Arc::new(|p: &BundlePoint, v: &TangentVector| {
            let base = AlgebraElement::new(
                &su2(),
                RVec::from_vec(vec![p.x[0] * v.base[1], 0.0, 0.0]),
            )?;
            p.h.inverse()
                .ad(&base)?
                .add(&AlgebraElement::new(&su2(), v.fiber.clone())?)
        });
        let conn = Connection::new(
            bundle.clone(),
            su2(),
            GAction::adjoint(&su2()),
            vec![form],
        )
        .unwrap();
        let seg = PathSegment::new(
            0,
            vec![
                parse("0.1 + 0.8*t").unwrap(),
                parse("0.2 + 0.6*t").unwrap(),
            ],
            identity(&su2()),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = crate::liegroup::random_element(&su2(), &mut rng, 1.0);
        let props = lift_properties(&conn, &seg, Some(&g), 150).unwrap();
        let equivariance = props.equivariance.expect("group-level action available");
        assert!(equivariance < 1e-8, "{props:?}");
    }
}
