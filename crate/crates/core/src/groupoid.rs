//! The trivial extension groupoid over a charted bundle, with its
//! structure-group action, plus the gauge/action isomorphism example.
//!
//! Arrows are triples `(target, label, source)`: two points of the total
//! space and a label in the extension group H. Composition multiplies labels
//! (`(w, h₂, v) ∘ (v, h₁, u) = (w, h₂ h₁, u)`), and the structure group acts
//! on arrows by
//!
//! ```text
//! (v, h, u) · g = (v g, ρ(g^{-1}) h, u g),
//! ```
//!
//! which requires the group-level form of the action.
//!
//! The gauge/action example: the unit-quaternion group is a principal
//! `{±I}`-bundle over the rotation group; its gauge groupoid (pairs modulo
//! the diagonal sign) is isomorphic to the action groupoid of the group
//! acting on its sign quotient via `⟨g₁, g₂⟩ ↦ (g₁ g₂^{-1}, [g₂])`. The
//! isomorphism is functorial on the nose, which the residual check verifies.

use rand::Rng;

use crate::algebroid::GAction;
use crate::bundle::BundlePoint;
use crate::liegroup::{identity, random_element, Group, GroupElement};
use crate::linalg::{flatten_complex, fro_norm};
use crate::{Error, Result};

/// Coordinate tolerance for arrow composability.
pub const COMPOSE_TOL: f64 = 1e-9;

fn points_match(a: &BundlePoint, b: &BundlePoint) -> bool {
    a.chart == b.chart
        && a.x.len() == b.x.len()
        && a.x
            .iter()
            .zip(&b.x)
            .all(|(u, v)| (u - v).abs() <= COMPOSE_TOL)
        && fro_norm(&(a.h.matrix() - b.h.matrix())) <= COMPOSE_TOL
}

/// An arrow `(target, label, source)` of the trivial extension groupoid.
#[derive(Debug, Clone)]
pub struct Arrow {
    pub target: BundlePoint,
    pub label: GroupElement,
    pub source: BundlePoint,
}

impl Arrow {
    pub fn new(target: BundlePoint, label: GroupElement, source: BundlePoint) -> Arrow {
        Arrow {
            target,
            label,
            source,
        }
    }

    /// Unit arrow at a point.
    pub fn unit(p: &BundlePoint, h_group: &Group) -> Arrow {
        Arrow {
            target: p.clone(),
            label: identity(h_group),
            source: p.clone(),
        }
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Arrow) -> Result<Arrow> {
        if !points_match(&self.source, &other.target) {
            return Err(Error::NotComposable {
                src: self.source.x.clone(),
                dst: other.target.x.clone(),
            });
        }
        Ok(Arrow {
            target: self.target.clone(),
            label: self.label.mul(&other.label)?,
            source: other.source.clone(),
        })
    }

    pub fn inverse(&self) -> Arrow {
        Arrow {
            target: self.source.clone(),
            label: self.label.inverse(),
            source: self.target.clone(),
        }
    }

    /// The structure-group action `(v, h, u) · g = (vg, ρ(g^{-1}) h, ug)`.
    pub fn act(&self, g: &GroupElement, action: &GAction) -> Result<Arrow> {
        let label = action
            .apply_on_group(&g.inverse(), &self.label)
            .ok_or_else(|| {
                Error::Domain("arrow action needs a group-level structure action".into())
            })??;
        Ok(Arrow {
            target: crate::algebroid::translate_point(&self.target, g)?,
            label,
            source: crate::algebroid::translate_point(&self.source, g)?,
        })
    }
}

fn arrow_distance(a: &Arrow, b: &Arrow) -> f64 {
    let label = fro_norm(&(a.label.matrix() - b.label.matrix()));
    let src: f64 = a
        .source
        .x
        .iter()
        .zip(&b.source.x)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    let dst: f64 = a
        .target
        .x
        .iter()
        .zip(&b.target.x)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    let fibers = fro_norm(&(a.source.h.matrix() - b.source.h.matrix()))
        + fro_norm(&(a.target.h.matrix() - b.target.h.matrix()));
    label + src + dst + fibers
}

/// Largest violation of the groupoid axioms and of the compatibility between
/// composition and the structure-group action, over random samples in one
/// chart.
pub fn pbg_axioms_residual(
    bundle: &std::sync::Arc<crate::bundle::ChartedBundle>,
    h_group: &Group,
    action: &GAction,
    chart: usize,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let g_group = bundle.fiber();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let u = bundle.random_point(chart, rng)?;
        let v = bundle.random_point(chart, rng)?;
        let w = bundle.random_point(chart, rng)?;
        let z = bundle.random_point(chart, rng)?;
        let h1 = random_element(h_group, rng, 1.2);
        let h2 = random_element(h_group, rng, 1.2);
        let h3 = random_element(h_group, rng, 1.2);
        let a1 = Arrow::new(v.clone(), h1, u.clone());
        let a2 = Arrow::new(w.clone(), h2, v.clone());
        let a3 = Arrow::new(z.clone(), h3, w.clone());

        // Associativity.
        let left = a3.compose(&a2)?.compose(&a1)?;
        let right = a3.compose(&a2.compose(&a1)?)?;
        worst = worst.max(arrow_distance(&left, &right));

        // Units.
        let unit_target = Arrow::unit(&v, h_group);
        worst = worst.max(arrow_distance(&unit_target.compose(&a1)?, &a1));
        let unit_source = Arrow::unit(&u, h_group);
        worst = worst.max(arrow_distance(&a1.compose(&unit_source)?, &a1));

        // Inverses.
        let round = a1.compose(&a1.inverse())?;
        worst = worst.max(arrow_distance(&round, &Arrow::unit(&v, h_group)));

        // Action laws (when the action has a group-level form).
        if action.has_group_level() {
            let g1 = random_element(g_group, rng, 1.0);
            let g2 = random_element(g_group, rng, 1.0);

            // Functoriality: (a2 ∘ a1) · g = (a2 · g) ∘ (a1 · g).
            let lhs = a2.compose(&a1)?.act(&g1, action)?;
            let rhs = a2.act(&g1, action)?.compose(&a1.act(&g1, action)?)?;
            worst = worst.max(arrow_distance(&lhs, &rhs));

            // Right-action law: (a · g1) · g2 = a · (g1 g2).
            let lhs = a1.act(&g1, action)?.act(&g2, action)?;
            let rhs = a1.act(&g1.mul(&g2)?, action)?;
            worst = worst.max(arrow_distance(&lhs, &rhs));

            // Units and inverses are preserved.
            let moved_unit = Arrow::unit(&u, h_group).act(&g1, action)?;
            let expected = Arrow::unit(&crate::algebroid::translate_point(&u, &g1)?, h_group);
            worst = worst.max(arrow_distance(&moved_unit, &expected));
            let inv_act = a1.inverse().act(&g1, action)?;
            let act_inv = a1.act(&g1, action)?.inverse();
            worst = worst.max(arrow_distance(&inv_act, &act_inv));
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Gauge groupoid of the sign bundle vs. its action groupoid
// ---------------------------------------------------------------------------

/// Canonical representative of the coset `{g, -g}`: flip the sign so the
/// first flattened component of magnitude above 0.3 is positive. (Rows of a
/// unitary matrix have unit norm, so such a component always exists.)
pub fn canonical_sign_rep(g: &GroupElement) -> GroupElement {
    let flat = flatten_complex(g.matrix());
    for value in flat.iter() {
        if value.abs() > 0.3 {
            if *value < 0.0 {
                return GroupElement::from_matrix_unchecked(g.group(), g.matrix().map(|z| -z));
            }
            return g.clone();
        }
    }
    g.clone()
}

/// An arrow `⟨a, b⟩` of the gauge groupoid: the pair `(a, b)` modulo the
/// diagonal sign, pointing from the coset `[b]` to the coset `[a]`.
#[derive(Debug, Clone)]
pub struct GaugePair {
    pub a: GroupElement,
    pub b: GroupElement,
}

impl GaugePair {
    /// Compose `self ∘ other` after aligning representatives: requires
    /// `[self.b] = [other.a]`.
    pub fn compose(&self, other: &GaugePair) -> Result<GaugePair> {
        for sign in [1.0f64, -1.0] {
            let candidate = other.a.matrix().map(|z| z * sign);
            if fro_norm(&(self.b.matrix() - &candidate)) < COMPOSE_TOL {
                let b = GroupElement::from_matrix_unchecked(
                    other.b.group(),
                    other.b.matrix().map(|z| z * sign),
                );
                return Ok(GaugePair {
                    a: self.a.clone(),
                    b,
                });
            }
        }
        Err(Error::NotComposable {
            src: vec![],
            dst: vec![],
        })
    }

    pub fn inverse(&self) -> GaugePair {
        GaugePair {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

/// The isomorphism onto the action groupoid:
/// `⟨a, b⟩ ↦ (a b^{-1}, [b])` with the coset in canonical form.
pub fn gauge_to_action(pair: &GaugePair) -> Result<(GroupElement, GroupElement)> {
    let m = pair.a.mul(&pair.b.inverse())?;
    Ok((m, canonical_sign_rep(&pair.b)))
}

/// Compose in the action groupoid: `(m₁, x₁) ∘ (m₂, x₂)` requires
/// `x₁ = [m₂ x₂]` and yields `(m₁ m₂, x₂)`.
pub fn action_compose(
    lhs: &(GroupElement, GroupElement),
    rhs: &(GroupElement, GroupElement),
) -> Result<(GroupElement, GroupElement)> {
    let moved = canonical_sign_rep(&rhs.0.mul(&rhs.1)?);
    let here = canonical_sign_rep(&lhs.1);
    if fro_norm(&(moved.matrix() - here.matrix())) > COMPOSE_TOL {
        return Err(Error::NotComposable {
            src: vec![],
            dst: vec![],
        });
    }
    Ok((lhs.0.mul(&rhs.0)?, rhs.1.clone()))
}

/// Largest functoriality violation of the gauge-to-action isomorphism over
/// random samples: composition, units, and inverses must match exactly.
pub fn gauge_action_iso_residual(
    group: &Group,
    rng: &mut impl Rng,
    samples: usize,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let g1 = random_element(group, rng, 1.4);
        let g2 = random_element(group, rng, 1.4);
        let g4 = random_element(group, rng, 1.4);
        // Random representative of the middle coset.
        let sign = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
        let g3 = GroupElement::from_matrix_unchecked(group, g2.matrix().map(|z| z * sign));

        let p1 = GaugePair {
            a: g1.clone(),
            b: g2.clone(),
        };
        let p2 = GaugePair {
            a: g3,
            b: g4.clone(),
        };

        // φ(p1 ∘ p2) = φ(p1) ∘ φ(p2).
        let lhs = gauge_to_action(&p1.compose(&p2)?)?;
        let rhs = action_compose(&gauge_to_action(&p1)?, &gauge_to_action(&p2)?)?;
        worst = worst.max(fro_norm(&(lhs.0.matrix() - rhs.0.matrix())));
        worst = worst.max(fro_norm(&(lhs.1.matrix() - rhs.1.matrix())));

        // Units map to units.
        let unit = GaugePair {
            a: g2.clone(),
            b: g2.clone(),
        };
        let (m, _) = gauge_to_action(&unit)?;
        worst = worst.max(m.dist_to_identity());

        // Inverses map to inverses: φ(p⁻¹).0 = φ(p).0⁻¹.
        let (m, _) = gauge_to_action(&p1)?;
        let (mi, _) = gauge_to_action(&p1.inverse())?;
        worst = worst.max(fro_norm(&(mi.matrix() - m.inverse().matrix())));

        // Well-definedness: the diagonal sign change fixes the image.
        let flipped = GaugePair {
            a: GroupElement::from_matrix_unchecked(group, g1.matrix().map(|z| -z)),
            b: GroupElement::from_matrix_unchecked(group, g2.matrix().map(|z| -z)),
        };
        let (m2, x2) = gauge_to_action(&flipped)?;
        let (m1, x1) = gauge_to_action(&p1)?;
        worst = worst.max(fro_norm(&(m1.matrix() - m2.matrix())));
        worst = worst.max(fro_norm(&(x1.matrix() - x2.matrix())));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{Chart, ChartDomain, ChartedBundle};
    use crate::liegroup::su2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn box_bundle() -> Arc<ChartedBundle> {
        Arc::new(
            ChartedBundle::new(
                "box",
                su2(),
                vec![Chart {
                    name: "main".into(),
                    coords: vec!["x1".into(), "x2".into()],
                    domain: ChartDomain::Box {
                        lo: vec![0.0, 0.0],
                        hi: vec![1.0, 1.0],
                    },
                }],
                vec![],
            )
            .unwrap(),
        )
    }

    #[test]
    fn axioms_hold_with_the_conjugation_action() {
        let bundle = box_bundle();
        let action = GAction::adjoint(&su2());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let residual =
            pbg_axioms_residual(&bundle, &su2(), &action, 0, &mut rng, 30).unwrap();
        assert!(residual < 1e-10, "residual {residual}");
    }

    #[test]
    fn composition_rejects_mismatched_points() {
        let bundle = box_bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = bundle.random_point(0, &mut rng).unwrap();
        let v = bundle.random_point(0, &mut rng).unwrap();
        let w = bundle.random_point(0, &mut rng).unwrap();
        let a1 = Arrow::new(v, identity(&su2()), u.clone());
        let a2 = Arrow::new(u, identity(&su2()), w); // source w != target v
        assert!(matches!(
            a2.compose(&a1),
            Err(Error::NotComposable { .. })
        ));
    }

    #[test]
    fn action_requires_group_level_form() {
        let bundle = box_bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = bundle.random_point(0, &mut rng).unwrap();
        let v = bundle.random_point(0, &mut rng).unwrap();
        let arrow = Arrow::new(v, identity(&su2()), u);
        let g = random_element(&su2(), &mut rng, 1.0);
        let matrix_only = GAction::from_matrices(
            "opaque",
            &su2(),
            std::sync::Arc::new(|g: &GroupElement| Ok(g.adjoint_matrix())),
        );
        assert!(arrow.act(&g, &matrix_only).is_err());
    }

    #[test]
    fn sign_canonicalization_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let g = random_element(&su2(), &mut rng, 1.4);
            let minus = GroupElement::from_matrix_unchecked(&su2(), g.matrix().map(|z| -z));
            let a = canonical_sign_rep(&g);
            let b = canonical_sign_rep(&minus);
            assert!(fro_norm(&(a.matrix() - b.matrix())) < 1e-14);
        }
    }

    #[test]
    fn gauge_action_isomorphism_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let residual = gauge_action_iso_residual(&su2(), &mut rng, 100).unwrap();
        assert!(residual < 1e-12, "residual {residual}");
    }
}
