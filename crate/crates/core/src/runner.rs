//! Check registry and runner.
//!
//! Every check has a stable public name, a prose description of the property
//! it verifies, a default tolerance, and a list of spec blocks it needs.
//! [`run`] executes the checks a spec requests against its compiled domain
//! objects, in the spec's order, each seeded independently from the document
//! seed so results do not depend on scheduling or check order.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebroid::{
    anchor_morphism_residual, bracket_equivariance_residual, field_from_exprs,
    hvalued_from_exprs, jacobi_residual, leibniz_residual, scalar_from_expr, AlgebroidSection,
    FieldFn, HValued,
};
use crate::bundle::{BundlePoint, ChartDomain, ChartedBundle};
use crate::connection::{
    adjoint_derivation_residual, adjoint_equivariance_residual, bianchi_residual,
    curvature_equivariance_residual, quotient_connection, random_tangent, Connection,
};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::groupoid::{gauge_action_iso_residual, pbg_axioms_residual};
use crate::holonomy::{holonomy, lift_properties, loop_family, span_comparison, PathSegment};
use crate::io::{CheckResult, CheckStatus, Compiled, Conventions, ExperimentSpec, Report};
use crate::liegroup::{
    embed_u1_su2, hopf_project, identity, random_element, su2, su2_to_so3, u1, u1_to_so2,
    GroupElement,
};
use crate::linalg::fro_norm;
use crate::transition::{
    alpha_inverse_residual, cocycle_residual, darboux_residual, equivariance_residual,
    local_sections_residual, maurer_cartan_residual, TransitionData, INTERIOR_MARGIN,
};

/// Spec blocks a check may require.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Action,
    Connection,
    Principal,
    Transition,
    /// At least one declared loop carrying an `expect_log`.
    LoopExpectation,
}

impl Block {
    pub fn label(&self) -> &'static str {
        match self {
            Block::Action => "action",
            Block::Connection => "connection",
            Block::Principal => "principal",
            Block::Transition => "transition",
            Block::LoopExpectation => "loops.expect_log",
        }
    }
}

/// Registry entry for one named check.
#[derive(Debug, Clone, Copy)]
pub struct CheckDef {
    /// Stable public identifier.
    pub name: &'static str,
    /// What the check verifies.
    pub property: &'static str,
    /// Default tolerance (overridable per spec or flag).
    pub tolerance: f64,
    /// Blocks the spec must provide.
    pub needs: &'static [Block],
}

const REGISTRY: &[CheckDef] = &[
    CheckDef {
        name: "pbg-axioms",
        property: "groupoid composition, units, inverses, and compatibility of the structure action with all three",
        tolerance: 1e-8,
        needs: &[Block::Action],
    },
    CheckDef {
        name: "jacobi",
        property: "cyclic bracket sum vanishes on random polynomial sections",
        tolerance: 1e-5,
        needs: &[],
    },
    CheckDef {
        name: "leibniz",
        property: "bracket satisfies the Leibniz rule over scalar multiplication",
        tolerance: 1e-5,
        needs: &[],
    },
    CheckDef {
        name: "anchor-morphism",
        property: "anchor maps section brackets to vector-field brackets",
        tolerance: 1e-5,
        needs: &[],
    },
    CheckDef {
        name: "bracket-equivariance",
        property: "structure action preserves the section bracket",
        tolerance: 1e-5,
        needs: &[Block::Action],
    },
    CheckDef {
        name: "isometablic",
        property: "connection form intertwines right translation with the induced algebra action",
        tolerance: 1e-5,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "curvature-equivariance",
        property: "curvature intertwines translated field pairs with the induced algebra action",
        tolerance: 1e-5,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "adjoint-equivariance",
        property: "connection-induced derivative commutes with the structure action",
        tolerance: 1e-4,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "adjoint-derivation",
        property: "connection-induced derivative is a bracket derivation",
        tolerance: 1e-4,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "bianchi",
        property: "cyclic covariant derivative of the curvature vanishes",
        tolerance: 1e-4,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "quotient-roundtrip",
        property: "a vertically vanishing connection is recovered from any auxiliary splitting",
        tolerance: 1e-6,
        needs: &[Block::Connection, Block::Principal],
    },
    CheckDef {
        name: "bundle-cocycle",
        property: "chart transition functions invert pairwise and compose on triple overlaps",
        tolerance: 1e-8,
        needs: &[],
    },
    CheckDef {
        name: "maurer-cartan",
        property: "transition forms satisfy the flatness structure equation",
        tolerance: 1e-4,
        needs: &[Block::Transition],
    },
    CheckDef {
        name: "cocycle",
        property: "transition forms and automorphisms compose across triple overlaps",
        tolerance: 1e-5,
        needs: &[Block::Transition],
    },
    CheckDef {
        name: "darboux",
        property: "automorphism log-derivative equals ad of the transition form",
        tolerance: 1e-5,
        needs: &[Block::Transition],
    },
    CheckDef {
        name: "thm01-equivariance",
        property: "transition forms and automorphisms are equivariant under the structure action",
        tolerance: 1e-5,
        needs: &[Block::Transition],
    },
    CheckDef {
        name: "local-sections",
        property: "pipeline transports define consistent, horizontal, multiplicative local trivializations",
        tolerance: 1e-5,
        needs: &[Block::Transition],
    },
    CheckDef {
        name: "lift-axioms",
        property: "path lifts respect constants, reparametrization, reversal, concatenation, and translation",
        tolerance: 1e-5,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "holonomy-closed-form",
        property: "loop holonomy logarithms match their declared values",
        tolerance: 1e-6,
        needs: &[Block::Connection, Block::LoopExpectation],
    },
    CheckDef {
        name: "ambrose-singer",
        property: "holonomy-log span agrees with the bracket-closed curvature span",
        tolerance: 1e-3,
        needs: &[Block::Connection],
    },
    CheckDef {
        name: "hopf-maps",
        property: "sphere projection is fiber invariant; covering maps are homomorphisms with sign kernels",
        tolerance: 1e-10,
        needs: &[],
    },
    CheckDef {
        name: "gauge-action-iso",
        property: "gauge-pair groupoid maps isomorphically onto its action groupoid",
        tolerance: 1e-10,
        needs: &[],
    },
];

/// All registered checks, in registry order.
pub fn registry() -> &'static [CheckDef] {
    REGISTRY
}

/// Find a check by its public name.
pub fn lookup(name: &str) -> Option<&'static CheckDef> {
    REGISTRY.iter().find(|def| def.name == name)
}

/// Effective run parameters (spec values, possibly overridden by a caller).
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub samples: usize,
    pub steps: usize,
    /// Per-check tolerance overrides (spec overrides merged with caller's).
    pub tolerances: BTreeMap<String, f64>,
}

impl RunOptions {
    pub fn from_spec(spec: &ExperimentSpec) -> RunOptions {
        RunOptions {
            seed: spec.file.seed,
            samples: spec.file.samples as usize,
            steps: spec.file.steps as usize,
            tolerances: spec.file.tolerances.clone(),
        }
    }

    pub fn tolerance_for(&self, def: &CheckDef) -> f64 {
        self.tolerances
            .get(def.name)
            .copied()
            .unwrap_or(def.tolerance)
    }
}

/// A finished run: the canonical report plus per-check wall times (seconds,
/// parallel to `report.checks`; not part of the report bytes).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub wall_seconds: Vec<f64>,
}

/// Run the checks a spec requests, in order, against its compiled objects.
pub fn run(spec: &ExperimentSpec, compiled: &Compiled, opts: &RunOptions) -> Result<RunOutcome> {
    let defs: Vec<&'static CheckDef> = spec
        .file
        .checks
        .iter()
        .map(|name| lookup(name).ok_or_else(|| Error::UnknownCheck(name.clone())))
        .collect::<Result<_>>()?;

    let outcomes: Vec<(CheckResult, f64)> = defs
        .par_iter()
        .map(|def| run_one(def, compiled, opts))
        .collect();

    let (checks, wall_seconds): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let pass = Report::all_passed(&checks);
    Ok(RunOutcome {
        report: Report {
            name: spec.file.name.clone(),
            spec_hash: spec.hash.clone(),
            seed: opts.seed,
            samples: opts.samples as u64,
            steps: opts.steps as u64,
            conventions: Conventions::default(),
            checks,
            pass,
        },
        wall_seconds,
    })
}

enum Outcome {
    Residual { value: f64, note: Option<String> },
    Skip(String),
}

fn value(residual: f64) -> Result<Outcome> {
    Ok(Outcome::Residual {
        value: residual,
        note: None,
    })
}

fn value_with(residual: f64, note: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome::Residual {
        value: residual,
        note: Some(note.into()),
    })
}

fn run_one(def: &'static CheckDef, compiled: &Compiled, opts: &RunOptions) -> (CheckResult, f64) {
    let started = Instant::now();
    let tolerance = opts.tolerance_for(def);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ name_seed(def.name));
    let outcome = dispatch(def.name, compiled, opts, &mut rng);
    let (residual, status, note) = match outcome {
        Ok(Outcome::Skip(reason)) => (0.0, CheckStatus::Skipped, Some(reason)),
        Ok(Outcome::Residual { value, note }) => {
            let status = if value <= tolerance {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            };
            (value, status, note)
        }
        Err(e) => (
            f64::MAX,
            CheckStatus::Fail,
            Some(format!("did not complete: {e}")),
        ),
    };
    (
        CheckResult {
            name: def.name.to_string(),
            property: def.property.to_string(),
            residual,
            tolerance,
            status,
            note,
        },
        started.elapsed().as_secs_f64(),
    )
}

/// FNV-1a over the check name; mixed into the seed so every check draws an
/// independent, order-insensitive stream.
fn name_seed(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn dispatch(
    name: &str,
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    match name {
        "pbg-axioms" => check_pbg_axioms(compiled, opts, rng),
        "jacobi" => check_jacobi(compiled, opts, rng),
        "leibniz" => check_leibniz(compiled, opts, rng),
        "anchor-morphism" => check_anchor_morphism(compiled, opts, rng),
        "bracket-equivariance" => check_bracket_equivariance(compiled, opts, rng),
        "isometablic" => check_isometablic(compiled, opts, rng),
        "curvature-equivariance" => check_curvature_equivariance(compiled, opts, rng),
        "adjoint-equivariance" => check_adjoint_equivariance(compiled, opts, rng),
        "adjoint-derivation" => check_adjoint_derivation(compiled, opts, rng),
        "bianchi" => check_bianchi(compiled, opts, rng),
        "quotient-roundtrip" => check_quotient_roundtrip(compiled, opts, rng),
        "bundle-cocycle" => check_bundle_cocycle(compiled, opts, rng),
        "maurer-cartan" => check_maurer_cartan(compiled, opts, rng),
        "cocycle" => check_cocycle(compiled, opts, rng),
        "darboux" => check_darboux(compiled, opts, rng),
        "thm01-equivariance" => check_thm01_equivariance(compiled, opts, rng),
        "local-sections" => check_local_sections(compiled, opts, rng),
        "lift-axioms" => check_lift_axioms(compiled, opts, rng),
        "holonomy-closed-form" => check_holonomy_closed_form(compiled, opts, rng),
        "ambrose-singer" => check_ambrose_singer(compiled, opts, rng),
        "hopf-maps" => check_hopf_maps(compiled, opts, rng),
        "gauge-action-iso" => check_gauge_action_iso(compiled, opts, rng),
        other => Err(Error::UnknownCheck(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Shared sampling helpers
// ---------------------------------------------------------------------------

fn need_connection<'a>(compiled: &'a Compiled, check: &str) -> Result<&'a Connection> {
    compiled.connection.as_ref().ok_or_else(|| Error::MissingBlock {
        check: check.into(),
        block: "connection".into(),
    })
}

fn need_transition<'a>(compiled: &'a Compiled, check: &str) -> Result<&'a TransitionData> {
    compiled.transition.as_ref().ok_or_else(|| Error::MissingBlock {
        check: check.into(),
        block: "transition".into(),
    })
}

/// Random point on the base-point chart: interior base coordinates (so finite
/// differences stay inside the domain) and a random fiber element.
fn sample_point(compiled: &Compiled, rng: &mut ChaCha8Rng) -> Result<BundlePoint> {
    let chart = compiled.basepoint.chart;
    let x = compiled
        .bundle
        .chart(chart)?
        .domain
        .sample_interior(INTERIOR_MARGIN, rng)?;
    Ok(BundlePoint::new(
        chart,
        x,
        random_element(compiled.bundle.fiber(), rng, 1.0),
    ))
}

/// Random polynomial (degree <= 2) in the chart coordinates.
fn random_poly(coords: &[String], rng: &mut ChaCha8Rng) -> Expr {
    let mut e = Expr::num(rng.random_range(-0.6..0.6));
    for name in coords {
        e = e.add(Expr::num(rng.random_range(-0.6..0.6)).mul(Expr::var(name.clone())));
    }
    for (k, a) in coords.iter().enumerate() {
        for b in &coords[k..] {
            e = e.add(
                Expr::num(rng.random_range(-0.4..0.4))
                    .mul(Expr::var(a.clone()))
                    .mul(Expr::var(b.clone())),
            );
        }
    }
    e
}

fn random_field(
    bundle: &Arc<ChartedBundle>,
    chart: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FieldFn> {
    let coords = bundle.chart(chart)?.coords.clone();
    let base: Vec<Expr> = (0..bundle.base_dim())
        .map(|_| random_poly(&coords, rng))
        .collect();
    let fiber: Vec<Expr> = (0..bundle.fiber().dim())
        .map(|_| random_poly(&coords, rng))
        .collect();
    field_from_exprs(bundle, chart, base, fiber)
}

fn random_hvalued(compiled: &Compiled, rng: &mut ChaCha8Rng) -> Result<HValued> {
    let chart = compiled.basepoint.chart;
    let coords = compiled.bundle.chart(chart)?.coords.clone();
    let entries: Vec<Expr> = (0..compiled.h_group.dim())
        .map(|_| random_poly(&coords, rng))
        .collect();
    hvalued_from_exprs(&compiled.bundle, chart, &compiled.h_group, entries)
}

fn random_section(compiled: &Compiled, rng: &mut ChaCha8Rng) -> Result<AlgebroidSection> {
    let x = random_field(&compiled.bundle, compiled.basepoint.chart, rng)?;
    let v = random_hvalued(compiled, rng)?;
    Ok(AlgebroidSection::new(x, v))
}

/// Distance from a point to its domain's boundary.
fn boundary_margin(domain: &ChartDomain, x: &[f64]) -> f64 {
    match domain {
        ChartDomain::Box { lo, hi } => x
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min),
        ChartDomain::Ball { center, radius } => {
            let d = dist(x, center);
            radius - d
        }
        ChartDomain::Annulus {
            center,
            inner,
            outer,
        } => {
            let d = dist(x, center);
            (outer - d).min(d - inner)
        }
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
// Check implementations
// ---------------------------------------------------------------------------

fn check_pbg_axioms(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let residual = pbg_axioms_residual(
        &compiled.bundle,
        &compiled.h_group,
        &compiled.action,
        compiled.basepoint.chart,
        rng,
        opts.samples,
    )?;
    value(residual)
}

fn check_jacobi(compiled: &Compiled, opts: &RunOptions, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let sections = [
            random_section(compiled, rng)?,
            random_section(compiled, rng)?,
            random_section(compiled, rng)?,
        ];
        let p = sample_point(compiled, rng)?;
        worst = worst.max(jacobi_residual(&sections, compiled.bundle.fiber(), &p)?);
    }
    value(worst)
}

fn check_leibniz(compiled: &Compiled, opts: &RunOptions, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let chart = compiled.basepoint.chart;
    let coords = compiled.bundle.chart(chart)?.coords.clone();
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let s1 = random_section(compiled, rng)?;
        let s2 = random_section(compiled, rng)?;
        let f = scalar_from_expr(&compiled.bundle, chart, random_poly(&coords, rng))?;
        let p = sample_point(compiled, rng)?;
        worst = worst.max(leibniz_residual(
            &s1,
            &s2,
            &f,
            compiled.bundle.fiber(),
            &p,
        )?);
    }
    value(worst)
}

fn check_anchor_morphism(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let s1 = random_section(compiled, rng)?;
        let s2 = random_section(compiled, rng)?;
        let p = sample_point(compiled, rng)?;
        worst = worst.max(anchor_morphism_residual(
            &s1,
            &s2,
            compiled.bundle.fiber(),
            &p,
        )?);
    }
    value(worst)
}

fn check_bracket_equivariance(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let s1 = random_section(compiled, rng)?;
        let s2 = random_section(compiled, rng)?;
        let g = random_element(&compiled.g_group, rng, 1.0);
        let p = sample_point(compiled, rng)?;
        worst = worst.max(bracket_equivariance_residual(
            &s1,
            &s2,
            &g,
            &compiled.action,
            compiled.bundle.fiber(),
            &p,
        )?);
    }
    value(worst)
}

fn check_isometablic(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "isometablic")?;
    value(conn.isometablic_residual_max(rng, opts.samples)?)
}

fn check_curvature_equivariance(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "curvature-equivariance")?;
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let p = sample_point(compiled, rng)?;
        let x = random_field(&compiled.bundle, p.chart, rng)?;
        let y = random_field(&compiled.bundle, p.chart, rng)?;
        let g = random_element(&compiled.g_group, rng, 1.0);
        worst = worst.max(curvature_equivariance_residual(conn, &p, &x, &y, &g)?);
    }
    value(worst)
}

fn check_adjoint_equivariance(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "adjoint-equivariance")?;
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let p = sample_point(compiled, rng)?;
        let x = random_field(&compiled.bundle, p.chart, rng)?;
        let v = random_hvalued(compiled, rng)?;
        let g = random_element(&compiled.g_group, rng, 1.0);
        worst = worst.max(adjoint_equivariance_residual(conn, &x, &v, &g, &p)?);
    }
    value(worst)
}

fn check_adjoint_derivation(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "adjoint-derivation")?;
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let p = sample_point(compiled, rng)?;
        let x = random_field(&compiled.bundle, p.chart, rng)?;
        let v = random_hvalued(compiled, rng)?;
        let w = random_hvalued(compiled, rng)?;
        worst = worst.max(adjoint_derivation_residual(conn, &x, &v, &w, &p)?);
    }
    value(worst)
}

fn check_bianchi(compiled: &Compiled, opts: &RunOptions, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let conn = need_connection(compiled, "bianchi")?;
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let p = sample_point(compiled, rng)?;
        let fields = [
            random_field(&compiled.bundle, p.chart, rng)?,
            random_field(&compiled.bundle, p.chart, rng)?,
            random_field(&compiled.bundle, p.chart, rng)?,
        ];
        worst = worst.max(bianchi_residual(conn, &fields, &p)?);
    }
    value(worst)
}

fn check_quotient_roundtrip(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "quotient-roundtrip")?;
    let delta = compiled
        .principal
        .as_ref()
        .ok_or_else(|| Error::MissingBlock {
            check: "quotient-roundtrip".into(),
            block: "principal".into(),
        })?;
    let q1 = quotient_connection(conn, delta, rng, 25)?;
    let q2 = match &compiled.principal2 {
        Some(d2) => Some(quotient_connection(conn, d2, rng, 25)?),
        None => None,
    };
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        let p = sample_point(compiled, rng)?;
        let v = random_tangent(&compiled.bundle, rng);
        let original = conn.eval(&p, &v)?;
        let through = q1.eval(&p, &v)?;
        worst = worst.max(through.sub(&original)?.norm());
        if let Some(q2) = &q2 {
            worst = worst.max(q2.eval(&p, &v)?.sub(&through)?.norm());
        }
    }
    match q2 {
        Some(_) => value_with(worst, "round trip and splitting independence"),
        None => value_with(worst, "round trip only (one splitting given)"),
    }
}

fn check_bundle_cocycle(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let report = compiled.bundle.cocycle_check(opts.samples, rng)?;
    let residual = report.max_pair_residual.max(report.max_triple_residual);
    if report.pairs_checked == 0 && report.triples_checked == 0 {
        return value_with(0.0, "no overlaps declared; nothing to compose");
    }
    value_with(
        residual,
        format!(
            "{} pair and {} triple samples",
            report.pairs_checked, report.triples_checked
        ),
    )
}

fn check_maurer_cartan(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let data = need_transition(compiled, "maurer-cartan")?;
    let mut worst = 0.0f64;
    for (i, j) in data.pairs() {
        worst = worst.max(maurer_cartan_residual(data, i, j, rng, opts.samples)?);
    }
    value(worst)
}

fn check_cocycle(compiled: &Compiled, opts: &RunOptions, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let data = need_transition(compiled, "cocycle")?;
    let pairs = data.pairs();
    let mut triples = Vec::new();
    for &(i, j) in &pairs {
        for &(j2, k) in &pairs {
            if j2 == j && k != i && pairs.contains(&(i, k)) {
                triples.push((i, j, k));
            }
        }
    }
    if triples.is_empty() {
        return Ok(Outcome::Skip("no triple overlaps declared".into()));
    }
    let mut worst = 0.0f64;
    for (i, j, k) in triples {
        worst = worst.max(cocycle_residual(data, i, j, k, rng, opts.samples)?);
    }
    // Degenerate composition identities on every pair.
    for (i, j) in pairs {
        worst = worst.max(alpha_inverse_residual(data, i, j, rng, opts.samples)?);
    }
    value(worst)
}

fn check_darboux(compiled: &Compiled, opts: &RunOptions, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let data = need_transition(compiled, "darboux")?;
    let mut worst = 0.0f64;
    for (i, j) in data.pairs() {
        worst = worst.max(darboux_residual(data, i, j, rng, opts.samples)?);
    }
    value(worst)
}

fn check_thm01_equivariance(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let data = need_transition(compiled, "thm01-equivariance")?;
    let mut worst = 0.0f64;
    for (i, j) in data.pairs() {
        worst = worst.max(equivariance_residual(data, i, j, rng, opts.samples)?);
    }
    value_with(worst, format!("action mode: {}", data.mode.label()))
}

fn check_local_sections(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let data = need_transition(compiled, "local-sections")?;
    match data.family() {
        Some(family) => value(local_sections_residual(family, rng, opts.samples)?),
        None => Ok(Outcome::Skip(
            "explicit transition data carries no transports".into(),
        )),
    }
}

fn check_lift_axioms(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "lift-axioms")?;
    let chart = compiled.basepoint.chart;
    let domain = &compiled.bundle.chart(chart)?.domain;
    let center = &compiled.basepoint.x;
    let amp_max = 0.35 * boundary_margin(domain, center);
    let tau = std::f64::consts::TAU;
    let mut worst = 0.0f64;
    let mut equivariance_seen = false;
    for _ in 0..3 {
        let coords: Vec<Expr> = center
            .iter()
            .map(|c| {
                let a = amp_max * rng.random_range(0.3..1.0);
                let phase = rng.random_range(0.0..tau);
                // c + a*sin(tau*t + phase): smooth, stays inside the domain.
                parse(&format!("{c} + {a}*sin({tau}*t + {phase})")).expect("well formed")
            })
            .collect();
        let seg = PathSegment::new(chart, coords, identity(compiled.bundle.fiber()));
        let g = random_element(&compiled.g_group, rng, 1.0);
        let props = lift_properties(conn, &seg, Some(&g), opts.steps)?;
        equivariance_seen |= props.equivariance.is_some();
        worst = worst.max(props.max_residual());
    }
    if equivariance_seen {
        value(worst)
    } else {
        value_with(worst, "translation law skipped: action has no group-level form")
    }
}

fn check_holonomy_closed_form(
    compiled: &Compiled,
    opts: &RunOptions,
    _rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "holonomy-closed-form")?;
    let mut worst = 0.0f64;
    let mut used = 0usize;
    for lp in &compiled.loops {
        let Some(expected) = &lp.expect_log else {
            continue;
        };
        used += 1;
        let hol = holonomy(conn, &lp.path, opts.steps)?;
        let log = hol.log()?;
        let diff: f64 = log
            .coords()
            .iter()
            .zip(expected)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff);
    }
    if used == 0 {
        return Err(Error::MissingBlock {
            check: "holonomy-closed-form".into(),
            block: "loops.expect_log".into(),
        });
    }
    value_with(worst, format!("{used} loop(s) with declared logs"))
}

fn check_ambrose_singer(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let conn = need_connection(compiled, "ambrose-singer")?;
    let chart = compiled.basepoint.chart;
    let domain = &compiled.bundle.chart(chart)?.domain;
    let margin = boundary_margin(domain, &compiled.basepoint.x);
    let s_max = margin / 1.8;
    let scales: Vec<f64> = [0.2, 0.4, 0.6, 0.8, 1.0]
        .iter()
        .map(|f| f * s_max)
        .collect();
    let mut loops = loop_family(
        chart,
        &compiled.basepoint.x,
        &scales,
        &identity(compiled.bundle.fiber()),
    );
    loops.extend(
        compiled
            .loops
            .iter()
            .filter(|l| l.path.start().is_ok_and(|p| p.chart == chart))
            .map(|l| l.path.clone()),
    );
    let cmp = span_comparison(conn, chart, &loops, opts.steps, opts.samples, rng)?;
    let note = format!(
        "holonomy span dim {} vs curvature span dim {}",
        cmp.holonomy_dim, cmp.curvature_dim
    );
    if cmp.holonomy_dim != cmp.curvature_dim {
        let gap = cmp.holonomy_dim.abs_diff(cmp.curvature_dim) as f64;
        return value_with(1.0 + gap, note);
    }
    let worst_angle = cmp.angles.iter().copied().fold(0.0f64, f64::max);
    value_with(cmp.containment.max(worst_angle), note)
}

fn check_hopf_maps(
    _compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let su2 = su2();
    let u1 = u1();
    let mut worst = 0.0f64;
    for _ in 0..opts.samples {
        // Fiber invariance of the sphere projection, and unit norm.
        let q = random_element(&su2, rng, 1.4);
        let z = random_element(&u1, rng, 1.4);
        let p = hopf_project(&q)?;
        let moved = hopf_project(&q.mul(&embed_u1_su2(&z)?)?)?;
        let drift = p
            .iter()
            .zip(&moved)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(drift);
        let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((norm - 1.0).abs());

        // Double covers are homomorphisms...
        let a = random_element(&su2, rng, 1.4);
        let b = random_element(&su2, rng, 1.4);
        let lhs = su2_to_so3(&a.mul(&b)?)?;
        let rhs = su2_to_so3(&a)?.mul(&su2_to_so3(&b)?)?;
        worst = worst.max(fro_norm(&(lhs.matrix() - rhs.matrix())));
        let za = random_element(&u1, rng, 1.4);
        let zb = random_element(&u1, rng, 1.4);
        let lhs = u1_to_so2(&za.mul(&zb)?)?;
        let rhs = u1_to_so2(&za)?.mul(&u1_to_so2(&zb)?)?;
        worst = worst.max(fro_norm(&(lhs.matrix() - rhs.matrix())));

        // ...whose kernels are exactly the sign pair.
        let minus_a = GroupElement::from_matrix(&su2, a.matrix().map(|v| -v))?;
        worst = worst.max(fro_norm(
            &(su2_to_so3(&minus_a)?.matrix() - su2_to_so3(&a)?.matrix()),
        ));
        let eye_so2 = identity(&crate::liegroup::so2());
        for sign in [1.0, -1.0] {
            let zk = GroupElement::from_matrix(&u1, crate::linalg::CMat::from_element(1, 1, crate::linalg::cplx(sign, 0.0)))?;
            worst = worst.max(fro_norm(&(u1_to_so2(&zk)?.matrix() - eye_so2.matrix())));
        }
        let w = za.matrix()[(0, 0)];
        if (w - crate::linalg::cplx(1.0, 0.0)).norm() > 0.3
            && (w + crate::linalg::cplx(1.0, 0.0)).norm() > 0.3
            && fro_norm(&(u1_to_so2(&za)?.matrix() - eye_so2.matrix())) < 0.05
        {
            // A far-from-sign element mapping to the identity breaks the kernel claim.
            worst = worst.max(1.0);
        }
    }
    value(worst)
}

fn check_gauge_action_iso(
    compiled: &Compiled,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    value(gauge_action_iso_residual(&compiled.h_group, rng, opts.samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::spec_from_str;

    #[test]
    fn registry_names_are_unique_and_resolvable() {
        let mut names: Vec<&str> = REGISTRY.iter().map(|d| d.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), REGISTRY.len());
        assert_eq!(REGISTRY.len(), 22);
        for def in REGISTRY {
            assert!(lookup(def.name).is_some());
            assert!(def.tolerance > 0.0);
            assert!(!def.property.is_empty());
        }
        assert!(lookup("nope").is_none());
    }

    fn flat_spec_text(checks: &str) -> String {
        format!(
            r#"{{
            "pbglab_spec": 1,
            "name": "runner-test",
            "seed": 5,
            "samples": 8,
            "steps": 64,
            "extension_group": "su2",
            "bundle": {{
                "structure_group": "su2",
                "charts": [
                    {{"name": "main", "coords": ["x1", "x2"],
                     "domain": {{"kind": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]}}}}
                ]
            }},
            "action": "adjoint",
            "connection": {{"omega": [[
                ["0", "0", "0", "0", "0"],
                ["0", "0", "0", "0", "0"],
                ["0", "0", "0", "0", "0"]
            ]]}},
            "checks": {checks}
        }}"#
        )
    }

    #[test]
    fn flat_connection_passes_its_suite() {
        let spec = spec_from_str(&flat_spec_text(
            r#"["jacobi", "leibniz", "anchor-morphism", "isometablic", "bianchi"]"#,
        ))
        .unwrap();
        let compiled = crate::io::compile(&spec).unwrap();
        let opts = RunOptions::from_spec(&spec);
        let outcome = run(&spec, &compiled, &opts).unwrap();
        assert!(outcome.report.pass, "{:?}", outcome.report.checks);
        assert_eq!(outcome.report.checks.len(), 5);
        assert_eq!(outcome.wall_seconds.len(), 5);
        for check in &outcome.report.checks {
            assert_eq!(check.status, CheckStatus::Pass, "{check:?}");
        }
    }

    #[test]
    fn runs_are_deterministic_given_seed() {
        let spec = spec_from_str(&flat_spec_text(r#"["jacobi", "isometablic"]"#)).unwrap();
        let compiled = crate::io::compile(&spec).unwrap();
        let opts = RunOptions::from_spec(&spec);
        let a = run(&spec, &compiled, &opts).unwrap();
        let b = run(&spec, &compiled, &opts).unwrap();
        assert_eq!(
            crate::io::report_to_string(&a.report).unwrap(),
            crate::io::report_to_string(&b.report).unwrap()
        );
        let mut other = opts.clone();
        other.seed = 6;
        let c = run(&spec, &compiled, &other).unwrap();
        assert_ne!(
            crate::io::report_to_string(&a.report).unwrap(),
            crate::io::report_to_string(&c.report).unwrap()
        );
    }

    #[test]
    fn non_isometablic_connection_fails_the_check() {
        // omega = xi_1 E_1: flat but moved by the adjoint action.
        let text = flat_spec_text(r#"["isometablic"]"#).replace(
            r#"["0", "0", "0", "0", "0"],
                ["0", "0", "0", "0", "0"],
                ["0", "0", "0", "0", "0"]"#,
            r#"["0", "0", "1", "0", "0"],
                ["0", "0", "0", "0", "0"],
                ["0", "0", "0", "0", "0"]"#,
        );
        let spec = spec_from_str(&text).unwrap();
        let compiled = crate::io::compile(&spec).unwrap();
        let outcome = run(&spec, &compiled, &RunOptions::from_spec(&spec)).unwrap();
        assert!(!outcome.report.pass);
        let check = &outcome.report.checks[0];
        assert_eq!(check.status, CheckStatus::Fail);
        assert!(check.residual > 1e-2, "residual {}", check.residual);
    }

    #[test]
    fn tolerance_overrides_change_the_verdict() {
        let spec = spec_from_str(&flat_spec_text(r#"["isometablic"]"#)).unwrap();
        let compiled = crate::io::compile(&spec).unwrap();
        let mut opts = RunOptions::from_spec(&spec);
        opts.tolerances.insert("isometablic".into(), 1e-300);
        let outcome = run(&spec, &compiled, &opts).unwrap();
        // A zero-residual check still passes even at an absurd tolerance...
        assert!(outcome.report.pass);
        // ...and the report records the override.
        assert_eq!(outcome.report.checks[0].tolerance, 1e-300);
    }

    #[test]
    fn hopf_and_gauge_checks_run_standalone() {
        let spec = spec_from_str(&flat_spec_text(r#"["hopf-maps", "gauge-action-iso"]"#)).unwrap();
        let compiled = crate::io::compile(&spec).unwrap();
        let outcome = run(&spec, &compiled, &RunOptions::from_spec(&spec)).unwrap();
        assert!(outcome.report.pass, "{:?}", outcome.report.checks);
        for check in &outcome.report.checks {
            assert!(check.residual < 1e-10);
        }
    }
}
