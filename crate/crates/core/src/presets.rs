//! Example experiment specs shipped with the library.
//!
//! Each preset is a complete JSON document that [`crate::io::spec_from_str`]
//! accepts. They double as documentation of the spec format:
//!
//! * `hopf` — the circle bundle over the sphere in two stereographic charts,
//!   with the flat vertical connection, its transition pipeline, and the
//!   fibration maps;
//! * `ambrose-singer-su2` — a two-term connection over a box whose holonomy
//!   fills the whole extension algebra;
//! * `transition-pipeline` — three charts over the unit box with
//!   single-generator flat forms, exercising the full overlap calculus
//!   including triple cocycles;
//! * `holonomy-square` — a connection with a closed-form unit-square
//!   holonomy, declared as a loop expectation;
//! * `not-isometablic` — a deliberately broken connection (flat, but moved
//!   by the structure action) whose verification must fail.

pub const HOPF: &str = include_str!("../specs/hopf.json");
pub const AMBROSE_SINGER_SU2: &str = include_str!("../specs/ambrose-singer-su2.json");
pub const TRANSITION_PIPELINE: &str = include_str!("../specs/transition-pipeline.json");
pub const HOLONOMY_SQUARE: &str = include_str!("../specs/holonomy-square.json");
pub const NOT_ISOMETABLIC: &str = include_str!("../specs/not-isometablic.json");

/// Every shipped preset as `(name, spec text)`, in display order.
pub fn all() -> &'static [(&'static str, &'static str)] {
    &[
        ("hopf", HOPF),
        ("ambrose-singer-su2", AMBROSE_SINGER_SU2),
        ("transition-pipeline", TRANSITION_PIPELINE),
        ("holonomy-square", HOLONOMY_SQUARE),
        ("not-isometablic", NOT_ISOMETABLIC),
    ]
}

/// Look a preset up by name.
pub fn named(name: &str) -> Option<&'static str> {
    all().iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{compile, spec_from_str, CheckStatus};
    use crate::runner::{run, RunOptions};

    #[test]
    fn every_preset_loads_and_compiles() {
        for (name, text) in all() {
            let spec = spec_from_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&spec.file.name, name);
            let compiled = compile(&spec).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(compiled.bundle.chart_count() >= 1);
            for check in &spec.file.checks {
                assert!(crate::runner::lookup(check).is_some(), "{name}: {check}");
            }
        }
    }

    #[test]
    fn preset_names_are_unique() {
        let mut names: Vec<&str> = all().iter().map(|(n, _)| *n).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), all().len());
        assert!(named("hopf").is_some());
        assert!(named("bogus").is_none());
    }

    #[test]
    fn hopf_preset_runs_its_pinned_check_list() {
        let spec = spec_from_str(HOPF).unwrap();
        assert_eq!(
            spec.file.checks,
            vec![
                "hopf-maps",
                "gauge-action-iso",
                "bundle-cocycle",
                "pbg-axioms",
                "local-sections",
                "maurer-cartan",
                "darboux",
                "thm01-equivariance",
                "lift-axioms",
            ]
        );
    }

    #[test]
    fn broken_preset_fails_verification() {
        let spec = spec_from_str(NOT_ISOMETABLIC).unwrap();
        let compiled = compile(&spec).unwrap();
        let mut opts = RunOptions::from_spec(&spec);
        opts.samples = 50;
        let outcome = run(&spec, &compiled, &opts).unwrap();
        assert!(!outcome.report.pass);
        let check = &outcome.report.checks[0];
        assert_eq!(check.name, "isometablic");
        assert_eq!(check.status, CheckStatus::Fail);
        assert!(check.residual > 1e-2, "residual {}", check.residual);
    }

    #[test]
    fn square_preset_matches_its_declared_log() {
        let spec = spec_from_str(HOLONOMY_SQUARE).unwrap();
        let compiled = compile(&spec).unwrap();
        let mut opts = RunOptions::from_spec(&spec);
        opts.samples = 10;
        opts.steps = 256;
        opts.tolerances.insert("holonomy-closed-form".into(), 1e-5);
        let outcome = run(&spec, &compiled, &opts).unwrap();
        let closed = outcome
            .report
            .checks
            .iter()
            .find(|c| c.name == "holonomy-closed-form")
            .unwrap();
        assert_eq!(closed.status, CheckStatus::Pass, "{closed:?}");
    }
}
