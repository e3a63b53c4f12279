use std::fs;
use std::path::Path;

use beamlab::experiment::{ExperimentConfig, Ladder, ModelName, Span};
use beamlab::expr::Expr;
use beamlab::recovery::PotentialField;
use beamlab::ChartedManifold;
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| fs::read_to_string(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    out
}

#[test]
fn corpus_seeds_are_accepted() {
    for s in seeds("expr") {
        let e = Expr::parse(&s, &["x", "y", "z"]).unwrap();
        assert!(e.eval(&[0.3, 0.2, 0.1]).is_finite(), "{s}");
    }
    for s in seeds("manifold_json") {
        ChartedManifold::custom_from_json(&s).unwrap();
    }
    let cyl = ChartedManifold::flat_cylinder(1.0).unwrap();
    for s in seeds("potential_json") {
        PotentialField::from_json(&cyl, &s, 0.9).unwrap();
    }
    for s in seeds("config") {
        ExperimentConfig::from_json(&s).unwrap().validate().unwrap();
    }
    for s in seeds("ladder") {
        assert!(s.parse::<Ladder>().is_ok() || s.parse::<Span>().is_ok() || s.parse::<ModelName>().is_ok(), "{s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn expression_parser_never_panics(src in "[xyz0-9.+*/^() -]{0,24}|[a-z(),.0-9 ]{0,16}") {
        if let Ok(e) = Expr::parse(&src, &["x", "y", "z"]) {
            let _ = e.eval(&[0.5, -0.5, 2.0]);
        }
    }

    #[test]
    fn config_parser_never_panics(src in r#"[{}\[\]":,a-z0-9. -]{0,48}"#) {
        if let Ok(c) = ExperimentConfig::from_json(&src) {
            let _ = c.validate();
        }
    }

    #[test]
    fn ladder_parser_never_panics(src in "[0-9.e:,-]{0,16}") {
        if let Ok(l) = src.parse::<Ladder>() {
            let _ = l.validate("ladder");
        }
        let _ = src.parse::<Span>();
    }

    #[test]
    fn geometric_ladders_keep_their_endpoints(lo in 1e-3f64..10.0, ratio in 1.5f64..100.0, n in 2usize..8) {
        let hi = lo * ratio;
        let l: Ladder = format!("{lo}:{hi}:{n}").parse().unwrap();
        prop_assert_eq!(l.0.len(), n);
        prop_assert_eq!(l.0[0], lo);
        prop_assert_eq!(l.0[n - 1], hi);
        prop_assert!(l.validate("ladder").is_ok());
    }
}
