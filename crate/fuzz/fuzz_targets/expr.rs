#![no_main]

use beamlab::expr::Expr;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|src: &str| {
    if let Ok(e) = Expr::parse(src, &["x", "y", "z"]) {
        let _ = e.eval(&[0.3, -1.2, 2.0]);
    }
});
