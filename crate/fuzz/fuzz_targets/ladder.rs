#![no_main]

use beamlab::experiment::{Ladder, ModelName, Span};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|src: &str| {
    if let Ok(l) = src.parse::<Ladder>() {
        let _ = l.validate("ladder");
    }
    let _ = src.parse::<Span>();
    let _ = src.parse::<ModelName>();
});
