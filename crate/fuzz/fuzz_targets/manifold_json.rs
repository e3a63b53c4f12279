#![no_main]

use beamlab::ChartedManifold;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|src: &str| {
    let _ = ChartedManifold::custom_from_json(src);
});
