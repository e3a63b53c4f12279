#![no_main]

use beamlab::recovery::PotentialField;
use beamlab::ChartedManifold;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|src: &str| {
    let m = ChartedManifold::flat_cylinder(1.0).unwrap();
    let _ = PotentialField::from_json(&m, src, 0.9);
});
