#![no_main]

use beamlab::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|src: &str| {
    if let Ok(cfg) = ExperimentConfig::from_json(src) {
        let _ = cfg.validate();
    }
});
