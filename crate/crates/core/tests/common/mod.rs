#![allow(dead_code)]

use cfx_core::classifier::{fit_calibrated, FitConfig, Model};
use cfx_core::data::Dataset;
use cfx_core::synth::{generate, SynthConfig};

/// Small synthetic dataset with a calibrated reference model.
pub fn fixture(n_per_class: usize, seed: u64) -> (Dataset, Model) {
    let data = generate(&SynthConfig {
        n_per_class,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = fit_calibrated(&data, &FitConfig::default())
        .unwrap()
        .into_model()
        .unwrap();
    (data, model)
}

pub fn queries(n_per_class: usize, seed: u64) -> Dataset {
    generate(&SynthConfig {
        n_per_class,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}
