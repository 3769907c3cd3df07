#![no_main]

use eegm2::arch::ArchConfig;
use eegm2::bench::SweepConfig;
use eegm2::data::SynthConfig;
use eegm2::experiment::ProbeSettings;
use eegm2::train::PretrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = toml::from_str::<SynthConfig>(text) {
        let _ = c.validate();
    }
    if let Ok(c) = toml::from_str::<ArchConfig>(text) {
        let _ = c.validate();
    }
    if let Ok(c) = toml::from_str::<PretrainConfig>(text) {
        let _ = c.optim.validate();
    }
    let _ = toml::from_str::<SweepConfig>(text);
    let _ = toml::from_str::<ProbeSettings>(text);
});
