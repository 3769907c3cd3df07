#![no_main]

use eegm2::data::manifest::decode_payload;
use libfuzzer_sys::fuzz_target;

// first two bytes pick the claimed geometry, the rest is the payload
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let channels = usize::from(data[0] % 17);
    let n_samples = usize::from(data[1]) * 4;
    if let Ok(t) = decode_payload(&data[2..], channels, n_samples) {
        assert_eq!(t.shape(), &[channels, n_samples]);
    }
});
