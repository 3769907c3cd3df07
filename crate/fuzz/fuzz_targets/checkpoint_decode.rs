#![no_main]

use eegm2::arch::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::<f32>::from_bytes(data);
    let _ = Checkpoint::<f64>::from_bytes(data);
});
