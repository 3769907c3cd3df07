#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = diffcore::serialize::decode_as::<f64>(data) {
        // anything that decodes must round-trip
        let mut bytes = Vec::new();
        diffcore::serialize::encode(&t, &mut bytes);
        let again = diffcore::serialize::decode_as::<f64>(&bytes).unwrap();
        assert_eq!(t.shape(), again.shape());
    }
    let _ = diffcore::serialize::decode_prefix(data);
});
