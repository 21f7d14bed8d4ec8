#![no_main]

use artistembed::eval::{decode_raw, encode_raw};
use libfuzzer_sys::fuzz_target;

fn bits(rows: &[Vec<f32>]) -> Vec<Vec<u32>> {
    rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect()
}

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = decode_raw(data) {
        let again = decode_raw(&encode_raw(&rows)).expect("encoded rows decode");
        assert_eq!(bits(&again), bits(&rows));
        if !rows.is_empty() {
            assert_eq!(encode_raw(&rows), data);
        }
    }
});
