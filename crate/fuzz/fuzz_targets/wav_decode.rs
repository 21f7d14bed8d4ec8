#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = artistembed::dsp::wav::decode_wav(data) {
        assert!(clip.samples().iter().all(|s| s.is_finite()));
    }
});
