#![no_main]

use artistembed::model::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let bytes = ck.to_bytes().expect("decoded checkpoint encodes");
        assert!(Checkpoint::from_bytes(&bytes).is_ok());
    }
});
