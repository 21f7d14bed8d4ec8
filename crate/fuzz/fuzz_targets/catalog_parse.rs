#![no_main]

use std::path::Path;

use artistembed::data::Catalog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = Catalog::parse(text, Path::new(".")) {
        // Canonical form is a fixed point.
        let again = Catalog::parse(&c.to_jsonl(), Path::new(".")).expect("canonical form parses");
        assert_eq!(again.to_jsonl(), c.to_jsonl());
    }
});
