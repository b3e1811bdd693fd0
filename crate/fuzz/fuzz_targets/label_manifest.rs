#![no_main]

use fewlabel::data::{parse_label_manifest, write_label_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_label_manifest(text) {
        let again = parse_label_manifest(&write_label_manifest(&entries)).expect("written manifest parses");
        assert_eq!(entries, again);
    }
});
