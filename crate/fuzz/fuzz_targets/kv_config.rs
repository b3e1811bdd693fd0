#![no_main]

use fewlabel::trainer::MethodConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = fewlabel::kv::parse(text);
    // A parsed config renders to text that parses back to itself.
    if let Ok(c) = MethodConfig::parse(text) {
        if c.validate().is_ok() {
            assert_eq!(MethodConfig::parse(&c.render()).expect("rendered config parses"), c);
        }
    }
});
