#![no_main]

use fewlabel::metrics::parse_metrics_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_metrics_jsonl(text) {
        for r in &records {
            let line = r.to_line();
            let back = parse_metrics_jsonl(&line).expect("serialized record parses");
            assert_eq!(back.len(), 1);
        }
    }
});
