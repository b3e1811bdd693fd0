#![no_main]

use fewlabel::checkpoint::TensorFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = TensorFile::decode(data) else { return };
    let bytes = file.encode().expect("decoded file re-encodes");
    let again = TensorFile::decode(&bytes).expect("encoded file decodes");
    assert_eq!(again.encode().expect("re-encode"), bytes);
});
