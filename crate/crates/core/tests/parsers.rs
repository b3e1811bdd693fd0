//! Parser entry points: fuzz corpus seeds and random inputs never panic,
//! and accepted inputs survive a write/parse round trip.

use std::path::PathBuf;

use fewlabel::checkpoint::TensorFile;
use fewlabel::data::{parse_label_manifest, write_label_manifest};
use fewlabel::experiment::ExperimentManifest;
use fewlabel::labels::ProviderMeta;
use fewlabel::metrics::{parse_metrics_jsonl, MetricsRecord};
use fewlabel::trainer::MethodConfig;
use proptest::prelude::*;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn label_manifest(text: &str) -> bool {
    match parse_label_manifest(text) {
        Ok(entries) => {
            assert_eq!(parse_label_manifest(&write_label_manifest(&entries)).unwrap(), entries);
            true
        }
        Err(_) => false,
    }
}

fn kv_config(text: &str) -> bool {
    let _ = fewlabel::kv::parse(text);
    match MethodConfig::parse(text) {
        Ok(c) if c.validate().is_ok() => {
            assert_eq!(MethodConfig::parse(&c.render()).unwrap(), c);
            true
        }
        _ => false,
    }
}

fn checkpoint(bytes: &[u8]) -> bool {
    match TensorFile::decode(bytes) {
        Ok(f) => {
            let enc = f.encode().unwrap();
            assert_eq!(TensorFile::decode(&enc).unwrap().encode().unwrap(), enc);
            true
        }
        Err(_) => false,
    }
}

fn metrics(text: &str) -> bool {
    match parse_metrics_jsonl(text) {
        Ok(rs) => {
            for r in &rs {
                assert_eq!(parse_metrics_jsonl(&r.to_line()).unwrap(), vec![r.clone()]);
            }
            true
        }
        Err(_) => false,
    }
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn corpus_seeds_behave() {
    let accepted = |v: Vec<bool>| v.into_iter().filter(|&b| b).count();
    assert!(accepted(corpus("label_manifest").iter().map(|s| label_manifest(text(s))).collect()) >= 2);
    assert!(accepted(corpus("kv_config").iter().map(|s| kv_config(text(s))).collect()) >= 3);
    assert!(accepted(corpus("checkpoint").iter().map(|s| checkpoint(s)).collect()) == 2);
    assert!(accepted(corpus("metrics_jsonl").iter().map(|s| metrics(text(s))).collect()) >= 1);
    for s in corpus("experiment_manifest") {
        ExperimentManifest::parse(text(&s)).unwrap();
    }
    for s in corpus("provider_meta") {
        ProviderMeta::parse(text(&s)).unwrap();
    }
}

#[test]
fn rejected_seeds_are_errors() {
    assert!(!label_manifest("../escape.png 1\n"));
    assert!(!label_manifest("/abs.png 1\n"));
    assert!(!kv_config("[s]\nk = 1\nk = 2\n"));
    assert!(ProviderMeta::parse(r#"{"kind":"S2L","mode":"HARD","num_classes":2,"prior":[0.9,0.2],"dataset_id":"d","seed":0}"#).is_err());
    let mut bad = corpus("checkpoint").pop().unwrap();
    bad.truncate(bad.len() - 1);
    assert!(!checkpoint(&bad));
}

fn fragments() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("method = ".to_string()),
        Just("S3GAN".to_string()),
        Just("CLUSTERING".to_string()),
        Just("k_percent = ".to_string()),
        Just("n_clusters = ".to_string()),
        Just("[run x]".to_string()),
        Just("[pretrain p]".to_string()),
        Just("provider = p".to_string()),
        Just("kind = s2l".to_string()),
        Just("\n".to_string()),
        Just("#".to_string()),
        Just("=".to_string()),
        Just(" - ".to_string()),
        Just("a/b.png".to_string()),
        Just("{\"step\":".to_string()),
        "[0-9]{1,4}",
        "\\PC{0,6}",
    ];
    prop::collection::vec(piece, 0..24).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn text_parsers_never_panic(s in fragments()) {
        label_manifest(&s);
        kv_config(&s);
        metrics(&s);
        let _ = ExperimentManifest::parse(&s);
        let _ = ProviderMeta::parse(&s);
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256), cut in 0usize..400) {
        checkpoint(&bytes);
        let mut seed = corpus("checkpoint").pop().unwrap();
        let n = seed.len();
        seed.truncate(cut.min(n));
        checkpoint(&seed);
        for (i, b) in bytes.iter().enumerate() {
            let j = i * 7 % n;
            let mut m = corpus("checkpoint").pop().unwrap();
            m[j] ^= b;
            checkpoint(&m);
        }
    }

    #[test]
    fn metrics_values_survive_a_round_trip(fid in 0.0f64..1e6, is in 1.0f64..1e3, step in any::<u32>(), seed in any::<u64>()) {
        let r = MetricsRecord {
            step: step as u64,
            seed,
            method: "S3GAN".into(),
            fid_mean: fid,
            is_mean: is,
            embedder_id: "e".into(),
            n_fake: 10,
            n_sets: 1,
            k_percent: Some(2.5),
            collapsed: false,
        };
        let back = parse_metrics_jsonl(&r.to_line()).unwrap();
        prop_assert_eq!(back, vec![r]);
    }
}
