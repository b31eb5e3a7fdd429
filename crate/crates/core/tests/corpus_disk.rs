mod common;

use common::{schema, synth};
use sdoh_core::corpus::{
    compute_kappa, load_corpus, read_manifest, split_corpus, validate_corpus, write_corpus, SplitRatios, MANIFEST_FILE,
};
use sdoh_core::textproc::{encode_bio, tokenize};

#[test]
fn corpus_survives_disk_round_trip() {
    let docs = synth(50, 3, 0.5);
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &docs).unwrap();
    let rows = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(rows.len(), 50);
    let loaded = load_corpus(dir.path(), &schema()).unwrap();
    assert_eq!(loaded, docs);
    assert!(validate_corpus(&loaded, &schema()).is_clean());
}

#[test]
fn split_of_synthetic_manifest() {
    let ids: Vec<String> = synth(629, 1, 0.0).iter().map(|d| d.doc_id().to_string()).collect();
    let s = split_corpus(&ids, SplitRatios::new(0.8, 0.10), 7).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (452, 51, 126));
    assert_eq!(s, split_corpus(&ids, SplitRatios::new(0.8, 0.10), 7).unwrap());
}

#[test]
fn self_agreement_on_token_labels() {
    for d in synth(20, 9, 0.3) {
        let labels = encode_bio(&tokenize(&d.document.text), &d.entities).unwrap();
        let names: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        let k = compute_kappa(&names, &names).unwrap();
        assert_eq!(k.kappa, 1.0);
    }
}
