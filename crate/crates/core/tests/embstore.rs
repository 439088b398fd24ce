mod common;

use std::fs;
use std::io::Write;

use domclust::embstore::{
    read_embeddings, record_offset, sidecar_path, validate_file, write_embeddings, EmbeddingReader,
    HEADER_LEN,
};
use domclust::{EmbeddingMeta, EmbeddingRecord, EmbeddingSet, Error, Level};
use proptest::prelude::*;

#[test]
fn file_size_follows_layout() {
    // 21-byte header, then (8 + 8 + 4 + 4 * dim) bytes per record
    let expected: u64 = 21 + 10_000 * (8 + 8 + 4 + 512 * 4);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.emb");
    let set = common::gaussian_domains(4, 2_500, 512, 1.0, 1.0, 10, 3);
    write_embeddings(&set, &p).unwrap();
    assert_eq!(fs::metadata(&p).unwrap().len(), expected);
    assert_eq!(record_offset(512, 10_000), expected);
}

#[test]
fn sidecar_is_json_with_expected_keys() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.emb");
    let mut set = common::gaussian_domains(2, 3, 4, 1.0, 1.0, 3, 1);
    set.meta.layer = 4;
    set.meta.level = Level::Document;
    write_embeddings(&set, &p).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
    for key in ["model_name", "layer", "level", "language", "domain_names"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["level"], "document");
    assert_eq!(v["domain_names"]["1"], "domain1");
    assert_eq!(read_embeddings(&p).unwrap(), set);
}

#[test]
fn truncated_mid_record_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.emb");
    let set = common::gaussian_domains(1, 10, 8, 1.0, 1.0, 5, 2);
    write_embeddings(&set, &p).unwrap();
    // cut inside record 6
    let cut = record_offset(8, 6) + 13;
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..cut as usize]).unwrap();
    match read_embeddings(&p) {
        Err(Error::Truncated { index, offset }) => {
            assert_eq!(index, 6);
            assert_eq!(offset, record_offset(8, 6));
        }
        other => panic!("expected truncation error, got {other:?}"),
    }
    // a plain stream without the length check fails at the same record
    let mut reader = EmbeddingReader::from_reader(&bytes[..cut as usize]).unwrap();
    for _ in 0..6 {
        reader.next().unwrap().unwrap();
    }
    assert!(matches!(
        reader.next(),
        Some(Err(Error::Truncated { index: 6, .. }))
    ));
    assert!(reader.next().is_none());
}

#[test]
fn bad_magic_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.emb");
    let mut f = fs::File::create(&p).unwrap();
    f.write_all(b"XXXX").unwrap();
    f.write_all(&[0u8; 17]).unwrap();
    drop(f);
    assert!(matches!(read_embeddings(&p), Err(Error::BadMagic { .. })));
    assert!(validate_file(&p).is_err());
}

#[test]
fn non_finite_payload_rejected_with_index() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nan.emb");
    let set = common::gaussian_domains(1, 4, 3, 1.0, 1.0, 2, 2);
    write_embeddings(&set, &p).unwrap();
    let mut bytes = fs::read(&p).unwrap();
    let at = (record_offset(3, 2) + 20 + 4) as usize;
    bytes[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
    fs::write(&p, bytes).unwrap();
    assert!(matches!(
        read_embeddings(&p),
        Err(Error::NonFinite {
            index: 2,
            component: 1
        })
    ));
}

#[test]
fn header_count_larger_than_body_is_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.emb");
    let set = common::gaussian_domains(1, 3, 2, 1.0, 1.0, 3, 2);
    write_embeddings(&set, &p).unwrap();
    let mut bytes = fs::read(&p).unwrap();
    bytes[10..18].copy_from_slice(&5u64.to_le_bytes());
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(
        read_embeddings(&p),
        Err(Error::Truncated { index: 3, .. })
    ));
    bytes[10..18].copy_from_slice(&2u64.to_le_bytes());
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(
        read_embeddings(&p),
        Err(Error::TrailingBytes { count: 2, .. })
    ));
}

#[test]
fn missing_sidecar_gives_default_meta() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.emb");
    let set = common::gaussian_domains(1, 3, 2, 1.0, 1.0, 3, 2);
    write_embeddings(&set, &p).unwrap();
    fs::remove_file(sidecar_path(&p)).unwrap();
    assert_eq!(read_embeddings(&p).unwrap().meta, EmbeddingMeta::default());
}

#[test]
fn duplicate_ids_rejected_when_writing() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        EmbeddingRecord {
            sentence_id: 1,
            doc_id: 0,
            domain_id: 0,
            vector: vec![1.0],
        },
        EmbeddingRecord {
            sentence_id: 1,
            doc_id: 0,
            domain_id: 0,
            vector: vec![2.0],
        },
    ];
    let set = EmbeddingSet::from_records(1, EmbeddingMeta::default(), recs).unwrap();
    assert!(write_embeddings(&set, dir.path().join("d.emb")).is_err());
}

fn arb_set() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..6).prop_flat_map(|dim| {
        prop::collection::vec(
            (
                any::<u32>(),
                0u64..5,
                -1i32..4,
                prop::collection::vec(
                    prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
                    dim,
                ),
            ),
            0..20,
        )
        .prop_map(move |rows| {
            let mut seen = std::collections::HashSet::new();
            let recs: Vec<EmbeddingRecord> = rows
                .into_iter()
                .filter(|r| seen.insert(r.0))
                .map(|(id, doc, dom, vector)| EmbeddingRecord {
                    sentence_id: id as u64,
                    doc_id: doc,
                    domain_id: dom,
                    vector,
                })
                .collect();
            EmbeddingSet::from_records(dim, EmbeddingMeta::default(), recs).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bit_exact_and_streaming_matches(set in arb_set()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.emb");
        write_embeddings(&set, &p).unwrap();
        let back = read_embeddings(&p).unwrap();
        prop_assert_eq!(back.len(), set.len());
        let a: Vec<u32> = set.vectors().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.vectors().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.sentence_ids(), set.sentence_ids());
        prop_assert_eq!(back.doc_ids(), set.doc_ids());
        prop_assert_eq!(back.domain_ids(), set.domain_ids());
        let streamed: Vec<EmbeddingRecord> = EmbeddingReader::open(&p).unwrap().map(Result::unwrap).collect();
        let full: Vec<EmbeddingRecord> = back.iter().map(|r| r.to_owned()).collect();
        prop_assert_eq!(streamed, full);
        prop_assert_eq!(fs::metadata(&p).unwrap().len(), HEADER_LEN + set.len() as u64 * (20 + 4 * set.dim() as u64));
    }
}
