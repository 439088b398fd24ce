use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use domclust::embstore::{write_embeddings, EmbeddingSet};
use domclust::kmeans::{fit, KMeansConfig};
use domclust::router::RoutingTable;
use domclust::{EmbeddingMeta, EmbeddingRecord};
use domclust_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

/// Four tight 2D blobs, 25 points each, plus model and routing files.
fn fixture(
    dir: &Path,
) -> (
    EmbeddingSet,
    std::path::PathBuf,
    std::path::PathBuf,
    std::path::PathBuf,
) {
    let centers = [(5.0, 0.0), (0.0, 5.0), (-5.0, 0.0), (0.0, -5.0)];
    let recs = (0..100u64).map(|i| {
        let (x, y) = centers[(i % 4) as usize];
        let j = (i / 4) as f32 * 0.01;
        EmbeddingRecord {
            sentence_id: i,
            doc_id: i / 10,
            domain_id: (i % 4) as i32,
            vector: vec![x + j, y - j],
        }
    });
    let set = EmbeddingSet::from_records(2, EmbeddingMeta::default(), recs).unwrap();
    let emb = dir.join("items.emb");
    write_embeddings(&set, &emb).unwrap();
    let model = fit(&set, &KMeansConfig::new(4, 3)).unwrap();
    let mp = dir.join("model.json");
    model.save(&mp).unwrap();
    let rp = dir.join("routing.json");
    RoutingTable::skeleton(4).save(&rp).unwrap();
    (set, emb, mp, rp)
}

#[test]
fn model_assign_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (set, _, mp, _) = fixture(dir.path());
    let lib = domclust::kmeans::load_model(&mp).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(dc_model_load(c(&mp).as_ptr(), &mut h), DcStatus::Ok as i32);
        assert_eq!((dc_model_dim(h), dc_model_k(h)), (2, 4));
        for r in set.iter() {
            let (mut cl, mut d) = (usize::MAX, f64::NAN);
            assert_eq!(dc_model_assign(h, r.vector.as_ptr(), 2, &mut cl, &mut d), 0);
            assert_eq!((cl, d), lib.nearest(r.vector).unwrap());
        }
        let mut cl = 0;
        let v = [1.0f32; 3];
        assert_eq!(
            dc_model_assign(h, v.as_ptr(), 3, &mut cl, ptr::null_mut()),
            DcStatus::ErrDimMismatch as i32
        );
        assert!(last_error().contains('3'));
        assert_eq!(
            dc_model_assign(ptr::null(), v.as_ptr(), 2, &mut cl, ptr::null_mut()),
            DcStatus::ErrNull as i32
        );
        dc_model_free(h);
        dc_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        let missing = c(&dir.path().join("nope.json"));
        assert_eq!(
            dc_model_load(missing.as_ptr(), &mut h),
            DcStatus::ErrIo as i32
        );
        assert!(last_error().contains("nope.json"));
        std::fs::write(dir.path().join("bad.json"), "{").unwrap();
        assert_eq!(
            dc_model_load(c(&dir.path().join("bad.json")).as_ptr(), &mut h),
            DcStatus::ErrFormat as i32
        );
        assert_eq!(dc_model_load(ptr::null(), &mut h), DcStatus::ErrNull as i32);
        assert!(h.is_null());
    }
}

#[test]
fn router_routes_sentences_and_documents() {
    let dir = tempfile::tempdir().unwrap();
    let (set, _, mp, rp) = fixture(dir.path());
    let lib = domclust::kmeans::load_model(&mp).unwrap();
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(dc_router_load(c(&mp).as_ptr(), c(&rp).as_ptr(), &mut r), 0);
        let v = set.vector(0);
        let (mut cl, mut id) = (0usize, ptr::null());
        assert_eq!(dc_router_route(r, v.as_ptr(), 2, &mut cl, &mut id), 0);
        assert_eq!(cl, lib.nearest(v).unwrap().0);
        assert_eq!(
            CStr::from_ptr(id).to_str().unwrap(),
            format!("cluster-{cl}")
        );

        // document of two sentences from the same blob
        let doc: Vec<f32> = [set.vector(0), set.vector(4)].concat();
        let mut dcl = 0;
        assert_eq!(
            dc_router_route_document(r, doc.as_ptr(), 2, 2, &mut dcl, &mut id),
            0
        );
        assert_eq!(dcl, cl);
        assert_eq!(
            dc_router_route_document(r, doc.as_ptr(), 0, 2, &mut dcl, &mut id),
            DcStatus::ErrInvalid as i32
        );
        dc_router_free(r);
    }

    // a table missing a cluster is rejected at load
    let mut partial = RoutingTable::skeleton(4);
    partial.model_for_cluster.remove(&2);
    let pp = dir.path().join("partial.json");
    partial.save(&pp).unwrap();
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(
            dc_router_load(c(&mp).as_ptr(), c(&pp).as_ptr(), &mut r),
            DcStatus::ErrUnmapped as i32
        );
    }
    partial.default_model = Some("general".into());
    partial.save(&pp).unwrap();
    unsafe {
        assert_eq!(dc_router_load(c(&mp).as_ptr(), c(&pp).as_ptr(), &mut r), 0);
        let probe = lib
            .centroid(2)
            .iter()
            .map(|&x| x as f32)
            .collect::<Vec<_>>();
        let (mut cl, mut id) = (0usize, ptr::null());
        assert_eq!(dc_router_route(r, probe.as_ptr(), 2, &mut cl, &mut id), 0);
        assert_eq!((cl, CStr::from_ptr(id).to_str().unwrap()), (2, "general"));
        dc_router_free(r);
    }
}

#[test]
fn reader_streams_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let (set, emb, _, _) = fixture(dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(dc_reader_open(c(&emb).as_ptr(), &mut h), 0);
        assert_eq!((dc_reader_dim(h), dc_reader_count(h)), (2, 100));
        let mut rec = DcRecord::default();
        let mut buf = [0f32; 2];
        assert_eq!(
            dc_reader_next(h, &mut rec, buf.as_mut_ptr(), 1),
            DcStatus::ErrDimMismatch as i32
        );
        for i in 0..100 {
            assert_eq!(dc_reader_next(h, &mut rec, buf.as_mut_ptr(), 2), 0);
            let want = set.record(i);
            assert_eq!(
                (rec.sentence_id, rec.doc_id, rec.domain_id),
                (want.sentence_id, want.doc_id, want.domain_id)
            );
            assert_eq!(&buf[..], want.vector);
        }
        assert_eq!(
            dc_reader_next(h, &mut rec, buf.as_mut_ptr(), 2),
            DcStatus::End as i32
        );
        dc_reader_free(h);

        let (mut dim, mut count) = (0u32, 0u64);
        assert_eq!(dc_validate(c(&emb).as_ptr(), &mut dim, &mut count), 0);
        assert_eq!((dim, count), (2, 100));
    }
    let mut bytes = std::fs::read(&emb).unwrap();
    bytes.truncate(bytes.len() - 5);
    let cut = dir.path().join("cut.emb");
    std::fs::write(&cut, bytes).unwrap();
    unsafe {
        assert_eq!(
            dc_validate(c(&cut).as_ptr(), ptr::null_mut(), ptr::null_mut()),
            DcStatus::ErrFormat as i32
        );
        assert!(last_error().contains("99"), "{}", last_error());
    }
}

#[test]
fn purity_over_flat_table() {
    let counts: [u64; 6] = [8, 1, 1, 0, 2, 8];
    let (mut maj, mut mat) = (0.0, 0.0);
    unsafe {
        assert_eq!(dc_purity(counts.as_ptr(), 2, 3, &mut maj, &mut mat), 0);
        assert_eq!(
            dc_purity(counts.as_ptr(), 0, 3, &mut maj, &mut mat),
            DcStatus::ErrInvalid as i32
        );
        let zeros = [0u64; 4];
        assert_eq!(
            dc_purity(zeros.as_ptr(), 2, 2, &mut maj, &mut mat),
            DcStatus::ErrInvalid as i32
        );
    }
    assert_eq!((maj, mat), (0.8, 0.8));
}
