mod common;

use std::io::Write;
use std::process::Stdio;

use domclust::embstore::{write_embeddings, write_frame, RecordRef};
use domclust::kmeans::{fit, ClusterAssignment, KMeansConfig, KMeansModel};
use domclust::router::{route, route_document, route_set, route_stream, RoutingTable};
use domclust::Error;

fn hand_model() -> KMeansModel {
    let cfg = KMeansConfig {
        normalize: false,
        ..KMeansConfig::new(4, 0)
    };
    KMeansModel::from_centroids(
        vec![
            vec![-10.0, 0.0],
            vec![10.0, 0.0],
            vec![0.0, 10.0],
            vec![0.0, 0.0],
        ],
        cfg,
    )
    .unwrap()
}

fn item(id: u64, doc: u64, v: &[f32]) -> RecordRef<'_> {
    RecordRef {
        sentence_id: id,
        doc_id: doc,
        domain_id: -1,
        vector: v,
    }
}

#[test]
fn item_at_centroid_routes_to_its_model() {
    let mut table = RoutingTable::default();
    table.model_for_cluster.insert(1, "model-B".into());
    let r = route(&hand_model(), &table, item(5, 0, &[10.0, 0.0])).unwrap();
    assert_eq!(
        (r.model_id.as_str(), r.cluster, r.sqdist),
        ("model-B", 1, 0.0)
    );

    assert!(matches!(
        route(&hand_model(), &table, item(5, 0, &[-9.0, 0.0])),
        Err(Error::UnmappedCluster(0))
    ));
    table.default_model = Some("general".into());
    assert_eq!(
        route(&hand_model(), &table, item(5, 0, &[-9.0, 0.0]))
            .unwrap()
            .model_id,
        "general"
    );
}

#[test]
fn documents_route_by_their_mean() {
    let m = hand_model();
    let t = RoutingTable::skeleton(4);
    let (a, b) = ([-6.0f32, 0.0], [6.0f32, 0.0]);
    assert_eq!(route(&m, &t, item(1, 7, &a)).unwrap().cluster, 0);
    assert_eq!(route(&m, &t, item(2, 7, &b)).unwrap().cluster, 1);
    let r = route_document(&m, &t, &[item(1, 7, &a), item(2, 7, &b)]).unwrap();
    assert_eq!(
        (r.cluster, r.item_id, r.model_id.as_str()),
        (3, 7, "cluster-3")
    );

    let single = route_document(&m, &t, &[item(1, 7, &b)]).unwrap();
    assert_eq!(
        single.cluster,
        route(&m, &t, item(1, 7, &b)).unwrap().cluster
    );
    let same = route_document(&m, &t, &[item(1, 7, &a), item(2, 7, &a), item(3, 7, &a)]).unwrap();
    let one = route(&m, &t, item(1, 7, &a)).unwrap();
    assert_eq!((same.cluster, same.sqdist), (one.cluster, one.sqdist));

    assert!(matches!(
        route_document(&m, &t, &[]),
        Err(Error::EmptyDocument)
    ));
    assert!(matches!(
        route_document(&m, &t, &[item(1, 7, &a), item(2, 7, &[1.0])]),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn routing_is_safe_across_threads() {
    let set = common::gaussian_domains(4, 250, 8, 3.0, 1.0, 10, 6);
    let model = fit(&set, &KMeansConfig::new(4, 1)).unwrap();
    let table = RoutingTable::skeleton(4);
    let serial = route_set(&model, &table, &set).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let (model, table, set) = (&model, &table, &set);
                s.spawn(move || {
                    (t..set.len())
                        .step_by(4)
                        .map(|i| (i, route(model, table, set.record(i)).unwrap()))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().unwrap() {
                assert_eq!(r, serial[i]);
            }
        }
    });
}

#[test]
fn cli_route_equals_assign_then_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let set = common::gaussian_domains(4, 250, 16, 2.0, 1.0, 10, 3);
    assert_eq!(set.len(), 1000);
    let emb = dir.path().join("items.emb");
    write_embeddings(&set, &emb).unwrap();
    let model = dir.path().join("model.json");
    common::ok(&common::domclust(&[
        &"kmeans-fit",
        &"--k",
        &"4",
        &"--seed",
        &"5",
        &emb,
        &model,
    ]));
    let mut table = RoutingTable::skeleton(4);
    table.model_for_cluster.insert(2, "legal".into());
    let routing = dir.path().join("routing.json");
    table.save(&routing).unwrap();

    let labels = dir.path().join("labels.tsv");
    common::ok(&common::domclust(&[
        &"kmeans-assign",
        &model,
        &emb,
        &labels,
    ]));
    let routes = dir.path().join("routes.tsv");
    common::ok(&common::domclust(&[
        &"route", &"--out", &routes, &model, &routing, &emb,
    ]));

    let assigned = ClusterAssignment::read_tsv(&labels).unwrap();
    let text = std::fs::read_to_string(&routes).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("item_id\tcluster\tmodel_id\tsqdist"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 1000);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<u64>().unwrap(), assigned.item_ids[i]);
        assert_eq!(row[1].parse::<usize>().unwrap(), assigned.labels[i]);
        assert_eq!(row[2], table.lookup(assigned.labels[i]).unwrap());
        assert_eq!(row[3].parse::<f64>().unwrap(), assigned.distances[i]);
    }

    // streaming mode: same decisions, no header
    let mut frames = Vec::new();
    for r in set.iter() {
        write_frame(&mut frames, r).unwrap();
    }
    let mut child = std::process::Command::new(common::bin())
        .args(["route", "--stream"])
        .arg(&model)
        .arg(&routing)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&frames).unwrap();
    let out = child.wait_with_output().unwrap();
    common::ok(&out);
    let streamed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(streamed, text.split_once('\n').unwrap().1);
}

#[test]
fn stream_stops_cleanly_and_rejects_partial_frames() {
    let set = common::gaussian_domains(2, 5, 4, 3.0, 1.0, 5, 1);
    let model = fit(&set, &KMeansConfig::new(2, 1)).unwrap();
    let table = RoutingTable::skeleton(2);
    let mut frames = Vec::new();
    for r in set.iter() {
        write_frame(&mut frames, r).unwrap();
    }
    let mut out = Vec::new();
    assert_eq!(
        route_stream(&model, &table, &frames[..], &mut out).unwrap(),
        10
    );
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 10);
    let cut = &frames[..frames.len() - 3];
    assert!(route_stream(&model, &table, cut, std::io::sink()).is_err());
}
