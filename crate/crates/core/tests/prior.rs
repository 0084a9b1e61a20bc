use fedmas::data::{gen_longtail, LongTailSpec};
use fedmas::numerics::random_normal;
use fedmas::prior::{build_prior, embed, load_embeddings, save_embeddings, Prior};
use fedmas::rng::rng_from_seed;

#[test]
fn batch_embedding_equals_per_row_calls() {
    let prior = build_prior(6, 9, 11).unwrap();
    let x = random_normal(17, 6, &mut rng_from_seed(2));
    let batch = embed(&prior, &x).unwrap();
    for r in 0..17 {
        let one = embed(&prior, &x.select_rows(&[r])).unwrap();
        for (a, b) in one.row(0).iter().zip(batch.row(r)) {
            assert!((a - b).abs() < 1e-15);
        }
        let norm: f64 = batch.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn every_client_handle_sees_the_same_targets() {
    let spec = LongTailSpec {
        num_classes: 4,
        n_max: 50,
        imbalance_ratio: 5.0,
        feature_dim: 6,
        class_separation: 1.0,
    };
    let ds = gen_longtail(&spec, 3).unwrap();
    let shared = Prior::Network(build_prior(6, 8, 5).unwrap());
    let handles: Vec<&Prior> = (0..4).map(|_| &shared).collect();
    let rebuilt = Prior::Network(build_prior(6, 8, 5).unwrap());
    let reference = shared.targets_for(&ds).unwrap();
    for h in handles.iter().copied().chain([&rebuilt]) {
        assert_eq!(h.targets_for(&ds).unwrap(), reference);
    }
}

#[test]
fn offline_table_substitutes_for_the_network() {
    let spec = LongTailSpec {
        num_classes: 3,
        n_max: 20,
        imbalance_ratio: 2.0,
        feature_dim: 4,
        class_separation: 1.0,
    };
    let ds = gen_longtail(&spec, 9).unwrap();
    let table = Prior::Network(build_prior(4, 5, 1).unwrap())
        .targets_for(&ds)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.femb");
    save_embeddings(&path, &table).unwrap();
    let loaded = Prior::Table(load_embeddings(&path, Some(ds.len())).unwrap());
    let again = loaded.targets_for(&ds).unwrap();
    for r in 0..ds.len() {
        for (a, b) in again.get(r).unwrap().iter().zip(table.get(r).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(load_embeddings(&path, Some(ds.len() + 1)).is_err());
}
