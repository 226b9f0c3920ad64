use std::collections::BTreeMap;

use listener_scale::dataset::{
    augment_mean_listener, read_features, read_ratings, split_grouped_kfold, write_features,
    write_ratings, AttributeName, Dataset, Rating,
};
use listener_scale::simulator::{generate_dataset, SimConfig};
use listener_scale::Error;
use proptest::prelude::*;

fn attrs() -> Vec<AttributeName> {
    vec![
        AttributeName::new("arousal").unwrap(),
        AttributeName::new("valence").unwrap(),
    ]
}

prop_compose! {
    fn dataset()(cells in prop::collection::btree_map((0u8..12, 0u8..5), (1u8..=7, 1u8..=7), 1..40),
                 systems in prop::collection::vec(0u8..4, 12),
                 feats in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 12)) -> Dataset {
        let ratings: Vec<Rating> = cells
            .iter()
            .map(|(&(u, l), &(a, v))| Rating {
                utterance_id: format!("utt {u}"),
                system_id: format!("sys,{}", systems[u as usize]),
                listener_id: format!("l{l}"),
                group_key: format!("g\"{}\"", systems[u as usize]),
                scores: vec![f64::from(a), f64::from(v)],
            })
            .collect();
        let features: BTreeMap<String, Vec<f64>> = ratings
            .iter()
            .map(|r| {
                let u: usize = r.utterance_id[4..].parse().unwrap();
                (r.utterance_id.clone(), feats[u].clone())
            })
            .collect();
        Dataset::new(attrs(), 7, ratings, features).unwrap()
    }
}

proptest! {
    #[test]
    fn ratings_and_features_round_trip(ds in dataset()) {
        let mut buf = Vec::new();
        write_ratings(&ds, &mut buf).unwrap();
        let back = read_ratings(buf.as_slice(), &attrs(), 7).unwrap();
        prop_assert_eq!(back.ratings(), ds.ratings());
        let mut fbuf = Vec::new();
        write_features(ds.features(), &mut fbuf).unwrap();
        let feats = read_features(fbuf.as_slice()).unwrap();
        prop_assert_eq!(&feats, ds.features());
        let full = back.with_features(feats).unwrap();
        prop_assert_eq!(full.checksum(), ds.checksum());
    }

    #[test]
    fn reserved_mean_listener_id_is_rejected_on_input(ds in dataset()) {
        let aug = augment_mean_listener(&ds).unwrap();
        let mut buf = Vec::new();
        write_ratings(&aug, &mut buf).unwrap();
        let is_reserved = matches!(read_ratings(buf.as_slice(), &attrs(), 7), Err(Error::Parse { .. }));
        prop_assert!(is_reserved);
    }
}

#[test]
fn header_attributes_are_adopted_when_none_given() {
    let csv = "utterance_id,system_id,listener_id,group_key,mos\nu1,s1,l1,g,4\nu2,s2,l1,g,2\n";
    let ds = read_ratings(csv.as_bytes(), &[], 5).unwrap();
    assert_eq!(ds.attributes()[0].as_str(), "mos");
    assert_eq!(ds.ratings().len(), 2);
}

#[test]
fn malformed_rows_report_their_line() {
    let csv = "utterance_id,system_id,listener_id,group_key,mos\nu1,s1,l1,g,4\nu2,s2,l1,g,x\n";
    match read_ratings(csv.as_bytes(), &[], 5) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    let off_grid = "utterance_id,system_id,listener_id,group_key,mos\nu1,s1,l1,g,6\n";
    assert!(read_ratings(off_grid.as_bytes(), &[], 5).is_err());
    let dup = "utterance_id,system_id,listener_id,group_key,mos\nu1,s1,l1,g,3\nu1,s1,l1,g,4\n";
    assert!(matches!(
        read_ratings(dup.as_bytes(), &[], 5),
        Err(Error::Duplicate { .. })
    ));
}

#[test]
fn grouped_folds_partition_groups() {
    let ds = generate_dataset(&SimConfig::cser_preset(3))
        .unwrap()
        .dataset;
    let folds = split_grouped_kfold(&ds, 5, 3).unwrap();
    assert_eq!(folds.len(), 5);
    let mut seen = std::collections::BTreeSet::new();
    for f in &folds {
        let test_groups = f.test.group_keys();
        let train_groups = f.train.group_keys();
        assert!(test_groups.is_disjoint(&train_groups));
        assert_eq!(
            f.test.ratings().len() + f.train.ratings().len(),
            ds.ratings().len()
        );
        for g in test_groups {
            assert!(seen.insert(g.to_string()), "group {g} tested twice");
        }
    }
    assert_eq!(seen.len(), ds.group_keys().len());
}
