mod common;

use std::collections::BTreeSet;
use std::fs;

use common::laziness_spec;
use mla::data::{
    apply_missing_mask, generate_synthetic, load_dataset, minibatches, save_dataset, split, MaskPhase,
    SplitSpec,
};
use mla::error::Error;

fn small_bench() -> mla::data::SyntheticSpec {
    mla::data::SyntheticSpec {
        samples: 400,
        ..laziness_spec(3)
    }
}

#[test]
fn generated_data_survives_a_round_trip() {
    let ds = generate_synthetic(&small_bench()).unwrap();
    ds.validate().unwrap();
    let masked = apply_missing_mask(&ds, 0.3, 9, MaskPhase::Train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&masked, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, masked);
}

#[test]
fn generation_and_saving_are_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(&generate_synthetic(&small_bench()).unwrap(), a.path()).unwrap();
    save_dataset(&generate_synthetic(&small_bench()).unwrap(), b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in names {
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn corrupted_table_is_rejected() {
    let ds = generate_synthetic(&small_bench()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("modality_1.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes.pop();
    fs::write(&path, bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
}

#[test]
fn split_partitions_the_samples() {
    let ds = generate_synthetic(&small_bench()).unwrap();
    let (train, val, test) = split(&ds, &SplitSpec::default()).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (320, 40, 40));
    let key = |d: &mla::data::MultimodalDataset, i: usize| d.table(0).row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut seen = BTreeSet::new();
    for part in [&train, &val, &test] {
        for i in 0..part.len() {
            assert!(seen.insert(key(part, i)));
        }
    }
    assert_eq!(seen.len(), ds.len());
}

#[test]
fn masks_respect_rows_and_existing_absences() {
    let ds = generate_synthetic(&small_bench()).unwrap();
    let first = apply_missing_mask(&ds, 0.2, 1, MaskPhase::Train).unwrap();
    let second = apply_missing_mask(&first, 0.2, 2, MaskPhase::Test).unwrap();
    for i in 0..ds.len() {
        assert!(second.presence_row(i).iter().any(|&p| p));
        for m in 0..2 {
            assert!(first.is_present(i, m) || !second.is_present(i, m));
        }
    }
    assert_eq!(first.tables(), ds.tables());
    assert_eq!(first.labels(), ds.labels());
}

#[test]
fn batches_cover_present_samples_once() {
    let ds = generate_synthetic(&small_bench()).unwrap();
    let ds = apply_missing_mask(&ds, 0.4, 5, MaskPhase::Train).unwrap();
    for m in 0..2 {
        let batches = minibatches(&ds, m, 64, 3, 7).unwrap();
        assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == 64));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, ds.present_indices(m));
    }
}
