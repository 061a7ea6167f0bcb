//! Counts on the real ML-100K distribution. Skipped when it is absent.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use hbgnn::data::{build_vocabs, fold_split, load, Dataset, DatasetKind};

fn ml100k() -> Option<Dataset> {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k");
    if !dir.join("u.data").is_file() {
        eprintln!("skipping: ML-100K not present at {}", dir.display());
        return None;
    }
    Some(load(DatasetKind::Ml100k, &dir).unwrap())
}

#[test]
fn table_sizes() {
    let Some(ds) = ml100k() else { return };
    assert_eq!(ds.users().len(), 943);
    assert_eq!(ds.movies().len(), 1682);
    assert_eq!(ds.len(), 100_000);
    let v = build_vocabs(&ds).unwrap();
    assert_eq!(v.user_id.len(), 943);
    assert_eq!(v.movie_id.len(), 1682);
    assert_eq!(v.occupation.len(), 21);
    assert_eq!(v.gender.len(), 2);
    assert_eq!(v.genre.len(), 19);
    assert!(ds.ratings().iter().all(|r| (1.0..=5.0).contains(&r.rating)));
}

#[test]
fn folds_partition_the_ratings() {
    let Some(ds) = ml100k() else { return };
    let mut seen_in_test = HashSet::new();
    for fold in 1..=5 {
        let split = fold_split(&ds, fold).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (80_000, 20_000), "fold {fold}");
        let train: HashSet<usize> = split.train.iter().copied().collect();
        assert!(split.test.iter().all(|i| !train.contains(i)));
        for i in split.test {
            assert!(seen_in_test.insert(i), "rating {i} tested twice");
        }
    }
    assert_eq!(seen_in_test.len(), ds.len());
}

#[test]
fn first_user_record() {
    let Some(ds) = ml100k() else { return };
    let u = &ds.users()[0];
    assert_eq!((u.id.as_str(), u.age, u.gender.as_str(), u.occupation.as_str(), u.zip.as_str()), ("1", 24, "M", "technician", "85711"));
    let toy_story = &ds.movies()[0];
    assert_eq!(toy_story.genres, ["Animation", "Children's", "Comedy"]);
}

#[test]
fn constant_mean_baseline_on_fold_one() {
    let Some(ds) = ml100k() else { return };
    let split = fold_split(&ds, 1).unwrap();
    let r = ds.ratings();
    let mean = split.train.iter().map(|&i| f64::from(r[i].rating)).sum::<f64>() / split.train.len() as f64;
    let mse = split.test.iter().map(|&i| (f64::from(r[i].rating) - mean).powi(2)).sum::<f64>() / split.test.len() as f64;
    // numpy over u1.base / u1.test: sqrt(mean((test - mean(train))**2)).
    assert!((mse.sqrt() - 1.153_675_947_786_032).abs() < 1e-9);
    assert!((1.0..=1.3).contains(&mse.sqrt()));
}
