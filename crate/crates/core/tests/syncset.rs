use std::collections::BTreeMap;
use std::path::Path;

use egoverse_core::datamodel::{make_episode_hash, Embodiment, EpisodeRecord};
use egoverse_core::registry::{EpisodeFilter, ProcessingOutcome, Registry, SqliteRegistry};
use egoverse_core::store::{FsStore, ObjectStore};
use egoverse_core::syncset::{
    permutation, resolve, run_sync, split, sync, SplitMode, SyncConfig, SyncError, LOCK_FILE, RECORD_FILE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(i: usize, lab: &str, embodiment: Embodiment) -> EpisodeRecord {
    let mut r = EpisodeRecord::new(
        make_episode_hash(i as i64 + 1, "sync").unwrap(),
        "op",
        lab,
        format!("task{}", i % 3),
        "desk",
        embodiment,
    );
    if embodiment == Embodiment::Robot {
        r.robot_name = Some("arx".into());
    }
    r
}

fn records(n: usize) -> Vec<EpisodeRecord> {
    let mut v: Vec<_> = (0..n).map(|i| record(i, "lab", Embodiment::Human)).collect();
    v.sort_by(|a, b| (&a.lab, &a.task, &a.episode_hash).cmp(&(&b.lab, &b.task, &b.episode_hash)));
    v
}

fn hashes(v: &[EpisodeRecord]) -> Vec<&str> {
    v.iter().map(|r| r.episode_hash.as_str()).collect()
}

#[test]
fn golden_split_of_ten() {
    let all = records(10);
    let train = split(&all, SplitMode::Train, 0.2, 100.0, 42).unwrap();
    let valid = split(&all, SplitMode::Valid, 0.2, 100.0, 42).unwrap();
    assert_eq!(train.len(), 8);
    assert_eq!(valid.len(), 2);
    let short: Vec<&str> = valid.iter().map(|r| &r.episode_hash[..8]).collect();
    assert_eq!(short, GOLDEN_VALID);
    assert_eq!(permutation(&all, 42), GOLDEN_PERMUTATION);
    let mut union = hashes(&train);
    union.extend(hashes(&valid));
    union.sort();
    let mut expected = hashes(&all);
    expected.sort();
    assert_eq!(union, expected);
}

const GOLDEN_VALID: [&str; 2] = ["35cddf89", "6f6d22b6"];
const GOLDEN_PERMUTATION: [usize; 10] = [4, 1, 3, 6, 0, 8, 7, 2, 5, 9];

#[test]
fn total_percent_and_argument_rules() {
    let all = records(10);
    assert_eq!(split(&all, SplitMode::Total, 0.0, 100.0, 1).unwrap(), all);
    assert_eq!(split(&records(3), SplitMode::Percent, 0.0, 50.0, 1).unwrap().len(), 2);
    assert_eq!(split(&records(3), SplitMode::Percent, 0.0, 0.1, 1).unwrap().len(), 1);
    assert!(split(&[], SplitMode::Train, 0.5, 100.0, 1).unwrap().is_empty());
    for (v, p) in [(1.0, 50.0), (-0.1, 50.0), (0.2, 0.0), (0.2, 100.5), (f64::NAN, 50.0)] {
        assert!(matches!(
            split(&all, SplitMode::Train, v, p, 1),
            Err(SyncError::InvalidArgument(_))
        ));
    }
}

#[test]
fn split_ignores_input_order_for_membership() {
    let all = records(12);
    let mut shuffled = all.clone();
    shuffled.reverse();
    let a = split(&all, SplitMode::Valid, 0.25, 100.0, 9).unwrap();
    let mut b = split(&shuffled, SplitMode::Valid, 0.25, 100.0, 9).unwrap();
    b.reverse();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn train_and_valid_partition(n in 0usize..40, ratio in 0.0f64..0.999, seed: u64) {
        let all = records(n);
        let train = split(&all, SplitMode::Train, ratio, 100.0, seed).unwrap();
        let valid = split(&all, SplitMode::Valid, ratio, 100.0, seed).unwrap();
        prop_assert_eq!(valid.len(), (n as f64 * ratio).floor() as usize);
        let mut both = hashes(&train);
        both.extend(hashes(&valid));
        both.sort();
        let mut expected = hashes(&all);
        expected.sort();
        prop_assert_eq!(both, expected);
    }

    #[test]
    fn percent_subsets_are_nested(n in 1usize..40, p in 0.01f64..100.0, q in 0.01f64..100.0, seed: u64) {
        let (p, q) = if p <= q { (p, q) } else { (q, p) };
        let all = records(n);
        let small = split(&all, SplitMode::Percent, 0.0, p, seed).unwrap();
        let large = split(&all, SplitMode::Percent, 0.0, q, seed).unwrap();
        prop_assert_eq!(small.len(), ((n as f64 * p / 100.0).ceil() as usize).min(n));
        prop_assert!(small.iter().all(|r| large.contains(r)));
    }

    #[test]
    fn splits_are_reproducible(n in 0usize..30, seed: u64) {
        let all = records(n);
        let a = serde_json::to_vec(&split(&all, SplitMode::Percent, 0.0, 60.0, seed).unwrap()).unwrap();
        let b = serde_json::to_vec(&split(&all, SplitMode::Percent, 0.0, 60.0, seed).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

async fn registry_with(records: &[(EpisodeRecord, bool, bool)]) -> SqliteRegistry {
    let reg = SqliteRegistry::in_memory().unwrap();
    for (r, processed, deleted) in records {
        reg.register_episode(r).await.unwrap();
        if *processed {
            let path = format!("processed/{}", r.episode_hash);
            reg.update_processing(&r.episode_hash, &ProcessingOutcome::success(path, 10, None))
                .await
                .unwrap();
        }
        if *deleted {
            reg.mark_deleted(&r.episode_hash).await.unwrap();
        }
    }
    reg
}

#[tokio::test]
async fn resolve_selection_rules() {
    let mut fixture = Vec::new();
    for i in 0..3 {
        fixture.push((record(i, "a", Embodiment::Human), true, false));
    }
    for i in 3..5 {
        fixture.push((record(i, "a", Embodiment::Human), false, false));
    }
    fixture.push((record(5, "a", Embodiment::Robot), true, false));
    let reg = registry_with(&fixture).await;
    let got = resolve(&EpisodeFilter::default(), Some(Embodiment::Human), &reg).await.unwrap();
    let mut want: Vec<_> = fixture[..3].iter().map(|(r, _, _)| r.episode_hash.clone()).collect();
    want.sort();
    let mut got_h: Vec<_> = got.iter().map(|r| r.episode_hash.clone()).collect();
    got_h.sort();
    assert_eq!(got_h, want);
    assert_eq!(resolve(&EpisodeFilter::default(), None, &reg).await.unwrap().len(), 4);

    let empty = SqliteRegistry::in_memory().unwrap();
    assert!(resolve(&EpisodeFilter::default(), None, &empty).await.unwrap().is_empty());
}

#[tokio::test]
async fn resolve_matches_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..10 {
        let fixture: Vec<_> = (0..60)
            .map(|i| {
                let emb = if rng.random_bool(0.5) { Embodiment::Human } else { Embodiment::Robot };
                let lab = ["a", "b", "c"][rng.random_range(0..3)];
                (record(round * 100 + i, lab, emb), rng.random_bool(0.6), rng.random_bool(0.2))
            })
            .collect();
        let reg = registry_with(&fixture).await;
        let filter = EpisodeFilter {
            lab: rng.random_bool(0.5).then(|| "b".to_string()),
            ..Default::default()
        };
        let emb = [None, Some(Embodiment::Human), Some(Embodiment::Robot)][rng.random_range(0..3)];
        let got = resolve(&filter, emb, &reg).await.unwrap();

        let mut want: Vec<(String, String, String)> = fixture
            .iter()
            .filter(|(r, processed, deleted)| {
                *processed
                    && !*deleted
                    && emb.is_none_or(|e| e == r.embodiment)
                    && filter.lab.as_ref().is_none_or(|l| *l == r.lab)
            })
            .map(|(r, _, _)| (r.lab.clone(), r.task.clone(), r.episode_hash.clone()))
            .collect();
        want.sort();
        let got: Vec<_> = got
            .iter()
            .map(|r| (r.lab.clone(), r.task.clone(), r.episode_hash.clone()))
            .collect();
        assert_eq!(got, want);
    }
}

async fn seeded_store(dir: &Path, recs: &[EpisodeRecord]) -> FsStore {
    let store = FsStore::new(dir).unwrap();
    for (i, r) in recs.iter().enumerate() {
        let p = r.processed_path.as_ref().unwrap();
        store.put(&format!("{p}/canonical.bin"), vec![i as u8; 64]).await.unwrap();
        store.put(&format!("{p}/preview_00000.ppm"), vec![b'P', i as u8]).await.unwrap();
    }
    store
}

fn processed(n: usize) -> Vec<EpisodeRecord> {
    records(n)
        .into_iter()
        .map(|mut r| {
            r.processed_path = Some(format!("processed/{}", r.episode_hash));
            r.num_frames = Some(10);
            r
        })
        .collect()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            (
                e.path().strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[tokio::test]
async fn sync_skips_verified_objects() {
    let tmp = tempfile::tempdir().unwrap();
    let recs = processed(5);
    let store = seeded_store(&tmp.path().join("store"), &recs).await;
    let cache = tmp.path().join("cache");

    let r1 = sync(&recs, &store, &cache, 2).await.unwrap();
    assert_eq!((r1.downloaded, r1.skipped, r1.failed), (5, 0, 0));
    assert_eq!(r1.paths.len(), 5);
    let first = snapshot(&cache);
    assert_eq!(first.len(), 15);
    let rec: EpisodeRecord =
        serde_json::from_slice(&first[&format!("{}/{RECORD_FILE}", recs[0].episode_hash)]).unwrap();
    assert_eq!(rec, recs[0]);

    let r2 = sync(&recs, &store, &cache, 2).await.unwrap();
    assert_eq!((r2.downloaded, r2.skipped, r2.failed), (0, 5, 0));
    assert_eq!(snapshot(&cache), first);

    let victim = cache.join(&recs[3].episode_hash).join("canonical.bin");
    std::fs::write(&victim, b"torn").unwrap();
    let r3 = sync(&recs, &store, &cache, 2).await.unwrap();
    assert_eq!((r3.downloaded, r3.skipped), (1, 4));
    assert_eq!(snapshot(&cache), first);
}

#[tokio::test]
async fn sync_reports_missing_blobs() {
    let tmp = tempfile::tempdir().unwrap();
    let recs = processed(5);
    let store = seeded_store(&tmp.path().join("store"), &recs[..4]).await;
    let cache = tmp.path().join("cache");
    let r = sync(&recs, &store, &cache, 3).await.unwrap();
    assert_eq!((r.downloaded, r.failed), (4, 1));
    assert!(!r.is_complete());
    assert_eq!(r.failures[0].0, recs[4].episode_hash);
    for rec in &recs[..4] {
        assert!(cache.join(&rec.episode_hash).join("canonical.bin").exists());
    }
    assert!(!cache.join(LOCK_FILE).exists());
}

#[tokio::test]
async fn concurrent_sync_fails_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let recs = processed(1);
    let store = seeded_store(&tmp.path().join("store"), &recs).await;
    let cache = tmp.path().join("cache");
    std::fs::create_dir_all(&cache).unwrap();
    std::fs::write(cache.join(LOCK_FILE), b"").unwrap();
    assert!(matches!(sync(&recs, &store, &cache, 1).await, Err(SyncError::Locked(_))));
    assert!(matches!(sync(&recs, &store, &cache, 0).await, Err(SyncError::InvalidArgument(_))));
}

#[tokio::test]
async fn run_sync_from_config() {
    let tmp = tempfile::tempdir().unwrap();
    let recs = processed(10);
    let store = seeded_store(&tmp.path().join("store"), &recs).await;
    let reg = SqliteRegistry::in_memory().unwrap();
    for r in &recs {
        let mut fresh = r.clone();
        fresh.processed_path = None;
        fresh.num_frames = None;
        reg.register_episode(&fresh).await.unwrap();
        reg.update_processing(&r.episode_hash, &ProcessingOutcome::success(r.processed_path.clone().unwrap(), 10, None))
            .await
            .unwrap();
    }
    let cache = tmp.path().join("cache");
    let text = format!(
        "cache_dir = {:?}\nmode = \"train\"\nval_ratio = 0.2\nseed = 42\nparallelism = 3\nembodiment = \"human\"\n\n[filter]\nlab = \"lab\"\n",
        cache.display().to_string()
    );
    let cfg = SyncConfig::from_toml(&text).unwrap();
    let (selected, report) = run_sync(&cfg, &reg, &store).await.unwrap();
    assert_eq!(selected.len(), 8);
    assert_eq!((report.downloaded, report.skipped), (8, 0));
    let (_, report) = run_sync(&cfg, &reg, &store).await.unwrap();
    assert_eq!(report.to_string(), "downloaded=0 skipped=8 failed=0");

    assert!(SyncConfig::from_toml("cache_dir = \"x\"\nmode = \"train\"\nval_ration = 0.2\n").is_err());
    assert!(SyncConfig::from_toml("cache_dir = \"x\"\nmode = \"percent\"\npercent = 0\n").is_err());
    assert!(SyncConfig::from_toml("cache_dir = \"x\"\nmode = \"sideways\"\n").is_err());
}
