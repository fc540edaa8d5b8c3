mod common;

use std::fs;
use std::path::Path;

use colora_core::data::DatasetKind;
use colora_core::harness::{self, evaluate_registry, run_continual};
use colora_core::registry::{save_base, TaskMeta, MANIFEST_FILE};
use colora_core::{
    init_adapter_set, AdapterConfig, AdapterSet, ArchSpec, DatasetSpec, Error, Fingerprint,
    Registry, RunConfig,
};
use sha2::{Digest, Sha256};

use common::checks::scramble;

fn meta(seed: u64) -> TaskMeta {
    TaskMeta {
        l_st: 0.3,
        proxy_fid: 1.25,
        diversity: 0.5,
        dataset: DatasetSpec {
            kind: DatasetKind::Shape,
            count: 10,
            seed,
            resolution: 16,
        },
    }
}

fn random_set(arch: &ArchSpec, seed: u64) -> AdapterSet<f32> {
    let mut set = init_adapter_set(
        arch,
        AdapterConfig::new(1 + seed as usize % 3, 1.0, 0.5),
        seed,
    )
    .unwrap();
    scramble(&mut set, &mut common::rng(seed));
    set
}

fn hash(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn fresh(dir: &Path) -> Registry {
    Registry::create(
        dir,
        &ArchSpec::mini(),
        Fingerprint([7; 32]),
        Path::new("base.clrg"),
    )
    .unwrap()
}

#[test]
fn later_tasks_never_touch_earlier_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ArchSpec::mini();
    let mut reg = fresh(dir.path());
    let mut hashes = Vec::new();
    for i in 0..5u64 {
        let id = format!("task{i}");
        reg.add_task(&id, &random_set(&arch, i), meta(i)).unwrap();
        let rec = reg.task(&id).unwrap().clone();
        hashes.push(hash(&reg.checkpoint_path(&rec)));
        for (j, h) in hashes.iter().enumerate() {
            let rec = reg.task(&format!("task{j}")).unwrap();
            assert_eq!(
                &hash(&reg.checkpoint_path(rec)),
                h,
                "task{j} changed after task{i}"
            );
        }
    }
    let reopened = Registry::open(dir.path()).unwrap();
    let order: Vec<_> = reopened.tasks().iter().map(|t| t.task_id.clone()).collect();
    assert_eq!(order, ["task0", "task1", "task2", "task3", "task4"]);
    for i in 0..5u64 {
        assert_eq!(
            reopened.load_task(&format!("task{i}")).unwrap(),
            random_set(&arch, i)
        );
    }
}

#[test]
fn duplicate_leaves_manifest_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ArchSpec::mini();
    let mut reg = fresh(dir.path());
    reg.add_task("a", &random_set(&arch, 1), meta(1)).unwrap();
    let before = fs::read(reg.manifest_path()).unwrap();
    let err = reg
        .add_task("a", &random_set(&arch, 2), meta(2))
        .unwrap_err();
    assert!(matches!(err, Error::DuplicateTask(_)));
    assert_eq!(fs::read(reg.manifest_path()).unwrap(), before);
    assert_eq!(reg.load_task("a").unwrap(), random_set(&arch, 1));
}

#[test]
fn second_handle_sees_duplicates_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ArchSpec::mini();
    let mut one = fresh(dir.path());
    let mut two = Registry::open(dir.path()).unwrap();
    one.add_task("x", &random_set(&arch, 1), meta(1)).unwrap();
    assert!(matches!(
        two.add_task("x", &random_set(&arch, 2), meta(2)),
        Err(Error::DuplicateTask(_))
    ));
    two.add_task("y", &random_set(&arch, 3), meta(3)).unwrap();
    let ids: Vec<_> = Registry::open(dir.path())
        .unwrap()
        .tasks()
        .iter()
        .map(|t| t.task_id.clone())
        .collect();
    assert_eq!(ids, ["x", "y"]);
}

#[test]
fn held_lock_blocks_writers_not_readers() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ArchSpec::mini();
    let mut reg = fresh(dir.path());
    reg.add_task("a", &random_set(&arch, 1), meta(1)).unwrap();
    fs::write(dir.path().join(".lock"), b"").unwrap();
    assert!(matches!(
        reg.add_task("b", &random_set(&arch, 2), meta(2)),
        Err(Error::Locked(_))
    ));
    let reader = Registry::open(dir.path()).unwrap();
    assert_eq!(reader.tasks().len(), 1);
    reader.load_task("a").unwrap();
    fs::remove_file(dir.path().join(".lock")).unwrap();
    reg.add_task("b", &random_set(&arch, 2), meta(2)).unwrap();
}

/// A crash after writing the temp manifest but before the rename leaves the
/// old manifest authoritative.
#[test]
fn interrupted_manifest_write_keeps_old_state() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ArchSpec::mini();
    let mut reg = fresh(dir.path());
    reg.add_task("a", &random_set(&arch, 1), meta(1)).unwrap();
    let old = Registry::open(dir.path()).unwrap();

    let manifest = dir.path().join(MANIFEST_FILE);
    let mut text = fs::read_to_string(&manifest).unwrap();
    text.push_str("b\ttasks/b.clrg\t1\t1.0\t0.5\t0.3\t1.0\t0.4\t0\t{\"kind\":");
    fs::write(dir.path().join(format!("{MANIFEST_FILE}.tmp")), &text).unwrap();
    assert_eq!(Registry::open(dir.path()).unwrap(), old);

    reg.add_task("b", &random_set(&arch, 2), meta(2)).unwrap();
    assert_eq!(Registry::open(dir.path()).unwrap().tasks().len(), 2);
}

#[test]
fn malformed_manifest_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let arch = ArchSpec::mini();
    let mut reg = fresh(dir.path());
    reg.add_task("a", &random_set(&arch, 1), meta(1)).unwrap();
    let manifest = dir.path().join(MANIFEST_FILE);
    let mut text = fs::read_to_string(&manifest).unwrap();
    text.push_str("broken\trow\n");
    fs::write(&manifest, text).unwrap();
    assert!(matches!(
        Registry::open(dir.path()),
        Err(Error::Manifest { .. })
    ));
}

#[test]
fn missing_registry_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Registry::open(&dir.path().join("nope")).is_err());
}

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::synthetic_benchmark("mini");
    cfg.pretrain.iterations = 2;
    cfg.train.iterations = 2;
    cfg.source.count = 16;
    cfg.run.fid_samples = 12;
    cfg.run.diversity_samples = 4;
    cfg.run.probe_samples = 4;
    cfg
}

#[test]
fn stored_tasks_evaluate_identically_forever() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let base = harness::pretrain(&cfg).unwrap().weights;
    let base_path = dir.path().join("base.clrg");
    save_base(&base, &base_path).unwrap();
    let root = dir.path().join("reg");
    let (reg, report) = run_continual(&cfg, &base, &base_path, &root).unwrap();
    assert_eq!(report.outcomes.len(), cfg.tasks.len());
    for o in &report.outcomes {
        assert_eq!(
            o.after_training.proxy_fid.to_bits(),
            o.after_final.proxy_fid.to_bits()
        );
        assert_eq!(
            o.after_training.diversity.to_bits(),
            o.after_final.diversity.to_bits()
        );
    }
    let first = evaluate_registry(&reg, &cfg.run).unwrap();
    let second = evaluate_registry(&Registry::open(&root).unwrap(), &cfg.run).unwrap();
    assert_eq!(first.to_csv(), second.to_csv());
    for (cell, o) in first.rows[0].1.iter().zip(&report.outcomes) {
        assert_eq!(cell.proxy_fid.to_bits(), o.after_final.proxy_fid.to_bits());
    }
}

#[test]
fn empty_task_list_is_rejected() {
    let mut cfg = tiny_config();
    cfg.tasks.clear();
    let dir = tempfile::tempdir().unwrap();
    let base = colora_core::GeneratorWeights::<f32>::init(&ArchSpec::mini(), 0).unwrap();
    let err = run_continual(&cfg, &base, &dir.path().join("b"), &dir.path().join("r")).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
