#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::sync::Arc;

use rand::Rng;
use serde_json::json;

use egoverse_core::align::RotationFormat;
use egoverse_core::datamodel::Embodiment;
use egoverse_core::ingest::{upload_episode, Scanner, UploadMetadata};
use egoverse_core::pipeline::{run_round, Adapters, RoundOptions, SyntheticEpisode};
use egoverse_core::registry::SqliteRegistry;
use egoverse_core::store::FsStore;

pub const BIN: &str = env!("CARGO_BIN_EXE_egoverse");

pub fn egoverse(args: &[&str]) -> Output {
    command(args).output().expect("binary runs")
}

pub fn command(args: &[&str]) -> Command {
    let mut c = Command::new(BIN);
    c.args(args)
        .env_remove("EGODB_REGISTRY")
        .env_remove("EGODB_STORE")
        .env_remove("EGODB_TOKEN")
        .env_remove("RUST_LOG");
    c
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn sigint(child: &Child) {
    let rc = unsafe { libc::kill(child.id() as libc::pid_t, libc::SIGINT) };
    assert_eq!(rc, 0, "kill failed");
}

/// Reads lines from a child's stdout until `pred` accepts one.
pub fn wait_for_line(out: &mut BufReader<ChildStdout>, mut pred: impl FnMut(&str) -> bool) -> String {
    let mut line = String::new();
    loop {
        line.clear();
        let n = out.read_line(&mut line).expect("read child stdout");
        assert!(n > 0, "child closed stdout early");
        if pred(line.trim_end()) {
            return line.trim_end().to_owned();
        }
    }
}

pub fn spawn(args: &[&str], envs: &[(&str, &str)]) -> (Child, BufReader<ChildStdout>) {
    let mut c = command(args);
    c.envs(envs.iter().copied()).stdout(Stdio::piped()).stderr(Stdio::null());
    let mut child = c.spawn().expect("spawn binary");
    let out = BufReader::new(child.stdout.take().expect("piped stdout"));
    (child, out)
}

/// File-backed registry and store under a temporary directory.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("tempdir"),
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn registry_path(&self) -> PathBuf {
        self.path().join("registry.sqlite")
    }

    pub fn store_path(&self) -> PathBuf {
        self.path().join("store")
    }

    pub fn registry_uri(&self) -> String {
        format!("file://{}", self.registry_path().display())
    }

    pub fn store_uri(&self) -> String {
        format!("file://{}", self.store_path().display())
    }

    pub fn registry(&self) -> Arc<SqliteRegistry> {
        Arc::new(SqliteRegistry::open(self.registry_path()).expect("open registry"))
    }

    pub fn store(&self) -> Arc<FsStore> {
        Arc::new(FsStore::new(self.store_path()).expect("open store"))
    }

    /// `egoverse <args> --registry .. --store ..`
    pub fn run(&self, args: &[&str]) -> Output {
        let (r, s) = (self.registry_uri(), self.store_uri());
        let mut all = args.to_vec();
        all.extend(["--registry", &r, "--store", &s]);
        egoverse(&all)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> PathBuf {
        let p = self.path().join(name);
        std::fs::write(&p, contents).expect("write file");
        p
    }

    /// Uploads `episodes` with the given labs through the library and
    /// returns their hashes.
    pub async fn upload(&self, episodes: &[(UploadMetadata, Vec<u8>)], first_ns: i64) -> Vec<String> {
        let store = self.store();
        let mut out = Vec::new();
        for (i, (meta, raw)) in episodes.iter().enumerate() {
            let m = upload_episode(store.as_ref(), raw.clone(), meta, "fixture", first_ns + i as i64)
                .await
                .expect("upload");
            out.push(m.episode_hash);
        }
        out
    }

    pub async fn scan_and_process(&self) {
        let (registry, store) = (self.registry(), self.store());
        Scanner::new(store.clone(), registry.clone()).scan_once().await.expect("scan");
        let s = run_round(registry.as_ref(), store.as_ref(), &Adapters::default(), &RoundOptions::default())
            .await
            .expect("round");
        assert_eq!(s.failed, 0, "{:?}", s.failures);
    }
}

pub fn meta(lab: &str, task: &str, embodiment: Embodiment) -> UploadMetadata {
    serde_json::from_value(json!({
        "operator": "op",
        "lab": lab,
        "task": task,
        "embodiment": embodiment,
        "robot_name": (embodiment == Embodiment::Robot).then_some("arx"),
        "scene": "kitchen",
        "objects": ["towel"],
        "task_description": format!("{task} in {lab}"),
    }))
    .expect("metadata")
}

pub fn meta_json(lab: &str, task: &str, embodiment: Embodiment) -> String {
    serde_json::to_string(&meta(lab, task, embodiment)).expect("serializes")
}

pub fn human_raw<R: Rng>(rng: &mut R) -> Vec<u8> {
    let frames = rng.random_range(35..60);
    SyntheticEpisode::random_human(rng, frames, 30.0).to_bytes()
}

pub fn robot_raw<R: Rng>(rng: &mut R) -> Vec<u8> {
    let frames = rng.random_range(50..70);
    let rotation = if rng.random_bool(0.5) {
        RotationFormat::Quaternion
    } else {
        RotationFormat::Euler
    };
    SyntheticEpisode::random_robot(rng, frames, 30.0, rotation).to_bytes()
}
