//! Per-run artifact directories written atomically.
//!
//! A run is assembled in a hidden staging directory next to its final
//! location and renamed into place only once every artifact and the
//! manifest are on disk. A failure at any point drops the staging
//! directory, so readers see either the complete previous state or the
//! complete new one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synth::ToyPolicy;

const MANIFEST: &str = "manifest.json";
const STORE_VERSION: u32 = 1;

/// sha256 of the canonical JSON encoding of a configuration.
pub fn fingerprint<T: Serialize>(config: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    /// Refuse if the run exists.
    CreateNew,
    /// Replace an existing run wholesale.
    Overwrite,
    /// Add to an existing run with the same fingerprint.
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub run_id: String,
    pub fingerprint: String,
    /// Artifact name to sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

/// Collects artifacts into a staging directory.
pub struct ArtifactWriter {
    dir: PathBuf,
    written: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        check_name(name, "artifact")?;
        if name == MANIFEST {
            return Err(Error::Config(format!("'{MANIFEST}' is reserved")));
        }
        fs::write(self.dir.join(name), bytes)?;
        self.written
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

pub struct RunStore {
    root: PathBuf,
}

fn check_name(name: &str, what: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "invalid {what} name {name:?}: use [A-Za-z0-9._-], not starting with '.'"
        )))
    }
}

impl RunStore {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.run_dir(run_id).join(MANIFEST).is_file()
    }

    /// Completed runs, sorted. Staging directories are hidden.
    pub fn runs(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') && self.exists(&name) {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn manifest(&self, run_id: &str) -> Result<RunManifest> {
        check_name(run_id, "run")?;
        let path = self.run_dir(run_id).join(MANIFEST);
        if !path.is_file() {
            return Err(Error::RunNotFound(run_id.into()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Reads an artifact, checking it against the manifest's hash.
    pub fn read_artifact(&self, run_id: &str, name: &str) -> Result<Vec<u8>> {
        let m = self.manifest(run_id)?;
        let want = m
            .artifacts
            .get(name)
            .ok_or_else(|| Error::Structure(format!("run '{run_id}' has no artifact '{name}'")))?;
        let bytes = fs::read(self.run_dir(run_id).join(name))?;
        if hex::encode(Sha256::digest(&bytes)) != *want {
            return Err(Error::Integrity(format!(
                "artifact '{name}' of run '{run_id}' does not match its manifest"
            )));
        }
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, run_id: &str, name: &str) -> Result<T> {
        Ok(serde_json::from_slice(&self.read_artifact(run_id, name)?)?)
    }

    /// Persists a set of in-memory artifacts.
    pub fn persist(
        &self,
        run_id: &str,
        fingerprint: &str,
        mode: WriteMode,
        artifacts: &[(&str, &[u8])],
    ) -> Result<PathBuf> {
        self.persist_with(run_id, fingerprint, mode, |w| {
            for (name, bytes) in artifacts {
                w.write(name, bytes)?;
            }
            Ok(())
        })
    }

    /// Lets `produce` stream artifacts into staging. If it fails, nothing
    /// becomes visible and any previous run content is untouched.
    pub fn persist_with(
        &self,
        run_id: &str,
        fingerprint: &str,
        mode: WriteMode,
        produce: impl FnOnce(&mut ArtifactWriter) -> Result<()>,
    ) -> Result<PathBuf> {
        check_name(run_id, "run")?;
        let target = self.run_dir(run_id);
        let previous = if self.exists(run_id) {
            Some(self.manifest(run_id)?)
        } else {
            None
        };
        match (mode, &previous) {
            (WriteMode::CreateNew, Some(_)) => return Err(Error::RunExists(run_id.into())),
            (WriteMode::Resume, Some(m)) if m.fingerprint != fingerprint => {
                return Err(Error::FingerprintMismatch {
                    stored: m.fingerprint.clone(),
                    requested: fingerprint.into(),
                })
            }
            _ => {}
        }

        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(&self.root)?;
        let mut writer = ArtifactWriter {
            dir: staging.path().to_path_buf(),
            written: BTreeMap::new(),
        };
        if let (WriteMode::Resume, Some(m)) = (mode, &previous) {
            for name in m.artifacts.keys() {
                fs::copy(target.join(name), writer.dir.join(name))?;
            }
            writer.written = m.artifacts.clone();
        }
        produce(&mut writer)?;

        let manifest = RunManifest {
            version: STORE_VERSION,
            run_id: run_id.into(),
            fingerprint: fingerprint.into(),
            artifacts: writer.written,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(writer.dir.join(MANIFEST), bytes)?;
        for name in manifest
            .artifacts
            .keys()
            .map(String::as_str)
            .chain([MANIFEST])
        {
            fs::File::open(writer.dir.join(name))?.sync_all()?;
        }

        let staged = staging.keep();
        if target.exists() {
            // a directory cannot be renamed over a non-empty one: swap via a
            // hidden name, then drop the old content
            let trash = tempfile::Builder::new()
                .prefix(".trash-")
                .tempdir_in(&self.root)?;
            let trash_path = trash.path().join("old");
            fs::rename(&target, &trash_path)?;
            if let Err(e) = fs::rename(&staged, &target) {
                let _ = fs::rename(&trash_path, &target);
                let _ = fs::remove_dir_all(&staged);
                return Err(e.into());
            }
            drop(trash);
        } else if let Err(e) = fs::rename(&staged, &target) {
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        Ok(target)
    }
}

/// Versioned, self-describing snapshot of a trained toy policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub fingerprint: String,
    pub candidates: usize,
    pub temperature: f64,
    pub logits: Vec<f64>,
}

impl PolicyCheckpoint {
    pub fn new(policy: &ToyPolicy, fingerprint: impl Into<String>) -> Self {
        Self {
            version: STORE_VERSION,
            fingerprint: fingerprint.into(),
            candidates: policy.logits.len(),
            temperature: policy.temperature,
            logits: policy.logits.clone(),
        }
    }

    pub fn into_policy(self) -> Result<ToyPolicy> {
        if self.version != STORE_VERSION {
            return Err(Error::Structure(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.logits.len() != self.candidates {
            return Err(Error::Integrity(format!(
                "checkpoint declares {} candidates but stores {} logits",
                self.candidates,
                self.logits.len()
            )));
        }
        let p = ToyPolicy {
            logits: self.logits,
            temperature: self.temperature,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn listing(root: &Path) -> Vec<String> {
        let mut v: Vec<String> = fs::read_dir(root)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store
            .persist(
                "r1",
                "fp",
                WriteMode::CreateNew,
                &[("a.txt", b"hello"), ("b.csv", b"x,y\n")],
            )
            .unwrap();
        assert_eq!(store.read_artifact("r1", "a.txt").unwrap(), b"hello");
        let m = store.manifest("r1").unwrap();
        assert_eq!(m.fingerprint, "fp");
        assert_eq!(
            m.artifacts.keys().collect::<Vec<_>>(),
            vec!["a.txt", "b.csv"]
        );
        assert_eq!(store.runs().unwrap(), vec!["r1"]);
        assert_eq!(listing(dir.path()), vec!["r1"]);
    }

    #[test]
    fn collision_refused_unless_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store
            .persist("r", "fp", WriteMode::CreateNew, &[("a", b"1")])
            .unwrap();
        assert!(matches!(
            store.persist("r", "fp", WriteMode::CreateNew, &[("a", b"2")]),
            Err(Error::RunExists(_))
        ));
        store
            .persist("r", "other", WriteMode::Overwrite, &[("b", b"2")])
            .unwrap();
        let m = store.manifest("r").unwrap();
        assert_eq!(m.fingerprint, "other");
        assert!(!m.artifacts.contains_key("a"));
        assert!(!store.run_dir("r").join("a").exists());
        assert_eq!(listing(dir.path()), vec!["r"]);
    }

    #[test]
    fn resume_checks_fingerprint_and_merges() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store
            .persist("r", "aaa", WriteMode::CreateNew, &[("a", b"1")])
            .unwrap();
        match store.persist("r", "bbb", WriteMode::Resume, &[("b", b"2")]) {
            Err(Error::FingerprintMismatch { stored, requested }) => {
                assert_eq!((stored.as_str(), requested.as_str()), ("aaa", "bbb"));
            }
            other => panic!("{other:?}"),
        }
        store
            .persist("r", "aaa", WriteMode::Resume, &[("b", b"2")])
            .unwrap();
        assert_eq!(store.read_artifact("r", "a").unwrap(), b"1");
        assert_eq!(store.read_artifact("r", "b").unwrap(), b"2");
    }

    #[test]
    fn failed_producer_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let err = store.persist_with("r", "fp", WriteMode::CreateNew, |w| {
            w.write("first", b"partial")?;
            Err(Error::Io(std::io::Error::other("disk full")))
        });
        assert!(err.is_err());
        assert!(listing(dir.path()).is_empty());
        assert!(!store.exists("r"));

        // a failed overwrite keeps the previous complete run
        store
            .persist("r", "fp", WriteMode::CreateNew, &[("a", b"old")])
            .unwrap();
        let err = store.persist_with("r", "fp2", WriteMode::Overwrite, |w| {
            w.write("a", b"new")?;
            Err(Error::Io(std::io::Error::other("killed")))
        });
        assert!(err.is_err());
        assert_eq!(store.read_artifact("r", "a").unwrap(), b"old");
        assert_eq!(listing(dir.path()), vec!["r"]);
    }

    #[test]
    fn tampered_artifact_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store
            .persist("r", "fp", WriteMode::CreateNew, &[("a", b"1")])
            .unwrap();
        fs::write(store.run_dir("r").join("a"), b"2").unwrap();
        assert!(matches!(
            store.read_artifact("r", "a"),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn names_validated() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        for bad in ["", "../x", ".hidden", "a/b"] {
            assert!(
                store.persist(bad, "fp", WriteMode::CreateNew, &[]).is_err(),
                "{bad}"
            );
            assert!(
                store
                    .persist("ok", "fp", WriteMode::Overwrite, &[(bad, b"")])
                    .is_err(),
                "{bad}"
            );
        }
        assert!(store
            .persist("ok", "fp", WriteMode::Overwrite, &[(MANIFEST, b"")])
            .is_err());
        assert!(matches!(store.manifest("nope"), Err(Error::RunNotFound(_))));
    }

    #[test]
    fn fingerprint_is_stable() {
        #[derive(Serialize)]
        struct C {
            a: f64,
            b: &'static str,
        }
        let x = fingerprint(&C { a: 0.5, b: "x" }).unwrap();
        assert_eq!(x, fingerprint(&C { a: 0.5, b: "x" }).unwrap());
        assert_ne!(x, fingerprint(&C { a: 0.25, b: "x" }).unwrap());
        assert_eq!(x.len(), 64);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ToyPolicy {
            logits: vec![0.1, -2.0, 0.3 + 1e-17],
            temperature: 0.7,
        };
        let c = PolicyCheckpoint::new(&p, "fp");
        let back: PolicyCheckpoint =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.into_policy().unwrap(), p);
        let mut broken = c.clone();
        broken.candidates = 4;
        assert!(matches!(broken.into_policy(), Err(Error::Integrity(_))));
    }
}
