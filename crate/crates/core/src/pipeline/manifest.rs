//! Output layout and stage manifests.
//!
//! Every stage writes `<kind>/<stage>.manifest.json` recording the run
//! configuration hash, a stage key (the hash of the configuration the stage
//! depends on, chained with its upstream key), and sha256 digests of the
//! files it read and wrote. A downstream stage refuses to start when the
//! upstream manifest is missing, was produced under a different stage key,
//! or its files no longer match their recorded digests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::io::{read_json, write_json};
use crate::data::DefectKind;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    Train,
    Explain,
    Evaluate,
    Rank,
    Render,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Explain => "explain",
            Stage::Evaluate => "evaluate",
            Stage::Rank => "rank",
            Stage::Render => "render",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Generate => None,
            Stage::Train => Some(Stage::Generate),
            Stage::Explain => Some(Stage::Train),
            Stage::Evaluate => Some(Stage::Explain),
            Stage::Rank => Some(Stage::Evaluate),
            Stage::Render => Some(Stage::Explain),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Paths of one dataset kind's artifacts under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub kind: DefectKind,
}

impl Layout {
    pub fn new(out: &Path, kind: DefectKind) -> Self {
        Self {
            root: out.join(kind.name()),
            kind,
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.model_dir().join("checkpoint.json")
    }

    pub fn canonized(&self) -> PathBuf {
        self.model_dir().join("canonized.json")
    }

    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn ranking(&self) -> PathBuf {
        self.root.join("ranking")
    }

    pub fn render(&self) -> PathBuf {
        self.root.join("render")
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}.manifest.json", stage.name()))
    }

    /// Path relative to the kind's directory, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub version: u32,
    pub stage: Stage,
    pub kind: DefectKind,
    pub config_hash: String,
    pub stage_key: String,
    /// Relative path → sha256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path → sha256 of every file written.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of `files`, keyed by their path relative to the layout root.
pub fn digest_files(layout: &Layout, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| Ok((layout.relative(f), sha256_file(f)?)))
        .collect()
}

/// Every regular file below `dir`, sorted.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_manifest(layout: &Layout, manifest: &StageManifest) -> Result<()> {
    write_json(&layout.manifest(manifest.stage), manifest)
}

pub fn read_manifest(layout: &Layout, stage: Stage) -> Result<StageManifest> {
    let path = layout.manifest(stage);
    if !path.exists() {
        return Err(Error::Missing {
            path,
            hint: format!("run `heatrank {stage}` first"),
        });
    }
    read_json(&path)
}

/// Checks the upstream manifest of `stage` against the key the current
/// configuration expects and against the files on disk. Returns the digests
/// of the upstream outputs, which become this stage's inputs. With `force`
/// mismatches are logged instead of refused.
pub fn check_upstream(
    layout: &Layout,
    stage: Stage,
    expected_key: &str,
    force: bool,
) -> Result<BTreeMap<String, String>> {
    let Some(up) = stage.upstream() else {
        return Ok(BTreeMap::new());
    };
    let manifest = read_manifest(layout, up)?;
    let path = layout.manifest(up);
    let stale = |reason: String| -> Result<()> {
        if force {
            log::warn!("{}: {reason} (continuing because of --force)", path.display());
            Ok(())
        } else {
            Err(Error::Stale {
                path: path.clone(),
                reason: format!("{reason}; re-run `heatrank {up}` or pass --force"),
            })
        }
    };
    if manifest.stage_key != expected_key {
        stale(format!("`{up}` outputs were produced with a different configuration"))?;
    }
    for (rel, digest) in &manifest.outputs {
        let file = layout.root.join(rel);
        if !file.exists() {
            return Err(Error::Missing {
                path: file,
                hint: format!("re-run `heatrank {up}`"),
            });
        }
        if &sha256_file(&file)? != digest {
            stale(format!("{rel} changed since `{up}` wrote it"))?;
        }
    }
    Ok(manifest.outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(layout: &Layout, stage: Stage, key: &str, outputs: &[PathBuf]) -> StageManifest {
        StageManifest {
            version: MANIFEST_VERSION,
            stage,
            kind: layout.kind,
            config_hash: "c".into(),
            stage_key: key.into(),
            inputs: BTreeMap::new(),
            outputs: digest_files(layout, outputs).unwrap(),
        }
    }

    #[test]
    fn upstream_checks() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path(), DefectKind::Discolor);
        std::fs::create_dir_all(&layout.root).unwrap();
        let err = check_upstream(&layout, Stage::Train, "k", false).unwrap_err();
        assert!(matches!(&err, Error::Missing { path, .. } if path.ends_with("generate.manifest.json")));

        let file = layout.root.join("a.txt");
        std::fs::write(&file, "one").unwrap();
        write_manifest(&layout, &manifest(&layout, Stage::Generate, "k", &[file.clone()])).unwrap();
        let inputs = check_upstream(&layout, Stage::Train, "k", false).unwrap();
        assert_eq!(inputs.keys().collect::<Vec<_>>(), vec!["a.txt"]);

        assert!(matches!(check_upstream(&layout, Stage::Train, "other", false), Err(Error::Stale { .. })));
        assert!(check_upstream(&layout, Stage::Train, "other", true).is_ok());

        std::fs::write(&file, "two").unwrap();
        assert!(matches!(check_upstream(&layout, Stage::Train, "k", false), Err(Error::Stale { .. })));
        std::fs::remove_file(&file).unwrap();
        assert!(matches!(check_upstream(&layout, Stage::Train, "k", true), Err(Error::Missing { .. })));
    }

    #[test]
    fn generate_has_no_upstream() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path(), DefectKind::SkinPatch);
        assert!(check_upstream(&layout, Stage::Generate, "k", false).unwrap().is_empty());
        assert_eq!(layout.relative(&layout.checkpoint()), "model/checkpoint.json");
    }
}
