//! Sample directories: `angles.qts`, `phase.qts`, `mask.qts` and `id.txt`.
//! A dataset root holds `train/` and `test/` splits of `sample_<id>/` dirs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::qts;

use super::sample::Sample;

pub fn save_sample(s: &Sample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    qts::write(dir.join("angles.qts"), &s.angles)?;
    qts::write(dir.join("phase.qts"), &s.phase)?;
    qts::write(dir.join("mask.qts"), &s.mask)?;
    let id = dir.join("id.txt");
    fs::write(&id, format!("{}\n", s.id)).map_err(|e| Error::io(&id, e))
}

pub fn load_sample(dir: &Path) -> Result<Sample> {
    let id_path = dir.join("id.txt");
    let id = fs::read_to_string(&id_path).map_err(|e| Error::io(&id_path, e))?;
    Sample::new(
        id.trim(),
        qts::read(dir.join("angles.qts"))?,
        qts::read(dir.join("phase.qts"))?,
        qts::read(dir.join("mask.qts"))?,
    )
}

pub fn sample_dir(split_dir: &Path, id: &str) -> PathBuf {
    split_dir.join(format!("sample_{id}"))
}

pub fn save_split(root: &Path, split: &str, samples: &[Sample]) -> Result<()> {
    let dir = root.join(split);
    for s in samples {
        save_sample(s, &sample_dir(&dir, &s.id))?;
    }
    Ok(())
}

/// All `sample_*` directories of a split, in name order.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Sample>> {
    let dir = root.join(split);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("sample_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(format!("{}: no sample directories", dir.display())));
    }
    dirs.iter().map(|d| load_sample(d)).collect()
}

/// Train and test splits of a dataset root.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        Ok(Self {
            train: load_split(root, "train")?,
            test: load_split(root, "test")?,
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        save_split(root, "train", &self.train)?;
        save_split(root, "test", &self.test)
    }
}
