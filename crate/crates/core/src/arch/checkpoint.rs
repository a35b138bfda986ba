//! Checkpoint directory: `manifest.txt` (config + ordered parameter names)
//! plus one `<name>.qts` file per parameter.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::qts;
use crate::tensor::Element;

use super::config::ModelConfig;
use super::model::Model;

const FORMAT: &str = "qpmseg-checkpoint-1";
pub const MANIFEST: &str = "manifest.txt";

/// Writes `model` into `dir` (created if needed). `extra` entries are stored
/// under `meta.` in the manifest.
pub fn save_checkpoint<E: Element>(model: &Model<E>, dir: &Path, extra: &KvMap) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv = KvMap::new();
    kv.insert("format", FORMAT);
    kv.insert("dtype", E::DTYPE.name());
    for (k, v) in model.config().to_kv().iter() {
        kv.insert(format!("model.{k}"), v);
    }
    for (k, v) in extra.iter() {
        kv.insert(format!("meta.{k}"), v);
    }
    let params = model.params();
    kv.insert("params", params.len());
    for (i, (name, t)) in params.iter().enumerate() {
        kv.insert(format!("param.{i:04}"), name);
        qts::write(dir.join(format!("{name}.qts")), t)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, kv.to_text()).map_err(|e| Error::io(&path, e))
}

/// Reads the manifest of a checkpoint directory.
pub fn read_manifest(dir: &Path) -> Result<KvMap> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = KvMap::parse(&text)?;
    if kv.get("format") != Some(FORMAT) {
        return Err(Error::data(format!("{}: not a checkpoint manifest", path.display())));
    }
    Ok(kv)
}

/// Rebuilds the model described by the manifest and loads its parameters.
/// Returns the model and the `meta.` entries.
pub fn load_checkpoint<E: Element>(dir: &Path) -> Result<(Model<E>, KvMap)> {
    let kv = read_manifest(dir)?;
    if kv.get("dtype") != Some(E::DTYPE.name()) {
        return Err(Error::data(format!(
            "checkpoint dtype {:?} does not match {}",
            kv.get("dtype"),
            E::DTYPE.name()
        )));
    }
    let cfg = ModelConfig::from_kv(&kv.section("model."))?;
    let mut model = Model::<E>::build(&cfg)?;
    let count: usize = kv.parse_value("params")?.unwrap_or(0);
    if count != model.params().len() {
        return Err(Error::data(format!(
            "checkpoint lists {count} parameters, config builds {}",
            model.params().len()
        )));
    }
    let store = model.params_mut();
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let listed = kv.get(&format!("param.{i:04}")).unwrap_or_default();
        if listed != store.name(id) {
            return Err(Error::data(format!(
                "parameter {i} is `{listed}`, expected `{}`",
                store.name(id)
            )));
        }
        let t = qts::read::<E>(dir.join(format!("{listed}.qts")))?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::data(format!(
                "parameter `{listed}` has shape {:?}, expected {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t;
    }
    Ok((model, kv.section("meta.")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_stages: 3,
            widths: vec![4, 4, 8],
            blocks_per_stage: 1,
            fusion_stage: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.seed = 9;
        let m = Model::<f32>::build(&cfg).unwrap();
        let mut meta = KvMap::new();
        meta.insert("epoch", 3);
        save_checkpoint(&m, dir.path(), &meta).unwrap();
        let (back, meta_back) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(meta_back.get("epoch"), Some("3"));
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dtype_and_missing_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::<f32>::build(&tiny()).unwrap();
        save_checkpoint(&m, dir.path(), &KvMap::new()).unwrap();
        assert!(load_checkpoint::<f64>(dir.path()).is_err());
        let first = m.params().iter().next().unwrap().0.to_string();
        fs::remove_file(dir.path().join(format!("{first}.qts"))).unwrap();
        assert!(load_checkpoint::<f32>(dir.path()).is_err());
    }
}
