//! Config resolution and the run directory contract shared by subcommands.

use std::fs;
use std::path::Path;

use qpmseg::arch::ModelConfig;
use qpmseg::train::TrainConfig;
use qpmseg::KvMap;

use crate::failure::{Failure, Outcome};
use crate::ConfigArgs;

pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";

/// Defaults, overlaid by the config files, overlaid by `--set` flags.
pub fn resolve(args: &ConfigArgs) -> Outcome<(ModelConfig, TrainConfig)> {
    let read = |p: &Option<std::path::PathBuf>| p.as_deref().map_or(Ok(KvMap::new()), KvMap::read);
    let mut model = read(&args.model_config)?;
    let mut train = read(&args.train_config)?;
    for o in &args.overrides {
        let Some((key, value)) = o.split_once('=') else {
            return Err(Failure::usage(format!("--set `{o}`: expected KEY=VALUE")));
        };
        let key = key.trim();
        let value = value.trim();
        if let Some(k) = key.strip_prefix("model.") {
            model.insert(k, value);
        } else if let Some(k) = key.strip_prefix("train.") {
            train.insert(k, value);
        } else {
            return Err(Failure::usage(format!("--set `{key}`: key must start with `model.` or `train.`")));
        }
    }
    Ok((ModelConfig::from_kv(&model)?, TrainConfig::from_kv(&train)?))
}

/// Creates `dir`, refusing a nonempty one unless `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Outcome {
    if !force {
        if let Ok(mut entries) = fs::read_dir(dir) {
            if entries.next().is_some() {
                return Err(Failure::usage(format!(
                    "{} is not empty; pass --force to write into it",
                    dir.display()
                )));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

pub fn prefixed(prefix: &str, kv: &KvMap) -> KvMap {
    let mut out = KvMap::new();
    for (k, v) in kv.iter() {
        out.insert(format!("{prefix}{k}"), v);
    }
    out
}

pub fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Writes the resolved run description to `dir/effective_config.txt`.
pub fn write_effective(dir: &Path, command: &str, mut entries: KvMap) -> Outcome {
    entries.insert("command", command);
    entries.insert("version", qpmseg::VERSION);
    write_text(&dir.join(EFFECTIVE_CONFIG), entries.to_text())
}
