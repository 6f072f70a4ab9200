use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};

use crate::error::{Error, IoContext, Result};

/// Readers accept any version with the same major number.
pub const FORMAT_VERSION: &str = "1.0";
const VERSION_KEY: &str = "format_version";

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Write `tensors` and `metadata` to `path` atomically: the archive goes to a
/// sibling temporary file first and is renamed into place.
pub fn write_archive(
    path: &Path,
    tensors: &BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
) -> Result<()> {
    let mut info: HashMap<String, String> = metadata.into_iter().collect();
    info.insert(VERSION_KEY.into(), FORMAT_VERSION.into());
    let contiguous = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.contiguous()?)))
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(contiguous, Some(info)).map_err(st_err)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

/// Read an archive written by [`write_archive`].
pub fn read_archive(
    path: &Path,
    device: &Device,
) -> Result<(BTreeMap<String, Tensor>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).at(path)?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes).map_err(st_err)?;
    let metadata: BTreeMap<String, String> = meta
        .metadata()
        .clone()
        .unwrap_or_default()
        .into_iter()
        .collect();
    match metadata.get(VERSION_KEY).map(String::as_str) {
        Some(v) if major(v) == major(FORMAT_VERSION) => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported checkpoint version {other:?}",
                path.display()
            )))
        }
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)?
        .into_iter()
        .collect();
    Ok((tensors, metadata))
}

fn major(version: &str) -> &str {
    version.split('.').next().unwrap_or_default()
}

/// Entries of `tensors` under `prefix`, with the prefix removed.
pub fn with_prefix(tensors: &BTreeMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    tensors
        .iter()
        .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
        .collect()
}

pub fn meta_get<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks `{key}`")))
}

pub fn meta_parse<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta_get(meta, key)?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("checkpoint metadata `{key}` is malformed")))
}
