//! Binary model files: magic, format version, a JSON header describing the
//! configuration, covariate schema, standardizer and parameter manifest, then
//! every parameter as little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelGraph};
use crate::data::{FeatureSchema, Standardizer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VAECIMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    schema: FeatureSchema,
    scaler: Standardizer,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct Entry {
    name: String,
    shape: [usize; 2],
}

fn manifest(model: &ModelGraph) -> Vec<Entry> {
    model
        .params
        .ids()
        .map(|id| {
            let v = model.params.get(id);
            Entry {
                name: model.params.name(id).to_string(),
                shape: [v.nrows(), v.ncols()],
            }
        })
        .collect()
}

pub(super) fn save(model: &ModelGraph, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        schema: model.schema.clone(),
        scaler: model.scaler.clone(),
        params: manifest(model),
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for value in model.params.values() {
        for v in value.iter() {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Load(format!("truncated model file while reading {what}: {e}")))
}

pub(super) fn load(path: &Path) -> Result<ModelGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Load(format!("{} is not a model file", path.display())));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "unsupported model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(Error::Load(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(&mut r, &mut json, "header")?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Load(format!("bad model header: {e}")))?;

    let mut model = ModelGraph::build(header.config, header.schema, 0)
        .map_err(|e| Error::Load(format!("header describes an invalid model: {e}")))?;
    if manifest(&model) != header.params {
        return Err(Error::Load(
            "parameter manifest does not match the stored configuration".into(),
        ));
    }
    model.scaler = header.scaler;
    let mut bytes = [0u8; 8];
    for value in model.params.values_mut() {
        for v in value.iter_mut() {
            read_exact(&mut r, &mut bytes, "parameters")?;
            *v = f64::from_le_bytes(bytes);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Load("trailing bytes after parameters".into()));
    }
    Ok(model)
}
