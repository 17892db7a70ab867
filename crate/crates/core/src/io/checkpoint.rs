//! Checkpoint layout:
//!
//! ```text
//! NSPCKPT 1
//! meta <key> <value>
//! tensor <name> <group> <rows> <cols> <offset>
//! end
//! <little-endian f64 data>
//! ```
//!
//! Offsets count f64 values from the start of the data block. The header is
//! ASCII and every line ends with `\n`.

use std::path::Path;

use super::{parse_error, write_bytes};
use crate::error::{NspError, Result};
use crate::model::ModelParams;
use crate::neural::{ParamGroup, ParamStore, Tensor};

const MAGIC: &str = "NSPCKPT 1";

/// Model tensors plus free-form metadata. `feature_scale` is stored as
/// metadata and restored into the model dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(model: ModelParams) -> Self {
        Self { model, meta: Vec::new() }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }
}

fn checked_token(s: &str) -> Result<&str> {
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(NspError::config("checkpoint", format!("`{s}` must be a non-empty token without whitespace")));
    }
    Ok(s)
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let store = &ckpt.model.store;
    let mut header = format!("{MAGIC}\nmeta feature_scale {:?}\n", ckpt.model.nets.dims.feature_scale);
    for (k, v) in &ckpt.meta {
        if k != "feature_scale" {
            header += &format!("meta {} {}\n", checked_token(k)?, checked_token(v)?);
        }
    }
    let mut offset = 0;
    for id in store.ids() {
        let t = store.tensor(id);
        header += &format!("tensor {} {} {} {} {offset}\n", checked_token(store.name(id))?, store.group(id).name(), t.rows, t.cols);
        offset += t.len();
    }
    header += "end\n";
    let mut bytes = header.into_bytes();
    for id in store.ids() {
        for x in &store.tensor(id).data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn read_checkpoint(bytes: &[u8], source: &str) -> Result<Checkpoint> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = || -> Result<(usize, &str)> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|b| *b == b'\n').ok_or_else(|| parse_error(source, line_no + 1, "truncated header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| parse_error(source, line_no + 1, "header is not text"))?;
        pos += end + 1;
        line_no += 1;
        Ok((line_no, line))
    };
    let (_, magic) = next_line()?;
    if magic != MAGIC {
        return Err(parse_error(source, 1, format!("expected `{MAGIC}`, found `{magic}`")));
    }
    let mut meta = Vec::new();
    let mut manifest = Vec::new();
    loop {
        let (n, line) = next_line()?;
        let fields: Vec<&str> = line.split(' ').collect();
        match fields[..] {
            ["end"] => break,
            ["meta", k, v] => meta.push((k.to_string(), v.to_string())),
            ["tensor", name, group, rows, cols, offset] => {
                let num = |s: &str| s.parse::<usize>().map_err(|_| parse_error(source, n, format!("bad number `{s}`")));
                let group = ParamGroup::parse(group).ok_or_else(|| parse_error(source, n, format!("unknown group `{group}`")))?;
                manifest.push((name.to_string(), group, num(rows)?, num(cols)?, num(offset)?));
            }
            _ => return Err(parse_error(source, n, format!("unrecognized header line `{line}`"))),
        }
    }
    let data = &bytes[pos..];
    if data.len() % 8 != 0 {
        return Err(parse_error(source, line_no, "data block is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut store = ParamStore::new();
    for (name, group, rows, cols, offset) in manifest {
        let slice = values
            .get(offset..offset + rows * cols)
            .ok_or_else(|| parse_error(source, line_no, format!("tensor `{name}` runs past the data block")))?;
        if store.lookup(&name).is_some() {
            return Err(parse_error(source, line_no, format!("duplicate tensor `{name}`")));
        }
        store.insert(&name, Tensor::new(rows, cols, slice.to_vec()), group);
    }
    let feature_scale = match meta.iter().position(|(k, _)| k == "feature_scale") {
        Some(i) => {
            let (_, v) = meta.remove(i);
            v.parse().map_err(|_| parse_error(source, 2, "feature_scale is not a number"))?
        }
        None => return Err(parse_error(source, 2, "missing feature_scale")),
    };
    Ok(Checkpoint { model: ModelParams::from_store(store, feature_scale)?, meta })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_bytes(path, &write_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| NspError::io(path, e))?;
    read_checkpoint(&bytes, &path.display().to_string())
}
