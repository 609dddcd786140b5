//! Checkpoint files.
//!
//! A checkpoint is a UTF-8 manifest followed by raw tensor data:
//!
//! ```text
//! rhnmt-checkpoint v1
//! hidden = 32
//! depth = 2
//! layers = 1
//! src_vocab_size = 12
//! tgt_vocab_size = 12
//! coupled_carry = false
//! dropout = 0.2
//! beta = 0.1
//! src_vocab_sha256 = <hex>
//! tgt_vocab_sha256 = <hex>
//! tensors = <count>
//! tensor src_embedding 12x32
//! tensor tgt_embedding 12x32
//! ...
//! end
//! <little-endian f64 blocks, one per `tensor` line, in the same order>
//! ```
//!
//! Loading rebuilds the model structure from the config keys and checks
//! every directory entry against it before reading any data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{ModelConfig, NmtModel};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "rhnmt-checkpoint v1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: NmtModel,
    pub src_vocab_sha256: String,
    pub tgt_vocab_sha256: String,
}

impl Checkpoint {
    /// Fails unless the given vocabularies are the ones the model was
    /// trained with.
    pub fn verify_vocabs(&self, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
        for (side, expected, vocab) in [
            ("source", &self.src_vocab_sha256, src),
            ("target", &self.tgt_vocab_sha256, tgt),
        ] {
            if &vocab.checksum() != expected {
                return Err(Error::Checkpoint(format!(
                    "{side} vocabulary checksum {} does not match checkpoint {expected}",
                    vocab.checksum()
                )));
            }
        }
        Ok(())
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &NmtModel,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    let c = model.config();
    let store = model.params();
    let mut manifest = String::new();
    manifest.push_str(CHECKPOINT_MAGIC);
    manifest.push('\n');
    let fields: [(&str, String); 11] = [
        ("hidden", c.hidden.to_string()),
        ("depth", c.depth.to_string()),
        ("layers", c.layers.to_string()),
        ("src_vocab_size", c.src_vocab_size.to_string()),
        ("tgt_vocab_size", c.tgt_vocab_size.to_string()),
        ("coupled_carry", c.coupled_carry.to_string()),
        ("dropout", c.dropout.to_string()),
        ("beta", c.beta.to_string()),
        ("src_vocab_sha256", src_vocab.checksum()),
        ("tgt_vocab_sha256", tgt_vocab.checksum()),
        ("tensors", store.len().to_string()),
    ];
    for (k, v) in fields {
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    for id in store.ids() {
        manifest.push_str(&format!(
            "tensor {} {}\n",
            store.name(id),
            shape_str(store.value(id).shape())
        ));
    }
    manifest.push_str("end\n");

    let mut bytes = manifest.into_bytes();
    bytes.reserve(store.count() * 8);
    for id in store.ids() {
        for v in store.value(id).data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse<T: std::str::FromStr>(fields: &HashMap<String, String>, key: &str) -> Result<T> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("manifest is missing `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("manifest field `{key}` has invalid value {raw:?}")))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))
    };

    if next_line()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a {CHECKPOINT_MAGIC} file",
            path.display()
        )));
    }
    let mut fields = HashMap::new();
    let mut directory: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        if let Some(entry) = line.strip_prefix("tensor ") {
            let (name, shape) = entry
                .rsplit_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad tensor line {line:?}")))?;
            let shape = shape
                .split('x')
                .map(str::parse)
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|_| Error::Checkpoint(format!("tensor {name}: bad shape {shape:?}")))?;
            directory.push((name.to_string(), shape));
        } else if let Some((k, v)) = line.split_once(" = ") {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(Error::Checkpoint(format!("unrecognized manifest line {line:?}")));
        }
    }
    let data_start = pos;

    let config = ModelConfig {
        hidden: parse(&fields, "hidden")?,
        depth: parse(&fields, "depth")?,
        layers: parse(&fields, "layers")?,
        src_vocab_size: parse(&fields, "src_vocab_size")?,
        tgt_vocab_size: parse(&fields, "tgt_vocab_size")?,
        coupled_carry: parse(&fields, "coupled_carry")?,
        dropout: parse(&fields, "dropout")?,
        beta: parse(&fields, "beta")?,
    };
    let declared: usize = parse(&fields, "tensors")?;
    if declared != directory.len() {
        return Err(Error::Checkpoint(format!(
            "manifest declares {declared} tensors but lists {}",
            directory.len()
        )));
    }
    let mut model = NmtModel::new(config, 0)?;

    let store = model.params();
    let mut seen = vec![false; store.len()];
    let mut placements = Vec::with_capacity(directory.len());
    for (name, shape) in &directory {
        let id = store
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is not part of the configured model")))?;
        let expected = store.value(id).shape();
        if expected != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: checkpoint shape {} but model expects {}",
                shape_str(shape),
                shape_str(expected)
            )));
        }
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Checkpoint(format!("tensor {name} listed twice")));
        }
        placements.push((id, shape.clone()));
    }
    if let Some(missing) = store.ids().find(|id| !seen[id.index()]) {
        return Err(Error::Checkpoint(format!(
            "tensor {} missing from checkpoint",
            store.name(missing)
        )));
    }

    let mut offset = data_start;
    for ((id, shape), (name, _)) in placements.into_iter().zip(&directory) {
        let n: usize = shape.iter().product();
        let end = offset + n * 8;
        let block = bytes
            .get(offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: data truncated")))?;
        let data = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        model.params_mut().set_value(id, Tensor::new(shape, data)?)?;
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - offset
        )));
    }

    Ok(Checkpoint {
        model,
        src_vocab_sha256: parse(&fields, "src_vocab_sha256")?,
        tgt_vocab_sha256: parse(&fields, "tgt_vocab_sha256")?,
    })
}
