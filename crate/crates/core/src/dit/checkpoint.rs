//! Single-file checkpoints: a text header, a blank line, then one KTSR blob
//! per parameter in header order.
//!
//! ```text
//! KTCKPT 1
//! fingerprint <sha256 of the architecture>
//! params <n>
//! <name>\t<d0>x<d1>...\t<trainable 0|1>
//! ...
//!
//! <KTSR blobs>
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::numerics::{ktsr, ParamStore};
use crate::{Error, Result};

use super::config::{Ablations, ModelConfig};
use super::model::KeyTailorModel;

pub const MAGIC: &str = "KTCKPT 1";

/// Hash of everything that determines the parameter layout.
pub fn fingerprint(config: &ModelConfig, ablations: &Ablations) -> String {
    let text = format!(
        "blocks={} width={} heads={} rank={} channels={} alpha={} ablations={}",
        config.blocks,
        config.width,
        config.heads,
        config.rank,
        config.latent_channels,
        config.alpha,
        ablations
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub fn encode(model: &KeyTailorModel) -> Vec<u8> {
    let store = &model.store;
    let mut header = format!(
        "{MAGIC}\nfingerprint {}\nparams {}\n",
        fingerprint(model.config(), model.ablations()),
        store.len()
    );
    for (_, p) in store.iter() {
        header.push_str(&format!(
            "{}\t{}\t{}\n",
            p.name,
            shape_string(p.value.shape()),
            u8::from(p.trainable)
        ));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    for (_, p) in store.iter() {
        out.extend(ktsr::encode(&p.value));
    }
    out
}

pub fn save(path: &Path, model: &KeyTailorModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

/// Restores parameter values into a freshly built `model`, which fixes the
/// expected layout.
pub fn decode_into(buf: &[u8], model: &mut KeyTailorModel) -> Result<()> {
    let bad = |msg: String| Error::Format(format!("checkpoint: {msg}"));
    let split = buf
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("header is not terminated by a blank line".into()))?;
    let header =
        std::str::from_utf8(&buf[..split]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("missing {MAGIC:?} magic line")));
    }
    let want = fingerprint(model.config(), model.ablations());
    match lines.next().and_then(|l| l.strip_prefix("fingerprint ")) {
        Some(f) if f == want => {}
        Some(f) => {
            return Err(bad(format!(
                "fingerprint {f} does not match the configured model ({want})"
            )))
        }
        None => return Err(bad("missing fingerprint line".into())),
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("params "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad("missing params line".into()))?;
    let expected = &model.store;
    if count != expected.len() {
        return Err(bad(format!(
            "{count} parameters, model has {}",
            expected.len()
        )));
    }
    let mut loaded = ParamStore::new();
    let mut body = &buf[split + 2..];
    for (_, p) in expected.iter() {
        let line = lines
            .next()
            .ok_or_else(|| bad("header lists fewer parameters than announced".into()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, trainable] = fields[..] else {
            return Err(bad(format!("malformed parameter line {line:?}")));
        };
        let shape_ok = shape == shape_string(p.value.shape());
        let flag_ok = trainable == if p.trainable { "1" } else { "0" };
        if name != p.name || !shape_ok || !flag_ok {
            return Err(bad(format!(
                "entry {name} {shape} {trainable} does not match expected {} {} {}",
                p.name,
                shape_string(p.value.shape()),
                u8::from(p.trainable)
            )));
        }
        let (t, used) = ktsr::decode_prefix(body)?;
        if t.shape() != p.value.shape() {
            return Err(bad(format!("blob for {name} has shape {:?}", t.shape())));
        }
        body = &body[used..];
        loaded.add(name, t, p.trainable);
    }
    if lines.next().is_some() {
        return Err(bad("header lists more parameters than announced".into()));
    }
    if !body.is_empty() {
        return Err(bad(format!("{} trailing bytes", body.len())));
    }
    model.store.load_values(&loaded)
}

pub fn load(path: &Path, config: ModelConfig, ablations: Ablations) -> Result<KeyTailorModel> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut model = KeyTailorModel::new(config, ablations)?;
    decode_into(&buf, &mut model).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(model)
}
