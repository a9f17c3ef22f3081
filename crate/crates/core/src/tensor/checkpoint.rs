use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, TensorError};

const FORMAT: &str = "portfolio-rl.params";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    params: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    requires_grad: bool,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

/// Writes `<base>.bin` (little-endian f64 values in registration order) and
/// `<base>.json` (names, shapes and offsets).
pub fn save_params(store: &ParamStore, base: impl AsRef<Path>) -> Result<()> {
    let (bin, json) = paths(base.as_ref());
    let mut offset = 0;
    let mut entries = Vec::with_capacity(store.len());
    let mut bytes = Vec::with_capacity(store.scalar_count() * 8);
    for p in store.iter() {
        entries.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            requires_grad: p.requires_grad,
        });
        offset += p.value.len();
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { format: FORMAT.into(), version: 1, params: entries };
    std::fs::write(&bin, bytes)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    std::fs::write(&json, text)?;
    Ok(())
}

/// Loads values saved by [`save_params`] into a store with the same layout.
pub fn load_params(store: &mut ParamStore, base: impl AsRef<Path>) -> Result<()> {
    let (bin, json) = paths(base.as_ref());
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&json)?)
        .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", json.display())))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(TensorError::Checkpoint(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    if manifest.params.len() != store.len() {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let bytes = std::fs::read(&bin)?;
    if bytes.len() != store.scalar_count() * 8 {
        return Err(TensorError::Checkpoint(format!("{} holds {} bytes", bin.display(), bytes.len())));
    }
    for (p, e) in store.iter_mut().zip(&manifest.params) {
        if p.name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(TensorError::Checkpoint(format!(
                "parameter {} {:?} does not match checkpoint {} {:?}",
                p.name,
                p.value.shape(),
                e.name,
                e.shape
            )));
        }
        for (k, v) in p.value.data_mut().iter_mut().enumerate() {
            let at = (e.offset + k) * 8;
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        }
        p.requires_grad = e.requires_grad;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{GruCell, Linear};

    fn model(seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut r = rng::seeded(seed);
        GruCell::new(&mut s, "gru", 4, 3, &mut r);
        Linear::new(&mut s, "out", 3, 4, &mut r);
        s
    }

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let a = model(1);
        save_params(&a, &base).unwrap();
        let mut b = model(2);
        assert_ne!(a.flat_values(), b.flat_values());
        load_params(&mut b, &base).unwrap();
        let bits = |s: &ParamStore| s.flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        save_params(&model(1), &base).unwrap();
        let mut other = ParamStore::new();
        Linear::new(&mut other, "out", 3, 4, &mut rng::seeded(0));
        assert!(load_params(&mut other, &base).is_err());
    }
}
