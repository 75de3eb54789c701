//! Versioned binary containers and the content-addressed artifact store.
//!
//! Container layout: magic, a 4-byte kind tag, a u32 schema version, a JSON
//! metadata header, then named raw arrays. Loading with a mismatched kind or
//! schema version fails loudly.

use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"KCAR";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn as_f64(&self) -> Result<&[f64]> {
        match self {
            ArrayData::F64(v) => Ok(v),
            ArrayData::U8(_) => Err(Error::data("array has dtype u8, expected f64")),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match self {
            ArrayData::U8(v) => Ok(v),
            ArrayData::F64(_) => Err(Error::data("array has dtype f64, expected u8")),
        }
    }
}

pub fn write_container<W: Write, M: Serialize>(
    mut w: W,
    kind: &[u8; 4],
    version: u32,
    meta: &M,
    arrays: &[(&str, &ArrayData)],
) -> Result<()> {
    let meta_bytes = serde_json::to_vec(meta)?;
    w.write_all(MAGIC)?;
    w.write_all(kind)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, data) in arrays {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > 255 {
            return Err(Error::internal("array name too long"));
        }
        w.write_all(&[name_bytes.len() as u8])?;
        w.write_all(name_bytes)?;
        match data {
            ArrayData::F64(v) => {
                w.write_all(&[0u8])?;
                w.write_all(&(v.len() as u64).to_le_bytes())?;
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            ArrayData::U8(v) => {
                w.write_all(&[1u8])?;
                w.write_all(&(v.len() as u64).to_le_bytes())?;
                w.write_all(v)?;
            }
        }
    }
    Ok(())
}

pub fn read_container<R: Read, M: DeserializeOwned>(
    mut r: R,
    kind: &[u8; 4],
    version: u32,
) -> Result<(M, BTreeMap<String, ArrayData>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data("not a knitcity container (bad magic)"));
    }
    let mut got_kind = [0u8; 4];
    r.read_exact(&mut got_kind)?;
    if &got_kind != kind {
        return Err(Error::data(format!(
            "container kind mismatch: expected {:?}, got {:?}",
            String::from_utf8_lossy(kind),
            String::from_utf8_lossy(&got_kind)
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let got_version = u32::from_le_bytes(buf4);
    if got_version != version {
        return Err(Error::data(format!(
            "container schema_version mismatch: expected {version}, got {got_version}"
        )));
    }
    r.read_exact(&mut buf4)?;
    let meta_len = u32::from_le_bytes(buf4) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: M = serde_json::from_slice(&meta_bytes)?;
    r.read_exact(&mut buf4)?;
    let n_arrays = u32::from_le_bytes(buf4) as usize;
    let mut arrays = BTreeMap::new();
    for _ in 0..n_arrays {
        let mut len1 = [0u8; 1];
        r.read_exact(&mut len1)?;
        let mut name = vec![0u8; len1[0] as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::data("bad array name"))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8)?;
        let len = u64::from_le_bytes(len8) as usize;
        let data = match dtype[0] {
            0 => {
                let mut raw = vec![0u8; len * 8];
                r.read_exact(&mut raw)?;
                let mut v = Vec::with_capacity(len);
                for chunk in raw.chunks_exact(8) {
                    v.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
                ArrayData::F64(v)
            }
            1 => {
                let mut v = vec![0u8; len];
                r.read_exact(&mut v)?;
                ArrayData::U8(v)
            }
            d => return Err(Error::data(format!("unknown array dtype {d}"))),
        };
        arrays.insert(name, data);
    }
    Ok((meta, arrays))
}

/// Stable hex identifier for a request/config: sha256 of its canonical JSON.
pub fn content_key<T: Serialize>(label: &str, value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(&json);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(16);
    for b in &digest[..8] {
        s.push_str(&format!("{b:02x}"));
    }
    Ok(format!("{label}-{s}"))
}

/// Directory-per-artifact store. Artifact ids are content keys, so a stage
/// whose inputs have not changed finds its previous output already present.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArtifactManifest {
    pub id: String,
    pub kind: String,
    pub files: Vec<String>,
    pub meta: serde_json::Value,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("artifacts"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join("artifacts").join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).join("manifest.json").is_file()
    }

    pub fn manifest(&self, id: &str) -> Result<ArtifactManifest> {
        let path = self.dir(id).join("manifest.json");
        if !path.is_file() {
            return Err(Error::not_found(format!("artifact {id} not found")));
        }
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn file_path(&self, id: &str, name: &str) -> Result<PathBuf> {
        let manifest = self.manifest(id)?;
        if !manifest.files.iter().any(|f| f == name) {
            return Err(Error::not_found(format!("artifact {id} has no file {name}")));
        }
        Ok(self.dir(id).join(name))
    }

    /// Creates the artifact by running `write` into a temp dir, then renaming
    /// it into place. If the artifact already exists it is left untouched and
    /// `created` is false.
    pub fn create_with<F>(&self, id: &str, kind: &str, meta: serde_json::Value, write: F) -> Result<(ArtifactManifest, bool)>
    where
        F: FnOnce(&Path) -> Result<Vec<String>>,
    {
        if self.exists(id) {
            return Ok((self.manifest(id)?, false));
        }
        let tmp = self.root.join("artifacts").join(format!(".tmp-{id}-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;
        let files = write(&tmp)?;
        let manifest = ArtifactManifest { id: id.to_string(), kind: kind.to_string(), files, meta };
        std::fs::write(tmp.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        let final_dir = self.dir(id);
        if final_dir.exists() {
            // lost a race with a concurrent writer; keep theirs
            std::fs::remove_dir_all(&tmp)?;
            return Ok((self.manifest(id)?, false));
        }
        std::fs::rename(&tmp, &final_dir)?;
        Ok((manifest, true))
    }

    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(self.root.join("artifacts"))? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().to_string();
            if !name.starts_with('.') && entry.path().join("manifest.json").is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }
}
