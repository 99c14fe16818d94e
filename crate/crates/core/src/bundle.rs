//! Dataset bundles: a directory holding `manifest.json` and one raw array
//! per field. Arrays are little-endian f32, C-contiguous in the declared
//! shape; grid axes are ordered (i, j, k) with k fastest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid3D;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT: &str = "subflow-bundle";
pub const FORMAT_VERSION: u32 = 1;
pub const STORAGE_ORDER: &str = "k-fastest";
pub const DTYPE: &str = "float32-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    /// Names of the axes, outermost first.
    pub axes: Vec<String>,
    pub units: String,
    pub description: String,
    pub byte_len: u64,
    pub sha256: String,
}

impl FieldEntry {
    pub fn n_values(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub name: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub storage_order: String,
    pub dtype: String,
    pub grid: Grid3D,
    /// Every seed that influenced the contents.
    pub seeds: BTreeMap<String, u64>,
    /// Tool version, command and the full configuration text.
    pub provenance: BTreeMap<String, String>,
    /// Scalars and small tables describing the contents.
    pub attributes: BTreeMap<String, serde_json::Value>,
    pub fields: Vec<FieldEntry>,
    #[serde(default)]
    pub documents: Vec<DocumentEntry>,
}

fn bundle_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Bundle {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_name(dir: &Path, name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(bundle_err(dir, format!("invalid entry name '{name}'")))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a bundle; the manifest is written by [`BundleWriter::finish`].
#[derive(Debug)]
pub struct BundleWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl BundleWriter {
    /// Create (or reuse an empty/existing) directory for a new bundle.
    pub fn create(dir: impl AsRef<Path>, grid: Grid3D) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| bundle_err(&dir, e.to_string()))?;
        let mut provenance = BTreeMap::new();
        provenance.insert("tool".into(), format!("subflow {}", env!("CARGO_PKG_VERSION")));
        Ok(Self {
            dir,
            manifest: Manifest {
                format: FORMAT.into(),
                version: FORMAT_VERSION,
                storage_order: STORAGE_ORDER.into(),
                dtype: DTYPE.into(),
                grid,
                seeds: BTreeMap::new(),
                provenance,
                attributes: BTreeMap::new(),
                fields: Vec::new(),
                documents: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.into(), seed);
    }

    pub fn set_provenance(&mut self, key: &str, value: impl Into<String>) {
        self.manifest.provenance.insert(key.into(), value.into());
    }

    pub fn set_attribute(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| bundle_err(&self.dir, e.to_string()))?;
        self.manifest.attributes.insert(key.into(), v);
        Ok(())
    }

    /// Store an array given as f64 (narrowed to f32).
    pub fn add_array(&mut self, name: &str, shape: &[usize], axes: &[&str], units: &str, description: &str, data: &[f64]) -> Result<()> {
        let narrowed: Vec<f32> = data.iter().map(|&v| v as f32).collect();
        self.add_array_f32(name, shape, axes, units, description, &narrowed)
    }

    pub fn add_array_f32(
        &mut self,
        name: &str,
        shape: &[usize],
        axes: &[&str],
        units: &str,
        description: &str,
        data: &[f32],
    ) -> Result<()> {
        check_name(&self.dir, name)?;
        if self.manifest.fields.iter().any(|f| f.name == name) {
            return Err(bundle_err(&self.dir, format!("duplicate field '{name}'")));
        }
        if axes.len() != shape.len() {
            return Err(bundle_err(
                &self.dir,
                format!("field '{name}': {} axis names for {} dimensions", axes.len(), shape.len()),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(bundle_err(
                &self.dir,
                format!("field '{name}': shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = format!("{name}.f32");
        fs::write(self.dir.join(&file), &bytes).map_err(|e| bundle_err(&self.dir, e.to_string()))?;
        self.manifest.fields.push(FieldEntry {
            name: name.into(),
            file,
            shape: shape.to_vec(),
            axes: axes.iter().map(|a| a.to_string()).collect(),
            units: units.into(),
            description: description.into(),
            byte_len: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Store a serializable document as pretty JSON.
    pub fn add_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        check_name(&self.dir, name)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| bundle_err(&self.dir, e.to_string()))?;
        let file = format!("{name}.json");
        fs::write(self.dir.join(&file), text.as_bytes()).map_err(|e| bundle_err(&self.dir, e.to_string()))?;
        self.manifest.documents.push(DocumentEntry {
            name: name.into(),
            file,
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<DatasetBundle> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| bundle_err(&self.dir, e.to_string()))?;
        fs::write(self.dir.join(MANIFEST_FILE), text).map_err(|e| bundle_err(&self.dir, e.to_string()))?;
        Ok(DatasetBundle {
            dir: self.dir,
            manifest: self.manifest,
        })
    }
}

/// A bundle on disk.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl DatasetBundle {
    /// Read the manifest and check every declared byte length against the
    /// file on disk.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| bundle_err(&path, e.to_string()))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bundle_err(&path, e.to_string()))?;
        if manifest.format != FORMAT || manifest.storage_order != STORAGE_ORDER || manifest.dtype != DTYPE {
            return Err(bundle_err(&path, "unsupported format, storage order or dtype"));
        }
        if manifest.version != FORMAT_VERSION {
            return Err(bundle_err(&path, format!("unsupported version {}", manifest.version)));
        }
        for f in &manifest.fields {
            check_name(&dir, &f.name)?;
            let file = dir.join(&f.file);
            let len = fs::metadata(&file).map_err(|e| bundle_err(&file, e.to_string()))?.len();
            if len != f.byte_len || f.byte_len != 4 * f.n_values() as u64 {
                return Err(bundle_err(
                    &file,
                    format!("size {len} bytes, manifest declares {} for shape {:?}", f.byte_len, f.shape),
                ));
            }
        }
        Ok(Self { dir, manifest })
    }

    pub fn field(&self, name: &str) -> Option<&FieldEntry> {
        self.manifest.fields.iter().find(|f| f.name == name)
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.field(name).is_some()
    }

    /// Read an array and verify its checksum.
    pub fn read_f32(&self, name: &str) -> Result<Vec<f32>> {
        let entry = self
            .field(name)
            .ok_or_else(|| bundle_err(&self.dir, format!("no field '{name}'")))?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| bundle_err(&path, e.to_string()))?;
        if bytes.len() as u64 != entry.byte_len {
            return Err(bundle_err(&path, "byte length differs from manifest"));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(bundle_err(&path, "checksum mismatch"));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn read(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.read_f32(name)?.into_iter().map(f64::from).collect())
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        let entry = self
            .manifest
            .documents
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| bundle_err(&self.dir, format!("no document '{name}'")))?;
        let path = self.dir.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(|e| bundle_err(&path, e.to_string()))?;
        if sha256_hex(text.as_bytes()) != entry.sha256 {
            return Err(bundle_err(&path, "checksum mismatch"));
        }
        serde_json::from_str(&text).map_err(|e| bundle_err(&path, e.to_string()))
    }

    /// Check every array and document checksum.
    pub fn verify(&self) -> Result<()> {
        for f in &self.manifest.fields {
            self.read_f32(&f.name)?;
        }
        for d in &self.manifest.documents {
            self.read_json::<serde_json::Value>(&d.name)?;
        }
        Ok(())
    }
}
