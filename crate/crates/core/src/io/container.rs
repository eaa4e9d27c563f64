//! Self-describing array containers: a directory holding `manifest.json`
//! and one raw little-endian binary per array.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::Provenance;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float64,
    Complex128,
    Int64,
}

impl Dtype {
    pub fn item_bytes(self) -> usize {
        match self {
            Dtype::Float64 | Dtype::Int64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    Float64(Vec<f64>),
    Complex128(Vec<Complex64>),
    Int64(Vec<i64>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::Float64(_) => Dtype::Float64,
            ArrayData::Complex128(_) => Dtype::Complex128,
            ArrayData::Int64(_) => Dtype::Int64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::Float64(v) => v.len(),
            ArrayData::Complex128(v) => v.len(),
            ArrayData::Int64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dtype().item_bytes());
        match self {
            ArrayData::Float64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::Complex128(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
            ArrayData::Int64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    fn from_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
        match dtype {
            Dtype::Float64 => ArrayData::Float64(bytes.chunks_exact(8).map(f).collect()),
            Dtype::Int64 => ArrayData::Int64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            Dtype::Complex128 => ArrayData::Complex128(
                bytes
                    .chunks_exact(16)
                    .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn new(name: &str, role: &str, shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "array `{name}`: shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            role: role.into(),
            shape,
            data,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub role: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// "dataset" or "reconstruction".
    pub kind: String,
    pub arrays: Vec<ArrayEntry>,
    /// Free-form descriptive values (geometry, photon budget, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
    #[serde(default)]
    pub config: serde_json::Value,
    pub provenance: Provenance,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    /// Non-array files shipped alongside (rendered images).
    #[serde(default)]
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub arrays: Vec<Array>,
    pub metadata: serde_json::Value,
    pub config: serde_json::Value,
    pub provenance: Provenance,
    pub metrics: BTreeMap<String, f64>,
    /// Extra files written next to the arrays, e.g. PNG previews.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new(kind: &str, provenance: Provenance) -> Self {
        Self {
            kind: kind.into(),
            arrays: Vec::new(),
            metadata: serde_json::Value::Null,
            config: serde_json::Value::Null,
            provenance,
            metrics: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn push(&mut self, array: Array) -> Result<()> {
        if self.arrays.iter().any(|a| a.name == array.name) {
            return Err(Error::Container(format!("duplicate array `{}`", array.name)));
        }
        self.arrays.push(array);
        Ok(())
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Container(format!("missing array `{name}`")))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayEntry {
                    name: a.name.clone(),
                    file: format!("{}.bin", a.name),
                    dtype: a.data.dtype(),
                    shape: a.shape.clone(),
                    role: a.role.clone(),
                })
                .collect(),
            metadata: self.metadata.clone(),
            config: self.config.clone(),
            provenance: self.provenance.clone(),
            metrics: self.metrics.clone(),
            files: self.files.iter().map(|(n, _)| n.clone()).collect(),
        }
    }
}

fn valid_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != MANIFEST
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(target: &Path) -> Result<Self> {
        let path = sibling(target, ".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Container(format!(
                "{} is locked by another writer (remove {} if stale)",
                target.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn sibling(target: &Path, suffix: &str) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    target.with_file_name(format!(".{name}{suffix}"))
}

/// Writes the container into a hidden temporary sibling and renames it
/// into place, so `dir` either holds a complete container or nothing.
/// An existing `dir` is replaced only when `overwrite` is set.
pub fn save_container(dir: &Path, c: &Container, overwrite: bool) -> Result<()> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let _lock = DirLock::acquire(dir)?;
    if dir.exists() && !overwrite {
        return Err(Error::Container(format!("{} already exists", dir.display())));
    }
    for a in &c.arrays {
        if !valid_file_name(&a.name) {
            return Err(Error::Container(format!("invalid array name `{}`", a.name)));
        }
        let expected: usize = a.shape.iter().product();
        if expected != a.data.len() {
            return Err(Error::shape(format!(
                "array `{}`: shape {:?} holds {expected} values, got {}",
                a.name,
                a.shape,
                a.data.len()
            )));
        }
    }
    for (name, _) in &c.files {
        if !valid_file_name(name) || name.ends_with(".bin") {
            return Err(Error::Container(format!("invalid file name `{name}`")));
        }
    }

    let tmp = sibling(dir, ".partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    let result = (|| -> Result<()> {
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let write = |name: &str, bytes: &[u8]| -> Result<()> {
            let p = tmp.join(name);
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            f.write_all(bytes).map_err(|e| Error::io(&p, e))?;
            f.sync_all().map_err(|e| Error::io(&p, e))
        };
        let manifest = c.manifest();
        for (a, entry) in c.arrays.iter().zip(&manifest.arrays) {
            write(&entry.file, &a.data.to_bytes())?;
        }
        for (name, bytes) in &c.files {
            write(name, bytes)?;
        }
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write(MANIFEST, text.as_bytes())
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }

    if dir.exists() {
        let old = sibling(dir, ".old");
        let _ = fs::remove_dir_all(&old);
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Container(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Container(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Reads and validates a container; nothing outside `dir` is consulted.
pub fn load_container(dir: &Path) -> Result<Container> {
    let manifest = read_manifest(dir)?;
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in &manifest.arrays {
        if !valid_file_name(&entry.file) {
            return Err(Error::Container(format!(
                "array `{}`: invalid file name `{}`",
                entry.name, entry.file
            )));
        }
        if arrays.iter().any(|a: &Array| a.name == entry.name) {
            return Err(Error::Container(format!("duplicate array `{}`", entry.name)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(entry.dtype.item_bytes()));
        if count != Some(bytes.len()) {
            return Err(Error::Container(format!(
                "array `{}`: {} bytes on disk, manifest shape {:?} of {:?} needs {}",
                entry.name,
                bytes.len(),
                entry.shape,
                entry.dtype,
                count.map_or("overflow".to_string(), |n| n.to_string())
            )));
        }
        arrays.push(Array {
            name: entry.name.clone(),
            role: entry.role.clone(),
            shape: entry.shape.clone(),
            data: ArrayData::from_bytes(entry.dtype, &bytes),
        });
    }
    let mut files = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        if !valid_file_name(name) {
            return Err(Error::Container(format!("invalid file name `{name}`")));
        }
        let path = dir.join(name);
        files.push((name.clone(), fs::read(&path).map_err(|e| Error::io(&path, e))?));
    }
    Ok(Container {
        kind: manifest.kind,
        arrays,
        metadata: manifest.metadata,
        config: manifest.config,
        provenance: manifest.provenance,
        metrics: manifest.metrics,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("dataset", Provenance::new("abc".into(), 3));
        c.push(Array::new("i", "intensity", vec![2, 2], ArrayData::Float64(vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE])).unwrap())
            .unwrap();
        c.push(
            Array::new(
                "z",
                "object",
                vec![1, 2],
                ArrayData::Complex128(vec![Complex64::new(1.0, -2.0), Complex64::new(0.25, 3.0)]),
            )
            .unwrap(),
        )
        .unwrap();
        c.push(Array::new("p", "positions", vec![1, 2], ArrayData::Int64(vec![4, -7])).unwrap())
            .unwrap();
        c.files.push(("preview.png".into(), vec![1, 2, 3]));
        c
    }

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        let c = sample();
        save_container(&dir, &c, false).unwrap();
        let back = load_container(&dir).unwrap();
        assert_eq!(back, c);
        match &back.arrays[0].data {
            ArrayData::Float64(v) => assert_eq!(v[1].to_bits(), (-0.0f64).to_bits()),
            _ => unreachable!(),
        }
        assert!(!sibling(&dir, ".lock").exists());
        assert!(!sibling(&dir, ".partial").exists());
    }

    #[test]
    fn complex_layout_is_interleaved() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        save_container(&dir, &sample(), false).unwrap();
        let bytes = fs::read(dir.join("z.bin")).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[8..16], &(-2.0f64).to_le_bytes());
    }

    #[test]
    fn wrong_byte_length_names_array() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        save_container(&dir, &sample(), false).unwrap();
        let p = dir.join("z.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        let err = load_container(&dir).unwrap_err().to_string();
        assert!(err.contains("`z`"), "{err}");
    }

    #[test]
    fn refuses_existing_and_other_versions() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        save_container(&dir, &sample(), false).unwrap();
        assert!(save_container(&dir, &sample(), false).is_err());
        save_container(&dir, &sample(), true).unwrap();

        let m = dir.join(MANIFEST);
        let text = fs::read_to_string(&m).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
        fs::write(&m, text).unwrap();
        let err = load_container(&dir).unwrap_err().to_string();
        assert!(err.contains("format_version"), "{err}");
    }

    #[test]
    fn lock_blocks_second_writer() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        let _held = DirLock::acquire(&dir).unwrap();
        let err = save_container(&dir, &sample(), false).unwrap_err().to_string();
        assert!(err.contains("locked"), "{err}");
        assert!(!dir.exists());
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        let mut c = sample();
        c.arrays[0].shape = vec![3, 3];
        assert!(save_container(&dir, &c, false).is_err());
        assert!(!dir.exists());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }
}
