// SPDX-License-Identifier: MIT OR Apache-2.0

//! `.tpl` tensor archives.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TPL1"                     4 bytes magic
//! version: u16               currently 1
//! repeated records:
//!     name_len: u32
//!     name: name_len bytes   UTF-8
//!     dtype: u8              0 = F32
//!     ndim: u8
//!     dims: ndim x u64
//!     payload: prod(dims) x f32
//! manifest: canonical JSON   sorted keys, no whitespace
//! manifest_len: u64          byte length of the manifest
//! ```
//!
//! The record region is delimited by the trailing manifest, so a reader
//! locates the manifest from the footer first and then walks the records,
//! which must tile the region exactly.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"TPL1";
pub const FORMAT_VERSION: u16 = 1;
pub const FILE_EXTENSION: &str = "tpl";

const HEADER_LEN: usize = 4 + 2;
const FOOTER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            _ => None,
        }
    }
}

/// Named, shaped, row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, shape: Vec<u64>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dtype: DType::F32,
            shape,
            data,
        }
    }

    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self::new(
            name,
            vec![m.rows() as u64, m.cols() as u64],
            m.as_slice().to_vec(),
        )
    }

    pub fn from_vector(name: impl Into<String>, v: &[f32]) -> Self {
        Self::new(name, vec![v.len() as u64], v.to_vec())
    }

    /// Interprets a rank-2 record as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            [r, c] => Matrix::from_vec(*r as usize, *c as usize, self.data.clone()),
            other => Err(Error::Shape(format!(
                "tensor `{}` has rank {}, expected 2",
                self.name,
                other.len()
            ))),
        }
    }

    pub fn element_count(&self) -> Option<u64> {
        self.shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    /// Checks the record invariants.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::RejectedValue {
                name: self.name.clone(),
                reason: "empty tensor name".into(),
            });
        }
        if self.name.len() > u32::MAX as usize {
            return Err(Error::RejectedValue {
                name: self.name.clone(),
                reason: "name too long".into(),
            });
        }
        if self.shape.len() > u8::MAX as usize {
            return Err(Error::RejectedValue {
                name: self.name.clone(),
                reason: format!("rank {} exceeds 255", self.shape.len()),
            });
        }
        match self.element_count() {
            Some(n) if n == self.data.len() as u64 => {}
            Some(n) => {
                return Err(Error::RejectedValue {
                    name: self.name.clone(),
                    reason: format!("shape {:?} holds {n} values, got {}", self.shape, self.data.len()),
                })
            }
            None => {
                return Err(Error::RejectedValue {
                    name: self.name.clone(),
                    reason: "element count overflows u64".into(),
                })
            }
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::RejectedValue {
                name: self.name.clone(),
                reason: format!("non-finite value at flat index {pos}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    ColNorms,
    Activations,
    LabelsAux,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tensor_name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub model_id: String,
    pub num_layers: u32,
    pub entries: Vec<ManifestEntry>,
}

impl ArchiveManifest {
    pub fn new(model_id: impl Into<String>, num_layers: u32) -> Self {
        Self {
            model_id: model_id.into(),
            num_layers,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, tensor_name: impl Into<String>, role: Role, layer_index: Option<u32>) {
        self.entries.push(ManifestEntry {
            tensor_name: tensor_name.into(),
            role,
            layer_index,
        });
    }

    /// Canonical JSON: object keys sorted, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> Result<String> {
        // serde_json's default map is ordered by key, so a round trip
        // through `Value` sorts every object.
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    fn validate_against(&self, names: &HashSet<&str>) -> Result<()> {
        for e in &self.entries {
            if !names.contains(e.tensor_name.as_str()) {
                return Err(Error::Manifest(format!(
                    "entry references missing tensor `{}`",
                    e.tensor_name
                )));
            }
            if let Some(l) = e.layer_index {
                if l >= self.num_layers {
                    return Err(Error::Manifest(format!(
                        "tensor `{}` has layer index {l} but num_layers is {}",
                        e.tensor_name, self.num_layers
                    )));
                }
            }
        }
        Ok(())
    }
}

/// In-memory archive: records in write order plus the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub records: Vec<TensorRecord>,
    pub manifest: ArchiveManifest,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&TensorRecord> {
        self.get(name)
            .ok_or_else(|| Error::Manifest(format!("archive has no tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_archive(&self.records, &self.manifest)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (records, manifest) = read_archive(bytes)?;
        Ok(Self { records, manifest })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Serializes records and manifest into the `.tpl` byte layout.
///
/// All validation happens before the first byte is produced.
pub fn write_archive(records: &[TensorRecord], manifest: &ArchiveManifest) -> Result<Vec<u8>> {
    let mut names = HashSet::with_capacity(records.len());
    for r in records {
        r.validate()?;
        if !names.insert(r.name.as_str()) {
            return Err(Error::DuplicateName(r.name.clone()));
        }
    }
    manifest.validate_against(&names)?;
    let manifest_json = manifest.to_canonical_json()?;

    let payload: usize = records
        .iter()
        .map(|r| 4 + r.name.len() + 2 + 8 * r.shape.len() + 4 * r.data.len())
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload + manifest_json.len() + FOOTER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype.code());
        out.push(r.shape.len() as u8);
        for d in &r.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(manifest_json.as_bytes());
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Truncation(format!(
                    "{what} needs {n} bytes at offset {}, {} remain",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses a `.tpl` byte stream. Exact inverse of [`write_archive`].
pub fn read_archive(bytes: &[u8]) -> Result<(Vec<TensorRecord>, ArchiveManifest)> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes.len() < HEADER_LEN + FOOTER_LEN {
        return Err(Error::Truncation(format!(
            "{} bytes is shorter than header and footer",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }

    let footer_at = bytes.len() - FOOTER_LEN;
    let manifest_len = u64::from_le_bytes(bytes[footer_at..].try_into().expect("8 bytes"));
    let body_len = (footer_at - HEADER_LEN) as u64;
    if manifest_len > body_len {
        return Err(Error::Truncation(format!(
            "manifest length {manifest_len} exceeds the {body_len} bytes available"
        )));
    }
    let manifest_at = footer_at - manifest_len as usize;
    let manifest_bytes = &bytes[manifest_at..footer_at];
    // A stream cut short leaves arbitrary bytes where the footer should be,
    // so an unparseable or non-canonical manifest is reported as truncation.
    let manifest: ArchiveManifest = serde_json::from_slice(manifest_bytes).map_err(|e| {
        Error::Truncation(format!("trailing manifest does not parse ({e})"))
    })?;
    if manifest.to_canonical_json()?.as_bytes() != manifest_bytes {
        return Err(Error::Truncation(
            "trailing manifest is not in canonical form".into(),
        ));
    }

    let mut cur = Cursor {
        buf: &bytes[..manifest_at],
        pos: HEADER_LEN,
    };
    let mut records = Vec::new();
    let mut names = HashSet::new();
    while cur.remaining() > 0 {
        let name_len = cur.u32("name length")? as usize;
        let name_bytes = cur.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor name at offset {} is not UTF-8", cur.pos)))?
            .to_owned();
        let dtype_code = cur.u8("dtype")?;
        let dtype = DType::from_code(dtype_code)
            .ok_or_else(|| Error::Format(format!("unknown dtype code {dtype_code} for `{name}`")))?;
        let ndim = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64("dimension")?);
        }
        let count = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .filter(|&n| n <= cur.remaining() as u64)
            .ok_or_else(|| {
                Error::Truncation(format!(
                    "payload of `{name}` with shape {shape:?} exceeds the {} bytes left",
                    cur.remaining()
                ))
            })? as usize
            / 4;
        let raw = cur.take(count * 4, "payload")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let record = TensorRecord {
            name,
            dtype,
            shape,
            data,
        };
        record.validate().map_err(|e| Error::Format(e.to_string()))?;
        if !names.insert(record.name.clone()) {
            return Err(Error::Format(format!("duplicate tensor name `{}`", record.name)));
        }
        records.push(record);
    }

    let name_refs: HashSet<&str> = records.iter().map(|r| r.name.as_str()).collect();
    manifest.validate_against(&name_refs)?;
    Ok((records, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<TensorRecord>, ArchiveManifest) {
        let records = vec![
            TensorRecord::new("w.layer0.q", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.25]),
            TensorRecord::new("norms.layer0.q", vec![3], vec![1.0, 2.0, 3.0]),
        ];
        let mut manifest = ArchiveManifest::new("toy", 1);
        manifest.push("w.layer0.q", Role::Weight, Some(0));
        manifest.push("norms.layer0.q", Role::ColNorms, Some(0));
        (records, manifest)
    }

    #[test]
    fn single_scalar_record_round_trips() {
        let records = vec![TensorRecord::new("w", vec![1], vec![0.0])];
        let manifest = ArchiveManifest::new("m", 0);
        let bytes = write_archive(&records, &manifest).unwrap();
        let (back, m) = read_archive(&bytes).unwrap();
        assert_eq!(back, records);
        assert_eq!(m, manifest);
    }

    #[test]
    fn header_and_footer_layout() {
        let (records, manifest) = sample();
        let bytes = write_archive(&records, &manifest).unwrap();
        assert_eq!(&bytes[..4], b"TPL1");
        assert_eq!(&bytes[4..6], &[1, 0]);
        // first record: u32 name length 10, then "w.layer0.q"
        assert_eq!(&bytes[6..10], &10u32.to_le_bytes());
        assert_eq!(&bytes[10..20], b"w.layer0.q");
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes[21], 2);
        let json = manifest.to_canonical_json().unwrap();
        let n = bytes.len();
        assert_eq!(&bytes[n - 8..], &(json.len() as u64).to_le_bytes());
        assert_eq!(&bytes[n - 8 - json.len()..n - 8], json.as_bytes());
    }

    #[test]
    fn canonical_manifest_sorts_keys() {
        let (_, manifest) = sample();
        let json = manifest.to_canonical_json().unwrap();
        assert!(json.starts_with(r#"{"entries":[{"layer_index":0,"role":"weight","tensor_name":"w.layer0.q"}"#));
        assert!(!json.contains(' '));
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let (records, manifest) = sample();
        assert_eq!(
            write_archive(&records, &manifest).unwrap(),
            write_archive(&records, &manifest).unwrap()
        );
    }

    #[test]
    fn shape_value_mismatch_is_rejected() {
        let records = vec![TensorRecord::new("bad", vec![2, 3], vec![0.0; 5])];
        let err = write_archive(&records, &ArchiveManifest::new("m", 0)).unwrap_err();
        assert!(matches!(err, Error::RejectedValue { .. }), "{err}");
    }

    #[test]
    fn non_finite_and_duplicates_are_rejected() {
        let nan = vec![TensorRecord::new("x", vec![1], vec![f32::NAN])];
        assert!(matches!(
            write_archive(&nan, &ArchiveManifest::new("m", 0)),
            Err(Error::RejectedValue { .. })
        ));
        let dup = vec![
            TensorRecord::new("x", vec![1], vec![1.0]),
            TensorRecord::new("x", vec![1], vec![2.0]),
        ];
        assert!(matches!(
            write_archive(&dup, &ArchiveManifest::new("m", 0)),
            Err(Error::DuplicateName(_))
        ));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let (records, manifest) = sample();
        let mut bytes = write_archive(&records, &manifest).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_archive(&bytes), Err(Error::Format(_))));
        assert!(matches!(read_archive(b"XXXX"), Err(Error::Format(_))));
    }

    #[test]
    fn one_byte_truncation_is_detected() {
        let (records, manifest) = sample();
        let bytes = write_archive(&records, &manifest).unwrap();
        let err = read_archive(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Truncation(_)), "{err}");
    }

    #[test]
    fn manifest_must_reference_existing_tensors() {
        let records = vec![TensorRecord::new("a", vec![1], vec![1.0])];
        let mut manifest = ArchiveManifest::new("m", 1);
        manifest.push("missing", Role::Weight, Some(0));
        assert!(matches!(write_archive(&records, &manifest), Err(Error::Manifest(_))));

        // hand-assemble a stream whose manifest points nowhere
        let good = ArchiveManifest::new("m", 1);
        let mut bytes = write_archive(&records, &good).unwrap();
        let old = good.to_canonical_json().unwrap();
        bytes.truncate(bytes.len() - 8 - old.len());
        let json = manifest.to_canonical_json().unwrap();
        bytes.extend_from_slice(json.as_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        assert!(matches!(read_archive(&bytes), Err(Error::Manifest(_))));
    }

    #[test]
    fn layer_index_bounded_by_num_layers() {
        let records = vec![TensorRecord::new("a", vec![1], vec![1.0])];
        let mut manifest = ArchiveManifest::new("m", 2);
        manifest.push("a", Role::Activations, Some(2));
        assert!(matches!(write_archive(&records, &manifest), Err(Error::Manifest(_))));
    }

    #[test]
    fn zero_sized_tensor_round_trips() {
        let records = vec![TensorRecord::new("empty", vec![0, 4], vec![])];
        let manifest = ArchiveManifest::new("m", 0);
        let bytes = write_archive(&records, &manifest).unwrap();
        assert_eq!(read_archive(&bytes).unwrap().0, records);
    }
}
