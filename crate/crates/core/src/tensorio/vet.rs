//! VET container: a little-endian header, a row-major `f32` payload and a
//! trailing UTF-8 JSON metadata block.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VET1"
//! 4       4     u32 version (1)
//! 8       4     u32 dtype code (1 = f32)
//! 12      4     u32 rank r (>= 1)
//! 16      8r    u64 dims
//! ..      4N    f32 payload, N = product(dims)
//! ..      8     u64 metadata byte length M
//! ..      M     JSON object
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::Value;

use super::types::{FeatureSet, FrameFeatureTensor, PredictionMatrix, ResponseTensor, RoiName};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VET1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

pub type Metadata = serde_json::Map<String, Value>;

/// Raw tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VetTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl VetTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let t = VetTensor { shape, data };
        t.validate()?;
        Ok(t)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|row| row.iter().map(|&v| v as f32).collect::<Vec<_>>()).collect();
        VetTensor {
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [rows, cols] => Ok(DMatrix::from_row_iterator(
                rows,
                cols,
                self.data.iter().map(|&v| f64::from(v)),
            )),
            _ => Err(Error::format(format!(
                "expected a rank-2 tensor, found shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.shape.is_empty() {
            return Err(Error::validation("rank-0 tensors are not representable"));
        }
        let numel = checked_numel(&self.shape)
            .ok_or_else(|| Error::validation(format!("shape {:?} overflows", self.shape)))?;
        if numel != self.data.len() {
            return Err(Error::validation(format!(
                "shape {:?} implies {numel} values, got {}",
                self.shape,
                self.data.len()
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }
}

fn checked_numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn encode(tensor: &VetTensor, meta: &Metadata) -> Result<Vec<u8>> {
    tensor.validate()?;
    let meta_bytes = serde_json::to_vec(meta)
        .map_err(|e| Error::validation(format!("metadata is not serializable: {e}")))?;
    let mut out = Vec::with_capacity(16 + 8 * tensor.shape.len() + 4 * tensor.data.len() + 8 + meta_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
    for &d in &tensor.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(VetTensor, Metadata)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!("bad magic {magic:02x?}, expected \"VET1\"")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let dtype = cur.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(format!("unsupported dtype code {dtype}")));
    }
    let rank = cur.u32("rank")? as usize;
    if rank == 0 {
        return Err(Error::format("rank-0 tensor"));
    }
    let mut shape = Vec::with_capacity(rank.min(16));
    for i in 0..rank {
        let d = cur.u64("dims")?;
        shape.push(usize::try_from(d).map_err(|_| Error::format(format!("dim {i} = {d} too large")))?);
    }
    let numel = checked_numel(&shape)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::format(format!("shape {shape:?} overflows")))?;
    let payload = cur.take(numel * 4, "payload")?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let meta_len = cur.u64("metadata length")?;
    let meta_len = usize::try_from(meta_len)
        .map_err(|_| Error::format(format!("metadata length {meta_len} too large")))?;
    let meta_bytes = cur.take(meta_len, "metadata")?;
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after metadata",
            bytes.len() - cur.pos
        )));
    }
    let meta = match serde_json::from_slice::<Value>(meta_bytes) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(Error::format("metadata is not a JSON object")),
        Err(e) => return Err(Error::format(format!("metadata is not valid JSON: {e}"))),
    };
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "non-finite value in payload at flat index {pos}"
        )));
    }
    Ok((VetTensor { shape, data }, meta))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &VetTensor, meta: &Metadata) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensor, meta)?;
    fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(VetTensor, Metadata)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Typed conversion to and from a VET tensor plus metadata.
pub trait VetCodec: Sized {
    /// Value of the `kind` metadata key.
    const KIND: &'static str;

    fn to_vet(&self) -> Result<(VetTensor, Metadata)>;

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self>;
}

pub fn save<T: VetCodec>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    save_with_meta(path, value, &Metadata::new())
}

/// Writes `value`; `extra` keys are merged into the metadata without
/// overriding the codec's own keys.
pub fn save_with_meta<T: VetCodec>(path: impl AsRef<Path>, value: &T, extra: &Metadata) -> Result<()> {
    let (tensor, mut meta) = value.to_vet()?;
    meta.insert("kind".into(), T::KIND.into());
    for (k, v) in extra {
        meta.entry(k.clone()).or_insert_with(|| v.clone());
    }
    write_tensor(path, &tensor, &meta)
}

pub fn load<T: VetCodec>(path: impl AsRef<Path>) -> Result<T> {
    load_with_meta(path).map(|(v, _)| v)
}

pub fn load_with_meta<T: VetCodec>(path: impl AsRef<Path>) -> Result<(T, Metadata)> {
    let (tensor, meta) = read_tensor(path)?;
    match meta.get("kind").and_then(Value::as_str) {
        Some(kind) if kind == T::KIND => {}
        Some(kind) => {
            return Err(Error::format(format!(
                "expected a {:?} tensor, file holds {kind:?}",
                T::KIND
            )))
        }
        None => return Err(Error::format("metadata lacks a \"kind\" key")),
    }
    let value = T::from_vet(tensor, &meta)?;
    Ok((value, meta))
}

pub(crate) fn meta_str<'a>(meta: &'a Metadata, key: &str) -> Result<&'a str> {
    meta.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::format(format!("metadata key {key:?} missing or not a string")))
}

pub(crate) fn meta_u64(meta: &Metadata, key: &str) -> Result<u64> {
    meta.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::format(format!("metadata key {key:?} missing or not an integer")))
}

pub(crate) fn meta_f64(meta: &Metadata, key: &str) -> Result<f64> {
    meta.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::format(format!("metadata key {key:?} missing or not a number")))
}

pub(crate) fn meta_f64_vec(meta: &Metadata, key: &str) -> Result<Vec<f64>> {
    meta.get(key)
        .and_then(Value::as_array)
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::format(format!("metadata key {key:?} missing or not a number array")))
}

fn expect_rank(tensor: &VetTensor, rank: usize, kind: &str) -> Result<()> {
    if tensor.shape.len() != rank {
        return Err(Error::format(format!(
            "{kind} must be rank {rank}, found shape {:?}",
            tensor.shape
        )));
    }
    Ok(())
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v)).collect()
}

impl VetCodec for ResponseTensor {
    const KIND: &'static str = "response";

    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let mut meta = Metadata::new();
        meta.insert("roi".into(), self.roi.as_str().into());
        meta.insert("subject".into(), self.subject.into());
        Ok((VetTensor::new(self.shape().to_vec(), to_f32(self.data()))?, meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        expect_rank(&tensor, 3, Self::KIND)?;
        let roi: RoiName = meta_str(meta, "roi")?.parse()?;
        let subject = u32::try_from(meta_u64(meta, "subject")?)
            .map_err(|_| Error::format("subject id out of range"))?;
        let shape = [tensor.shape[0], tensor.shape[1], tensor.shape[2]];
        ResponseTensor::new(roi, subject, shape, to_f64(&tensor.data))
    }
}

impl VetCodec for FeatureSet {
    const KIND: &'static str = "features";

    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let mut meta = Metadata::new();
        meta.insert("model_name".into(), self.model_name.clone().into());
        meta.insert("layer_name".into(), self.layer_name.clone().into());
        meta.insert("frames_per_video".into(), self.frames_per_video.into());
        meta.insert("aggregated".into(), self.aggregated.into());
        Ok((VetTensor::from_matrix(&self.data), meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        expect_rank(&tensor, 2, Self::KIND)?;
        let aggregated = meta
            .get("aggregated")
            .and_then(Value::as_bool)
            .ok_or_else(|| Error::format("metadata key \"aggregated\" missing or not a bool"))?;
        FeatureSet::new(
            meta_str(meta, "model_name")?,
            meta_str(meta, "layer_name")?,
            tensor.to_matrix()?,
            meta_u64(meta, "frames_per_video")? as usize,
            aggregated,
        )
    }
}

impl VetCodec for FrameFeatureTensor {
    const KIND: &'static str = "frames";

    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let mut meta = Metadata::new();
        meta.insert("model_name".into(), self.model_name.clone().into());
        meta.insert("layer_name".into(), self.layer_name.clone().into());
        Ok((VetTensor::new(self.shape().to_vec(), to_f32(self.data()))?, meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        expect_rank(&tensor, 3, Self::KIND)?;
        let shape = [tensor.shape[0], tensor.shape[1], tensor.shape[2]];
        FrameFeatureTensor::new(
            meta_str(meta, "model_name")?,
            meta_str(meta, "layer_name")?,
            shape,
            to_f64(&tensor.data),
        )
    }
}

impl VetCodec for PredictionMatrix {
    const KIND: &'static str = "prediction";

    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let mut meta = Metadata::new();
        meta.insert("roi".into(), self.roi.as_str().into());
        Ok((VetTensor::from_matrix(&self.data), meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        expect_rank(&tensor, 2, Self::KIND)?;
        PredictionMatrix::new(meta_str(meta, "roi")?.parse()?, tensor.to_matrix()?)
    }
}
