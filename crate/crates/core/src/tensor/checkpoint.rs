use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Adam, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"LNKR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint is missing record '{0}'")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl RecordData {
    fn code(&self) -> u8 {
        match self {
            RecordData::F32(_) => 0,
            RecordData::F64(_) => 1,
            RecordData::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            RecordData::F32(v) => v.len(),
            RecordData::F64(v) => v.len(),
            RecordData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: RecordData,
}

/// Flat list of named, typed arrays. Records are written in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], data: RecordData) {
        self.records.push(Record {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u64).collect(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    fn require(&self, name: &str) -> Result<&Record, CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&(r.name.len() as u32).to_le_bytes())?;
            w.write_all(r.name.as_bytes())?;
            w.write_all(&(r.dims.len() as u32).to_le_bytes())?;
            for d in &r.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            w.write_all(&[r.data.code()])?;
            match &r.data {
                RecordData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                RecordData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                RecordData::U8(v) => w.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("record name is not UTF-8".into()))?;
            let ndim = cur.u32()? as usize;
            let dims = (0..ndim).map(|_| cur.u64()).collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| CheckpointError::Corrupt(format!("dims of '{name}' overflow")))?;
            let data = match cur.take(1)?[0] {
                0 => RecordData::F32(
                    cur.take(n.checked_mul(4).ok_or_else(|| overflow(&name))?)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => RecordData::F64(
                    cur.take(n.checked_mul(8).ok_or_else(|| overflow(&name))?)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => RecordData::U8(cur.take(n)?.to_vec()),
                code => return Err(CheckpointError::Corrupt(format!("unknown dtype {code} for '{name}'"))),
            };
            records.push(Record { name, dims, data });
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Store every parameter as `param.<name>` (f64).
    pub fn put_params(&mut self, params: &ParamStore) {
        self.put_params_under("param.", params);
    }

    pub fn put_params_under(&mut self, prefix: &str, params: &ParamStore) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}{name}"), t.shape(), RecordData::F64(t.data().to_vec()));
        }
    }

    /// Rebuild a parameter store; `requires_grad` is taken from `template`
    /// when present, otherwise parameters come back trainable.
    pub fn params(&self, template: Option<&ParamStore>) -> Result<ParamStore, CheckpointError> {
        self.params_under("param.", template)
    }

    pub fn params_under(&self, prefix: &str, template: Option<&ParamStore>) -> Result<ParamStore, CheckpointError> {
        let mut store = ParamStore::default();
        for r in &self.records {
            let Some(name) = r.name.strip_prefix(prefix) else {
                continue;
            };
            let t = record_tensor(r)?;
            let trainable = template.and_then(|s| s.get(name)).map_or(true, |t| t.requires_grad);
            let mut t = t;
            t.requires_grad = trainable;
            store.insert(name, t);
        }
        Ok(store)
    }

    pub fn put_adam(&mut self, adam: &Adam) {
        for (name, m) in &adam.first_moment {
            self.push(format!("adam.m.{name}"), &[m.len()], RecordData::F64(m.clone()));
        }
        for (name, v) in &adam.second_moment {
            self.push(format!("adam.v.{name}"), &[v.len()], RecordData::F64(v.clone()));
        }
        self.put_u64("meta.step", adam.step);
    }

    /// Restore optimizer moments and step into `adam` (config is kept).
    pub fn restore_adam(&self, adam: &mut Adam) -> Result<(), CheckpointError> {
        adam.first_moment.clear();
        adam.second_moment.clear();
        for r in &self.records {
            if let Some(name) = r.name.strip_prefix("adam.m.") {
                adam.first_moment.insert(name.to_string(), f64_data(r)?.to_vec());
            } else if let Some(name) = r.name.strip_prefix("adam.v.") {
                adam.second_moment.insert(name.to_string(), f64_data(r)?.to_vec());
            }
        }
        adam.step = self.u64("meta.step")?;
        Ok(())
    }

    pub fn put_u64(&mut self, name: &str, v: u64) {
        self.push(name, &[8], RecordData::U8(v.to_le_bytes().to_vec()));
    }

    pub fn u64(&self, name: &str) -> Result<u64, CheckpointError> {
        match &self.require(name)?.data {
            RecordData::U8(b) if b.len() == 8 => Ok(u64::from_le_bytes(b.as_slice().try_into().unwrap())),
            _ => Err(CheckpointError::Corrupt(format!("'{name}' is not a u64"))),
        }
    }

    pub fn put_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.push(name, &[bytes.len()], RecordData::U8(bytes.to_vec()));
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8], CheckpointError> {
        match &self.require(name)?.data {
            RecordData::U8(b) => Ok(b),
            _ => Err(CheckpointError::Corrupt(format!("'{name}' is not a byte record"))),
        }
    }

    pub fn put_f64s(&mut self, name: &str, dims: &[usize], v: Vec<f64>) {
        self.push(name, dims, RecordData::F64(v));
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64], CheckpointError> {
        f64_data(self.require(name)?)
    }
}

fn overflow(name: &str) -> CheckpointError {
    CheckpointError::Corrupt(format!("record '{name}' is too large"))
}

fn f64_data(r: &Record) -> Result<&[f64], CheckpointError> {
    match &r.data {
        RecordData::F64(v) => Ok(v),
        _ => Err(CheckpointError::Corrupt(format!("'{}' is not f64", r.name))),
    }
}

fn record_tensor(r: &Record) -> Result<Tensor, CheckpointError> {
    let dims: Vec<usize> = r.dims.iter().map(|&d| d as usize).collect();
    let data = match &r.data {
        RecordData::F64(v) => v.clone(),
        RecordData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        RecordData::U8(v) => v.iter().map(|&x| x as f64).collect(),
    };
    debug_assert_eq!(data.len(), r.data.len());
    Tensor::new(&dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
