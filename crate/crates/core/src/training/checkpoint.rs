//! Checkpoint layout:
//!
//! ```text
//! <dir>/generator.sfp       parameters, buffers and Adam moments of G
//! <dir>/discriminator.sfp   the same for D
//! <dir>/meta.txt            iteration, seeds, RNG position, config, metrics
//! ```
//!
//! A `.sfp` archive is little-endian: the magic `SFPA`, a `u32` format
//! version, a `u8` dtype code (1 = f32, 2 = f64) and a `u32` entry count,
//! then per entry a `u8` kind (0 parameter, 1 buffer, 2 Adam first moment,
//! 3 Adam second moment), a `u32`-length UTF-8 name, a `u32` rank, `u64`
//! dimensions and the raw values. Files contain no paths or timestamps, so
//! equal states give byte-identical checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::TrainingError;
use crate::nn::{Adam, DType, Module, Param, Scalar, Tensor, Visitor};

const MAGIC: &[u8; 4] = b"SFPA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EntryKind {
    Param = 0,
    Buffer = 1,
    AdamFirst = 2,
    AdamSecond = 3,
}

impl EntryKind {
    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => EntryKind::Param,
            1 => EntryKind::Buffer,
            2 => EntryKind::AdamFirst,
            3 => EntryKind::AdamSecond,
            _ => return None,
        })
    }
}

/// Named tensors of one network, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive<T> {
    pub entries: Vec<(EntryKind, String, Tensor<T>)>,
}

fn corrupt(path: &Path, msg: impl Into<String>) -> TrainingError {
    TrainingError::Checkpoint { path: path.to_path_buf(), reason: msg.into() }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> TrainingError + '_ {
    move |e| corrupt(path, e.to_string())
}

impl<T: Scalar> Archive<T> {
    /// Parameters and buffers of `module` plus the moments of `adam`.
    pub fn capture<M: Module<T> + ?Sized>(module: &mut M, adam: &Adam<T>) -> Self {
        struct Collect<T>(Vec<(EntryKind, String, Tensor<T>)>);
        impl<T: Scalar> Visitor<T> for Collect<T> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                self.0.push((EntryKind::Param, name.to_string(), p.value.clone()));
            }
            fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
                self.0.push((EntryKind::Buffer, name.to_string(), b.clone()));
            }
        }
        let mut c = Collect(Vec::new());
        module.visit("", &mut c);
        for (name, m, v) in &adam.moments {
            c.0.push((EntryKind::AdamFirst, name.clone(), m.clone()));
            c.0.push((EntryKind::AdamSecond, name.clone(), v.clone()));
        }
        Archive { entries: c.0 }
    }

    /// Writes parameters and buffers back into `module` and rebuilds the
    /// moments of `adam`. Every tensor of the module must be present with
    /// a matching shape.
    pub fn restore<M: Module<T> + ?Sized>(&self, module: &mut M, adam: &mut Adam<T>, path: &Path) -> Result<(), TrainingError> {
        let lookup: BTreeMap<(EntryKind, &str), &Tensor<T>> =
            self.entries.iter().map(|(k, n, t)| ((*k, n.as_str()), t)).collect();
        struct Put<'a, T> {
            lookup: &'a BTreeMap<(EntryKind, &'a str), &'a Tensor<T>>,
            missing: Vec<String>,
            order: Vec<String>,
        }
        impl<T: Scalar> Put<'_, T> {
            fn take(&mut self, kind: EntryKind, name: &str, dst: &mut Tensor<T>) {
                match self.lookup.get(&(kind, name)) {
                    Some(t) if t.shape() == dst.shape() => *dst = (*t).clone(),
                    _ => self.missing.push(name.to_string()),
                }
            }
        }
        impl<T: Scalar> Visitor<T> for Put<'_, T> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                self.take(EntryKind::Param, name, &mut p.value);
                self.order.push(name.to_string());
            }
            fn buffer(&mut self, name: &str, b: &mut Tensor<T>) {
                self.take(EntryKind::Buffer, name, b);
            }
        }
        let mut put = Put { lookup: &lookup, missing: Vec::new(), order: Vec::new() };
        module.visit("", &mut put);
        if !put.missing.is_empty() {
            return Err(corrupt(path, format!("missing or mis-shaped tensors: {}", put.missing.join(", "))));
        }
        adam.moments.clear();
        let with_moments = self.entries.iter().any(|(k, _, _)| *k == EntryKind::AdamFirst);
        if with_moments {
            for name in put.order {
                let m = lookup.get(&(EntryKind::AdamFirst, name.as_str()));
                let v = lookup.get(&(EntryKind::AdamSecond, name.as_str()));
                match (m.copied(), v.copied()) {
                    (Some(m), Some(v)) => adam.moments.push((name, m.clone(), v.clone())),
                    _ => return Err(corrupt(path, format!("missing optimizer moments for {name}"))),
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainingError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(FORMAT_VERSION).expect("vec write");
        buf.write_u8(T::DTYPE.code()).expect("vec write");
        buf.write_u32::<LittleEndian>(self.entries.len() as u32).expect("vec write");
        for (kind, name, t) in &self.entries {
            buf.write_u8(*kind as u8).expect("vec write");
            buf.write_u32::<LittleEndian>(name.len() as u32).expect("vec write");
            buf.extend_from_slice(name.as_bytes());
            buf.write_u32::<LittleEndian>(t.shape().len() as u32).expect("vec write");
            for &d in t.shape() {
                buf.write_u64::<LittleEndian>(d as u64).expect("vec write");
            }
            for &v in t.data() {
                v.write_le(&mut buf);
            }
        }
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&buf).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, TrainingError> {
        let mut bytes = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err(path))?;
        if &magic != MAGIC {
            return Err(corrupt(path, "not a parameter archive"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err(path))?;
        if version != FORMAT_VERSION {
            return Err(corrupt(path, format!("unsupported format version {version}")));
        }
        let dtype = DType::from_code(r.read_u8().map_err(io_err(path))?);
        if dtype != Some(T::DTYPE) {
            return Err(corrupt(path, format!("archive dtype {dtype:?} does not match {:?}", T::DTYPE)));
        }
        let count = r.read_u32::<LittleEndian>().map_err(io_err(path))?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let kind = EntryKind::from_code(r.read_u8().map_err(io_err(path))?).ok_or_else(|| corrupt(path, "bad entry kind"))?;
            let len = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
            if len > r.len() {
                return Err(corrupt(path, "truncated name"));
            }
            let name = String::from_utf8(r[..len].to_vec()).map_err(|_| corrupt(path, "name is not UTF-8"))?;
            r = &r[len..];
            let rank = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(io_err(path))? as usize);
            }
            let n: usize = shape.iter().product();
            let size = T::DTYPE.size();
            if n.checked_mul(size).is_none_or(|b| b > r.len()) {
                return Err(corrupt(path, format!("truncated tensor {name}")));
            }
            let data = r[..n * size].chunks_exact(size).map(T::read_le).collect();
            r = &r[n * size..];
            entries.push((kind, name, Tensor::from_vec(&shape, data)));
        }
        if !r.is_empty() {
            return Err(corrupt(path, "trailing bytes"));
        }
        Ok(Archive { entries })
    }
}

/// Flat `key = value` metadata, order preserved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    pub pairs: Vec<(String, String)>,
}

impl Meta {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.pairs.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str, TrainingError> {
        self.get(key).ok_or_else(|| corrupt(path, format!("missing key {key}")))
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, TrainingError> {
        let mut meta = Meta::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| corrupt(path, format!("bad line {line:?}")))?;
            meta.push(k, v);
        }
        Ok(meta)
    }
}

/// `<root>/checkpoints/iter_0000300`.
pub fn checkpoint_dir(root: &Path, iteration: u64) -> PathBuf {
    root.join("checkpoints").join(format!("iter_{iteration:07}"))
}
