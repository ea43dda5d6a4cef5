//! Binary tensor file format shared by checkpoints, knowledge banks, and
//! feature sidecar files.
//!
//! Layout (all integers little-endian):
//! `"STKT"` magic, `version: u32`, `dtype: u8` (0 = f64, 1 = f32),
//! `rank: u32`, `dims: u64 × rank`, then the row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"STKT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            other => Err(TensorError::Format(format!("unknown dtype code {other}"))),
        }
    }
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor, dtype: Dtype) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype.code()])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match dtype {
        Dtype::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(TensorError::Format(format!(
            "unsupported tensor file version {version}"
        )));
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let dtype = Dtype::from_code(code[0])?;
    r.read_exact(&mut buf4)?;
    let rank = u32::from_le_bytes(buf4) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut buf8 = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut buf8)?;
        shape.push(u64::from_le_bytes(buf8) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        Dtype::F64 => {
            for _ in 0..numel {
                r.read_exact(&mut buf8)?;
                data.push(f64::from_le_bytes(buf8));
            }
        }
        Dtype::F32 => {
            for _ in 0..numel {
                r.read_exact(&mut buf4)?;
                data.push(f32::from_le_bytes(buf4) as f64);
            }
        }
    }
    Tensor::new(data, &shape)
}

/// Appends tensors to one packed file; refs are `"<name>#<byte offset>"`.
pub struct TensorFileWriter {
    name: String,
    w: BufWriter<File>,
    offset: u64,
}

impl TensorFileWriter {
    /// `name` is the ref prefix (usually the file name relative to its index).
    pub fn create(path: &Path, name: &str) -> Result<Self> {
        Ok(TensorFileWriter {
            name: name.to_string(),
            w: BufWriter::new(File::create(path)?),
            offset: 0,
        })
    }

    /// Write one tensor and return its ref string.
    pub fn append(&mut self, t: &Tensor, dtype: Dtype) -> Result<String> {
        let at = self.offset;
        let mut buf = Vec::new();
        write_tensor(&mut buf, t, dtype)?;
        self.w.write_all(&buf)?;
        self.offset += buf.len() as u64;
        Ok(format!("{}#{}", self.name, at))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Reads tensors from a packed file by byte offset.
pub struct TensorFileReader {
    r: BufReader<File>,
}

impl TensorFileReader {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(TensorFileReader {
            r: BufReader::new(File::open(path)?),
        })
    }

    pub fn read_at(&mut self, offset: u64) -> Result<Tensor> {
        self.r.seek(SeekFrom::Start(offset))?;
        read_tensor(&mut self.r)
    }
}

/// Split a `"file#offset"` ref into its parts.
pub fn parse_ref(r: &str) -> Result<(&str, u64)> {
    let (file, off) = r
        .rsplit_once('#')
        .ok_or_else(|| TensorError::Format(format!("malformed tensor ref {r:?}")))?;
    let offset: u64 = off
        .parse()
        .map_err(|_| TensorError::Format(format!("malformed tensor ref offset {r:?}")))?;
    Ok((file, offset))
}

pub fn save_tensor(path: &Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let t = Tensor::new(vec![0.1, -2.5e300, 3.0, f64::MIN_POSITIVE], &[2, 2]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F64).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(t, back);

        let mut buf2 = Vec::new();
        write_tensor(&mut buf2, &back, Dtype::F64).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn f32_round_trip_preserves_f32_values() {
        let t = Tensor::new(vec![0.5, -1.25, 1e30], &[3]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F32).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        write_tensor(&mut buf2, &back, Dtype::F32).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn packed_file_refs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pack.stkt");
        let a = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::new(vec![3.0; 6], &[2, 3]).unwrap();
        let mut w = TensorFileWriter::create(&path, "pack.stkt").unwrap();
        let ra = w.append(&a, Dtype::F64).unwrap();
        let rb = w.append(&b, Dtype::F32).unwrap();
        w.finish().unwrap();

        let (fa, oa) = parse_ref(&ra).unwrap();
        assert_eq!(fa, "pack.stkt");
        let mut r = TensorFileReader::open(&path).unwrap();
        assert_eq!(r.read_at(oa).unwrap(), a);
        let (_, ob) = parse_ref(&rb).unwrap();
        assert_eq!(r.read_at(ob).unwrap(), b);
    }
}
