//! Self-describing binary tensor files.
//!
//! Layout: magic "TDT1", version u16, dtype u8 (0 = f32, 1 = f64,
//! 2 = complex-f32 interleaved), rank u8, rank x u32 extents, then the
//! little-endian row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::{numel, Elem, Tensor};

pub const MAGIC: &[u8; 4] = b"TDT1";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    C32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::C32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::C32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    /// Stored values per logical element (2 for interleaved complex).
    fn values_per_elem(self) -> usize {
        match self {
            Dtype::C32 => 2,
            _ => 1,
        }
    }
}

/// A loaded tensor file.
#[derive(Clone, Debug)]
pub enum TensorFile {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
    /// Interleaved (re, im) pairs; data length is twice the element count.
    C32 { shape: Vec<usize>, data: Vec<f32> },
}

impl TensorFile {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorFile::F32 { shape, .. }
            | TensorFile::F64 { shape, .. }
            | TensorFile::C32 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorFile::F32 { .. } => Dtype::F32,
            TensorFile::F64 { .. } => Dtype::F64,
            TensorFile::C32 { .. } => Dtype::C32,
        }
    }

    /// Real payload as f64 (errors for complex files).
    pub fn to_f64(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        match self {
            TensorFile::F32 { shape, data } => {
                Ok((shape.clone(), data.iter().map(|&v| v as f64).collect()))
            }
            TensorFile::F64 { shape, data } => Ok((shape.clone(), data.clone())),
            TensorFile::C32 { .. } => Err(Error::Format(
                "complex tensor where a real one was expected".into(),
            )),
        }
    }

    pub fn to_tensor<E: Elem>(&self) -> Result<Tensor<E>> {
        let (shape, data) = self.to_f64()?;
        Ok(Tensor::from_f64_slice(&shape, &data))
    }
}

fn write_header(w: &mut impl Write, dtype: Dtype, shape: &[usize]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u8(dtype.code())?;
    w.write_u8(shape.len() as u8)?;
    for &e in shape {
        w.write_u32::<LittleEndian>(e as u32)?;
    }
    Ok(())
}

pub fn write_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    check_len(shape, data.len(), Dtype::F32)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::F32, shape)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    check_len(shape, data.len(), Dtype::F64)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::F64, shape)?;
    for &v in data {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Interleaved (re, im) complex payload; `data.len()` must be twice the
/// element count of `shape`.
pub fn write_c32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    check_len(shape, data.len(), Dtype::C32)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::C32, shape)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a tensor at its element precision (f32 or f64).
pub fn write_tensor<E: Elem>(path: &Path, t: &Tensor<E>) -> Result<()> {
    match E::DTYPE_CODE {
        0 => write_f32(
            path,
            t.shape(),
            &t.data().iter().map(|v| v.as_f64() as f32).collect::<Vec<_>>(),
        ),
        _ => write_f64(path, t.shape(), &t.to_f64_vec()),
    }
}

fn check_len(shape: &[usize], len: usize, dtype: Dtype) -> Result<()> {
    let want = numel(shape) * dtype.values_per_elem();
    if len != want {
        return Err(Error::Shape(format!(
            "payload length {len} does not match shape {shape:?} ({want} values)"
        )));
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<TensorFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a tensor file (magic {magic:?})",
            path.display()
        )));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported tensor file version {version}")));
    }
    let dtype = Dtype::from_code(r.read_u8()?)?;
    let rank = r.read_u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let n = numel(&shape) * dtype.values_per_elem();
    Ok(match dtype {
        Dtype::F32 | Dtype::C32 => {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.read_f32::<LittleEndian>()?);
            }
            // reject trailing garbage
            let mut probe = [0u8; 1];
            if r.read(&mut probe)? != 0 {
                return Err(Error::Format("payload longer than declared extents".into()));
            }
            if dtype == Dtype::F32 {
                TensorFile::F32 { shape, data }
            } else {
                TensorFile::C32 { shape, data }
            }
        }
        Dtype::F64 => {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.read_f64::<LittleEndian>()?);
            }
            let mut probe = [0u8; 1];
            if r.read(&mut probe)? != 0 {
                return Err(Error::Format("payload longer than declared extents".into()));
            }
            TensorFile::F64 { shape, data }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tdt");
        std::fs::write(&p, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(read(&p).is_err());
        // valid magic, wrong version
        std::fs::write(&p, b"TDT1\xff\x00\x00\x00").unwrap();
        assert!(read(&p).is_err());
    }

    #[test]
    fn complex_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tdt");
        let data = vec![1.0f32, -2.0, 0.5, 3.0]; // two complex values
        write_c32(&p, &[2], &data).unwrap();
        match read(&p).unwrap() {
            TensorFile::C32 { shape, data: d } => {
                assert_eq!(shape, vec![2]);
                assert_eq!(d, data);
            }
            other => panic!("wrong dtype {:?}", other.dtype()),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn f32_f64_roundtrip_bit_exact(
            data in proptest::collection::vec(-1e6f64..1e6, 1..64),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let shape = vec![data.len()];
            let p64 = dir.path().join("t64.tdt");
            write_f64(&p64, &shape, &data).unwrap();
            let (s, d) = read(&p64).unwrap().to_f64().unwrap();
            prop_assert_eq!(&s, &shape);
            prop_assert_eq!(&d, &data);

            let data32: Vec<f32> = data.iter().map(|&v| v as f32).collect();
            let p32 = dir.path().join("t32.tdt");
            write_f32(&p32, &shape, &data32).unwrap();
            match read(&p32).unwrap() {
                TensorFile::F32 { data: d, .. } => prop_assert_eq!(d, data32),
                _ => prop_assert!(false, "dtype changed"),
            }
        }
    }
}
