//! Binary tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u32        rank
//! u64 × rank extents
//! u8         dtype tag (0 = real64, 1 = complex128)
//! payload    f64 values; complex values interleave (re, im)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::tensor::{DType, Storage, Tensor};
use crate::{ArrayError, Result};

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &n in t.shape() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&[t.dtype().tag()])?;
    match t.storage() {
        Storage::Real(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Storage::Complex(v) => {
            for z in v {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| ArrayError::Format(format!("truncated header or payload: {e}")))?;
    Ok(buf)
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let rank = u32::from_le_bytes(read_exact::<R, 4>(&mut r)?) as usize;
    if rank > 16 {
        return Err(ArrayError::Format(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(read_exact::<R, 8>(&mut r)?) as usize);
    }
    let tag = read_exact::<R, 1>(&mut r)?[0];
    let dtype =
        DType::from_tag(tag).ok_or_else(|| ArrayError::Format(format!("unknown dtype tag {tag}")))?;
    let n: usize = shape.iter().product();
    let t = match dtype {
        DType::Real64 => {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(read_exact::<R, 8>(&mut r)?));
            }
            Tensor::from_vec(&shape, data)?
        }
        DType::Complex128 => {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let re = f64::from_le_bytes(read_exact::<R, 8>(&mut r)?);
                let im = f64::from_le_bytes(read_exact::<R, 8>(&mut r)?);
                data.push(Complex64::new(re, im));
            }
            Tensor::from_complex(&shape, data)?
        }
    };
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(ArrayError::Format("trailing bytes after payload".into()));
    }
    Ok(t)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
