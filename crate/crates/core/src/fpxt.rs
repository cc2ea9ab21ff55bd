//! `FPXT1` tensor files.
//!
//! Layout: the 5-byte magic `FPXT1`, one `u8` rank, `rank` little-endian `u32`
//! dimensions, then the elements in row-major order as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FPXT1";

pub fn write_tensor<W: Write>(mut w: W, tensor: &ArrayD<f64>) -> std::io::Result<()> {
    let rank = u8::try_from(tensor.ndim())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "rank exceeds 255"))?;
    w.write_all(MAGIC)?;
    w.write_all(&[rank])?;
    for &d in tensor.shape() {
        let d = u32::try_from(d)
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in tensor.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<ArrayD<f64>> {
    let fmt = |e: std::io::Error| Error::Format(e.to_string());
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank).map_err(fmt)?;
    let mut dims = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d).map_err(fmt)?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(fmt)?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(fmt)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: &Path, tensor: &ArrayD<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(BufWriter::new(file), tensor).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ArrayD<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(BufReader::new(file))
}
