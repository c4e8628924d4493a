//! GTF1 tensor files: `"GTF1"`, a `u8` rank, `rank` little-endian `u32`
//! extents, then the elements as little-endian `f64` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{numel, Tensor};
use crate::error::{Error, Result};

pub const GTF1_MAGIC: &[u8; 4] = b"GTF1";

pub fn write_gtf1<W: Write>(t: &Tensor, mut out: W) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank {} exceeds 255", t.rank())))?;
    out.write_all(GTF1_MAGIC)?;
    out.write_all(&[rank])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gtf1<R: Read>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("missing header: {e}")))?;
    if &magic != GTF1_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    input.read_exact(&mut rank)?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut buf = [0u8; 4];
        input
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated extents: {e}")))?;
        shape.push(u32::from_le_bytes(buf) as usize);
    }
    let count = numel(&shape);
    let mut bytes = vec![0u8; count * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated data, expected {count} values: {e}")))?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_gtf1_file(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_gtf1(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_gtf1_file(path: impl AsRef<Path>) -> Result<Tensor> {
    read_gtf1(BufReader::new(File::open(path)?))
}
