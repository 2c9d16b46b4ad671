//! Binary window store: `MMWD`, u32 version, u64 count, then per window
//! u16 channels, u16 length, u8 activity, f32 resistance, u16 subject and
//! the f32 samples row-major. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{io_err, DataError, DataResult, DatasetKind, LabeledWindow};
use crate::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"MMWD";
pub const CACHE_VERSION: u32 = 1;

fn narrow<T: TryFrom<usize>>(v: usize, what: &str) -> DataResult<T> {
    T::try_from(v).map_err(|_| DataError::Cache(format!("{what} {v} does not fit the cache format")))
}

pub fn write_windows(path: &Path, windows: &[LabeledWindow]) -> DataResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(windows.len() as u64).to_le_bytes());
    for lw in windows {
        let (c, t) = (lw.window.shape()[0], lw.window.shape()[1]);
        buf.extend_from_slice(&narrow::<u16>(c, "channel count")?.to_le_bytes());
        buf.extend_from_slice(&narrow::<u16>(t, "window length")?.to_le_bytes());
        buf.push(narrow::<u8>(lw.activity, "activity id")?);
        buf.extend_from_slice(&lw.resistance.to_le_bytes());
        buf.extend_from_slice(&narrow::<u16>(lw.subject_id as usize, "subject id")?.to_le_bytes());
        for v in lw.window.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err(path))?;
        buf.clear();
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn take<const N: usize>(&mut self) -> DataResult<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| DataError::Cache("truncated file".into()))?;
        Ok(b)
    }
}

/// Reads a store written by [`write_windows`]; `source` tags the windows and
/// uids are their positions in the file.
pub fn read_windows(path: &Path, source: DatasetKind) -> DataResult<Vec<LabeledWindow>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = Cursor {
        inner: BufReader::new(file),
    };
    if &r.take::<4>()? != CACHE_MAGIC {
        return Err(DataError::Cache("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take()?);
    if version != CACHE_VERSION {
        return Err(DataError::Cache(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(r.take()?);
    let mut out = Vec::new();
    for uid in 0..count {
        let c = u16::from_le_bytes(r.take()?) as usize;
        let t = u16::from_le_bytes(r.take()?) as usize;
        let [activity] = r.take::<1>()?;
        let resistance = f32::from_le_bytes(r.take()?);
        let subject = u16::from_le_bytes(r.take()?);
        let mut data = Vec::with_capacity(c * t);
        for _ in 0..c * t {
            data.push(f32::from_le_bytes(r.take()?));
        }
        out.push(LabeledWindow {
            window: Tensor::new(vec![c, t], data).expect("cache shape"),
            activity: activity as usize,
            resistance,
            subject_id: subject as u32,
            source,
            uid,
        });
    }
    if r.inner.read(&mut [0u8; 1]).map_err(io_err(path))? != 0 {
        return Err(DataError::Cache("trailing bytes after last window".into()));
    }
    Ok(out)
}
