//! Binary file formats: `.ndev` videos, `.ndck` checkpoints, and PGM export.
//!
//! - `.ndev` — magic `NDEV`, version byte `1`, four `u32` LE dims
//!   `(T, C, H, W)`, then `f32` LE pixels in `(t, c, h, w)` row-major order.
//!   Pixels are stored at `f32` precision; reading returns exactly the
//!   rounded values, so write → read → write is byte-stable.
//! - `.ndck` — magic `NDCK`, version byte `1`, then named blocks: `u16` LE
//!   name length, UTF-8 name, `u32` LE element count, `f64` LE values.
//!   Block names are free-form; `meta/...` and `adam/...` prefixes are
//!   reserved for run state and optimizer moments.
//! - PGM — binary `P5` with maxval 255; pixel bytes are `round(p * 255)`.
//!
//! Every malformed-input path maps to [`Error::Io`], the I/O exit class.

use std::fs;
use std::path::Path;

use crate::data::VideoTensor;
use crate::error::{Error, Result};

const NDEV_MAGIC: &[u8; 4] = b"NDEV";
const NDCK_MAGIC: &[u8; 4] = b"NDCK";
const FORMAT_VERSION: u8 = 1;

fn io_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {what}", path.display()))
}

// ---------------------------------------------------------------------------
// .ndev videos
// ---------------------------------------------------------------------------

pub fn write_ndev(path: &Path, video: &VideoTensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(21 + 4 * video.data().len());
    bytes.extend_from_slice(NDEV_MAGIC);
    bytes.push(FORMAT_VERSION);
    for dim in [video.frames(), 1, video.height(), video.width()] {
        bytes.extend_from_slice(&u32::try_from(dim).map_err(|_| {
            io_err(path, format!("dimension {dim} exceeds the u32 header field"))
        })?.to_le_bytes());
    }
    for &p in video.data() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_ndev(path: &Path) -> Result<VideoTensor> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(NDEV_MAGIC)?;
    r.expect_version()?;
    let t = r.u32()? as usize;
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if c != 1 {
        return Err(io_err(path, format!("expected 1 channel, header says {c}")));
    }
    let n = t
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| io_err(path, "video dimensions overflow"))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        // f32 storage of values in [0, 1] stays in [0, 1] exactly.
        data.push(r.f32()? as f64);
    }
    r.expect_end()?;
    VideoTensor::new(t, h, w, data)
        .map_err(|e| io_err(path, format!("payload is not a valid video: {e}")))
}

// ---------------------------------------------------------------------------
// .ndck checkpoints
// ---------------------------------------------------------------------------

pub fn write_ndck(path: &Path, blocks: &[(String, Vec<f64>)]) -> Result<()> {
    let payload: usize = blocks.iter().map(|(n, v)| 6 + n.len() + 8 * v.len()).sum();
    let mut bytes = Vec::with_capacity(5 + payload);
    bytes.extend_from_slice(NDCK_MAGIC);
    bytes.push(FORMAT_VERSION);
    for (name, values) in blocks {
        let name_len = u16::try_from(name.len())
            .map_err(|_| io_err(path, format!("block name `{name}` exceeds u16 length")))?;
        let count = u32::try_from(values.len())
            .map_err(|_| io_err(path, format!("block `{name}` exceeds u32 element count")))?;
        bytes.extend_from_slice(&name_len.to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&count.to_le_bytes());
        for &v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_ndck(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(NDCK_MAGIC)?;
    r.expect_version()?;
    let mut blocks = Vec::new();
    while !r.at_end() {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| io_err(path, "block name is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.f64()?);
        }
        blocks.push((name, values));
    }
    Ok(blocks)
}

// ---------------------------------------------------------------------------
// PGM frames
// ---------------------------------------------------------------------------

/// Writes one video frame as binary PGM (`P5`, maxval 255).
pub fn write_pgm(path: &Path, frame: &[f64], height: usize, width: usize) -> Result<()> {
    if frame.len() != height * width {
        return Err(io_err(
            path,
            format!("frame has {} pixels, expected {}x{}", frame.len(), height, width),
        ));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(frame.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Byte reader
// ---------------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            io_err(self.path, format!("truncated file: wanted {n} bytes at offset {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(io_err(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let v = self.take(1)?[0];
        if v != FORMAT_VERSION {
            return Err(io_err(self.path, format!("unsupported format version {v}")));
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(io_err(
                self.path,
                format!("{} trailing bytes after the payload", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_video() -> VideoTensor {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 / 23.0).collect();
        VideoTensor::new(2, 3, 4, data).unwrap()
    }

    #[test]
    fn ndev_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("v.ndev");
        let second = dir.path().join("v2.ndev");
        write_ndev(&first, &sample_video()).unwrap();
        let back = read_ndev(&first).unwrap();
        assert_eq!(back.frames(), 2);
        assert_eq!(back.height(), 3);
        assert_eq!(back.width(), 4);
        // Values are f32-quantized on the first write and exact afterwards.
        for (&a, &b) in sample_video().data().iter().zip(back.data()) {
            assert_eq!(a as f32, b as f32);
            assert!((a - b).abs() < 1e-7);
        }
        write_ndev(&second, &back).unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn ndev_rejects_bad_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ndev");
        write_ndev(&path, &sample_video()).unwrap();
        let good = fs::read(&path).unwrap();

        let mut corrupt = good.clone();
        corrupt[0] = b'X';
        fs::write(&path, &corrupt).unwrap();
        let err = read_ndev(&path).unwrap_err();
        assert!(matches!(err, Error::Io(ref m) if m.contains("bad magic")), "{err}");

        let mut wrong_version = good.clone();
        wrong_version[4] = 9;
        fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(read_ndev(&path), Err(Error::Io(_))));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        let err = read_ndev(&path).unwrap_err();
        assert!(matches!(err, Error::Io(ref m) if m.contains("truncated")), "{err}");
    }

    #[test]
    fn ndck_round_trips_exact_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ndck");
        let blocks = vec![
            ("gt/f.w".to_string(), vec![1.5, -2.25, f64::MIN_POSITIVE, 1.0 / 3.0]),
            ("meta/state".to_string(), vec![42.0]),
            ("empty".to_string(), vec![]),
        ];
        write_ndck(&path, &blocks).unwrap();
        assert_eq!(read_ndck(&path).unwrap(), blocks);
    }

    #[test]
    fn ndck_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ndck");
        write_ndck(&path, &[("a".into(), vec![1.0])]).unwrap();
        let good = fs::read(&path).unwrap();

        let mut corrupt = good.clone();
        corrupt[1] = b'!';
        fs::write(&path, &corrupt).unwrap();
        assert!(matches!(read_ndck(&path), Err(Error::Io(_))));

        fs::write(&path, &good[..good.len() - 1]).unwrap();
        assert!(matches!(read_ndck(&path), Err(Error::Io(_))));

        assert!(matches!(read_ndck(&dir.path().join("missing.ndck")), Err(Error::Io(_))));
    }

    #[test]
    fn pgm_writes_the_expected_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        write_pgm(&path, &[0.0, 1.0, 0.5, 0.25], 2, 2).unwrap();
        let bytes = fs::read(&path).unwrap();
        let expected = [b"P5\n2 2\n255\n".as_slice(), &[0u8, 255, 128, 64]].concat();
        assert_eq!(bytes, expected);
        assert!(write_pgm(&path, &[0.0; 3], 2, 2).is_err());
    }
}
