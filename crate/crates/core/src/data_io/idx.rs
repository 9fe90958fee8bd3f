//! IDX binary files (the MNIST distribution format).

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Vector;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let Some(b) = self.bytes.get(self.pos..self.pos + 4) else {
            return Err(self.fail("unexpected end of header"));
        };
        self.pos += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn header(&mut self, magic: u32) -> Result<()> {
        let found = self.u32()?;
        if found != magic {
            self.pos = 0;
            return Err(self.fail(format!("bad magic {found:#010x}, expected {magic:#010x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            let at = self.bytes.len();
            self.pos = at;
            return Err(self.fail(format!("truncated: need {len} data bytes, found {available}")));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

/// Parses an image file; pixels are flattened row-major and scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Vector>> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(IMAGE_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let size = rows * cols;
    let data = r.payload(count * size)?;
    if size == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(data
        .chunks_exact(size)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(LABEL_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.payload(count)?.iter().map(|&l| usize::from(l)).collect())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Vector>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, path)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    #[test]
    fn scales_pixels() {
        let mut bytes = header(IMAGE_MAGIC, &[1, 2, 2]);
        bytes.extend_from_slice(&[0, 255, 0, 255]);
        let images = parse_idx_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!(images, vec![vec![0.0, 1.0, 0.0, 1.0]]);
    }

    #[test]
    fn reads_labels() {
        let mut bytes = header(LABEL_MAGIC, &[3]);
        bytes.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&bytes, Path::new("mem")).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let bytes = header(LABEL_MAGIC, &[1, 2, 2]);
        let err = parse_idx_images(&bytes, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        let bytes = header(IMAGE_MAGIC, &[1]);
        assert!(parse_idx_labels(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn truncation_reports_offset() {
        let mut bytes = header(IMAGE_MAGIC, &[2, 2, 2]);
        bytes.extend_from_slice(&[1, 2, 3]);
        match parse_idx_images(&bytes, Path::new("mem")).unwrap_err() {
            Error::Format { offset, message, .. } => {
                assert_eq!(offset, 19);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other}"),
        }
        let short_header = &IMAGE_MAGIC.to_be_bytes()[..];
        assert!(parse_idx_images(short_header, Path::new("mem")).is_err());
    }
}
