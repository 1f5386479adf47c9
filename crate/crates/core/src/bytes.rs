//! Little-endian helpers shared by the binary file formats.
//!
//! Readers track their byte offset so malformed input can be reported at
//! the position where decoding failed.

use crate::error::{Error, Result};

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    pub fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(self.error(format!(
                "truncated {what}: need {len} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::Format {
                offset: start,
                message: format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Reads a `u16` length prefix followed by that many UTF-8 bytes.
    pub fn short_string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: start,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    /// Reads a `u16` count followed by that many `u32` label ids.
    pub fn label_list(&mut self, what: &str) -> Result<Vec<u32>> {
        let count = self.u16(what)? as usize;
        (0..count).map(|_| self.u32(what)).collect()
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_short_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidArgument(format!("id longer than 65535 bytes: {s:.32}...")))?;
    put_u16(out, len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn put_label_list(out: &mut Vec<u8>, labels: &[u32]) -> Result<()> {
    let count = u16::try_from(labels.len())
        .map_err(|_| Error::InvalidArgument("more than 65535 labels on one item".into()))?;
    put_u16(out, count);
    for &l in labels {
        put_u32(out, l);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_read_reports_offset() {
        let data = [b'P', b'H', b'D', b'S', 1, 0];
        let mut r = ByteReader::new(&data);
        r.expect_magic(b"PHDS").unwrap();
        match r.u32("count") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_points_at_start() {
        let mut r = ByteReader::new(b"XXXX");
        match r.expect_magic(b"PHCB") {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("bad magic"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn string_and_labels_round_trip() {
        let mut out = Vec::new();
        put_short_string(&mut out, "item-7").unwrap();
        put_label_list(&mut out, &[3, 9]).unwrap();
        let mut r = ByteReader::new(&out);
        assert_eq!(r.short_string("id").unwrap(), "item-7");
        assert_eq!(r.label_list("labels").unwrap(), vec![3, 9]);
        r.finish().unwrap();
    }
}
