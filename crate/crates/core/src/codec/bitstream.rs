//! Container format.
//!
//! ```text
//! "GSLS" | version u8 | width u16 | height u16 | lambda index u8
//!        | rho_f index u8 | rho_h index u8
//!        | side length u32 | side payload | main length u32 | main payload
//! ```
//! Multi-byte fields are little-endian.

use crate::error::{Error, Result};

pub const STREAM_MAGIC: &[u8; 4] = b"GSLS";
/// Bumped whenever the step table or payload layout changes.
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 2 + 2 + 1 + 1 + 1 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub width: u16,
    pub height: u16,
    pub lambda_index: u8,
    pub rho_f: u8,
    pub rho_h: u8,
    pub side: Vec<u8>,
    pub main: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(STREAM_MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.lambda_index);
        out.push(self.rho_f);
        out.push(self.rho_h);
        out.extend_from_slice(&(self.side.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.side);
        out.extend_from_slice(&(self.main.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.main);
        out
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + self.side.len() + self.main.len()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != STREAM_MAGIC {
            return Err(Error::Format("bad stream magic".into()));
        }
        let version = r.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported stream version {version}")));
        }
        let width = r.u16()?;
        let height = r.u16()?;
        let head = r.take(3)?;
        let (lambda_index, rho_f, rho_h) = (head[0], head[1], head[2]);
        let side_len = r.u32()? as usize;
        let side = r.take(side_len)?.to_vec();
        let main_len = r.u32()? as usize;
        let main = r.take(main_len)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} bytes after main payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Bitstream {
            width,
            height,
            lambda_index,
            rho_f,
            rho_h,
            side,
            main,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!("need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            width: 64,
            height: 32,
            lambda_index: 2,
            rho_f: 3,
            rho_h: 7,
            side: vec![1, 2, 3],
            main: vec![9; 10],
        }
    }

    #[test]
    fn layout_is_exact() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"GSLS");
        assert_eq!(b[4], FORMAT_VERSION);
        assert_eq!(&b[5..7], &[64, 0]);
        assert_eq!(&b[7..9], &[32, 0]);
        assert_eq!(&b[9..12], &[2, 3, 7]);
        assert_eq!(&b[12..16], &[3, 0, 0, 0]);
        assert_eq!(&b[16..19], &[1, 2, 3]);
        assert_eq!(&b[19..23], &[10, 0, 0, 0]);
        assert_eq!(b.len(), HEADER_BYTES + 13);
        assert_eq!(Bitstream::from_bytes(&b).unwrap(), sample());
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let b = sample().to_bytes();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(Bitstream::from_bytes(&b[..b.len() - 1]), Err(Error::Truncated(_))));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(Bitstream::from_bytes(&long), Err(Error::Format(_))));
    }
}
