//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `GSC1`, `u32` record count, then per record
//! a kind byte, `u32` stride, `u32` padding, the weight shape (`u32` rank
//! followed by `u32` extents), the bias shape in the same form, and finally
//! the raw `f64` weights followed by the raw `f64` biases.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::layers::{LayerKind, LayerParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GSC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Conv = 0,
    TransposedConv = 1,
    Activation = 2,
    /// Factorized density parameters: weights hold locations, bias log-scales.
    Density = 3,
    /// Free scalars such as the rate-distortion trade-off.
    Scalars = 4,
}

impl RecordKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => RecordKind::Conv,
            1 => RecordKind::TransposedConv,
            2 => RecordKind::Activation,
            3 => RecordKind::Density,
            4 => RecordKind::Scalars,
            other => return Err(Error::Format(format!("unknown record kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: RecordKind,
    pub stride: u32,
    pub padding: u32,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Record {
    pub fn from_layer(l: &LayerParams) -> Self {
        let kind = match l.kind {
            LayerKind::Conv => RecordKind::Conv,
            LayerKind::TransposedConv => RecordKind::TransposedConv,
            LayerKind::Activation => RecordKind::Activation,
        };
        Record {
            kind,
            stride: l.stride as u32,
            padding: l.padding as u32,
            weights: l.weights.clone(),
            bias: l.bias.clone(),
        }
    }

    pub fn to_layer(&self) -> Result<LayerParams> {
        match self.kind {
            RecordKind::Conv => LayerParams::conv(
                self.weights.clone(),
                self.bias.clone(),
                self.stride as usize,
                self.padding as usize,
            ),
            RecordKind::TransposedConv => LayerParams::transposed(
                self.weights.clone(),
                self.bias.clone(),
                self.stride as usize,
                self.padding as usize,
            ),
            RecordKind::Activation => Ok(LayerParams::activation()),
            other => Err(Error::Format(format!("record {other:?} is not a layer"))),
        }
    }
}

fn write_shape<W: Write>(w: &mut W, shape: &[usize]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write<W: Write>(w: &mut W, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        w.write_all(&[r.kind as u8])?;
        w.write_all(&r.stride.to_le_bytes())?;
        w.write_all(&r.padding.to_le_bytes())?;
        write_shape(w, r.weights.shape())?;
        write_shape(w, r.bias.shape())?;
        for v in r.weights.data().iter().chain(r.bias.data()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated("checkpoint ended early".into())
    } else {
        Error::Io(e)
    }
}

fn read_shape<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect()
}

fn read_values<R: Read>(r: &mut R, shape: Vec<usize>) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n > 1 << 28 {
        return Err(Error::Format(format!("tensor of {n} elements too large")));
    }
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(truncated)?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(shape, data)
}

pub fn read<R: Read>(r: &mut R) -> Result<Vec<Record>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let count = read_u32(r)?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind).map_err(truncated)?;
        let kind = RecordKind::from_byte(kind[0])?;
        let stride = read_u32(r)?;
        let padding = read_u32(r)?;
        let ws = read_shape(r)?;
        let bs = read_shape(r)?;
        let weights = read_values(r, ws)?;
        let bias = read_values(r, bs)?;
        out.push(Record {
            kind,
            stride,
            padding,
            weights,
            bias,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let records = vec![
            Record {
                kind: RecordKind::Conv,
                stride: 2,
                padding: 1,
                weights: Tensor::from_fn(&[2, 3, 3, 1], |i| (i as f64).sin() * 1e-300),
                bias: Tensor::new(vec![2], vec![-0.0, f64::MIN_POSITIVE]).unwrap(),
            },
            Record::from_layer(&LayerParams::activation()),
            Record {
                kind: RecordKind::Scalars,
                stride: 1,
                padding: 0,
                weights: Tensor::new(vec![1], vec![0.0125]).unwrap(),
                bias: Tensor::empty(),
            },
        ];
        let mut buf = Vec::new();
        write(&mut buf, &records).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in records.iter().zip(&back) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
            assert_eq!(bits(&a.bias), bits(&b.bias));
            assert_eq!(a.kind, b.kind);
        }
        let mut again = Vec::new();
        write(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read(&mut &b"GSC2\0\0\0\0"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write(
            &mut buf,
            &[Record::from_layer(
                &LayerParams::conv(Tensor::zeros(&[1, 1, 1, 1]), Tensor::zeros(&[1]), 1, 0).unwrap(),
            )],
        )
        .unwrap();
        buf.pop();
        assert!(matches!(read(&mut buf.as_slice()), Err(Error::Truncated(_))));
    }
}
