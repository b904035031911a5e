//! Carry-less range coder over 16-bit integer frequency tables.
//!
//! Registers are 64 bits wide. Renormalisation emits the top byte once it
//! is settled; when the range gets small while the top byte is still
//! undecided the range is cut at the next 2^48 boundary instead of
//! propagating a carry. The flush emits the shortest prefix that pins the
//! final interval; the decoder reads missing trailing bytes as zero.

use std::borrow::Borrow;

use crate::entropy::{DiscretePmf, PMF_PRECISION_BITS};
use crate::error::{Error, Result};

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;
/// Implicit zero bytes the decoder may read past the end of a payload.
const MAX_PADDING: usize = 8;

fn shift_range(low: u64, range: u64) -> u64 {
    if range > (u64::MAX >> 8) {
        u64::MAX - low
    } else {
        range << 8
    }
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for EncoderState {
    fn default() -> Self {
        Self::new()
    }
}

impl EncoderState {
    pub fn new() -> Self {
        EncoderState {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    fn push(&mut self, cum: u32, freq: u32) {
        let r = self.range >> PMF_PRECISION_BITS;
        self.low += cum as u64 * r;
        self.range = freq as u64 * r;
        loop {
            if (self.low ^ (self.low + (self.range - 1))) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = BOT - (self.low & (BOT - 1));
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range = shift_range(self.low, self.range);
        }
    }

    pub fn encode(&mut self, symbol: i64, pmf: &DiscretePmf) -> Result<()> {
        match pmf.index_of(symbol) {
            Some(i) => {
                let cum: u32 = pmf.freqs[..i].iter().sum();
                self.push(cum, pmf.freqs[i]);
            }
            None => {
                let esc = pmf.escape_index();
                let cum: u32 = pmf.freqs[..esc].iter().sum();
                self.push(cum, pmf.freqs[esc]);
                let raw = i16::try_from(symbol).map_err(|_| {
                    Error::Coder(format!("symbol {symbol} exceeds the 16-bit escape range"))
                })?;
                self.push(raw as u16 as u32, 1);
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        let last = self.low as u128 + self.range as u128 - 1;
        for k in 0..=8u32 {
            let unit: u128 = 1 << (64 - 8 * k);
            let v = (self.low as u128).div_ceil(unit) * unit;
            if v <= last {
                for i in 0..k {
                    self.out.push((v >> (56 - 8 * i)) as u8);
                }
                break;
            }
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct DecoderState<'a> {
    low: u64,
    range: u64,
    code: u64,
    input: &'a [u8],
    pos: usize,
    padding: usize,
}

impl<'a> DecoderState<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        let mut d = DecoderState {
            low: 0,
            range: u64::MAX,
            code: 0,
            input,
            pos: 0,
            padding: 0,
        };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte()? as u64;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if let Some(&b) = self.input.get(self.pos) {
            self.pos += 1;
            Ok(b)
        } else {
            self.padding += 1;
            if self.padding > MAX_PADDING {
                return Err(Error::Truncated("range coder payload exhausted".into()));
            }
            Ok(0)
        }
    }

    fn target(&self) -> Result<u32> {
        let r = self.range >> PMF_PRECISION_BITS;
        let v = self.code.wrapping_sub(self.low) / r;
        if self.code < self.low || v >= 1 << PMF_PRECISION_BITS {
            return Err(Error::Coder("corrupt payload: code outside interval".into()));
        }
        Ok(v as u32)
    }

    fn pop(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> PMF_PRECISION_BITS;
        self.low += cum as u64 * r;
        self.range = freq as u64 * r;
        loop {
            if (self.low ^ (self.low + (self.range - 1))) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = BOT - (self.low & (BOT - 1));
            }
            self.code = (self.code << 8) | self.next_byte()? as u64;
            self.low <<= 8;
            self.range = shift_range(self.low, self.range);
        }
        Ok(())
    }

    pub fn decode(&mut self, pmf: &DiscretePmf) -> Result<i64> {
        let t = self.target()?;
        let mut cum = 0u32;
        for (i, &f) in pmf.freqs.iter().enumerate() {
            if t < cum + f {
                self.pop(cum, f)?;
                if i == pmf.escape_index() {
                    let raw = self.target()?;
                    self.pop(raw, 1)?;
                    return Ok(raw as u16 as i16 as i64);
                }
                return Ok(pmf.lo + i as i64);
            }
            cum += f;
        }
        Err(Error::Coder("corrupt payload: target beyond table".into()))
    }

    /// Payload bytes consumed so far.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

pub fn encode_symbols<P: Borrow<DiscretePmf>>(symbols: &[i64], pmfs: &[P]) -> Result<Vec<u8>> {
    if symbols.len() != pmfs.len() {
        return Err(Error::Coder(format!(
            "{} symbols but {} tables",
            symbols.len(),
            pmfs.len()
        )));
    }
    let mut enc = EncoderState::new();
    for (&s, pmf) in symbols.iter().zip(pmfs) {
        let pmf = pmf.borrow();
        pmf.validate()?;
        enc.encode(s, pmf)?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols<P: Borrow<DiscretePmf>>(bytes: &[u8], pmfs: &[P]) -> Result<Vec<i64>> {
    let mut dec = DecoderState::new(bytes)?;
    let mut out = Vec::with_capacity(pmfs.len());
    for pmf in pmfs {
        let pmf = pmf.borrow();
        pmf.validate()?;
        out.push(dec.decode(pmf)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{discretize, ScalarDensity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ideal_bits(symbols: &[i64], pmfs: &[DiscretePmf]) -> f64 {
        symbols.iter().zip(pmfs).map(|(&s, p)| p.cost_bits(s)).sum()
    }

    #[test]
    fn empty_message_is_tiny() {
        let bytes = encode_symbols::<DiscretePmf>(&[], &[]).unwrap();
        assert!(bytes.len() <= 8);
        assert!(decode_symbols::<DiscretePmf>(&bytes, &[]).unwrap().is_empty());
    }

    #[test]
    fn near_certain_symbol_costs_nothing() {
        let pmf = DiscretePmf { lo: 0, freqs: vec![65535, 1] };
        let symbols = vec![0; 1000];
        let pmfs = vec![pmf; 1000];
        let bytes = encode_symbols(&symbols, &pmfs).unwrap();
        assert!(bytes.len() <= 2, "{} bytes", bytes.len());
        assert_eq!(decode_symbols(&bytes, &pmfs).unwrap(), symbols);
    }

    #[test]
    fn iid_stream_close_to_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pmf = discretize(&ScalarDensity::Gaussian { mean: 0.2, scale: 2.5 }).unwrap();
        let cum: Vec<u32> = pmf.freqs.iter().scan(0, |c, &f| { *c += f; Some(*c) }).collect();
        let symbols: Vec<i64> = (0..10_000)
            .map(|_| {
                let t = rng.gen_range(0..65536u32);
                let i = cum.iter().position(|&c| t < c).unwrap();
                if i == pmf.escape_index() { 0 } else { pmf.lo + i as i64 }
            })
            .collect();
        let pmfs = vec![pmf; symbols.len()];
        let bytes = encode_symbols(&symbols, &pmfs).unwrap();
        let bound = ideal_bits(&symbols, &pmfs) / 8.0;
        assert!((bytes.len() as f64) <= bound * 1.002 + 8.0, "{} vs {bound}", bytes.len());
        assert_eq!(decode_symbols(&bytes, &pmfs).unwrap(), symbols);
    }

    #[test]
    fn escaped_symbols_roundtrip() {
        let pmf = discretize(&ScalarDensity::Gaussian { mean: 0.0, scale: 0.5 }).unwrap();
        let symbols = vec![0, 1, -300, 32767, -32768, 2, 9, -7];
        let pmfs = vec![pmf.clone(); symbols.len()];
        let bytes = encode_symbols(&symbols, &pmfs).unwrap();
        assert_eq!(decode_symbols(&bytes, &pmfs).unwrap(), symbols);
        assert!(encode_symbols(&[40_000], &[pmf]).is_err());
    }

    #[test]
    fn mismatched_tables_change_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let symbols: Vec<i64> = (0..200).map(|_| rng.gen_range(-2..3)).collect();
        let enc: Vec<_> = (0..200).map(|_| discretize(&ScalarDensity::Gaussian { mean: 0.0, scale: 1.0 }).unwrap()).collect();
        let dec: Vec<_> = (0..200).map(|_| discretize(&ScalarDensity::Gaussian { mean: 1.0, scale: 1.0 }).unwrap()).collect();
        let bytes = encode_symbols(&symbols, &enc).unwrap();
        match decode_symbols(&bytes, &dec) {
            Ok(out) => assert_ne!(out, symbols),
            Err(_) => {}
        }
    }

    #[test]
    fn invalid_table_rejected() {
        let bad = DiscretePmf { lo: 0, freqs: vec![100, 1] };
        assert!(matches!(encode_symbols(&[0], &[bad]), Err(Error::Coder(_))));
    }

    #[test]
    fn truncation_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pmf = discretize(&ScalarDensity::Gaussian { mean: 0.0, scale: 4.0 }).unwrap();
        let symbols: Vec<i64> = (0..500).map(|_| rng.gen_range(-6..7)).collect();
        let pmfs = vec![pmf; 500];
        let bytes = encode_symbols(&symbols, &pmfs).unwrap();
        assert!(decode_symbols(&bytes[..bytes.len() / 2], &pmfs).is_err());
    }
}
