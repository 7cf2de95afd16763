//! Binary persistence of subsample summaries.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header   "SBAG" | version u16 | family u8 | p u32 | k u64 | m u32 | master_seed u64
//! record   subsample_id u32 | seed u64 | loss_at_opt f64
//!          | beta_tilde p x f64 | hessian upper triangle, row-major, p(p+1)/2 x f64
//! trailer  CRC-32 (IEEE) of every preceding byte, u32
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::subsample::SubsampleSummary;

pub const MAGIC: &[u8; 4] = b"SBAG";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryFile {
    pub family: Family,
    pub p: usize,
    pub k: usize,
    pub master_seed: u64,
    pub summaries: Vec<SubsampleSummary>,
}

fn record_len(p: usize) -> usize {
    4 + 8 + 8 + 8 * p + 8 * p * (p + 1) / 2
}

impl SummaryFile {
    pub fn new(family: Family, master_seed: u64, summaries: Vec<SubsampleSummary>) -> Result<Self> {
        let first = summaries
            .first()
            .ok_or_else(|| Error::config("no summaries to persist"))?;
        let (p, k) = (first.p(), first.k);
        if summaries.iter().any(|s| s.p() != p || s.k != k) {
            return Err(Error::config(
                "summaries differ in dimension or subsample size",
            ));
        }
        Ok(Self {
            family,
            p,
            k,
            master_seed,
            summaries,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let p = self.p;
        let m = u32::try_from(self.summaries.len())
            .map_err(|_| Error::config("too many summaries for one file"))?;
        let p32 = u32::try_from(p).map_err(|_| Error::config("dimension too large"))?;
        let mut buf = Vec::with_capacity(HEADER_LEN + self.summaries.len() * record_len(p) + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.family.tag());
        buf.extend_from_slice(&p32.to_le_bytes());
        buf.extend_from_slice(&(self.k as u64).to_le_bytes());
        buf.extend_from_slice(&m.to_le_bytes());
        buf.extend_from_slice(&self.master_seed.to_le_bytes());
        for s in &self.summaries {
            if s.p() != p || s.hessian.shape() != (p, p) || s.k != self.k {
                return Err(Error::config("summary does not match the file header"));
            }
            buf.extend_from_slice(&s.subsample_id.to_le_bytes());
            buf.extend_from_slice(&s.seed.to_le_bytes());
            buf.extend_from_slice(&s.loss_at_opt.to_le_bytes());
            for v in s.beta_tilde.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for i in 0..p {
                for j in i..p {
                    buf.extend_from_slice(&s.hessian[(i, j)].to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::SummaryFormat(msg.to_string());
        if bytes.len() < HEADER_LEN + 4 {
            return Err(bad("file too short"));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(bad("CRC mismatch"));
        }
        let mut r = Cursor {
            buf: payload,
            pos: 0,
        };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::SummaryFormat(format!(
                "unsupported version {version}"
            )));
        }
        let family = Family::from_tag(r.u8()?).ok_or_else(|| bad("unknown family tag"))?;
        let p = r.u32()? as usize;
        let k = r.u64()? as usize;
        let m = r.u32()? as usize;
        let master_seed = r.u64()?;
        if p == 0 {
            return Err(bad("zero dimension"));
        }
        let expected = HEADER_LEN
            .checked_add(
                m.checked_mul(record_len(p))
                    .ok_or_else(|| bad("size overflow"))?,
            )
            .ok_or_else(|| bad("size overflow"))?;
        if payload.len() != expected {
            return Err(Error::SummaryFormat(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let mut summaries = Vec::with_capacity(m);
        for _ in 0..m {
            let subsample_id = r.u32()?;
            let seed = r.u64()?;
            let loss_at_opt = r.f64()?;
            let mut beta = Vec::with_capacity(p);
            for _ in 0..p {
                beta.push(r.f64()?);
            }
            let mut hessian = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in i..p {
                    let v = r.f64()?;
                    hessian[(i, j)] = v;
                    hessian[(j, i)] = v;
                }
            }
            summaries.push(SubsampleSummary {
                k,
                beta_tilde: DVector::from_vec(beta),
                hessian,
                loss_at_opt,
                subsample_id,
                seed,
            });
        }
        Ok(Self {
            family,
            p,
            k,
            master_seed,
            summaries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let out = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::SummaryFormat("unexpected end of file".into()))?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
