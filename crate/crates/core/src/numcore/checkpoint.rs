//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "MLPC"
//! version      u32      1
//! n_widths     u32
//! widths       u32 x n_widths
//! hidden_act   u8       0 = identity, 1 = relu, 2 = tanh
//! output_act   u8
//! bias         u8       0 or 1
//! n_values     u64
//! values       f64 x n_values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{Activation, MlpParams, MlpSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLPC";
const VERSION: u32 = 1;

pub fn encode(params: &MlpParams) -> Vec<u8> {
    let spec = &params.spec;
    let mut out = Vec::with_capacity(32 + 8 * params.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.layer_widths.len() as u32).to_le_bytes());
    for &w in &spec.layer_widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(spec.hidden_activation.code());
    out.push(spec.output_activation.code());
    out.push(params.bias_enabled as u8);
    out.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MlpParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_widths = c.u32()? as usize;
    if n_widths > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_widths}")));
    }
    let widths = (0..n_widths)
        .map(|_| c.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let act = |code: u8| {
        Activation::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {code}")))
    };
    let hidden = act(c.u8()?)?;
    let output = act(c.u8()?)?;
    let bias = match c.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("bad bias flag {b}"))),
    };
    let n_values = c.u64()? as usize;
    let raw = c.take(n_values.checked_mul(8).ok_or_else(|| {
        Error::Checkpoint("value count overflow".into())
    })?)?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let spec = MlpSpec::new(widths, hidden, output)?;
    MlpParams::from_values(spec, bias, values)
}

pub fn save(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
