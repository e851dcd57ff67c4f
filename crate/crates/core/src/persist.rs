//! NRM1 weight files.
//!
//! Layout (little-endian): magic `NRM1`, `u32` width count `L`, `L` `u32`
//! widths, `u8` activation code (0 LeakyReLU, 1 ReLU, 2 TanH), `f32` leak slope,
//! then for each of the `L - 1` layers the weight matrix row-major (fan-in
//! major) followed by its bias vector, all `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpParams, MlpSpec};

pub const NRM1_MAGIC: &[u8; 4] = b"NRM1";

pub fn encode_nrm1(params: &MlpParams) -> Vec<u8> {
    let spec = params.spec();
    let mut out = Vec::with_capacity(13 + 4 * spec.widths().len() + 4 * spec.num_params());
    out.extend_from_slice(NRM1_MAGIC);
    out.extend_from_slice(&(spec.widths().len() as u32).to_le_bytes());
    for &w in spec.widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(spec.activation().code());
    out.extend_from_slice(&spec.activation().leak_slope().to_le_bytes());
    for v in params.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::MalformedFile {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_nrm1(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != NRM1_MAGIC {
        return Err(Error::MalformedFile {
            offset: 0,
            reason: format!("bad magic {magic:?}"),
        });
    }
    let count = r.u32("layer count")? as usize;
    if count < 2 || count > 1 << 16 {
        return Err(Error::MalformedFile {
            offset: 4,
            reason: format!("implausible layer count {count}"),
        });
    }
    let mut widths = Vec::with_capacity(count);
    for _ in 0..count {
        widths.push(r.u32("layer width")? as usize);
    }
    let code_offset = r.pos;
    let code = r.take(1, "activation code")?[0];
    let slope = r.f32("leak slope")?;
    let activation = Activation::from_code(code, slope).ok_or_else(|| Error::MalformedFile {
        offset: code_offset as u64,
        reason: format!("unknown activation code {code}"),
    })?;
    let spec = MlpSpec::new(widths, activation).map_err(|e| Error::MalformedFile {
        offset: 8,
        reason: e.to_string(),
    })?;
    let mut weights = Vec::with_capacity(spec.num_layers());
    let mut biases = Vec::with_capacity(spec.num_layers());
    for i in 0..spec.num_layers() {
        let (fan_in, fan_out) = (spec.widths()[i], spec.widths()[i + 1]);
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(r.f32("weights")?);
        }
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(r.f32("biases")?);
        }
        weights.push(Array2::from_shape_vec((fan_in, fan_out), w).expect("sized"));
        biases.push(Array1::from_vec(b));
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedFile {
            offset: r.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    MlpParams::from_parts(spec, weights, biases)
}

pub fn save_nrm1(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_nrm1(params))?;
    Ok(())
}

pub fn load_nrm1(path: impl AsRef<Path>) -> Result<MlpParams> {
    decode_nrm1(&fs::read(path)?)
}
