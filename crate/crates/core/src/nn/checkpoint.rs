//! Binary checkpoint format for a single [`Mlp`].
//!
//! Layout, all integers little-endian:
//! `b"IGMLP\0"` magic, `u16` version, `u8` activation tag, `u32` layer count,
//! one `u32` per layer size, then every parameter as an `f64`.

use std::fs;
use std::path::Path;

use super::{Activation, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"IGMLP\0";
pub const VERSION: u16 = 1;

pub fn to_bytes(net: &Mlp) -> Vec<u8> {
    let sizes = net.layer_sizes();
    let mut out = Vec::with_capacity(13 + 4 * sizes.len() + 8 * net.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(net.activation().tag());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let tag = r.take(1)?[0];
    let activation = Activation::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
    let n_layers = r.u32()? as usize;
    if n_layers < 2 || n_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let sizes = (0..n_layers).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let n_params = Mlp::param_count(&sizes);
    if bytes.len() - r.pos != n_params * 8 {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            n_params * 8,
            bytes.len() - r.pos
        )));
    }
    let params = r
        .take(n_params * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Mlp::from_params(&sizes, activation, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    if !net.is_finite() {
        return Err(Error::NonFinite(format!("refusing to checkpoint {}", path.as_ref().display())));
    }
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Mlp> {
    from_bytes(&fs::read(path)?)
}

/// Loads `path`, re-serializes it and checks the bytes are unchanged.
pub fn roundtrip(path: impl AsRef<Path>) -> Result<Mlp> {
    let bytes = fs::read(path.as_ref())?;
    let net = from_bytes(&bytes)?;
    if to_bytes(&net) != bytes {
        return Err(Error::Format(format!("{} does not re-serialize identically", path.as_ref().display())));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn bytes_roundtrip() {
        let net = Mlp::random(&[20, 64, 64, 2], Activation::Tanh, &mut seeded(9)).unwrap();
        let bytes = to_bytes(&net);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncated_and_corrupt_inputs_are_rejected() {
        let net = Mlp::random(&[3, 4, 1], Activation::Relu, &mut seeded(1)).unwrap();
        let bytes = to_bytes(&net);
        for cut in [0, 5, 12, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_nets_are_not_saved() {
        let mut net = Mlp::zeros(&[2, 1], Activation::Tanh).unwrap();
        net.params_mut()[0] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        assert!(save(&net, dir.path().join("x.ckpt")).is_err());
    }
}
