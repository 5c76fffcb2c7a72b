//! Versioned, integrity-digested checkpoint files.
//!
//! Layout (all integers little-endian, parameters as IEEE-754 f64 bit
//! patterns, little-endian):
//!
//! ```text
//! magic  b"BTCK" | version u32 | repr u8 | extra u8 | n_states u32
//! obs_dim u32 | hidden u32 | feature u32 | n_actions u32
//! phase u8 | steps u64 | seed u64
//! enc_len u64 | enc_len * f64 | head_len u64 | head_len * f64
//! sha256 of everything above (32 bytes)
//! ```

use super::config::Phase;
use crate::error::{Error, Result};
use crate::learner::{QArch, QFunction, ReprMode};
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BTCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub qf: QFunction<f64>,
    pub phase: Phase,
    pub steps: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.qf.arch();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(match arch.repr_mode {
            ReprMode::Tabular => 0u8,
            ReprMode::EncoderHead => 1u8,
        });
        out.push(arch.has_extra_action as u8);
        out.extend_from_slice(&(arch.n_states as u32).to_le_bytes());
        out.extend_from_slice(&(arch.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(arch.hidden_dim as u32).to_le_bytes());
        out.extend_from_slice(&(arch.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(arch.n_actions_base as u32).to_le_bytes());
        out.push(self.phase.as_u8());
        out.extend_from_slice(&self.steps.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let push_params = |out: &mut Vec<u8>, params: &[f64]| {
            out.extend_from_slice(&(params.len() as u64).to_le_bytes());
            for p in params {
                out.extend_from_slice(&p.to_bits().to_le_bytes());
            }
        };
        push_params(&mut out, &self.qf.encoder_params());
        push_params(&mut out, &self.qf.head_params());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 32 {
            return Err(Error::Integrity("checkpoint file truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let expect = Sha256::digest(body);
        if digest != expect.as_slice() {
            return Err(Error::Integrity("checkpoint digest mismatch".into()));
        }
        let mut cur = Cursor { body, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Integrity("bad checkpoint magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint format version {version}"
            )));
        }
        let repr_mode = match cur.u8()? {
            0 => ReprMode::Tabular,
            1 => ReprMode::EncoderHead,
            x => return Err(Error::Integrity(format!("bad repr tag {x}"))),
        };
        let has_extra_action = cur.u8()? != 0;
        let n_states = cur.u32()? as usize;
        let obs_dim = cur.u32()? as usize;
        let hidden_dim = cur.u32()? as usize;
        let feature_dim = cur.u32()? as usize;
        let n_actions_base = cur.u32()? as usize;
        let phase = Phase::from_u8(cur.u8()?)?;
        let steps = cur.u64()?;
        let seed = cur.u64()?;
        let encoder = cur.f64_vec()?;
        let head = cur.f64_vec()?;
        if cur.pos != body.len() {
            return Err(Error::Integrity("trailing bytes in checkpoint".into()));
        }
        let arch = QArch {
            repr_mode,
            n_states,
            obs_dim,
            hidden_dim,
            feature_dim,
            n_actions_base,
            has_extra_action,
        };
        let qf = QFunction::from_parts(&arch, &encoder, &head)?;
        Ok(Checkpoint {
            qf,
            phase,
            steps,
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.body.len() {
            return Err(Error::Integrity("checkpoint file truncated".into()));
        }
        let out = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let bits = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
            out.push(f64::from_bits(bits));
        }
        Ok(out)
    }
}
