//! STSC checkpoints, little-endian:
//!
//! ```text
//! "STSC" u32 version=1 u64 json_len  json{sae, train}
//! f32 b_pre[D] W_e[H*D] row-major b_e[H] W_d[D*H] row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::features::format::Reader;
use crate::features::write_atomic;
use crate::sae::{SaeConfig, SaeParams};

pub const STSC_MAGIC: [u8; 4] = *b"STSC";
const VERSION: u32 = 1;
const FIXED_HEADER: u64 = 16;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    sae: SaeConfig,
    train: TrainConfig,
}

pub fn checkpoint_to_bytes(params: &SaeParams, cfg: &TrainConfig) -> Result<Vec<u8>> {
    params.validate()?;
    let header = Header {
        sae: params.config.clone(),
        train: cfg.clone(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidConfig(format!("cannot serialise config: {e}")))?;
    let n_floats = params.n_params();
    let mut out = Vec::with_capacity(FIXED_HEADER as usize + json.len() + 4 * n_floats);
    out.extend_from_slice(&STSC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let w_dec = params.w_dec_row_major();
    for block in [&params.b_pre, &params.w_enc, &params.b_enc, &w_dec] {
        for (i, v) in block.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(SaeParams, TrainConfig)> {
    let mut r = Reader::new(bytes, "STSC");
    r.need(FIXED_HEADER)?;
    let magic = r.array4();
    if magic != STSC_MAGIC {
        return Err(Error::BadMagic {
            expected: STSC_MAGIC,
            found: magic,
        });
    }
    let version = r.u32();
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            format: "STSC",
            version,
        });
    }
    let json_len = r.u64();
    r.need(FIXED_HEADER.saturating_add(json_len))?;
    let header: Header = serde_json::from_slice(r.take(json_len as usize))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    header.sae.validate()?;
    header.train.validate()?;
    let (d, h) = (header.sae.d_in as u64, header.sae.n_latents as u64);
    let n_floats = d + 2 * h * d + h;
    r.exact_total(FIXED_HEADER + json_len + 4 * n_floats)?;

    let mut params = SaeParams::zeros(header.sae);
    params.b_pre = r.f32s(d as usize)?;
    params.w_enc = r.f32s((h * d) as usize)?;
    params.b_enc = r.f32s(h as usize)?;
    let w_dec = r.f32s((h * d) as usize)?;
    params.set_w_dec_row_major(&w_dec);
    Ok((params, header.train))
}

pub fn save_checkpoint(params: &SaeParams, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_to_bytes(params, cfg)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SaeParams, TrainConfig)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
