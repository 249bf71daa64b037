use std::path::Path;

use super::{dim_u32, read_file, write_file, Reader};
use crate::activation::ActivationImage;
use crate::error::{Error, Result};

pub const AHUE_MAGIC: [u8; 4] = *b"AHUE";
pub const AHUE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 21;

/// Header: magic, u32 version, u32 N, u32 W, u32 H, u8 post_relu; then
/// W·H·N f32 values in (row, col, channel) order.
pub fn encode_ahue(img: &ActivationImage) -> Result<Vec<u8>> {
    if img.channels() == 0 || img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidDims(format!(
            "{}x{}x{}",
            img.width(),
            img.height(),
            img.channels()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN as usize + img.data().len() * 4);
    out.extend_from_slice(&AHUE_MAGIC);
    out.extend_from_slice(&AHUE_VERSION.to_le_bytes());
    for (what, v) in [("N", img.channels()), ("W", img.width()), ("H", img.height())] {
        out.extend_from_slice(&dim_u32(what, v)?.to_le_bytes());
    }
    out.push(img.post_relu() as u8);
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_ahue(bytes: &[u8]) -> Result<ActivationImage> {
    let mut r = Reader::new(bytes);
    r.magic(AHUE_MAGIC)?;
    let version_at = r.offset();
    let version = r.u32()?;
    if version != AHUE_VERSION {
        return Err(Error::BadVersion {
            offset: version_at,
            found: version,
        });
    }
    let n = r.u32()? as usize;
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    if n == 0 || w == 0 || h == 0 {
        return Err(Error::InvalidDims(format!("{w}x{h}x{n} at byte offset 8")));
    }
    let flag = r.u8()?;
    let post_relu = match flag {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Corrupt {
                offset: HEADER_LEN - 1,
                reason: format!("post_relu flag {other} is neither 0 nor 1"),
            })
        }
    };
    let count = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(n))
        .ok_or_else(|| Error::InvalidDims(format!("{w}x{h}x{n} overflows")))?;
    let data = r.f32s(count)?;
    r.finish()?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Corrupt {
            offset: HEADER_LEN + 4 * i as u64,
            reason: format!("non-finite value {}", data[i]),
        });
    }
    if post_relu {
        if let Some(i) = data.iter().position(|&v| v < 0.0) {
            return Err(Error::Corrupt {
                offset: HEADER_LEN + 4 * i as u64,
                reason: format!("negative value {} in a post-ReLU tensor", data[i]),
            });
        }
    }
    ActivationImage::new(w, h, n, data, post_relu)
}

pub fn read_ahue(path: impl AsRef<Path>) -> Result<ActivationImage> {
    decode_ahue(&read_file(path.as_ref())?)
}

pub fn write_ahue(img: &ActivationImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ahue(img)?;
    write_file(path.as_ref(), &bytes)
}
