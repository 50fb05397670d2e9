//! Wire format of one measurement:
//!
//! ```text
//! "MCLP" | version u8 | K u8 | K × dim u16 | dtype u8 | sample_id u64 |
//! payload_len u32 | payload (f32, row-major) | crc32 u32
//! ```
//!
//! Integers are little-endian; the crc covers every preceding byte.

use mcl_core::Tensor;

use crate::error::{Result, SimError};

pub const MAGIC: [u8; 4] = *b"MCLP";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_RANK: usize = 8;

/// Bytes before the dims: magic, version, K.
const PREFIX: usize = 6;
/// Bytes between the dims and the payload: dtype, sample id, payload length.
const MIDDLE: usize = 1 + 8 + 4;
const CRC: usize = 4;

pub fn header_bytes(rank: usize) -> usize {
    PREFIX + 2 * rank + MIDDLE
}

/// Total encoded size of a packet carrying a sub-tensor of `dims`.
pub fn packet_bytes(dims: &[usize]) -> usize {
    header_bytes(dims.len()) + 4 * dims.iter().product::<usize>() + CRC
}

pub fn encode_packet(z_bar: &Tensor, sample_id: u64) -> Result<Vec<u8>> {
    let dims = z_bar.shape();
    if dims.len() > MAX_RANK {
        return Err(SimError::InvalidDims(dims.to_vec()));
    }
    if let Some(&e) = dims.iter().find(|&&e| e > u16::MAX as usize) {
        return Err(SimError::ExtentOverflow(e));
    }
    let payload_len = 4 * z_bar.len();
    let payload_len_u32 = u32::try_from(payload_len).map_err(|_| SimError::ExtentOverflow(payload_len))?;
    let mut out = Vec::with_capacity(packet_bytes(dims));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.push(DTYPE_F32);
    out.extend_from_slice(&sample_id.to_le_bytes());
    out.extend_from_slice(&payload_len_u32.to_le_bytes());
    for &v in z_bar.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Total frame length declared by a header, once enough bytes are present
/// to read it. Returns `Ok(None)` when `head` is still too short.
pub fn declared_len(head: &[u8]) -> Result<Option<usize>> {
    if head.len() < PREFIX {
        return Ok(None);
    }
    if head[..4] != MAGIC {
        return Err(SimError::BadMagic(head[..4].try_into().unwrap()));
    }
    if head[4] != VERSION {
        return Err(SimError::BadVersion(head[4]));
    }
    let rank = head[5] as usize;
    let header = header_bytes(rank);
    if head.len() < header {
        return Ok(None);
    }
    let payload = u32_at(head, header - 4) as usize;
    Ok(Some(header + payload + CRC))
}

/// Validates and decodes one packet. Framing fields are checked first so a
/// short buffer is reported as a length mismatch; everything else is covered
/// by the crc.
pub fn decode_packet(bytes: &[u8]) -> Result<(Tensor, u64)> {
    let short = |expected| SimError::LengthMismatch {
        expected,
        actual: bytes.len(),
    };
    let total = declared_len(bytes)?.ok_or_else(|| {
        let need = if bytes.len() < PREFIX { PREFIX } else { header_bytes(bytes[5] as usize) };
        short(need + CRC)
    })?;
    if bytes.len() != total {
        return Err(short(total));
    }
    let rank = bytes[5] as usize;
    let dims: Vec<usize> = (0..rank).map(|k| u16_at(bytes, PREFIX + 2 * k) as usize).collect();
    let header = header_bytes(rank);
    let want_payload = 4 * dims.iter().product::<usize>();
    if total != header + want_payload + CRC {
        return Err(short(header + want_payload + CRC));
    }
    let stored = u32_at(bytes, total - CRC);
    let computed = crc32fast::hash(&bytes[..total - CRC]);
    if stored != computed {
        return Err(SimError::CrcFailure { stored, computed });
    }
    let dtype = bytes[PREFIX + 2 * rank];
    if dtype != DTYPE_F32 {
        return Err(SimError::UnsupportedDtype(dtype));
    }
    if rank == 0 || rank > MAX_RANK || dims.contains(&0) {
        return Err(SimError::InvalidDims(dims));
    }
    let sample_id = u64::from_le_bytes(bytes[PREFIX + 2 * rank + 1..header - 4].try_into().unwrap());
    let values = bytes[header..total - CRC]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((Tensor::new(dims, values)?, sample_id))
}
