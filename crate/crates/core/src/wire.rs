//! Byte layout of the PUNCH header, carried between the MAC and IP headers.
//!
//! Five blocks, each led by a big-endian `u32` element count:
//!
//! ```text
//! [n_xor ][(id u16, next_hop u16) x n_xor]
//! [n_rep ][id u16 x n_rep, zero pad to 4 bytes]
//! [n_ack ][id u16 x n_ack, zero pad to 4 bytes]
//! [n_pu  ][(pu_index u16, lambda Q8.8 u16) x n_pu]
//! [n_link][(neighbour u16, p_link u16) x n_link]
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest element count in any block.
pub const MAX_BLOCK_LEN: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Xored,
    Report,
    Ack,
    Pu,
    Link,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Xored => "xored",
            Block::Report => "report",
            Block::Ack => "ack",
            Block::Pu => "pu",
            Block::Link => "link",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("{block} block has {len} elements, limit is {MAX_BLOCK_LEN}")]
    TooLong { block: Block, len: usize },
    #[error("input truncated in {block} block")]
    Truncated { block: Block },
    #[error("{block} block claims {count} elements but only {remaining} bytes remain")]
    CountExceedsInput { block: Block, count: u32, remaining: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunchHeader {
    pub xored: Vec<(u16, u16)>,
    pub report_ids: Vec<u16>,
    pub ack_ids: Vec<u16>,
    pub pu_block: Vec<(u16, u16)>,
    pub link_block: Vec<(u16, u16)>,
}

fn padded(n: usize) -> usize {
    (2 * n + 3) & !3
}

impl PunchHeader {
    /// Exact number of bytes `encode` produces.
    pub fn encoded_len(&self) -> usize {
        20 + 4 * self.xored.len()
            + padded(self.report_ids.len())
            + padded(self.ack_ids.len())
            + 4 * self.pu_block.len()
            + 4 * self.link_block.len()
    }

    fn check(&self) -> Result<(), WireError> {
        for (block, len) in [
            (Block::Xored, self.xored.len()),
            (Block::Report, self.report_ids.len()),
            (Block::Ack, self.ack_ids.len()),
            (Block::Pu, self.pu_block.len()),
            (Block::Link, self.link_block.len()),
        ] {
            if len > MAX_BLOCK_LEN {
                return Err(WireError::TooLong { block, len });
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        self.check()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        put_pairs(&mut out, &self.xored);
        put_ids(&mut out, &self.report_ids);
        put_ids(&mut out, &self.ack_ids);
        put_pairs(&mut out, &self.pu_block);
        put_pairs(&mut out, &self.link_block);
        debug_assert_eq!(out.len(), self.encoded_len());
        Ok(out)
    }

    /// Decodes one header from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(PunchHeader, usize), WireError> {
        let mut r = Reader { bytes, pos: 0 };
        let xored = r.pairs(Block::Xored)?;
        let report_ids = r.ids(Block::Report)?;
        let ack_ids = r.ids(Block::Ack)?;
        let pu_block = r.pairs(Block::Pu)?;
        let link_block = r.pairs(Block::Link)?;
        Ok((
            PunchHeader {
                xored,
                report_ids,
                ack_ids,
                pu_block,
                link_block,
            },
            r.pos,
        ))
    }
}

pub fn encode_header(h: &PunchHeader) -> Result<Vec<u8>, WireError> {
    h.encode()
}

pub fn decode_header(bytes: &[u8]) -> Result<(PunchHeader, usize), WireError> {
    PunchHeader::decode(bytes)
}

fn put_pairs(out: &mut Vec<u8>, pairs: &[(u16, u16)]) {
    out.extend_from_slice(&(pairs.len() as u32).to_be_bytes());
    for (a, b) in pairs {
        out.extend_from_slice(&a.to_be_bytes());
        out.extend_from_slice(&b.to_be_bytes());
    }
}

fn put_ids(out: &mut Vec<u8>, ids: &[u16]) {
    out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_be_bytes());
    }
    if ids.len() % 2 == 1 {
        out.extend_from_slice(&[0, 0]);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take<const N: usize>(&mut self, block: Block) -> Result<[u8; N], WireError> {
        if self.remaining() < N {
            return Err(WireError::Truncated { block });
        }
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(buf)
    }

    fn u16(&mut self, block: Block) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take::<2>(block)?))
    }

    fn count(&mut self, block: Block, body_bytes: impl Fn(usize) -> usize) -> Result<usize, WireError> {
        let count = u32::from_be_bytes(self.take::<4>(block)?);
        let remaining = self.remaining();
        if count as usize > MAX_BLOCK_LEN || body_bytes(count as usize) > remaining {
            return Err(WireError::CountExceedsInput {
                block,
                count,
                remaining,
            });
        }
        Ok(count as usize)
    }

    fn pairs(&mut self, block: Block) -> Result<Vec<(u16, u16)>, WireError> {
        let n = self.count(block, |n| 4 * n)?;
        (0..n).map(|_| Ok((self.u16(block)?, self.u16(block)?))).collect()
    }

    fn ids(&mut self, block: Block) -> Result<Vec<u16>, WireError> {
        let n = self.count(block, padded)?;
        let ids = (0..n).map(|_| self.u16(block)).collect::<Result<Vec<_>, _>>()?;
        if n % 2 == 1 {
            self.take::<2>(block)?;
        }
        Ok(ids)
    }
}

/// Q8.8 fixed point, round to nearest. Values at or above 256 saturate.
pub fn lambda_to_q8_8(lambda: f64) -> u16 {
    if lambda.is_nan() || lambda <= 0.0 {
        if lambda < 0.0 || lambda.is_nan() {
            log::warn!("PU rate {lambda} is not representable, encoding 0");
        }
        return 0;
    }
    let scaled = (lambda * 256.0).round();
    if scaled > u16::MAX as f64 {
        log::warn!("PU rate {lambda} saturates the Q8.8 field");
        return u16::MAX;
    }
    scaled as u16
}

pub fn q8_8_to_lambda(v: u16) -> f64 {
    v as f64 / 256.0
}

/// Loss probability as a fraction of 65535.
pub fn p_link_to_u16(p: f64) -> u16 {
    (p.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn u16_to_p_link(v: u16) -> f64 {
    v as f64 / 65535.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_header_is_twenty_zero_bytes() {
        let bytes = PunchHeader::default().encode().unwrap();
        assert_eq!(bytes, vec![0u8; 20]);
    }

    #[test]
    fn single_xor_pair_layout() {
        let h = PunchHeader {
            xored: vec![(7, 3)],
            ..Default::default()
        };
        let bytes = h.encode().unwrap();
        let mut expected = vec![0, 0, 0, 1, 0, 7, 0, 3];
        expected.extend_from_slice(&[0u8; 16]);
        assert_eq!(bytes, expected);
        assert_eq!(PunchHeader::decode(&bytes).unwrap(), (h, 24));
    }

    #[test]
    fn odd_report_block_is_padded() {
        let h = PunchHeader {
            report_ids: vec![1, 2, 3],
            ..Default::default()
        };
        let bytes = h.encode().unwrap();
        // xored count, then report count + 6 id bytes + 2 pad
        assert_eq!(&bytes[4..16], &[0, 0, 0, 3, 0, 1, 0, 2, 0, 3, 0, 0]);
        assert_eq!(bytes.len(), 20 + 8);
        assert_eq!(h.encoded_len(), bytes.len());
    }

    #[test]
    fn truncated_xored_block() {
        let bytes = [0, 0, 0, 1];
        assert!(matches!(
            PunchHeader::decode(&bytes),
            Err(WireError::CountExceedsInput {
                block: Block::Xored,
                ..
            })
        ));
        let bytes = [0, 0, 0];
        assert_eq!(
            PunchHeader::decode(&bytes),
            Err(WireError::Truncated { block: Block::Xored })
        );
    }

    #[test]
    fn truncated_later_block_names_it() {
        let mut bytes = PunchHeader::default().encode().unwrap();
        bytes.truncate(14);
        assert_eq!(
            PunchHeader::decode(&bytes),
            Err(WireError::Truncated { block: Block::Pu })
        );
    }

    #[test]
    fn too_long_block_rejected() {
        let h = PunchHeader {
            ack_ids: vec![0; MAX_BLOCK_LEN + 1],
            ..Default::default()
        };
        assert!(matches!(h.encode(), Err(WireError::TooLong { block: Block::Ack, .. })));
    }

    #[test]
    fn decode_reports_consumed_length_with_trailing_bytes() {
        let h = PunchHeader {
            ack_ids: vec![9],
            ..Default::default()
        };
        let mut bytes = h.encode().unwrap();
        bytes.extend_from_slice(&[0xde, 0xad]);
        let (back, used) = PunchHeader::decode(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(used, bytes.len() - 2);
    }

    #[test]
    fn q8_8_examples() {
        assert_eq!(lambda_to_q8_8(0.0), 0);
        assert_eq!(q8_8_to_lambda(0), 0.0);
        assert_eq!(lambda_to_q8_8(0.5), 0x0080);
        assert_eq!(q8_8_to_lambda(0x0080), 0.5);
        assert_eq!(lambda_to_q8_8(20.0), 0x1400);
        assert_eq!(q8_8_to_lambda(0x1400), 20.0);
        assert_eq!(lambda_to_q8_8(300.0), u16::MAX);
    }

    #[test]
    fn q8_8_covers_activity_range() {
        let mut l = 0.25;
        while l <= 20.0 {
            let back = q8_8_to_lambda(lambda_to_q8_8(l));
            assert!((back - l).abs() <= 1.0 / 512.0, "{l}");
            l += 0.0137;
        }
    }

    #[test]
    fn p_link_quantization() {
        for k in 0..=1000 {
            let p = k as f64 / 1000.0;
            let back = u16_to_p_link(p_link_to_u16(p));
            assert!((back - p).abs() <= 1.0 / 131_070.0 + 1e-15, "{p}");
        }
    }
}
