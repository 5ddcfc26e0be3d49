//! Length-prefixed binary framing for master/worker traffic.
//!
//! ```text
//! | u32 LE payload length | u8 message type | payload ... |
//! ```
//!
//! Vectors are `u64` length followed by little-endian `f64`s; matrices use
//! the [`DenseMatrix`] fixture layout; generators use
//! [`GeneratorMatrix::to_bytes`].

use std::io::{self, Read, Write};

use crate::coding::GeneratorMatrix;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Upper bound on a single frame, guards against garbage length prefixes.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    X,
    XT,
}

impl Operand {
    pub const BOTH: [Operand; 2] = [Operand::X, Operand::XT];

    pub fn index(self) -> usize {
        match self {
            Operand::X => 0,
            Operand::XT => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Operand::X),
            1 => Ok(Operand::XT),
            other => Err(Error::protocol(format!("unknown operand {other}"))),
        }
    }
}

impl std::fmt::Display for Operand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Operand::X => "X",
            Operand::XT => "XT",
        })
    }
}

/// What a worker does with the generator during the encoding phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Holds an original block and needs no encoding.
    Systematic,
    /// Builds its coded block from blocks pulled off the data holders.
    Redundant,
}

/// Bitmask of operands a worker must prepare.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperandSet(pub u8);

impl OperandSet {
    pub const ALL: OperandSet = OperandSet(0b11);

    pub fn contains(self, op: Operand) -> bool {
        self.0 & (1 << op.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Operand> {
        Operand::BOTH.into_iter().filter(move |&op| self.contains(op))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Register { worker_id: u32 },
    SetGenerator { generator: GeneratorMatrix, role: Role, operands: OperandSet },
    BlockRequest { operand: Operand, block_id: u32 },
    BlockResponse { operand: Operand, block_id: u32, matrix: DenseMatrix },
    EncodeComplete { worker_id: u32, downloads_x: u64, downloads_xt: u64, encode_nanos: u64, load_nanos: u64 },
    IterationStart { iter: u64, operand: Operand, vector: Vec<f64> },
    PartialProduct { worker_id: u32, iter: u64, operand: Operand, vector: Vec<f64> },
    Cancel { iter: u64 },
    Shutdown,
}

impl WireMessage {
    pub fn type_byte(&self) -> u8 {
        match self {
            WireMessage::Register { .. } => 1,
            WireMessage::SetGenerator { .. } => 2,
            WireMessage::BlockRequest { .. } => 3,
            WireMessage::BlockResponse { .. } => 4,
            WireMessage::EncodeComplete { .. } => 5,
            WireMessage::IterationStart { .. } => 6,
            WireMessage::PartialProduct { .. } => 7,
            WireMessage::Cancel { .. } => 8,
            WireMessage::Shutdown => 9,
        }
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        match self {
            WireMessage::Register { worker_id } => put_u32(out, *worker_id),
            WireMessage::SetGenerator { generator, role, operands } => {
                out.extend_from_slice(&generator.to_bytes());
                out.push(match role {
                    Role::Systematic => 0,
                    Role::Redundant => 1,
                });
                out.push(operands.0);
            }
            WireMessage::BlockRequest { operand, block_id } => {
                out.push(operand.index() as u8);
                put_u32(out, *block_id);
            }
            WireMessage::BlockResponse { operand, block_id, matrix } => {
                out.push(operand.index() as u8);
                put_u32(out, *block_id);
                out.extend_from_slice(&matrix.to_bytes());
            }
            WireMessage::EncodeComplete { worker_id, downloads_x, downloads_xt, encode_nanos, load_nanos } => {
                put_u32(out, *worker_id);
                put_u64(out, *downloads_x);
                put_u64(out, *downloads_xt);
                put_u64(out, *encode_nanos);
                put_u64(out, *load_nanos);
            }
            WireMessage::IterationStart { iter, operand, vector } => {
                put_u64(out, *iter);
                out.push(operand.index() as u8);
                put_vec(out, vector);
            }
            WireMessage::PartialProduct { worker_id, iter, operand, vector } => {
                put_u32(out, *worker_id);
                put_u64(out, *iter);
                out.push(operand.index() as u8);
                put_vec(out, vector);
            }
            WireMessage::Cancel { iter } => put_u64(out, *iter),
            WireMessage::Shutdown => {}
        }
    }

    /// Full frame including the length prefix and type byte.
    pub fn to_frame(&self) -> Vec<u8> {
        let mut out = vec![0u8; 5];
        out[4] = self.type_byte();
        self.encode_payload(&mut out);
        let len = (out.len() - 5) as u32;
        out[..4].copy_from_slice(&len.to_le_bytes());
        out
    }

    pub fn decode(type_byte: u8, payload: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: payload, pos: 0 };
        let msg = match type_byte {
            1 => WireMessage::Register { worker_id: r.u32()? },
            2 => {
                let (generator, used) = GeneratorMatrix::from_bytes(r.rest())?;
                r.pos += used;
                let role = match r.u8()? {
                    0 => Role::Systematic,
                    1 => Role::Redundant,
                    other => return Err(Error::protocol(format!("unknown role {other}"))),
                };
                WireMessage::SetGenerator { generator, role, operands: OperandSet(r.u8()?) }
            }
            3 => WireMessage::BlockRequest { operand: Operand::from_byte(r.u8()?)?, block_id: r.u32()? },
            4 => {
                let operand = Operand::from_byte(r.u8()?)?;
                let block_id = r.u32()?;
                let (matrix, used) = DenseMatrix::from_bytes(r.rest())?;
                r.pos += used;
                WireMessage::BlockResponse { operand, block_id, matrix }
            }
            5 => WireMessage::EncodeComplete {
                worker_id: r.u32()?,
                downloads_x: r.u64()?,
                downloads_xt: r.u64()?,
                encode_nanos: r.u64()?,
                load_nanos: r.u64()?,
            },
            6 => WireMessage::IterationStart { iter: r.u64()?, operand: Operand::from_byte(r.u8()?)?, vector: r.vec()? },
            7 => WireMessage::PartialProduct {
                worker_id: r.u32()?,
                iter: r.u64()?,
                operand: Operand::from_byte(r.u8()?)?,
                vector: r.vec()?,
            },
            8 => WireMessage::Cancel { iter: r.u64()? },
            9 => WireMessage::Shutdown,
            other => return Err(Error::protocol(format!("unknown message type {other}"))),
        };
        if r.pos != payload.len() {
            return Err(Error::protocol(format!(
                "{} trailing bytes after message type {type_byte}",
                payload.len() - r.pos
            )));
        }
        Ok(msg)
    }

    /// Parses one complete frame, returning the message and bytes consumed.
    pub fn from_frame(frame: &[u8]) -> Result<(Self, usize)> {
        if frame.len() < 5 {
            return Err(Error::protocol("truncated frame header"));
        }
        let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
        let payload = frame.get(5..5 + len).ok_or_else(|| Error::protocol("truncated frame payload"))?;
        Ok((Self::decode(frame[4], payload)?, 5 + len))
    }
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> Result<()> {
    w.write_all(&msg.to_frame())?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame(r: &mut impl Read) -> Result<Option<WireMessage>> {
    let mut header = [0u8; 5];
    match r.read_exact(&mut header[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut header[1..])?;
    let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(Error::protocol(format!("frame of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    WireMessage::decode(header[4], &payload).map(Some)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    put_u64(out, v.len() as u64);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::protocol("truncated payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
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

    fn vec(&mut self) -> Result<Vec<f64>> {
        let len = usize::try_from(self.u64()?).map_err(|_| Error::protocol("vector too long"))?;
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| Error::protocol("vector too long"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_header_layout() {
        let frame = WireMessage::Cancel { iter: 7 }.to_frame();
        assert_eq!(&frame[..4], &8u32.to_le_bytes());
        assert_eq!(frame[4], 8);
        assert_eq!(&frame[5..], &7u64.to_le_bytes());
        assert_eq!(WireMessage::Shutdown.to_frame(), vec![0, 0, 0, 0, 9]);
    }

    #[test]
    fn vectors_are_length_prefixed() {
        let frame = WireMessage::IterationStart { iter: 1, operand: Operand::XT, vector: vec![2.5] }.to_frame();
        assert_eq!(frame[4], 6);
        assert_eq!(frame[13], 1);
        assert_eq!(&frame[14..22], &1u64.to_le_bytes());
        assert_eq!(&frame[22..30], &2.5f64.to_le_bytes());
    }

    #[test]
    fn stream_round_trip_and_clean_eof() {
        let msgs = vec![
            WireMessage::Register { worker_id: 3 },
            WireMessage::SetGenerator {
                generator: GeneratorMatrix::rlnc(3, 5, 11).unwrap(),
                role: Role::Redundant,
                operands: OperandSet::ALL,
            },
            WireMessage::BlockResponse {
                operand: Operand::X,
                block_id: 1,
                matrix: DenseMatrix::identity(2),
            },
            WireMessage::Shutdown,
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut r = &buf[..];
        for m in &msgs {
            assert_eq!(read_frame(&mut r).unwrap().as_ref(), Some(m));
        }
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn malformed_frames_rejected() {
        assert!(WireMessage::decode(42, &[]).is_err());
        assert!(WireMessage::decode(8, &[1, 2, 3]).is_err());
        assert!(WireMessage::decode(9, &[0]).is_err());
        let frame = WireMessage::Cancel { iter: 1 }.to_frame();
        let mut r = &frame[..frame.len() - 2];
        assert!(read_frame(&mut r).is_err());
    }
}
