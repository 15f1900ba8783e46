//! Binary record format used by the socket transport.
//!
//! Every record is a little-endian `u32` byte length followed by that many
//! bytes:
//!
//! ```text
//! magic        [u8; 4]  "PSVG"
//! version      u16      1
//! sender       u32      worker id
//! tag          u8       1 = BatchRequest, 2 = BatchReply, 3 = Done, 4 = Shutdown
//! payload
//! ```
//!
//! Payloads, fields in order:
//!
//! ```text
//! BatchRequest  from_partition u32, of_partition u32, batch_size u32,
//!               request_id u64, count u32, indices [u32; count]
//! BatchReply    request_id u64, rows u32, dim u32,
//!               coords [f64; rows·dim] (row-major), responses [f64; rows]
//! Done          (empty)
//! Shutdown      (empty)
//! ```
//!
//! All reals are IEEE-754 binary64. Trailing bytes make a record invalid.

use std::io::Read;

use super::Message;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

pub const MAGIC: [u8; 4] = *b"PSVG";
pub const VERSION: u16 = 1;
/// Records longer than this are rejected.
pub const MAX_RECORD: usize = 1 << 30;

const TAG_REQUEST: u8 = 1;
const TAG_REPLY: u8 = 2;
const TAG_DONE: u8 = 3;
const TAG_SHUTDOWN: u8 = 4;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("field exceeds u32 range");
    out.extend_from_slice(&v.to_le_bytes());
}

/// Encodes a complete record, length prefix included.
pub fn encode<T: Scalar>(sender: usize, message: &Message<T>) -> Vec<u8> {
    let mut body = Vec::with_capacity(64);
    body.extend_from_slice(&MAGIC);
    body.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut body, sender);
    match message {
        Message::BatchRequest {
            from_partition,
            of_partition,
            batch_size,
            request_id,
            indices,
        } => {
            body.push(TAG_REQUEST);
            put_u32(&mut body, *from_partition);
            put_u32(&mut body, *of_partition);
            put_u32(&mut body, *batch_size);
            body.extend_from_slice(&request_id.to_le_bytes());
            put_u32(&mut body, indices.len());
            for &i in indices {
                put_u32(&mut body, i);
            }
        }
        Message::BatchReply {
            request_id,
            coords,
            responses,
        } => {
            body.push(TAG_REPLY);
            body.extend_from_slice(&request_id.to_le_bytes());
            put_u32(&mut body, coords.rows());
            put_u32(&mut body, coords.cols());
            for &v in coords.as_slice().iter().chain(responses) {
                body.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Message::Done => body.push(TAG_DONE),
        Message::Shutdown => body.push(TAG_SHUTDOWN),
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    put_u32(&mut out, body.len());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("record truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn reals<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

/// Decodes a record body (without its length prefix) into `(sender, message)`.
pub fn decode<T: Scalar>(body: &[u8]) -> Result<(usize, Message<T>)> {
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let sender = r.u32()?;
    let message = match r.u8()? {
        TAG_REQUEST => {
            let from_partition = r.u32()?;
            let of_partition = r.u32()?;
            let batch_size = r.u32()?;
            let request_id = r.u64()?;
            let count = r.u32()?;
            let indices = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            Message::BatchRequest {
                from_partition,
                of_partition,
                batch_size,
                request_id,
                indices,
            }
        }
        TAG_REPLY => {
            let request_id = r.u64()?;
            let rows = r.u32()?;
            let dim = r.u32()?;
            let coords = r.reals(rows.checked_mul(dim).ok_or_else(|| Error::Format("length overflow".into()))?)?;
            let responses = r.reals(rows)?;
            Message::BatchReply {
                request_id,
                coords: Matrix::from_row_major(rows, dim, coords),
                responses,
            }
        }
        TAG_DONE => Message::Done,
        TAG_SHUTDOWN => Message::Shutdown,
        tag => return Err(Error::Format(format!("unknown tag {tag}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok((sender, message))
}

/// Reassembles records from a byte stream that arrives in arbitrary chunks.
#[derive(Debug, Default)]
pub struct RecordBuffer {
    bytes: Vec<u8>,
}

impl RecordBuffer {
    pub fn extend(&mut self, chunk: &[u8]) {
        self.bytes.extend_from_slice(chunk);
    }

    /// The next complete record body, if one has fully arrived.
    pub fn next_record(&mut self) -> Result<Option<Vec<u8>>> {
        if self.bytes.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.bytes[..4].try_into().unwrap()) as usize;
        if len > MAX_RECORD {
            return Err(Error::Format(format!("record of {len} bytes exceeds limit")));
        }
        if self.bytes.len() < 4 + len {
            return Ok(None);
        }
        let body = self.bytes[4..4 + len].to_vec();
        self.bytes.drain(..4 + len);
        Ok(Some(body))
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Blocking read of one record; `None` on clean end of stream.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_RECORD {
        return Err(Error::Format(format!("record of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
