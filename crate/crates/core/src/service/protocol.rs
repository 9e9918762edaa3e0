//! Wire format.
//!
//! Every message is a frame: `u32` little-endian payload length, then the
//! payload.
//!
//! ```text
//! query:    "QRY1" | version u8 | eta u16 | alpha u16
//!           | pca_len u32 | pca blob | nmf_len u32 | nmf blob
//! response: "RSP1" | status u8 | count u16
//!           | count x (id_len u16 | object id | score f32 | rank u16)
//!           | err_len u16 | error text
//! ```

use std::io::{self, Read, Write};

use crate::error::ServiceError;
use crate::matcher::RankedList;

pub const QUERY_MAGIC: &[u8; 4] = b"QRY1";
pub const RESPONSE_MAGIC: &[u8; 4] = b"RSP1";
pub const PROTOCOL_VERSION: u8 = 1;
pub const DEFAULT_MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    MalformedFrame,
    InvalidParameters,
    RetrievalFailed,
    Other(u8),
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::MalformedFrame => 1,
            Status::InvalidParameters => 2,
            Status::RetrievalFailed => 3,
            Status::Other(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            0 => Status::Ok,
            1 => Status::MalformedFrame,
            2 => Status::InvalidParameters,
            3 => Status::RetrievalFailed,
            c => Status::Other(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryMessage {
    pub version: u8,
    pub eta: u16,
    pub alpha: u16,
    pub pca_blob: Vec<u8>,
    pub nmf_blob: Vec<u8>,
}

impl QueryMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.pca_blob.len() + self.nmf_blob.len());
        out.extend_from_slice(QUERY_MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&(self.pca_blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.pca_blob);
        out.extend_from_slice(&(self.nmf_blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.nmf_blob);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, ServiceError> {
        let mut r = Reader::new(payload);
        if r.take(4)? != QUERY_MAGIC {
            return Err(ServiceError::MalformedFrame("bad query magic".into()));
        }
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(ServiceError::MalformedFrame(format!("unsupported version {version}")));
        }
        let eta = r.u16()?;
        let alpha = r.u16()?;
        let pca_len = r.u32()? as usize;
        let pca_blob = r.take(pca_len)?.to_vec();
        let nmf_len = r.u32()? as usize;
        let nmf_blob = r.take(nmf_len)?.to_vec();
        r.finish()?;
        Ok(Self {
            version,
            eta,
            alpha,
            pca_blob,
            nmf_blob,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEntry {
    pub object_id: String,
    pub score: f32,
    pub rank: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMessage {
    pub status: Status,
    pub results: Vec<ResponseEntry>,
    pub error_text: String,
}

impl ResponseMessage {
    pub fn from_ranked(list: &RankedList) -> Self {
        Self {
            status: Status::Ok,
            results: list
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| ResponseEntry {
                    object_id: e.object_id.clone(),
                    score: e.score as f32,
                    rank: (i + 1) as u16,
                })
                .collect(),
            error_text: String::new(),
        }
    }

    pub fn from_error(err: &ServiceError) -> Self {
        let status = match err {
            ServiceError::MalformedFrame(_) | ServiceError::FrameTooLarge(_) => Status::MalformedFrame,
            ServiceError::InvalidParameters(_) => Status::InvalidParameters,
            _ => Status::RetrievalFailed,
        };
        Self {
            status,
            results: Vec::new(),
            error_text: err.to_string(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(RESPONSE_MAGIC);
        out.push(self.status.code());
        out.extend_from_slice(&(self.results.len() as u16).to_le_bytes());
        for entry in &self.results {
            out.extend_from_slice(&(entry.object_id.len() as u16).to_le_bytes());
            out.extend_from_slice(entry.object_id.as_bytes());
            out.extend_from_slice(&entry.score.to_le_bytes());
            out.extend_from_slice(&entry.rank.to_le_bytes());
        }
        let err = self.error_text.as_bytes();
        let err = &err[..err.len().min(usize::from(u16::MAX))];
        out.extend_from_slice(&(err.len() as u16).to_le_bytes());
        out.extend_from_slice(err);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, ServiceError> {
        let mut r = Reader::new(payload);
        if r.take(4)? != RESPONSE_MAGIC {
            return Err(ServiceError::MalformedFrame("bad response magic".into()));
        }
        let status = Status::from_code(r.u8()?);
        let count = usize::from(r.u16()?);
        let mut results = Vec::with_capacity(count);
        for _ in 0..count {
            let len = usize::from(r.u16()?);
            let object_id = r.string(len)?;
            let score = r.f32()?;
            let rank = r.u16()?;
            results.push(ResponseEntry { object_id, score, rank });
        }
        let err_len = usize::from(r.u16()?);
        let error_text = r.string(err_len)?;
        r.finish()?;
        Ok(Self {
            status,
            results,
            error_text,
        })
    }

    pub fn into_ranked(self, eta: usize) -> Result<RankedList, ServiceError> {
        if self.status != Status::Ok {
            return Err(ServiceError::Remote {
                status: self.status.code(),
                message: self.error_text,
            });
        }
        Ok(RankedList {
            entries: self
                .results
                .into_iter()
                .map(|e| crate::matcher::RankedEntry {
                    object_id: e.object_id,
                    image_id: String::new(),
                    score: f64::from(e.score),
                })
                .collect(),
            eta,
        })
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ServiceError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ServiceError::MalformedFrame(format!(
                "truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, ServiceError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, ServiceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ServiceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, ServiceError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, len: usize) -> Result<String, ServiceError> {
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| ServiceError::MalformedFrame(format!("bad UTF-8: {e}")))
    }

    pub(crate) fn finish(self) -> Result<(), ServiceError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(ServiceError::MalformedFrame(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

#[derive(Debug, PartialEq, Eq)]
pub enum FrameRead {
    Frame(Vec<u8>),
    /// A frame over the size limit; its payload was read and discarded so
    /// the stream stays aligned on frame boundaries.
    Oversized(usize),
    Eof,
}

pub fn read_frame<R: Read>(r: &mut R, max_frame: usize) -> io::Result<FrameRead> {
    let mut len_bytes = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len_bytes[filled..]) {
            Ok(0) if filled == 0 => return Ok(FrameRead::Eof),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(len_bytes) as usize;
    if len > max_frame {
        let skipped = io::copy(&mut r.take(len as u64), &mut io::sink())?;
        if skipped < len as u64 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        return Ok(FrameRead::Oversized(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(FrameRead::Frame(payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_query() -> QueryMessage {
        QueryMessage {
            version: 1,
            eta: 20,
            alpha: 2,
            pca_blob: vec![1, 2, 3],
            nmf_blob: vec![4, 5],
        }
    }

    #[test]
    fn query_layout() {
        let bytes = sample_query().encode();
        assert_eq!(&bytes[..4], b"QRY1");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..7], &20u16.to_le_bytes());
        assert_eq!(&bytes[7..9], &2u16.to_le_bytes());
        assert_eq!(&bytes[9..13], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 1 + 2 + 2 + 4 + 3 + 4 + 2);
        assert_eq!(QueryMessage::decode(&bytes).unwrap(), sample_query());
    }

    #[test]
    fn truncated_query_is_malformed() {
        let bytes = sample_query().encode();
        for cut in 0..bytes.len() {
            assert!(matches!(
                QueryMessage::decode(&bytes[..cut]),
                Err(ServiceError::MalformedFrame(_))
            ));
        }
    }

    #[test]
    fn response_layout() {
        let msg = ResponseMessage {
            status: Status::Ok,
            results: vec![ResponseEntry { object_id: "ab".into(), score: 0.5, rank: 1 }],
            error_text: String::new(),
        };
        let bytes = msg.encode();
        let mut expected = b"RSP1".to_vec();
        expected.push(0);
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&0.5f32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&0u16.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(ResponseMessage::decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn frames_resynchronize_after_oversized() {
        let mut stream = Vec::new();
        write_frame(&mut stream, &[7u8; 100]).unwrap();
        write_frame(&mut stream, b"next").unwrap();
        let mut cursor = io::Cursor::new(stream);
        assert_eq!(read_frame(&mut cursor, 10).unwrap(), FrameRead::Oversized(100));
        assert_eq!(read_frame(&mut cursor, 10).unwrap(), FrameRead::Frame(b"next".to_vec()));
        assert_eq!(read_frame(&mut cursor, 10).unwrap(), FrameRead::Eof);
    }

    #[test]
    fn remote_error_status() {
        let msg = ResponseMessage {
            status: Status::InvalidParameters,
            results: vec![],
            error_text: "invalid parameters: eta".into(),
        };
        assert!(matches!(msg.into_ranked(3), Err(ServiceError::Remote { status: 2, .. })));
    }
}
