use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::prepare_query;
use super::protocol::{read_frame, write_frame, FrameRead, QueryMessage, ResponseMessage, DEFAULT_MAX_FRAME};
use super::PipelineConfig;
use crate::descriptors::DescriptorMatrix;
use crate::error::ServiceError;
use crate::matcher::RankedList;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// One persistent connection; queries on it are answered in order.
pub struct RetrievalClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl RetrievalClient {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, ServiceError> {
        let mut last_err = None;
        for candidate in addr.to_socket_addrs()? {
            match Self::connect_one(candidate, timeout) {
                Ok(client) => return Ok(client),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| ServiceError::InvalidParameters("address resolved to nothing".into())))
    }

    fn connect_one(addr: SocketAddr, timeout: Duration) -> Result<Self, ServiceError> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let write_half = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer: BufWriter::new(write_half),
        })
    }

    /// Sends one payload and returns the raw response payload.
    pub fn round_trip(&mut self, payload: &[u8]) -> Result<Vec<u8>, ServiceError> {
        write_frame(&mut self.writer, payload)?;
        match read_frame(&mut self.reader, usize::MAX)? {
            FrameRead::Frame(bytes) => Ok(bytes),
            FrameRead::Eof => Err(ServiceError::MalformedFrame("server closed the connection".into())),
            FrameRead::Oversized(len) => Err(ServiceError::FrameTooLarge(len)),
        }
    }

    pub fn send(&mut self, query: &QueryMessage) -> Result<ResponseMessage, ServiceError> {
        let payload = query.encode();
        if payload.len() > DEFAULT_MAX_FRAME {
            return Err(ServiceError::FrameTooLarge(payload.len()));
        }
        ResponseMessage::decode(&self.round_trip(&payload)?)
    }

    pub fn query(
        &mut self,
        m: &DescriptorMatrix,
        eta: u16,
        alpha: u16,
        bits: u8,
        config: &PipelineConfig,
    ) -> Result<RankedList, ServiceError> {
        let query = prepare_query(m, eta, alpha, bits, config)?;
        self.send(&query)?.into_ranked(usize::from(eta))
    }
}

/// Connects, sends one query and returns the ranked objects.
pub fn query_remote(
    endpoint: impl ToSocketAddrs,
    m: &DescriptorMatrix,
    eta: u16,
    alpha: u16,
    bits: u8,
) -> Result<RankedList, ServiceError> {
    RetrievalClient::connect(endpoint, DEFAULT_TIMEOUT)?.query(m, eta, alpha, bits, &PipelineConfig::default())
}
