use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::answer_query;
use super::protocol::{read_frame, write_frame, FrameRead, QueryMessage, ResponseMessage, DEFAULT_MAX_FRAME};
use crate::error::ServiceError;
use crate::matcher::ObjectIndex;

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub max_frame: usize,
    /// Idle connections are dropped after this long without a frame.
    pub read_timeout: Option<Duration>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_frame: DEFAULT_MAX_FRAME,
            read_timeout: Some(Duration::from_secs(300)),
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_acceptor();
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }

    fn stop_acceptor(&mut self) {
        if let Some(handle) = self.acceptor.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_acceptor();
    }
}

/// Binds `addr` and answers queries against `index`, one thread per
/// connection.
pub fn serve(index: Arc<ObjectIndex>, addr: impl ToSocketAddrs, config: ServerConfig) -> Result<ServerHandle, ServiceError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    info!("serving {} images on {local}", index.len());
    let acceptor = thread::Builder::new()
        .name("facret-accept".into())
        .spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let index = Arc::clone(&index);
                        let spawned = thread::Builder::new()
                            .name("facret-conn".into())
                            .spawn(move || handle_connection(stream, &index, config));
                        if let Err(e) = spawned {
                            warn!("could not spawn connection thread: {e}");
                        }
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        })?;
    Ok(ServerHandle {
        addr: local,
        stop,
        acceptor: Some(acceptor),
    })
}

fn handle_connection(stream: TcpStream, index: &ObjectIndex, config: ServerConfig) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_read_timeout(config.read_timeout);
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(write_half);
    loop {
        let response = match read_frame(&mut reader, config.max_frame) {
            Ok(FrameRead::Eof) => break,
            Ok(FrameRead::Oversized(len)) => ResponseMessage::from_error(&ServiceError::FrameTooLarge(len)),
            Ok(FrameRead::Frame(payload)) => match QueryMessage::decode(&payload) {
                Ok(query) => answer_query(index, &query),
                Err(e) => ResponseMessage::from_error(&e),
            },
            Err(e) => {
                debug!("connection {peer:?} closed: {e}");
                break;
            }
        };
        if let Err(e) = write_frame(&mut writer, &response.encode()) {
            debug!("write to {peer:?} failed: {e}");
            break;
        }
    }
}
