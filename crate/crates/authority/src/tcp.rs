//! Length-delimited frames over TCP.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use vpki_core::rpc::Service;
use vpki_core::wire::{payload_len, Transport, TransportError, HEADER_LEN};

/// Reads one frame; `None` on clean end of stream.
pub fn read_frame(stream: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match stream.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => got += n,
        }
    }
    let len = payload_len(&header).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut frame = header.to_vec();
    frame.resize(HEADER_LEN + len, 0);
    stream.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(Some(frame))
}

pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpServer {
    /// Serves `service` on `addr`, one thread per connection.
    pub fn bind(addr: impl ToSocketAddrs, service: Arc<dyn Service>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let acceptor = std::thread::Builder::new()
            .name(format!("accept-{addr}"))
            .spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let service = service.clone();
                    let flag = flag.clone();
                    std::thread::spawn(move || serve_connection(stream, &*service, &flag));
                }
            })?;
        Ok(Self {
            addr,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server is stopped from another thread.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection(mut stream: TcpStream, service: &dyn Service, stop: &AtomicBool) {
    let _ = stream.set_nodelay(true);
    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                log::debug!("dropping connection: {e}");
                break;
            }
        };
        let resp = service.handle(&frame);
        if stream.write_all(&resp).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

/// Client side: reuses idle connections to one server address.
pub struct TcpTransport {
    addr: SocketAddr,
    timeout: Duration,
    idle: Mutex<Vec<TcpStream>>,
}

impl TcpTransport {
    pub fn new(addr: SocketAddr, timeout: Duration) -> Self {
        Self {
            addr,
            timeout,
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn resolve(addr: &str, timeout: Duration) -> io::Result<Self> {
        let sa = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, addr.to_string()))?;
        Ok(Self::new(sa, timeout))
    }

    fn connect(&self) -> Result<TcpStream, TransportError> {
        let s = TcpStream::connect_timeout(&self.addr, self.timeout)
            .map_err(|e| TransportError::Unreachable(format!("{}: {e}", self.addr)))?;
        let _ = s.set_nodelay(true);
        let _ = s.set_read_timeout(Some(self.timeout));
        let _ = s.set_write_timeout(Some(self.timeout));
        Ok(s)
    }

    /// Pops an idle connection that is still open. A readable idle socket
    /// means EOF or stray bytes; either way it is discarded.
    fn take_idle(&self) -> Option<TcpStream> {
        let mut idle = self.idle.lock();
        while let Some(s) = idle.pop() {
            if s.set_nonblocking(true).is_err() {
                continue;
            }
            let mut probe = [0u8; 1];
            let open = matches!(s.peek(&mut probe), Err(e) if e.kind() == io::ErrorKind::WouldBlock);
            if open && s.set_nonblocking(false).is_ok() {
                return Some(s);
            }
        }
        None
    }

    fn round_trip(stream: &mut TcpStream, request: &[u8]) -> io::Result<Vec<u8>> {
        stream.write_all(request)?;
        read_frame(stream)?.ok_or_else(|| io::ErrorKind::UnexpectedEof.into())
    }
}

impl Transport for TcpTransport {
    /// Sends the request at most once. Pooled connections the server has
    /// closed are detected before use, so a request is never silently resent.
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let mut stream = match self.take_idle() {
            Some(s) => s,
            None => self.connect()?,
        };
        match Self::round_trip(&mut stream, request) {
            Ok(resp) => {
                self.idle.lock().push(stream);
                Ok(resp)
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(TransportError::Closed),
            Err(e) => Err(TransportError::Io(e.to_string())),
        }
    }
}
