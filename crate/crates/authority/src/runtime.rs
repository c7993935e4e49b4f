//! In-process hosting of services: bounded worker pools standing in for
//! server processes, and a balancer in front of replicas.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, Sender, TrySendError};
use parking_lot::Mutex;
use vpki_core::messages::{OcspRequest, PseudonymRequest};
use vpki_core::rpc::Service;
use vpki_core::wire::{self, msg, Transport, TransportError};
use vpki_core::Canonical;

#[derive(Debug, Clone, Copy)]
pub struct EndpointConfig {
    pub workers: usize,
    /// Requests waiting beyond this are refused with `Overloaded`.
    pub queue: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self { workers: 4, queue: 1024 }
    }
}

struct Job {
    frame: Vec<u8>,
    reply: Sender<Vec<u8>>,
}

#[derive(Debug, Default)]
pub struct EndpointStats {
    pub served: AtomicU64,
    pub refused: AtomicU64,
    pub dropped: AtomicU64,
}

/// A service behind a fixed pool of worker threads and a bounded queue.
pub struct LocalEndpoint {
    name: String,
    tx: Mutex<Option<Sender<Job>>>,
    alive: Arc<AtomicBool>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    stats: Arc<EndpointStats>,
}

impl LocalEndpoint {
    pub fn start(name: impl Into<String>, service: Arc<dyn Service>, config: EndpointConfig) -> Arc<Self> {
        let name = name.into();
        let (tx, rx) = channel::bounded::<Job>(config.queue);
        let alive = Arc::new(AtomicBool::new(true));
        let stats = Arc::new(EndpointStats::default());
        let workers = (0..config.workers.max(1))
            .map(|i| {
                let rx: Receiver<Job> = rx.clone();
                let service = service.clone();
                let alive = alive.clone();
                let stats = stats.clone();
                std::thread::Builder::new()
                    .name(format!("{name}-{i}"))
                    .spawn(move || {
                        for job in rx.iter() {
                            if !alive.load(Ordering::SeqCst) {
                                stats.dropped.fetch_add(1, Ordering::Relaxed);
                                continue;
                            }
                            let resp = service.handle(&job.frame);
                            // A crash mid-request loses the response.
                            if alive.load(Ordering::SeqCst) {
                                stats.served.fetch_add(1, Ordering::Relaxed);
                                let _ = job.reply.send(resp);
                            } else {
                                stats.dropped.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                    })
                    .expect("spawn worker")
            })
            .collect();
        Arc::new(Self {
            name,
            tx: Mutex::new(Some(tx)),
            alive,
            workers: Mutex::new(workers),
            stats,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> &EndpointStats {
        &self.stats
    }

    /// Simulates a crash: queued and in-flight requests get no response and
    /// new ones find nobody listening.
    pub fn kill(&self) {
        self.alive.store(false, Ordering::SeqCst);
    }

    /// Stops accepting work and joins the workers.
    pub fn shutdown(&self) {
        self.tx.lock().take();
        for h in self.workers.lock().drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for LocalEndpoint {
    fn drop(&mut self) {
        self.tx.get_mut().take();
    }
}

impl Transport for LocalEndpoint {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        if !self.is_alive() {
            return Err(TransportError::Unreachable(self.name.clone()));
        }
        let (reply_tx, reply_rx) = channel::bounded(1);
        let job = Job {
            frame: request.to_vec(),
            reply: reply_tx,
        };
        let sent = match &*self.tx.lock() {
            Some(tx) => tx.try_send(job),
            None => return Err(TransportError::Unreachable(self.name.clone())),
        };
        match sent {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                self.stats.refused.fetch_add(1, Ordering::Relaxed);
                return Err(TransportError::Overloaded);
            }
            Err(TrySendError::Disconnected(_)) => return Err(TransportError::Unreachable(self.name.clone())),
        }
        reply_rx.recv().map_err(|_| TransportError::Closed)
    }
}

/// Spreads requests over replicas of one authority. Pseudonym requests are
/// pinned by ticket so a replayed ticket reaches the replica that saw it,
/// and status queries go to the replica whose prefix the serial carries.
pub struct Balancer {
    replicas: Vec<Arc<dyn Transport>>,
    /// Milliseconds since `epoch` before which a replica is skipped.
    down_until: Vec<AtomicU64>,
    next: AtomicUsize,
    retry_after: Duration,
    epoch: Instant,
}

impl Balancer {
    pub fn new(replicas: Vec<Arc<dyn Transport>>, retry_after: Duration) -> Self {
        assert!(!replicas.is_empty(), "balancer needs at least one replica");
        Self {
            down_until: replicas.iter().map(|_| AtomicU64::new(0)).collect(),
            replicas,
            next: AtomicUsize::new(0),
            retry_after,
            epoch: Instant::now(),
        }
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn mark_down(&self, i: usize) {
        let until = self.now_ms() + self.retry_after.as_millis() as u64;
        self.down_until[i].store(until, Ordering::SeqCst);
    }

    pub fn is_marked_down(&self, i: usize) -> bool {
        self.down_until[i].load(Ordering::SeqCst) > self.now_ms()
    }

    fn preferred(&self, request: &[u8]) -> usize {
        let n = self.replicas.len();
        match pin_key(request) {
            Some(Pin::Ticket(h)) => return (h % n as u64) as usize,
            Some(Pin::Replica(r)) if (r as usize) < n => return r as usize,
            _ => {}
        }
        self.next.fetch_add(1, Ordering::Relaxed) % n
    }
}

enum Pin {
    Ticket(u64),
    Replica(u64),
}

fn pin_key(request: &[u8]) -> Option<Pin> {
    let env = wire::deframe(request).ok()?;
    match env.msg_type {
        msg::PSNYM_REQ => {
            let sealed = wire::open(&env).ok()?;
            let req = PseudonymRequest::from_canonical_bytes(&sealed.body).ok()?;
            let mut h = DefaultHasher::new();
            req.ticket.issuer.hash(&mut h);
            req.ticket.serial.hash(&mut h);
            Some(Pin::Ticket(h.finish()))
        }
        msg::OCSP_REQ => {
            let sealed = wire::open(&env).ok()?;
            let req = OcspRequest::from_canonical_bytes(&sealed.body).ok()?;
            Some(Pin::Replica(req.serial.0 >> crate::pca::REPLICA_SHIFT))
        }
        _ => None,
    }
}

impl Transport for Balancer {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let n = self.replicas.len();
        let first = self.preferred(request);
        let order: Vec<usize> = (0..n).map(|k| (first + k) % n).collect();
        let healthy: Vec<usize> = order.iter().copied().filter(|&i| !self.is_marked_down(i)).collect();
        let candidates = if healthy.is_empty() { order } else { healthy };
        let mut last = TransportError::Unreachable("no replica".into());
        for i in candidates {
            match self.replicas[i].exchange(request) {
                Ok(resp) => return Ok(resp),
                // Never delivered, so trying the next replica is safe.
                Err(e @ TransportError::Unreachable(_)) => {
                    self.mark_down(i);
                    last = e;
                }
                Err(e @ (TransportError::Closed | TransportError::Io(_))) => {
                    self.mark_down(i);
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}
