//! EHR endpoints: a directory drop, an in-memory simulator that can be
//! served over MLLP/TCP, and the matching TCP client.
//!
//! Socket protocol, one MLLP frame per message:
//! - client `PULL 2025-W02` -> server sends one frame per stored message for
//!   that week, then an empty frame;
//! - client sends an ER7 message -> server stores it and answers with an ACK
//!   (`MSA|AA|<control id>`, or `AE` when the message does not parse).

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;
use std::{fs, io};

use chrono::Utc;
use lhs_core::IsoWeekId;
use parking_lot::Mutex;

use crate::message::{parse_er7, serialize_er7, EncodingChars, Field, Hl7Message, Segment};
use crate::mllp;
use crate::oru::msh_fields;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndpointError {
    #[error("EHR endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("EHR rejected message: {0}")]
    Rejected(String),
}

pub trait EhrEndpoint: Send + Sync {
    /// Every message the EHR holds for `week`, in delivery order.
    fn pull_week(&self, week: IsoWeekId) -> Result<Vec<Vec<u8>>, EndpointError>;
    fn push_result(&self, er7: &[u8]) -> Result<(), EndpointError>;
}

/// `<root>/outbound/<YYYY-Www>/*.hl7` holds weekly extracts (one raw ER7
/// message or a run of MLLP frames per file); pushed results land in
/// `<root>/inbound/`.
#[derive(Debug, Clone)]
pub struct DirEhr {
    pub root: PathBuf,
}

impl DirEhr {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirEhr { root: root.into() }
    }

    pub fn week_dir(&self, week: IsoWeekId) -> PathBuf {
        self.root.join("outbound").join(week.to_string())
    }

    pub fn plant(&self, week: IsoWeekId, name: &str, er7: &[u8]) -> io::Result<()> {
        let dir = self.week_dir(week);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(name), er7)
    }

    pub fn inbound(&self) -> io::Result<Vec<Vec<u8>>> {
        read_sorted(&self.root.join("inbound"))
    }
}

fn read_sorted(dir: &Path) -> io::Result<Vec<Vec<u8>>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "hl7"))
        .collect();
    paths.sort();
    paths.iter().map(fs::read).collect()
}

impl EhrEndpoint for DirEhr {
    fn pull_week(&self, week: IsoWeekId) -> Result<Vec<Vec<u8>>, EndpointError> {
        if !self.root.is_dir() {
            return Err(EndpointError::Unavailable(format!("{} is not a directory", self.root.display())));
        }
        let unavailable = |e: io::Error| EndpointError::Unavailable(e.to_string());
        let mut out = Vec::new();
        for file in read_sorted(&self.week_dir(week)).map_err(unavailable)? {
            if file.first() == Some(&mllp::START) {
                out.extend(mllp::split_frames(&file).map_err(unavailable)?);
            } else {
                out.push(file);
            }
        }
        Ok(out)
    }

    fn push_result(&self, er7: &[u8]) -> Result<(), EndpointError> {
        let dir = self.root.join("inbound");
        let unavailable = |e: io::Error| EndpointError::Unavailable(e.to_string());
        fs::create_dir_all(&dir).map_err(unavailable)?;
        let n = fs::read_dir(&dir).map_err(unavailable)?.count();
        fs::write(dir.join(format!("{n:08}.hl7")), er7).map_err(unavailable)
    }
}

#[derive(Debug, Default)]
struct SimState {
    outbound: std::collections::BTreeMap<IsoWeekId, Vec<Vec<u8>>>,
    inbound: Vec<Vec<u8>>,
}

/// In-memory EHR used by tests and desk-scale runs.
#[derive(Debug, Clone, Default)]
pub struct EhrSimulator {
    state: Arc<Mutex<SimState>>,
}

impl EhrSimulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&self, week: IsoWeekId, er7: Vec<u8>) {
        self.state.lock().outbound.entry(week).or_default().push(er7);
    }

    pub fn received(&self) -> Vec<Vec<u8>> {
        self.state.lock().inbound.clone()
    }

    pub fn serve(&self, addr: impl ToSocketAddrs) -> io::Result<SimulatorServer> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let sim = self.clone();
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = conn {
                    let sim = sim.clone();
                    std::thread::spawn(move || {
                        let _ = sim.handle(stream);
                    });
                }
            }
        });
        Ok(SimulatorServer { addr: local, stop, handle: Some(handle) })
    }

    fn handle(&self, stream: TcpStream) -> io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        while let Some(frame) = mllp::read_frame(&mut reader)? {
            if let Some(week) = frame.strip_prefix(b"PULL ") {
                let week = std::str::from_utf8(week).ok().and_then(|w| w.trim().parse::<IsoWeekId>().ok());
                let msgs = week.and_then(|w| self.state.lock().outbound.get(&w).cloned()).unwrap_or_default();
                for m in msgs {
                    mllp::write_frame(&mut writer, &m)?;
                }
                mllp::write_frame(&mut writer, b"")?;
            } else {
                let ack = match parse_er7(&frame) {
                    Ok(msg) => {
                        self.state.lock().inbound.push(frame.clone());
                        ack_for(msg.control_id(), "AA")
                    }
                    Err(_) => ack_for("", "AE"),
                };
                mllp::write_frame(&mut writer, &ack)?;
            }
        }
        Ok(())
    }
}

impl EhrEndpoint for EhrSimulator {
    fn pull_week(&self, week: IsoWeekId) -> Result<Vec<Vec<u8>>, EndpointError> {
        Ok(self.state.lock().outbound.get(&week).cloned().unwrap_or_default())
    }

    fn push_result(&self, er7: &[u8]) -> Result<(), EndpointError> {
        parse_er7(er7).map_err(|e| EndpointError::Rejected(e.to_string()))?;
        self.state.lock().inbound.push(er7.to_vec());
        Ok(())
    }
}

fn ack_for(control_id: &str, code: &str) -> Vec<u8> {
    let now = Utc::now().fixed_offset();
    let mut msg = Hl7Message::new(EncodingChars::default(), msh_fields(&["ACK"], &now, control_id));
    msg.segments.push(Segment::new("MSA", vec![Field::value(code), Field::value(control_id)]));
    serialize_er7(&msg).expect("ack is well formed")
}

pub struct SimulatorServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl SimulatorServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for SimulatorServer {
    fn drop(&mut self) {
        if self.handle.is_some() {
            self.stop_inner();
        }
    }
}

/// Client for a simulator (or any EHR speaking the same protocol).
#[derive(Debug, Clone)]
pub struct TcpEhr {
    pub addr: String,
    pub timeout: Duration,
}

impl TcpEhr {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpEhr { addr: addr.into(), timeout: Duration::from_secs(5) }
    }

    fn connect(&self) -> Result<TcpStream, EndpointError> {
        let unavailable = |e: io::Error| EndpointError::Unavailable(format!("{}: {e}", self.addr));
        let addr = self
            .addr
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| EndpointError::Unavailable(format!("{} does not resolve", self.addr)))?;
        let s = TcpStream::connect_timeout(&addr, self.timeout).map_err(unavailable)?;
        s.set_read_timeout(Some(self.timeout)).map_err(unavailable)?;
        Ok(s)
    }
}

impl EhrEndpoint for TcpEhr {
    fn pull_week(&self, week: IsoWeekId) -> Result<Vec<Vec<u8>>, EndpointError> {
        let s = self.connect()?;
        let unavailable = |e: io::Error| EndpointError::Unavailable(e.to_string());
        let mut w = s.try_clone().map_err(unavailable)?;
        mllp::write_frame(&mut w, format!("PULL {week}").as_bytes()).map_err(unavailable)?;
        let mut r = BufReader::new(s);
        let mut out = Vec::new();
        loop {
            match mllp::read_frame(&mut r).map_err(unavailable)? {
                Some(f) if f.is_empty() => break,
                Some(f) => out.push(f),
                None => return Err(EndpointError::Unavailable("connection closed mid-transfer".into())),
            }
        }
        let _ = w.shutdown(Shutdown::Both);
        Ok(out)
    }

    fn push_result(&self, er7: &[u8]) -> Result<(), EndpointError> {
        let s = self.connect()?;
        let unavailable = |e: io::Error| EndpointError::Unavailable(e.to_string());
        let mut w = s.try_clone().map_err(unavailable)?;
        mllp::write_frame(&mut w, er7).map_err(unavailable)?;
        let mut r = BufReader::new(s);
        let ack = mllp::read_frame(&mut r)
            .map_err(unavailable)?
            .ok_or_else(|| EndpointError::Unavailable("no ACK".into()))?;
        let _ = w.shutdown(Shutdown::Both);
        let ack = parse_er7(&ack).map_err(|e| EndpointError::Rejected(format!("bad ACK: {e}")))?;
        let code = ack.segments_with_id("MSA").next().map(|s| s.value(1).to_string());
        match code.as_deref() {
            Some("AA") => Ok(()),
            other => Err(EndpointError::Rejected(format!("ACK code {other:?}"))),
        }
    }
}
