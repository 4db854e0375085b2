//! Paced live session server.
//!
//! One pacing thread owns the trial. Connection threads parse inbound
//! messages onto a bounded queue that the pacer drains once per step, just
//! before the step is taken, so every feedback lands on exactly one step.
//! Each client has its own outbound channel; the pacer fans out serialized
//! snapshots. A connection whose first bytes are `GET` is upgraded to
//! WebSocket, anything else speaks newline-delimited JSON.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use log::{debug, info, warn};
use tungstenite::Message;

use super::protocol::{ControlVerb, Inbound, Outbound};
use super::session_log::{LogEntry, SessionLogWriter};
use crate::config::{LiveConfig, TrialConfig};
use crate::error::{Error, Result};
use crate::harness::trial::{StepLog, Trial, TrialRecord};

const INBOUND_CAPACITY: usize = 1024;
const POLL: Duration = Duration::from_millis(20);

enum Event {
    Connected { id: usize, tx: Sender<String> },
    Disconnected { id: usize },
    Message { id: usize, msg: Inbound },
}

#[derive(Debug)]
pub struct SessionOutcome {
    /// Live trial as it ended, with weights and the per-step log.
    pub record: TrialRecord,
    pub log_path: PathBuf,
}

pub struct LiveSession {
    listener: TcpListener,
    config: TrialConfig,
    period: Duration,
    log_path: PathBuf,
}

impl LiveSession {
    pub fn bind(config: TrialConfig, live: &LiveConfig, log_path: &Path) -> Result<Self> {
        config.validate()?;
        let listener = TcpListener::bind((live.bind.as_str(), live.port))?;
        Ok(Self { listener, config, period: Duration::from_millis(live.period_ms), log_path: log_path.to_path_buf() })
    }

    pub fn with_period(mut self, period: Duration) -> Self {
        self.period = period;
        self
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Starts accepting clients and pacing. The session ends when the trial
    /// completes or [`SessionHandle::shutdown`] is called.
    pub fn spawn(self) -> Result<SessionHandle> {
        let addr = self.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let (events_tx, events_rx) = bounded(INBOUND_CAPACITY);
        let log = SessionLogWriter::create(&self.log_path, &self.config)?;

        self.listener.set_nonblocking(true)?;
        let acceptor = {
            let shutdown = shutdown.clone();
            let listener = self.listener;
            thread::spawn(move || accept_loop(listener, events_tx, shutdown))
        };
        let pacer = Pacer {
            digest: self.config.digest(),
            trial: Trial::new_external(self.config.clone())?,
            config: self.config,
            period: self.period,
            log,
            clients: BTreeMap::new(),
            running: true,
            pending: Vec::new(),
            steps: Vec::new(),
        };
        let worker = {
            let shutdown = shutdown.clone();
            let log_path = self.log_path;
            thread::spawn(move || {
                let result = pacer.run(&events_rx, &shutdown);
                shutdown.store(true, Ordering::SeqCst);
                if acceptor.join().is_err() {
                    warn!("acceptor thread panicked");
                }
                result.map(|record| SessionOutcome { record, log_path })
            })
        };
        Ok(SessionHandle { addr, shutdown, worker })
    }
}

pub struct SessionHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    worker: JoinHandle<Result<SessionOutcome>>,
}

impl SessionHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.worker.is_finished()
    }

    /// Waits for the session to end on its own.
    pub fn wait(self) -> Result<SessionOutcome> {
        self.worker.join().map_err(|_| Error::SessionLog("session thread panicked".into()))?
    }

    /// Stops the session and waits for it.
    pub fn stop(self) -> Result<SessionOutcome> {
        self.shutdown();
        self.wait()
    }
}

struct Pacer {
    config: TrialConfig,
    digest: String,
    trial: Trial,
    period: Duration,
    log: SessionLogWriter,
    clients: BTreeMap<usize, Sender<String>>,
    running: bool,
    pending: Vec<(i8, Option<f64>)>,
    steps: Vec<StepLog>,
}

impl Pacer {
    fn active(&self) -> bool {
        self.running && !self.clients.is_empty() && !self.trial.is_done()
    }

    fn status(&self) -> Outbound {
        Outbound::Status {
            running: self.active(),
            config_digest: self.digest.clone(),
            step: self.trial.steps_taken(),
            clients: self.clients.len(),
            finished: self.trial.is_done(),
        }
    }

    fn broadcast(&mut self, msg: &Outbound) {
        let line = msg.to_line();
        self.clients.retain(|_, tx| tx.send(line.clone()).is_ok());
    }

    fn send_to(&self, id: usize, msg: &Outbound) {
        if let Some(tx) = self.clients.get(&id) {
            let _ = tx.send(msg.to_line());
        }
    }

    fn handle(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Connected { id, tx } => {
                debug!("client {id} connected");
                self.clients.insert(id, tx);
                let status = self.status();
                self.broadcast(&status);
            }
            Event::Disconnected { id } => {
                debug!("client {id} disconnected");
                self.clients.remove(&id);
                let status = self.status();
                self.broadcast(&status);
            }
            Event::Message { id, msg: Inbound::Feedback { sign, client_time } } => {
                if self.trial.is_done() {
                    self.send_to(id, &Outbound::error("session finished; feedback ignored"));
                } else {
                    self.pending.push((sign, client_time));
                }
            }
            Event::Message { msg: Inbound::Control { verb }, .. } => {
                let step = self.trial.steps_taken();
                self.log.append(&LogEntry::Control { step, verb })?;
                match verb {
                    ControlVerb::Start => self.running = true,
                    ControlVerb::Pause => self.running = false,
                    ControlVerb::Reset => {
                        self.trial = Trial::new_external(self.config.clone())?;
                        self.pending.clear();
                        self.steps.clear();
                    }
                }
                let status = self.status();
                self.broadcast(&status);
            }
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let step = self.trial.steps_taken();
        let applied: f64 = self.pending.iter().map(|&(s, _)| f64::from(s)).sum();
        let events = self.pending.len();
        for (sign, client_time) in std::mem::take(&mut self.pending) {
            self.log.append(&LogEntry::Feedback { step, sign, client_time })?;
        }
        let row = self.trial.step(applied, None)?;
        self.steps.push(row);
        let tail = self.trial.tail_mae(self.config.tail_window).unwrap_or(f64::NAN);
        self.broadcast(&Outbound::State {
            step: row.step,
            theta_agent: row.theta_agent,
            theta_target: row.theta_target,
            r_mdp: row.r_mdp,
            h_accumulator: row.h_accumulator,
            tail_mae_so_far: tail,
            feedback_applied: applied,
            feedback_events: events,
        });
        Ok(())
    }

    fn run(mut self, events: &Receiver<Event>, shutdown: &AtomicBool) -> Result<TrialRecord> {
        info!("live session {} pacing every {:?}", self.digest, self.period);
        let mut next_tick = Instant::now();
        let mut divergence = None;
        while !shutdown.load(Ordering::SeqCst) && !self.trial.is_done() {
            if !self.active() {
                match events.recv_timeout(POLL) {
                    Ok(ev) => self.handle(ev)?,
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                next_tick = Instant::now();
                continue;
            }
            let now = Instant::now();
            if next_tick > now {
                thread::sleep(next_tick - now);
            }
            while let Ok(ev) = events.try_recv() {
                self.handle(ev)?;
            }
            if !self.active() {
                continue;
            }
            match self.step() {
                Ok(()) => {}
                Err(e @ Error::Diverged { .. }) => {
                    self.broadcast(&Outbound::error(e.to_string()));
                    divergence = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
            next_tick += self.period;
        }
        let steps = self.trial.steps_taken();
        self.log.append(&LogEntry::End { steps })?;
        let status = self.status();
        self.broadcast(&status);
        self.clients.clear();
        Ok(self.trial.into_record(divergence, Some(self.steps), true))
    }
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, shutdown: Arc<AtomicBool>) {
    let next_id = AtomicUsize::new(0);
    let mut connections = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                debug!("accepted {peer} as client {id}");
                let events = events.clone();
                let shutdown = shutdown.clone();
                connections.push(thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, id, &events, &shutdown) {
                        debug!("client {id}: {e}");
                    }
                    let _ = events.send(Event::Disconnected { id });
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for c in connections {
        let _ = c.join();
    }
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn serve_connection(stream: TcpStream, id: usize, events: &Sender<Event>, shutdown: &AtomicBool) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut head = [0u8; 3];
    let is_ws = matches!(stream.peek(&mut head), Ok(3) if &head == b"GET");
    if is_ws {
        serve_websocket(stream, id, events, shutdown)
    } else {
        serve_lines(stream, id, events, shutdown)
    }
}

fn dispatch(text: &str, id: usize, events: &Sender<Event>, reply: &Sender<String>) -> bool {
    if text.trim().is_empty() {
        return true;
    }
    match Inbound::parse(text) {
        Ok(msg) => events.send(Event::Message { id, msg }).is_ok(),
        Err(e) => reply.send(Outbound::error(e).to_line()).is_ok(),
    }
}

fn serve_lines(stream: TcpStream, id: usize, events: &Sender<Event>, shutdown: &AtomicBool) -> Result<()> {
    stream.set_read_timeout(Some(POLL * 5))?;
    let (tx, rx) = unbounded::<String>();
    let mut writer = stream.try_clone()?;
    let flusher = thread::spawn(move || {
        for line in rx {
            if writer.write_all(format!("{line}\n").as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.flush();
    });
    if events.send(Event::Connected { id, tx: tx.clone() }).is_err() {
        return Ok(());
    }

    let mut reader = stream;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    while !shutdown.load(Ordering::SeqCst) {
        match reader.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                while let Some(pos) = buf.iter().position(|&b| b == b'\n') {
                    let line: Vec<u8> = buf.drain(..=pos).collect();
                    let text = String::from_utf8_lossy(&line);
                    if !dispatch(&text, id, events, &tx) {
                        return Ok(());
                    }
                }
            }
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e.into()),
        }
    }
    drop(tx);
    let _ = flusher.join();
    Ok(())
}

fn serve_websocket(stream: TcpStream, id: usize, events: &Sender<Event>, shutdown: &AtomicBool) -> Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| Error::SessionLog(format!("websocket handshake: {e}")))?;
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(5)))?;
    let (tx, rx) = unbounded::<String>();
    if events.send(Event::Connected { id, tx: tx.clone() }).is_err() {
        return Ok(());
    }
    let ws_err = |e: tungstenite::Error| Error::SessionLog(format!("websocket: {e}"));
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                if !dispatch(&text, id, events, &tx) {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(ws_err(e)),
        }
        while let Ok(line) = rx.try_recv() {
            ws.send(Message::Text(line)).map_err(ws_err)?;
        }
        if shutdown.load(Ordering::SeqCst) && rx.is_empty() {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
    }
    Ok(())
}
