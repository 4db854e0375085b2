//! Blocking newline-delimited JSON client, used by tests and scripted trainers.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::protocol::{ControlVerb, Inbound, Outbound};
use crate::error::{Error, Result};

pub struct LineClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: String,
}

impl LineClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { writer: stream.try_clone()?, reader: BufReader::new(stream), partial: String::new() })
    }

    pub fn send(&mut self, msg: &Inbound) -> Result<()> {
        self.send_raw(&serde_json::to_string(msg)?)
    }

    pub fn send_raw(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn feedback(&mut self, sign: i8) -> Result<()> {
        self.send(&Inbound::Feedback { sign, client_time: None })
    }

    pub fn control(&mut self, verb: ControlVerb) -> Result<()> {
        self.send(&Inbound::Control { verb })
    }

    /// Next message, or `None` on timeout or a closed connection.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Outbound>> {
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        match self.reader.read_line(&mut self.partial) {
            Ok(0) => Ok(None),
            Ok(_) if !self.partial.ends_with('\n') => Ok(None),
            Ok(_) => {
                let line = std::mem::take(&mut self.partial);
                serde_json::from_str(line.trim())
                    .map(Some)
                    .map_err(|e| Error::SessionLog(format!("bad server line {line:?}: {e}")))
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Reads until `pred` matches or `timeout` elapses.
    pub fn recv_until(
        &mut self,
        timeout: Duration,
        mut pred: impl FnMut(&Outbound) -> bool,
    ) -> Result<Option<Outbound>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            match self.recv_timeout(left)? {
                Some(msg) if pred(&msg) => return Ok(Some(msg)),
                Some(_) => {}
                None => {
                    if Instant::now() >= deadline {
                        return Ok(None);
                    }
                }
            }
        }
    }
}
