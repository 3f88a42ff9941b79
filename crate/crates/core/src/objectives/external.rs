//! Objectives evaluated by an external worker process.
//!
//! The worker reads one JSON object per line on stdin, `{"x": [..]}` with the
//! configuration in external coordinates, and answers with one line
//! `{"y": <cost>}` on stdout. Evaluations are serialized over a single
//! worker; parallel trials spawn independent workers.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::space::SearchSpace;

/// One hour per evaluation.
pub const DEFAULT_TIMEOUT_SECS: f64 = 3600.0;

/// Everything needed to launch an external objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub space: SearchSpace,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
}

#[derive(Serialize)]
struct Request<'a> {
    x: &'a [f64],
}

#[derive(Deserialize)]
struct Response {
    y: Option<f64>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

pub struct ExternalObjective {
    name: String,
    space: SearchSpace,
    timeout: Duration,
    worker: Mutex<Worker>,
}

impl ExternalObjective {
    pub fn spawn(name: impl Into<String>, spec: &ExternalSpec) -> Result<Self> {
        let (program, args) = spec
            .command
            .split_first()
            .ok_or_else(|| Error::InvalidInput("external objective needs a command".into()))?;
        let timeout_secs = spec.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS);
        if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
            return Err(Error::InvalidInput(format!("invalid timeout {timeout_secs}")));
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalObjective {
            name: name.into(),
            space: spec.space.clone(),
            timeout: Duration::from_secs_f64(timeout_secs),
            worker: Mutex::new(Worker { child, stdin, lines: rx }),
        })
    }
}

impl Objective for ExternalObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let fail = |reason: String| Error::Evaluation { config: x.to_vec(), reason };
        let mut worker = self.worker.lock().map_err(|_| fail("worker lock poisoned".into()))?;
        let mut line = serde_json::to_string(&Request { x })?;
        line.push('\n');
        worker
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| worker.stdin.flush())
            .map_err(|e| fail(format!("cannot write to worker: {e}")))?;
        let reply = match worker.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(fail(format!("cannot read from worker: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(fail(format!("worker did not answer within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => return Err(fail("worker exited".into())),
        };
        let parsed: Response = serde_json::from_str(reply.trim())
            .map_err(|e| fail(format!("malformed response {reply:?}: {e}")))?;
        match parsed.y {
            Some(y) if y.is_finite() => Ok(y),
            _ => Err(fail(format!("response {reply:?} carries no finite cost"))),
        }
    }

    fn has_ground_truth(&self) -> bool {
        false
    }
}

impl Drop for ExternalObjective {
    fn drop(&mut self) {
        if let Ok(worker) = self.worker.get_mut() {
            let _ = worker.child.kill();
            let _ = worker.child.wait();
        }
    }
}
