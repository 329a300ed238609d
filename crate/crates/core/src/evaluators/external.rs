//! Line-delimited JSON protocol for out-of-process simulators.
//!
//! The evaluator launches `command` once per worker and keeps it running.
//! For each design it writes one request line to the process's stdin and
//! reads one response line from its stdout:
//!
//! ```text
//! > {"id":7,"schema_version":1,"params":{"cc_pf":1.5,"nf1":12.0}}
//! < {"id":7,"metrics":{"gain":312.5,"ibias_ua":140.0}}
//! < {"id":8,"error":"simulation did not converge"}
//! ```
//!
//! Timeouts, early exits and unparsable lines kill the worker and retry the
//! same request on a fresh process; error records and missing metrics do not.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EvalError, Evaluator};
use crate::domain::{DesignPoint, DesignSpace, Measurement};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEvaluatorSpec {
    /// Program and arguments.
    pub command: Vec<String>,
    #[serde(default = "default_version")]
    pub schema_version: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_version() -> u32 {
    PROTOCOL_VERSION
}
fn default_timeout() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    2
}
fn default_workers() -> usize {
    1
}

impl ExternalEvaluatorSpec {
    pub fn new(command: Vec<String>) -> Self {
        ExternalEvaluatorSpec {
            command,
            schema_version: PROTOCOL_VERSION,
            timeout_ms: default_timeout(),
            max_retries: default_retries(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub schema_version: u32,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn launch(command: &[String]) -> Result<Worker, EvalError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| EvalError::Invalid("external evaluator command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(EvalError::Launch)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }

    fn call(&mut self, line: &str, timeout: Duration) -> Result<String, EvalError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EvalError::Exited(format!("write failed: {e}")))?;
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(l)) => Ok(l),
            Ok(Err(e)) => Err(EvalError::Exited(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout(timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(EvalError::Exited(match status {
                    Some(s) => format!("process ended with {s}"),
                    None => "stdout closed".into(),
                }))
            }
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client side of the protocol, holding up to `workers` simulator processes.
pub struct ExternalEvaluator {
    spec: ExternalEvaluatorSpec,
    metrics: Vec<String>,
    workers: Vec<Option<Worker>>,
    next_id: u64,
}

impl ExternalEvaluator {
    /// `metrics` lists the names every response must provide.
    pub fn new(spec: ExternalEvaluatorSpec, metrics: Vec<String>) -> Result<Self, EvalError> {
        if spec.command.is_empty() {
            return Err(EvalError::Invalid("external evaluator command is empty".into()));
        }
        if spec.schema_version != PROTOCOL_VERSION {
            return Err(EvalError::Invalid(format!(
                "unsupported protocol version {} (this build speaks {PROTOCOL_VERSION})",
                spec.schema_version
            )));
        }
        let workers = (0..spec.workers.max(1)).map(|_| None).collect();
        Ok(ExternalEvaluator {
            spec,
            metrics,
            workers,
            next_id: 1,
        })
    }

    pub fn request(&self, id: u64, point: &DesignPoint, space: &DesignSpace) -> Result<Request, EvalError> {
        let values = space.values(point).map_err(|e| EvalError::Invalid(e.to_string()))?;
        Ok(Request {
            id,
            schema_version: self.spec.schema_version,
            params: space
                .params()
                .iter()
                .zip(values)
                .map(|(p, v)| (p.name.clone(), v))
                .collect(),
        })
    }

    fn call_with_retries(
        spec: &ExternalEvaluatorSpec,
        metrics: &[String],
        slot: &mut Option<Worker>,
        req: &Request,
    ) -> Result<Measurement, EvalError> {
        let line = serde_json::to_string(req).map_err(|e| EvalError::Invalid(e.to_string()))?;
        let timeout = Duration::from_millis(spec.timeout_ms);
        let mut attempt = 0;
        loop {
            let result = (|| {
                if slot.is_none() {
                    *slot = Some(Worker::launch(&spec.command)?);
                }
                let raw = slot.as_mut().expect("worker launched").call(&line, timeout)?;
                parse_response(&raw, req.id, metrics)
            })();
            match result {
                Err(e) if e.is_transient() && attempt < spec.max_retries => {
                    log::warn!("request {} failed ({e}); retrying on a fresh process", req.id);
                    *slot = None;
                    attempt += 1;
                }
                Err(e) => {
                    if e.is_transient() {
                        *slot = None;
                    }
                    return Err(e);
                }
                Ok(m) => return Ok(m),
            }
        }
    }
}

/// Decodes one response line for request `id`, keeping only `metrics`.
pub fn parse_response(raw: &str, id: u64, metrics: &[String]) -> Result<Measurement, EvalError> {
    let resp: Response =
        serde_json::from_str(raw.trim()).map_err(|e| EvalError::Malformed(format!("{e}: {raw:?}")))?;
    if resp.id != id {
        return Err(EvalError::Malformed(format!("response id {} for request {id}", resp.id)));
    }
    match (resp.metrics, resp.error) {
        (_, Some(err)) => Err(EvalError::Remote(err)),
        (Some(values), None) => {
            let mut m = Measurement::new();
            for name in metrics {
                match values.get(name) {
                    Some(v) if v.is_finite() => {
                        m.values.insert(name.clone(), *v);
                    }
                    Some(v) => return Err(EvalError::Schema(format!("metric `{name}` is {v}"))),
                    None => return Err(EvalError::Schema(format!("metric `{name}` is missing"))),
                }
            }
            Ok(m)
        }
        (None, None) => Err(EvalError::Schema("response has neither metrics nor error".into())),
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&mut self, point: &DesignPoint, space: &DesignSpace) -> Result<Measurement, EvalError> {
        let req = self.request(self.next_id, point, space)?;
        self.next_id += 1;
        Self::call_with_retries(&self.spec, &self.metrics, &mut self.workers[0], &req)
    }

    /// Spreads the batch round-robin over the worker processes.
    fn evaluate_batch(&mut self, points: &[DesignPoint], space: &DesignSpace) -> Vec<Result<Measurement, EvalError>> {
        let mut requests = Vec::with_capacity(points.len());
        for p in points {
            requests.push(self.request(self.next_id, p, space));
            self.next_id += 1;
        }
        let n = self.workers.len();
        let spec = &self.spec;
        let metrics = &self.metrics;
        let mut results: Vec<Option<Result<Measurement, EvalError>>> = (0..points.len()).map(|_| None).collect();
        thread::scope(|s| {
            let handles: Vec<_> = self
                .workers
                .iter_mut()
                .enumerate()
                .map(|(w, slot)| {
                    let mine: Vec<(usize, &Result<Request, EvalError>)> =
                        requests.iter().enumerate().skip(w).step_by(n).collect();
                    s.spawn(move || {
                        mine.into_iter()
                            .map(|(i, req)| {
                                let r = match req {
                                    Ok(req) => Self::call_with_retries(spec, metrics, slot, req),
                                    Err(e) => Err(EvalError::Invalid(e.to_string())),
                                };
                                (i, r)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("worker thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
        results.into_iter().map(|r| r.expect("every request answered")).collect()
    }

    fn describe(&self) -> String {
        format!("external evaluator `{}`", self.spec.command.join(" "))
    }
}
