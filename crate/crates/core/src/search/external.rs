//! Evaluator backed by a child process speaking the JSON line protocol.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::evaluator::{CostClass, EvalError, Evaluator};
use crate::arch_space::ArchEncoding;
use crate::data_io::{EvalRequest, EvalResponse};

/// Runs `sh -c <command>` once per evaluation. `{eval_id}` in the command is
/// replaced by the request id. The request is written to stdin as one JSON
/// line; the first stdout line must be the response.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: String,
    pub timeout: Duration,
    pub resolution: (u32, u32),
    pub deterministic: bool,
    pub cost_class: CostClass,
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            timeout,
            resolution: crate::cost_model::DEFAULT_RESOLUTION,
            deterministic: false,
            cost_class: CostClass::Expensive,
        }
    }

    fn run(&self, eval_id: u64, arch: &ArchEncoding) -> Result<f64, EvalError> {
        let request = EvalRequest::new(eval_id, arch, self.resolution).to_line();
        let command = self.command.replace("{eval_id}", &eval_id.to_string());
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| EvalError::Spawn(format!("{command}: {e}")))?;

        let mut stdin = child.stdin.take().expect("piped");
        let writer = thread::spawn(move || {
            // a child that ignores stdin closes the pipe early; that is fine
            let _ = stdin.write_all(request.as_bytes());
            let _ = stdin.write_all(b"\n");
        });
        let mut stdout = child.stdout.take().expect("piped");
        let reader = thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });
        let mut stderr = child.stderr.take().expect("piped");
        let err_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });

        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(EvalError::Timeout(self.timeout.as_secs_f64()));
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(EvalError::Other(format!("waiting on evaluator: {e}"))),
            }
        };
        let _ = writer.join();
        let stdout = reader
            .join()
            .expect("reader thread")
            .map_err(|e| EvalError::Protocol(format!("reading stdout: {e}")))?;
        let stderr = err_reader.join().expect("stderr thread");
        if !status.success() {
            return Err(EvalError::Exit {
                code: status.code(),
                stderr: stderr.trim().chars().take(500).collect(),
            });
        }
        EvalResponse::parse(&stdout, eval_id)
            .map(|r| r.score)
            .map_err(|e| EvalError::Protocol(e.to_string()))
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, eval_id: u64, arch: &ArchEncoding) -> Result<f64, EvalError> {
        self.run(eval_id, arch)
    }

    fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    fn cost_class(&self) -> CostClass {
        self.cost_class
    }
}

pub fn external_evaluator(command: impl Into<String>, timeout: Duration) -> ExternalEvaluator {
    ExternalEvaluator::new(command, timeout)
}
