//! Child-process model adapter speaking line-delimited JSON.
//!
//! Handshake: `{"op":"hello"}` → `{"classes":[..],"T":int,"C":int}`.
//! Request: `{"op":"predict","T":int,"C":int,"series_b64":..}` where the
//! payload is little-endian binary32, row-major. Response: `{"probs":[..]}`
//! or `{"error":".."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Classifier, ModelKind, ProbVec};
use crate::data::Series;
use crate::error::{CfxError, Result};
use crate::io::{f32_from_le_bytes, f32_to_le_bytes};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request {
    Hello,
    Predict {
        #[serde(rename = "T")]
        t: usize,
        #[serde(rename = "C")]
        c: usize,
        series_b64: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Hello {
    classes: Vec<String>,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "C")]
    c: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Reply {
    Probs { probs: Vec<f32> },
    Error { error: String },
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Channel {
    fn exchange<R: for<'de> Deserialize<'de>>(&mut self, request: &Request) -> Result<R> {
        let mut line =
            serde_json::to_string(request).map_err(|e| CfxError::Model(e.to_string()))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| CfxError::Model(format!("adapter write failed: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| CfxError::Model(format!("adapter read failed: {e}")))?;
        if n == 0 {
            return Err(CfxError::Model("adapter closed its output".into()));
        }
        serde_json::from_str(&reply)
            .map_err(|e| CfxError::Model(format!("bad adapter reply '{}': {e}", reply.trim())))
    }
}

/// External model reached through a child process. Requests are serialized:
/// at most one is in flight at any time.
pub struct ExternalAdapter {
    command: String,
    classes: Vec<String>,
    shape: (usize, usize),
    channel: Mutex<Channel>,
}

impl ExternalAdapter {
    /// Spawns `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str) -> Result<ExternalAdapter> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| CfxError::Model(format!("cannot start adapter '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut channel = Channel {
            child,
            stdin,
            stdout,
        };
        let hello: Hello = channel.exchange(&Request::Hello)?;
        if hello.classes.len() < 2 {
            return Err(CfxError::Model(
                "adapter reported fewer than two classes".into(),
            ));
        }
        Ok(ExternalAdapter {
            command: command.to_string(),
            classes: hello.classes,
            shape: (hello.t, hello.c),
            channel: Mutex::new(channel),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Classifier for ExternalAdapter {
    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn input_shape(&self) -> Option<(usize, usize)> {
        Some(self.shape)
    }

    fn kind(&self) -> ModelKind {
        ModelKind::External
    }

    fn predict_proba(&self, series: &Series) -> Result<ProbVec> {
        let request = Request::Predict {
            t: series.n_timesteps(),
            c: series.n_channels(),
            series_b64: B64.encode(f32_to_le_bytes(series.values())),
        };
        let mut channel = self
            .channel
            .lock()
            .map_err(|_| CfxError::Model("adapter channel poisoned".into()))?;
        match channel.exchange::<Reply>(&request)? {
            Reply::Probs { probs } => ProbVec::new(probs),
            Reply::Error { error } => Err(CfxError::Model(error)),
        }
    }
}

impl Drop for ExternalAdapter {
    fn drop(&mut self) {
        if let Ok(channel) = self.channel.get_mut() {
            let _ = channel.child.kill();
            let _ = channel.child.wait();
        }
    }
}

/// Serves `classifier` over the adapter protocol until `input` closes.
pub fn serve_adapter(
    classifier: &dyn Classifier,
    classes: &[String],
    shape: (usize, usize),
    input: impl BufRead,
    mut output: impl Write,
) -> Result<()> {
    let io_err = |e: std::io::Error| CfxError::Model(format!("adapter output: {e}"));
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Hello) => serde_json::to_string(&Hello {
                classes: classes.to_vec(),
                t: shape.0,
                c: shape.1,
            }),
            Ok(Request::Predict { t, c, series_b64 }) => {
                let reply = B64
                    .decode(series_b64.as_bytes())
                    .map_err(|e| CfxError::format("series_b64", e))
                    .and_then(|bytes| {
                        if bytes.len() != t * c * 4 {
                            return Err(CfxError::format(
                                "series_b64",
                                "length does not match T*C",
                            ));
                        }
                        Series::new("adapter", t, c, f32_from_le_bytes(&bytes))
                    })
                    .and_then(|s| classifier.predict_proba(&s));
                match reply {
                    Ok(p) => serde_json::to_string(&Reply::Probs {
                        probs: p.values().to_vec(),
                    }),
                    Err(e) => serde_json::to_string(&Reply::Error {
                        error: e.to_string(),
                    }),
                }
            }
            Err(e) => serde_json::to_string(&Reply::Error {
                error: format!("bad request: {e}"),
            }),
        }
        .map_err(|e| CfxError::Model(e.to_string()))?;
        writeln!(output, "{reply}").map_err(io_err)?;
        output.flush().map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FnClassifier;

    #[test]
    fn request_wire_format() {
        let r = Request::Predict {
            t: 2,
            c: 1,
            series_b64: "AA==".into(),
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"op":"predict","T":2,"C":1,"series_b64":"AA=="}"#
        );
        assert_eq!(
            serde_json::to_string(&Request::Hello).unwrap(),
            r#"{"op":"hello"}"#
        );
    }

    #[test]
    fn serve_answers_hello_predict_and_errors() {
        let clf = FnClassifier::new(2, |s: &Series| {
            let m = s.values().iter().sum::<f32>() / s.len() as f32;
            vec![m.clamp(0.0, 1.0), 0.25]
        });
        let series = Series::new("q", 2, 1, vec![0.5, 0.7]).unwrap();
        let payload = B64.encode(f32_to_le_bytes(series.values()));
        let input = format!(
            "{{\"op\":\"hello\"}}\n{{\"op\":\"predict\",\"T\":2,\"C\":1,\"series_b64\":\"{payload}\"}}\n{{\"op\":\"predict\",\"T\":3,\"C\":1,\"series_b64\":\"{payload}\"}}\nnot json\n"
        );
        let mut out = Vec::new();
        serve_adapter(
            &clf,
            &["A".into(), "B".into()],
            (2, 1),
            input.as_bytes(),
            &mut out,
        )
        .unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[0], r#"{"classes":["A","B"],"T":2,"C":1}"#);
        assert_eq!(lines[1], r#"{"probs":[0.6,0.25]}"#);
        assert!(lines[2].starts_with(r#"{"error":"#));
        assert!(lines[3].starts_with(r#"{"error":"bad request"#));
    }
}
