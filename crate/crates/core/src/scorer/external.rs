//! Line-delimited JSON bridge to out-of-process scorers.
//!
//! Framing: one UTF-8 JSON object per `\n`-terminated line, both ways.
//!
//! ```text
//! client -> {"hello":"umae-scorer","version":1}
//! server <- {"vocab":["<s>","</s>",...]}
//! client -> {"id":0,"context":["<s>","<#AOKA#>","what"]}
//! server <- {"id":0,"logprobs":{"<s>":-9.2,"</s>":-3.1,...}}
//! ```
//!
//! A response must cover the whole vocabulary; `null` stands for a
//! log-probability of negative infinity. A server that cannot score a
//! request answers `{"id":n,"error":"..."}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{log_sum_exp, ScorerError, TokenId, TokenScorer, Vocab};

pub const PROTOCOL_NAME: &str = "umae-scorer";
pub const PROTOCOL_VERSION: u32 = 1;

/// Responses whose mass is off by more than this are rejected.
const NORMALIZATION_TOLERANCE: f64 = 1e-4;

#[derive(Serialize, Deserialize)]
struct Hello {
    hello: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct VocabMessage {
    vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Request {
    id: u64,
    context: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Response {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logprobs: Option<BTreeMap<String, Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn protocol(msg: impl Into<String>) -> ScorerError {
    ScorerError::Protocol(msg.into())
}

fn send<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<(), ScorerError> {
    let mut line = serde_json::to_string(msg).map_err(|e| protocol(e.to_string()))?;
    line.push('\n');
    w.write_all(line.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn recv<R: BufRead, T: for<'de> Deserialize<'de>>(r: &mut R) -> Result<Option<T>, ScorerError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    serde_json::from_str(line.trim_end_matches(['\n', '\r']))
        .map(Some)
        .map_err(|e| protocol(format!("malformed message: {e}")))
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

/// Client side of the scorer protocol. Requests on one connection are
/// serialized; open several scorers for parallel scoring.
pub struct ExternalScorer {
    vocab: Vocab,
    conn: Mutex<Connection>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("vocab_size", &self.vocab.len())
            .finish()
    }
}

impl ExternalScorer {
    /// Performs the handshake over an existing stream pair.
    pub fn from_streams(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self, ScorerError> {
        Self::handshake(Connection {
            reader,
            writer,
            child: None,
        })
    }

    /// Spawns `command` (split on whitespace) and speaks over its stdio.
    pub fn spawn(command: &str) -> Result<Self, ScorerError> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| protocol("empty scorer command"))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Connection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Box::new(BufWriter::new(stdin)),
            child: Some(child),
        })
    }

    pub fn connect_tcp<A: ToSocketAddrs>(addr: A) -> Result<Self, ScorerError> {
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::from_streams(Box::new(reader), Box::new(BufWriter::new(stream)))
    }

    fn handshake(mut conn: Connection) -> Result<Self, ScorerError> {
        send(
            &mut conn.writer,
            &Hello {
                hello: PROTOCOL_NAME.into(),
                version: PROTOCOL_VERSION,
            },
        )?;
        let msg: VocabMessage = recv(&mut conn.reader)?
            .ok_or_else(|| protocol("connection closed during handshake"))?;
        let vocab = Vocab::new(msg.vocab)?;
        Ok(Self {
            vocab,
            conn: Mutex::new(conn),
            next_id: AtomicU64::new(0),
        })
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            if let Some(mut child) = conn.child.take() {
                // closing stdin lets a well-behaved server exit on EOF
                conn.writer = Box::new(std::io::sink());
                let _ = child.wait();
            }
        }
    }
}

impl TokenScorer for ExternalScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let context: Vec<String> = context
            .iter()
            .map(|&t| {
                self.vocab
                    .token(t)
                    .map(str::to_string)
                    .ok_or(ScorerError::UnknownTokenId(t))
            })
            .collect::<Result<_, _>>()?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let response: Response = {
            let mut conn = self
                .conn
                .lock()
                .map_err(|_| protocol("connection poisoned"))?;
            send(&mut conn.writer, &Request { id, context })?;
            recv(&mut conn.reader)?.ok_or_else(|| protocol("connection closed"))?
        };
        if response.id != id {
            return Err(protocol(format!(
                "response id {} for request {id}",
                response.id
            )));
        }
        if let Some(err) = response.error {
            return Err(protocol(format!("server error: {err}")));
        }
        let map = response
            .logprobs
            .ok_or_else(|| protocol("response without logprobs"))?;
        if map.len() != self.vocab.len() {
            return Err(protocol(format!(
                "response covers {} tokens, vocabulary has {}",
                map.len(),
                self.vocab.len()
            )));
        }
        let mut out = Vec::with_capacity(map.len());
        for tok in self.vocab.tokens() {
            let v = map
                .get(tok)
                .ok_or_else(|| protocol(format!("response missing token {tok:?}")))?;
            out.push(v.unwrap_or(f64::NEG_INFINITY));
        }
        let lse = log_sum_exp(&out);
        if lse.is_nan() || lse.abs() > NORMALIZATION_TOLERANCE {
            return Err(protocol(format!(
                "distribution not normalized (log mass {lse})"
            )));
        }
        if lse.abs() > 1e-12 {
            out.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(out)
    }
}

/// Serves `scorer` over one stream pair until the client disconnects.
pub fn serve<S, R, W>(scorer: &S, mut reader: R, mut writer: W) -> Result<(), ScorerError>
where
    S: TokenScorer + ?Sized,
    R: BufRead,
    W: Write,
{
    let hello: Hello = match recv(&mut reader)? {
        Some(h) => h,
        None => return Ok(()),
    };
    if hello.hello != PROTOCOL_NAME || hello.version != PROTOCOL_VERSION {
        return Err(protocol(format!(
            "unsupported client {} v{}",
            hello.hello, hello.version
        )));
    }
    let vocab = scorer.vocab();
    send(
        &mut writer,
        &VocabMessage {
            vocab: vocab.tokens().to_vec(),
        },
    )?;
    while let Some(req) = recv::<_, Request>(&mut reader)? {
        let result = vocab
            .encode(&req.context)
            .and_then(|ctx| scorer.logprobs(&ctx));
        let response = match result {
            Ok(lp) => Response {
                id: req.id,
                logprobs: Some(
                    vocab
                        .tokens()
                        .iter()
                        .zip(lp)
                        .map(|(t, v)| (t.clone(), v.is_finite().then_some(v)))
                        .collect(),
                ),
                error: None,
            },
            Err(e) => Response {
                id: req.id,
                logprobs: None,
                error: Some(e.to_string()),
            },
        };
        send(&mut writer, &response)?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per client.
pub fn serve_tcp<S: TokenScorer>(scorer: &S, listener: TcpListener) -> Result<(), ScorerError> {
    std::thread::scope(|scope| {
        for stream in listener.incoming() {
            let stream = stream?;
            scope.spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(_) => return,
                };
                let _ = serve(scorer, reader, BufWriter::new(stream));
            });
        }
        Ok(())
    })
}
