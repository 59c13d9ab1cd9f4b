//! Minimal blocking HTTP server implementing the external annotator wire
//! contract. Used by tests and for local runs of external mode.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::{extract_mentions, AnnotatorConfig, ExternalMention, ExternalRequest, ExternalResponse, Lexicon};

/// What the stub sends back for one request.
pub enum StubReply {
    Json(String),
    Status(u16),
    /// Close the connection without answering.
    Hang(std::time::Duration),
}

type Handler = dyn Fn(&ExternalRequest) -> StubReply + Send + Sync;

pub struct StubAnnotatorServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    thread: Option<JoinHandle<()>>,
}

impl StubAnnotatorServer {
    /// Serves `handler` on an ephemeral localhost port.
    pub fn start(handler: impl Fn(&ExternalRequest) -> StubReply + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (stop2, requests2) = (stop.clone(), requests.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let requests = requests2.clone();
                std::thread::spawn(move || {
                    let _ = serve(stream, &*handler, &requests);
                });
            }
        });
        Ok(StubAnnotatorServer { addr, stop, requests, thread: Some(thread) })
    }

    /// Echo stub: annotates with the lexicon annotator.
    pub fn lexicon(lex: Lexicon) -> std::io::Result<Self> {
        let cfg = AnnotatorConfig::default();
        Self::start(move |req| {
            let mentions = extract_mentions(&req.text, &lex, &cfg).iter().map(ExternalMention::from).collect();
            StubReply::Json(serde_json::to_string(&ExternalResponse { mentions }).expect("serializable"))
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/annotate", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubAnnotatorServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(stream: TcpStream, handler: &Handler, requests: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    requests.fetch_add(1, Ordering::SeqCst);
    let reply = match serde_json::from_slice::<ExternalRequest>(&body) {
        Ok(req) => handler(&req),
        Err(_) => StubReply::Status(400),
    };
    let mut stream = stream;
    match reply {
        StubReply::Json(body) => write_response(&mut stream, 200, &body),
        StubReply::Status(code) => write_response(&mut stream, code, ""),
        StubReply::Hang(d) => {
            std::thread::sleep(d);
            Ok(())
        }
    }
}

fn write_response(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}
