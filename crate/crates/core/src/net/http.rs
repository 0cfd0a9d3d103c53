//! Minimal HTTP handling for the shared server port: telling raw protocol
//! clients from HTTP requests, and serving the static UI bundle.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::path::{Component, Path, PathBuf};
use std::time::{Duration, Instant};

const MAX_HEADER: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHead {
    pub method: String,
    pub path: String,
    pub websocket: bool,
    /// Size of the request head in bytes, including the blank line.
    pub len: usize,
}

/// Parses an HTTP request head if `buf` holds a complete one.
pub fn parse_head(buf: &[u8]) -> Option<RequestHead> {
    let end = buf.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
    let text = String::from_utf8_lossy(&buf[..end]);
    let mut lines = text.split("\r\n");
    let mut first = lines.next()?.split_whitespace();
    let method = first.next()?.to_string();
    let path = first.next()?.to_string();
    let websocket = lines.any(|l| {
        l.split_once(':')
            .is_some_and(|(k, v)| k.trim().eq_ignore_ascii_case("upgrade") && v.trim().eq_ignore_ascii_case("websocket"))
    });
    Some(RequestHead {
        method,
        path,
        websocket,
        len: end,
    })
}

/// An HTTP method starts with an uppercase ASCII letter; the binary framing
/// starts with a big-endian length whose first byte is 0 or 1 for any
/// payload within the size limit.
pub fn looks_like_http(first: u8) -> bool {
    first.is_ascii_uppercase()
}

pub enum Sniffed {
    Binary,
    Http(RequestHead),
    Closed,
}

/// Peeks at the first bytes of a connection without consuming them.
pub fn sniff(stream: &TcpStream, timeout: Duration) -> io::Result<Sniffed> {
    let deadline = Instant::now() + timeout;
    let mut buf = vec![0u8; MAX_HEADER];
    loop {
        let n = match stream.peek(&mut buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => 0,
            Err(e) => return Err(e),
        };
        if n > 0 && !looks_like_http(buf[0]) {
            return Ok(Sniffed::Binary);
        }
        if n > 0 {
            if let Some(head) = parse_head(&buf[..n]) {
                return Ok(Sniffed::Http(head));
            }
            if n == MAX_HEADER {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "request head too large"));
            }
        }
        if Instant::now() >= deadline {
            return Ok(if n == 0 { Sniffed::Closed } else { Sniffed::Binary });
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto a file below `root`, refusing to escape it.
pub fn resolve(root: &Path, url_path: &str) -> Option<PathBuf> {
    let path = url_path.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if full.is_dir() {
        full.push("index.html");
    }
    Some(full)
}

fn respond(stream: &mut TcpStream, status: &str, ctype: &str, body: &[u8]) -> io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body)?;
    stream.flush()
}

/// Consumes the request head and answers with a file from `root`.
pub fn serve_static(stream: &mut TcpStream, head: &RequestHead, root: Option<&Path>) -> io::Result<()> {
    let mut discard = vec![0u8; head.len];
    stream.read_exact(&mut discard)?;
    if head.method != "GET" && head.method != "HEAD" {
        return respond(stream, "405 Method Not Allowed", "text/plain", b"method not allowed\n");
    }
    let Some(root) = root else {
        return respond(stream, "404 Not Found", "text/plain", b"no UI bundle is being served\n");
    };
    match resolve(root, &head.path).and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
        Some((p, body)) => {
            let body = if head.method == "HEAD" { Vec::new() } else { body };
            respond(stream, "200 OK", content_type(&p), &body)
        }
        None => respond(stream, "404 Not Found", "text/plain", b"not found\n"),
    }
}
