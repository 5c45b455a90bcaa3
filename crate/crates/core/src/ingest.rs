//! Pages from a document-platform REST API or a fixture directory, and JSONL
//! corpus files.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::text::{html_to_text, Page};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),
    #[error("malformed response at start={start}: {message}")]
    Format { start: usize, message: String },
    #[error("request at start={start} failed after {attempts} attempt(s): {message}")]
    Transport {
        start: usize,
        attempts: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Corpus {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectorConfig {
    pub base_url: String,
    /// Name of the environment variable holding a bearer token.
    pub auth_token_env: Option<String>,
    pub page_size: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// First retry delay; later retries double it.
    pub backoff_base_ms: u64,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        ConnectorConfig {
            base_url: String::new(),
            auth_token_env: None,
            page_size: 50,
            max_retries: 3,
            timeout_secs: 30,
            backoff_base_ms: 1000,
        }
    }
}

#[derive(Deserialize)]
struct ContentResponse {
    results: Vec<ContentPage>,
    size: usize,
}

#[derive(Deserialize)]
struct ContentPage {
    id: serde_json::Value,
    title: String,
    body: ContentBody,
    #[serde(default)]
    space: Option<SpaceRef>,
}

#[derive(Deserialize)]
struct ContentBody {
    storage: Storage,
}

#[derive(Deserialize)]
struct Storage {
    value: String,
}

#[derive(Deserialize)]
struct SpaceRef {
    key: String,
}

impl From<ContentPage> for Page {
    fn from(p: ContentPage) -> Self {
        let id = match p.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        Page {
            id,
            title: p.title,
            html: p.body.storage.value,
            space: p.space.map(|s| s.key),
        }
    }
}

/// Lazily paginated pages, in request order.
pub struct PageStream {
    agent: ureq::Agent,
    config: ConnectorConfig,
    token: Option<String>,
    start: usize,
    buffer: VecDeque<Page>,
    done: bool,
    requests: usize,
}

impl std::fmt::Debug for PageStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PageStream")
            .field("base_url", &self.config.base_url)
            .field("start", &self.start)
            .field("done", &self.done)
            .finish_non_exhaustive()
    }
}

/// Starts a paginated fetch of `{base_url}/rest/api/content`. The token, if
/// configured, is read from the environment here.
pub fn fetch_pages(config: &ConnectorConfig) -> Result<PageStream, IngestError> {
    let token = match &config.auth_token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| IngestError::MissingToken(var.clone()))?),
        None => None,
    };
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build();
    Ok(PageStream {
        agent,
        config: ConnectorConfig {
            page_size: config.page_size.max(1),
            ..config.clone()
        },
        token,
        start: 0,
        buffer: VecDeque::new(),
        done: false,
        requests: 0,
    })
}

impl PageStream {
    /// HTTP requests issued so far, retries included.
    pub fn requests(&self) -> usize {
        self.requests
    }

    fn fetch_batch(&mut self) -> Result<(), IngestError> {
        let limit = self.config.page_size;
        let url = format!(
            "{}/rest/api/content",
            self.config.base_url.trim_end_matches('/')
        );
        let start = self.start;
        let mut attempt = 0;
        let body = loop {
            attempt += 1;
            self.requests += 1;
            debug!("GET {url}?start={start}&limit={limit}");
            let mut req = self
                .agent
                .get(&url)
                .query("start", &start.to_string())
                .query("limit", &limit.to_string())
                .query("expand", "body.storage");
            if let Some(t) = &self.token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            let failure = match req.call() {
                Ok(resp) => match resp.into_string() {
                    Ok(body) => break body,
                    Err(e) => e.to_string(),
                },
                Err(ureq::Error::Status(status @ (401 | 403), _)) => {
                    return Err(IngestError::Auth { status });
                }
                Err(ureq::Error::Status(status, _)) if status >= 500 => format!("HTTP {status}"),
                Err(ureq::Error::Status(status, _)) => {
                    return Err(IngestError::Transport {
                        start,
                        attempts: attempt,
                        message: format!("HTTP {status}"),
                    });
                }
                Err(ureq::Error::Transport(t)) => t.kind().to_string(),
            };
            if attempt > self.config.max_retries as usize {
                return Err(IngestError::Transport {
                    start,
                    attempts: attempt,
                    message: failure,
                });
            }
            let delay = self.config.backoff_base_ms << (attempt - 1).min(16);
            warn!("start={start}: {failure}; retrying in {delay} ms");
            std::thread::sleep(Duration::from_millis(delay));
        };
        let parsed: ContentResponse = serde_json::from_str(&body).map_err(|e| IngestError::Format {
            start,
            message: e.to_string(),
        })?;
        self.buffer.extend(parsed.results.into_iter().map(Page::from));
        self.start += parsed.size;
        if parsed.size < limit {
            self.done = true;
        }
        Ok(())
    }
}

impl Iterator for PageStream {
    type Item = Result<Page, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.buffer.is_empty() && !self.done {
            if let Err(e) = self.fetch_batch() {
                self.done = true;
                return Some(Err(e));
            }
        }
        self.buffer.pop_front().map(Ok)
    }
}

static HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<h[1-6][^>]*>(.*?)</h[1-6]\s*>").unwrap());

/// Every `*.html` file directly under `dir`, sorted by file name. The id is
/// the file stem; the title is the first heading's text, else the stem.
pub fn load_fixture_dir(dir: &Path) -> Result<Vec<Page>, IngestError> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_html = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("html"));
        if is_html && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let html = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let title = HEADING
                .captures(&html)
                .map(|c| html_to_text(&c[1]).split_whitespace().collect::<Vec<_>>().join(" "))
                .filter(|t| !t.is_empty())
                .unwrap_or_else(|| id.clone());
            Ok(Page {
                id,
                title,
                html,
                space: None,
            })
        })
        .collect()
}

/// One JSON object per line.
pub fn persist_corpus<T: Serialize>(items: &[T], path: &Path) -> Result<(), IngestError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a JSONL corpus; blank lines are skipped and the first malformed
/// line is reported by number.
pub fn load_corpus<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IngestError::Corpus {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Row;
    use std::io::Read;
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal HTTP/1.1 server answering each request with `respond(start,
    /// limit, nth_request)`; records the Authorization header of each call.
    struct Fixture {
        url: String,
        seen: Arc<Mutex<Vec<(usize, Option<String>)>>>,
    }

    fn serve<F>(respond: F) -> Fixture
    where
        F: Fn(usize, usize, usize) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { break };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 1024];
                while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
                    match stream.read(&mut chunk) {
                        Ok(0) | Err(_) => break,
                        Ok(k) => buf.extend_from_slice(&chunk[..k]),
                    }
                }
                let head = String::from_utf8_lossy(&buf).into_owned();
                let target = head.split_whitespace().nth(1).unwrap_or("").to_string();
                let param = |name: &str| {
                    target
                        .split(['?', '&'])
                        .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
                        .and_then(|v| v.parse().ok())
                        .unwrap_or(0)
                };
                let auth = head
                    .lines()
                    .find_map(|l| l.strip_prefix("Authorization: ").map(str::to_string));
                let start = param("start");
                log.lock().unwrap().push((start, auth));
                let (status, body) = respond(start, param("limit"), n);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        Fixture { url, seen }
    }

    fn page_json(i: usize) -> serde_json::Value {
        serde_json::json!({"id": format!("p{i}"), "title": format!("Page {i}"), "body": {"storage": {"value": format!("<p>body {i}</p>")}}})
    }

    fn paged(total: usize) -> impl Fn(usize, usize, usize) -> (u16, String) {
        move |start, limit, _| {
            let results: Vec<_> = (start..total.min(start + limit)).map(page_json).collect();
            let size = results.len();
            (200, serde_json::json!({"results": results, "size": size}).to_string())
        }
    }

    fn config(url: &str, page_size: usize) -> ConnectorConfig {
        ConnectorConfig {
            base_url: url.into(),
            page_size,
            backoff_base_ms: 1,
            timeout_secs: 5,
            ..Default::default()
        }
    }

    #[test]
    fn empty_first_response() {
        let fx = serve(paged(0));
        let mut stream = fetch_pages(&config(&fx.url, 10)).unwrap();
        assert!(stream.next().is_none());
        assert_eq!(stream.requests(), 1);
    }

    #[test]
    fn three_pages_two_requests() {
        let fx = serve(paged(3));
        let mut stream = fetch_pages(&config(&fx.url, 2)).unwrap();
        let pages: Vec<Page> = stream.by_ref().map(Result::unwrap).collect();
        assert_eq!(pages.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["p0", "p1", "p2"]);
        assert_eq!(stream.requests(), 2);
        let starts: Vec<usize> = fx.seen.lock().unwrap().iter().map(|s| s.0).collect();
        assert_eq!(starts, [0, 2]);
    }

    #[test]
    fn pagination_is_complete_for_any_page_size() {
        let fx = serve(paged(7));
        for size in 1..=9 {
            let pages: Vec<Page> = fetch_pages(&config(&fx.url, size)).unwrap().map(Result::unwrap).collect();
            assert_eq!(pages.len(), 7, "page_size {size}");
        }
    }

    #[test]
    fn unauthorized_is_not_retried() {
        let fx = serve(|_, _, _| (401, "{}".into()));
        std::env::set_var("SIFT_TEST_TOKEN_401", "tok-very-secret");
        let cfg = ConnectorConfig {
            auth_token_env: Some("SIFT_TEST_TOKEN_401".into()),
            ..config(&fx.url, 5)
        };
        let mut stream = fetch_pages(&cfg).unwrap();
        let err = stream.next().unwrap().unwrap_err();
        assert!(matches!(err, IngestError::Auth { status: 401 }));
        assert!(!err.to_string().contains("tok-very-secret"));
        assert_eq!(stream.requests(), 1);
        assert!(stream.next().is_none());
        let seen = fx.seen.lock().unwrap();
        assert_eq!(seen[0].1.as_deref(), Some("Bearer tok-very-secret"));
        assert!(!format!("{stream:?}").contains("tok-very-secret"));
    }

    #[test]
    fn server_errors_are_retried() {
        let inner = paged(2);
        let fx = serve(move |s, l, n| if n < 2 { (503, "busy".into()) } else { inner(s, l, n) });
        let mut stream = fetch_pages(&config(&fx.url, 5)).unwrap();
        let pages: Vec<Page> = stream.by_ref().map(Result::unwrap).collect();
        assert_eq!(pages.len(), 2);
        assert_eq!(stream.requests(), 3);
    }

    #[test]
    fn retries_exhaust() {
        let fx = serve(|_, _, _| (500, String::new()));
        let cfg = ConnectorConfig { max_retries: 2, ..config(&fx.url, 5) };
        let mut stream = fetch_pages(&cfg).unwrap();
        let err = stream.next().unwrap().unwrap_err();
        assert!(matches!(err, IngestError::Transport { attempts: 3, start: 0, .. }), "{err}");
    }

    #[test]
    fn malformed_json_names_offset() {
        let inner = paged(10);
        let fx = serve(move |s, l, n| if s >= 4 { (200, "{\"results\": [".into()) } else { inner(s, l, n) });
        let results: Vec<_> = fetch_pages(&config(&fx.url, 4)).unwrap().collect();
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 4);
        assert!(matches!(results.last().unwrap(), Err(IngestError::Format { start: 4, .. })));
    }

    #[test]
    fn missing_token_variable() {
        let cfg = ConnectorConfig {
            auth_token_env: Some("SIFT_TEST_TOKEN_ABSENT".into()),
            ..config("http://127.0.0.1:9", 5)
        };
        assert!(matches!(fetch_pages(&cfg), Err(IngestError::MissingToken(_))));
    }

    #[test]
    fn fixture_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_fixture_dir(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("b.html"), "<p>no heading</p>").unwrap();
        std::fs::write(dir.path().join("a.html"), "<h2 class=x>Deploy  <em>guide</em></h2><p>x</p>").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let pages = load_fixture_dir(dir.path()).unwrap();
        assert_eq!(pages.len(), 2);
        assert_eq!((pages[0].id.as_str(), pages[0].title.as_str()), ("a", "Deploy guide"));
        assert_eq!((pages[1].id.as_str(), pages[1].title.as_str()), ("b", "b"));
        assert!(load_fixture_dir(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pages.jsonl");
        let pages: Vec<Page> = (0..3)
            .map(|i| Page { id: format!("p{i}"), title: "t".into(), html: "<p>\"q\"\n</p>".into(), space: (i == 1).then(|| "OPS".into()) })
            .collect();
        persist_corpus(&pages, &path).unwrap();
        assert_eq!(load_corpus::<Page>(&path).unwrap(), pages);

        persist_corpus::<Row>(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"");
        assert!(load_corpus::<Row>(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pages.jsonl");
        let pages: Vec<Page> = (0..3)
            .map(|i| Page { id: format!("p{i}"), title: "t".into(), html: String::new(), space: None })
            .collect();
        persist_corpus(&pages, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 6]).unwrap();
        match load_corpus::<Page>(&path).unwrap_err() {
            IngestError::Corpus { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }
}
