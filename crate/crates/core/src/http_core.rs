//! Shared HTTP message model, caching-freshness arithmetic, and the
//! request/URL manipulations used throughout the lab.
//!
//! Millisecond-grade HTTP-date parsing is deliberately out of scope: the
//! `Expires` and `Last-Modified` header values carry absolute simulation
//! time as integer microseconds, which keeps freshness arithmetic exact.

use crate::sim_time::{SimDuration, SimTime};
use std::fmt;
use thiserror::Error;
use url::Url;

/// Response status codes admitted by the lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotModified,
}

impl Status {
    pub fn code(self) -> u16 {
        match self {
            Status::Ok => 200,
            Status::NotModified => 304,
        }
    }

    pub fn from_code(code: u16) -> Result<Status, HttpError> {
        match code {
            200 => Ok(Status::Ok),
            304 => Ok(Status::NotModified),
            other => Err(HttpError::UnsupportedStatus(other)),
        }
    }

    fn reason(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::NotModified => "Not Modified",
        }
    }
}

/// Request or response discriminator with the method/status token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageKind {
    Request { method: String },
    Response { status: Status },
}

/// Ordered header list. Names compare case-insensitively, duplicates are
/// permitted and order is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn new() -> Headers {
        Headers(Vec::new())
    }

    pub fn from_pairs<I, N, V>(pairs: I) -> Headers
    where
        I: IntoIterator<Item = (N, V)>,
        N: Into<String>,
        V: Into<String>,
    {
        Headers(
            pairs
                .into_iter()
                .map(|(n, v)| (n.into(), v.into()))
                .collect(),
        )
    }

    /// First value for `name`, if any.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> {
        self.0
            .iter()
            .filter(move |(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn append(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.push((name.into(), value.into()));
    }

    /// Removes every occurrence of `name`; returns how many were removed.
    pub fn remove_all(&mut self, name: &str) -> usize {
        let before = self.0.len();
        self.0.retain(|(n, _)| !n.eq_ignore_ascii_case(name));
        before - self.0.len()
    }

    /// Replaces all occurrences of `name` with a single trailing entry.
    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        self.remove_all(&name);
        self.append(name, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(n, v)| (n.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// An HTTP request or response with its URL, ordered headers, and body.
///
/// Responses do not carry a URL on the wire; here the URL names the resource
/// the response belongs to, because caches key entries by it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpMessage {
    pub kind: MessageKind,
    pub url: Url,
    pub headers: Headers,
    pub body: Vec<u8>,
}

impl HttpMessage {
    pub fn request(method: impl Into<String>, url: Url) -> HttpMessage {
        HttpMessage {
            kind: MessageKind::Request {
                method: method.into(),
            },
            url,
            headers: Headers::new(),
            body: Vec::new(),
        }
    }

    pub fn response(status: Status, url: Url) -> HttpMessage {
        HttpMessage {
            kind: MessageKind::Response { status },
            url,
            headers: Headers::new(),
            body: Vec::new(),
        }
    }

    pub fn with_headers(mut self, headers: Headers) -> HttpMessage {
        self.headers = headers;
        self
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> HttpMessage {
        self.body = body.into();
        self
    }

    pub fn is_request(&self) -> bool {
        matches!(self.kind, MessageKind::Request { .. })
    }

    pub fn is_response(&self) -> bool {
        matches!(self.kind, MessageKind::Response { .. })
    }

    pub fn status(&self) -> Option<Status> {
        match self.kind {
            MessageKind::Response { status } => Some(status),
            MessageKind::Request { .. } => None,
        }
    }

    pub fn method(&self) -> Option<&str> {
        match &self.kind {
            MessageKind::Request { method } => Some(method),
            MessageKind::Response { .. } => None,
        }
    }

    pub fn body_size(&self) -> usize {
        self.body.len()
    }

    /// Canonical textual form: request line or status line, CRLF headers,
    /// blank line, body.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.body.len() + 64);
        match &self.kind {
            MessageKind::Request { method } => {
                out.extend_from_slice(method.as_bytes());
                out.push(b' ');
                out.extend_from_slice(self.url.as_str().as_bytes());
                out.extend_from_slice(b" HTTP/1.1\r\n");
            }
            MessageKind::Response { status } => {
                out.extend_from_slice(
                    format!("HTTP/1.1 {} {}\r\n", status.code(), status.reason()).as_bytes(),
                );
            }
        }
        for (name, value) in self.headers.iter() {
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(b": ");
            out.extend_from_slice(value.as_bytes());
            out.extend_from_slice(b"\r\n");
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.body);
        out
    }

    /// Parses a serialized request. The absolute URL is recovered from the
    /// request line.
    pub fn parse_request(bytes: &[u8]) -> Result<HttpMessage, HttpError> {
        let (first, headers, body) = split_message(bytes)?;
        let mut parts = first.splitn(3, ' ');
        let method = parts
            .next()
            .filter(|m| !m.is_empty())
            .ok_or_else(|| HttpError::MalformedMessage("empty request line".into()))?;
        let target = parts
            .next()
            .ok_or_else(|| HttpError::MalformedMessage("request line lacks a target".into()))?;
        match parts.next() {
            Some("HTTP/1.1") => {}
            _ => return Err(HttpError::MalformedMessage("bad protocol version".into())),
        }
        let url = Url::parse(target).map_err(|e| HttpError::InvalidUrl(e.to_string()))?;
        Ok(HttpMessage {
            kind: MessageKind::Request {
                method: method.to_string(),
            },
            url,
            headers,
            body,
        })
    }

    /// Parses a serialized response. Responses carry no URL on the wire, so
    /// the resource URL is supplied by the caller.
    pub fn parse_response(bytes: &[u8], url: Url) -> Result<HttpMessage, HttpError> {
        let (first, headers, body) = split_message(bytes)?;
        let mut parts = first.splitn(3, ' ');
        match parts.next() {
            Some("HTTP/1.1") => {}
            _ => return Err(HttpError::MalformedMessage("bad protocol version".into())),
        }
        let code: u16 = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| HttpError::MalformedMessage("bad status code".into()))?;
        let status = Status::from_code(code)?;
        Ok(HttpMessage {
            kind: MessageKind::Response { status },
            url,
            headers,
            body,
        })
    }
}

fn split_message(bytes: &[u8]) -> Result<(String, Headers, Vec<u8>), HttpError> {
    let sep = bytes
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| HttpError::MalformedMessage("missing blank line".into()))?;
    let head = std::str::from_utf8(&bytes[..sep])
        .map_err(|_| HttpError::MalformedMessage("head is not utf-8".into()))?;
    let body = bytes[sep + 4..].to_vec();
    let mut lines = head.split("\r\n");
    let first = lines
        .next()
        .ok_or_else(|| HttpError::MalformedMessage("empty head".into()))?
        .to_string();
    let mut headers = Headers::new();
    for line in lines {
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| HttpError::MalformedMessage(format!("bad header line `{line}`")))?;
        let value = value.strip_prefix(' ').unwrap_or(value);
        headers.append(name, value);
    }
    Ok((first, headers, body))
}

/// Freshness metadata extracted from a response, in the precedence order the
/// lab honours: `no-store`, then `max-age`, then `Expires`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FreshnessInfo {
    /// Value of `Cache-Control: max-age=N`, seconds.
    pub max_age: Option<u64>,
    /// Absolute expiry from the `Expires` header.
    pub expires_at: Option<SimTime>,
    pub no_store: bool,
    pub etag: Option<String>,
    pub last_modified: Option<SimTime>,
}

impl FreshnessInfo {
    /// Derived entry lifetime when stored at `from`. Absent explicit lifetime
    /// information the lifetime is zero; there is no heuristic freshness.
    pub fn lifetime(&self, from: SimTime) -> SimDuration {
        if self.no_store {
            return SimDuration::ZERO;
        }
        if let Some(secs) = self.max_age {
            return SimDuration::from_secs(secs);
        }
        if let Some(at) = self.expires_at {
            return at.saturating_duration_since(from);
        }
        SimDuration::ZERO
    }

    pub fn is_fresh(&self, stored_at: SimTime, at: SimTime) -> bool {
        at < stored_at + self.lifetime(stored_at)
    }
}

/// Extracts freshness metadata from a response.
///
/// Only `max-age` and `Expires` control the lifetime; `no-store` disables
/// storage; validators are copied verbatim. A malformed `max-age` value is a
/// parse error, while malformed `Expires`/`Last-Modified` values are treated
/// as absent (an unparseable expiry is an already-expired one).
pub fn parse_freshness(msg: &HttpMessage) -> Result<FreshnessInfo, HttpError> {
    if !msg.is_response() {
        return Err(HttpError::NotAResponse);
    }
    let mut max_age = None;
    let mut no_store = false;
    for value in msg.headers.get_all("Cache-Control") {
        for directive in value.split(',') {
            let directive = directive.trim();
            if directive.is_empty() {
                continue;
            }
            let (name, arg) = match directive.split_once('=') {
                Some((n, a)) => (n.trim(), Some(a.trim())),
                None => (directive, None),
            };
            if name.eq_ignore_ascii_case("no-store") {
                no_store = true;
            } else if name.eq_ignore_ascii_case("max-age") {
                let raw = arg.ok_or_else(|| HttpError::MalformedHeader {
                    header: "Cache-Control".into(),
                    detail: "max-age without a value".into(),
                })?;
                let secs: u64 = raw.parse().map_err(|_| HttpError::MalformedHeader {
                    header: "Cache-Control".into(),
                    detail: format!("bad max-age value `{raw}`"),
                })?;
                if max_age.is_none() {
                    max_age = Some(secs);
                }
            }
        }
    }
    let expires_at = msg
        .headers
        .get("Expires")
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(SimTime::from_micros);
    let etag = msg.headers.get("ETag").map(str::to_string);
    let last_modified = msg
        .headers
        .get("Last-Modified")
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(SimTime::from_micros);
    Ok(FreshnessInfo {
        max_age,
        expires_at,
        no_store,
        etag,
        last_modified,
    })
}

/// Returns a copy of `req` with `If-None-Match` and `If-Modified-Since`
/// removed, so the server can only answer with a full 200 body.
pub fn strip_conditional_headers(req: &HttpMessage) -> HttpMessage {
    let mut out = req.clone();
    out.headers.remove_all("If-None-Match");
    out.headers.remove_all("If-Modified-Since");
    out
}

/// Appends a throwaway `t=<token>` query parameter, yielding a URL that is a
/// distinct cache key for the same resource.
pub fn add_cache_buster(url: &Url, token: u64) -> Result<Url, HttpError> {
    if url.query_pairs().any(|(k, _)| k == "t") {
        return Err(HttpError::CacheBusterConflict);
    }
    let mut out = url.clone();
    out.query_pairs_mut().append_pair("t", &token.to_string());
    Ok(out)
}

/// Cache key for a URL: the full URL including the query string, with any
/// fragment excluded.
pub fn cache_key(url: &Url) -> String {
    if url.fragment().is_none() {
        return url.as_str().to_string();
    }
    let mut key = url.clone();
    key.set_fragment(None);
    key.into()
}

/// Wire-diagram style request line, e.g. `GET somesite.com/my.js?t=500198`.
pub fn request_line(method: &str, url: &Url) -> String {
    let host = url.host_str().unwrap_or("");
    match url.query() {
        Some(q) => format!("{method} {host}{}?{q}", url.path()),
        None => format!("{method} {host}{}", url.path()),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    #[error("malformed {header} header: {detail}")]
    MalformedHeader { header: String, detail: String },
    #[error("message is not a response")]
    NotAResponse,
    #[error("message is not a request")]
    NotARequest,
    #[error("status {0} is not supported in this lab")]
    UnsupportedStatus(u16),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("url already carries a `t` query parameter")]
    CacheBusterConflict,
    #[error("invalid url: {0}")]
    InvalidUrl(String),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn url(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    fn response_with(headers: &[(&str, &str)]) -> HttpMessage {
        HttpMessage::response(Status::Ok, url("http://site.test/a.js"))
            .with_headers(Headers::from_pairs(headers.iter().cloned()))
            .with_body("var a=1")
    }

    #[test]
    fn freshness_one_year_max_age() {
        let resp = response_with(&[("Cache-Control", "max-age=31536000")]);
        let info = parse_freshness(&resp).unwrap();
        assert_eq!(info.max_age, Some(31_536_000));
        assert_eq!(
            info.lifetime(SimTime::ZERO),
            SimDuration::from_secs(31_536_000)
        );
    }

    #[test]
    fn freshness_absent_headers_zero_lifetime() {
        let resp = response_with(&[]);
        let info = parse_freshness(&resp).unwrap();
        assert_eq!(info, FreshnessInfo::default());
        assert_eq!(info.lifetime(SimTime::from_secs(7)), SimDuration::ZERO);
    }

    // Precedence oracle: direct walk of the rule table (no-store, then
    // max-age, then Expires) gives 60 s when max-age=60 competes with an
    // Expires value 10 s ahead.
    #[test]
    fn freshness_max_age_beats_expires() {
        let now = SimTime::from_secs(100);
        let expires = now + SimDuration::from_secs(10);
        let resp = response_with(&[
            ("Cache-Control", "max-age=60"),
            ("Expires", &expires.as_micros().to_string()),
        ]);
        let info = parse_freshness(&resp).unwrap();
        assert_eq!(info.lifetime(now), SimDuration::from_secs(60));
        assert_eq!(info.expires_at, Some(expires));
    }

    #[test]
    fn freshness_expires_only() {
        let now = SimTime::from_secs(100);
        let expires = now + SimDuration::from_secs(10);
        let resp = response_with(&[("Expires", &expires.as_micros().to_string())]);
        let info = parse_freshness(&resp).unwrap();
        assert_eq!(info.lifetime(now), SimDuration::from_secs(10));
        // Past expiry clamps to zero.
        assert_eq!(
            info.lifetime(now + SimDuration::from_secs(30)),
            SimDuration::ZERO
        );
    }

    #[test]
    fn freshness_malformed_max_age() {
        let resp = response_with(&[("Cache-Control", "max-age=never")]);
        let err = parse_freshness(&resp).unwrap_err();
        match err {
            HttpError::MalformedHeader { header, .. } => assert_eq!(header, "Cache-Control"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn freshness_no_store_wins() {
        let resp = response_with(&[("Cache-Control", "no-store, max-age=500")]);
        let info = parse_freshness(&resp).unwrap();
        assert!(info.no_store);
        assert_eq!(info.lifetime(SimTime::ZERO), SimDuration::ZERO);
    }

    #[test]
    fn freshness_requires_response() {
        let req = HttpMessage::request("GET", url("http://site.test/"));
        assert_eq!(parse_freshness(&req).unwrap_err(), HttpError::NotAResponse);
    }

    #[test]
    fn strip_removes_both_conditionals() {
        let mut req = HttpMessage::request("GET", url("http://site.test/a.js"));
        req.headers.append("Host", "site.test");
        req.headers.append("If-None-Match", "\"v1\"");
        req.headers.append("If-Modified-Since", "123");
        req.headers.append("Accept", "*/*");
        let out = strip_conditional_headers(&req);
        assert!(!out.headers.contains("If-None-Match"));
        assert!(!out.headers.contains("If-Modified-Since"));
        let kept: Vec<_> = out.headers.iter().collect();
        assert_eq!(kept, vec![("Host", "site.test"), ("Accept", "*/*")]);
        // Original untouched.
        assert!(req.headers.contains("If-None-Match"));
    }

    #[test]
    fn strip_is_identity_without_conditionals() {
        let mut req = HttpMessage::request("GET", url("http://site.test/a.js"));
        req.headers.append("Host", "site.test");
        assert_eq!(strip_conditional_headers(&req), req);
    }

    #[test]
    fn strip_removes_duplicates() {
        let mut req = HttpMessage::request("GET", url("http://site.test/a.js"));
        req.headers.append("If-None-Match", "\"v1\"");
        req.headers.append("if-none-match", "\"v2\"");
        let out = strip_conditional_headers(&req);
        // Oracle: plain filter over the header list.
        let expect: Vec<_> = req
            .headers
            .iter()
            .filter(|(n, _)| {
                !n.eq_ignore_ascii_case("If-None-Match")
                    && !n.eq_ignore_ascii_case("If-Modified-Since")
            })
            .count();
        assert_eq!(out.headers.len(), expect);
        assert!(out.headers.is_empty());
    }

    #[test]
    fn cache_buster_appends_token() {
        let busted = add_cache_buster(&url("http://somesite.com/my.js"), 500_198).unwrap();
        assert_eq!(busted.as_str(), "http://somesite.com/my.js?t=500198");
        assert_eq!(
            request_line("GET", &busted),
            "GET somesite.com/my.js?t=500198"
        );
    }

    #[test]
    fn cache_buster_preserves_existing_query() {
        let busted = add_cache_buster(&url("http://a.com/x.js?v=2"), 7).unwrap();
        assert_eq!(busted.as_str(), "http://a.com/x.js?v=2&t=7");
    }

    #[test]
    fn cache_buster_token_zero_is_distinct_key() {
        let base = url("http://a.com/x.js");
        let busted = add_cache_buster(&base, 0).unwrap();
        assert_eq!(busted.as_str(), "http://a.com/x.js?t=0");
        assert_ne!(cache_key(&busted), cache_key(&base));
    }

    #[test]
    fn cache_buster_conflict() {
        let err = add_cache_buster(&url("http://a.com/x.js?t=1"), 2).unwrap_err();
        assert_eq!(err, HttpError::CacheBusterConflict);
    }

    #[test]
    fn distinct_tokens_distinct_keys() {
        let base = url("http://a.com/x.js");
        let a = add_cache_buster(&base, 1).unwrap();
        let b = add_cache_buster(&base, 2).unwrap();
        assert_ne!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn cache_key_drops_fragment() {
        assert_eq!(
            cache_key(&url("http://a.com/x.js?v=2#frag")),
            "http://a.com/x.js?v=2"
        );
        assert_eq!(cache_key(&url("http://a.com/x.js?v=2")), "http://a.com/x.js?v=2");
    }

    #[test]
    fn canonical_request_bytes() {
        let mut req = HttpMessage::request("GET", url("http://somesite.com/my.js"));
        req.headers.append("Host", "somesite.com");
        assert_eq!(
            req.serialize(),
            b"GET http://somesite.com/my.js HTTP/1.1\r\nHost: somesite.com\r\n\r\n"
        );
    }

    #[test]
    fn canonical_response_bytes() {
        let resp = response_with(&[("Cache-Control", "max-age=60")]);
        assert_eq!(
            resp.serialize(),
            b"HTTP/1.1 200 OK\r\nCache-Control: max-age=60\r\n\r\nvar a=1"
        );
    }

    #[test]
    fn request_round_trip() {
        let mut req = HttpMessage::request("GET", url("http://somesite.com/my.js?t=500198"));
        req.headers.append("Host", "somesite.com");
        req.headers.append("Accept", "*/*");
        let parsed = HttpMessage::parse_request(&req.serialize()).unwrap();
        assert_eq!(parsed, req);
    }

    #[test]
    fn response_round_trip() {
        let resp = response_with(&[("ETag", "\"v1\""), ("Cache-Control", "max-age=5")]);
        let parsed = HttpMessage::parse_response(&resp.serialize(), resp.url.clone()).unwrap();
        assert_eq!(parsed, resp);
    }

    #[test]
    fn parse_rejects_alien_status() {
        let bytes = b"HTTP/1.1 404 Not Found\r\n\r\n";
        let err = HttpMessage::parse_response(bytes, url("http://a.com/")).unwrap_err();
        assert_eq!(err, HttpError::UnsupportedStatus(404));
    }
}
