//! Persistency and security-header analyzer over snapshot corpora.
//!
//! A corpus is one record per (site, day): the objects seen on the site that
//! day (name, content hash, kind) plus the site root's response headers.
//! Persistency runs are anchored at day 0 — the attacker cares about objects
//! stable from the start of observation — and missing days break runs.

pub mod synth;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Http,
    Https,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Js,
    Html,
    Other,
}

/// One object observed on a site on a given day. Inline scripts have an
/// empty name and never count as persistent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub name: String,
    pub content_hash: String,
    pub kind: ObjectKind,
}

/// One (site, day) crawl record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSnapshot {
    pub site: String,
    pub day: u32,
    pub objects: Vec<ObjectRecord>,
    pub headers: Vec<(String, String)>,
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssl_version: Option<String>,
}

/// A snapshot corpus indexed by site and day.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sites: BTreeMap<String, BTreeMap<u32, SiteSnapshot>>,
}

impl Corpus {
    pub fn from_snapshots(
        snapshots: impl IntoIterator<Item = SiteSnapshot>,
    ) -> Result<Corpus, AuditError> {
        let mut corpus = Corpus::default();
        for snap in snapshots {
            let days = corpus.sites.entry(snap.site.clone()).or_default();
            if days.contains_key(&snap.day) {
                return Err(AuditError::DuplicateSnapshot {
                    site: snap.site,
                    day: snap.day,
                });
            }
            days.insert(snap.day, snap);
        }
        Ok(corpus)
    }

    /// Parses newline-delimited JSON. A leading `{"meta": ...}` line written
    /// by the tooling is skipped; errors name the offending line.
    pub fn from_jsonl(text: &str) -> Result<Corpus, AuditError> {
        let mut snapshots = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if is_meta_line(trimmed) {
                continue;
            }
            let snap: SiteSnapshot =
                serde_json::from_str(trimmed).map_err(|e| AuditError::MalformedLine {
                    line: line_no,
                    detail: e.to_string(),
                })?;
            snapshots.push(snap);
        }
        Corpus::from_snapshots(snapshots)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for days in self.sites.values() {
            for snap in days.values() {
                out.push_str(&serde_json::to_string(snap).expect("snapshot serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Number of days covered: max day index + 1.
    pub fn span_days(&self) -> u32 {
        self.sites
            .values()
            .flat_map(|days| days.keys().copied())
            .max()
            .map_or(0, |d| d + 1)
    }

    pub fn sites(&self) -> impl Iterator<Item = (&str, &BTreeMap<u32, SiteSnapshot>)> {
        self.sites.iter().map(|(s, d)| (s.as_str(), d))
    }

    /// The earliest snapshot of each site; header metrics come from these.
    fn first_snapshots(&self) -> impl Iterator<Item = &SiteSnapshot> {
        self.sites
            .values()
            .filter_map(|days| days.values().next())
    }
}

fn is_meta_line(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key("meta")))
        .unwrap_or(false)
}

/// Fraction of sites keeping at least one named (name-persistent) or
/// byte-identical (content-persistent) script per window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistencyCurve {
    pub windows: Vec<PersistencyPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistencyPoint {
    pub window: u32,
    pub name_fraction: f64,
    pub content_fraction: f64,
}

impl PersistencyCurve {
    pub fn at(&self, window: u32) -> Option<&PersistencyPoint> {
        self.windows.iter().find(|p| p.window == window)
    }
}

/// Per-site run lengths anchored at day 0: the longest prefix of days over
/// which some script keeps its name, and likewise its day-0 content hash.
fn site_runs(days: &BTreeMap<u32, SiteSnapshot>) -> (u32, u32) {
    let Some(day0) = days.get(&0) else {
        return (0, 0);
    };
    let mut name_run = 0u32;
    let mut content_run = 0u32;
    for obj in &day0.objects {
        if obj.kind != ObjectKind::Js || obj.name.is_empty() {
            continue;
        }
        let mut names = 0u32;
        let mut contents = 0u32;
        let mut content_unbroken = true;
        for day in 0.. {
            let Some(snap) = days.get(&day) else { break };
            let Some(found) = snap.objects.iter().find(|o| o.name == obj.name) else {
                break;
            };
            names = day + 1;
            if content_unbroken && found.content_hash == obj.content_hash {
                contents = day + 1;
            } else {
                content_unbroken = false;
            }
        }
        name_run = name_run.max(names);
        content_run = content_run.max(contents);
    }
    (name_run, content_run)
}

/// Computes the persistency curve for windows `1..=max_window`.
pub fn persistency_curve(
    corpus: &Corpus,
    max_window: u32,
) -> Result<PersistencyCurve, AuditError> {
    if corpus.is_empty() {
        return Err(AuditError::EmptyCorpus);
    }
    let span = corpus.span_days();
    if max_window == 0 || max_window > span {
        return Err(AuditError::WindowOutOfRange {
            requested: max_window,
            span,
        });
    }
    let runs: Vec<(u32, u32)> = corpus.sites.values().map(site_runs).collect();
    let total = runs.len() as f64;
    let windows = (1..=max_window)
        .map(|w| {
            let names = runs.iter().filter(|(n, _)| *n >= w).count();
            let contents = runs.iter().filter(|(_, c)| *c >= w).count();
            PersistencyPoint {
                window: w,
                name_fraction: names as f64 / total,
                content_fraction: contents as f64 / total,
            }
        })
        .collect();
    Ok(PersistencyCurve { windows })
}

/// Per-site infection candidates: scripts whose names persist across the
/// window, ranked by content stability (fraction of window days whose hash
/// equals the day-0 hash), ties broken lexicographically.
pub fn select_targets(corpus: &Corpus, window: u32) -> BTreeMap<String, Vec<String>> {
    let mut out = BTreeMap::new();
    for (site, days) in &corpus.sites {
        let mut ranked: Vec<(usize, String)> = Vec::new();
        let Some(day0) = days.get(&0) else {
            out.insert(site.clone(), Vec::new());
            continue;
        };
        for obj in &day0.objects {
            if obj.kind != ObjectKind::Js || obj.name.is_empty() {
                continue;
            }
            let mut present_all = true;
            let mut stable_days = 0usize;
            for day in 0..window {
                match days.get(&day).and_then(|s| {
                    s.objects.iter().find(|o| o.name == obj.name)
                }) {
                    Some(found) => {
                        if found.content_hash == obj.content_hash {
                            stable_days += 1;
                        }
                    }
                    None => {
                        present_all = false;
                        break;
                    }
                }
            }
            if present_all {
                ranked.push((stable_days, obj.name.clone()));
            }
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        out.insert(site.clone(), ranked.into_iter().map(|(_, n)| n).collect());
    }
    out
}

/// Splits a Content-Security-Policy into its directives. Directives are
/// semicolon-separated; the first token names the directive and the rest are
/// its sources; duplicate names keep the first occurrence.
pub fn parse_csp(policy: &str) -> BTreeMap<String, Vec<String>> {
    let mut map = BTreeMap::new();
    for segment in policy.split(';') {
        let mut tokens = segment.split_whitespace();
        let Some(name) = tokens.next() else { continue };
        let name = name.to_ascii_lowercase();
        map.entry(name)
            .or_insert_with(|| tokens.map(str::to_string).collect());
    }
    map
}

/// A counted metric with its fraction of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub fraction: f64,
}

impl Bucket {
    fn of(count: usize, total: usize) -> Bucket {
        Bucket {
            count,
            fraction: count as f64 / total as f64,
        }
    }
}

/// Which CSP header variant a site supplies; deprecated variants are the
/// prefixed legacy spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CspVariant {
    ContentSecurityPolicy,
    XCsp,
    XWebkitCsp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspVariantCounts {
    pub content_security_policy: usize,
    pub x_csp: usize,
    pub x_webkit_csp: usize,
    pub none: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectSrcStats {
    /// Sites whose policy includes a connect-src directive.
    pub uses: usize,
    /// Source list is exactly the bare wildcard `*`.
    pub bare_wildcard: usize,
    /// Wildcard appears among other sources.
    pub mixed_wildcard: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub sites: usize,
    pub no_https: Bucket,
    pub vulnerable_ssl: Bucket,
    pub no_hsts: Bucket,
    pub hsts_preload_listed: usize,
    pub csp_present: Bucket,
    pub csp_variants: CspVariantCounts,
    pub csp_supplied_but_empty: usize,
    pub csp_malformed: usize,
    pub connect_src: ConnectSrcStats,
}

fn header_value<'a>(snap: &'a SiteSnapshot, name: &str) -> Option<&'a str> {
    snap.headers
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

fn csp_of(snap: &SiteSnapshot) -> Option<(CspVariant, &str)> {
    for (variant, header) in [
        (CspVariant::ContentSecurityPolicy, "Content-Security-Policy"),
        (CspVariant::XCsp, "X-CSP"),
        (CspVariant::XWebkitCsp, "X-Webkit-CSP"),
    ] {
        if let Some(value) = header_value(snap, header) {
            return Some((variant, value));
        }
    }
    None
}

/// Audits scheme, SSL-version, HSTS, preload, and CSP metrics over the
/// first snapshot of every site. Every classification partitions the site
/// set, so the bucket counts per metric always sum to the corpus size.
pub fn header_audit(corpus: &Corpus, preload: &BTreeSet<String>) -> Result<AuditReport, AuditError> {
    if corpus.is_empty() {
        return Err(AuditError::EmptyCorpus);
    }
    let total = corpus.site_count();
    let mut no_https = 0;
    let mut vulnerable_ssl = 0;
    let mut no_hsts = 0;
    let mut preload_listed = 0;
    let mut variants = CspVariantCounts {
        content_security_policy: 0,
        x_csp: 0,
        x_webkit_csp: 0,
        none: 0,
    };
    let mut supplied_but_empty = 0;
    let mut malformed = 0;
    let mut connect = ConnectSrcStats {
        uses: 0,
        bare_wildcard: 0,
        mixed_wildcard: 0,
    };
    for snap in corpus.first_snapshots() {
        if snap.scheme == Scheme::Http {
            no_https += 1;
        }
        if let Some(version) = &snap.ssl_version {
            if version == "SSL2.0" || version == "SSL3.0" {
                vulnerable_ssl += 1;
            }
        }
        if header_value(snap, "Strict-Transport-Security").is_none() {
            no_hsts += 1;
        }
        if preload.contains(&snap.site) {
            preload_listed += 1;
        }
        match csp_of(snap) {
            None => variants.none += 1,
            Some((variant, policy)) => {
                match variant {
                    CspVariant::ContentSecurityPolicy => variants.content_security_policy += 1,
                    CspVariant::XCsp => variants.x_csp += 1,
                    CspVariant::XWebkitCsp => variants.x_webkit_csp += 1,
                }
                let trimmed = policy.trim();
                let directives = parse_csp(policy);
                if trimmed.is_empty() {
                    supplied_but_empty += 1;
                } else if directives.is_empty() {
                    malformed += 1;
                }
                if let Some(sources) = directives.get("connect-src") {
                    connect.uses += 1;
                    let has_wildcard = sources.iter().any(|s| s == "*");
                    if sources.len() == 1 && has_wildcard {
                        connect.bare_wildcard += 1;
                    } else if has_wildcard {
                        connect.mixed_wildcard += 1;
                    }
                }
            }
        }
    }
    let csp_present =
        variants.content_security_policy + variants.x_csp + variants.x_webkit_csp;
    Ok(AuditReport {
        sites: total,
        no_https: Bucket::of(no_https, total),
        vulnerable_ssl: Bucket::of(vulnerable_ssl, total),
        no_hsts: Bucket::of(no_hsts, total),
        hsts_preload_listed: preload_listed,
        csp_present: Bucket::of(csp_present, total),
        csp_variants: variants,
        csp_supplied_but_empty: supplied_but_empty,
        csp_malformed: malformed,
        connect_src: connect,
    })
}

impl AuditReport {
    /// Plain-text table rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut row = |label: &str, value: String| {
            let _ = writeln!(out, "{label:<34} {value}");
        };
        row("sites", self.sites.to_string());
        row(
            "no https",
            format!("{} ({:.4})", self.no_https.count, self.no_https.fraction),
        );
        row(
            "vulnerable ssl (SSL2.0/SSL3.0)",
            format!(
                "{} ({:.4})",
                self.vulnerable_ssl.count, self.vulnerable_ssl.fraction
            ),
        );
        row(
            "no hsts",
            format!("{} ({:.4})", self.no_hsts.count, self.no_hsts.fraction),
        );
        row("hsts preload listed", self.hsts_preload_listed.to_string());
        row(
            "csp present",
            format!(
                "{} ({:.4})",
                self.csp_present.count, self.csp_present.fraction
            ),
        );
        row(
            "csp variants (modern/x-csp/x-webkit)",
            format!(
                "{}/{}/{}",
                self.csp_variants.content_security_policy,
                self.csp_variants.x_csp,
                self.csp_variants.x_webkit_csp
            ),
        );
        row("csp supplied but empty", self.csp_supplied_but_empty.to_string());
        row("csp malformed", self.csp_malformed.to_string());
        row(
            "connect-src uses/bare*/mixed*",
            format!(
                "{}/{}/{}",
                self.connect_src.uses,
                self.connect_src.bare_wildcard,
                self.connect_src.mixed_wildcard
            ),
        );
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("window of {requested} days exceeds the corpus span of {span} days")]
    WindowOutOfRange { requested: u32, span: u32 },
    #[error("corpus line {line} is malformed: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("duplicate snapshot for site `{site}` day {day}")]
    DuplicateSnapshot { site: String, day: u32 },
}
