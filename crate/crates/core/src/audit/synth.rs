//! Synthetic corpus generator: builds snapshot corpora whose audited
//! statistics hit prescribed targets, so analyzer behaviour can be verified
//! by closure (audit(synthesize(T)) == T).
//!
//! All content is derived from the seed through SHA-256, so equal
//! specifications produce byte-identical corpora.

use super::{ObjectKind, ObjectRecord, Scheme, SiteSnapshot};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// How to resolve a fractional target against a finite site count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Reject targets that are not exactly representable.
    #[default]
    Strict,
    /// Round to the nearest whole site.
    Nearest,
}

/// Bare-wildcard connect-src target: an absolute site count, or a ratio
/// applied to the number of CSP-supplying sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WildcardSpec {
    Count(usize),
    Ratio(u64, u64),
}

/// Targets for a synthesized corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub sites: usize,
    pub days: u32,
    pub seed: u64,
    /// (window, fraction) pairs: the share of sites that must keep one
    /// script name-persistent for at least `window` days.
    pub name_persistency: Vec<(u32, f64)>,
    pub no_https: Option<f64>,
    pub vulnerable_ssl: Option<f64>,
    pub no_hsts: Option<f64>,
    pub csp_presence: Option<f64>,
    /// Among CSP-supplying sites (all of which carry a connect-src
    /// directive), how many use the bare wildcard.
    pub connect_src_wildcard: Option<WildcardSpec>,
    /// How many corpus hosts to place on the emitted preload list.
    pub preload_count: Option<usize>,
    pub rounding: Rounding,
}

impl CorpusSpec {
    pub fn new(sites: usize, days: u32, seed: u64) -> CorpusSpec {
        CorpusSpec {
            sites,
            days,
            seed,
            name_persistency: Vec::new(),
            no_https: None,
            vulnerable_ssl: None,
            no_hsts: None,
            csp_presence: None,
            connect_src_wildcard: None,
            preload_count: None,
            rounding: Rounding::Strict,
        }
    }
}

/// A generated corpus plus the preload list that goes with it.
#[derive(Debug, Clone)]
pub struct SynthesizedCorpus {
    pub snapshots: Vec<SiteSnapshot>,
    pub preload_hosts: Vec<String>,
}

fn resolve_count(
    what: &str,
    fraction: f64,
    total: usize,
    rounding: Rounding,
) -> Result<usize, SynthError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SynthError::Infeasible(format!(
            "{what}: fraction {fraction} outside [0, 1]"
        )));
    }
    let exact = fraction * total as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 && rounding == Rounding::Strict {
        return Err(SynthError::Unrepresentable {
            what: what.to_string(),
            requested: fraction,
            nearest: rounded / total as f64,
        });
    }
    Ok(rounded as usize)
}

fn digest(seed: u64, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    for part in parts {
        hasher.update([0u8]);
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Builds a corpus meeting the spec's targets exactly (or to the nearest
/// site with [`Rounding::Nearest`]).
pub fn synthesize(spec: &CorpusSpec) -> Result<SynthesizedCorpus, SynthError> {
    if spec.sites == 0 || spec.days == 0 {
        return Err(SynthError::Infeasible(
            "corpus needs at least one site and one day".into(),
        ));
    }
    let n = spec.sites;

    // Name-persistency windows, ascending; counts must be non-increasing.
    let mut windows: Vec<(u32, usize)> = Vec::new();
    let mut persist = spec.name_persistency.clone();
    persist.sort_by_key(|(w, _)| *w);
    for (window, fraction) in &persist {
        if *window == 0 || *window > spec.days {
            return Err(SynthError::Infeasible(format!(
                "persistency window {window} outside 1..={}",
                spec.days
            )));
        }
        let count = resolve_count(
            &format!("name persistency at window {window}"),
            *fraction,
            n,
            spec.rounding,
        )?;
        if let Some((_, prev)) = windows.last() {
            if count > *prev {
                return Err(SynthError::Infeasible(
                    "persistency fractions must be non-increasing in window length".into(),
                ));
            }
        }
        windows.push((*window, count));
    }

    // Days each site keeps its stable script name, anchored at day 0.
    let persist_days = |site_idx: usize| -> u32 {
        let mut span = 1; // a daily-renamed script still persists one day
        for (window, count) in &windows {
            if site_idx < *count {
                span = *window;
            }
        }
        // Sites inside the longest window keep the name for the whole run.
        if let Some((_, count)) = windows.last() {
            if site_idx < *count {
                span = spec.days;
            }
        }
        span
    };

    let k_http = spec
        .no_https
        .map(|f| resolve_count("no-https", f, n, spec.rounding))
        .transpose()?
        .unwrap_or(0);
    let k_vuln = spec
        .vulnerable_ssl
        .map(|f| resolve_count("vulnerable-ssl", f, n, spec.rounding))
        .transpose()?
        .unwrap_or(0);
    if k_vuln > n - k_http {
        return Err(SynthError::Infeasible(format!(
            "{k_vuln} vulnerable-ssl sites do not fit among {} https sites",
            n - k_http
        )));
    }
    let k_no_hsts = spec
        .no_hsts
        .map(|f| resolve_count("no-hsts", f, n, spec.rounding))
        .transpose()?
        .unwrap_or(n);
    let k_csp = spec
        .csp_presence
        .map(|f| resolve_count("csp-presence", f, n, spec.rounding))
        .transpose()?
        .unwrap_or(0);
    let k_wild = match spec.connect_src_wildcard {
        None => 0,
        Some(WildcardSpec::Count(c)) => {
            if c > k_csp {
                return Err(SynthError::Infeasible(format!(
                    "{c} wildcard connect-src sites exceed the {k_csp} CSP sites"
                )));
            }
            c
        }
        Some(WildcardSpec::Ratio(num, den)) => {
            if den == 0 {
                return Err(SynthError::Infeasible("wildcard ratio with zero denominator".into()));
            }
            resolve_count(
                "connect-src wildcard ratio",
                num as f64 / den as f64,
                k_csp,
                spec.rounding,
            )?
        }
    };
    let k_preload = spec.preload_count.unwrap_or(0);
    if k_preload > n {
        return Err(SynthError::Infeasible(format!(
            "preload count {k_preload} exceeds {n} sites"
        )));
    }

    let host = |i: usize| format!("site{i:05}.test");
    let mut snapshots = Vec::with_capacity(n * spec.days as usize);
    for i in 0..n {
        let site = host(i);
        let stable_for = persist_days(i);
        let stable_hash = digest(spec.seed, &[&site, "stable"]);
        let scheme = if i < k_http { Scheme::Http } else { Scheme::Https };
        let ssl_version = match scheme {
            Scheme::Http => None,
            // Vulnerable versions are assigned from the top end, which is
            // always inside the https range once feasibility passed.
            Scheme::Https => Some(if i >= n - k_vuln {
                "SSL3.0".to_string()
            } else {
                "TLS1.3".to_string()
            }),
        };
        let mut headers: Vec<(String, String)> =
            vec![("Content-Type".into(), "text/html".into())];
        if i >= k_no_hsts {
            headers.push((
                "Strict-Transport-Security".into(),
                "max-age=63072000".into(),
            ));
        }
        if i < k_csp {
            let policy = if i < k_wild {
                "default-src 'self'; connect-src *"
            } else {
                "default-src 'self'; connect-src 'self'"
            };
            headers.push(("Content-Security-Policy".into(), policy.into()));
        }
        for day in 0..spec.days {
            let script = if day < stable_for {
                ObjectRecord {
                    name: "app.js".into(),
                    content_hash: stable_hash.clone(),
                    kind: ObjectKind::Js,
                }
            } else {
                ObjectRecord {
                    name: format!("app-{day}.js"),
                    content_hash: digest(spec.seed, &[&site, &day.to_string()]),
                    kind: ObjectKind::Js,
                }
            };
            let objects = vec![
                script,
                // Inline script: excluded from persistency by definition.
                ObjectRecord {
                    name: String::new(),
                    content_hash: digest(spec.seed, &[&site, "inline", &day.to_string()]),
                    kind: ObjectKind::Js,
                },
                ObjectRecord {
                    name: "logo.png".into(),
                    content_hash: digest(spec.seed, &[&site, "logo"]),
                    kind: ObjectKind::Other,
                },
            ];
            snapshots.push(SiteSnapshot {
                site: site.clone(),
                day,
                objects,
                headers: headers.clone(),
                scheme,
                ssl_version: ssl_version.clone(),
            });
        }
    }
    let preload_hosts = (0..k_preload).map(host).collect();
    Ok(SynthesizedCorpus {
        snapshots,
        preload_hosts,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("{what}: target {requested} is not representable; nearest is {nearest}")]
    Unrepresentable {
        what: String,
        requested: f64,
        nearest: f64,
    },
    #[error("infeasible corpus spec: {0}")]
    Infeasible(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{header_audit, persistency_curve, Corpus};
    use std::collections::BTreeSet;

    #[test]
    fn eight_site_headline_case() {
        let mut spec = CorpusSpec::new(8, 5, 0);
        spec.name_persistency = vec![(5, 0.875)];
        let built = synthesize(&spec).unwrap();
        let corpus = Corpus::from_snapshots(built.snapshots).unwrap();
        let curve = persistency_curve(&corpus, 5).unwrap();
        assert_eq!(curve.at(5).unwrap().name_fraction, 0.875);
    }

    #[test]
    fn strict_rejects_unrepresentable() {
        let mut spec = CorpusSpec::new(7, 5, 0);
        spec.name_persistency = vec![(5, 0.875)];
        match synthesize(&spec).unwrap_err() {
            SynthError::Unrepresentable { nearest, .. } => {
                assert!((nearest - 6.0 / 7.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nearest_rounds_within_one_site() {
        let mut spec = CorpusSpec::new(7, 5, 0);
        spec.name_persistency = vec![(5, 0.875)];
        spec.rounding = Rounding::Nearest;
        let built = synthesize(&spec).unwrap();
        let corpus = Corpus::from_snapshots(built.snapshots).unwrap();
        let curve = persistency_curve(&corpus, 5).unwrap();
        let got = curve.at(5).unwrap().name_fraction;
        assert!((got - 0.875).abs() <= 1.0 / 7.0);
    }

    #[test]
    fn header_targets_close_under_audit() {
        let mut spec = CorpusSpec::new(100, 1, 1);
        spec.no_https = Some(0.21);
        spec.no_hsts = Some(0.6);
        spec.csp_presence = Some(0.2);
        spec.connect_src_wildcard = Some(WildcardSpec::Count(3));
        spec.preload_count = Some(5);
        let built = synthesize(&spec).unwrap();
        let preload: BTreeSet<String> = built.preload_hosts.iter().cloned().collect();
        let corpus = Corpus::from_snapshots(built.snapshots).unwrap();
        let report = header_audit(&corpus, &preload).unwrap();
        assert_eq!(report.no_https.count, 21);
        assert_eq!(report.no_https.fraction, 0.21);
        assert_eq!(report.no_hsts.count, 60);
        assert_eq!(report.csp_present.count, 20);
        assert_eq!(report.connect_src.uses, 20);
        assert_eq!(report.connect_src.bare_wildcard, 3);
        assert_eq!(report.hsts_preload_listed, 5);
    }

    #[test]
    fn fraction_one_takes_every_site() {
        let mut spec = CorpusSpec::new(10, 3, 0);
        spec.name_persistency = vec![(3, 1.0)];
        let built = synthesize(&spec).unwrap();
        let corpus = Corpus::from_snapshots(built.snapshots).unwrap();
        let curve = persistency_curve(&corpus, 3).unwrap();
        assert_eq!(curve.at(3).unwrap().name_fraction, 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut spec = CorpusSpec::new(5, 2, 42);
        spec.no_https = Some(0.2);
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        let ja = serde_json::to_string(&a.snapshots).unwrap();
        let jb = serde_json::to_string(&b.snapshots).unwrap();
        assert_eq!(ja, jb);
        spec.seed = 43;
        let c = synthesize(&spec).unwrap();
        assert_ne!(ja, serde_json::to_string(&c.snapshots).unwrap());
    }
}
