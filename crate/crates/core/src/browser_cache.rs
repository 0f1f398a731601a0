//! Browser cache model: an HTTP cache with strict-LRU capacity eviction plus
//! a Cache-API store that ignores freshness and survives everything except
//! the clearing actions its profile names.
//!
//! Lookups consult the Cache-API store first (it sits in front of the network
//! the way a service worker does), then the HTTP cache. With a partitioned
//! profile every key is scoped by the top-level site.

use crate::http_core::{parse_freshness, FreshnessInfo, Headers, HttpMessage, Status};
use crate::sim_time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;
use url::Url;

pub const MIB: u64 = 1024 * 1024;

/// User actions that remove cached state.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ClearAction {
    ClearCache,
    ClearCookies,
    HardRefresh,
}

/// Which store an entry lives in.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum StoreClass {
    HttpCache,
    CacheApi,
}

impl StoreClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StoreClass::HttpCache => "http_cache",
            StoreClass::CacheApi => "cacheapi",
        }
    }
}

/// Static description of one browser's caching behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserProfile {
    pub name: String,
    /// HTTP-cache capacity in bytes; 0 means unbounded growth (only legal
    /// when `eviction_supported` is false).
    pub capacity: u64,
    pub inter_domain_shared: bool,
    pub eviction_supported: bool,
    /// Countermeasure mode: cache keys are scoped by top-level site.
    #[serde(default)]
    pub partitioned: bool,
    /// Which clearing actions also remove Cache-API entries.
    #[serde(default)]
    pub cacheapi_cleared_by: BTreeSet<ClearAction>,
}

impl BrowserProfile {
    /// Profiles measured in the lab. Sizes: Chromium-family browsers use a
    /// 320 MiB default, Firefox 256 MB; the unbounded profile never evicts
    /// and just grows.
    pub fn builtin(name: &str) -> Option<BrowserProfile> {
        let cookies_only: BTreeSet<ClearAction> = [ClearAction::ClearCookies].into();
        let chromium = |name: &str| BrowserProfile {
            name: name.to_string(),
            capacity: 320 * MIB,
            inter_domain_shared: true,
            eviction_supported: true,
            partitioned: false,
            cacheapi_cleared_by: cookies_only.clone(),
        };
        Some(match name {
            "chrome" => chromium("chrome"),
            "chrome-incognito" => chromium("chrome-incognito"),
            "edge" => chromium("edge"),
            "opera" => chromium("opera"),
            "firefox" => BrowserProfile {
                name: "firefox".into(),
                capacity: 256_000_000,
                inter_domain_shared: true,
                eviction_supported: true,
                partitioned: false,
                cacheapi_cleared_by: cookies_only,
            },
            "ie-unbounded" => BrowserProfile {
                name: "ie-unbounded".into(),
                capacity: 0,
                inter_domain_shared: false,
                eviction_supported: false,
                partitioned: false,
                cacheapi_cleared_by: BTreeSet::new(),
            },
            "chrome-partitioned" => {
                let mut p = chromium("chrome-partitioned");
                p.partitioned = true;
                p
            }
            _ => return None,
        })
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "chrome",
            "chrome-incognito",
            "edge",
            "firefox",
            "opera",
            "ie-unbounded",
            "chrome-partitioned",
        ]
    }
}

/// A cached response plus its bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    /// Cache key: the full URL (scoped by site when the profile partitions).
    pub url: String,
    pub response: HttpMessage,
    pub stored_at: SimTime,
    pub freshness: FreshnessInfo,
    pub size: u64,
    pub infected: bool,
    pub store: StoreClass,
}

impl CacheEntry {
    pub fn new(
        url: impl Into<String>,
        response: HttpMessage,
        stored_at: SimTime,
        freshness: FreshnessInfo,
        infected: bool,
        store: StoreClass,
    ) -> CacheEntry {
        let size = response.body_size() as u64;
        CacheEntry {
            url: url.into(),
            response,
            stored_at,
            freshness,
            size,
            infected,
            store,
        }
    }
}

/// Full identity of a stored entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EntryKey {
    pub partition: Option<String>,
    pub store: StoreClass,
    pub url: String,
}

#[derive(Debug, Clone)]
struct Slot {
    entry: CacheEntry,
    last_used: u64,
}

/// Outcome of a cache lookup.
#[derive(Debug, PartialEq, Eq)]
pub enum Lookup<'a> {
    Fresh(&'a CacheEntry),
    /// Past its lifetime; the caller must revalidate before reuse.
    Stale(&'a CacheEntry),
    Miss,
}

/// One browser's cache instance (HTTP cache plus Cache-API store).
#[derive(Debug, Clone)]
pub struct Cache {
    profile: BrowserProfile,
    slots: BTreeMap<EntryKey, Slot>,
    tick: u64,
    http_bytes: u64,
    cacheapi_bytes: u64,
}

impl Cache {
    pub fn new(profile: BrowserProfile) -> Cache {
        Cache {
            profile,
            slots: BTreeMap::new(),
            tick: 0,
            http_bytes: 0,
            cacheapi_bytes: 0,
        }
    }

    pub fn profile(&self) -> &BrowserProfile {
        &self.profile
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Bytes held by the HTTP cache; the capacity bound applies to these.
    pub fn http_bytes(&self) -> u64 {
        self.http_bytes
    }

    pub fn cacheapi_bytes(&self) -> u64 {
        self.cacheapi_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.http_bytes + self.cacheapi_bytes
    }

    pub fn keys(&self) -> impl Iterator<Item = &EntryKey> {
        self.slots.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&EntryKey, &CacheEntry)> {
        self.slots.iter().map(|(k, s)| (k, &s.entry))
    }

    fn partition_of(&self, site: &str) -> Option<String> {
        self.profile
            .partitioned
            .then(|| site.to_ascii_lowercase())
    }

    pub fn key_for(&self, site: &str, store: StoreClass, url: &str) -> EntryKey {
        EntryKey {
            partition: self.partition_of(site),
            store,
            url: url.to_string(),
        }
    }

    /// Peek without touching recency.
    pub fn peek(&self, site: &str, store: StoreClass, url: &str) -> Option<&CacheEntry> {
        self.slots
            .get(&self.key_for(site, store, url))
            .map(|s| &s.entry)
    }

    /// True when either store holds an infected entry for this key.
    pub fn has_infected(&self, site: &str, url: &str) -> bool {
        [StoreClass::CacheApi, StoreClass::HttpCache]
            .into_iter()
            .any(|store| self.peek(site, store, url).is_some_and(|e| e.infected))
    }

    /// Stores an entry, evicting least-recently-used HTTP-cache entries while
    /// the HTTP store exceeds capacity. Evicted entries are returned in
    /// eviction order. Cache-API entries are never size-evicted.
    pub fn put(&mut self, site: &str, entry: CacheEntry) -> Result<Vec<CacheEntry>, CacheError> {
        if entry.freshness.no_store {
            return Err(CacheError::NoStoreEntry { url: entry.url });
        }
        debug_assert_eq!(entry.size, entry.response.body_size() as u64);
        let capacity = self.profile.capacity;
        if self.profile.eviction_supported
            && entry.store == StoreClass::HttpCache
            && entry.size > capacity
        {
            return Err(CacheError::Oversize {
                size: entry.size,
                capacity,
            });
        }
        let key = self.key_for(site, entry.store, &entry.url);
        let store = entry.store;
        let size = entry.size;
        self.tick += 1;
        let replaced = self.slots.insert(
            key,
            Slot {
                entry,
                last_used: self.tick,
            },
        );
        if let Some(old) = replaced {
            self.credit_bytes(old.entry.store, old.entry.size);
        }
        match store {
            StoreClass::HttpCache => self.http_bytes += size,
            StoreClass::CacheApi => self.cacheapi_bytes += size,
        }
        let mut evicted = Vec::new();
        if self.profile.eviction_supported {
            while self.http_bytes > capacity {
                match self.evict_lru_http() {
                    Some(victim) => evicted.push(victim),
                    None => break,
                }
            }
        }
        Ok(evicted)
    }

    fn credit_bytes(&mut self, store: StoreClass, size: u64) {
        match store {
            StoreClass::HttpCache => self.http_bytes -= size,
            StoreClass::CacheApi => self.cacheapi_bytes -= size,
        }
    }

    fn evict_lru_http(&mut self) -> Option<CacheEntry> {
        let victim = self
            .slots
            .iter()
            .filter(|(k, _)| k.store == StoreClass::HttpCache)
            .min_by_key(|(_, s)| s.last_used)
            .map(|(k, _)| k.clone())?;
        let slot = self.slots.remove(&victim).expect("victim key just seen");
        self.credit_bytes(StoreClass::HttpCache, slot.entry.size);
        Some(slot.entry)
    }

    /// Looks a URL up under a top-level site, refreshing recency on any hit.
    /// Cache-API entries never expire by freshness.
    pub fn lookup(&mut self, site: &str, url: &str, now: SimTime) -> Lookup<'_> {
        self.tick += 1;
        let tick = self.tick;
        let api_key = self.key_for(site, StoreClass::CacheApi, url);
        if self.slots.contains_key(&api_key) {
            let slot = self.slots.get_mut(&api_key).expect("checked above");
            slot.last_used = tick;
            return Lookup::Fresh(&slot.entry);
        }
        let http_key = self.key_for(site, StoreClass::HttpCache, url);
        match self.slots.get_mut(&http_key) {
            Some(slot) => {
                slot.last_used = tick;
                if slot.entry.freshness.is_fresh(slot.entry.stored_at, now) {
                    Lookup::Fresh(&slot.entry)
                } else {
                    Lookup::Stale(&slot.entry)
                }
            }
            None => Lookup::Miss,
        }
    }

    /// Marks an entry revalidated: its stored time becomes `now`.
    pub fn refresh_entry(&mut self, site: &str, store: StoreClass, url: &str, now: SimTime) -> bool {
        let key = self.key_for(site, store, url);
        match self.slots.get_mut(&key) {
            Some(slot) => {
                slot.entry.stored_at = now;
                true
            }
            None => false,
        }
    }

    /// The forced-eviction procedure: inserts sequentially named junk objects
    /// until every pre-existing HTTP-cache entry is gone and the inserted
    /// bytes have reached capacity, whichever happens later. Returns the junk
    /// object count.
    pub fn evict_all_via_junk(
        &mut self,
        site: &str,
        junk_size: u64,
        junk_url_prefix: &str,
        now: SimTime,
    ) -> Result<u64, CacheError> {
        if !self.profile.eviction_supported {
            return Err(CacheError::UnsupportedProfile {
                profile: self.profile.name.clone(),
            });
        }
        let capacity = self.profile.capacity;
        if junk_size == 0 || junk_size > capacity {
            return Err(CacheError::BadJunkSize {
                junk_size,
                capacity,
            });
        }
        Url::parse(junk_url_prefix).map_err(|_| CacheError::BadJunkPrefix {
            prefix: junk_url_prefix.to_string(),
        })?;
        // Multiset of pre-existing HTTP keys still standing; a key counts as
        // gone when evicted or overwritten by a junk object.
        let mut remaining: Vec<EntryKey> = self
            .slots
            .keys()
            .filter(|k| k.store == StoreClass::HttpCache)
            .cloned()
            .collect();
        let mut inserted = 0u64;
        let mut count = 0u64;
        while !(remaining.is_empty() && inserted >= capacity) {
            count += 1;
            let url = format!("{junk_url_prefix}junk{count:02}.jpg");
            let response = junk_response(&url, junk_size)?;
            let freshness = parse_freshness(&response).expect("junk response is well-formed");
            let entry = CacheEntry::new(&url, response, now, freshness, false, StoreClass::HttpCache);
            let key = self.key_for(site, StoreClass::HttpCache, &url);
            if let Some(pos) = remaining.iter().position(|k| *k == key) {
                remaining.remove(pos);
            }
            for victim in self.put(site, entry)? {
                if let Some(pos) = remaining.iter().position(|k| k.url == victim.url) {
                    remaining.remove(pos);
                }
            }
            inserted += junk_size;
        }
        Ok(count)
    }

    /// Applies a clearing action; returns the removed entries in key order.
    /// HTTP entries go with `clear_cache`; Cache-API entries go only with the
    /// actions the profile names; a hard refresh deletes nothing.
    pub fn clear(&mut self, action: ClearAction) -> Vec<CacheEntry> {
        let clear_http = action == ClearAction::ClearCache;
        let clear_api = self.profile.cacheapi_cleared_by.contains(&action);
        let doomed: Vec<EntryKey> = self
            .slots
            .keys()
            .filter(|k| match k.store {
                StoreClass::HttpCache => clear_http,
                StoreClass::CacheApi => clear_api,
            })
            .cloned()
            .collect();
        let mut removed = Vec::with_capacity(doomed.len());
        for key in doomed {
            let slot = self.slots.remove(&key).expect("key just listed");
            self.credit_bytes(slot.entry.store, slot.entry.size);
            removed.push(slot.entry);
        }
        removed
    }
}

fn junk_response(url: &str, junk_size: u64) -> Result<HttpMessage, CacheError> {
    let parsed = Url::parse(url).map_err(|_| CacheError::BadJunkPrefix {
        prefix: url.to_string(),
    })?;
    Ok(HttpMessage::response(Status::Ok, parsed)
        .with_headers(Headers::from_pairs([
            ("Content-Type", "image/jpeg"),
            ("Cache-Control", "max-age=31536000"),
        ]))
        .with_body(vec![0u8; junk_size as usize]))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("entry for `{url}` is marked no-store")]
    NoStoreEntry { url: String },
    #[error("entry of {size} bytes exceeds the {capacity}-byte capacity")]
    Oversize { size: u64, capacity: u64 },
    #[error("profile `{profile}` does not support forced eviction")]
    UnsupportedProfile { profile: String },
    #[error("junk size {junk_size} is invalid for capacity {capacity}")]
    BadJunkSize { junk_size: u64, capacity: u64 },
    #[error("junk url prefix `{prefix}` is not an absolute url")]
    BadJunkPrefix { prefix: String },
}
