//! Desk-scale laboratory for studying persistent browser-cache script
//! infections against simulated clients, caches, and servers.
//!
//! The crate is organised around the attack lifecycle:
//!
//! - [`http_core`]: shared HTTP message model, caching-freshness arithmetic,
//!   and the request/URL manipulations the injected script relies on.
//! - [`browser_cache`]: per-profile browser HTTP-cache and Cache-API store
//!   model, including the junk-fill forced-eviction procedure.
//! - [`tcp_inject`]: simplified TCP connection state with an on-path
//!   eavesdropper that crafts spoofed response segments.
//! - [`parasite`]: construction of infected objects — payload splicing,
//!   cache-header inflation, security-header stripping, and URL-based
//!   attack-module dispatch.
//! - [`c2_codec`]: bidirectional covert channel built from image dimensions
//!   (downstream) and request URLs (upstream).
//! - [`netsim`]: deterministic discrete-event simulator wiring clients,
//!   attacker, shared caches, and origin servers into reproducible scenarios.
//! - [`audit`]: persistency and security-header analyzer over snapshot
//!   corpora, plus a synthetic corpus generator for closure testing.
//!
//! Everything is deterministic: a scenario run with the same inputs and seed
//! produces a byte-identical event log.

pub mod audit;
pub mod browser_cache;
pub mod c2_codec;
pub mod http_core;
pub mod netsim;
pub mod parasite;
pub mod sim_time;
pub mod tcp_inject;

pub use sim_time::{SimDuration, SimTime};
