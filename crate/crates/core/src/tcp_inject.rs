//! Simplified TCP connection model with an eavesdropping on-path attacker.
//!
//! The attacker sees the victim's request segments, mirrors their port and
//! sequence parameters, and races a spoofed response against the genuine
//! server. Acceptance is first-writer-wins per stream offset: once a byte at
//! an offset has been delivered it is never overwritten, which is exactly why
//! the earlier injected segment beats the later genuine one.
//!
//! Connections are born synchronized from the first observed request; there
//! is no handshake, checksum, or retransmission modeling.

use crate::http_core::HttpMessage;
use crate::sim_time::SimTime;
use std::collections::BTreeMap;
use thiserror::Error;

/// Receive window: segments starting more than this many bytes past the next
/// expected sequence number are ignored. Fixed, no window scaling.
pub const RECEIVE_WINDOW: u32 = 65_535;

/// Payload bytes per segment for the split helper (typical MSS).
pub const MAX_SEGMENT_PAYLOAD: usize = 1_460;

/// One TCP segment. Sequence arithmetic wraps mod 2^32.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub payload: Vec<u8>,
    pub arrival_time: SimTime,
}

impl TcpSegment {
    pub fn new(
        src_port: u16,
        dst_port: u16,
        seq: u32,
        ack: u32,
        payload: Vec<u8>,
        arrival_time: SimTime,
    ) -> TcpSegment {
        assert!(src_port != 0 && dst_port != 0, "ports must be nonzero");
        TcpSegment {
            src_port,
            dst_port,
            seq,
            ack,
            payload,
            arrival_time,
        }
    }
}

/// Parameters for a spoofed server response, mirrored from an observed
/// client request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectionParams {
    /// Server-side source port (the port the request was sent to).
    pub src_port: u16,
    /// Victim's port the spoofed response must target.
    pub dst_port: u16,
    /// Sequence number of the spoofed response (the request's ack).
    pub seq: u32,
    /// Acknowledgement: request seq plus request payload length, mod 2^32.
    pub ack: u32,
}

/// Derives spoofed-response parameters from an observed request segment.
pub fn observe(request: &TcpSegment) -> Result<InjectionParams, TcpError> {
    if request.payload.is_empty() {
        return Err(TcpError::NotHttpRequest);
    }
    Ok(InjectionParams {
        src_port: request.dst_port,
        dst_port: request.src_port,
        seq: request.ack,
        ack: request.seq.wrapping_add(request.payload.len() as u32),
    })
}

/// Builds a single spoofed segment carrying the serialized response.
/// Fails when the payload does not fit one segment; use
/// [`craft_injection_split`] then.
pub fn craft_injection(
    params: &InjectionParams,
    response: &HttpMessage,
    at: SimTime,
) -> Result<TcpSegment, TcpError> {
    let payload = response.serialize();
    if payload.len() > MAX_SEGMENT_PAYLOAD {
        return Err(TcpError::OversizePayload {
            len: payload.len(),
            max: MAX_SEGMENT_PAYLOAD,
        });
    }
    Ok(TcpSegment::new(
        params.src_port,
        params.dst_port,
        params.seq,
        params.ack,
        payload,
        at,
    ))
}

/// Splits a serialized response across as many segments as needed, with
/// contiguous sequence numbers.
pub fn craft_injection_split(
    params: &InjectionParams,
    response: &HttpMessage,
    at: SimTime,
) -> Vec<TcpSegment> {
    let payload = response.serialize();
    if payload.is_empty() {
        return vec![TcpSegment::new(
            params.src_port,
            params.dst_port,
            params.seq,
            params.ack,
            Vec::new(),
            at,
        )];
    }
    payload
        .chunks(MAX_SEGMENT_PAYLOAD)
        .enumerate()
        .map(|(i, chunk)| {
            TcpSegment::new(
                params.src_port,
                params.dst_port,
                params.seq.wrapping_add((i * MAX_SEGMENT_PAYLOAD) as u32),
                params.ack,
                chunk.to_vec(),
                at,
            )
        })
        .collect()
}

/// Verdict of delivering a segment to a connection endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Bytes newly appended to the reassembled stream (may include
    /// previously buffered bytes that this segment unblocked).
    Delivered(Vec<u8>),
    /// Every offset the segment covers was already written; first writer wins.
    IgnoredDuplicate,
    /// Segment starts beyond the receive window (or before the stream base).
    IgnoredOutOfWindow,
    /// In-window but ahead of a gap; held for reassembly.
    Buffered,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Delivered(_) => "delivered",
            Verdict::IgnoredDuplicate => "ignored_duplicate",
            Verdict::IgnoredOutOfWindow => "ignored_out_of_window",
            Verdict::Buffered => "buffered",
        }
    }
}

/// Receive-side state of one simulated connection (the victim's view of the
/// server-to-client stream).
#[derive(Debug, Clone)]
pub struct ConnState {
    pub client_port: u16,
    pub server_port: u16,
    base_seq: u32,
    delivered: Vec<u8>,
    /// First-writer bytes waiting beyond the contiguous prefix, keyed by
    /// absolute stream offset.
    pending: BTreeMap<u64, u8>,
}

impl ConnState {
    /// A connection synchronized to the server's initial sequence number,
    /// as learned from the first observed request's ack field.
    pub fn new(client_port: u16, server_port: u16, server_isn: u32) -> ConnState {
        ConnState {
            client_port,
            server_port,
            base_seq: server_isn,
            delivered: Vec::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn next_expected_seq(&self) -> u32 {
        self.base_seq.wrapping_add(self.delivered.len() as u32)
    }

    /// Contiguously reassembled bytes. Bytes at a given offset never change
    /// once delivered.
    pub fn delivered(&self) -> &[u8] {
        &self.delivered
    }

    /// Delivers a segment. First writer wins at every stream offset.
    pub fn accept(&mut self, seg: &TcpSegment) -> Result<Verdict, TcpError> {
        if seg.src_port != self.server_port || seg.dst_port != self.client_port {
            return Err(TcpError::PortMismatch {
                expected: (self.server_port, self.client_port),
                got: (seg.src_port, seg.dst_port),
            });
        }
        let len = self.delivered.len() as u64;
        let next = self.next_expected_seq();
        let rel_fwd = seg.seq.wrapping_sub(next);
        let start = if u64::from(rel_fwd) <= u64::from(RECEIVE_WINDOW) {
            len + u64::from(rel_fwd)
        } else {
            let behind = next.wrapping_sub(seg.seq);
            if u64::from(behind) <= len {
                len - u64::from(behind)
            } else {
                return Ok(Verdict::IgnoredOutOfWindow);
            }
        };
        let end = start + seg.payload.len() as u64;
        let mut wrote = false;
        for (i, &byte) in seg.payload.iter().enumerate() {
            let off = start + i as u64;
            if off < len {
                continue; // already delivered
            }
            self.pending.entry(off).or_insert_with(|| {
                wrote = true;
                byte
            });
        }
        let mut appended = Vec::new();
        while let Some(byte) = self.pending.remove(&(self.delivered.len() as u64)) {
            self.delivered.push(byte);
            appended.push(byte);
        }
        if !appended.is_empty() {
            Ok(Verdict::Delivered(appended))
        } else if wrote {
            Ok(Verdict::Buffered)
        } else {
            debug_assert!(end <= len || seg.payload.is_empty() || !self.pending.is_empty());
            Ok(Verdict::IgnoredDuplicate)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TcpError {
    #[error("segment ports {got:?} do not match connection {expected:?}")]
    PortMismatch {
        expected: (u16, u16),
        got: (u16, u16),
    },
    #[error("segment carries no HTTP request payload")]
    NotHttpRequest,
    #[error("payload of {len} bytes exceeds the {max}-byte segment limit")]
    OversizePayload { len: usize, max: usize },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http_core::{Headers, HttpMessage, Status};
    use url::Url;

    fn seg(src: u16, dst: u16, seq: u32, ack: u32, payload: &[u8], t: u64) -> TcpSegment {
        TcpSegment::new(src, dst, seq, ack, payload.to_vec(), SimTime::from_micros(t))
    }

    // Mirror rule applied by hand: dport <- sport, seq <- ack,
    // ack <- seq + len.
    #[test]
    fn observe_mirrors_request() {
        let req = seg(51_000, 80, 1_000, 5_000, &[0u8; 200], 0);
        let params = observe(&req).unwrap();
        assert_eq!(
            params,
            InjectionParams {
                src_port: 80,
                dst_port: 51_000,
                seq: 5_000,
                ack: 1_200,
            }
        );
    }

    #[test]
    fn observe_ack_wraps_mod_2_32() {
        let req = seg(51_000, 80, u32::MAX - 9, 5_000, &[0u8; 20], 0);
        assert_eq!(observe(&req).unwrap().ack, 10);
    }

    #[test]
    fn observe_rejects_empty_payload() {
        let req = seg(51_000, 80, 1, 2, &[], 0);
        assert_eq!(observe(&req).unwrap_err(), TcpError::NotHttpRequest);
    }

    fn small_response(body_len: usize) -> HttpMessage {
        HttpMessage::response(Status::Ok, Url::parse("http://s.test/a.js").unwrap())
            .with_headers(Headers::from_pairs([("Content-Type", "text/plain")]))
            .with_body(vec![b'x'; body_len])
    }

    #[test]
    fn craft_single_segment() {
        let params = InjectionParams {
            src_port: 80,
            dst_port: 51_000,
            seq: 5_000,
            ack: 1_200,
        };
        let resp = small_response(300);
        let seg = craft_injection(&params, &resp, SimTime::ZERO).unwrap();
        assert_eq!(seg.src_port, 80);
        assert_eq!(seg.dst_port, 51_000);
        assert_eq!(seg.seq, 5_000);
        assert_eq!(seg.payload, resp.serialize());
    }

    #[test]
    fn craft_split_contiguous_seqs() {
        let params = InjectionParams {
            src_port: 80,
            dst_port: 51_000,
            seq: 9_000,
            ack: 1,
        };
        let resp = small_response(4_000);
        assert!(matches!(
            craft_injection(&params, &resp, SimTime::ZERO),
            Err(TcpError::OversizePayload { .. })
        ));
        let segs = craft_injection_split(&params, &resp, SimTime::ZERO);
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].seq, 9_000);
        assert_eq!(segs[1].seq, 9_000 + 1_460);
        assert_eq!(segs[2].seq, 9_000 + 2_920);
        let total: usize = segs.iter().map(|s| s.payload.len()).sum();
        assert_eq!(total, resp.serialize().len());
    }

    #[test]
    fn in_order_base_case_delivers() {
        let mut conn = ConnState::new(51_000, 80, 5_000);
        let v = conn.accept(&seg(80, 51_000, 5_000, 0, b"hello", 1)).unwrap();
        assert_eq!(v, Verdict::Delivered(b"hello".to_vec()));
        assert_eq!(conn.delivered(), b"hello");
        assert_eq!(conn.next_expected_seq(), 5_005);
    }

    // Fig-style race: the injected segment lands first, the genuine server
    // response covering the same offsets is ignored as a duplicate.
    #[test]
    fn first_writer_wins_race() {
        let mut conn = ConnState::new(51_000, 80, 5_000);
        let injected = seg(80, 51_000, 5_000, 0, b"EVIL", 5);
        let genuine = seg(80, 51_000, 5_000, 0, b"good", 9);
        assert_eq!(
            conn.accept(&injected).unwrap(),
            Verdict::Delivered(b"EVIL".to_vec())
        );
        assert_eq!(conn.accept(&genuine).unwrap(), Verdict::IgnoredDuplicate);
        assert_eq!(conn.delivered(), b"EVIL");
    }

    #[test]
    fn beyond_window_ignored() {
        let mut conn = ConnState::new(51_000, 80, 5_000);
        let far = seg(80, 51_000, 5_000u32.wrapping_add(70_000), 0, b"x", 1);
        assert_eq!(conn.accept(&far).unwrap(), Verdict::IgnoredOutOfWindow);
    }

    #[test]
    fn partial_overlap_appends_only_new_suffix() {
        let mut conn = ConnState::new(51_000, 80, 100);
        conn.accept(&seg(80, 51_000, 100, 0, b"abcd", 1)).unwrap();
        // Overlaps [2..4) then extends two new bytes.
        let v = conn.accept(&seg(80, 51_000, 102, 0, b"XYQR", 2)).unwrap();
        assert_eq!(v, Verdict::Delivered(b"QR".to_vec()));
        assert_eq!(conn.delivered(), b"abcdQR");
    }

    #[test]
    fn gap_buffers_until_filled() {
        let mut conn = ConnState::new(51_000, 80, 100);
        let ahead = seg(80, 51_000, 104, 0, b"LATE", 1);
        assert_eq!(conn.accept(&ahead).unwrap(), Verdict::Buffered);
        assert_eq!(conn.delivered(), b"");
        // Filling the gap drains the buffered bytes too; buffered bytes win
        // over the overlapping portion of the filler.
        let filler = seg(80, 51_000, 100, 0, b"abcdXXXX", 2);
        assert_eq!(
            conn.accept(&filler).unwrap(),
            Verdict::Delivered(b"abcdLATE".to_vec())
        );
        assert_eq!(conn.delivered(), b"abcdLATE");
    }

    #[test]
    fn port_mismatch_is_routing_error() {
        let mut conn = ConnState::new(51_000, 80, 100);
        let err = conn.accept(&seg(81, 51_000, 100, 0, b"x", 1)).unwrap_err();
        assert!(matches!(err, TcpError::PortMismatch { .. }));
    }
}
