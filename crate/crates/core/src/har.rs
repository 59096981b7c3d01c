//! HAR 1.2 archive reading.
//!
//! Only the fields needed to rebuild a snapshot are modeled. Chrome's
//! non-standard `_initiator` is understood in both of its shapes: a bare URL
//! string or an object carrying `url` or a `stack` of call frames.

use base64::Engine as _;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{normalize_url, CanonicalUrl};

#[derive(Debug, Error)]
pub enum HarError {
    #[error("malformed HAR: {0}")]
    Json(#[from] serde_json::Error),
    #[error("HAR entry {index}: {message}")]
    Entry { index: usize, message: String },
    #[error("HAR has no entries")]
    Empty,
}

#[derive(Debug, Deserialize)]
pub struct Har {
    pub log: HarLog,
}

#[derive(Debug, Deserialize)]
pub struct HarLog {
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub pages: Vec<HarPage>,
    pub entries: Vec<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
pub struct HarPage {
    #[serde(default)]
    pub title: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawEntry {
    request: RawRequest,
    response: RawResponse,
    #[serde(default, rename = "_initiator")]
    initiator: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct RawRequest {
    url: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawResponse {
    status: i64,
    #[serde(default)]
    headers: Vec<RawHeader>,
    #[serde(default)]
    content: Option<RawContent>,
}

#[derive(Debug, Deserialize)]
struct RawHeader {
    name: String,
    value: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawContent {
    #[serde(default)]
    mime_type: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    encoding: Option<String>,
}

/// One decoded HAR entry.
#[derive(Debug, Clone, PartialEq)]
pub struct HarEntry {
    pub url: CanonicalUrl,
    pub status: u16,
    pub media_type: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub initiator_url: Option<CanonicalUrl>,
}

pub fn parse_har(bytes: &[u8]) -> Result<Vec<HarEntry>, HarError> {
    let har: Har = serde_json::from_slice(bytes)?;
    har.log
        .entries
        .into_iter()
        .enumerate()
        .map(|(index, value)| decode_entry(index, value))
        .collect()
}

fn decode_entry(index: usize, value: serde_json::Value) -> Result<HarEntry, HarError> {
    let err = |message: String| HarError::Entry { index, message };
    let raw: RawEntry = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
    let url = normalize_url(&raw.request.url, None).map_err(|e| err(e.to_string()))?;
    let status = u16::try_from(raw.response.status.max(0)).map_err(|e| err(e.to_string()))?;
    let content = raw.response.content;
    let media_type = content
        .as_ref()
        .and_then(|c| c.mime_type.clone())
        .unwrap_or_default();
    let body = match content.as_ref().and_then(|c| c.text.as_deref()) {
        None => Vec::new(),
        Some(text) => match content.as_ref().and_then(|c| c.encoding.as_deref()) {
            Some("base64") => base64::engine::general_purpose::STANDARD
                .decode(text.trim())
                .map_err(|e| err(format!("bad base64 body: {e}")))?,
            _ => text.as_bytes().to_vec(),
        },
    };
    let initiator_url = raw
        .initiator
        .as_ref()
        .and_then(initiator_url_of)
        .and_then(|u| normalize_url(&u, None).ok());
    Ok(HarEntry {
        url,
        status,
        media_type,
        headers: raw
            .response
            .headers
            .into_iter()
            .map(|h| (h.name, h.value))
            .collect(),
        body,
        initiator_url,
    })
}

fn initiator_url_of(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s.clone()),
        serde_json::Value::Object(map) => {
            if let Some(url) = map.get("url").and_then(|u| u.as_str()) {
                if !url.is_empty() {
                    return Some(url.to_owned());
                }
            }
            // innermost frame first, then async parents
            let mut stack = map.get("stack");
            while let Some(s) = stack {
                let frame = s
                    .get("callFrames")
                    .and_then(|f| f.as_array())
                    .and_then(|frames| {
                        frames
                            .iter()
                            .filter_map(|f| f.get("url").and_then(|u| u.as_str()))
                            .find(|u| !u.is_empty())
                    });
                if let Some(url) = frame {
                    return Some(url.to_owned());
                }
                stack = s.get("parent");
            }
            None
        }
        _ => None,
    }
}
