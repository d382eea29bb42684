use image::RgbImage;
use serde::Serialize;
use thiserror::Error;

use crate::session::SessionConfig;

pub const FRAME_TAG: u8 = 0x01;
/// Tag byte plus little-endian u32 width and height.
pub const HEADER_LEN: usize = 9;
pub const MAX_SIDE: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame message shorter than the {HEADER_LEN}-byte header ({0} bytes)")]
    ShortHeader(usize),
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("frame size {width}x{height} outside 1..={MAX_SIDE}")]
    Size { width: u32, height: u32 },
    #[error("payload is {actual} bytes, {width}x{height} RGB24 needs {expected}")]
    PayloadLength {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
}

pub fn encode_frame(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + img.as_raw().len());
    out.push(FRAME_TAG);
    out.extend_from_slice(&img.width().to_le_bytes());
    out.extend_from_slice(&img.height().to_le_bytes());
    out.extend_from_slice(img.as_raw());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<RgbImage, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::ShortHeader(bytes.len()));
    }
    if bytes[0] != FRAME_TAG {
        return Err(WireError::UnknownTag(bytes[0]));
    }
    let width = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if !(1..=MAX_SIDE).contains(&width) || !(1..=MAX_SIDE).contains(&height) {
        return Err(WireError::Size { width, height });
    }
    let expected = width as usize * height as usize * 3;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(WireError::PayloadLength {
            width,
            height,
            expected,
            actual: payload.len(),
        });
    }
    Ok(RgbImage::from_raw(width, height, payload.to_vec()).expect("length checked"))
}

/// Server reply to one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReply<'a> {
    pub frame: u64,
    pub label: &'a str,
    pub prob: f32,
    pub probs: &'a [f32],
    pub text: &'a str,
    /// Length of the current qualifying run, `0..k`.
    pub run: usize,
    /// Letter committed by this frame, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub committed: Option<&'a str>,
}

/// Server reply to a text command or an idle-gap space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateReply<'a> {
    pub text: &'a str,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReply {
    pub error: String,
}
