//! Frame streams and the raw RGB24 frame pipe.
//!
//! Pipe framing, repeated until end of input:
//! `width u32 | height u32 | frame index u32` (little-endian) then `width * height * 3` bytes.

use std::io::{ErrorKind, Read, Write};

use image::RgbImage;

use crate::error::{DatasetError, Result};

#[derive(Debug, Clone)]
pub struct FrameStream {
    pub source: String,
    pub fps: f64,
    pub frames: Vec<RgbImage>,
}

impl FrameStream {
    pub fn new(source: impl Into<String>, fps: f64, frames: Vec<RgbImage>) -> Result<Self> {
        let source = source.into();
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(DatasetError::Config(format!("{source}: fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            let dims = first.dimensions();
            if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dimensions() != dims) {
                return Err(DatasetError::Frame {
                    index: i,
                    reason: format!("resolution {:?} differs from stream resolution {dims:?}", f.dimensions()),
                });
            }
        }
        Ok(Self { source, fps, frames })
    }
}

/// Every `stride`-th frame starting with frame 0, paired with its index.
pub fn extract_frames(stream: &FrameStream, stride: usize) -> Result<Vec<(usize, RgbImage)>> {
    if stride == 0 {
        return Err(DatasetError::ZeroStride);
    }
    if stream.frames.is_empty() {
        return Err(DatasetError::EmptyStream(stream.source.clone()));
    }
    Ok(stream
        .frames
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, f)| (i, f.clone()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipeFrame {
    pub index: u32,
    pub image: RgbImage,
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(std::io::Error::new(ErrorKind::UnexpectedEof, "short read")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Reads frames until a clean end of input. A partial header or payload is an error.
pub fn read_frame_pipe(mut r: impl Read) -> Result<Vec<PipeFrame>> {
    let mut out = Vec::new();
    let mut header = [0u8; 12];
    loop {
        let n = out.len();
        let pipe_err = |e: std::io::Error| DatasetError::Frame {
            index: n,
            reason: format!("frame pipe: {e}"),
        };
        if !read_full(&mut r, &mut header).map_err(pipe_err)? {
            return Ok(out);
        }
        let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
        let (w, h, index) = (word(0), word(1), word(2));
        let len = (w as usize)
            .checked_mul(h as usize)
            .and_then(|p| p.checked_mul(3))
            .filter(|&l| l > 0 && l <= 1 << 28)
            .ok_or_else(|| DatasetError::Frame {
                index: n,
                reason: format!("implausible frame size {w}x{h}"),
            })?;
        let mut payload = vec![0u8; len];
        if !read_full(&mut r, &mut payload).map_err(pipe_err)? {
            return Err(DatasetError::Frame {
                index: n,
                reason: "frame pipe ended after header".into(),
            });
        }
        let image = RgbImage::from_raw(w, h, payload).expect("payload length checked");
        out.push(PipeFrame { index, image });
    }
}

pub fn write_frame_pipe(mut w: impl Write, frames: &[PipeFrame]) -> std::io::Result<()> {
    for f in frames {
        w.write_all(&f.image.width().to_le_bytes())?;
        w.write_all(&f.image.height().to_le_bytes())?;
        w.write_all(&f.index.to_le_bytes())?;
        w.write_all(f.image.as_raw())?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: usize) -> FrameStream {
        let frames = (0..n).map(|i| RgbImage::from_pixel(2, 2, image::Rgb([i as u8, 0, 0]))).collect();
        FrameStream::new("s", 30.0, frames).unwrap()
    }

    #[test]
    fn stride_two_over_sixty_frames() {
        let got = extract_frames(&stream(60), 2).unwrap();
        assert_eq!(got.len(), 30);
        assert_eq!(got.iter().map(|(i, _)| *i).collect::<Vec<_>>(), (0..60).step_by(2).collect::<Vec<_>>());
        assert_eq!(got[29].1.get_pixel(0, 0)[0], 58);
    }

    #[test]
    fn odd_length_and_identity() {
        let got = extract_frames(&stream(5), 2).unwrap();
        assert_eq!(got.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(extract_frames(&stream(7), 1).unwrap().len(), 7);
    }

    #[test]
    fn errors() {
        assert!(matches!(extract_frames(&stream(0), 2), Err(DatasetError::EmptyStream(_))));
        assert!(matches!(extract_frames(&stream(3), 0), Err(DatasetError::ZeroStride)));
        assert!(FrameStream::new("s", 0.0, vec![]).is_err());
        let mixed = vec![RgbImage::new(2, 2), RgbImage::new(3, 2)];
        assert!(matches!(FrameStream::new("s", 30.0, mixed), Err(DatasetError::Frame { index: 1, .. })));
    }

    #[test]
    fn pipe_round_trip_and_truncation() {
        let frames: Vec<PipeFrame> = (0..3)
            .map(|i| PipeFrame {
                index: i * 2,
                image: RgbImage::from_fn(3, 2, |x, y| image::Rgb([x as u8, y as u8, i as u8])),
            })
            .collect();
        let mut buf = Vec::new();
        write_frame_pipe(&mut buf, &frames).unwrap();
        assert_eq!(buf.len(), 3 * (12 + 18));
        assert_eq!(read_frame_pipe(&buf[..]).unwrap(), frames);
        assert!(read_frame_pipe(&buf[..buf.len() - 1]).is_err());
        assert!(read_frame_pipe(&buf[..5]).is_err());
        assert!(read_frame_pipe(&[][..]).unwrap().is_empty());
    }
}
