//! Length-prefixed framing: a 4-byte big-endian body length followed by the
//! body bytes.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Largest body a reader will accept. Writers are bounded by the `u32`
/// length field only.
pub const MAX_READ_FRAME: usize = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame body of {0} bytes does not fit a 32-bit length")]
    TooLarge(usize),
    #[error("frame declares {0} bytes, above the read limit")]
    OverLimit(usize),
    #[error("stream ended mid-frame")]
    Truncated,
    #[error("stream closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_frame(body: &[u8]) -> Result<Vec<u8>, FrameError> {
    let len = u32::try_from(body.len()).map_err(|_| FrameError::TooLarge(body.len()))?;
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, body: &[u8]) -> Result<(), FrameError> {
    let frame = encode_frame(body)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A stream that ends cleanly before the first header byte
/// yields [`FrameError::Closed`]; any other early end is
/// [`FrameError::Truncated`].
pub fn decode_frame<R: Read + ?Sized>(r: &mut R) -> Result<Vec<u8>, FrameError> {
    let mut header = [0u8; 4];
    let got = read_full(r, &mut header)?;
    if got == 0 {
        return Err(FrameError::Closed);
    }
    if got < 4 {
        return Err(FrameError::Truncated);
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_READ_FRAME {
        return Err(FrameError::OverLimit(len));
    }
    let mut body = vec![0u8; len];
    if read_full(r, &mut body)? < len {
        return Err(FrameError::Truncated);
    }
    Ok(body)
}

fn read_full<R: Read + ?Sized>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
