//! MLLP framing: `0x0B payload 0x1C 0x0D`.

use std::io::{self, BufRead, Write};

pub const START: u8 = 0x0B;
pub const END: [u8; 2] = [0x1C, 0x0D];

pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 3);
    out.push(START);
    out.extend_from_slice(payload);
    out.extend_from_slice(&END);
    out
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    w.write_all(&frame(payload))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on clean end of stream before a start byte.
pub fn read_frame<R: BufRead>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut skipped = Vec::new();
    let n = r.read_until(START, &mut skipped)?;
    if n == 0 {
        return Ok(None);
    }
    if skipped.last() != Some(&START) {
        if skipped.iter().all(u8::is_ascii_whitespace) {
            return Ok(None);
        }
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bytes outside MLLP frame"));
    }
    if skipped[..skipped.len() - 1].iter().any(|b| !b.is_ascii_whitespace()) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bytes outside MLLP frame"));
    }
    let mut payload = Vec::new();
    loop {
        let n = r.read_until(END[0], &mut payload)?;
        if n == 0 || payload.last() != Some(&END[0]) {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated MLLP frame"));
        }
        let mut next = [0u8; 1];
        r.read_exact(&mut next)
            .map_err(|_| io::Error::new(io::ErrorKind::UnexpectedEof, "truncated MLLP frame"))?;
        if next[0] == END[1] {
            payload.pop();
            return Ok(Some(payload));
        }
        payload.push(next[0]);
    }
}

/// Splits a byte buffer holding back-to-back frames.
pub fn split_frames(bytes: &[u8]) -> io::Result<Vec<Vec<u8>>> {
    let mut r = io::BufReader::new(bytes);
    let mut out = Vec::new();
    while let Some(f) = read_frame(&mut r)? {
        out.push(f);
    }
    Ok(out)
}
