//! Byte transports between the simulated client and server, and frame
//! extraction from a byte stream.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};

use crate::error::{Result, SimError};
use crate::packet::declared_len;

pub type Sender = Box<dyn Write + Send>;
pub type Receiver = Box<dyn Read + Send>;

/// In-process FIFO pipe.
pub fn pipe() -> Result<(Sender, Receiver)> {
    let (r, w) = io::pipe()?;
    Ok((Box::new(w), Box::new(r)))
}

/// Loopback TCP connection carrying the same bytes as [`pipe`].
pub fn tcp_loopback() -> Result<(Sender, Receiver)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let client = TcpStream::connect(listener.local_addr()?)?;
    let (server, _) = listener.accept()?;
    client.set_nodelay(true)?;
    Ok((Box::new(client), Box::new(server)))
}

/// Fills `buf` completely, or returns `false` on a clean end of stream
/// before the first byte.
fn read_full(r: &mut dyn Read, buf: &mut [u8]) -> Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => {
                return Err(SimError::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream ended inside a frame",
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Next complete frame, or `None` at end of stream. Only the framing fields
/// are inspected here; validation is left to the decoder.
pub fn read_frame(r: &mut dyn Read) -> Result<Option<Vec<u8>>> {
    let mut frame = vec![0u8; 6];
    if !read_full(r, &mut frame)? {
        return Ok(None);
    }
    loop {
        match declared_len(&frame)? {
            Some(total) => {
                if total < frame.len() {
                    return Err(SimError::LengthMismatch {
                        expected: total,
                        actual: frame.len(),
                    });
                }
                let have = frame.len();
                frame.resize(total, 0);
                if !read_full(r, &mut frame[have..])? && total > have {
                    return Err(SimError::Io(io::ErrorKind::UnexpectedEof.into()));
                }
                return Ok(Some(frame));
            }
            None => {
                // Header not yet complete: the rank byte tells how much is missing.
                let need = crate::packet::header_bytes(frame[5] as usize);
                let have = frame.len();
                frame.resize(need, 0);
                if !read_full(r, &mut frame[have..])? {
                    return Err(SimError::Io(io::ErrorKind::UnexpectedEof.into()));
                }
            }
        }
    }
}
