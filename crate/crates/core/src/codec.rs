//! Little-endian framing shared by checkpoints and example streams.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) fn put_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_len(w: &mut impl Write, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
    put_u32(w, v)
}

/// u32 byte length, then UTF-8 bytes.
pub(crate) fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_len(w, s.len())?;
    w.write_all(s.as_bytes())
}

/// Reader that maps a short read to [`Error::Truncated`] naming the field.
pub(crate) struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Reader { inner }
    }

    pub(crate) fn bytes(&mut self, buf: &mut [u8], what: &'static str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Truncated(what),
            _ => Error::io("<stream>", e),
        })
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b, what)?;
        Ok(b[0])
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    /// Reads `len` bytes without trusting `len` for the allocation size.
    pub(crate) fn vec(&mut self, len: usize, what: &'static str) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let got = (&mut self.inner)
            .take(len as u64)
            .read_to_end(&mut out)
            .map_err(|e| Error::io("<stream>", e))?;
        if got < len {
            return Err(Error::Truncated(what));
        }
        Ok(out)
    }

    pub(crate) fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.vec(len, what)?;
        String::from_utf8(bytes).map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))
    }

    /// True when no bytes remain.
    pub(crate) fn at_end(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::io("<stream>", e)),
            }
        }
    }
}
