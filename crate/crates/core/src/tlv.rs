//! Minimal type-length-value codec used by every canonical encoding in the
//! crate. Each element is one type octet, a 4-octet big-endian length and the
//! value bytes.

use crate::record::RecordError;

pub(crate) const HEADER_LEN: usize = 5;

pub(crate) struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub(crate) fn new() -> Self {
        TlvWriter { buf: Vec::with_capacity(256) }
    }

    pub(crate) fn put(&mut self, ty: u8, value: &[u8]) -> &mut Self {
        self.buf.push(ty);
        self.buf.extend_from_slice(&(value.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    /// Writes a nested element whose value is produced by `f`.
    pub(crate) fn nested(&mut self, ty: u8, f: impl FnOnce(&mut TlvWriter)) -> &mut Self {
        let mut inner = TlvWriter::new();
        f(&mut inner);
        self.put(ty, &inner.buf)
    }

    pub(crate) fn put_u64(&mut self, ty: u8, v: u64) -> &mut Self {
        self.put(ty, &v.to_be_bytes())
    }

    pub(crate) fn put_u32(&mut self, ty: u8, v: u32) -> &mut Self {
        self.put(ty, &v.to_be_bytes())
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct TlvReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> TlvReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        TlvReader { buf, pos: 0 }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub(crate) fn peek_type(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    pub(crate) fn next(&mut self) -> Result<(u8, &'a [u8]), RecordError> {
        let rest = &self.buf[self.pos..];
        if rest.len() < HEADER_LEN {
            return Err(RecordError::Malformed("truncated element header"));
        }
        let ty = rest[0];
        let len = u32::from_be_bytes([rest[1], rest[2], rest[3], rest[4]]) as usize;
        if rest.len() - HEADER_LEN < len {
            return Err(RecordError::Malformed("element length exceeds buffer"));
        }
        let value = &rest[HEADER_LEN..HEADER_LEN + len];
        self.pos += HEADER_LEN + len;
        Ok((ty, value))
    }

    pub(crate) fn expect(&mut self, ty: u8, what: &'static str) -> Result<&'a [u8], RecordError> {
        let (got, value) = self.next()?;
        if got != ty {
            return Err(RecordError::Malformed(what));
        }
        Ok(value)
    }

    /// Consumes the next element if it has type `ty`.
    pub(crate) fn optional(&mut self, ty: u8) -> Result<Option<&'a [u8]>, RecordError> {
        if self.peek_type() == Some(ty) {
            Ok(Some(self.next()?.1))
        } else {
            Ok(None)
        }
    }

    pub(crate) fn finish(&self) -> Result<(), RecordError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(RecordError::Malformed("trailing bytes"))
        }
    }
}

pub(crate) fn read_u64(value: &[u8]) -> Result<u64, RecordError> {
    let arr: [u8; 8] = value
        .try_into()
        .map_err(|_| RecordError::Malformed("integer must be 8 octets"))?;
    Ok(u64::from_be_bytes(arr))
}

pub(crate) fn read_u32(value: &[u8]) -> Result<u32, RecordError> {
    let arr: [u8; 4] = value
        .try_into()
        .map_err(|_| RecordError::Malformed("integer must be 4 octets"))?;
    Ok(u32::from_be_bytes(arr))
}

pub(crate) fn read_str(value: &[u8]) -> Result<&str, RecordError> {
    std::str::from_utf8(value).map_err(|_| RecordError::Malformed("text is not UTF-8"))
}
