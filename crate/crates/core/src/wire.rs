//! Little-endian wire encoding for everything that crosses a machine
//! boundary inside a message payload.
//!
//! Variable-length collections are length-prefixed with a `u32`. The
//! format only needs to be stable within one build; it exists so that
//! message sizes can be charged in words like a real transport would.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("payload truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("invalid tag {tag} for {what}")]
    BadTag { tag: u8, what: &'static str },
    #[error("length {len} exceeds limit {limit}")]
    BadLength { len: usize, limit: usize },
}

pub type WireResult<T> = Result<T, WireError>;

/// Types that can be written to / read from a message payload.
pub trait Wire: Sized {
    fn put(&self, out: &mut Vec<u8>);
    fn take(buf: &mut &[u8]) -> WireResult<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.put(&mut out);
        out
    }

    fn from_bytes(mut bytes: &[u8]) -> WireResult<Self> {
        let v = Self::take(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(WireError::BadLength {
                len: bytes.len(),
                limit: 0,
            });
        }
        Ok(v)
    }
}

#[inline]
pub fn take_bytes<'a>(buf: &mut &'a [u8], n: usize) -> WireResult<&'a [u8]> {
    if buf.len() < n {
        return Err(WireError::Truncated {
            needed: n - buf.len(),
        });
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

macro_rules! impl_wire_int {
    ($($t:ty),*) => {$(
        impl Wire for $t {
            #[inline]
            fn put(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            #[inline]
            fn take(buf: &mut &[u8]) -> WireResult<Self> {
                let raw = take_bytes(buf, std::mem::size_of::<$t>())?;
                Ok(<$t>::from_le_bytes(raw.try_into().unwrap()))
            }
        }
    )*};
}

impl_wire_int!(u8, u16, u32, u64, i64);

impl Wire for f64 {
    #[inline]
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }
    #[inline]
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(f64::from_bits(u64::take(buf)?))
    }
}

impl Wire for bool {
    fn put(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        match u8::take(buf)? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(WireError::BadTag { tag, what: "bool" }),
        }
    }
}

impl Wire for () {
    fn put(&self, _out: &mut Vec<u8>) {}
    fn take(_buf: &mut &[u8]) -> WireResult<Self> {
        Ok(())
    }
}

/// Sanity cap on decoded lengths; a desk-scale run never comes close.
const MAX_LEN: usize = 1 << 28;

impl<T: Wire> Wire for Vec<T> {
    fn put(&self, out: &mut Vec<u8>) {
        (self.len() as u32).put(out);
        for item in self {
            item.put(out);
        }
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        let len = u32::take(buf)? as usize;
        if len > MAX_LEN {
            return Err(WireError::BadLength {
                len,
                limit: MAX_LEN,
            });
        }
        let mut v = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            v.push(T::take(buf)?);
        }
        Ok(v)
    }
}

impl Wire for String {
    fn put(&self, out: &mut Vec<u8>) {
        (self.len() as u32).put(out);
        out.extend_from_slice(self.as_bytes());
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        let len = u32::take(buf)? as usize;
        if len > MAX_LEN {
            return Err(WireError::BadLength {
                len,
                limit: MAX_LEN,
            });
        }
        let raw = take_bytes(buf, len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::BadTag {
            tag: 0,
            what: "utf8 string",
        })
    }
}

impl<A: Wire, B: Wire> Wire for (A, B) {
    fn put(&self, out: &mut Vec<u8>) {
        self.0.put(out);
        self.1.put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok((A::take(buf)?, B::take(buf)?))
    }
}

impl<T: Wire> Wire for Option<T> {
    fn put(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.put(out);
            }
        }
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        match u8::take(buf)? {
            0 => Ok(None),
            1 => Ok(Some(T::take(buf)?)),
            tag => Err(WireError::BadTag {
                tag,
                what: "option",
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_scalars() {
        for v in [0u64, 1, u64::MAX, 0x0123_4567_89ab_cdef] {
            assert_eq!(u64::from_bytes(&v.to_bytes()).unwrap(), v);
        }
        for v in [0i64, -1, i64::MIN, i64::MAX] {
            assert_eq!(i64::from_bytes(&v.to_bytes()).unwrap(), v);
        }
        let f = -1234.5678e-9f64;
        assert_eq!(f64::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn roundtrip_vec_and_option() {
        let v: Vec<(u32, i64)> = vec![(1, -5), (2, 7)];
        assert_eq!(Vec::<(u32, i64)>::from_bytes(&v.to_bytes()).unwrap(), v);
        let o: Option<String> = Some("hello".into());
        assert_eq!(Option::<String>::from_bytes(&o.to_bytes()).unwrap(), o);
    }

    #[test]
    fn truncated_is_an_error() {
        let bytes = 12345u64.to_bytes();
        assert!(matches!(
            u64::from_bytes(&bytes[..5]),
            Err(WireError::Truncated { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = 1u32.to_bytes();
        bytes.push(0xff);
        assert!(u32::from_bytes(&bytes).is_err());
    }
}
