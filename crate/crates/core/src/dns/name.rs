use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::DnsError;
use crate::bytes::Reader;

/// A fully-qualified domain name: lowercase, dot-terminated. The root is
/// `"."`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name(String);

impl Name {
    pub fn root() -> Name {
        Name(String::from("."))
    }

    /// Accepts names with or without the trailing dot; uppercase input is
    /// folded.
    pub fn parse(s: &str) -> Result<Name, DnsError> {
        let s = s.trim();
        if s == "." || s.is_empty() {
            return Ok(Name::root());
        }
        let body = s.strip_suffix('.').unwrap_or(s);
        let mut out = String::with_capacity(body.len() + 1);
        for label in body.split('.') {
            check_label(label.as_bytes(), true)?;
            out.push_str(&label.to_ascii_lowercase());
            out.push('.');
        }
        if out.len() + 1 > 255 {
            return Err(DnsError::Malformed("name too long"));
        }
        Ok(Name(out))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0 == "."
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.split('.').filter(|l| !l.is_empty())
    }

    pub fn label_count(&self) -> u8 {
        self.labels().count() as u8
    }

    pub fn parent(&self) -> Option<Name> {
        if self.is_root() {
            return None;
        }
        let rest = &self.0[self.0.find('.').unwrap() + 1..];
        Some(if rest.is_empty() {
            Name::root()
        } else {
            Name(String::from(rest))
        })
    }

    /// True if `self` equals `ancestor` or lies below it.
    pub fn is_within(&self, ancestor: &Name) -> bool {
        if ancestor.is_root() {
            return true;
        }
        self.0 == ancestor.0
            || (self.0.len() > ancestor.0.len()
                && self.0.ends_with(&ancestor.0)
                && self.0.as_bytes()[self.0.len() - ancestor.0.len() - 1] == b'.')
    }

    /// Uncompressed wire form: length-prefixed labels ending in a zero byte.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        self.write_wire(&mut out);
        out
    }

    pub fn wire_len(&self) -> usize {
        if self.is_root() {
            1
        } else {
            self.0.len() + 1
        }
    }

    pub(crate) fn write_wire(&self, out: &mut Vec<u8>) {
        for label in self.labels() {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
        out.push(0);
    }

    /// Strict decoder: labels must already be lowercase.
    pub(crate) fn read_wire(r: &mut Reader<'_>) -> Result<Name, DnsError> {
        let mut out = String::new();
        loop {
            let len = r.u8().map_err(|_| DnsError::Malformed("truncated name"))? as usize;
            if len == 0 {
                break;
            }
            let label = r.take(len).map_err(|_| DnsError::Malformed("truncated name"))?;
            check_label(label, false)?;
            out.push_str(core::str::from_utf8(label).unwrap());
            out.push('.');
            if out.len() > 254 {
                return Err(DnsError::Malformed("name too long"));
            }
        }
        Ok(if out.is_empty() { Name::root() } else { Name(out) })
    }
}

fn check_label(label: &[u8], allow_upper: bool) -> Result<(), DnsError> {
    if label.is_empty() || label.len() > 63 {
        return Err(DnsError::Malformed("bad label length"));
    }
    let ok = label.iter().all(|&c| {
        c.is_ascii_lowercase()
            || c.is_ascii_digit()
            || c == b'-'
            || c == b'_'
            || (allow_upper && c.is_ascii_uppercase())
    });
    if ok {
        Ok(())
    } else {
        Err(DnsError::Malformed("bad label character"))
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Name({})", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes() {
        assert_eq!(Name::parse("WWW.Example.COM").unwrap().as_str(), "www.example.com.");
        assert_eq!(Name::parse("example.com.").unwrap().as_str(), "example.com.");
        assert!(Name::parse(".").unwrap().is_root());
        assert!(Name::parse("a..b").is_err());
        assert!(Name::parse("bad name.com").is_err());
    }

    #[test]
    fn hierarchy() {
        let n = Name::parse("www.example.com").unwrap();
        assert_eq!(n.parent().unwrap().as_str(), "example.com.");
        assert_eq!(Name::parse("com").unwrap().parent(), Some(Name::root()));
        assert_eq!(Name::root().parent(), None);
        assert!(n.is_within(&Name::parse("example.com").unwrap()));
        assert!(n.is_within(&Name::root()));
        assert!(!n.is_within(&Name::parse("ample.com").unwrap()));
        assert_eq!(n.label_count(), 3);
    }

    #[test]
    fn wire_round_trip() {
        let n = Name::parse("www.example.com").unwrap();
        let w = n.to_wire();
        assert_eq!(w.len(), n.wire_len());
        assert_eq!(w, b"\x03www\x07example\x03com\x00");
        assert_eq!(Name::read_wire(&mut Reader::new(&w)).unwrap(), n);
        assert_eq!(Name::root().to_wire(), alloc::vec![0]);
        let mut upper = w.clone();
        upper[1] = b'W';
        assert!(Name::read_wire(&mut Reader::new(&upper)).is_err());
    }
}
