//! Plain-text `key = value` files. Blank lines and `#` comments are
//! ignored; a key may repeat.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile, Error> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", n + 1)));
            }
            entries.push((k.to_owned(), v.trim().to_owned()));
        }
        Ok(KvFile { entries })
    }

    pub fn load(path: &Path) -> Result<KvFile, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse(&text).map_err(|e| e.context(path))
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_owned(), value.to_string()));
    }

    /// The last value for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, Error> {
        self.get(key).ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, Error>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Parse(format!("`{key}`: {e}"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, Error>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// A comma-separated list.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }
}

impl fmt::Display for KvFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Parses `yes/no`, `true/false`, `on/off` and `1/0`.
pub fn parse_bool(s: &str) -> Result<bool, Error> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "yes" | "true" | "on" => Ok(true),
        "0" | "no" | "false" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("not a boolean: `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_repeats_and_lists() {
        let kv = KvFile::parse("# header\na = 1\n\nb= x, y ,z # trailing\na=2\n").unwrap();
        assert_eq!(kv.get("a"), Some("2"));
        assert_eq!(kv.get_all("a").collect::<Vec<_>>(), ["1", "2"]);
        assert_eq!(kv.list("b"), ["x", "y", "z"]);
        assert_eq!(kv.parsed::<u32>("a").unwrap(), Some(2));
        assert!(kv.require("c").is_err());
    }

    #[test]
    fn round_trips_through_display() {
        let mut kv = KvFile::default();
        kv.push("domain", "www.example.com");
        kv.push("port", 4433);
        assert_eq!(KvFile::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KvFile::parse("just words").is_err());
        assert!(KvFile::parse(" = value").is_err());
    }

    #[test]
    fn booleans() {
        assert!(parse_bool("Yes").unwrap());
        assert!(!parse_bool("0").unwrap());
        assert!(parse_bool("maybe").is_err());
    }
}
