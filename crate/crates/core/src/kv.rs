//! Flat `key = value` text with `#` comments and optional `[section]` headers.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    /// 1-based source line.
    pub line: usize,
    /// Enclosing `[section]` header, if any.
    pub section: Option<String>,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries. Keys must be unique within a section.
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    let mut section = None;
    let mut section_start = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|n| !n.is_empty() && !n.contains(['[', ']']))
                .ok_or_else(|| Error::Parse { line, msg: format!("malformed section header {content:?}") })?;
            section = Some(name.to_string());
            section_start = out.len();
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got {content:?}") })?;
        let key = k.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Parse { line, msg: format!("invalid key {key:?}") });
        }
        if out[section_start..].iter().any(|e| e.key == key) {
            return Err(Error::Parse { line, msg: format!("duplicate key {key:?}") });
        }
        out.push(Entry { line, section: section.clone(), key: key.to_string(), value: v.trim().to_string() });
    }
    Ok(out)
}

impl Entry {
    pub fn parse<T: std::str::FromStr>(&self) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e| Error::Parse { line: self.line, msg: format!("{}: {e}", self.key) })
    }

    pub fn bool(&self) -> Result<bool> {
        match self.value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(Error::Parse { line: self.line, msg: format!("{}: expected true or false", self.key) }),
        }
    }

    /// Comma-separated list.
    pub fn list<T: std::str::FromStr>(&self) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Parse { line: self.line, msg: format!("{}: {e}", self.key) }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_errors() {
        let e = parse("a = 1 # one\n\n[run x]\na = 2\nb=  3,4 \n").unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!((e[1].section.as_deref(), e[1].key.as_str(), e[1].line), (Some("run x"), "a", 4));
        assert_eq!(e[2].list::<u32>().unwrap(), vec![3, 4]);
        assert!(matches!(parse("a = 1\na = 2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("[x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("novalue\n"), Err(Error::Parse { line: 1, .. })));
    }
}
