use std::fmt;

use serde::{Deserialize, Serialize};

use super::BagError;

pub(crate) const PAYLOAD_DIR: &str = "data";

/// A normalized, relative path inside a bag. Components are joined with `/`,
/// none of them is empty, `.` or `..`, so the path can never leave the bag
/// root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BagPath(String);

impl BagPath {
    pub fn new(path: impl Into<String>) -> Result<Self, BagError> {
        let path = path.into();
        let bad = |why: &str| BagError::InvalidPath {
            path: path.clone(),
            reason: why.to_string(),
        };
        if path.is_empty() {
            return Err(bad("empty path"));
        }
        if path.starts_with('/') {
            return Err(bad("absolute path"));
        }
        if path.contains('\0') {
            return Err(bad("NUL byte"));
        }
        for component in path.split('/') {
            match component {
                "" => return Err(bad("empty path component")),
                "." | ".." => return Err(bad("relative path component")),
                _ => {}
            }
        }
        Ok(BagPath(path))
    }

    /// A path that must live under the payload directory.
    pub fn payload(path: impl Into<String>) -> Result<Self, BagError> {
        let path = BagPath::new(path)?;
        if !path.is_payload() {
            return Err(BagError::InvalidPath {
                path: path.0,
                reason: "payload paths must be under data/".into(),
            });
        }
        Ok(path)
    }

    /// Builds `data/<relative>`.
    pub fn in_payload(relative: &str) -> Result<Self, BagError> {
        BagPath::payload(format!("{PAYLOAD_DIR}/{relative}"))
    }

    pub fn is_payload(&self) -> bool {
        self.0
            .strip_prefix(PAYLOAD_DIR)
            .is_some_and(|rest| rest.len() > 1 && rest.starts_with('/'))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The path with CR, LF and `%` percent-encoded, as written in manifest
    /// and fetch lines.
    pub fn encode_for_line(&self) -> String {
        let mut out = String::with_capacity(self.0.len());
        for c in self.0.chars() {
            match c {
                '%' => out.push_str("%25"),
                '\r' => out.push_str("%0D"),
                '\n' => out.push_str("%0A"),
                c => out.push(c),
            }
        }
        out
    }

    pub fn decode_from_line(encoded: &str) -> Result<Self, BagError> {
        BagPath::new(decode_line_path(encoded))
    }
}

fn decode_line_path(encoded: &str) -> String {
    let mut out = String::with_capacity(encoded.len());
    let mut rest = encoded;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let decoded = match tail.get(..3).map(|s| s.to_ascii_uppercase()) {
            Some(code) if code == "%25" => Some('%'),
            Some(code) if code == "%0D" => Some('\r'),
            Some(code) if code == "%0A" => Some('\n'),
            _ => None,
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &tail[3..];
            }
            None => {
                out.push('%');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

impl fmt::Display for BagPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for BagPath {
    type Error = BagError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        BagPath::new(value)
    }
}

impl From<BagPath> for String {
    fn from(value: BagPath) -> Self {
        value.0
    }
}

impl AsRef<str> for BagPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_escaping_paths() {
        for bad in [
            "",
            "/etc/passwd",
            "data/../x",
            "data//x",
            "./data/x",
            "data/x/",
        ] {
            assert!(BagPath::new(bad).is_err(), "{bad:?} accepted");
        }
        assert!(BagPath::payload("bag-info.txt").is_err());
        assert!(BagPath::payload("data").is_err());
        assert!(BagPath::payload("database/x").is_err());
        assert!(BagPath::payload("data/x").is_ok());
    }

    #[test]
    fn line_encoding_escapes_only_cr_lf_percent() {
        let p = BagPath::new("data/a b\r\n100%.txt").unwrap();
        assert_eq!(p.encode_for_line(), "data/a b%0D%0A100%25.txt");
        assert_eq!(
            BagPath::decode_from_line("data/a b%0d%0a100%25.txt").unwrap(),
            p
        );
        // Unknown escapes pass through untouched.
        assert_eq!(decode_line_path("data/%41"), "data/%41");
    }

    proptest! {
        #[test]
        fn line_encoding_round_trips(name in "[a-z%\r\n é]{1,12}") {
            prop_assume!(!name.contains('/'));
            let p = BagPath::in_payload(&name).unwrap();
            let encoded = p.encode_for_line();
            prop_assert!(!encoded.contains('\n') && !encoded.contains('\r'));
            prop_assert_eq!(BagPath::decode_from_line(&encoded).unwrap(), p);
        }
    }
}
