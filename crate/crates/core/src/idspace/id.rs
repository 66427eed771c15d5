use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::Mutex;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IdError;

/// Crockford base-32: digits and uppercase letters without I, L, O, U.
pub const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

/// `NAMESPACE:SUFFIX`, e.g. `SYNAPSE:1-1ACR`.
///
/// The namespace is an uppercase token starting with a letter. The suffix is
/// Crockford base-32 in hyphen-separated groups; every group after the first
/// has exactly four characters, the first has one to four.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IdString {
    namespace: String,
    suffix: String,
}

impl IdString {
    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    pub fn new(namespace: &str, suffix: &str) -> Result<Self, IdError> {
        parse_id(&format!("{namespace}:{suffix}"))
    }
}

impl fmt::Display for IdString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, self.suffix)
    }
}

impl FromStr for IdString {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_id(s)
    }
}

impl TryFrom<String> for IdString {
    type Error = IdError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        parse_id(&value)
    }
}

impl From<IdString> for String {
    fn from(value: IdString) -> Self {
        value.to_string()
    }
}

/// Checks a namespace token and returns it uppercased.
pub fn normalize_namespace(namespace: &str) -> Result<String, IdError> {
    let bad = |position: usize, reason: &str| IdError::MalformedId {
        position,
        reason: reason.into(),
    };
    let mut chars = namespace.chars();
    match chars.next() {
        None => return Err(bad(0, "empty namespace")),
        Some(c) if !c.is_ascii_alphabetic() => {
            return Err(bad(0, "namespace must start with a letter"))
        }
        _ => {}
    }
    if let Some(i) = namespace.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        return Err(bad(i, "namespace may only hold letters, digits and `_`"));
    }
    Ok(namespace.to_ascii_uppercase())
}

/// Grammar-checks `text` and returns the case-normalized identifier.
/// Error positions are byte offsets into `text`.
pub fn parse_id(text: &str) -> Result<IdString, IdError> {
    let bad = |position: usize, reason: &str| IdError::MalformedId {
        position,
        reason: reason.into(),
    };
    let Some(colon) = text.find(':') else {
        return Err(bad(text.len(), "expected `:` after the namespace"));
    };
    let namespace = normalize_namespace(&text[..colon])?;
    let suffix_start = colon + 1;
    let suffix = &text[suffix_start..];
    if suffix.is_empty() {
        return Err(bad(suffix_start, "empty suffix"));
    }

    let mut normalized = String::with_capacity(suffix.len());
    let mut group_len = 0;
    let mut group_index = 0;
    for (offset, c) in suffix.char_indices() {
        let position = suffix_start + offset;
        if c == '-' {
            if group_len == 0 {
                return Err(bad(position, "empty group"));
            }
            if group_index > 0 && group_len != 4 {
                return Err(bad(
                    position,
                    "groups after the first must have four characters",
                ));
            }
            group_index += 1;
            group_len = 0;
            normalized.push('-');
            continue;
        }
        let upper = c.to_ascii_uppercase();
        if !CROCKFORD.contains(&(upper as u8)) || !upper.is_ascii() {
            return Err(bad(position, "not a Crockford base-32 character"));
        }
        group_len += 1;
        if group_len > 4 {
            return Err(bad(position, "groups have at most four characters"));
        }
        normalized.push(upper);
    }
    if group_len == 0 {
        return Err(bad(text.len(), "empty group"));
    }
    if group_index > 0 && group_len != 4 {
        return Err(bad(
            text.len(),
            "groups after the first must have four characters",
        ));
    }
    Ok(IdString {
        namespace,
        suffix: normalized,
    })
}

/// Renders 80 bits as sixteen Crockford characters in four groups.
pub(crate) fn encode_suffix(bits: u128) -> String {
    let mut chars = [0u8; 16];
    for (i, slot) in chars.iter_mut().enumerate() {
        let shift = 5 * (15 - i);
        *slot = CROCKFORD[((bits >> shift) & 0x1f) as usize];
    }
    let text = std::str::from_utf8(&chars).expect("alphabet is ASCII");
    format!(
        "{}-{}-{}-{}",
        &text[0..4],
        &text[4..8],
        &text[8..12],
        &text[12..16]
    )
}

/// Suffix whose 80 bits come from hashing `key`, so the same key always
/// names the same identifier.
pub fn derive_suffix(key: &str) -> String {
    let digest = Sha256::digest(key.as_bytes());
    let mut bits: u128 = 0;
    for b in &digest[..10] {
        bits = (bits << 8) | u128::from(*b);
    }
    encode_suffix(bits)
}

/// Fresh suffixes: 64 random bits followed by a 16-bit sequence number.
#[derive(Debug)]
pub struct SuffixSource {
    rng: Mutex<StdRng>,
    sequence: AtomicU16,
}

impl SuffixSource {
    pub fn from_entropy() -> Self {
        SuffixSource {
            rng: Mutex::new(StdRng::from_entropy()),
            sequence: AtomicU16::new(0),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        SuffixSource {
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
            sequence: AtomicU16::new(0),
        }
    }

    pub fn next_suffix(&self) -> String {
        let random: u64 = self.rng.lock().unwrap().gen();
        let sequence = self.sequence.fetch_add(1, Ordering::Relaxed);
        encode_suffix((u128::from(random) << 16) | u128::from(sequence))
    }

    pub fn next_id(&self, namespace: &str) -> Result<IdString, IdError> {
        Ok(IdString {
            namespace: normalize_namespace(namespace)?,
            suffix: self.next_suffix(),
        })
    }
}
