//! Line grammars of the text tag files.

use super::{Algorithm, BagError, BagPath, FetchEntry, ManifestEntry};

pub(crate) const DECLARATION: &str = "bagit.txt";
pub(crate) const BAG_INFO: &str = "bag-info.txt";
pub(crate) const FETCH: &str = "fetch.txt";

pub(crate) const SUPPORTED_VERSIONS: [&str; 2] = ["1.0", "0.97"];

fn text<'a>(file: &str, bytes: &'a [u8]) -> Result<&'a str, BagError> {
    std::str::from_utf8(bytes).map_err(|e| BagError::MalformedTagFile {
        path: file.to_string(),
        detail: format!("not UTF-8: {e}"),
    })
}

/// Non-empty lines with their 1-based line numbers. A trailing CR is
/// tolerated on read.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

pub(crate) fn write_declaration(version: &str) -> Vec<u8> {
    format!("BagIt-Version: {version}\nTag-File-Character-Encoding: UTF-8\n").into_bytes()
}

/// Returns the declared version.
pub(crate) fn parse_declaration(bytes: &[u8]) -> Result<String, BagError> {
    let labels = parse_labels(DECLARATION, bytes).map_err(|_| BagError::NotABag)?;
    let lookup = |name: &str| {
        labels
            .iter()
            .find(|(label, _)| label.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.trim().to_string())
    };
    let version = lookup("BagIt-Version").ok_or(BagError::NotABag)?;
    if !SUPPORTED_VERSIONS.contains(&version.as_str()) {
        return Err(BagError::UnsupportedVersion(version));
    }
    match lookup("Tag-File-Character-Encoding") {
        Some(enc) if enc.eq_ignore_ascii_case("UTF-8") => Ok(version),
        other => Err(BagError::MalformedTagFile {
            path: DECLARATION.into(),
            detail: format!("unsupported tag file encoding {other:?}"),
        }),
    }
}

/// `Label: value` lines. A line starting with whitespace continues the
/// previous value; continuation lines are joined with `\n`.
pub(crate) fn parse_labels(file: &str, bytes: &[u8]) -> Result<Vec<(String, String)>, BagError> {
    let text = text(file, bytes)?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (line_no, line) in lines(text) {
        if line.starts_with([' ', '\t']) {
            match pairs.last_mut() {
                Some((_, value)) => {
                    value.push('\n');
                    value.push_str(line.trim_start());
                }
                None => {
                    return Err(BagError::MalformedTagFile {
                        path: file.into(),
                        detail: format!("line {line_no}: continuation without a label"),
                    })
                }
            }
            continue;
        }
        let Some((label, value)) = line.split_once(':') else {
            return Err(BagError::MalformedTagFile {
                path: file.into(),
                detail: format!("line {line_no}: missing `:`"),
            });
        };
        let label = label.trim_end();
        if label.is_empty() {
            return Err(BagError::MalformedTagFile {
                path: file.into(),
                detail: format!("line {line_no}: empty label"),
            });
        }
        pairs.push((label.to_string(), value.trim_start().to_string()));
    }
    Ok(pairs)
}

pub(crate) fn check_label(label: &str, value: &str) -> Result<(), BagError> {
    let bad = |why: &str| BagError::InvalidInfo {
        label: label.to_string(),
        reason: why.to_string(),
    };
    if label.is_empty() || label.trim() != label {
        return Err(bad("label is empty or has surrounding whitespace"));
    }
    if label.contains([':', '\n', '\r']) {
        return Err(bad("label contains `:` or a line break"));
    }
    if value.contains('\r') {
        return Err(bad("value contains a carriage return"));
    }
    if value.split('\n').any(|l| l.trim_start() != l) {
        return Err(bad("value lines may not start with whitespace"));
    }
    Ok(())
}

pub(crate) fn write_labels(pairs: &[(String, String)]) -> Vec<u8> {
    let mut out = String::new();
    for (label, value) in pairs {
        out.push_str(label);
        out.push(':');
        let mut value_lines = value.split('\n');
        if let Some(first) = value_lines.next() {
            if !first.is_empty() {
                out.push(' ');
                out.push_str(first);
            }
        }
        for more in value_lines {
            out.push_str("\n    ");
            out.push_str(more);
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub(crate) fn parse_manifest(
    file: &str,
    algorithm: Algorithm,
    bytes: &[u8],
) -> Result<Vec<ManifestEntry>, BagError> {
    let text = text(file, bytes)?;
    let mut entries = Vec::new();
    for (line_no, line) in lines(text) {
        let malformed = |detail: &str| BagError::MalformedManifestLine {
            file: file.to_string(),
            line: line_no,
            detail: detail.to_string(),
        };
        let Some(split) = line.find([' ', '\t']) else {
            return Err(malformed("expected `<digest> <path>`"));
        };
        let digest = line[..split].to_ascii_lowercase();
        let path = line[split..].trim_start_matches([' ', '\t']);
        if path.is_empty() {
            return Err(malformed("missing path"));
        }
        if !algorithm.is_well_formed(&digest) {
            return Err(malformed(&format!(
                "`{digest}` is not a {algorithm} digest"
            )));
        }
        let path = BagPath::decode_from_line(path).map_err(|e| malformed(&e.to_string()))?;
        entries.push(ManifestEntry {
            algorithm,
            digest,
            path,
        });
    }
    Ok(entries)
}

pub(crate) fn write_manifest(entries: &[ManifestEntry]) -> Vec<u8> {
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.path.as_str().as_bytes().cmp(b.path.as_str().as_bytes()));
    let mut out = String::new();
    for entry in sorted {
        out.push_str(&entry.digest);
        out.push_str("  ");
        out.push_str(&entry.path.encode_for_line());
        out.push('\n');
    }
    out.into_bytes()
}

pub(crate) fn parse_fetch(bytes: &[u8]) -> Result<Vec<FetchEntry>, BagError> {
    let text = text(FETCH, bytes)?;
    let mut entries = Vec::new();
    for (line_no, line) in lines(text) {
        let malformed = |detail: &str| BagError::MalformedFetchLine {
            line: line_no,
            detail: detail.to_string(),
        };
        let mut parts = line.splitn(3, [' ', '\t']);
        let (Some(url), Some(length), Some(path)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed("expected `<url> <length> <path>`"));
        };
        let length = match length {
            "-" => None,
            n => Some(
                n.parse::<u64>()
                    .map_err(|_| malformed("length is not a number or `-`"))?,
            ),
        };
        let path = BagPath::decode_from_line(path.trim_start_matches([' ', '\t']))
            .map_err(|e| malformed(&e.to_string()))?;
        if !path.is_payload() {
            return Err(malformed("fetch path is outside the payload directory"));
        }
        entries.push(FetchEntry {
            url: url.to_string(),
            length,
            path,
        });
    }
    Ok(entries)
}

pub(crate) fn write_fetch(entries: &[FetchEntry]) -> Vec<u8> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&entry.url);
        out.push(' ');
        match entry.length {
            Some(n) => out.push_str(&n.to_string()),
            None => out.push('-'),
        }
        out.push(' ');
        out.push_str(&entry.path.encode_for_line());
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declaration_is_two_exact_lines() {
        assert_eq!(
            write_declaration("1.0"),
            b"BagIt-Version: 1.0\nTag-File-Character-Encoding: UTF-8\n"
        );
        assert_eq!(parse_declaration(&write_declaration("1.0")).unwrap(), "1.0");
        assert!(matches!(
            parse_declaration(&write_declaration("2.0")),
            Err(BagError::UnsupportedVersion(v)) if v == "2.0"
        ));
        assert!(matches!(
            parse_declaration(b"hello"),
            Err(BagError::NotABag)
        ));
    }

    #[test]
    fn labels_keep_order_and_continuations() {
        let pairs = vec![
            ("Source-Organization".to_string(), "Lab".to_string()),
            (
                "External-Description".to_string(),
                "line one\nline two".to_string(),
            ),
            ("Empty".to_string(), String::new()),
            ("Source-Organization".to_string(), "Second".to_string()),
        ];
        let bytes = write_labels(&pairs);
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            "Source-Organization: Lab\nExternal-Description: line one\n    line two\nEmpty:\nSource-Organization: Second\n"
        );
        assert_eq!(parse_labels(BAG_INFO, &bytes).unwrap(), pairs);
    }

    #[test]
    fn manifest_single_token_line_is_malformed() {
        let digest = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
        let good = format!("{digest}  data/a.txt\n{digest} data/b c.txt\n");
        let entries =
            parse_manifest("manifest-sha256.txt", Algorithm::Sha256, good.as_bytes()).unwrap();
        assert_eq!(entries[1].path.as_str(), "data/b c.txt");

        let bad = format!("{digest}  data/a.txt\n{digest}\n");
        let err =
            parse_manifest("manifest-sha256.txt", Algorithm::Sha256, bad.as_bytes()).unwrap_err();
        assert!(
            matches!(err, BagError::MalformedManifestLine { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn manifest_lines_sorted_bytewise_with_two_spaces() {
        let d = "0".repeat(64);
        let entries: Vec<ManifestEntry> = ["data/b", "data/B", "data/a"]
            .iter()
            .map(|p| ManifestEntry {
                algorithm: Algorithm::Sha256,
                digest: d.clone(),
                path: BagPath::new(*p).unwrap(),
            })
            .collect();
        let text = String::from_utf8(write_manifest(&entries)).unwrap();
        assert_eq!(text, format!("{d}  data/B\n{d}  data/a\n{d}  data/b\n"));
    }

    #[test]
    fn fetch_lines_with_unknown_length() {
        let entries = vec![
            FetchEntry {
                url: "https://example.org/x".into(),
                length: Some(12),
                path: BagPath::new("data/x y").unwrap(),
            },
            FetchEntry {
                url: "minid:SYNAPSE:1-1ACR".into(),
                length: None,
                path: BagPath::new("data/z").unwrap(),
            },
        ];
        let bytes = write_fetch(&entries);
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            "https://example.org/x 12 data/x y\nminid:SYNAPSE:1-1ACR - data/z\n"
        );
        assert_eq!(parse_fetch(&bytes).unwrap(), entries);
        assert!(parse_fetch(b"http://x 12\n").is_err());
        assert!(parse_fetch(b"http://x twelve data/x\n").is_err());
    }
}
