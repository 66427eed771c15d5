//! A bag's files as an in-memory map from relative path to bytes, and the
//! directory, zip and tar encodings of that map.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use super::BagError;

/// Relative `/`-separated path → file bytes. `BTreeMap` over `String`
/// iterates in byte-wise path order, which is the archive member order.
pub(crate) type FileTree = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchiveFormat {
    Zip,
    Tar,
}

impl ArchiveFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ArchiveFormat::Zip => "zip",
            ArchiveFormat::Tar => "tar",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "zip" => Some(ArchiveFormat::Zip),
            "tar" => Some(ArchiveFormat::Tar),
            _ => None,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> BagError {
    BagError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Reads a bag from a directory or an archive file.
pub(crate) fn load(source: &Path) -> Result<FileTree, BagError> {
    let meta = fs::metadata(source).map_err(|e| io_err(source, e))?;
    if meta.is_dir() {
        return load_dir(source);
    }
    let bytes = fs::read(source).map_err(|e| io_err(source, e))?;
    load_archive(&bytes)
}

/// Detects the archive format by magic bytes.
pub(crate) fn load_archive(bytes: &[u8]) -> Result<FileTree, BagError> {
    let tree = if bytes.starts_with(b"PK\x03\x04") || bytes.starts_with(b"PK\x05\x06") {
        load_zip(bytes)?
    } else if bytes.len() >= 262 && &bytes[257..262] == b"ustar" {
        load_tar(bytes)?
    } else {
        return Err(BagError::NotABag);
    };
    Ok(strip_root(tree))
}

pub(crate) fn load_dir(root: &Path) -> Result<FileTree, BagError> {
    let mut tree = FileTree::new();
    for entry in walkdir::WalkDir::new(root)
        .follow_links(true)
        .sort_by_file_name()
    {
        let entry = entry.map_err(|e| BagError::Io {
            path: e
                .path()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| root.to_path_buf()),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative_name(root, entry.path())?;
        let bytes = fs::read(entry.path()).map_err(|e| io_err(entry.path(), e))?;
        tree.insert(rel, bytes);
    }
    Ok(tree)
}

pub(crate) fn relative_name(root: &Path, path: &Path) -> Result<String, BagError> {
    let rel = path
        .strip_prefix(root)
        .expect("walked path is under its root");
    let mut parts = Vec::new();
    for c in rel.components() {
        let part = c
            .as_os_str()
            .to_str()
            .ok_or_else(|| BagError::InvalidPath {
                path: rel.to_string_lossy().into_owned(),
                reason: "file name is not UTF-8".into(),
            })?;
        parts.push(part);
    }
    Ok(parts.join("/"))
}

fn load_zip(bytes: &[u8]) -> Result<FileTree, BagError> {
    let archive_err = |e: zip::result::ZipError| BagError::Archive(e.to_string());
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(archive_err)?;
    let mut tree = FileTree::new();
    for i in 0..archive.len() {
        let mut file = archive.by_index(i).map_err(archive_err)?;
        if file.is_dir() {
            continue;
        }
        let name = file.name().to_string();
        let mut data = Vec::with_capacity(file.size() as usize);
        file.read_to_end(&mut data)
            .map_err(|e| BagError::Archive(e.to_string()))?;
        tree.insert(name, data);
    }
    Ok(tree)
}

fn load_tar(bytes: &[u8]) -> Result<FileTree, BagError> {
    let archive_err = |e: std::io::Error| BagError::Archive(e.to_string());
    let mut archive = tar::Archive::new(Cursor::new(bytes));
    let mut tree = FileTree::new();
    for entry in archive.entries().map_err(archive_err)? {
        let mut entry = entry.map_err(archive_err)?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let name = String::from_utf8(entry.path_bytes().into_owned())
            .map_err(|_| BagError::Archive("member name is not UTF-8".into()))?;
        let mut data = Vec::new();
        entry.read_to_end(&mut data).map_err(archive_err)?;
        tree.insert(name, data);
    }
    Ok(tree)
}

/// Archived bags live under one top-level directory; drop it.
fn strip_root(tree: FileTree) -> FileTree {
    let root = tree
        .keys()
        .next()
        .and_then(|k| k.split_once('/'))
        .map(|(r, _)| format!("{r}/"));
    match root {
        Some(root) if tree.keys().all(|k| k.starts_with(&root)) => tree
            .into_iter()
            .map(|(k, v)| (k[root.len()..].to_string(), v))
            .collect(),
        _ => tree,
    }
}

pub(crate) fn write_dir(tree: &FileTree, dest: &Path) -> Result<(), BagError> {
    if dest.exists() {
        return Err(BagError::DestinationExists(dest.to_path_buf()));
    }
    fs::create_dir_all(dest).map_err(|e| io_err(dest, e))?;
    // An empty payload still gets its directory.
    fs::create_dir_all(dest.join(super::path::PAYLOAD_DIR)).map_err(|e| io_err(dest, e))?;
    for (rel, bytes) in tree {
        let path = dest.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Encodes the tree as an archive whose members sit under `root/`.
///
/// When `deterministic` is set, members carry fixed timestamps (the Unix
/// epoch for tar, the earliest representable DOS time for zip), fixed
/// permissions and owners, so equal trees give equal bytes.
pub(crate) fn to_archive(
    tree: &FileTree,
    root: &str,
    format: ArchiveFormat,
    deterministic: bool,
) -> Result<Vec<u8>, BagError> {
    let mtime = if deterministic {
        0
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    };
    match format {
        ArchiveFormat::Tar => to_tar(tree, root, mtime),
        ArchiveFormat::Zip => to_zip(tree, root, mtime),
    }
}

fn to_tar(tree: &FileTree, root: &str, mtime: u64) -> Result<Vec<u8>, BagError> {
    let archive_err = |e: std::io::Error| BagError::Archive(e.to_string());
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    for (rel, bytes) in tree {
        let mut header = tar::Header::new_gnu();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_uid(0);
        header.set_gid(0);
        header.set_mtime(mtime);
        header.set_entry_type(tar::EntryType::Regular);
        builder
            .append_data(&mut header, format!("{root}/{rel}"), bytes.as_slice())
            .map_err(archive_err)?;
    }
    builder.into_inner().map_err(archive_err)
}

fn to_zip(tree: &FileTree, root: &str, mtime: u64) -> Result<Vec<u8>, BagError> {
    use zip::write::SimpleFileOptions;
    let archive_err = |e: zip::result::ZipError| BagError::Archive(e.to_string());
    let stamp = if mtime == 0 {
        zip::DateTime::default()
    } else {
        let t = chrono::DateTime::from_timestamp(mtime as i64, 0)
            .unwrap_or_default()
            .naive_utc();
        use chrono::{Datelike, Timelike};
        zip::DateTime::from_date_and_time(
            t.year() as u16,
            t.month() as u8,
            t.day() as u8,
            t.hour() as u8,
            t.minute() as u8,
            t.second() as u8,
        )
        .unwrap_or_default()
    };
    let options = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(stamp)
        .unix_permissions(0o644);
    let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
    for (rel, bytes) in tree {
        writer
            .start_file(format!("{root}/{rel}"), options)
            .map_err(archive_err)?;
        writer
            .write_all(bytes)
            .map_err(|e| BagError::Archive(e.to_string()))?;
    }
    Ok(writer.finish().map_err(archive_err)?.into_inner())
}

pub(crate) fn write_archive_file(
    tree: &FileTree,
    dest: &Path,
    format: ArchiveFormat,
    deterministic: bool,
) -> Result<PathBuf, BagError> {
    if dest.exists() {
        return Err(BagError::DestinationExists(dest.to_path_buf()));
    }
    let root = archive_root(dest);
    let bytes = to_archive(tree, &root, format, deterministic)?;
    fs::write(dest, bytes).map_err(|e| io_err(dest, e))?;
    Ok(dest.to_path_buf())
}

/// The archive's top-level directory: the destination file name without
/// its extension.
pub(crate) fn archive_root(dest: &Path) -> String {
    dest.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or("bag")
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FileTree {
        let mut t = FileTree::new();
        t.insert("bagit.txt".into(), b"x".to_vec());
        t.insert("data/é/b.txt".into(), b"hello".to_vec());
        t.insert(format!("data/{}", "n".repeat(150)), b"long name".to_vec());
        t
    }

    #[test]
    fn archives_round_trip_and_are_deterministic() {
        for format in [ArchiveFormat::Zip, ArchiveFormat::Tar] {
            let a = to_archive(&sample(), "mybag", format, true).unwrap();
            let b = to_archive(&sample(), "mybag", format, true).unwrap();
            assert_eq!(a, b, "{format:?}");
            assert_eq!(load_archive(&a).unwrap(), sample(), "{format:?}");
        }
    }

    #[test]
    fn garbage_is_not_a_bag() {
        assert!(matches!(
            load_archive(b"not an archive"),
            Err(BagError::NotABag)
        ));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("bag");
        write_dir(&sample(), &dest).unwrap();
        assert_eq!(load_dir(&dest).unwrap(), sample());
        assert!(matches!(
            write_dir(&sample(), &dest),
            Err(BagError::DestinationExists(_))
        ));
    }
}
