//! Minimal landing pages for browsers following a citation link.

use fairkit::catalog::Resolution;
use fairkit::idspace::{MinidRecord, Status};
use serde_json::Value;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn link_or_text(text: &str) -> String {
    if text.starts_with("http://") || text.starts_with("https://") {
        format!("<a href=\"{0}\">{0}</a>", escape(text))
    } else {
        escape(text)
    }
}

fn page(title: &str, rows: &[(String, String)]) -> String {
    let mut body = String::new();
    for (label, value) in rows {
        body.push_str(&format!(
            "<tr><th>{}</th><td>{value}</td></tr>\n",
            escape(label)
        ));
    }
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head><meta charset=\"utf-8\"><title>{t}</title></head>\n<body>\n<h1>{t}</h1>\n<table>\n{body}</table>\n</body>\n</html>\n",
        t = escape(title)
    )
}

pub fn minid_page(record: &MinidRecord) -> String {
    let mut rows = vec![
        ("Identifier".to_string(), escape(&record.id.to_string())),
        (
            "Title".to_string(),
            escape(record.title.as_deref().unwrap_or("")),
        ),
        ("Creator".to_string(), escape(&record.creator)),
        ("Created".to_string(), escape(&record.created.to_string())),
        (
            "Checksum".to_string(),
            escape(&format!(
                "{}:{}",
                record.checksum.algorithm.name(),
                record.checksum.digest
            )),
        ),
    ];
    if record.status == Status::Superseded {
        let by = record.superseded_by.as_deref().unwrap_or("");
        rows.push((
            "Superseded by".to_string(),
            format!("<a href=\"https://doi.org/{0}\">{0}</a>", escape(by)),
        ));
    }
    for location in &record.locations {
        rows.push(("Location".to_string(), link_or_text(location)));
    }
    page(&record.id.to_string(), &rows)
}

pub fn record_page(resolution: &Resolution) -> String {
    let record = &resolution.record;
    let mut rows = vec![
        ("Table".to_string(), escape(&resolution.table.to_string())),
        ("Citation".to_string(), link_or_text(&resolution.citation)),
    ];
    for (column, value) in &record.values {
        let text = match value {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        rows.push((column.clone(), link_or_text(&text)));
    }
    page(&record.rid.to_string(), &rows)
}
