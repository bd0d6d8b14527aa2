//! Label-in-title encoding: `name[l1][l2].ext`.
//!
//! Labels are the run of bracket groups directly before the extension of the
//! last path segment. Anything else containing `[` or `]` is rejected.

use thiserror::Error;

use crate::model::{is_label_char, Label, LabelSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TitleError {
    #[error("empty title")]
    Empty,
    #[error("unbalanced brackets in {0:?}")]
    Unbalanced(String),
    #[error("empty label group in {0:?}")]
    EmptyLabel(String),
    #[error("invalid label {label:?} in {title:?}")]
    InvalidLabel { title: String, label: String },
}

/// Splits `title` into `(stem, extension)`; the extension includes its dot.
fn split_extension(title: &str) -> (&str, &str) {
    let segment_start = title.rfind('/').map_or(0, |i| i + 1);
    let segment = &title[segment_start..];
    match segment.rfind('.') {
        Some(dot) if dot > 0 && !segment[dot..].contains(['[', ']']) => {
            title.split_at(segment_start + dot)
        }
        _ => (title, ""),
    }
}

/// Splits trailing bracket groups off `title`, returning the bare title and
/// the labels in the order they appear.
pub fn extract_labels(title: &str) -> Result<(String, LabelSet), TitleError> {
    if title.is_empty() {
        return Err(TitleError::Empty);
    }
    let (mut stem, ext) = split_extension(title);
    let mut found = Vec::new();
    while let Some(rest) = stem.strip_suffix(']') {
        let open = rest
            .rfind('[')
            .ok_or_else(|| TitleError::Unbalanced(title.to_string()))?;
        let inner = &rest[open + 1..];
        if inner.contains(']') {
            return Err(TitleError::Unbalanced(title.to_string()));
        }
        if inner.is_empty() {
            return Err(TitleError::EmptyLabel(title.to_string()));
        }
        if !inner.chars().all(is_label_char) {
            return Err(TitleError::InvalidLabel {
                title: title.to_string(),
                label: inner.to_string(),
            });
        }
        found.push(Label::new(inner).expect("validated above"));
        stem = &rest[..open];
    }
    if stem.contains(['[', ']']) {
        return Err(TitleError::Unbalanced(title.to_string()));
    }
    found.reverse();
    Ok((format!("{stem}{ext}"), found.into_iter().collect()))
}

/// Canonical title for `bare` carrying `labels`.
pub fn attach_labels(bare: &str, labels: &LabelSet) -> String {
    let (stem, ext) = split_extension(bare);
    let mut out = String::with_capacity(bare.len() + labels.len() * 8);
    out.push_str(stem);
    for l in labels {
        out.push('[');
        out.push_str(l.as_str());
        out.push(']');
    }
    out.push_str(ext);
    out
}
