//! URL path helpers shared by the HTTP clients.

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');
const PATH: &AsciiSet = &SEGMENT.remove(b'/');

/// Percent-encodes a single path segment.
pub fn encode_segment(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}

/// Percent-encodes a multi-segment path, keeping `/` separators.
pub fn encode_path(s: &str) -> String {
    utf8_percent_encode(s, PATH).to_string()
}

/// `bucket/key` resource as an encoded URL path suffix.
pub fn encode_resource(bucket: &str, key: &str) -> String {
    format!("{}/{}", encode_segment(bucket), encode_path(key))
}
