//! Shared helpers for the `fzsl.* v1` line-oriented text formats.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn load_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parse `<magic> v1 k1=v1 k2=v2 ...` with exactly the given keys, in order.
pub(crate) fn parse_header(
    path: &Path,
    line: Option<&str>,
    magic: &str,
    keys: &[&str],
) -> Result<Vec<String>> {
    let line = line.ok_or_else(|| load_err(path, 1, "empty file, expected a header"))?;
    let mut tokens = line.split(' ');
    if tokens.next() != Some(magic) || tokens.next() != Some("v1") {
        return Err(load_err(
            path,
            1,
            format!("expected header `{magic} v1 ...`"),
        ));
    }
    let mut values = Vec::with_capacity(keys.len());
    for key in keys {
        let tok = tokens
            .next()
            .ok_or_else(|| load_err(path, 1, format!("header is missing `{key}=`")))?;
        let value = tok
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| load_err(path, 1, format!("expected `{key}=...`, found `{tok}`")))?;
        values.push(value.to_string());
    }
    if let Some(extra) = tokens.next() {
        return Err(load_err(
            path,
            1,
            format!("trailing garbage `{extra}` in header"),
        ));
    }
    Ok(values)
}

pub(crate) fn parse_usize(path: &Path, line: usize, what: &str, s: &str) -> Result<usize> {
    s.parse().map_err(|_| {
        load_err(
            path,
            line,
            format!("{what}: `{s}` is not a non-negative integer"),
        )
    })
}

pub(crate) fn parse_f32(path: &Path, line: usize, s: &str) -> Result<f32> {
    let v: f32 = s
        .parse()
        .map_err(|_| load_err(path, line, format!("`{s}` is not a decimal number")))?;
    if !v.is_finite() {
        return Err(load_err(path, line, format!("`{s}` is not finite")));
    }
    Ok(v)
}

/// Split `<key>,<v1>,...,<vw>` and parse the `width` numbers.
pub(crate) fn parse_row<'a>(
    path: &Path,
    line: usize,
    text: &'a str,
    width: usize,
) -> Result<(&'a str, Vec<f32>)> {
    let mut fields = text.split(',');
    let key = fields.next().unwrap_or_default();
    let values = fields
        .map(|f| parse_f32(path, line, f))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != width {
        return Err(load_err(
            path,
            line,
            format!("expected {width} values, found {}", values.len()),
        ));
    }
    Ok((key, values))
}

/// Body lines after the header; `expected` of them, and nothing after.
pub(crate) fn body_lines<'a>(
    path: &Path,
    mut lines: impl Iterator<Item = &'a str>,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let mut body = Vec::with_capacity(expected);
    for i in 0..expected {
        let line = lines.next().ok_or_else(|| {
            load_err(
                path,
                i + 2,
                format!("expected {expected} rows, file ends after {i}"),
            )
        })?;
        body.push(line);
    }
    if lines.next().is_some() {
        return Err(load_err(
            path,
            expected + 2,
            "trailing garbage after the declared rows",
        ));
    }
    Ok(body)
}

pub(crate) fn push_row(out: &mut String, key: &str, values: &[f32]) {
    use std::fmt::Write;
    out.push_str(key);
    for v in values {
        // Display prints the shortest string that parses back to the same f32.
        write!(out, ",{v}").expect("writing to a String");
    }
    out.push('\n');
}

pub(crate) fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains([',', '\n', '\r']) {
        return Err(Error::invalid(format!(
            "class name `{name}` must be non-empty and free of commas and newlines"
        )));
    }
    Ok(())
}
