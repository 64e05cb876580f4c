//! Flat `key = value` text used by config files, manifests and checkpoints.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Keys are case-sensitive; surrounding whitespace is trimmed.

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {}", lineno + 1), "empty key"));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub(crate) fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect()
}

pub(crate) fn join_list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let text = "# comment\n\nlr = 0.0001\n  variant=iv  \n";
        let kv = parse(text).unwrap();
        assert_eq!(kv, vec![("lr".into(), "0.0001".into()), ("variant".into(), "iv".into())]);
        assert_eq!(parse(&render(&kv)).unwrap(), kv);
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = parse("lr 0.1").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
