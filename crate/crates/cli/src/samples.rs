//! The samples file: `#` header lines, then one sample per line.
//!
//! A sample line holds the tokens separated by spaces, then one ` | `
//! separated field per continuous element with its scalars separated by
//! spaces. An aborted sample is the line `aborted`. In condition files a `_`
//! marks a free entry; every other entry is held fixed.

use std::fmt::Write as _;
use std::sync::Arc;

use igd_core::state::{CondMask, ElementLayout, Sequence, Token};

use crate::error::{CliError, Result};

pub const ABORTED: &str = "aborted";

#[derive(Debug, Clone, PartialEq)]
pub struct SamplesHeader {
    pub config_hash: String,
    pub seed: u64,
    pub timestamp: String,
    pub extra: Vec<(String, String)>,
}

/// `SOURCE_DATE_EPOCH` when set, else `unset`.
pub fn timestamp() -> String {
    std::env::var("SOURCE_DATE_EPOCH").unwrap_or_else(|_| "unset".into())
}

pub fn format_sample(seq: &Sequence) -> String {
    let mut s = seq.tokens().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
    for v in seq.vectors() {
        s.push_str(" | ");
        s.push_str(&v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" "));
    }
    s
}

pub fn write_samples(header: &SamplesHeader, samples: &[Option<Sequence>]) -> String {
    let mut out = String::from("# igd samples\n");
    writeln!(out, "# config_hash: {}", header.config_hash).unwrap();
    writeln!(out, "# seed: {}", header.seed).unwrap();
    writeln!(out, "# timestamp: {}", header.timestamp).unwrap();
    for (k, v) in &header.extra {
        writeln!(out, "# {k}: {v}").unwrap();
    }
    for s in samples {
        match s {
            Some(seq) => out.push_str(&format_sample(seq)),
            None => out.push_str(ABORTED),
        }
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("samples line {line}: {msg}"))
}

/// Parses one line into a sequence. With `allow_free`, `_` entries are free
/// and everything else is conditioned; otherwise nothing is conditioned.
pub fn parse_line(layout: &Arc<ElementLayout>, text: &str, line: usize, allow_free: bool) -> Result<Sequence> {
    let mut fields = text.split('|');
    let tok_field = fields.next().unwrap_or("");
    let mut cond = CondMask::none(layout);
    let mut tokens = Vec::with_capacity(layout.discrete_len());
    for (i, w) in tok_field.split_whitespace().enumerate() {
        if allow_free && w == "_" {
            tokens.push(0);
            continue;
        }
        let t: Token = w.parse().map_err(|_| parse_err(line, format!("bad token {w:?}")))?;
        if t >= layout.vocab_size() {
            return Err(parse_err(line, format!("token {t} outside the vocabulary")));
        }
        if allow_free && i < cond.tokens.len() {
            cond.tokens[i] = true;
        }
        tokens.push(t);
    }
    if tokens.len() != layout.discrete_len() {
        return Err(parse_err(
            line,
            format!("expected {} tokens, got {}", layout.discrete_len(), tokens.len()),
        ));
    }
    let mut vectors = Vec::with_capacity(layout.continuous_len());
    for (e, field) in fields.enumerate() {
        let want = *layout
            .dims()
            .get(e)
            .ok_or_else(|| parse_err(line, "too many vector fields"))?;
        let mut v = Vec::with_capacity(want);
        for (c, w) in field.split_whitespace().enumerate() {
            if allow_free && w == "_" {
                v.push(0.0);
                continue;
            }
            let x: f64 = w.parse().map_err(|_| parse_err(line, format!("bad number {w:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(line, "non-finite value"));
            }
            if allow_free && c < want {
                cond.vectors[e][c] = true;
            }
            v.push(x);
        }
        if v.len() != want {
            return Err(parse_err(
                line,
                format!("vector {e} needs {want} values, got {}", v.len()),
            ));
        }
        vectors.push(v);
    }
    if vectors.len() != layout.continuous_len() {
        return Err(parse_err(line, "missing vector fields"));
    }
    Ok(Sequence::with_mask(layout.clone(), tokens, vectors, cond)?)
}

pub type Header = Vec<(String, String)>;

/// Reads a samples file: header key/value pairs and the samples, `None`
/// for aborted lines.
pub fn read_samples(
    layout: &Arc<ElementLayout>,
    text: &str,
    allow_free: bool,
) -> Result<(Header, Vec<Option<Sequence>>)> {
    let mut header = Vec::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if line.trim() == ABORTED {
            samples.push(None);
        } else {
            samples.push(Some(parse_line(layout, line, i + 1, allow_free)?));
        }
    }
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<ElementLayout> {
        Arc::new(ElementLayout::new(2, vec![2, 1], 3).unwrap())
    }

    #[test]
    fn round_trip_is_exact() {
        let l = layout();
        let s = Sequence::new(l.clone(), vec![2, 0], vec![vec![0.1 + 0.2, -1e-300], vec![12345.678]]).unwrap();
        let h = SamplesHeader {
            config_hash: "ab".into(),
            seed: 4,
            timestamp: "unset".into(),
            extra: vec![],
        };
        let text = write_samples(&h, &[Some(s.clone()), None]);
        let (head, back) = read_samples(&l, &text, false).unwrap();
        assert_eq!(back, vec![Some(s), None]);
        assert!(head.contains(&("seed".to_string(), "4".to_string())));
    }

    #[test]
    fn free_entries_in_condition_files() {
        let l = layout();
        let s = parse_line(&l, "1 _ | _ 0.5 | _", 1, true).unwrap();
        assert_eq!(s.cond_mask().tokens, vec![true, false]);
        assert_eq!(s.cond_mask().vectors, vec![vec![false, true], vec![false]]);
        assert!(parse_line(&l, "1 3 | 0 0 | 0", 1, false).is_err());
        assert!(parse_line(&l, "1 1 | 0 | 0", 1, false).is_err());
    }
}
