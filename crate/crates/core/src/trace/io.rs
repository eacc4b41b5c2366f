//! Text formats for masks, counts, traces and heatmaps.
//!
//! Mask and count files are `key = value` headers followed by a marker line
//! (`bits` / `counts`) and one row per layer:
//!
//! ```text
//! # image-head mask
//! layers = 2
//! heads = 4
//! tau = 0.5
//! config_hash = 3f09a1c2d4e5b6a7
//! source = counts over 40 tokens
//! bits
//! 1011
//! 1111
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the value bit for bit. `none` stands for an absent `tau` or
//! `config_hash`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttentionTrace, CountMatrix, ImageHeadMask};
use crate::error::{Error, Result};
use crate::grid::HeadGrid;

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

struct Header {
    fields: BTreeMap<String, (usize, String)>,
    body: Vec<(usize, String)>,
}

fn split_header(what: &'static str, text: &str, marker: &str) -> Result<Header> {
    let mut fields = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut found = false;
    for (n, line) in lines.by_ref() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == marker {
            found = true;
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(what, n, format!("expected `key = value`, got `{line}`")))?;
        fields.insert(k.trim().to_string(), (n, v.trim().to_string()));
    }
    if !found {
        return Err(Error::parse(what, 0, format!("missing `{marker}` section")));
    }
    let body = lines
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n, l.to_string()))
        .collect();
    Ok(Header { fields, body })
}

impl Header {
    fn raw(&self, what: &'static str, key: &str) -> Result<&(usize, String)> {
        self.fields
            .get(key)
            .ok_or_else(|| Error::parse(what, 0, format!("missing `{key}`")))
    }

    fn num<V: std::str::FromStr>(&self, what: &'static str, key: &str) -> Result<V> {
        let (n, v) = self.raw(what, key)?;
        v.parse()
            .map_err(|_| Error::parse(what, *n, format!("bad value for `{key}`: `{v}`")))
    }

    fn optional(&self, key: &str) -> Option<String> {
        self.fields
            .get(key)
            .map(|(_, v)| v.clone())
            .filter(|v| v != "none")
    }
}

fn check_rows(what: &'static str, header: &Header, layers: usize) -> Result<()> {
    if header.body.len() != layers {
        let line = header.body.last().map_or(0, |(n, _)| *n);
        return Err(Error::parse(
            what,
            line,
            format!("expected {layers} rows, found {}", header.body.len()),
        ));
    }
    Ok(())
}

pub fn mask_to_string(mask: &ImageHeadMask) -> String {
    let mut s = String::from("# image-head mask\n");
    let _ = writeln!(s, "layers = {}", mask.layers());
    let _ = writeln!(s, "heads = {}", mask.heads());
    let _ = writeln!(s, "tau = {}", opt(&mask.tau));
    let _ = writeln!(s, "config_hash = {}", opt(&mask.config_hash));
    let _ = writeln!(s, "source = {}", mask.source);
    s.push_str("bits\n");
    for l in 0..mask.layers() {
        for h in 0..mask.heads() {
            s.push(if mask.bit(l, h) == 1 { '1' } else { '0' });
        }
        s.push('\n');
    }
    s
}

pub fn mask_from_str(text: &str) -> Result<ImageHeadMask> {
    const WHAT: &str = "mask file";
    let hdr = split_header(WHAT, text, "bits")?;
    let layers: usize = hdr.num(WHAT, "layers")?;
    let heads: usize = hdr.num(WHAT, "heads")?;
    let tau = match hdr.optional("tau") {
        Some(_) => Some(hdr.num::<f64>(WHAT, "tau")?),
        None => None,
    };
    check_rows(WHAT, &hdr, layers)?;
    let mut keep = Vec::with_capacity(layers * heads);
    for (n, row) in &hdr.body {
        if row.chars().count() != heads {
            return Err(Error::parse(WHAT, *n, format!("expected {heads} bits, got `{row}`")));
        }
        for c in row.chars() {
            keep.push(match c {
                '1' => true,
                '0' => false,
                _ => return Err(Error::parse(WHAT, *n, format!("invalid bit `{c}`"))),
            });
        }
    }
    Ok(ImageHeadMask {
        keep: HeadGrid::from_vec(layers, heads, keep)?,
        tau,
        source: hdr.fields.get("source").map(|(_, v)| v.clone()).unwrap_or_default(),
        config_hash: hdr.optional("config_hash"),
    })
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ImageHeadMask) -> Result<()> {
    fs::write(path, mask_to_string(mask))?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ImageHeadMask> {
    mask_from_str(&fs::read_to_string(path)?)
}

pub fn counts_to_string(counts: &CountMatrix) -> String {
    let mut s = String::from("# image-head counts\n");
    let _ = writeln!(s, "layers = {}", counts.counts.layers());
    let _ = writeln!(s, "heads = {}", counts.counts.heads());
    let _ = writeln!(s, "tau = {}", counts.tau);
    let _ = writeln!(s, "total_tokens = {}", counts.total_tokens);
    let _ = writeln!(s, "config_hash = {}", opt(&counts.config_hash));
    s.push_str("counts\n");
    for l in 0..counts.counts.layers() {
        let row: Vec<String> = counts.counts.row(l).iter().map(u64::to_string).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn counts_from_str(text: &str) -> Result<CountMatrix> {
    const WHAT: &str = "count file";
    let hdr = split_header(WHAT, text, "counts")?;
    let layers: usize = hdr.num(WHAT, "layers")?;
    let heads: usize = hdr.num(WHAT, "heads")?;
    let tau: f64 = hdr.num(WHAT, "tau")?;
    let total_tokens: u64 = hdr.num(WHAT, "total_tokens")?;
    check_rows(WHAT, &hdr, layers)?;
    let mut values = Vec::with_capacity(layers * heads);
    for (n, row) in &hdr.body {
        let parsed: Vec<u64> = row
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::parse(WHAT, *n, format!("bad count `{v}`")))
            })
            .collect::<Result<_>>()?;
        if parsed.len() != heads {
            return Err(Error::parse(WHAT, *n, format!("expected {heads} counts")));
        }
        if let Some(c) = parsed.iter().find(|c| **c > total_tokens) {
            return Err(Error::parse(WHAT, *n, format!("count {c} exceeds total_tokens")));
        }
        values.extend(parsed);
    }
    let mut counts = CountMatrix::zeros(layers, heads, tau)?;
    counts.counts = HeadGrid::from_vec(layers, heads, values)?;
    counts.total_tokens = total_tokens;
    counts.config_hash = hdr.optional("config_hash");
    Ok(counts)
}

pub fn write_counts(path: impl AsRef<Path>, counts: &CountMatrix) -> Result<()> {
    fs::write(path, counts_to_string(counts))?;
    Ok(())
}

pub fn read_counts(path: impl AsRef<Path>) -> Result<CountMatrix> {
    counts_from_str(&fs::read_to_string(path)?)
}

/// CSV with one row per `(t, layer, head, score)`. Comment lines carry the
/// shape, config hash and the prompt index of every step.
pub fn trace_to_csv(trace: &AttentionTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# layers = {}", trace.layers());
    let _ = writeln!(s, "# heads = {}", trace.heads());
    let _ = writeln!(s, "# config_hash = {}", opt(&trace.config_hash));
    let prompts: Vec<String> = trace.prompts().iter().map(usize::to_string).collect();
    let _ = writeln!(s, "# prompts = {}", prompts.join(" "));
    s.push_str("t,layer,head,score\n");
    for (t, entry) in trace.entries().iter().enumerate() {
        for (id, v) in entry.iter() {
            let _ = writeln!(s, "{t},{},{},{v}", id.layer, id.head);
        }
    }
    s
}

pub fn trace_from_csv(text: &str) -> Result<AttentionTrace> {
    const WHAT: &str = "trace file";
    let mut meta = BTreeMap::new();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.is_empty() || line == "t,layer,head,score" {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::parse(WHAT, n, "expected 4 columns"));
        }
        let idx = |c: &str| {
            c.parse::<usize>()
                .map_err(|_| Error::parse(WHAT, n, format!("bad index `{c}`")))
        };
        let score: f64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(WHAT, n, format!("bad score `{}`", cols[3])))?;
        rows.push((n, idx(cols[0])?, idx(cols[1])?, idx(cols[2])?, score));
    }
    let dim = |key: &str| -> Result<usize> {
        meta.get(key)
            .ok_or_else(|| Error::parse(WHAT, 0, format!("missing `# {key} =` line")))?
            .parse()
            .map_err(|_| Error::parse(WHAT, 0, format!("bad `{key}`")))
    };
    let (layers, heads) = (dim("layers")?, dim("heads")?);
    let per = layers * heads;
    if per == 0 || rows.len() % per != 0 {
        return Err(Error::parse(WHAT, 0, "row count is not a multiple of layers x heads"));
    }
    let steps = rows.len() / per;
    let prompts: Vec<usize> = match meta.get("prompts") {
        Some(p) if !p.is_empty() => p
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::parse(WHAT, 0, "bad prompt index")))
            .collect::<Result<_>>()?,
        _ => vec![0; steps],
    };
    if prompts.len() != steps {
        return Err(Error::parse(WHAT, 0, "prompt list does not match step count"));
    }
    let mut trace = AttentionTrace::new(layers, heads);
    trace.config_hash = meta.get("config_hash").filter(|v| *v != "none").cloned();
    for (t, chunk) in rows.chunks(per).enumerate() {
        let mut values = Vec::with_capacity(per);
        for (k, (n, tt, l, h, v)) in chunk.iter().enumerate() {
            if *tt != t || *l != k / heads || *h != k % heads {
                return Err(Error::parse(WHAT, *n, "rows out of order"));
            }
            values.push(*v);
        }
        trace.push(HeadGrid::from_vec(layers, heads, values)?, prompts[t])?;
    }
    Ok(trace)
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &AttentionTrace) -> Result<()> {
    fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<AttentionTrace> {
    trace_from_csv(&fs::read_to_string(path)?)
}

/// Comma-separated `layers x heads` matrix, row = layer.
pub fn heatmap_csv(values: &HeadGrid<f64>) -> String {
    let mut s = String::new();
    for l in 0..values.layers() {
        let row: Vec<String> = values.row(l).iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Plain (P2) graymap, one pixel per head, row = layer; `1.0` is white.
pub fn heatmap_pgm(values: &HeadGrid<f64>) -> String {
    let mut s = format!("P2\n{} {}\n255\n", values.heads(), values.layers());
    for l in 0..values.layers() {
        let row: Vec<String> = values
            .row(l)
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
