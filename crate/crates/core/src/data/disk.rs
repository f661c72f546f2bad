//! Dataset directory layout:
//!
//! ```text
//! manifest.txt        # "# classes K", then one line per clip:
//!                     # <id> <label> <length> <start> <end> <relative path>
//! train/000000.bin    # u32 LE T, H, W, then T*H*W u8 grayscale pixels
//! val/...
//! test/...
//! ```
//!
//! Ids are `<split>-<index>`; the split is read back from the prefix.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use crate::data::{Dataset, SequenceSample, Split, SplitDatasets};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "dataset",
        msg: msg.into(),
    }
}

/// Writes a fresh atomic copy of `path` via a temporary sibling.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_sample(s: &SequenceSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + s.frames.len());
    for v in [s.length, s.height, s.width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend(
        s.frames
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Parses a clip file; label and target come from the manifest.
pub fn decode_sample(bytes: &[u8], label: usize, target: (usize, usize)) -> Result<SequenceSample> {
    if bytes.len() < 12 {
        return Err(format_err("clip file shorter than its header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let body = &bytes[12..];
    if body.len() != t * h * w {
        return Err(format_err(format!(
            "clip header says {t}x{h}x{w} but body has {} bytes",
            body.len()
        )));
    }
    let frames = body.iter().map(|&b| b as f32 / 255.0).collect();
    SequenceSample::new(frames, t, h, w, label, target)
}

pub fn write_dataset(dir: &Path, data: &SplitDatasets, force: bool) -> Result<()> {
    let manifest = dir.join(MANIFEST);
    if manifest.exists() && !force {
        return Err(Error::Exists(manifest));
    }
    let mut text = format!(
        "# classes {}\n# id label length start end path\n",
        data.train.num_classes
    );
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, s) in data.get(split).samples.iter().enumerate() {
            let rel = format!("{}/{i:06}.bin", split.name());
            write_atomic(&dir.join(&rel), &encode_sample(s))?;
            text.push_str(&format!(
                "{}-{i:06} {} {} {} {} {rel}\n",
                split.name(),
                s.label,
                s.length,
                s.target.0,
                s.target.1
            ));
        }
    }
    write_atomic(&manifest, text.as_bytes())
}

fn parse_field(line: usize, name: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| format_err(format!("line {line}: bad {name} `{v}`")))
}

fn check_relative(line: usize, rel: &str) -> Result<PathBuf> {
    let p = PathBuf::from(rel);
    if p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(format_err(format!(
            "line {line}: path `{rel}` must be relative and inside the dataset"
        )));
    }
    Ok(p)
}

pub fn read_dataset(dir: &Path) -> Result<SplitDatasets> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut classes = None;
    let mut splits: [Vec<SequenceSample>; 3] = Default::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(comment) = raw.strip_prefix('#') {
            if let Some(k) = comment.trim().strip_prefix("classes ") {
                classes = Some(parse_field(line, "class count", k.trim())?);
            }
            continue;
        }
        let f: Vec<&str> = raw.split_whitespace().collect();
        let [id, label, length, start, end, rel] = f[..] else {
            return Err(format_err(format!(
                "line {line}: expected 6 fields, got {}",
                f.len()
            )));
        };
        let split = Split::ALL
            .into_iter()
            .position(|s| {
                id.strip_prefix(s.name())
                    .is_some_and(|r| r.starts_with('-'))
            })
            .ok_or_else(|| format_err(format!("line {line}: id `{id}` has no split prefix")))?;
        let label = parse_field(line, "label", label)?;
        let length = parse_field(line, "length", length)?;
        let target = (
            parse_field(line, "start", start)?,
            parse_field(line, "end", end)?,
        );
        let path = dir.join(check_relative(line, rel)?);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let s = decode_sample(&bytes, label, target)
            .map_err(|e| format_err(format!("line {line} ({}): {e}", path.display())))?;
        if s.length != length {
            return Err(format_err(format!(
                "line {line}: manifest length {length} but clip has {} frames",
                s.length
            )));
        }
        splits[split].push(s);
    }
    let k = classes.ok_or_else(|| format_err("manifest lacks a `# classes K` line"))?;
    for s in splits.iter().flatten() {
        if s.label >= k {
            return Err(format_err(format!("label {} outside {k} classes", s.label)));
        }
    }
    let [train, val, test] = splits.map(|samples| Dataset {
        num_classes: k,
        samples,
    });
    Ok(SplitDatasets { train, val, test })
}
