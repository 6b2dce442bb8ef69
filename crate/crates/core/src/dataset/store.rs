//! On-disk layout: `dir/manifest.txt` plus `dir/patches/*.lpt`.
//!
//! The manifest holds `key = value` header lines and one `patch` line per
//! pair:
//!
//! ```text
//! patch <id> <scene> <row> <col> <label> <split> <t1 file> <t2 file> <mask file or ->
//! ```
//!
//! `content_hash` is the SHA-256 over every patch line followed by the bytes
//! of the files it names, in manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lpcd_tensor::Tensor;
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetManifest, DatasetMeta, ManifestEntry, PatchPair, Split};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const PATCH_DIR: &str = "patches";

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn entry_line(e: &ManifestEntry, files: &[String; 3]) -> String {
    format!(
        "patch {} {} {} {} {} {} {} {} {}",
        e.id, e.scene, e.origin.0, e.origin.1, e.label, e.split, files[0], files[1], files[2]
    )
}

fn file_names(id: usize, has_mask: bool) -> [String; 3] {
    [
        format!("{PATCH_DIR}/{id:06}_t1.lpt"),
        format!("{PATCH_DIR}/{id:06}_t2.lpt"),
        if has_mask { format!("{PATCH_DIR}/{id:06}_mask.lpt") } else { "-".into() },
    ]
}

pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let pdir = dir.join(PATCH_DIR);
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut hasher = Sha256::new();
    let mut lines = String::new();
    for (entry, patch) in dataset.manifest.entries.iter().zip(&dataset.patches) {
        let files = file_names(entry.id, patch.mask.is_some());
        let line = entry_line(entry, &files);
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        let tensors = [Some(&patch.t1), Some(&patch.t2), patch.mask.as_ref()];
        for (file, t) in files.iter().zip(tensors) {
            if let Some(t) = t {
                let bytes = t.to_lpt_bytes();
                hasher.update(&bytes);
                let path = dir.join(file);
                fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
            }
        }
        lines.push_str(&line);
        lines.push('\n');
    }
    let m = &dataset.manifest;
    let mut text = String::from("# lpcd dataset manifest\n");
    writeln!(text, "patch_size = {}", m.meta.patch_size).unwrap();
    writeln!(text, "overlap = {}", m.meta.overlap).unwrap();
    writeln!(text, "min_change_pixels = {}", m.meta.min_change_pixels).unwrap();
    writeln!(text, "seed = {}", m.meta.seed).unwrap();
    writeln!(text, "config_hash = {}", m.meta.config_hash).unwrap();
    writeln!(text, "content_hash = {}", hex(&hasher.finalize())).unwrap();
    for s in Split::ALL {
        let [neg, pos] = m.class_counts(s);
        writeln!(text, "counts.{s} = {neg} {pos}").unwrap();
    }
    text.push_str(&lines);
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut header = BTreeMap::new();
    let mut entries = Vec::new();
    let mut patches = Vec::new();
    let mut hasher = Sha256::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |why: &str| Error::corrupt(&mpath, format!("line {}: {why}", lineno + 1));
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("patch ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            if f.len() != 9 {
                return Err(bad("expected 9 fields after 'patch'"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid integer"));
            let label = num(f[4])?;
            if label > 1 {
                return Err(bad("label must be 0 or 1"));
            }
            let entry = ManifestEntry {
                id: num(f[0])?,
                scene: num(f[1])?,
                origin: (num(f[2])?, num(f[3])?),
                label: label as u8,
                split: f[5].parse().map_err(|_| bad("unknown split"))?,
            };
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            let mut read = |file: &str| -> Result<Tensor> {
                let path = dir.join(file);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                hasher.update(&bytes);
                Tensor::read_lpt(&bytes[..]).map_err(|e| Error::corrupt(&path, e.to_string()))
            };
            let t1 = read(f[6])?;
            let t2 = read(f[7])?;
            let mask = if f[8] == "-" { None } else { Some(read(f[8])?) };
            patches.push(PatchPair {
                t1,
                t2,
                label: entry.label,
                scene: entry.scene,
                origin: entry.origin,
                mask,
            });
            entries.push(entry);
        } else {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| header.get(k).ok_or_else(|| Error::corrupt(&mpath, format!("missing header {k}")));
    let parse_err = |k: &str| Error::corrupt(&mpath, format!("invalid value for {k}"));
    let content_hash = hex(&hasher.finalize());
    if *get("content_hash")? != content_hash {
        return Err(Error::corrupt(&mpath, "content hash does not match the stored patches"));
    }
    let meta = DatasetMeta {
        patch_size: get("patch_size")?.parse().map_err(|_| parse_err("patch_size"))?,
        overlap: get("overlap")?.parse().map_err(|_| parse_err("overlap"))?,
        min_change_pixels: get("min_change_pixels")?.parse().map_err(|_| parse_err("min_change_pixels"))?,
        seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
        config_hash: get("config_hash")?.clone(),
    };
    let manifest = DatasetManifest { meta, entries };
    for s in Split::ALL {
        let key = format!("counts.{s}");
        let [neg, pos] = manifest.class_counts(s);
        if *get(&key)? != format!("{neg} {pos}") {
            return Err(Error::corrupt(&mpath, format!("{key} disagrees with the stored labels")));
        }
    }
    Ok(Dataset { manifest, patches })
}
