//! Checkpoint directories: one LPT1 file per tensor plus `manifest.txt`.
//!
//! The manifest starts with `config.<key> = <value>` lines describing the
//! network, followed by `param <name> <file>` and `buffer <name> <file>`
//! lines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lpcd_tensor::Tensor;

use super::config::{NetworkConfig, StageSpec};
use super::net::{Classifier, LpcdNet, ParamMap};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

pub fn config_lines(c: &NetworkConfig) -> String {
    let ch = c.channels();
    let blocks = c.blocks();
    let mut s = String::new();
    writeln!(s, "config.channels = {},{},{},{}", ch[0], ch[1], ch[2], ch[3]).unwrap();
    writeln!(s, "config.blocks = {},{},{}", blocks[0], blocks[1], blocks[2]).unwrap();
    writeln!(s, "config.mlfc_window = {}", c.mlfc_window).unwrap();
    writeln!(s, "config.decision_hidden = {}", c.decision_hidden).unwrap();
    writeln!(s, "config.input_size = {}", c.input_size).unwrap();
    writeln!(s, "config.head = {}", c.head).unwrap();
    s
}

fn parse_list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let items: Vec<usize> = v
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("{key}: {e}")))?;
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated integers")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|e| Error::Config(format!("{key}: {e}")))
}

pub fn save(net: &LpcdNet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = config_lines(net.config());
    for (kind, map) in [("param", net.params()), ("buffer", net.buffers())] {
        for (name, t) in map {
            let file = format!("{name}.lpt");
            t.save(dir.join(&file))?;
            writeln!(manifest, "{kind} {name} {file}").unwrap();
        }
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<LpcdNet> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut config = NetworkConfig::with_channels([1, 1, 1, 1]);
    let mut params = ParamMap::new();
    let mut buffers = ParamMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::corrupt(&path, format!("line {}: cannot parse {line:?}", lineno + 1));
        if let Some(rest) = line.strip_prefix("config.") {
            let (key, value) = rest.split_once('=').ok_or_else(bad)?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "channels" => config.set_channels(parse_list::<4>(key, value)?),
                "blocks" => {
                    let b = parse_list::<3>(key, value)?;
                    for (s, n) in config.stages.iter_mut().zip(b) {
                        *s = StageSpec { num_blocks: n, ..*s };
                    }
                }
                "mlfc_window" => config.mlfc_window = parse_usize(key, value)?,
                "decision_hidden" => config.decision_hidden = parse_usize(key, value)?,
                "input_size" => config.input_size = parse_usize(key, value)?,
                "head" => config.head = value.parse()?,
                _ => return Err(bad()),
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [kind, name, file] = parts[..] else { return Err(bad()) };
        let target = match kind {
            "param" => &mut params,
            "buffer" => &mut buffers,
            _ => return Err(bad()),
        };
        let fpath = dir.join(file);
        if !fpath.is_file() {
            return Err(Error::corrupt(&fpath, "listed in manifest but missing"));
        }
        let t = Tensor::load(&fpath).map_err(|e| Error::corrupt(&fpath, e.to_string()))?;
        target.insert(name.to_string(), t);
    }
    LpcdNet::from_parts(config, params, buffers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    #[test]
    fn round_trip() {
        let mut c = NetworkConfig::with_channels([2, 3, 4, 5]);
        c.input_size = 32;
        c.mlfc_window = 2;
        c.head = HeadKind::LastStage;
        c.stages[2].num_blocks = 1;
        let net = LpcdNet::build(&c, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&net, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), net);

        fs::remove_file(dir.path().join("decision.fc1.bias.lpt")).unwrap();
        let err = load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("decision.fc1.bias.lpt"), "{err}");
    }
}
