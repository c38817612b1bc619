//! Binary checkpoint: parameters and batch-norm running statistics.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DCRN" | version | meta_len | meta (UTF-8 key=value lines)
//! | entry_count | entries...
//! entry: name_len | name | rank | dims... | f32 data (little-endian)
//! ```
//!
//! Region memory is never stored.

use std::fs;
use std::path::Path;

use dcrnet::network::Network;
use dcrnet::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCRN";
pub const VERSION: u32 = 1;

/// A loaded checkpoint with its free-form `info.*` metadata.
#[derive(Debug)]
pub struct Checkpoint {
    pub net: Network<f32>,
    pub info: Vec<(String, String)>,
}

pub fn encode(net: &Network<f32>, info: &[(String, String)]) -> Vec<u8> {
    let mut meta = RunConfig::net_text(net.config());
    for (name, s) in net.bn_names().iter().zip(net.bn_states()) {
        meta.push_str(&format!("bn.{name}.steps={}\n", s.step_count));
    }
    for (k, v) in info {
        meta.push_str(&format!("info.{k}={v}\n"));
    }

    let mut entries: Vec<(String, Vec<usize>, &[f32])> =
        net.param_names().iter().zip(net.params()).map(|(n, p)| (n.clone(), p.shape().to_vec(), p.data())).collect();
    for (name, s) in net.bn_names().iter().zip(net.bn_states()) {
        let c = vec![s.running_mean.len()];
        entries.push((format!("{name}.running_mean"), c.clone(), &s.running_mean));
        entries.push((format!("{name}.running_var"), c, &s.running_var));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    put(&mut out, meta.len() as u32);
    out.extend_from_slice(meta.as_bytes());
    put(&mut out, entries.len() as u32);
    for (name, shape, data) in entries {
        put(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put(&mut out, shape.len() as u32);
        for &d in &shape {
            put(&mut out, d as u32);
        }
        for &x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<&'a str> {
        let at = self.pos;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format(format!("invalid UTF-8 at byte {at}")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = r.string(meta_len)?;
    let mut net_lines = String::new();
    let mut steps = Vec::new();
    let mut info = Vec::new();
    for line in meta.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
        if let Some(k) = k.strip_prefix("info.") {
            info.push((k.to_string(), v.to_string()));
        } else if let Some(name) = k.strip_prefix("bn.").and_then(|k| k.strip_suffix(".steps")) {
            let n: u64 = v.parse().map_err(|_| Error::Format(format!("bad step count {v:?}")))?;
            steps.push((name.to_string(), n));
        } else {
            net_lines.push_str(line);
            net_lines.push('\n');
        }
    }
    let config = RunConfig::parse_net_text(&net_lines).map_err(|e| Error::Format(e.to_string()))?;
    let mut net = Network::<f32>::build(config).map_err(|e| Error::Format(e.to_string()))?;

    let count = r.u32()? as usize;
    let mut seen = vec![false; net.param_names().len()];
    let mut bn_seen = vec![[false; 2]; net.bn_names().len()];
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?.to_string();
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("entry too large".into()))?)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();

        if let Some(i) = net.param_names().iter().position(|p| *p == name) {
            if net.params()[i].shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "{name}: stored shape {:?}, network expects {:?}",
                    shape,
                    net.params()[i].shape()
                )));
            }
            net.params_mut()[i] = Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?;
            seen[i] = true;
            continue;
        }
        let (base, slot) = match name.rsplit_once('.') {
            Some((b, "running_mean")) => (b, 0),
            Some((b, "running_var")) => (b, 1),
            _ => return Err(Error::Format(format!("unknown entry {name:?}"))),
        };
        let i = net
            .bn_names()
            .iter()
            .position(|b| b == base)
            .ok_or_else(|| Error::Format(format!("unknown entry {name:?}")))?;
        let st = &mut net.bn_states_mut()[i];
        if data.len() != st.running_mean.len() {
            return Err(Error::Format(format!("{name}: {} values for {} channels", data.len(), st.running_mean.len())));
        }
        if slot == 0 {
            st.running_mean = data;
        } else {
            st.running_var = data;
        }
        bn_seen[i][slot] = true;
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Format(format!("missing parameter {}", net.param_names()[i])));
    }
    if let Some(i) = bn_seen.iter().position(|s| !(s[0] && s[1])) {
        return Err(Error::Format(format!("missing running statistics for {}", net.bn_names()[i])));
    }
    for (name, n) in steps {
        let i = net
            .bn_names()
            .iter()
            .position(|b| *b == name)
            .ok_or_else(|| Error::Format(format!("step count for unknown batch norm {name:?}")))?;
        net.bn_states_mut()[i].step_count = n;
    }
    Ok(Checkpoint { net, info })
}

pub fn save(path: &Path, net: &Network<f32>, info: &[(String, String)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(net, info))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
