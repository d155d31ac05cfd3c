//! Checkpoint container: a text manifest followed by little-endian `f32` blobs.
//!
//! ```text
//! GRINCKPT1
//! meta <key> <value>
//! tensor <set>/<name> <d0>x<d1>... <byte offset>
//! end
//! <blobs>
//! ```
//! Offsets are relative to the first byte after the `end` line.

use std::io::Write;
use std::path::Path;

use grin_autodiff::Array;

use crate::{Error, Result};

const MAGIC: &str = "GRINCKPT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    /// `(set/name, value)` in file order.
    pub tensors: Vec<(String, Array)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Array> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Tensors of one named set, with the set prefix removed.
    pub fn set(&self, set: &str) -> Vec<(&str, &Array)> {
        let prefix = format!("{set}/");
        self.tensors.iter().filter_map(|(n, a)| n.strip_prefix(&prefix).map(|n| (n, a))).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\n");
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, a) in &self.tensors {
            let shape: Vec<String> = a.shape().iter().map(usize::to_string).collect();
            let shape = if shape.is_empty() { "scalar".to_string() } else { shape.join("x") };
            head.push_str(&format!("tensor {name} {shape} {offset}\n"));
            offset += 4 * a.len();
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, a) in &self.tensors {
            for &v in a.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("checkpoint: {msg}"));
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated manifest".into()))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not UTF-8".into()))?;
            *pos += end + 1;
            Ok(line.to_string())
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(bad(format!("missing {MAGIC} header")));
        }
        let mut ck = Checkpoint::default();
        let mut entries = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("end"), None) => break,
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.push((k.to_string(), v.to_string()));
                }
                (Some("tensor"), Some(rest)) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 {
                        return Err(bad(format!("malformed tensor line {line:?}")));
                    }
                    let shape: Vec<usize> = if f[1] == "scalar" {
                        Vec::new()
                    } else {
                        f[1].split('x')
                            .map(|d| d.parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad(format!("bad shape in {line:?}")))?
                    };
                    let offset: usize = f[2].parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
                    entries.push((f[0].to_string(), shape, offset));
                }
                _ => return Err(bad(format!("unexpected line {line:?}"))),
            }
        }
        let blobs = &bytes[pos..];
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let raw = blobs
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(format!("tensor {name} extends past end of file")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            ck.tensors.push((name, Array::new(shape, data)?));
        }
        Ok(ck)
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip_f32_values() {
        let ck = Checkpoint {
            meta: vec![("step".into(), "12".into()), ("note".into(), "two words".into())],
            tensors: vec![
                ("raw/a.w".into(), Array::new([2, 3], vec![0.5, -1.25, 3.0, 1e-3f32 as f64, 7.0, -0.0]).unwrap()),
                ("ema/s".into(), Array::scalar(0.1f32 as f64)),
            ],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("note"), Some("two words"));
        assert_eq!(back.set("raw").len(), 1);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"NOPE\n").is_err());
        let mut bytes = Checkpoint { meta: vec![], tensors: vec![("raw/x".into(), Array::ones([4]))] }.to_bytes();
        bytes.truncate(bytes.len() - 2);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
