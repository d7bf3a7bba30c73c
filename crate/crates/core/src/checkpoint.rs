//! Model files.
//!
//! # Layout
//!
//! A checkpoint is an ASCII preamble, a binary payload and an 8-byte trailer:
//!
//! ```text
//! FRNT 1
//! kind frnet1
//! seed 42
//! config-digest 9a3c51e0d2f7b684
//! hash fnv1a-64
//! spec-bytes 5123
//! scaling-bytes 11808
//! param conv1/w 1x1x1x32 0 32
//! param conv1/b 32 32 32
//! ...
//! adam 120 0.001 0.9 0.999 0.00000001
//! end
//! <spec JSON><scaling record><parameters><adam m><adam v><checksum>
//! ```
//!
//! Each `param` line gives the name, the extents joined by `x`, the offset
//! and the count in floats within the parameter block. All floats are
//! 32-bit little-endian, row-major. The scaling record is the per-feature
//! minima followed by the maxima. The optional `adam` line holds the step
//! count and the optimizer constants; its first- and second-moment blocks
//! follow the parameters with the same offsets. The trailer is the FNV-1a
//! 64-bit hash, little-endian, of every preceding byte.
//!
//! Loading checks the magic, then the version, then the checksum, and only
//! then parses the rest.

use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;

use crate::data::ScalingRecord;
use crate::error::{Error, Result};
use crate::models::{ModelKind, Network, NetworkSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FRNT";
pub const VERSION: u32 = 1;
const HASH_NAME: &str = "fnv1a-64";

/// FNV-1a 64 of a byte string.
pub fn digest(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub config_digest: u64,
    pub params: Vec<(String, Tensor)>,
    pub scaling: Option<ScalingRecord>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_network(
        net: &Network,
        seed: u64,
        config_digest: u64,
        scaling: Option<ScalingRecord>,
        adam: Option<&AdamState>,
    ) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            seed,
            config_digest,
            params: net.params().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            scaling,
            adam: adam.cloned(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_params(self.spec.clone(), self.params.clone())
    }

    /// Checks names and shapes against the embedded spec.
    pub fn validate(&self) -> Result<()> {
        let infos = self.spec.params()?;
        if infos.len() != self.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "spec declares {} parameters, file holds {}",
                infos.len(),
                self.params.len()
            )));
        }
        for (info, (name, t)) in infos.iter().zip(&self.params) {
            if &info.name != name || info.dims != t.dims() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter `{name}` {:?} where the spec has `{}` {:?}",
                    t.dims(),
                    info.name,
                    info.dims
                )));
            }
        }
        if let Some(a) = &self.adam {
            let ok = a.m.len() == self.params.len()
                && a.m.iter().zip(&a.v).zip(&self.params).all(|((m, v), (_, p))| {
                    m.shape() == p.shape() && v.shape() == p.shape()
                });
            if !ok {
                return Err(Error::CheckpointMismatch("optimizer state does not match parameters".into()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let spec = serde_json::to_vec_pretty(&self.spec).map_err(|e| Error::Serde(e.to_string()))?;
        let scaling = self.scaling.as_ref().map(ScalingRecord::to_bytes).unwrap_or_default();

        let mut head = format!(
            "FRNT {VERSION}\nkind {}\nseed {}\nconfig-digest {:016x}\nhash {HASH_NAME}\nspec-bytes {}\nscaling-bytes {}\n",
            self.spec.kind.as_str(),
            self.seed,
            self.config_digest,
            spec.len(),
            scaling.len()
        );
        let mut offset = 0;
        for (name, t) in &self.params {
            let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("param {name} {} {offset} {}\n", dims.join("x"), t.len()));
            offset += t.len();
        }
        if let Some(a) = &self.adam {
            let c = a.config;
            head.push_str(&format!("adam {} {} {} {} {}\n", a.t, c.lr, c.beta1, c.beta2, c.eps));
        }
        head.push_str("end\n");

        let mut out = head.into_bytes();
        out.extend_from_slice(&spec);
        out.extend_from_slice(&scaling);
        let mut floats = |ts: &mut dyn Iterator<Item = &Tensor>| {
            for t in ts {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        floats(&mut self.params.iter().map(|(_, t)| t));
        if let Some(a) = &self.adam {
            floats(&mut a.m.iter());
            floats(&mut a.v.iter());
        }
        let sum = digest(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let first = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Malformed("no header line".into()))?;
        let version: u32 = std::str::from_utf8(&bytes[..first])
            .ok()
            .and_then(|l| l.strip_prefix("FRNT "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Malformed("unreadable version".into()))?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: VERSION,
            });
        }
        if bytes.len() < first + 9 {
            return Err(Error::Malformed("file truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
        let computed = digest(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        parse_body(body)
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}

struct ParamLine {
    name: String,
    dims: Vec<usize>,
    offset: usize,
    count: usize,
}

fn parse_body(body: &[u8]) -> Result<Checkpoint> {
    let end = body
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| malformed("missing end of preamble"))?;
    let head = std::str::from_utf8(&body[..end]).map_err(|_| malformed("preamble is not text"))?;
    let mut payload = &body[end + 5..];

    let (mut kind, mut seed, mut digest_v, mut spec_len, mut scaling_len) = (None, None, None, None, None);
    let mut params = Vec::new();
    let mut adam = None;
    for line in head.lines().skip(1) {
        let parts: Vec<&str> = line.split(' ').collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| malformed(format!("bad number in `{line}`")));
        match parts.as_slice() {
            ["kind", k] => kind = ModelKind::parse(k),
            ["seed", s] => seed = s.parse::<u64>().ok(),
            ["config-digest", d] => digest_v = u64::from_str_radix(d, 16).ok(),
            ["hash", h] if *h == HASH_NAME => {}
            ["hash", h] => return Err(malformed(format!("unknown hash `{h}`"))),
            ["spec-bytes", n] => spec_len = Some(num(n)?),
            ["scaling-bytes", n] => scaling_len = Some(num(n)?),
            ["param", name, dims, offset, count] => params.push(ParamLine {
                name: name.to_string(),
                dims: dims.split('x').map(num).collect::<Result<_>>()?,
                offset: num(offset)?,
                count: num(count)?,
            }),
            ["adam", t, lr, b1, b2, eps] => {
                let f = |s: &str| s.parse::<f64>().map_err(|_| malformed(format!("bad number in `{line}`")));
                adam = Some((
                    t.parse::<u64>().map_err(|_| malformed("bad adam step"))?,
                    AdamConfig {
                        lr: f(lr)?,
                        beta1: f(b1)?,
                        beta2: f(b2)?,
                        eps: f(eps)?,
                    },
                ));
            }
            _ => return Err(malformed(format!("unexpected preamble line `{line}`"))),
        }
    }
    let (Some(kind), Some(seed), Some(config_digest), Some(spec_len), Some(scaling_len)) =
        (kind, seed, digest_v, spec_len, scaling_len)
    else {
        return Err(malformed("incomplete preamble"));
    };

    let mut take = |n: usize| -> Result<&[u8]> {
        if payload.len() < n {
            return Err(malformed("payload shorter than declared"));
        }
        let (a, b) = payload.split_at(n);
        payload = b;
        Ok(a)
    };
    let spec: NetworkSpec =
        serde_json::from_slice(take(spec_len)?).map_err(|e| Error::Serde(e.to_string()))?;
    if spec.kind != kind {
        return Err(malformed("kind line disagrees with the embedded spec"));
    }
    let scaling = match scaling_len {
        0 => None,
        n => Some(ScalingRecord::from_bytes(take(n)?)?),
    };
    let total: usize = params.iter().map(|p| p.count).sum();
    let mut expect = 0;
    for p in &params {
        if p.offset != expect || p.dims.iter().product::<usize>() != p.count {
            return Err(malformed(format!("inconsistent entry for `{}`", p.name)));
        }
        expect += p.count;
    }
    let values = read_block(take(total * 4)?, &params)?;
    let adam = match adam {
        Some((t, config)) => {
            let m = read_block(take(total * 4)?, &params)?;
            let v = read_block(take(total * 4)?, &params)?;
            Some(AdamState { config, t, m, v })
        }
        None => None,
    };
    if !payload.is_empty() {
        return Err(malformed("trailing bytes after payload"));
    }
    let ckpt = Checkpoint {
        spec,
        seed,
        config_digest,
        params: params.iter().map(|p| p.name.clone()).zip(values).collect(),
        scaling,
        adam,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

fn read_block(raw: &[u8], params: &[ParamLine]) -> Result<Vec<Tensor>> {
    params
        .iter()
        .map(|p| {
            let data = raw[p.offset * 4..(p.offset + p.count) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(p.dims.clone(), data)
        })
        .collect()
}

/// Writes to a temporary file in the target directory, then renames.
pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let ctx = || format!("writing {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(ctx(), e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(ctx(), e))?;
    tmp.persist(path).map_err(|e| Error::io(ctx(), e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Checkpoint::from_bytes(&bytes)
}
