//! Binary tensor container.
//!
//! ```text
//! magic    b"ULWK"
//! version  u32 LE
//! config   u32 LE byte length + UTF-8 text (key=value lines)
//! count    u32 LE
//! entry    u16 LE name length + UTF-8 name, u8 rank, rank × u32 LE dims,
//!          product(dims) × f32 LE
//! ```

use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::netblocks::{ModelConfig, ParamStore, Preset, UNetConfig, UlwModel};
use crate::objective::FeatureExtractor;

pub const MAGIC: [u8; 4] = *b"ULWK";
pub const VERSION: u32 = 1;

/// A decoded container: free-form configuration text plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>, params: ParamStore<f32>) -> Self {
        Self { config: config.into(), params }
    }

    /// Value of `key` in the `key=value` config block.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.lines().find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
    }

    /// Rebuilds the model described by the config block and checks that the
    /// stored tensors match its parameter layout exactly.
    pub fn model(&self) -> Result<UlwModel> {
        let get = |k: &str| self.config_value(k).ok_or_else(|| Error::Config(format!("checkpoint config lacks `{k}`")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|e| Error::Config(format!("checkpoint config `{k}`: {e}")))
        };
        let preset: Preset = get("preset")?.parse()?;
        let unet = UNetConfig {
            depth: num("depth")?,
            base_channels: num("base_channels")?,
            in_channels: num("in_channels")?,
            out_channels: num("out_channels")?,
        };
        let model = UlwModel::new(ModelConfig::new(preset, unet))?;
        let expected = model.init_params::<f32>(0)?;
        for (name, t) in expected.iter() {
            match self.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::shape(
                        "load_checkpoint",
                        format!("`{name}` has shape {:?}, model expects {:?}", p.shape(), t.shape()),
                    ))
                }
                None => return Err(Error::Config(format!("checkpoint lacks parameter `{name}`"))),
            }
        }
        if let Some(extra) = self.params.names().find(|n| expected.get(n).is_none()) {
            return Err(Error::Config(format!("checkpoint has unexpected parameter `{extra}` for preset {preset}")));
        }
        Ok(model)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + self.params.numel() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.as_bytes();
        let cfg_len = u32::try_from(cfg.len()).map_err(|_| Error::Config("config block exceeds 4 GiB".into()))?;
        out.extend_from_slice(&cfg_len.to_le_bytes());
        out.extend_from_slice(cfg);
        let count = u32::try_from(self.params.len()).map_err(|_| Error::Config("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in self.params.iter() {
            let n = u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name too long: `{name}`")))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Config(format!("rank of `{name}` exceeds 255")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Config(format!("dimension of `{name}` exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a whole container; nothing is returned unless every byte is
    /// accounted for.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format { offset: 0, detail: format!("bad magic {magic:02x?}, expected \"ULWK\"") });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_at = r.pos;
        let config = std::str::from_utf8(r.take(cfg_len, "config block")?)
            .map_err(|e| Error::Format { offset: cfg_at + e.valid_up_to(), detail: "config block is not UTF-8".into() })?
            .to_string();
        let count = r.u32("entry count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let entry_at = r.pos;
            let name_len = r.u16("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Format { offset: name_at, detail: "tensor name is not UTF-8".into() })?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Format {
                offset: entry_at,
                detail: format!("shape {shape:?} of `{name}` overflows"),
            })?;
            let payload = r.take(numel.checked_mul(4).unwrap_or(usize::MAX), "tensor payload")?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(&shape, data)?;
            params
                .insert(name.clone(), t)
                .map_err(|_| Error::Format { offset: entry_at, detail: format!("duplicate tensor `{name}`") })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { offset: r.pos, detail: format!("{} trailing bytes", bytes.len() - r.pos) });
        }
        Ok(Self { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.pos,
            detail: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes via a sibling temporary file and a rename, so readers never see a
/// half-written container.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.encode()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

/// `key=value` lines describing a model, as stored in checkpoint configs.
pub fn model_config_text(cfg: &ModelConfig) -> String {
    format!(
        "kind=model\npreset={}\ndepth={}\nbase_channels={}\nin_channels={}\nout_channels={}\n",
        cfg.preset, cfg.unet.depth, cfg.unet.base_channels, cfg.unet.in_channels, cfg.unet.out_channels
    )
}

pub fn save_extractor(ext: &FeatureExtractor<f32>, path: &Path) -> Result<()> {
    let (config, params) = ext.to_store()?;
    save_checkpoint(&Checkpoint::new(config, params), path)
}

/// Reads perceptual-extractor weights stored in the container format.
pub fn load_extractor(path: &Path) -> Result<FeatureExtractor<f32>> {
    let ckpt = load_checkpoint(path)?;
    match ckpt.config_value("kind") {
        Some("extractor") => FeatureExtractor::from_store(&ckpt.config, &ckpt.params),
        other => Err(Error::Config(format!(
            "{} is not an extractor container (kind={})",
            path.display(),
            other.unwrap_or("<missing>")
        ))),
    }
}
