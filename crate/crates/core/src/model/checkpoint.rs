use std::path::Path;

use super::{Model, ModelConfig, INIT_SCHEME};
use crate::container::Container;
use crate::error::{Error, Result};

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn parse_meta<T: std::str::FromStr>(c: &Container, key: &str) -> Result<T> {
    let raw = c.require_meta(key)?;
    raw.parse()
        .map_err(|_| Error::Input(format!("checkpoint field `{key}` has bad value `{raw}`")))
}

impl ModelConfig {
    pub(crate) fn write_meta(&self, c: &mut Container) {
        c.set_meta("n_layers", self.n_layers);
        c.set_meta("d_model", self.d_model);
        c.set_meta("n_heads", self.n_heads);
        c.set_meta("ff_dim", self.ff_dim);
        c.set_meta("input_dim", self.input_dim);
        c.set_meta("n_speakers", self.n_speakers);
        c.set_meta("chunk_len", self.chunk_len);
        c.set_meta("positional_encoding", self.positional_encoding);
    }

    pub(crate) fn read_meta(c: &Container) -> Result<Self> {
        Ok(Self {
            n_layers: parse_meta(c, "n_layers")?,
            d_model: parse_meta(c, "d_model")?,
            n_heads: parse_meta(c, "n_heads")?,
            ff_dim: parse_meta(c, "ff_dim")?,
            input_dim: parse_meta(c, "input_dim")?,
            n_speakers: parse_meta(c, "n_speakers")?,
            chunk_len: parse_meta(c, "chunk_len")?,
            positional_encoding: parse_meta(c, "positional_encoding")?,
        })
    }
}

impl Model {
    /// Header holds the config, init scheme and version; one tensor per
    /// parameter in creation order.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(CHECKPOINT_KIND);
        c.set_meta("version", CHECKPOINT_VERSION);
        c.set_meta("init", INIT_SCHEME);
        c.set_meta("init_seed", self.init_seed);
        self.config.write_meta(&mut c);
        for (name, t) in self.params.iter() {
            c.push_tensor(name, t.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind() != Some(CHECKPOINT_KIND) {
            return Err(Error::Input(format!(
                "expected a {CHECKPOINT_KIND} container, found {:?}",
                c.kind()
            )));
        }
        let version: u32 = parse_meta(c, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!("unsupported checkpoint version {version}")));
        }
        let config = ModelConfig::read_meta(c)?;
        let mut model = Model::new(config, parse_meta(c, "init_seed")?)?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let t = c.require_tensor(&name)?;
            let slot = model.params.get_mut(id);
            if t.shape() != slot.shape() {
                return Err(Error::Input(format!(
                    "parameter `{name}` has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 2,
            ff_dim: 6,
            input_dim: 3,
            n_speakers: 2,
            chunk_len: 20,
            positional_encoding: true,
        };
        let m = Model::new(cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
        for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
            let bits = |t: &crate::numerics::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn missing_parameter_is_reported() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 1,
            ff_dim: 4,
            input_dim: 2,
            n_speakers: 2,
            chunk_len: 8,
            positional_encoding: false,
        };
        let m = Model::new(cfg, 0).unwrap();
        let full = m.to_container();
        let mut partial = Container::new(CHECKPOINT_KIND);
        for (k, v) in full.meta_entries() {
            if k != "kind" {
                partial.set_meta(k, v);
            }
        }
        let err = Model::from_container(&partial).unwrap_err();
        assert!(err.to_string().contains("input.w"), "{err}");
    }
}
