//! Versioned binary checkpoints: magic, format version, a JSON metadata
//! block (network specs, config hash, progress), then every parameter as
//! little-endian `f64`.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nn::{Net, NetSpec};
use super::ppo::ActorCritic;

const MAGIC: &[u8; 8] = b"ECSMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("parameter block truncated")]
    Truncated,
    #[error(transparent)]
    Read(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    heads: Vec<usize>,
    policy: NetSpec,
    value: NetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub config_hash: String,
    pub phase: u8,
    pub iteration: usize,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    info: CheckpointInfo,
    agents: ModelMeta,
    planner: Option<ModelMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub info: CheckpointInfo,
    pub agents: ActorCritic,
    pub planner: Option<ActorCritic>,
}

fn meta_of(m: &ActorCritic) -> ModelMeta {
    ModelMeta {
        heads: m.heads.clone(),
        policy: m.policy.spec.clone(),
        value: m.value.spec.clone(),
    }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let meta = Meta {
            info: self.info.clone(),
            agents: meta_of(&self.agents),
            planner: self.planner.as_ref().map(meta_of),
        };
        let json = serde_json::to_vec(&meta).map_err(io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for model in std::iter::once(&self.agents).chain(&self.planner) {
            for net in [&model.policy, &model.value] {
                let mut buf = Vec::with_capacity(net.params.len() * 8);
                for p in &net.params {
                    buf.extend_from_slice(&p.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json)?;
        let meta: Meta = serde_json::from_slice(&json)?;
        let mut read_net = |spec: NetSpec| -> Result<Net, CheckpointError> {
            let mut net = Net::new(spec, 0);
            let mut buf = vec![0u8; net.params.len() * 8];
            r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
            for (p, c) in net.params.iter_mut().zip(buf.chunks_exact(8)) {
                *p = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
            Ok(net)
        };
        let mut read_model = |m: ModelMeta| -> Result<ActorCritic, CheckpointError> {
            Ok(ActorCritic {
                policy: read_net(m.policy)?,
                value: read_net(m.value)?,
                heads: m.heads,
            })
        };
        let agents = read_model(meta.agents)?;
        let planner = meta.planner.map(&mut read_model).transpose()?;
        Ok(Self {
            info: meta.info,
            agents,
            planner,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = io::BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(&mut io::BufReader::new(file))
    }
}
