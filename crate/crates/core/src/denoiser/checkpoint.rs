//! `IFLOW1` container: magic, little-endian u64 header length, JSON header,
//! then the raw and EMA parameter blocks as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, TrainConfig, TrainedDenoiser, TrainingMeta};
use crate::datasets::EigenFrame;
use crate::error::{Error, Result};
use crate::schedule::InflationSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"IFLOW1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    widths: Vec<usize>,
    embed_dim: usize,
    param_count: usize,
    layout: Vec<LayoutEntry>,
    schedule: InflationSchedule,
    eigenframe: EigenFrame,
    config: TrainConfig,
    metadata: TrainingMeta,
}

fn layout_entries(net: &Mlp) -> Vec<LayoutEntry> {
    net.layout()
        .iter()
        .enumerate()
        .flat_map(|(l, slot)| {
            [
                LayoutEntry {
                    name: format!("layer{l}.weight"),
                    offset: slot.weight_offset,
                    shape: vec![slot.fan_in, slot.fan_out],
                },
                LayoutEntry { name: format!("layer{l}.bias"), offset: slot.bias_offset, shape: vec![slot.fan_out] },
            ]
        })
        .collect()
}

impl TrainedDenoiser {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            widths: self.net.widths().to_vec(),
            embed_dim: self.net.embed_dim(),
            param_count: self.net.param_count(),
            layout: layout_entries(&self.net),
            schedule: self.schedule.clone(),
            eigenframe: self.frame.clone(),
            config: self.config.clone(),
            metadata: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(14 + json.len() + 16 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.iter().chain(&self.ema) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes.strip_prefix(CHECKPOINT_MAGIC.as_slice()).ok_or_else(|| bad("missing IFLOW1 magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let (len_bytes, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let (json, blocks) = rest.split_at(len);
        let header: Header = serde_json::from_slice(json)?;
        let net = Mlp::from_widths(&header.widths, header.embed_dim)?;
        let n = net.param_count();
        if header.param_count != n {
            return Err(bad("parameter count disagrees with widths"));
        }
        let entries = layout_entries(&net);
        let consistent = entries.len() == header.layout.len()
            && entries
                .iter()
                .zip(&header.layout)
                .all(|(a, b)| a.name == b.name && a.offset == b.offset && a.shape == b.shape);
        if !consistent {
            return Err(bad("layout map disagrees with widths"));
        }
        if blocks.len() != 16 * n {
            return Err(Error::Checkpoint(format!("expected {} bytes of parameters, found {}", 16 * n, blocks.len())));
        }
        let values: Vec<f64> =
            blocks.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let (params, ema) = values.split_at(n);
        TrainedDenoiser::from_parts(
            net,
            params.to_vec(),
            ema.to_vec(),
            header.schedule,
            header.eigenframe,
            header.config,
            header.metadata,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
