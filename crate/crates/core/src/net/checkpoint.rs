//! Versioned little-endian parameter files with a shape manifest.
//!
//! Layout:
//! ```text
//! magic        8 bytes  "MNAVCKPT"
//! version      u32      1
//! dtype        u8       bytes per scalar (4 or 8)
//! action space u8       0 discrete, 1 continuous
//! config       13 x u32 beams, frames, conv1 (filters, kernel, stride),
//!                       conv2 (filters, kernel, stride), fc_lidar,
//!                       fc_goal_dir, fc_goal_dist, fc_vel, fc_merge
//! meta         u32 length + UTF-8 bytes
//! tensors      u32 count, then per tensor: u16 name length, name,
//!                       u8 rank, rank x u32 dims
//! data         every tensor in manifest order, row-major scalars
//! ```

use std::path::Path;

use super::config::{ActionSpace, ConvSpec, NetConfig};
use super::network::Network;
use super::scalar::Scalar;
use super::NetError;

const MAGIC: &[u8; 8] = b"MNAVCKPT";
const VERSION: u32 = 1;

pub fn encode_checkpoint<S: Scalar>(net: &Network<S>, meta: &str) -> Vec<u8> {
    let c = net.config();
    let mut out = Vec::with_capacity(net.params().len() * S::BYTES as usize + 256);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(S::BYTES);
    out.push(match c.action_space {
        ActionSpace::Discrete => 0,
        ActionSpace::Continuous => 1,
    });
    for v in [
        c.beams,
        c.frames,
        c.conv1.filters,
        c.conv1.kernel,
        c.conv1.stride,
        c.conv2.filters,
        c.conv2.kernel,
        c.conv2.stride,
        c.fc_lidar,
        c.fc_goal_dir,
        c.fc_goal_dist,
        c.fc_vel,
        c.fc_merge,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let tensors = &net.layout().tensors;
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for &p in net.params() {
        p.write_le(&mut out);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NetError::Checkpoint("file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint, converting stored scalars to `S` if the dtype differs.
pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<(Network<S>, String), NetError> {
    let bad = |m: &str| NetError::Checkpoint(m.into());
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let dtype = r.u8()?;
    if dtype != 4 && dtype != 8 {
        return Err(NetError::Checkpoint(format!("unknown dtype width {dtype}")));
    }
    let action_space = match r.u8()? {
        0 => ActionSpace::Discrete,
        1 => ActionSpace::Continuous,
        v => return Err(NetError::Checkpoint(format!("unknown action space tag {v}"))),
    };
    let mut f = [0usize; 13];
    for v in &mut f {
        *v = r.u32()? as usize;
    }
    let config = NetConfig {
        beams: f[0],
        frames: f[1],
        conv1: ConvSpec {
            filters: f[2],
            kernel: f[3],
            stride: f[4],
        },
        conv2: ConvSpec {
            filters: f[5],
            kernel: f[6],
            stride: f[7],
        },
        fc_lidar: f[8],
        fc_goal_dir: f[9],
        fc_goal_dist: f[10],
        fc_vel: f[11],
        fc_merge: f[12],
        action_space,
    };
    let layout = config.layout()?;
    let meta_len = r.u32()? as usize;
    let meta = String::from_utf8(r.take(meta_len)?.to_vec()).map_err(|_| bad("meta is not UTF-8"))?;
    let count = r.u32()? as usize;
    if count != layout.tensors.len() {
        return Err(NetError::Shape(format!(
            "checkpoint lists {count} tensors, architecture has {}",
            layout.tensors.len()
        )));
    }
    for t in &layout.tensors {
        let name_len = r.u16()? as usize;
        let name = r.take(name_len)?;
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if name != t.name.as_bytes() || dims != t.shape {
            return Err(NetError::Shape(format!(
                "checkpoint tensor {} {:?} does not match expected {} {:?}",
                String::from_utf8_lossy(name),
                dims,
                t.name,
                t.shape
            )));
        }
    }
    let data = r.take(layout.total * dtype as usize)?;
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let params: Vec<S> = data
        .chunks_exact(dtype as usize)
        .map(|c| {
            if dtype as u8 == S::BYTES {
                S::read_le(c)
            } else if dtype == 4 {
                S::lit(f32::read_le(c) as f64)
            } else {
                S::lit(f64::read_le(c))
            }
        })
        .collect();
    Ok((Network::from_params(config, params)?, meta))
}

pub fn save_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    net: &Network<S>,
    meta: &str,
) -> Result<(), NetError> {
    std::fs::write(path, encode_checkpoint(net, meta))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<(Network<S>, String), NetError> {
    decode_checkpoint(&std::fs::read(path)?)
}
