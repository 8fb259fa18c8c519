//! Block archive: every block of one plant in a single file.
//!
//! ```text
//! magic     8 bytes  "PSBLOCKS"
//! version   u32 LE   (currently 1)
//! header    u64 LE length, then UTF-8 JSON:
//!           { "version", "spec", "seed", "purpose", "point_count",
//!             "block_count", "config" }
//! blocks    block_count records, each:
//!   i64 cell_i, i64 cell_j, u32 offset_id, f64 offset,
//!   f64 center_x, f64 center_y,
//!   u64 member_count, member_count × u64 member index,
//!   u64 n, then n slots of
//!     u64 source index,
//!     f64 local x, local y, z   (x and y relative to the block center)
//!     f64 global x, y, z
//!     u8  semantic code (0 stem, 1 leaf, 255 unlabeled)
//! ```
//!
//! Indices refer to the prepared (confidence-filtered, voxel-subsampled)
//! cloud; all integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use serde::{Deserialize, Serialize};

use super::{Block, BlockPurpose, BlockSpec};
use crate::cloud::{Label, PointCloud};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PSBLOCKS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: BlockSpec,
    seed: u64,
    purpose: BlockPurpose,
    point_count: usize,
    block_count: usize,
    config: serde_json::Value,
}

/// Decoded archive. Slot coordinates and labels are kept as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockArchive {
    pub spec: BlockSpec,
    pub seed: u64,
    pub purpose: BlockPurpose,
    pub point_count: usize,
    pub config: serde_json::Value,
    pub blocks: Vec<Block>,
    /// Per block, per slot: (local, global, label).
    pub slots: Vec<Vec<([f64; 3], [f64; 3], Label)>>,
}

pub fn write_blocks(
    mut w: impl Write,
    cloud: &PointCloud,
    blocks: &[Block],
    spec: &BlockSpec,
    seed: u64,
    purpose: BlockPurpose,
    config: &serde_json::Value,
) -> Result<()> {
    let header = Header {
        version: VERSION,
        spec: spec.clone(),
        seed,
        purpose,
        point_count: cloud.len(),
        block_count: blocks.len(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: std::io::Error| Error::Format(format!("writing block archive: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LE>(VERSION).map_err(io)?;
    w.write_u64::<LE>(json.len() as u64).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for b in blocks {
        let center = b.center(spec);
        w.write_i64::<LE>(b.cell[0]).map_err(io)?;
        w.write_i64::<LE>(b.cell[1]).map_err(io)?;
        w.write_u32::<LE>(b.offset_id as u32).map_err(io)?;
        w.write_f64::<LE>(spec.offsets[b.offset_id]).map_err(io)?;
        w.write_f64::<LE>(center[0]).map_err(io)?;
        w.write_f64::<LE>(center[1]).map_err(io)?;
        w.write_u64::<LE>(b.members.len() as u64).map_err(io)?;
        for &m in &b.members {
            w.write_u64::<LE>(m as u64).map_err(io)?;
        }
        w.write_u64::<LE>(b.sample.len() as u64).map_err(io)?;
        let local = b.local_coordinates(cloud, spec);
        for (&i, l) in b.sample.iter().zip(&local) {
            w.write_u64::<LE>(i as u64).map_err(io)?;
            for v in l.iter().chain(&cloud.positions()[i]) {
                w.write_f64::<LE>(*v).map_err(io)?;
            }
            w.write_u8(cloud.semantic()[i].code()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_blocks(mut r: impl Read) -> Result<BlockArchive> {
    let io = |e: std::io::Error| Error::Format(format!("reading block archive: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a block archive (bad magic)".into()));
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported block archive version {version}")));
    }
    let len = r.read_u64::<LE>().map_err(io)?;
    if len > 1 << 30 {
        return Err(Error::Format("block archive header too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("block archive header: {e}")))?;
    header.spec.validate().map_err(|e| Error::Format(e.to_string()))?;

    let index = |v: u64| -> Result<usize> {
        let i = v as usize;
        if i >= header.point_count {
            return Err(Error::Format(format!("index {v} beyond {} points", header.point_count)));
        }
        Ok(i)
    };
    let mut blocks = Vec::with_capacity(header.block_count.min(1 << 16));
    let mut slots = Vec::with_capacity(blocks.capacity());
    for _ in 0..header.block_count {
        let cell = [r.read_i64::<LE>().map_err(io)?, r.read_i64::<LE>().map_err(io)?];
        let offset_id = r.read_u32::<LE>().map_err(io)? as usize;
        if offset_id >= header.spec.offsets.len() {
            return Err(Error::Format(format!("offset id {offset_id} out of range")));
        }
        for _ in 0..3 {
            r.read_f64::<LE>().map_err(io)?; // offset and center are derivable
        }
        let count = r.read_u64::<LE>().map_err(io)?;
        let members = (0..count)
            .map(|_| index(r.read_u64::<LE>().map_err(io)?))
            .collect::<Result<Vec<_>>>()?;
        let n = r.read_u64::<LE>().map_err(io)?;
        let mut sample = Vec::new();
        let mut block_slots = Vec::new();
        for _ in 0..n {
            sample.push(index(r.read_u64::<LE>().map_err(io)?)?);
            let mut v = [0.0; 6];
            r.read_f64_into::<LE>(&mut v).map_err(io)?;
            let label = Label::from_code(r.read_u8().map_err(io)?).map_err(|e| Error::Format(e.to_string()))?;
            block_slots.push(([v[0], v[1], v[2]], [v[3], v[4], v[5]], label));
        }
        blocks.push(Block {
            cell,
            offset_id,
            members,
            sample,
        });
        slots.push(block_slots);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Format("trailing bytes after block archive".into()));
    }
    Ok(BlockArchive {
        spec: header.spec,
        seed: header.seed,
        purpose: header.purpose,
        point_count: header.point_count,
        config: header.config,
        blocks,
        slots,
    })
}

pub fn save_blocks(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    blocks: &[Block],
    spec: &BlockSpec,
    seed: u64,
    purpose: BlockPurpose,
    config: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_blocks(std::io::BufWriter::new(file), cloud, blocks, spec, seed, purpose, config)
}

pub fn load_blocks(path: impl AsRef<Path>) -> Result<BlockArchive> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_blocks(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::partition_blocks;

    #[test]
    fn round_trip() {
        let pts: Vec<_> = (0..300).map(|i| [(i % 20) as f64 * 0.9, (i / 20) as f64 * 0.9, i as f64 * 0.01]).collect();
        let labels = (0..300).map(|i| if i % 3 == 0 { Label::Stem } else { Label::Leaf }).collect();
        let cloud = PointCloud::new(pts, None, None, labels, None).unwrap();
        let spec = BlockSpec {
            points_per_block: 32,
            ..BlockSpec::default()
        };
        let blocks = partition_blocks(&cloud, &spec, 5, BlockPurpose::Inference).unwrap();
        let cfg = serde_json::json!({"partition.edge": 10.0});
        let mut buf = Vec::new();
        write_blocks(&mut buf, &cloud, &blocks, &spec, 5, BlockPurpose::Inference, &cfg).unwrap();
        let back = read_blocks(buf.as_slice()).unwrap();
        assert_eq!(back.blocks, blocks);
        assert_eq!(back.config, cfg);
        assert_eq!(back.point_count, 300);
        let (local, global, label) = back.slots[0][0];
        let i = blocks[0].sample[0];
        assert_eq!(global, cloud.positions()[i]);
        assert_eq!(label, cloud.semantic()[i]);
        assert_eq!(local[2], global[2]);
        assert!(read_blocks(&buf[..buf.len() - 1]).is_err());
    }
}
