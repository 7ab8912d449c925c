//! Self-describing binary tensor container (`.fwt`).
//!
//! Layout: magic `FWT1`, u32 tensor count, then per tensor:
//! u32 name length, utf-8 name, u8 rank, u32 dims..., f32 little-endian data.

use super::Graph;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FWT1";

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a weight container (bad magic)")]
    BadMagic,
    #[error("container does not match the model: {0}")]
    Mismatch(String),
}

pub fn save(graph: &Graph, path: &Path) -> Result<(), WeightsError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let count: u32 = graph.nodes.iter().map(|n| n.params.len() as u32).sum();
    w.write_all(&count.to_le_bytes())?;
    for (idx, node) in graph.nodes.iter().enumerate() {
        for p in &node.params {
            let name = format!("{}_{}.{}", node.name, idx, p.name);
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[p.data.shape.len() as u8])?;
            for &d in &p.data.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &p.data.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(graph: &mut Graph, path: &Path) -> Result<(), WeightsError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let count = read_u32(&mut r)? as usize;
    let mut cursor = 0usize; // (node, param) pairs are written in order
    let mut flat: Vec<(usize, usize)> = Vec::new();
    for (ni, node) in graph.nodes.iter().enumerate() {
        for pi in 0..node.params.len() {
            flat.push((ni, pi));
        }
    }
    if count != flat.len() {
        return Err(WeightsError::Mismatch(format!(
            "container has {count} tensors, model has {}",
            flat.len()
        )));
    }
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let (ni, pi) = flat[cursor];
        cursor += 1;
        let param = &mut graph.nodes[ni].params[pi];
        if param.data.shape != shape {
            return Err(WeightsError::Mismatch(format!(
                "tensor {} shape {:?} != expected {:?}",
                String::from_utf8_lossy(&name),
                shape,
                param.data.shape
            )));
        }
        let mut buf = vec![0u8; param.data.len() * 4];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            param.data.data[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
