use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainState};
use crate::diffcore::{AdamState, Module, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CVTCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_group<M: Module>(
    w: &mut Vec<u8>,
    name: &str,
    module: &M,
    opt: &AdamState,
) -> std::io::Result<()> {
    write_str(w, name)?;
    w.write_u64::<LE>(opt.step)?;
    let mut tensors = Vec::new();
    module.visit("", &mut |n, t| tensors.push((n.to_string(), t.clone())));
    w.write_u32::<LE>(tensors.len() as u32)?;
    for (i, (n, t)) in tensors.iter().enumerate() {
        write_str(w, n)?;
        w.write_u32::<LE>(t.rank() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LE>(d as u64)?;
        }
        for values in [t.data(), &opt.m[i], &opt.v[i]] {
            for &v in values {
                w.write_f32::<LE>(v)?;
            }
        }
    }
    Ok(())
}

/// Layout (little-endian): magic, u32 version, config JSON (u32 length +
/// bytes), 64 hex chars of its SHA-256, u64 iteration, rng (32-byte seed,
/// u64 stream, u128 word position), then the coarse, fine and cvt groups.
/// Each group holds its name, the Adam step and per parameter its name,
/// rank, u64 dims, values, first and second moments.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut w = Vec::new();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LE>(CHECKPOINT_VERSION)?;
    let json = serde_json::to_string(&state.config)?;
    write_str(&mut w, &json)?;
    w.write_all(state.config.digest().as_bytes())?;
    w.write_u64::<LE>(state.iteration)?;
    w.write_all(&state.rng.get_seed())?;
    w.write_u64::<LE>(state.rng.get_stream())?;
    w.write_u128::<LE>(state.rng.get_word_pos())?;
    write_group(&mut w, "coarse", &state.coarse, &state.opt_coarse)?;
    write_group(&mut w, "fine", &state.fine, &state.opt_fine)?;
    write_group(&mut w, "cvt", &state.cvt, &state.opt_cvt)?;
    fs::write(path, w)?;
    Ok(())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

struct Reader(Cursor<Vec<u8>>);

impl Reader {
    fn io<T>(r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| bad(format!("truncated file ({e})")))
    }

    fn u32(&mut self) -> Result<u32> {
        Self::io(self.0.read_u32::<LE>())
    }

    fn u64(&mut self) -> Result<u64> {
        Self::io(self.0.read_u64::<LE>())
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let remaining = self.0.get_ref().len() as u64 - self.0.position();
        if n as u64 > remaining {
            return Err(bad("truncated file"));
        }
        let mut buf = vec![0; n];
        Self::io(self.0.read_exact(&mut buf))?;
        Ok(buf)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|_| bad("invalid UTF-8 string"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

type Slot = (Vec<usize>, Vec<f32>, Vec<f32>, Vec<f32>);

fn read_group<M: Module>(
    r: &mut Reader,
    name: &str,
    module: &mut M,
    opt: &mut AdamState,
) -> Result<()> {
    let got = r.string()?;
    if got != name {
        return Err(bad(format!("expected group {name:?}, found {got:?}")));
    }
    opt.step = r.u64()?;
    let count = r.u32()? as usize;
    let mut slots: HashMap<String, Slot> = HashMap::new();
    for _ in 0..count {
        let pname = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(bad(format!("{name}.{pname}: implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let values = r.floats(n)?;
        let m = r.floats(n)?;
        let v = r.floats(n)?;
        slots.insert(pname, (shape, values, m, v));
    }
    let mut problem = None;
    let mut i = 0;
    module.visit_mut("", &mut |pname, t| {
        match slots.remove(pname) {
            Some((shape, values, m, v)) if shape == t.shape() => {
                *t = Tensor::new(shape, values).expect("shape checked");
                opt.m[i] = m;
                opt.v[i] = v;
            }
            Some((shape, ..)) => {
                problem.get_or_insert(format!(
                    "{name}.{pname}: stored shape {shape:?}, expected {:?}",
                    t.shape()
                ));
            }
            None => {
                problem.get_or_insert(format!("{name}.{pname}: missing"));
            }
        }
        i += 1;
    });
    if let Some(p) = problem {
        return Err(bad(p));
    }
    if let Some(extra) = slots.keys().next() {
        return Err(bad(format!("{name}.{extra}: unknown parameter")));
    }
    Ok(())
}

/// Restores a state saved by [`save_checkpoint`] bit-exactly.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut r = Reader(Cursor::new(fs::read(path)?));
    if r.bytes(8).map_err(|_| bad("file too short for magic"))? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let json = r.string()?;
    let config: TrainConfig =
        serde_json::from_str(&json).map_err(|e| bad(format!("embedded config: {e}")))?;
    let digest = String::from_utf8(r.bytes(64)?).map_err(|_| bad("bad digest"))?;
    if digest != config.digest() {
        return Err(bad("config digest mismatch"));
    }
    let mut state = TrainState::new(config)?;
    state.iteration = r.u64()?;
    let seed: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = Reader::io(r.0.read_u128::<LE>())?;
    state.rng = ChaCha8Rng::from_seed(seed);
    state.rng.set_stream(stream);
    state.rng.set_word_pos(word_pos);
    read_group(&mut r, "coarse", &mut state.coarse, &mut state.opt_coarse)?;
    read_group(&mut r, "fine", &mut state.fine, &mut state.opt_fine)?;
    read_group(&mut r, "cvt", &mut state.cvt, &mut state.opt_cvt)?;
    if r.0.position() != r.0.get_ref().len() as u64 {
        return Err(bad("trailing bytes after last group"));
    }
    Ok(state)
}
