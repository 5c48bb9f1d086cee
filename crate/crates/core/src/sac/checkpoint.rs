//! Flat binary weight files.
//!
//! Layout (little endian): magic `CFNW`, version `u32`, layer count `u32`,
//! then per layer: rank `u32`, dims `u32 × rank`, weights `f32 × Π dims`
//! (row-major), biases `f32 × dims[0]`. Layers appear in the order of
//! [`Networks::layers`].

use super::nn::{Conv2d, Dense};
use super::networks::{Encoder, Layer, Networks, ACTIONS};
use super::observation::{CHANNELS, SCALARS};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"CFNW";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(nets: &Networks, mut w: W) -> Result<()> {
    let layers = nets.layers();
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, layers.len() as u32)?;
    for l in layers {
        let (dims, wt, b): (Vec<usize>, &[f64], &[f64]) = match l {
            Layer::Conv(c) => (vec![c.out_c, c.in_c, c.k, c.k], &c.w, &c.b),
            Layer::Dense(d) => (vec![d.n_out, d.n_in], &d.w, &d.b),
        };
        put_u32(&mut w, dims.len() as u32)?;
        for d in dims {
            put_u32(&mut w, d as u32)?;
        }
        put_f32s(&mut w, wt)?;
        put_f32s(&mut w, b)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 4];
        self.inner
            .read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

enum Raw {
    Conv(Conv2d),
    Dense(Dense),
}

fn read_layer<R: Read>(r: &mut Reader<R>) -> Result<Raw> {
    let rank = r.u32()?;
    if rank != 2 && rank != 4 {
        return Err(Error::Checkpoint(format!("unsupported layer rank {rank}")));
    }
    let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
        return Err(Error::Checkpoint(format!("implausible layer shape {dims:?}")));
    }
    let w = r.f32s(dims.iter().product())?;
    let b = r.f32s(dims[0])?;
    Ok(if rank == 4 {
        if dims[2] != dims[3] {
            return Err(Error::Checkpoint(format!("non-square kernel {dims:?}")));
        }
        Raw::Conv(Conv2d {
            out_c: dims[0],
            in_c: dims[1],
            k: dims[2],
            stride: 2,
            pad: dims[2] / 2,
            w,
            b,
        })
    } else {
        Raw::Dense(Dense {
            n_out: dims[0],
            n_in: dims[1],
            w,
            b,
        })
    })
}

fn dense(raw: Option<Raw>, what: &str) -> Result<Dense> {
    match raw {
        Some(Raw::Dense(d)) => Ok(d),
        _ => Err(Error::Checkpoint(format!("expected dense layer for {what}"))),
    }
}

fn encoder(layers: &mut impl Iterator<Item = Raw>, count: usize) -> Result<Encoder> {
    let mut convs = vec![];
    let mut dense_layers = vec![];
    for _ in 0..count {
        match layers.next() {
            Some(Raw::Conv(c)) if dense_layers.is_empty() => convs.push(c),
            Some(Raw::Dense(d)) => dense_layers.push(d),
            _ => return Err(Error::Checkpoint("convolution after dense layer".into())),
        }
    }
    let first = dense_layers
        .first()
        .ok_or_else(|| Error::Checkpoint("encoder without dense layers".into()))?;
    let (c, mut chain) = match convs.last() {
        Some(l) => (l.out_c, convs.len()),
        None => (CHANNELS, 0),
    };
    let area = first
        .n_in
        .checked_sub(SCALARS)
        .filter(|a| a % c == 0)
        .ok_or_else(|| Error::Checkpoint("dense input width does not match convolutions".into()))?
        / c;
    let m = (area as f64).sqrt().round() as usize;
    if m * m != area {
        return Err(Error::Checkpoint("non-square feature map".into()));
    }
    let mut grid_size = m;
    while chain > 0 {
        grid_size *= 2;
        chain -= 1;
    }
    let mut expect = CHANNELS;
    for l in &convs {
        if l.in_c != expect {
            return Err(Error::Checkpoint("convolution channel mismatch".into()));
        }
        expect = l.out_c;
    }
    for w in dense_layers.windows(2) {
        if w[1].n_in != w[0].n_out {
            return Err(Error::Checkpoint("dense width mismatch".into()));
        }
    }
    Ok(Encoder {
        grid_size,
        convs,
        dense: dense_layers,
    })
}

pub fn load_checkpoint<R: Read>(input: R) -> Result<Networks> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 4];
    r.inner
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    if count < 6 || (count - 4) % 2 != 0 {
        return Err(Error::Checkpoint(format!("unexpected layer count {count}")));
    }
    let raw: Vec<Raw> = (0..count).map(|_| read_layer(&mut r)).collect::<Result<_>>()?;
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let per_encoder = (count - 4) / 2;
    let mut it = raw.into_iter();
    let enc = encoder(&mut it, per_encoder)?;
    let v = dense(it.next(), "value head")?;
    let q = dense(it.next(), "Q head")?;
    let pi = dense(it.next(), "policy head")?;
    let target_encoder = encoder(&mut it, per_encoder)?;
    let target_v = dense(it.next(), "target value head")?;
    let f = enc.feature_dim();
    let heads_ok = v.n_in == f
        && v.n_out == 1
        && q.n_in == f
        && q.n_out == ACTIONS
        && pi.n_in == f
        && pi.n_out == ACTIONS
        && target_v.n_in == target_encoder.feature_dim()
        && target_v.n_out == 1;
    if !heads_ok {
        return Err(Error::Checkpoint("head shapes do not match the encoder".into()));
    }
    Ok(Networks {
        encoder: enc,
        v,
        q,
        pi,
        target_encoder,
        target_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::networks::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nets = Networks::new(&NetConfig::default(), &mut rng);
        let mut a = vec![];
        save_checkpoint(&nets, &mut a).unwrap();
        let loaded = load_checkpoint(a.as_slice()).unwrap();
        let mut b = vec![];
        save_checkpoint(&loaded, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(loaded.encoder.grid_size, 32);
        assert_eq!(&a[..4], b"CFNW");
        assert_eq!(u32::from_le_bytes([a[8], a[9], a[10], a[11]]), 14);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let nets = Networks::new(&NetConfig { grid_size: 8, filters: vec![2], hidden: vec![3] }, &mut rng);
        let mut a = vec![];
        save_checkpoint(&nets, &mut a).unwrap();
        assert!(load_checkpoint(&a[..a.len() - 1]).is_err());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(load_checkpoint(bad.as_slice()).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(load_checkpoint(extra.as_slice()).is_err());
        let mut v2 = a;
        v2[4] = 2;
        assert!(matches!(load_checkpoint(v2.as_slice()), Err(Error::Checkpoint(m)) if m.contains("version")));
    }
}
