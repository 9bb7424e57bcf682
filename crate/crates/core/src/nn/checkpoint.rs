//! Binary model checkpoints.
//!
//! Layout (all integers `u32` little-endian, all floats `f64` little-endian):
//!
//! ```text
//! magic "NTTTCKPT" | version | channels samples window stride hidden feature_dim
//! main_classes head_depth n_ssl ssl_classes[n_ssl] | dropout bn_momentum bn_eps
//! n_tensors | per tensor: rank dims[rank] values[prod(dims)]
//! ```
//!
//! Tensors are the parameters in declaration order followed by the four
//! batch-norm running-statistic buffers.

use std::io::{Read, Write};
use std::path::Path;

use super::model::{ModelConfig, ModelState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NTTTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_checkpoint(model: &ModelState, w: &mut impl Write) -> Result<()> {
    let c = model.config();
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION as usize)?;
    for v in [
        c.channels,
        c.samples,
        c.window,
        c.stride,
        c.hidden,
        c.feature_dim,
        c.main_classes,
        c.head_depth,
        c.ssl_classes.len(),
    ] {
        put_u32(w, v)?;
    }
    for &v in &c.ssl_classes {
        put_u32(w, v)?;
    }
    for v in [c.dropout, c.bn_momentum, c.bn_eps] {
        put_f64(w, v)?;
    }
    let params = model.params();
    let buffers = model.buffers();
    put_u32(w, params.len() + buffers.len())?;
    let tensors = params.iter().map(|p| p.tensor).chain(buffers.iter().map(|(_, t)| *t));
    for t in tensors {
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        for &v in t.data() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut ints = [0usize; 9];
    for v in ints.iter_mut() {
        *v = get_u32(r)?;
    }
    let ssl_classes = (0..ints[8]).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        channels: ints[0],
        samples: ints[1],
        window: ints[2],
        stride: ints[3],
        hidden: ints[4],
        feature_dim: ints[5],
        main_classes: ints[6],
        head_depth: ints[7],
        ssl_classes,
        dropout: get_f64(r)?,
        bn_momentum: get_f64(r)?,
        bn_eps: get_f64(r)?,
    };
    let mut model = ModelState::new(config, 0)?;
    let n = get_u32(r)?;
    let expected = model.params().len() + model.buffers().len();
    if n != expected {
        return Err(Error::Format(format!("checkpoint holds {n} tensors, model needs {expected}")));
    }
    let mut targets: Vec<&mut crate::tensor::Tensor> = Vec::with_capacity(n);
    let mut params = model.params_mut().into_iter().map(|p| p.tensor).collect::<Vec<_>>();
    targets.append(&mut params);
    // buffers are borrowed separately below
    for t in targets {
        read_into(r, t)?;
    }
    for t in model.buffers_mut() {
        read_into(r, t)?;
    }
    Ok(model)
}

fn read_into(r: &mut impl Read, t: &mut crate::tensor::Tensor) -> Result<()> {
    let rank = get_u32(r)?;
    let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    if dims != t.shape() {
        return Err(Error::Format(format!(
            "tensor shape {:?} in checkpoint, model expects {:?}",
            dims,
            t.shape()
        )));
    }
    for v in t.data_mut() {
        *v = get_f64(r)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            head_depth: 2,
            ..ModelConfig::default()
        };
        let mut model = ModelState::new(cfg, 17).unwrap();
        model.backbone.bn2.running_var.data_mut()[3] = 0.123456789;
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn corrupt_header_rejected() {
        let model = ModelState::new(ModelConfig::default(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
