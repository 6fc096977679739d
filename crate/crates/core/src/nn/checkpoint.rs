//! Versioned binary checkpoint format for network parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "SONOCKPT"
//! version u32      1
//! nlayers u32
//! per layer:
//!   kind  u8       0 = conv, 1 = batchnorm, 2 = relu
//!   conv:          in u32, out u32, kernel u32, stride u32
//!   batchnorm:     eps f64, momentum f64
//! per layer, in layer order, raw f32 little-endian blocks:
//!   conv:          weights (out*in*k*k), bias (out)
//!   batchnorm:     gamma, beta, running_mean, running_var (channels each)
//! ```
//!
//! Round-trips are bit-exact: parameters are stored as raw IEEE-754 bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::network::{LayerSpec, Network};

const MAGIC: &[u8; 8] = b"SONOCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(net, &mut w).map_err(|e| Error::io(path, e))
}

fn write_checkpoint(net: &Network<f32>, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.specs().len() as u32).to_le_bytes())?;
    for spec in net.specs() {
        match *spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                w.write_all(&[0u8])?;
                for v in [in_channels, out_channels, kernel, stride] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
            }
            LayerSpec::BatchNorm { eps, momentum } => {
                w.write_all(&[1u8])?;
                w.write_all(&eps.to_le_bytes())?;
                w.write_all(&momentum.to_le_bytes())?;
            }
            LayerSpec::Relu => w.write_all(&[2u8])?,
        }
    }
    // Parameters: param_slices() yields (weights, bias) / (gamma, beta)
    // in layer order; batchnorm running stats follow their layer's params.
    let params = net.param_slices();
    let bn_states = net.bn_state();
    let mut param_idx = 0;
    let mut bn_idx = 0;
    for spec in net.specs() {
        match spec {
            LayerSpec::Conv2d { .. } => {
                write_f32s(w, params[param_idx])?;
                write_f32s(w, params[param_idx + 1])?;
                param_idx += 2;
            }
            LayerSpec::BatchNorm { .. } => {
                write_f32s(w, params[param_idx])?;
                write_f32s(w, params[param_idx + 1])?;
                param_idx += 2;
                let (rm, rv) = bn_states[bn_idx];
                write_f32s(w, rm)?;
                write_f32s(w, rv)?;
                bn_idx += 1;
            }
            LayerSpec::Relu => {}
        }
    }
    w.flush()
}

fn write_f32s(w: &mut impl Write, vals: &[f32]) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_checkpoint(&mut r).map_err(|e| match e {
        ReadError::Io(io) => Error::io(path, io),
        ReadError::Format(msg) => Error::data(format!("checkpoint {}: {msg}", path.display())),
        ReadError::Build(err) => err,
    })
}

enum ReadError {
    Io(std::io::Error),
    Format(String),
    Build(Error),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn read_checkpoint(r: &mut impl Read) -> std::result::Result<Network<f32>, ReadError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ReadError::Format("bad magic string".to_string()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(ReadError::Format(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let nlayers = read_u32(r)? as usize;
    if nlayers > 10_000 {
        return Err(ReadError::Format(format!("implausible layer count {nlayers}")));
    }
    let mut specs = Vec::with_capacity(nlayers);
    for i in 0..nlayers {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        match kind[0] {
            0 => {
                let in_channels = read_u32(r)? as usize;
                let out_channels = read_u32(r)? as usize;
                let kernel = read_u32(r)? as usize;
                let stride = read_u32(r)? as usize;
                specs.push(LayerSpec::Conv2d { in_channels, out_channels, kernel, stride });
            }
            1 => {
                let eps = read_f64(r)?;
                let momentum = read_f64(r)?;
                specs.push(LayerSpec::BatchNorm { eps, momentum });
            }
            2 => specs.push(LayerSpec::Relu),
            k => return Err(ReadError::Format(format!("unknown layer kind {k} at layer {i}"))),
        }
    }
    let mut net = Network::<f32>::new(specs.clone()).map_err(ReadError::Build)?;

    // Read the blocks in file order into temporaries, then install them.
    let mut param_blocks: Vec<Vec<f32>> = Vec::new();
    let mut bn_stats: Vec<(Vec<f32>, Vec<f32>)> = Vec::new();
    {
        let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        let bn_sizes: Vec<usize> = net.bn_state().iter().map(|(rm, _)| rm.len()).collect();
        let mut param_idx = 0;
        let mut bn_idx = 0;
        for spec in &specs {
            match spec {
                LayerSpec::Conv2d { .. } => {
                    param_blocks.push(read_f32_block(r, sizes[param_idx])?);
                    param_blocks.push(read_f32_block(r, sizes[param_idx + 1])?);
                    param_idx += 2;
                }
                LayerSpec::BatchNorm { .. } => {
                    param_blocks.push(read_f32_block(r, sizes[param_idx])?);
                    param_blocks.push(read_f32_block(r, sizes[param_idx + 1])?);
                    param_idx += 2;
                    let c = bn_sizes[bn_idx];
                    let rm = read_f32_block(r, c)?;
                    let rv = read_f32_block(r, c)?;
                    bn_stats.push((rm, rv));
                    bn_idx += 1;
                }
                LayerSpec::Relu => {}
            }
        }
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(ReadError::Format("trailing bytes after parameter blocks".to_string())),
        Err(e) => return Err(ReadError::Io(e)),
    }

    for (dst, src) in net.param_slices_mut().iter_mut().zip(&param_blocks) {
        dst.copy_from_slice(src);
    }
    for ((rm_dst, rv_dst), (rm, rv)) in net.bn_state_mut().into_iter().zip(&bn_stats) {
        rm_dst.copy_from_slice(rm);
        rv_dst.copy_from_slice(rv);
    }
    Ok(net)
}

fn read_f32_block(r: &mut impl Read, len: usize) -> std::io::Result<Vec<f32>> {
    let mut out = vec![0.0f32; len];
    read_f32s_into(r, &mut out)?;
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f32s_into(r: &mut impl Read, out: &mut [f32]) -> std::io::Result<()> {
    let mut buf = [0u8; 4];
    for v in out {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::default_profile;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net = Network::<f32>::new(default_profile()).unwrap();
        net.init_kaiming(99);
        // Perturb batchnorm state so the round trip covers it.
        for (rm, rv) in net.bn_state_mut() {
            for (i, v) in rm.iter_mut().enumerate() {
                *v = 0.01 * i as f32 - 0.3;
            }
            for (i, v) in rv.iter_mut().enumerate() {
                *v = 1.0 + 0.05 * i as f32;
            }
        }
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.specs(), net.specs());
        for (a, b) in loaded.param_slices().iter().zip(net.param_slices()) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        for ((arm, arv), (brm, brv)) in loaded.bn_state().iter().zip(net.bn_state()) {
            assert_eq!(
                arm.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                brm.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(
                arv.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                brv.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        // Byte-identical when saved again.
        let path2 = dir.path().join("net2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net = Network::<f32>::new(default_profile()).unwrap();
        net.init_kaiming(1);
        save_checkpoint(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        match load_checkpoint(&path) {
            Err(err) => assert!(err.to_string().contains("magic")),
            Ok(_) => panic!("bad magic accepted"),
        }
    }
}
