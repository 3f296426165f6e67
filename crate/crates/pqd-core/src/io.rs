//! Versioned binary file formats, all little-endian.
//!
//! Checkpoint (`DQCKPT1`): u32 dims header (input dim, layer count,
//! per-layer out/in shapes, time embed dim, num classes) followed by all
//! parameters as f32 in declaration order (per layer weight row-major
//! then bias, then the class embedding table).
//!
//! Calibration set (`DQCALS1`): u32 record count, u32 dim, u32 num
//! steps, u8 conditional flag, length-prefixed JSON config echo, then
//! records of (u32 t, u32 condition id with `u32::MAX` meaning
//! unconditional, dim f32 values).
//!
//! Quantized model (`DQQMDL1`): length-prefixed base checkpoint path,
//! bit config, then per-layer weight channel records and optional
//! per-layer activation records of (f32 scale, 16-bit zero point).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::batch::Condition;
use crate::calib::{CalibrationConfig, CalibrationSample, CalibrationSet};
use crate::denoiser::{Denoiser, CLASS_EMBED_DIM};
use crate::error::{Error, Result};
use crate::qmodel::{BitConfig, QuantizedModel};
use crate::quant::QuantParams;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"DQCKPT1";
pub const CALIBSET_MAGIC: &[u8; 7] = b"DQCALS1";
pub const QMODEL_MAGIC: &[u8; 7] = b"DQQMDL1";

const UNCONDITIONAL_ID: u32 = u32::MAX;

fn check_magic<R: Read>(r: &mut R, expected: &[u8; 7], what: &str) -> Result<()> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(format!("{what}: file too short for magic")))?;
    if &magic != expected {
        return Err(Error::format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    Ok(())
}

pub fn save_checkpoint(model: &Denoiser, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(model.input_dim as u32)?;
    w.write_u32::<LittleEndian>(model.layers.len() as u32)?;
    for layer in &model.layers {
        w.write_u32::<LittleEndian>(layer.out_dim as u32)?;
        w.write_u32::<LittleEndian>(layer.in_dim as u32)?;
    }
    w.write_u32::<LittleEndian>(model.time_embed_dim as u32)?;
    w.write_u32::<LittleEndian>(model.num_classes)?;
    for layer in &model.layers {
        for v in layer.weight.iter().chain(&layer.bias) {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    for v in &model.class_embed {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Denoiser> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, CHECKPOINT_MAGIC, "checkpoint")?;
    let input_dim = r.read_u32::<LittleEndian>()? as usize;
    let layer_count = r.read_u32::<LittleEndian>()? as usize;
    if layer_count == 0 || layer_count > 1024 {
        return Err(Error::format(format!("implausible layer count {layer_count}")));
    }
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let out_dim = r.read_u32::<LittleEndian>()? as usize;
        let in_dim = r.read_u32::<LittleEndian>()? as usize;
        shapes.push((out_dim, in_dim));
    }
    let time_embed_dim = r.read_u32::<LittleEndian>()? as usize;
    let num_classes = r.read_u32::<LittleEndian>()?;

    use crate::denoiser::{Activation, Layer};
    let mut layers = Vec::with_capacity(layer_count);
    for (i, (out_dim, in_dim)) in shapes.iter().enumerate() {
        let mut weight = vec![0.0f64; out_dim * in_dim];
        for v in &mut weight {
            *v = r.read_f32::<LittleEndian>()? as f64;
        }
        let mut bias = vec![0.0f64; *out_dim];
        for v in &mut bias {
            *v = r.read_f32::<LittleEndian>()? as f64;
        }
        let act = if i + 1 == layer_count {
            Activation::Identity
        } else {
            Activation::Silu
        };
        layers.push(Layer {
            in_dim: *in_dim,
            out_dim: *out_dim,
            weight,
            bias,
            act,
        });
    }
    let class_dim = if num_classes > 0 { CLASS_EMBED_DIM } else { 0 };
    let mut class_embed = vec![0.0f64; num_classes as usize * class_dim];
    for v in &mut class_embed {
        *v = r.read_f32::<LittleEndian>()? as f64;
    }
    let model = Denoiser {
        input_dim,
        time_embed_dim,
        num_classes,
        class_embed,
        layers,
    };
    // dimension chain sanity
    let expected_in0 = input_dim + time_embed_dim + class_dim;
    if model.layers[0].in_dim != expected_in0
        || model.layers.last().unwrap().out_dim != input_dim
        || model.layers.windows(2).any(|w| w[0].out_dim != w[1].in_dim)
    {
        return Err(Error::format("checkpoint layer dimensions do not chain"));
    }
    if !model.layers.iter().all(|l| {
        l.weight.iter().chain(&l.bias).all(|v| v.is_finite())
    }) || !model.class_embed.iter().all(|v| v.is_finite())
    {
        return Err(Error::format("checkpoint contains non-finite parameters"));
    }
    Ok(model)
}

pub fn save_calibration_set(set: &CalibrationSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CALIBSET_MAGIC)?;
    w.write_u32::<LittleEndian>(set.samples.len() as u32)?;
    w.write_u32::<LittleEndian>(set.dim as u32)?;
    w.write_u32::<LittleEndian>(set.config.num_steps as u32)?;
    w.write_u8(set.conditional as u8)?;
    let cfg = serde_json::to_vec(&set.config)
        .map_err(|e| Error::format(format!("config echo serialization: {e}")))?;
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(&cfg)?;
    for s in &set.samples {
        w.write_u32::<LittleEndian>(s.t as u32)?;
        let cid = match s.condition {
            Condition::Unconditional => UNCONDITIONAL_ID,
            Condition::Class(c) => c,
        };
        w.write_u32::<LittleEndian>(cid)?;
        for v in &s.x {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_calibration_set(path: &Path) -> Result<CalibrationSet> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, CALIBSET_MAGIC, "calibration set")?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let num_steps = r.read_u32::<LittleEndian>()? as usize;
    let conditional = r.read_u8()? != 0;
    let cfg_len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let config: CalibrationConfig = serde_json::from_slice(&cfg_buf)
        .map_err(|e| Error::format(format!("calibration config echo: {e}")))?;
    if config.num_steps != num_steps {
        return Err(Error::format("calibration header/config num_steps mismatch"));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let t = r.read_u32::<LittleEndian>()? as usize;
        let cid = r.read_u32::<LittleEndian>()?;
        if t >= num_steps {
            return Err(Error::format(format!("record t {t} outside [0, {num_steps})")));
        }
        let mut x = vec![0.0f64; dim];
        for v in &mut x {
            *v = r.read_f32::<LittleEndian>()? as f64;
        }
        let condition = if cid == UNCONDITIONAL_ID {
            Condition::Unconditional
        } else {
            Condition::Class(cid)
        };
        samples.push(CalibrationSample { x, t, condition });
    }
    let set = CalibrationSet {
        samples,
        config,
        dim,
        conditional,
    };
    set.validate_pairing()?;
    Ok(set)
}

fn write_qp<W: Write>(w: &mut W, qp: &QuantParams) -> Result<()> {
    w.write_f32::<LittleEndian>(qp.scale as f32)?;
    // 16-bit zero point, reinterpreted by the signedness in the header
    if qp.signed {
        w.write_i16::<LittleEndian>(qp.zero_point as i16)?;
    } else {
        w.write_u16::<LittleEndian>(qp.zero_point as u16)?;
    }
    Ok(())
}

fn read_qp<R: Read>(r: &mut R, bits: u8, signed: bool) -> Result<QuantParams> {
    let scale = r.read_f32::<LittleEndian>()? as f64;
    let zp = if signed {
        r.read_i16::<LittleEndian>()? as i32
    } else {
        r.read_u16::<LittleEndian>()? as i32
    };
    QuantParams::new(scale, zp, bits, signed)
        .map_err(|e| Error::format(format!("quant params record: {e}")))
}

/// Saves the quantization parameters plus a reference to the base
/// checkpoint (stored as given; relative paths resolve against the
/// quantized file's directory on load).
pub fn save_quantized_model(
    qmodel: &QuantizedModel,
    base_checkpoint: &str,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(QMODEL_MAGIC)?;
    let pb = base_checkpoint.as_bytes();
    w.write_u32::<LittleEndian>(pb.len() as u32)?;
    w.write_all(pb)?;
    w.write_u8(qmodel.bit_config.weight_bits)?;
    w.write_u8(qmodel.bit_config.act_bits)?;
    w.write_u32::<LittleEndian>(qmodel.base.layers.len() as u32)?;
    if qmodel.bit_config.weight_bits != 32 {
        for params in &qmodel.weight_params {
            w.write_u32::<LittleEndian>(params.len() as u32)?;
            for qp in params {
                write_qp(&mut w, qp)?;
            }
        }
    }
    if qmodel.bit_config.act_bits != 32 {
        for qp in &qmodel.act_params {
            let qp = qp
                .as_ref()
                .ok_or_else(|| Error::format("act_bits < 32 but a layer has no act params"))?;
            write_qp(&mut w, qp)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a quantized model; the base checkpoint must be reachable.
pub fn load_quantized_model(path: &Path) -> Result<QuantizedModel> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, QMODEL_MAGIC, "quantized model")?;
    let plen = r.read_u32::<LittleEndian>()? as usize;
    let mut pbuf = vec![0u8; plen];
    r.read_exact(&mut pbuf)?;
    let base_ref = String::from_utf8(pbuf)
        .map_err(|_| Error::format("base checkpoint path is not UTF-8"))?;
    let weight_bits = r.read_u8()?;
    let act_bits = r.read_u8()?;
    let bit_config = BitConfig::new(weight_bits, act_bits)
        .map_err(|e| Error::format(format!("bit config: {e}")))?;
    let layer_count = r.read_u32::<LittleEndian>()? as usize;

    let base_path = {
        let p = Path::new(&base_ref);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let base = load_checkpoint(&base_path)?;
    if base.layers.len() != layer_count {
        return Err(Error::format(format!(
            "quantized file expects {layer_count} layers, checkpoint has {}",
            base.layers.len()
        )));
    }

    let mut weight_params = Vec::new();
    if weight_bits != 32 {
        for layer in &base.layers {
            let channels = r.read_u32::<LittleEndian>()? as usize;
            if channels != layer.out_dim {
                return Err(Error::format("weight channel count mismatch"));
            }
            let mut params = Vec::with_capacity(channels);
            for _ in 0..channels {
                params.push(read_qp(&mut r, weight_bits, true)?);
            }
            weight_params.push(params);
        }
    }
    let act_params: Vec<Option<QuantParams>> = if act_bits != 32 {
        (0..layer_count)
            .map(|_| read_qp(&mut r, act_bits, false).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; layer_count]
    };
    QuantizedModel::from_parts(base, weight_params, act_params, bit_config)
}
