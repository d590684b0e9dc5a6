//! Model checkpoint file: magic `TAFM`, a config echo, every parameter
//! tensor as little-endian f32 with a shape header, and a CRC32 trailer
//! over all preceding bytes.

use super::{ModelConfig, ModelParams};
use crate::error::{Result, TafError};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TAFM";

struct NamedTensor<'a> {
    name: String,
    dims: Vec<u32>,
    data: &'a [f32],
}

fn tensor_list<'a>(params: &'a ModelParams<f32>, config: &ModelConfig) -> Vec<NamedTensor<'a>> {
    let mut out = Vec::new();
    for (i, u) in params.units.iter().enumerate() {
        out.push(NamedTensor {
            name: format!("conv{i}/w"),
            dims: vec![u.out_c as u32, u.in_c as u32, 3, 3],
            data: &u.weight,
        });
        for (suffix, data) in [
            ("bn_gamma", &u.bn_gamma),
            ("bn_beta", &u.bn_beta),
            ("bn_run_mean", &u.run_mean),
            ("bn_run_var", &u.run_var),
        ] {
            out.push(NamedTensor {
                name: format!("conv{i}/{suffix}"),
                dims: vec![u.out_c as u32],
                data,
            });
        }
    }
    out.push(NamedTensor {
        name: "dense/w".into(),
        dims: vec![config.feature_dim() as u32, config.num_classes as u32],
        data: &params.dense_w,
    });
    out.push(NamedTensor {
        name: "dense/b".into(),
        dims: vec![config.num_classes as u32],
        data: &params.dense_b,
    });
    out
}

pub fn write_checkpoint(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        config.blocks,
        config.convs_per_block,
        config.initial_filters,
        config.num_classes,
        config.input_channels,
        config.input_height,
        config.input_width,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&config.dropout_p.to_le_bytes());
    buf.extend_from_slice(&config.seed.to_le_bytes());
    let tensors = tensor_list(params, config);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        let expect: usize = t.dims.iter().map(|&d| d as usize).product();
        assert_eq!(expect, t.data.len(), "tensor {} shape mismatch", t.name);
        for &v in t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut f = std::fs::File::create(path).map_err(|e| TafError::io(path, e))?;
    f.write_all(&buf).map_err(|e| TafError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelParams<f32>, ModelConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| TafError::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|msg| TafError::Format(format!("{}: {msg}", path.display())))
}

fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<(ModelParams<f32>, ModelConfig), String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("bad magic, expected TAFM".into());
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(format!(
            "CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"
        ));
    }
    let mut pos = 4usize;
    let mut next_u32 = |pos: &mut usize| -> std::result::Result<u32, String> {
        let end = *pos + 4;
        if end > body.len() {
            return Err("truncated checkpoint".into());
        }
        let v = u32::from_le_bytes(body[*pos..end].try_into().unwrap());
        *pos = end;
        Ok(v)
    };
    let blocks = next_u32(&mut pos)? as usize;
    let convs_per_block = next_u32(&mut pos)? as usize;
    let initial_filters = next_u32(&mut pos)? as usize;
    let num_classes = next_u32(&mut pos)? as usize;
    let input_channels = next_u32(&mut pos)? as usize;
    let input_height = next_u32(&mut pos)? as usize;
    let input_width = next_u32(&mut pos)? as usize;
    if pos + 16 > body.len() {
        return Err("truncated checkpoint".into());
    }
    let dropout_p = f64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
    pos += 8;
    let seed = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
    pos += 8;
    let config = ModelConfig {
        blocks,
        convs_per_block,
        initial_filters,
        dropout_p,
        num_classes,
        input_channels,
        input_height,
        input_width,
        seed,
    };

    let count = next_u32(&mut pos)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = next_u32(&mut pos)? as usize;
        if pos + name_len > body.len() {
            return Err("truncated tensor name".into());
        }
        let name = String::from_utf8(body[pos..pos + name_len].to_vec())
            .map_err(|e| e.to_string())?;
        pos += name_len;
        let ndim = next_u32(&mut pos)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(next_u32(&mut pos)? as usize);
        }
        let len: usize = dims.iter().product();
        if pos + 4 * len > body.len() {
            return Err(format!("truncated tensor data for {name}"));
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            data.push(f32::from_le_bytes(
                body[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap(),
            ));
        }
        pos += 4 * len;
        tensors.push((name, data));
    }
    if pos != body.len() {
        return Err("trailing bytes before CRC".into());
    }

    // rebuild in declaration order
    let mut it = tensors.into_iter();
    let mut take = |expect: &str| -> std::result::Result<Vec<f32>, String> {
        let (name, data) = it.next().ok_or("missing tensor")?;
        if name != expect {
            return Err(format!("expected tensor {expect}, found {name}"));
        }
        Ok(data)
    };
    let mut units = Vec::new();
    for (i, (in_c, out_c, stride)) in config.conv_specs().into_iter().enumerate() {
        let weight = take(&format!("conv{i}/w"))?;
        if weight.len() != out_c * in_c * 9 {
            return Err(format!("conv{i}/w has wrong size"));
        }
        units.push(super::ConvUnit {
            in_c,
            out_c,
            stride,
            weight,
            bn_gamma: take(&format!("conv{i}/bn_gamma"))?,
            bn_beta: take(&format!("conv{i}/bn_beta"))?,
            run_mean: take(&format!("conv{i}/bn_run_mean"))?,
            run_var: take(&format!("conv{i}/bn_run_var"))?,
        });
    }
    let dense_w = take("dense/w")?;
    let dense_b = take("dense/b")?;
    if it.next().is_some() {
        return Err("unexpected extra tensors".into());
    }
    Ok((
        ModelParams {
            units,
            dense_w,
            dense_b,
        },
        config,
    ))
}
