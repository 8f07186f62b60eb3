//! Model file format: magic "ENET", u32 version, arch byte, u32 layer
//! count, per-layer headers, little-endian f32 weights in declaration
//! order, then a u64 CRC over the payload.

use super::layers::{CsMode, Layer};
use super::model::{ArchId, NetworkModel};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use std::io::{Read, Write};
use std::path::Path;

const ENET_MAGIC: &[u8; 4] = b"ENET";
const ENET_VERSION: u32 = 1;

// CRC-64/XZ: reflected, poly 0x42F0E1EBA9EA3693, init/xorout all-ones.
pub fn crc64(data: &[u8]) -> u64 {
    const POLY: u64 = 0xC96C_5795_D787_0F42; // reflected form
    static TABLE: std::sync::OnceLock<[u64; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u64; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let mut crc = i as u64;
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ POLY } else { crc >> 1 };
            }
            *entry = crc;
        }
        t
    });
    let mut crc = !0u64;
    for &b in data {
        crc = table[((crc ^ b as u64) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn arch_byte(arch: ArchId) -> u8 {
    match arch {
        ArchId::Dnn => 0,
        ArchId::Cnn => 1,
        ArchId::Lstm => 2,
        ArchId::DnnCs => 3,
        ArchId::DnnCsVt => 4,
    }
}

fn arch_from_byte(b: u8) -> Result<ArchId> {
    Ok(match b {
        0 => ArchId::Dnn,
        1 => ArchId::Cnn,
        2 => ArchId::Lstm,
        3 => ArchId::DnnCs,
        4 => ArchId::DnnCsVt,
        other => return Err(Error::Format(format!("unknown arch id {other}"))),
    })
}

fn layer_header(layer: &Layer) -> [u8; 22] {
    let mut h = [0u8; 22];
    let (kind, flags, in_size, out_size, kernel, padding, cs_k): (u8, u8, u32, u32, u32, u32, u32) =
        match layer {
            Layer::Dense { w, .. } => (0, 0, w.ncols() as u32, w.nrows() as u32, 0, 0, 0),
            Layer::Conv1d {
                w,
                kernel,
                padding,
                ..
            } => (
                1,
                0,
                w[0].ncols() as u32,
                w[0].nrows() as u32,
                *kernel as u32,
                *padding as u32,
                0,
            ),
            Layer::Lstm { w_ih, w_hh, b_hh, .. } => (
                2,
                b_hh.is_some() as u8,
                w_ih.ncols() as u32,
                w_hh.ncols() as u32,
                0,
                0,
                0,
            ),
            Layer::Relu => (3, 0, 0, 0, 0, 0, 0),
            Layer::CsSelect { k, mode } => (
                4,
                (*mode == CsMode::Vanilla) as u8,
                0,
                0,
                0,
                0,
                *k as u32,
            ),
        };
    h[0] = kind;
    h[1] = flags;
    h[2..6].copy_from_slice(&in_size.to_le_bytes());
    h[6..10].copy_from_slice(&out_size.to_le_bytes());
    h[10..14].copy_from_slice(&kernel.to_le_bytes());
    h[14..18].copy_from_slice(&padding.to_le_bytes());
    h[18..22].copy_from_slice(&cs_k.to_le_bytes());
    h
}

pub fn save_model<W: Write>(w: &mut W, model: &NetworkModel) -> std::io::Result<()> {
    let mut payload = Vec::new();
    payload.extend_from_slice(ENET_MAGIC);
    payload.extend_from_slice(&ENET_VERSION.to_le_bytes());
    payload.push(arch_byte(model.arch));
    payload.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        payload.extend_from_slice(&layer_header(layer));
    }
    for layer in &model.layers {
        layer.for_each_param(&mut |v| {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        });
    }
    let crc = crc64(&payload);
    w.write_all(&payload)?;
    w.write_all(&crc.to_le_bytes())
}

pub fn load_model<R: Read>(r: &mut R) -> Result<NetworkModel> {
    let mut bytes = Vec::new();
    r.read_exact(&mut [0u8; 0])
        .map_err(|_| Error::Truncated("model file".into()))?;
    r.read_to_end(&mut bytes)
        .map_err(|_| Error::Truncated("model file".into()))?;
    if bytes.len() < 21 {
        return Err(Error::Truncated("model file header".into()));
    }
    if &bytes[0..4] != ENET_MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ENET_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 8);
    let stored_crc = u64::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc64(payload) != stored_crc {
        return Err(Error::Format("model CRC mismatch".into()));
    }
    let arch = arch_from_byte(payload[8])?;
    let layer_count = u32::from_le_bytes(payload[9..13].try_into().unwrap()) as usize;
    let headers_end = 13 + layer_count * 22;
    if payload.len() < headers_end {
        return Err(Error::Truncated("model layer headers".into()));
    }
    let mut cursor = headers_end;
    let read_f32s = |payload: &[u8], cursor: &mut usize, n: usize| -> Result<Vec<f64>> {
        let need = n * 4;
        if payload.len() < *cursor + need {
            return Err(Error::Truncated("model weights".into()));
        }
        let out = payload[*cursor..*cursor + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        *cursor += need;
        Ok(out)
    };

    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let h = &payload[13 + i * 22..13 + (i + 1) * 22];
        let kind = h[0];
        let flags = h[1];
        let in_size = u32::from_le_bytes(h[2..6].try_into().unwrap()) as usize;
        let out_size = u32::from_le_bytes(h[6..10].try_into().unwrap()) as usize;
        let kernel = u32::from_le_bytes(h[10..14].try_into().unwrap()) as usize;
        let padding = u32::from_le_bytes(h[14..18].try_into().unwrap()) as usize;
        let cs_k = u32::from_le_bytes(h[18..22].try_into().unwrap()) as usize;
        let layer = match kind {
            0 => {
                let wv = read_f32s(payload, &mut cursor, out_size * in_size)?;
                let bv = read_f32s(payload, &mut cursor, out_size)?;
                Layer::Dense {
                    w: Array2::from_shape_vec((out_size, in_size), wv).unwrap(),
                    b: Array1::from_vec(bv),
                }
            }
            1 => {
                let mut w = Vec::with_capacity(kernel);
                for _ in 0..kernel {
                    let wv = read_f32s(payload, &mut cursor, out_size * in_size)?;
                    w.push(Array2::from_shape_vec((out_size, in_size), wv).unwrap());
                }
                let bv = read_f32s(payload, &mut cursor, out_size)?;
                Layer::Conv1d {
                    w,
                    b: Array1::from_vec(bv),
                    kernel,
                    padding,
                }
            }
            2 => {
                let h_size = out_size;
                let w_ih = read_f32s(payload, &mut cursor, 4 * h_size * in_size)?;
                let w_hh = read_f32s(payload, &mut cursor, 4 * h_size * h_size)?;
                let b_ih = read_f32s(payload, &mut cursor, 4 * h_size)?;
                let b_hh = if flags & 1 != 0 {
                    Some(Array1::from_vec(read_f32s(payload, &mut cursor, 4 * h_size)?))
                } else {
                    None
                };
                Layer::Lstm {
                    w_ih: Array2::from_shape_vec((4 * h_size, in_size), w_ih).unwrap(),
                    w_hh: Array2::from_shape_vec((4 * h_size, h_size), w_hh).unwrap(),
                    b_ih: Array1::from_vec(b_ih),
                    b_hh,
                }
            }
            3 => Layer::Relu,
            4 => Layer::CsSelect {
                k: cs_k,
                mode: if flags & 1 != 0 {
                    CsMode::Vanilla
                } else {
                    CsMode::Custom
                },
            },
            other => return Err(Error::Format(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    if cursor != payload.len() {
        return Err(Error::Format("trailing bytes after model weights".into()));
    }
    Ok(NetworkModel { arch, layers })
}

pub fn save_model_file(path: &Path, model: &NetworkModel) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    save_model(&mut f, model).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model_file(path: &Path) -> Result<NetworkModel> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_model(&mut f)
}
