//! PLW1 weights file: a little-endian binary snapshot of the
//! architecture header plus every parameter tensor in canonical order.
//!
//! Layout:
//! `"PLW1"` magic, u32 version (1), u64 init seed, u32 in_channels,
//! u32 base_channels, u32 depth, f32 pl_offset_db, f32 pl_scale_db,
//! u32 tensor count, then per tensor: u32 ndim, u32 dims..., f32 data.
//! Tensor order matches [`ModelWeights::param_tensors`]: encoder layers
//! shallow to deep, decoder layers deep to shallow, head; weights before
//! bias. Conv weight dims are [out, in, 3, 3]; transposed-conv weight
//! dims are [in, out, 3, 3]; bias dims are [n]. Values are stored as f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::ModelWeights;
use super::{ArchSpec, NetError, Scalar};

const MAGIC: &[u8; 4] = b"PLW1";
const VERSION: u32 = 1;

/// Expected tensor shapes for an architecture, in serialization order.
fn tensor_shapes(arch: &ArchSpec) -> Vec<Vec<u32>> {
    let mut shapes = Vec::new();
    for (cin, cout) in arch.encoder_channels() {
        shapes.push(vec![cout as u32, cin as u32, 3, 3]);
        shapes.push(vec![cout as u32]);
    }
    for (cin, cout) in arch.decoder_channels() {
        shapes.push(vec![cin as u32, cout as u32, 3, 3]);
        shapes.push(vec![cout as u32]);
    }
    let head_in = arch.decoder_channels().last().expect("depth >= 2").1;
    shapes.push(vec![1, head_in as u32, 3, 3]);
    shapes.push(vec![1]);
    shapes
}

/// Serialize weights (converted to f32) to a PLW1 file.
pub fn save_weights<T: Scalar>(weights: &ModelWeights<T>, path: &Path) -> Result<(), NetError> {
    let arch = &weights.arch;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&weights.seed.to_le_bytes());
    buf.extend_from_slice(&(arch.in_channels as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.base_channels as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.depth as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.pl_offset_db as f32).to_le_bytes());
    buf.extend_from_slice(&(arch.pl_scale_db as f32).to_le_bytes());
    let tensors = weights.param_tensors();
    let shapes = tensor_shapes(arch);
    debug_assert_eq!(tensors.len(), shapes.len());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (tensor, shape) in tensors.iter().zip(&shapes) {
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        debug_assert_eq!(
            tensor.len(),
            shape.iter().product::<u32>() as usize,
            "tensor length disagrees with its declared shape"
        );
        for v in *tensor {
            buf.extend_from_slice(&(v.into_f64() as f32).to_le_bytes());
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|source| NetError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Load a PLW1 file into f32 weights, validating the header and every
/// tensor shape against the architecture it declares.
pub fn load_weights(path: &Path) -> Result<ModelWeights<f32>, NetError> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| NetError::Io {
            path: display.clone(),
            source,
        })?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &display,
    };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(cursor.fail("missing PLW1 magic"));
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(cursor.fail(&format!("unsupported version {version}")));
    }
    let seed = cursor.u64()?;
    let in_channels = cursor.u32()? as usize;
    let base_channels = cursor.u32()? as usize;
    let depth = cursor.u32()? as usize;
    let pl_offset_db = cursor.f32()? as f64;
    let pl_scale_db = cursor.f32()? as f64;
    let arch = ArchSpec {
        in_channels,
        base_channels,
        depth,
        pl_offset_db,
        pl_scale_db,
    };
    arch.validate()?;
    let shapes = tensor_shapes(&arch);
    let n_tensors = cursor.u32()? as usize;
    if n_tensors != shapes.len() {
        return Err(cursor.fail(&format!(
            "expected {} tensors for depth {depth}, found {n_tensors}",
            shapes.len()
        )));
    }
    // build a correctly-shaped container, then fill it in order
    let mut weights = ModelWeights::<f32>::init(arch, seed)?;
    {
        let mut slots = weights.param_tensors_mut();
        for (k, shape) in shapes.iter().enumerate() {
            let ndim = cursor.u32()? as usize;
            if ndim != shape.len() {
                return Err(NetError::Format {
                    path: display.clone(),
                    message: format!("tensor {k}: expected {} dims, found {ndim}", shape.len()),
                });
            }
            for (d, &expected) in shape.iter().enumerate() {
                let got = cursor.u32()?;
                if got != expected {
                    return Err(NetError::Format {
                        path: display.clone(),
                        message: format!("tensor {k} dim {d}: expected {expected}, found {got}"),
                    });
                }
            }
            let len = shape.iter().product::<u32>() as usize;
            let raw = cursor.take(len * 4)?;
            for (i, chunk) in raw.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
                if !v.is_finite() {
                    return Err(NetError::Format {
                        path: display.clone(),
                        message: format!("tensor {k} element {i} is not finite"),
                    });
                }
                slots[k][i] = v;
            }
        }
    }
    if cursor.pos != bytes.len() {
        let trailing = bytes.len() - cursor.pos;
        return Err(NetError::Format {
            path: display.clone(),
            message: format!("{trailing} trailing bytes"),
        });
    }
    Ok(weights)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: &str) -> NetError {
        NetError::Format {
            path: self.path.to_string(),
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail("file truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32, NetError> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
