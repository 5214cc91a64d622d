//! Darknet weight-file import/export.
//!
//! Layout (all little-endian):
//! - header: `i32 major, i32 minor, i32 revision`, then the image counter
//!   `seen` as `i64` when `major*10 + minor >= 2`, else `i32`;
//! - per conv layer, in network order: `bias[out]`, and when the layer has
//!   batch norm: `scale[out], rolling_mean[out], rolling_var[out]`; then
//!   `weights[out*in*k*k]` in `(out, in, ky, kx)` order; all `f32`.

use super::{LayerSpec, QNetModel, QnetError};

/// Version fields beyond this are treated as garbage rather than a format
/// revision we silently misread.
const MAX_SANE_VERSION: i32 = 99;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], QnetError> {
        if self.pos + n > self.bytes.len() {
            return Err(QnetError::Truncated(format!(
                "needed {n} bytes for {what}, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn i32(&mut self, what: &str) -> Result<i32, QnetError> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i64(&mut self, what: &str) -> Result<i64, QnetError> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>, QnetError> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

/// Parses a Darknet weight stream into the model's fp parameters. The byte
/// count must match the model exactly.
pub fn load_darknet_weights(model: &mut QNetModel, bytes: &[u8]) -> Result<(), QnetError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let major = cur.i32("header major")?;
    let minor = cur.i32("header minor")?;
    let revision = cur.i32("header revision")?;
    if !(0..=MAX_SANE_VERSION).contains(&major) || !(0..=MAX_SANE_VERSION).contains(&minor) {
        return Err(QnetError::BadMagic(format!(
            "implausible version {major}.{minor}.{revision}"
        )));
    }
    let seen = if major * 10 + minor >= 2 {
        cur.i64("header seen")? as u64
    } else {
        cur.i32("header seen")? as u64
    };

    let mut loaded: Vec<(usize, super::ConvParams)> = Vec::new();
    for (idx, layer) in model.layers.iter().enumerate() {
        let LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            batch_norm,
            ..
        } = *layer
        else {
            continue;
        };
        let what = format!("layer {idx}");
        let bias = cur.f32_vec(out_ch, &what)?;
        let bn = if batch_norm {
            Some(super::BnStats {
                scale: cur.f32_vec(out_ch, &what)?,
                mean: cur.f32_vec(out_ch, &what)?,
                var: cur.f32_vec(out_ch, &what)?,
            })
        } else {
            None
        };
        let raw = cur.f32_vec(out_ch * in_ch * kernel * kernel, &what)?;
        // file order (out, in, ky, kx) -> internal [ky, kx, in, out]
        let mut weights = crate::tensor::DenseTensor::zeros(
            crate::tensor::Shape::new(vec![kernel, kernel, in_ch, out_ch]).expect("positive"),
        );
        {
            let w = weights.as_mut_slice();
            for o in 0..out_ch {
                for i in 0..in_ch {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            w[((ky * kernel + kx) * in_ch + i) * out_ch + o] =
                                raw[((o * in_ch + i) * kernel + ky) * kernel + kx];
                        }
                    }
                }
            }
        }
        loaded.push((idx, super::ConvParams { weights, bias, bn }));
    }

    if cur.pos != bytes.len() {
        return Err(QnetError::TrailingBytes(bytes.len() - cur.pos));
    }

    for (idx, params) in loaded {
        model.fp[idx] = Some(params);
    }
    model.darknet_header = super::DarknetHeader {
        major,
        minor,
        revision,
        seen,
    };
    model.q = None;
    Ok(())
}

/// Serializes the model's fp parameters back into the Darknet layout.
pub fn write_darknet_weights(model: &QNetModel) -> Result<Vec<u8>, QnetError> {
    let h = model.darknet_header;
    let mut out = Vec::new();
    out.extend_from_slice(&h.major.to_le_bytes());
    out.extend_from_slice(&h.minor.to_le_bytes());
    out.extend_from_slice(&h.revision.to_le_bytes());
    if h.major * 10 + h.minor >= 2 {
        out.extend_from_slice(&(h.seen as i64).to_le_bytes());
    } else {
        out.extend_from_slice(&(h.seen as i32).to_le_bytes());
    }

    let push_f32s = |dst: &mut Vec<u8>, vals: &[f64]| {
        for &v in vals {
            dst.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };

    for (idx, layer) in model.layers.iter().enumerate() {
        let LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            batch_norm,
            ..
        } = *layer
        else {
            continue;
        };
        let params = model.fp[idx]
            .as_ref()
            .ok_or_else(|| QnetError::Shape(format!("layer {idx} has no fp weights")))?;
        push_f32s(&mut out, &params.bias);
        if batch_norm {
            let bn = params
                .bn
                .as_ref()
                .ok_or_else(|| QnetError::Shape(format!("layer {idx} missing bn stats")))?;
            push_f32s(&mut out, &bn.scale);
            push_f32s(&mut out, &bn.mean);
            push_f32s(&mut out, &bn.var);
        }
        let w = params.weights.as_slice();
        let mut raw = vec![0.0f64; w.len()];
        for o in 0..out_ch {
            for i in 0..in_ch {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        raw[((o * in_ch + i) * kernel + ky) * kernel + kx] =
                            w[((ky * kernel + kx) * in_ch + i) * out_ch + o];
                    }
                }
            }
        }
        push_f32s(&mut out, &raw);
    }
    Ok(out)
}
