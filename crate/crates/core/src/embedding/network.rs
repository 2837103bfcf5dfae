//! The trainable part of a backbone: one dense layer producing the embedding,
//! plus the frozen pooling stage that feeds it.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datasets::Image;
use crate::error::{Error, Result};

const WEIGHTS_MAGIC: &[u8; 4] = b"OCW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, z: &mut Array2<f32>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    pub(crate) fn apply_1d(self, z: &mut Array1<f32>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Multiplies `grad` by the activation derivative, given post-activation output.
    pub(crate) fn backprop(self, grad: &mut Array2<f32>, output: &Array2<f32>) {
        if self == Activation::Relu {
            grad.zip_mut_with(output, |g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

/// Area-averages the image over a `grid × grid` lattice per channel and
/// centers values around zero. Layout is cell-major: `(cy * grid + cx) * 3 + c`.
pub fn pooled_features(image: &Image, grid: usize) -> Array1<f32> {
    let (w, h) = (image.width(), image.height());
    let mut out = Array1::<f32>::zeros(grid * grid * 3);
    for cy in 0..grid {
        let (y0, y1) = (cy * h / grid, ((cy + 1) * h / grid).max(cy * h / grid + 1));
        for cx in 0..grid {
            let (x0, x1) = (cx * w / grid, ((cx + 1) * w / grid).max(cx * w / grid + 1));
            let mut sums = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    for (c, s) in sums.iter_mut().enumerate() {
                        *s += f64::from(image.get(x, y, c));
                    }
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for (c, s) in sums.iter().enumerate() {
                out[(cy * grid + cx) * 3 + c] = (s / count - 0.5) as f32;
            }
        }
    }
    out
}

/// `output = weights · input + bias`, weights stored as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weights: Array2<f32>,
    pub(crate) bias: Array1<f32>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f32>, bias: Array1<f32>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Integrity(format!(
                "dense layer has {} rows but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f32> {
        self.weights.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f32> {
        self.bias.view()
    }

    pub(crate) fn forward_one(&self, x: &Array1<f32>) -> Array1<f32> {
        self.weights.dot(x) + &self.bias
    }

    /// Rows of `x` are samples.
    pub(crate) fn forward(&self, x: &ArrayView2<'_, f32>) -> Array2<f32> {
        x.dot(&self.weights.t()) + self.bias.view().insert_axis(Axis(0))
    }

    /// Writes `OCW1`, u32 rows, u32 cols, row-major weights, then biases;
    /// every number little-endian.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(WEIGHTS_MAGIC)?;
        out.write_all(&(self.out_dim() as u32).to_le_bytes())?;
        out.write_all(&(self.in_dim() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity((self.weights.len() + self.bias.len()) * 4);
        for v in self.weights.iter().chain(self.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Corruption(format!("cannot read weights: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(Error::Corruption("weights blob has a bad header".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + (rows * cols + rows) * 4;
        if bytes.len() != expected {
            return Err(Error::Corruption(format!(
                "weights blob is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let values: Vec<f32> = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corruption("weights blob holds non-finite values".into()));
        }
        let bias = Array1::from(values[rows * cols..].to_vec());
        let weights = Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec())
            .expect("length checked above");
        DenseLayer::new(weights, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_cells() {
        // 4x4 image, 2x2 grid: each cell averages a 2x2 block
        let img = Image::from_fn(4, 4, |x, y, c| if c == 0 { (x / 2 + 2 * (y / 2)) as f32 / 4.0 } else { 0.5 });
        let f = pooled_features(&img, 2);
        assert_eq!(f.len(), 12);
        for cell in 0..4 {
            assert!((f[cell * 3] - (cell as f32 / 4.0 - 0.5)).abs() < 1e-7);
            assert_eq!(f[cell * 3 + 1], 0.0);
        }
    }

    #[test]
    fn weights_blob_round_trip_and_rejections() {
        let layer = DenseLayer::new(
            Array2::from_shape_fn((3, 2), |(i, j)| i as f32 - j as f32 * 0.5),
            Array1::from(vec![0.1, -0.2, 0.3]),
        )
        .unwrap();
        let bytes = layer.to_bytes();
        assert_eq!(bytes.len(), 12 + 9 * 4);
        assert_eq!(DenseLayer::from_bytes(&bytes).unwrap(), layer);
        assert!(DenseLayer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DenseLayer::from_bytes(&bad).is_err());
    }
}
