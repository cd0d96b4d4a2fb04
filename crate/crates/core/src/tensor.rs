//! Real-valued and uint8 image buffers (row-major, channel-last).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("zero-sized image {height}x{width}x{channels}")]
    Empty {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("data length {actual} does not match {height}x{width}x{channels}")]
    Length {
        height: usize,
        width: usize,
        channels: usize,
        actual: usize,
    },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f64),
}

fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<(), ShapeError> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(ShapeError::Empty {
            height,
            width,
            channels,
        });
    }
    if len != height * width * channels {
        return Err(ShapeError::Length {
            height,
            width,
            channels,
            actual: len,
        });
    }
    Ok(())
}

/// Image with values in `[0, 1]`; the attacker's working representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ShapeError> {
        check_dims(height, width, channels, data.len())?;
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ShapeError::OutOfRange(bad));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds `clip(base + delta, 0, 1)`.
    pub fn from_perturbation(base: &ImageTensor, delta: &[f64]) -> Self {
        assert_eq!(base.data.len(), delta.len());
        let data = base
            .data
            .iter()
            .zip(delta)
            .map(|(x, d)| (x + d).clamp(0.0, 1.0))
            .collect();
        Self {
            height: base.height,
            width: base.width,
            channels: base.channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn quantize(&self) -> QuantizedImage {
        quantize(self)
    }
}

/// uint8 image; the only representation that crosses the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl QuantizedImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ShapeError> {
        check_dims(height, width, channels, data.len())?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn dequantize(&self) -> ImageTensor {
        dequantize(self)
    }

    /// Largest per-component absolute difference in uint8 units, or `None`
    /// when the shapes differ.
    pub fn linf_distance(&self, other: &QuantizedImage) -> Option<u8> {
        if self.height != other.height
            || self.width != other.width
            || self.channels != other.channels
        {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.abs_diff(*b))
                .max()
                .unwrap_or(0),
        )
    }
}

/// `round(e * 255)` with ties away from zero, clamped to `[0, 255]`.
pub fn quantize(x: &ImageTensor) -> QuantizedImage {
    // f64::round rounds half away from zero.
    let data = x
        .data
        .iter()
        .map(|&e| (e * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    QuantizedImage {
        height: x.height,
        width: x.width,
        channels: x.channels,
        data,
    }
}

pub fn dequantize(q: &QuantizedImage) -> ImageTensor {
    ImageTensor {
        height: q.height,
        width: q.width,
        channels: q.channels,
        data: q.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_rounds_away_from_zero() {
        let x = ImageTensor::new(1, 1, 3, vec![0.5, 0.0, 1.0]).unwrap();
        assert_eq!(quantize(&x).data(), &[128, 0, 255]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            ImageTensor::new(2, 2, 3, vec![0.0; 11]),
            Err(ShapeError::Length { .. })
        ));
        assert!(matches!(
            ImageTensor::new(0, 2, 3, vec![]),
            Err(ShapeError::Empty { .. })
        ));
        assert!(matches!(
            ImageTensor::new(1, 1, 1, vec![1.5]),
            Err(ShapeError::OutOfRange(_))
        ));
        assert!(QuantizedImage::new(2, 2, 3, vec![0; 13]).is_err());
    }

    #[test]
    fn perturbation_clips() {
        let base = ImageTensor::new(1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let x = ImageTensor::from_perturbation(&base, &[-0.1, 0.1, 0.1]);
        assert_eq!(x.data(), &[0.0, 0.6, 1.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_error_bounded(values in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let x = ImageTensor::new(2, 2, 3, values).unwrap();
            let back = quantize(&x).dequantize();
            for (a, b) in x.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }

        #[test]
        fn quantize_inverts_dequantize(bytes in proptest::collection::vec(any::<u8>(), 27)) {
            let q = QuantizedImage::new(3, 3, 3, bytes).unwrap();
            prop_assert_eq!(quantize(&q.dequantize()), q);
        }
    }
}
