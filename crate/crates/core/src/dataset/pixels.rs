use super::DatasetError;

const RANGE_TOLERANCE: f32 = 1e-6;

/// Channel-major image with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image data length mismatch");
        ImageTensor { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value at channel `c`, row `y`, column `x`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

/// Interleaved 8-bit RGB (`height * width * 3` bytes) to a `[-1, 1]` tensor.
pub fn normalize_pixels(raw: &[u8], height: usize, width: usize) -> ImageTensor {
    assert_eq!(raw.len(), height * width * 3, "expected interleaved RGB bytes");
    let plane = height * width;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    ImageTensor::new(3, height, width, data)
}

/// Inverse of [`normalize_pixels`]: `round((t + 1) * 127.5)` clamped to a byte.
pub fn denormalize_pixels(t: &ImageTensor) -> Result<Vec<u8>, DatasetError> {
    assert_eq!(t.channels, 3, "expected an RGB tensor");
    if let Some(&bad) = t.data.iter().find(|v| !(v.abs() <= 1.0 + RANGE_TOLERANCE)) {
        return Err(DatasetError::RangeViolation(bad));
    }
    let plane = t.height * t.width;
    let mut raw = vec![0u8; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            let v = ((t.data[c * plane + i] + 1.0) * 127.5).round();
            raw[i * 3 + c] = v.clamp(0.0, 255.0) as u8;
        }
    }
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let t = normalize_pixels(&[0, 255, 0], 1, 1);
        assert_eq!(t.data(), &[-1.0, 1.0, -1.0]);
    }

    #[test]
    fn round_trip_is_exact_for_every_byte() {
        for v in 0..=255u8 {
            let t = normalize_pixels(&[v, v, v], 1, 1);
            assert_eq!(denormalize_pixels(&t).unwrap(), vec![v, v, v], "value {v}");
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        let t = ImageTensor::new(3, 1, 1, vec![0.0, 1.5, 0.0]);
        assert!(matches!(denormalize_pixels(&t), Err(DatasetError::RangeViolation(v)) if v == 1.5));
        let t = ImageTensor::new(3, 1, 1, vec![0.0, f32::NAN, 0.0]);
        assert!(denormalize_pixels(&t).is_err());
        let t = ImageTensor::new(3, 1, 1, vec![1.0 + 5e-7, -1.0 - 5e-7, 0.0]);
        assert_eq!(denormalize_pixels(&t).unwrap(), vec![255, 0, 128]);
    }
}
