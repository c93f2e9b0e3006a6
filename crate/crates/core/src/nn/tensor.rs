use crate::image::ImageTensor;
use crate::scalar::Scalar;

/// Activation batch stored channel-major: `[channels, batch, height, width]`.
///
/// Keeping channels outermost lets a convolution's GEMM output land directly
/// in the layout the next layer consumes. Flat features use `height = width = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Tensor { channels, batch, height, width, data: vec![T::zero(); channels * batch * height * width] }
    }

    pub fn from_vec(channels: usize, batch: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * batch * height * width, "tensor data length");
        Tensor { channels, batch, height, width, data }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.batch, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.batch + n) * self.height + y) * self.width + x
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "tensor shape mismatch in add");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack HWC images in [0,1] into a batch mapped to [-1,1].
    pub fn from_images(images: &[&ImageTensor]) -> Self {
        assert!(!images.is_empty(), "empty image batch");
        let (h, w) = (images[0].height(), images[0].width());
        let mut t = Self::zeros(3, images.len(), h, w);
        for (n, img) in images.iter().enumerate() {
            assert_eq!((img.height(), img.width()), (h, w), "mixed image sizes in batch");
            for y in 0..h {
                for x in 0..w {
                    let px = img.pixel(y, x);
                    for c in 0..3 {
                        let i = t.idx(c, n, y, x);
                        t.data[i] = T::lit(px[c] as f64 * 2.0 - 1.0);
                    }
                }
            }
        }
        t
    }

    /// Inverse of `from_images`: values in [-1,1] back to clamped [0,1] images.
    pub fn to_images(&self) -> Vec<ImageTensor> {
        assert_eq!(self.channels, 3, "image tensors have 3 channels");
        (0..self.batch)
            .map(|n| {
                let mut img = ImageTensor::new(self.height, self.width);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let mut px = [0f32; 3];
                        for (c, p) in px.iter_mut().enumerate() {
                            let v = self.data[self.idx(c, n, y, x)].as_f64();
                            *p = ((v + 1.0) * 0.5).clamp(0.0, 1.0) as f32;
                        }
                        img.set_pixel(y, x, px);
                    }
                }
                img
            })
            .collect()
    }

    /// Channel-major planes of one image in [-1,1], the per-sample unit `from_planar` stacks.
    pub fn planar_from_image(img: &ImageTensor) -> Vec<T> {
        let (h, w) = (img.height(), img.width());
        let mut out = vec![T::zero(); 3 * h * w];
        for (i, px) in img.data().chunks(3).enumerate() {
            for c in 0..3 {
                out[c * h * w + i] = T::lit(px[c] as f64 * 2.0 - 1.0);
            }
        }
        out
    }

    /// Stacks per-sample `[3, h, w]` planes into a `[3, n, h, w]` batch.
    pub fn from_planar(samples: &[&[T]], height: usize, width: usize) -> Self {
        let plane = height * width;
        let n = samples.len();
        let mut t = Self::zeros(3, n, height, width);
        for (b, s) in samples.iter().enumerate() {
            assert_eq!(s.len(), 3 * plane, "planar sample size");
            for c in 0..3 {
                t.data[(c * n + b) * plane..(c * n + b + 1) * plane].copy_from_slice(&s[c * plane..(c + 1) * plane]);
            }
        }
        t
    }

    /// Inverse of `from_planar` for batch entry `n`.
    pub fn planar(&self, n: usize) -> Vec<T> {
        let plane = self.plane();
        let mut out = Vec::with_capacity(self.channels * plane);
        for c in 0..self.channels {
            let start = (c * self.batch + n) * plane;
            out.extend_from_slice(&self.data[start..start + plane]);
        }
        out
    }
}
