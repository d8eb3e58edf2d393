use crate::numcore::Tensor;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image {height}x{width} needs {expected} pixels, got {got}")]
    Size { height: usize, width: usize, expected: usize, got: usize },
    #[error("pixel {index} = {value} is outside [0, 1]")]
    Range { index: usize, value: f64 },
    #[error("expected an image batch tensor [n, 1, h, w], got {0:?}")]
    BatchShape(Vec<usize>),
}

/// Grayscale image with row-major intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        let expected = height * width;
        if pixels.len() != expected {
            return Err(ImageError::Size { height, width, expected, got: pixels.len() });
        }
        if let Some((index, &value)) =
            pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::Range { index, value });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn square(res: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        Self::new(res, res, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds pixel `(row, col)` from `f(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let pixels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Stacks equally sized images into `[n, 1, h, w]`.
    pub fn batch_tensor(images: &[Image]) -> Result<Tensor, ImageError> {
        let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(ImageError::Size {
                    height: h,
                    width: w,
                    expected: h * w,
                    got: img.pixels.len(),
                });
            }
            data.extend_from_slice(&img.pixels);
        }
        Ok(Tensor::new(vec![images.len(), 1, h, w], data).expect("consistent batch"))
    }

    /// Splits a `[n, 1, h, w]` (or `[n, h*w]` with square images) tensor.
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<Image>, ImageError> {
        let (n, h, w) = match *t.shape() {
            [n, 1, h, w] => (n, h, w),
            [n, p] => {
                let side = (p as f64).sqrt().round() as usize;
                if side * side != p {
                    return Err(ImageError::BatchShape(t.shape().to_vec()));
                }
                (n, side, side)
            }
            _ => return Err(ImageError::BatchShape(t.shape().to_vec())),
        };
        t.data().chunks(h * w).take(n).map(|c| Image::new(h, w, c.to_vec())).collect()
    }

    /// Stacks rows of equally sized images into one grid image.
    pub fn grid(rows: &[Vec<Image>]) -> Result<Image, ImageError> {
        let (h, w) = rows
            .iter()
            .flatten()
            .next()
            .map_or((1, 1), |i| (i.height, i.width));
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let (gh, gw) = (rows.len().max(1) * h, cols * w);
        let mut pixels = vec![0.0; gh * gw];
        for (r, row) in rows.iter().enumerate() {
            for (c, img) in row.iter().enumerate() {
                if (img.height, img.width) != (h, w) {
                    return Err(ImageError::Size {
                        height: h,
                        width: w,
                        expected: h * w,
                        got: img.pixels.len(),
                    });
                }
                for y in 0..h {
                    let dst = (r * h + y) * gw + c * w;
                    pixels[dst..dst + w].copy_from_slice(&img.pixels[y * w..(y + 1) * w]);
                }
            }
        }
        Image::new(gh, gw, pixels)
    }
}
