//! Resampling, the super-resolution pipeline and image statistics.

use crate::generators::{GenError, Generator, Image, ImageError, LatentKind, LatentVector};
use crate::models::{ModelError, Network};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("factor {factor} does not divide image size {height}x{width}")]
    Factor { factor: usize, height: usize, width: usize },
    #[error("image shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("image too small: {0}x{1} (need at least 3x3)")]
    TooSmall(usize, usize),
    #[error("need at least {need} images, got {got}")]
    BatchTooSmall { need: usize, got: usize },
    #[error("sweep factors must be distinct and >= 1: {0:?}")]
    Factors(Vec<usize>),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gen(#[from] GenError),
}

pub const PSNR_CAP: f64 = 99.0;

/// Non-overlapping `factor x factor` box average.
pub fn downsample(x: &Image, factor: usize) -> Result<Image, ImagingError> {
    let (h, w) = (x.height(), x.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(ImagingError::Factor { factor, height: h, width: w });
    }
    let (oh, ow) = (h / factor, w / factor);
    let area = (factor * factor) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let mut s = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    s += x.get(r * factor + dy, c * factor + dx);
                }
            }
            out.push((s / area).clamp(0.0, 1.0));
        }
    }
    Ok(Image::new(oh, ow, out)?)
}

/// Bilinear resampling to `target x target` with half-pixel alignment and
/// edge clamping; resizing to the source size is the identity.
pub fn resize_bilinear(x: &Image, target: usize) -> Image {
    let (h, w) = (x.height(), x.width());
    let target = target.max(1);
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = coords(h, target);
    let cols = coords(w, target);
    let mut out = Vec::with_capacity(target * target);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = x.get(r0, c0) * (1.0 - fc) + x.get(r0, c1) * fc;
            let bottom = x.get(r1, c0) * (1.0 - fc) + x.get(r1, c1) * fc;
            out.push((top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0));
        }
    }
    Image::new(target, target, out).expect("convex combination of valid pixels")
}

/// 3x3 mean filter with edge clamping.
pub fn box_blur(x: &Image) -> Image {
    let (h, w) = (x.height() as isize, x.width() as isize);
    Image::from_fn(x.height(), x.width(), |r, c| {
        let mut s = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let rr = (r as isize + dy).clamp(0, h - 1) as usize;
                let cc = (c as isize + dx).clamp(0, w - 1) as usize;
                s += x.get(rr, cc);
            }
        }
        (s / 9.0).clamp(0.0, 1.0)
    })
    .expect("mean of valid pixels")
}

/// Projects images with P, in chunks.
pub fn project(p: &Network, images: &[Image]) -> Result<Vec<LatentVector>, ImagingError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let x = Image::batch_tensor(chunk)?;
        let y = p.eval(&x)?;
        out.extend(LatentVector::from_batch_tensor(LatentKind::W, &y));
    }
    Ok(out)
}

/// `G(P(x))` for every image.
pub fn reconstruct(
    p: &Network,
    g: &Generator,
    images: &[Image],
) -> Result<Vec<Image>, ImagingError> {
    let w = project(p, images)?;
    Ok(g.render(&w)?)
}

/// `G(P(resize(x_low)))`: the low-resolution image is resized to the
/// projector's input size, projected and regenerated at full resolution.
pub fn super_resolve(p: &Network, g: &Generator, x_low: &Image) -> Result<Image, ImagingError> {
    let res = p.spec.input_shape[1];
    let up = resize_bilinear(x_low, res);
    Ok(reconstruct(p, g, std::slice::from_ref(&up))?.remove(0))
}

fn check_same(a: &Image, b: &Image) -> Result<(), ImagingError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(ImagingError::Shape((a.height(), a.width()), (b.height(), b.width())));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, ImagingError> {
    check_same(a, b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` with unit peak, capped at 99 dB below MSE 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImagingError> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean squared response of the 5-point Laplacian over interior pixels.
pub fn laplacian_energy(x: &Image) -> Result<f64, ImagingError> {
    let (h, w) = (x.height(), x.width());
    if h < 3 || w < 3 {
        return Err(ImagingError::TooSmall(h, w));
    }
    let mut s = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let l = x.get(r - 1, c) + x.get(r + 1, c) + x.get(r, c - 1) + x.get(r, c + 1)
                - 4.0 * x.get(r, c);
            s += l * l;
        }
    }
    Ok(s / ((h - 2) * (w - 2)) as f64)
}

/// Mean over unordered pairs of the mean absolute pixel difference.
pub fn diversity_metric(batch: &[Image]) -> Result<f64, ImagingError> {
    if batch.len() < 2 {
        return Err(ImagingError::BatchTooSmall { need: 2, got: batch.len() });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            check_same(&batch[i], &batch[j])?;
            let n = batch[i].pixels().len() as f64;
            total += batch[i]
                .pixels()
                .iter()
                .zip(batch[j].pixels())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub factor: usize,
    pub image_idx: usize,
    pub psnr_reconstruction: f64,
    pub psnr_bilinear: f64,
}

/// Per-factor aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub factor: usize,
    pub low_resolution: usize,
    pub mean_psnr_reconstruction: f64,
    pub mean_psnr_bilinear: f64,
    /// Fraction of images where reconstruction beats bilinear upsampling.
    pub win_rate: f64,
}

/// Rows ordered by increasing low resolution (decreasing factor).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn row(&self, factor: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.factor == factor)
    }

    /// `factor,image_idx,psnr_reconstruction,psnr_bilinear`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("factor,image_idx,psnr_reconstruction,psnr_bilinear\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.factor, e.image_idx, e.psnr_reconstruction, e.psnr_bilinear
            ));
        }
        s
    }
}

/// For each factor: downsample every original, super-resolve it, and score
/// both the reconstruction and plain bilinear upsampling against the
/// original.
pub fn resolution_sweep(
    p: &Network,
    g: &Generator,
    originals: &[Image],
    factors: &[usize],
) -> Result<SweepReport, ImagingError> {
    let mut sorted = factors.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.dedup();
    if sorted.len() != factors.len() || sorted.contains(&0) || factors.is_empty() {
        return Err(ImagingError::Factors(factors.to_vec()));
    }
    let res = p.spec.input_shape[1];
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for &factor in &sorted {
        let lows = originals.iter().map(|x| downsample(x, factor)).collect::<Result<Vec<_>, _>>()?;
        let ups: Vec<Image> = lows.iter().map(|l| resize_bilinear(l, res)).collect();
        let recs = reconstruct(p, g, &ups)?;
        let mut sum_rec = 0.0;
        let mut sum_bil = 0.0;
        let mut wins = 0;
        for (i, orig) in originals.iter().enumerate() {
            let pr = psnr(&recs[i], orig)?;
            let pb = psnr(&resize_bilinear(&lows[i], orig.height()), orig)?;
            sum_rec += pr;
            sum_bil += pb;
            if pr > pb {
                wins += 1;
            }
            entries.push(SweepEntry {
                factor,
                image_idx: i,
                psnr_reconstruction: pr,
                psnr_bilinear: pb,
            });
        }
        let n = originals.len().max(1) as f64;
        rows.push(SweepRow {
            factor,
            low_resolution: originals.first().map_or(0, |x| x.height() / factor),
            mean_psnr_reconstruction: sum_rec / n,
            mean_psnr_bilinear: sum_bil / n,
            win_rate: wins as f64 / n,
        });
    }
    Ok(SweepReport { rows, entries })
}
