//! Primitive image operations. Geometric ops resample with nearest neighbour.

use alloc::vec;


use crate::image::Image;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];
/// Fill value for pixels uncovered by a geometric op.
pub const FILL: f32 = 0.5;

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    let (h, w, c) = img.shape();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.set(y, x, ch, img.get(y, w - 1 - x, ch));
            }
        }
    }
    out
}

/// Numpy-style `reflect` index (edge pixel not repeated).
fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut i = i.rem_euclid(period);
    if i >= len {
        i = period - i;
    }
    i as usize
}

/// Reflect-pad by `pad` on every side, then crop back to the original size at
/// offset `(oy, ox)` in the padded frame (`0..=2·pad`).
pub fn pad_crop(img: &Image, pad: usize, oy: usize, ox: usize) -> Image {
    let (h, w, c) = img.shape();
    let mut out = img.clone();
    for y in 0..h {
        let sy = reflect(y as isize + oy as isize - pad as isize, h);
        for x in 0..w {
            let sx = reflect(x as isize + ox as isize - pad as isize, w);
            for ch in 0..c {
                out.set(y, x, ch, img.get(sy, sx, ch));
            }
        }
    }
    out
}

fn luminance(img: &Image, y: usize, x: usize) -> f32 {
    if img.channels() == 3 {
        (0..3).map(|ch| LUMA[ch] * img.get(y, x, ch)).sum()
    } else {
        (0..img.channels()).map(|ch| img.get(y, x, ch)).sum::<f32>() / img.channels() as f32
    }
}

fn blend_with(img: &mut Image, factor: f32, base: impl Fn(&Image, usize, usize, usize) -> f32) {
    let src = img.clone();
    let (h, w, c) = src.shape();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let b = base(&src, y, x, ch);
                img.set(y, x, ch, b + factor * (src.get(y, x, ch) - b));
            }
        }
    }
    img.clamp_unit();
}

pub fn brightness(img: &mut Image, factor: f32) {
    blend_with(img, factor, |_, _, _, _| 0.0);
}

pub fn contrast(img: &mut Image, factor: f32) {
    let (h, w, _) = img.shape();
    let mut mean = 0.0;
    for y in 0..h {
        for x in 0..w {
            mean += luminance(img, y, x);
        }
    }
    mean /= (h * w) as f32;
    blend_with(img, factor, |_, _, _, _| mean);
}

pub fn saturation(img: &mut Image, factor: f32) {
    blend_with(img, factor, |src, y, x, _| luminance(src, y, x));
}

pub fn grayscale(img: &mut Image) {
    let (h, w, c) = img.shape();
    for y in 0..h {
        for x in 0..w {
            let g = luminance(img, y, x);
            for ch in 0..c {
                img.set(y, x, ch, g);
            }
        }
    }
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &mut Image, sigma: f32, radius: usize) {
    let r = radius as isize;
    let mut kernel: vec::Vec<f32> = (-r..=r)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);
    let (h, w, c) = img.shape();
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let src = img.clone();
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = (-r..=r)
                    .zip(&kernel)
                    .map(|(d, k)| k * src.get(y, clamp(x as isize + d, w), ch))
                    .sum();
                tmp.set(y, x, ch, v);
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = (-r..=r)
                    .zip(&kernel)
                    .map(|(d, k)| k * tmp.get(clamp(y as isize + d, h), x, ch))
                    .sum();
                img.set(y, x, ch, v);
            }
        }
    }
    img.clamp_unit();
}

/// Inverse-mapped nearest-neighbour warp: `src(y, x)` gives the source
/// coordinate (row, col) for each output pixel.
fn warp(img: &Image, src: impl Fn(f32, f32) -> (f32, f32)) -> Image {
    let (h, w, c) = img.shape();
    let mut out = Image::filled(h, w, c, FILL);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f32, x as f32);
            let (iy, ix) = ((sy + 0.5).floor(), (sx + 0.5).floor());
            if iy >= 0.0 && ix >= 0.0 && (iy as usize) < h && (ix as usize) < w {
                for ch in 0..c {
                    out.set(y, x, ch, img.get(iy as usize, ix as usize, ch));
                }
            }
        }
    }
    out
}

fn center(img: &Image) -> (f32, f32) {
    ((img.height() as f32 - 1.0) / 2.0, (img.width() as f32 - 1.0) / 2.0)
}

pub fn rotate(img: &Image, degrees: f32) -> Image {
    let (cy, cx) = center(img);
    let t = degrees.to_radians();
    let (s, c) = (t.sin(), t.cos());
    warp(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy - s * dx + c * dy, cx + c * dx + s * dy)
    })
}

pub fn shear_x(img: &Image, shear: f32) -> Image {
    let (cy, _) = center(img);
    warp(img, |y, x| (y, x + shear * (y - cy)))
}

pub fn shear_y(img: &Image, shear: f32) -> Image {
    let (_, cx) = center(img);
    warp(img, |y, x| (y + shear * (x - cx), x))
}

pub fn translate(img: &Image, dy: i32, dx: i32) -> Image {
    warp(img, |y, x| (y - dy as f32, x - dx as f32))
}

pub fn autocontrast(img: &mut Image) {
    let (h, w, c) = img.shape();
    for ch in 0..c {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                lo = lo.min(img.get(y, x, ch));
                hi = hi.max(img.get(y, x, ch));
            }
        }
        if hi > lo {
            for y in 0..h {
                for x in 0..w {
                    img.set(y, x, ch, (img.get(y, x, ch) - lo) / (hi - lo));
                }
            }
        }
    }
}

/// Per-channel histogram equalization over 256 levels.
pub fn equalize(img: &mut Image) {
    let (h, w, c) = img.shape();
    let n = (h * w) as f32;
    let level = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as usize;
    for ch in 0..c {
        let mut hist = [0u32; 256];
        for y in 0..h {
            for x in 0..w {
                hist[level(img.get(y, x, ch))] += 1;
            }
        }
        let mut cdf = [0u32; 256];
        let mut acc = 0;
        for (i, &count) in hist.iter().enumerate() {
            acc += count;
            cdf[i] = acc;
        }
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0) as f32;
        if n - cdf_min <= 0.0 {
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                let v = (cdf[level(img.get(y, x, ch))] as f32 - cdf_min) / (n - cdf_min);
                img.set(y, x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
}

pub fn solarize(img: &mut Image, threshold: f32) {
    for v in img.data_mut() {
        if *v >= threshold {
            *v = 1.0 - *v;
        }
    }
}

pub fn posterize(img: &mut Image, bits: u32) {
    let levels = (1u32 << bits.clamp(1, 8)) as f32;
    for v in img.data_mut() {
        let q = (*v * 255.0).round() as u32 >> (8 - bits.clamp(1, 8));
        *v = (q as f32 / (levels - 1.0)).clamp(0.0, 1.0);
    }
}

/// Blend with a 3x3 smoothed copy (interior pixels only, borders kept).
pub fn sharpness(img: &mut Image, factor: f32) {
    let (h, w, c) = img.shape();
    if h < 3 || w < 3 {
        return;
    }
    let src = img.clone();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for ch in 0..c {
                let mut acc = 4.0 * src.get(y, x, ch);
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        acc += src.get(yy, xx, ch);
                    }
                }
                let smooth = acc / 13.0;
                img.set(y, x, ch, smooth + factor * (src.get(y, x, ch) - smooth));
            }
        }
    }
    img.clamp_unit();
}

/// Zero a `size × size` square with top-left corner `(y0, x0)` in every channel.
pub fn cutout(img: &mut Image, size: usize, y0: usize, x0: usize) {
    let c = img.channels();
    for y in y0..(y0 + size).min(img.height()) {
        for x in x0..(x0 + size).min(img.width()) {
            for ch in 0..c {
                img.set(y, x, ch, 0.0);
            }
        }
    }
}
