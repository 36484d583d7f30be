//! Augmentation regimes: contrastive view pairs, weak (flip) and strong
//! (RandAugment followed by Cutout).
//!
//! Every call consumes the RNG it is given, so two successive calls on the
//! same image give two independent draws. Outputs keep the input shape and
//! stay within `[0, 1]`.

pub mod ops;

use alloc::format;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Augmentation settings as they appear in run configs (`augment.*`).
///
/// Pixel sizes of `None` scale with the image: crop padding is `side/8`
/// (4 px at 32 px) and the cutout square is `side/2` (16 px at 32 px).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub crop_padding: Option<usize>,
    pub flip_prob: f64,
    pub color_strength: f64,
    pub color_prob: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub weak_flip_prob: f64,
    /// Maximum weak translation in pixels (reflect padded); 0 disables it.
    pub weak_translate: usize,
    pub randaugment_n: usize,
    /// RandAugment magnitude on the usual 0..=30 scale.
    pub randaugment_m: u32,
    pub cutout_size: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_padding: None,
            flip_prob: 0.5,
            color_strength: 0.5,
            color_prob: 0.8,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            weak_flip_prob: 0.5,
            weak_translate: 0,
            randaugment_n: 2,
            randaugment_m: 10,
            cutout_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveParams {
    pub crop_padding: usize,
    pub flip_prob: f64,
    pub color_strength: f32,
    pub color_prob: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_radius: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakParams {
    pub flip_prob: f64,
    pub translate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongParams {
    pub ops_per_image: usize,
    /// Magnitude in `[0, 1]`.
    pub magnitude: f32,
    pub cutout_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentPolicy {
    Contrastive(ContrastiveParams),
    Weak(WeakParams),
    Strong(StrongParams),
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("augment.{name} must be a probability, got {p}")))
    }
}

/// The three policies resolved for one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmenter {
    pub contrastive: AugmentPolicy,
    pub weak: AugmentPolicy,
    pub strong: AugmentPolicy,
}

impl Augmenter {
    pub fn new(cfg: &AugmentConfig, height: usize, width: usize) -> Result<Self> {
        for (name, p) in [
            ("flip_prob", cfg.flip_prob),
            ("color_prob", cfg.color_prob),
            ("grayscale_prob", cfg.grayscale_prob),
            ("blur_prob", cfg.blur_prob),
            ("weak_flip_prob", cfg.weak_flip_prob),
        ] {
            check_prob(name, p)?;
        }
        if !(0.0..=1.0).contains(&cfg.color_strength) {
            return Err(Error::config("augment.color_strength must be in [0, 1]"));
        }
        if cfg.randaugment_n == 0 {
            return Err(Error::config("augment.randaugment_n must be at least 1"));
        }
        if cfg.randaugment_m > 30 {
            return Err(Error::config("augment.randaugment_m must be in 0..=30"));
        }
        let side = height.min(width);
        let crop_padding = cfg.crop_padding.unwrap_or((side / 8).max(1));
        if crop_padding >= side || cfg.weak_translate >= side {
            return Err(Error::config("padding must be smaller than the image side"));
        }
        let cutout_size = cfg.cutout_size.unwrap_or((side / 2).max(1));
        if cutout_size > side {
            return Err(Error::config(format!(
                "augment.cutout_size {cutout_size} exceeds image side {side}"
            )));
        }
        Ok(Augmenter {
            contrastive: AugmentPolicy::Contrastive(ContrastiveParams {
                crop_padding,
                flip_prob: cfg.flip_prob,
                color_strength: cfg.color_strength as f32,
                color_prob: cfg.color_prob,
                grayscale_prob: cfg.grayscale_prob,
                blur_prob: cfg.blur_prob,
                blur_radius: ((side as f32 * 0.05).round() as usize).max(1),
            }),
            weak: AugmentPolicy::Weak(WeakParams {
                flip_prob: cfg.weak_flip_prob,
                translate: cfg.weak_translate,
            }),
            strong: AugmentPolicy::Strong(StrongParams {
                ops_per_image: cfg.randaugment_n,
                magnitude: cfg.randaugment_m as f32 / 30.0,
                cutout_size,
            }),
        })
    }

    /// Two independent contrastive views.
    pub fn contrastive_pair<R: Rng + ?Sized>(&self, img: &Image, rng: &mut R) -> (Image, Image) {
        let a = apply(&self.contrastive, img, rng);
        let b = apply(&self.contrastive, img, rng);
        (a, b)
    }

    /// One weak and one strong view.
    pub fn weak_strong_pair<R: Rng + ?Sized>(&self, img: &Image, rng: &mut R) -> (Image, Image) {
        let w = apply(&self.weak, img, rng);
        let s = apply(&self.strong, img, rng);
        (w, s)
    }
}

pub fn apply<R: Rng + ?Sized>(policy: &AugmentPolicy, img: &Image, rng: &mut R) -> Image {
    let mut out = match policy {
        AugmentPolicy::Contrastive(p) => contrastive(p, img, rng),
        AugmentPolicy::Weak(p) => weak(p, img, rng),
        AugmentPolicy::Strong(p) => strong(p, img, rng),
    };
    out.clamp_unit();
    out
}

fn contrastive<R: Rng + ?Sized>(p: &ContrastiveParams, img: &Image, rng: &mut R) -> Image {
    let mut out = if p.crop_padding > 0 {
        let oy = rng.random_range(0..=2 * p.crop_padding);
        let ox = rng.random_range(0..=2 * p.crop_padding);
        ops::pad_crop(img, p.crop_padding, oy, ox)
    } else {
        img.clone()
    };
    if rng.random_bool(p.flip_prob) {
        out = ops::hflip(&out);
    }
    if rng.random_bool(p.color_prob) && p.color_strength > 0.0 {
        let s = 0.8 * p.color_strength;
        let mut factor = || rng.random_range(1.0 - s..=1.0 + s);
        let (b, c, sat) = (factor(), factor(), factor());
        ops::brightness(&mut out, b);
        ops::contrast(&mut out, c);
        ops::saturation(&mut out, sat);
    }
    if rng.random_bool(p.grayscale_prob) {
        ops::grayscale(&mut out);
    }
    if rng.random_bool(p.blur_prob) {
        let sigma = rng.random_range(0.1f32..=2.0);
        ops::gaussian_blur(&mut out, sigma, p.blur_radius);
    }
    out
}

fn weak<R: Rng + ?Sized>(p: &WeakParams, img: &Image, rng: &mut R) -> Image {
    let mut out = if rng.random_bool(p.flip_prob) {
        ops::hflip(img)
    } else {
        img.clone()
    };
    if p.translate > 0 {
        let oy = rng.random_range(0..=2 * p.translate);
        let ox = rng.random_range(0..=2 * p.translate);
        out = ops::pad_crop(&out, p.translate, oy, ox);
    }
    out
}

/// The 14-op RandAugment pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandOp {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl RandOp {
    pub const ALL: [RandOp; 14] = [
        RandOp::Identity,
        RandOp::AutoContrast,
        RandOp::Equalize,
        RandOp::Rotate,
        RandOp::Solarize,
        RandOp::Color,
        RandOp::Posterize,
        RandOp::Contrast,
        RandOp::Brightness,
        RandOp::Sharpness,
        RandOp::ShearX,
        RandOp::ShearY,
        RandOp::TranslateX,
        RandOp::TranslateY,
    ];

    /// Apply with magnitude `m ∈ [0, 1]`; `sign` is ±1 for signed ops.
    pub fn apply(self, img: &Image, m: f32, sign: f32) -> Image {
        let mut out = img.clone();
        let enhance = 1.0 + sign * 0.9 * m;
        match self {
            RandOp::Identity => {}
            RandOp::AutoContrast => ops::autocontrast(&mut out),
            RandOp::Equalize => ops::equalize(&mut out),
            RandOp::Rotate => out = ops::rotate(img, sign * 30.0 * m),
            RandOp::Solarize => ops::solarize(&mut out, 1.0 - m),
            RandOp::Color => ops::saturation(&mut out, enhance),
            RandOp::Posterize => ops::posterize(&mut out, 8 - (4.0 * m) as u32),
            RandOp::Contrast => ops::contrast(&mut out, enhance),
            RandOp::Brightness => ops::brightness(&mut out, enhance),
            RandOp::Sharpness => ops::sharpness(&mut out, enhance),
            RandOp::ShearX => out = ops::shear_x(img, sign * 0.3 * m),
            RandOp::ShearY => out = ops::shear_y(img, sign * 0.3 * m),
            RandOp::TranslateX => {
                let px = (sign * 0.45 * m * img.width() as f32).round() as i32;
                out = ops::translate(img, 0, px)
            }
            RandOp::TranslateY => {
                let px = (sign * 0.45 * m * img.height() as f32).round() as i32;
                out = ops::translate(img, px, 0)
            }
        }
        out
    }
}

fn strong<R: Rng + ?Sized>(p: &StrongParams, img: &Image, rng: &mut R) -> Image {
    let mut out = img.clone();
    for _ in 0..p.ops_per_image {
        let op = RandOp::ALL[rng.random_range(0..RandOp::ALL.len())];
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        out = op.apply(&out, p.magnitude, sign);
        out.clamp_unit();
    }
    let y0 = rng.random_range(0..=img.height() - p.cutout_size);
    let x0 = rng.random_range(0..=img.width() - p.cutout_size);
    ops::cutout(&mut out, p.cutout_size, y0, x0);
    out
}
