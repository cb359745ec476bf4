//! Image pipeline: bilinear resize to a fixed square, per-channel
//! normalization with dataset statistics, and seeded augmentation.
//!
//! [`ImageTensor`] is an RGB raster of `f64` samples in row-major,
//! channel-interleaved order. Decoding and encoding (PNG, PPM) live at the
//! edges in [`decode_image`] and [`encode_png`].

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

pub const CHANNELS: usize = 3;
pub const MAX_SAMPLE: f64 = 255.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreprocessError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("degenerate channel {channel}: standard deviation {std}")]
    DegenerateChannel { channel: usize, std: f64 },
    #[error("no images to compute statistics over")]
    EmptyInput,
    #[error("decode: {0}")]
    Decode(String),
    #[error("encode: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, PreprocessError> {
        if height == 0 || width == 0 {
            return Err(PreprocessError::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(PreprocessError::InvalidImage(format!(
                "{} samples for {width}x{height}x{CHANNELS}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::InvalidImage("non-finite sample".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self, PreprocessError> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i % CHANNELS, v)).collect();
        Self { height: self.height, width: self.width, data }
    }

    /// Sub-rectangle starting at `(top, left)`; caller keeps it in bounds.
    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in top..top + height {
            let start = (y * self.width + left) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + width * CHANNELS]);
        }
        Self { height, width, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Size {
    pub const MODEL_INPUT: Size = Size { width: 512, height: 512 };
}

/// Bilinear resize with half-pixel centers, stretching to `target` without
/// preserving aspect ratio. Same-size input is returned value-identical and a
/// constant image stays exactly constant.
pub fn resize(img: &ImageTensor, target: Size) -> Result<ImageTensor, PreprocessError> {
    if target.width == 0 || target.height == 0 {
        return Err(PreprocessError::InvalidImage(format!(
            "zero target {}x{}",
            target.width, target.height
        )));
    }
    if img.width == target.width && img.height == target.height {
        return Ok(img.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = axis(target.width, img.width);
    let ys = axis(target.height, img.height);
    let mut data = Vec::with_capacity(target.width * target.height * CHANNELS);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let (a, b, c, d) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
            for ch in 0..CHANNELS {
                // Lerp form keeps constant regions exact.
                let top = a[ch] + (b[ch] - a[ch]) * tx;
                let bottom = c[ch] + (d[ch] - c[ch]) * tx;
                data.push(top + (bottom - top) * ty);
            }
        }
    }
    Ok(ImageTensor { height: target.height, width: target.width, data })
}

/// Per-channel mean and population standard deviation over every pixel of
/// every image (larger images weigh more).
pub fn compute_dataset_stats(images: &[ImageTensor]) -> Result<([f64; 3], [f64; 3]), PreprocessError> {
    if images.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let pixels: usize = images.iter().map(|i| i.height * i.width).sum();
    let n = pixels as f64;
    let mut mean = [0.0; 3];
    for img in images {
        for (i, v) in img.data.iter().enumerate() {
            mean[i % CHANNELS] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 3];
    for img in images {
        for (i, v) in img.data.iter().enumerate() {
            let d = v - mean[i % CHANNELS];
            var[i % CHANNELS] += d * d;
        }
    }
    Ok((mean, var.map(|v| (v / n).sqrt())))
}

fn check_std(std: &[f64; 3]) -> Result<(), PreprocessError> {
    for (channel, &s) in std.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(PreprocessError::DegenerateChannel { channel, std: s });
        }
    }
    Ok(())
}

/// `(x - mean[c]) / std[c]` per sample.
pub fn normalize(img: &ImageTensor, mean: [f64; 3], std: [f64; 3]) -> Result<ImageTensor, PreprocessError> {
    check_std(&std)?;
    Ok(img.map(|c, v| (v - mean[c]) / std[c]))
}

/// Inverse of [`normalize`].
pub fn denormalize(img: &ImageTensor, mean: [f64; 3], std: [f64; 3]) -> Result<ImageTensor, PreprocessError> {
    check_std(&std)?;
    Ok(img.map(|c, v| v * std[c] + mean[c]))
}

pub fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in (0..img.width).rev() {
            data.extend_from_slice(&img.pixel(y, x));
        }
    }
    ImageTensor { height: img.height, width: img.width, data }
}

/// Adds `delta` to every sample. No clamping.
pub fn adjust_brightness(img: &ImageTensor, delta: f64) -> ImageTensor {
    img.map(|_, v| v + delta)
}

/// RGB in `[0, 1]` to HSV with hue in turns `[0, 1)`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let hue = if chroma == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / chroma).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / chroma + 2.0) / 6.0
    } else {
        ((r - g) / chroma + 4.0) / 6.0
    };
    let sat = if max == 0.0 { 0.0 } else { chroma / max };
    [hue, sat, max]
}

/// Inverse of [`rgb_to_hsv`] (hexcone model).
pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let chroma = v * s;
    let sector = h.rem_euclid(1.0) * 6.0;
    let x = chroma * (1.0 - (sector.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match sector as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = v - chroma;
    [r + m, g + m, b + m]
}

/// Rotates hue by `turns` through the HSV hexcone, per pixel. Samples are
/// read as `[0, 255]`; out-of-range inputs are clamped first.
pub fn rotate_hue(img: &ImageTensor, turns: f64) -> ImageTensor {
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(CHANNELS) {
        let rgb = [px[0], px[1], px[2]].map(|v| v.clamp(0.0, MAX_SAMPLE) / MAX_SAMPLE);
        let [h, s, v] = rgb_to_hsv(rgb);
        data.extend(hsv_to_rgb([(h + turns).rem_euclid(1.0), s, v]).map(|c| c * MAX_SAMPLE));
    }
    ImageTensor { height: img.height, width: img.width, data }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target: Size,
    pub channel_mean: [f64; 3],
    pub channel_std: [f64; 3],
    pub flip_probability: f64,
    pub crop_scale_range: (f64, f64),
    /// In sample units out of 255.
    pub brightness_delta_max: f64,
    /// In hue turns.
    pub hue_delta_max: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target: Size::MODEL_INPUT,
            channel_mean: [0.0; 3],
            channel_std: [1.0; 3],
            flip_probability: 0.5,
            crop_scale_range: (0.8, 1.0),
            brightness_delta_max: 25.0,
            hue_delta_max: 0.05,
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    /// Config under which [`augment`] is the identity on target-sized input.
    pub fn identity(target: Size) -> Self {
        Self {
            target,
            flip_probability: 0.0,
            crop_scale_range: (1.0, 1.0),
            brightness_delta_max: 0.0,
            hue_delta_max: 0.0,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PreprocessError> {
        let config: Self = toml::from_str(text).map_err(|e| PreprocessError::InvalidConfig {
            field: "document",
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |field: &'static str, message: String| Err(PreprocessError::InvalidConfig { field, message });
        if self.target.width == 0 || self.target.height == 0 {
            return bad("target", "dimensions must be positive".into());
        }
        if self.target.width * self.target.height > 1 << 26 {
            return bad("target", "larger than 64 megapixels".into());
        }
        if self.channel_mean.iter().any(|m| !m.is_finite()) {
            return bad("channel_mean", "must be finite".into());
        }
        if let Err(PreprocessError::DegenerateChannel { channel, std }) = check_std(&self.channel_std) {
            return bad("channel_std", format!("channel {channel} is {std}, must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability", format!("{} outside [0, 1]", self.flip_probability));
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("crop_scale_range", format!("({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if !(self.brightness_delta_max.is_finite() && self.brightness_delta_max >= 0.0) {
            return bad("brightness_delta_max", "must be finite and >= 0".into());
        }
        if !(0.0..=0.5).contains(&self.hue_delta_max) {
            return bad("hue_delta_max", "must lie in [0, 0.5] turns".into());
        }
        Ok(())
    }
}

/// Random parameters drawn for one augmentation sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub crop_scale: f64,
    pub crop_top: usize,
    pub crop_left: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub flip: bool,
    pub brightness: f64,
    pub hue: f64,
}

/// Draws, in fixed order from `SplitMix64::stream(seed, sample_index)`: crop
/// scale, crop top, crop left, flip coin, brightness, hue. All six draws
/// happen whatever the knob settings, so changing one knob never shifts the
/// others.
pub fn draw_augment(
    height: usize,
    width: usize,
    config: &PreprocessConfig,
    sample_index: u64,
) -> AugmentDraw {
    let mut rng = SplitMix64::stream(config.seed, sample_index);
    let (lo, hi) = config.crop_scale_range;
    let crop_scale = lo + (hi - lo) * rng.next_f64();
    let side = |n: usize| ((crop_scale * n as f64).round() as usize).clamp(1, n);
    let (crop_height, crop_width) = (side(height), side(width));
    let crop_top = rng.below((height - crop_height + 1) as u64) as usize;
    let crop_left = rng.below((width - crop_width + 1) as u64) as usize;
    let flip = rng.next_f64() < config.flip_probability;
    let brightness = (2.0 * rng.next_f64() - 1.0) * config.brightness_delta_max;
    let hue = (2.0 * rng.next_f64() - 1.0) * config.hue_delta_max;
    AugmentDraw { crop_scale, crop_top, crop_left, crop_height, crop_width, flip, brightness, hue }
}

/// Crop (side scale from `crop_scale_range`) and resize to target, optional
/// horizontal flip, brightness shift, hue rotation, clamp to `[0, 255]`.
/// Deterministic in `(img, config.seed, sample_index)`.
pub fn augment(
    img: &ImageTensor,
    config: &PreprocessConfig,
    sample_index: u64,
) -> Result<ImageTensor, PreprocessError> {
    config.validate()?;
    let d = draw_augment(img.height, img.width, config, sample_index);
    let cropped = if d.crop_height == img.height && d.crop_width == img.width {
        img.clone()
    } else {
        img.crop(d.crop_top, d.crop_left, d.crop_height, d.crop_width)
    };
    let mut out = resize(&cropped, config.target)?;
    if d.flip {
        out = flip_horizontal(&out);
    }
    if d.brightness != 0.0 {
        out = adjust_brightness(&out, d.brightness);
    }
    if d.hue != 0.0 {
        out = rotate_hue(&out, d.hue);
    }
    Ok(out.map(|_, v| v.clamp(0.0, MAX_SAMPLE)))
}

/// Decodes PNG or binary/ASCII PPM bytes to an RGB tensor.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor, PreprocessError> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| PreprocessError::Decode(e.to_string()))?;
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(16_384);
    limits.max_image_height = Some(16_384);
    limits.max_alloc = Some(512 << 20);
    let mut reader = reader;
    reader.limits(limits);
    let rgb = reader.decode().map_err(|e| PreprocessError::Decode(e.to_string()))?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    ImageTensor::new(h as usize, w as usize, data)
}

/// Encodes as 8-bit RGB PNG, rounding and clamping samples.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>, PreprocessError> {
    let raw: Vec<u8> = img.data.iter().map(|v| v.round().clamp(0.0, MAX_SAMPLE) as u8).collect();
    let buffer = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| PreprocessError::Encode("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buffer
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| PreprocessError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
