//! Binary PGM (P5) and PPM (P6) reading and writing.
//!
//! Images are normalized to `[0, 1]` by their maxval. Label maps are 8-bit
//! PGMs holding class indices with 255 meaning unlabeled. Probability
//! channels are exported as 16-bit PGMs scaled by 65535.

use std::fs;
use std::path::Path;

use super::{LabelMap, UNLABELED};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ImageStack};

/// A decoded netpbm raster: interleaved samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            _ => break,
        }
    }
}

fn read_uint(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize> {
    skip_ws_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("PNM header", format!("missing {field}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| Error::format("PNM header", format!("{field} out of range")))
}

/// Parses a P5 or P6 file held in memory.
pub fn read_pnm(bytes: &[u8]) -> Result<Pnm> {
    if bytes.len() < 2 {
        return Err(Error::format("PNM header", "file too short"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        m => {
            return Err(Error::format(
                "PNM header",
                format!("unsupported magic {:?}", String::from_utf8_lossy(m)),
            ))
        }
    };
    let mut pos = 2;
    let width = read_uint(bytes, &mut pos, "width")?;
    let height = read_uint(bytes, &mut pos, "height")?;
    let maxval = read_uint(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PNM header", "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PNM header", format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PNM header", "no whitespace after maxval")),
    }
    let n = width * height * channels;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::format(
            "PNM raster",
            format!("expected {need} bytes, found {}", raster.len()),
        ));
    }
    let samples: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(v) = samples.iter().find(|&&v| usize::from(v) > maxval) {
        return Err(Error::format(
            "PNM raster",
            format!("sample {v} exceeds maxval {maxval}"),
        ));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

/// Serializes to P5/P6 bytes.
pub fn write_pnm(img: &Pnm) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for &s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

fn read_file(path: &Path) -> Result<Pnm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pnm(&bytes)
}

fn write_file(path: &Path, img: &Pnm) -> Result<()> {
    fs::write(path, write_pnm(img)).map_err(|e| Error::io(path, e))
}

impl Pnm {
    /// Channel planes normalized to `[0, 1]`.
    pub fn to_stack(&self) -> Result<ImageStack> {
        let scale = f64::from(self.maxval);
        let planes = (0..self.channels)
            .map(|c| {
                let data = self
                    .samples
                    .iter()
                    .skip(c)
                    .step_by(self.channels)
                    .map(|&s| f64::from(s) / scale)
                    .collect();
                Grid2D::new(self.height, self.width, data)
            })
            .collect::<Result<Vec<_>>>()?;
        ImageStack::new(planes)
    }

    /// Quantizes a stack with values in `[0, 1]` to 8 bits.
    pub fn from_stack(img: &ImageStack) -> Result<Self> {
        let channels = img.num_channels();
        if channels != 1 && channels != 3 {
            return Err(Error::format(
                "image",
                format!("{channels} channels; PGM/PPM need 1 or 3"),
            ));
        }
        let (h, w) = (img.height(), img.width());
        let mut samples = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for ch in img.channels() {
                let v = ch.data()[i];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::format("image", format!("value {v} outside [0, 1]")));
                }
                samples.push((v * 255.0).round() as u16);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            channels,
            maxval: 255,
            samples,
        })
    }
}

pub fn load_image(path: &Path) -> Result<ImageStack> {
    read_file(path)?.to_stack()
}

pub fn save_image(img: &ImageStack, path: &Path) -> Result<()> {
    write_file(path, &Pnm::from_stack(img)?)
}

/// Reads a label PGM; fails if a labeled pixel is outside `0..num_classes`.
pub fn load_labels(path: &Path, num_classes: Option<usize>) -> Result<LabelMap> {
    let pnm = read_file(path)?;
    if pnm.channels != 1 || pnm.maxval > 255 {
        return Err(Error::format("label PGM", "must be an 8-bit single-channel P5"));
    }
    let map = LabelMap::new(
        pnm.height,
        pnm.width,
        pnm.samples.into_iter().map(|s| s as u8).collect(),
    )?;
    if let Some(k) = num_classes {
        map.check_classes(k)?;
    }
    Ok(map)
}

pub fn save_labels(labels: &LabelMap, num_classes: usize, path: &Path) -> Result<()> {
    if num_classes > usize::from(UNLABELED) {
        return Err(Error::format(
            "label PGM",
            format!("{num_classes} classes cannot be stored alongside the 255 sentinel"),
        ));
    }
    labels.check_classes(num_classes)?;
    let pnm = Pnm {
        width: labels.width(),
        height: labels.height(),
        channels: 1,
        maxval: 255,
        samples: labels.data().iter().map(|&l| u16::from(l)).collect(),
    };
    write_file(path, &pnm)
}

/// Quantizes a probability channel to 16 bits.
pub fn prob_channel_to_pnm(channel: &Grid2D) -> Result<Pnm> {
    let samples = channel
        .data()
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok((p * 65535.0).round() as u16)
            } else {
                Err(Error::format("probability", format!("value {p} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pnm {
        width: channel.width(),
        height: channel.height(),
        channels: 1,
        maxval: 65535,
        samples,
    })
}

pub fn save_prob_channel(channel: &Grid2D, path: &Path) -> Result<()> {
    write_file(path, &prob_channel_to_pnm(channel)?)
}

pub fn load_prob_channel(path: &Path) -> Result<Grid2D> {
    let pnm = read_file(path)?;
    if pnm.channels != 1 {
        return Err(Error::format("probability PGM", "must be single-channel"));
    }
    Ok(pnm.to_stack()?.channel(0).clone())
}
