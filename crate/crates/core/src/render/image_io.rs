//! PPM (P6) and little-endian PFM image dumps.

use super::{DepthMap, NormalMap, RgbImage};
use std::io::{BufRead, Write};

pub fn write_ppm<W: Write>(img: &RgbImage, mut w: W) -> std::io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let mut bytes = Vec::with_capacity(img.data.len() * 3);
    for px in &img.data {
        for c in px {
            bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes)
}

fn write_pfm<W: Write>(
    mut w: W,
    magic: &str,
    width: usize,
    height: usize,
    channels: usize,
    sample: impl Fn(usize, usize, usize) -> f32,
) -> std::io::Result<()> {
    // Negative scale marks little-endian data; rows run bottom to top.
    write!(w, "{magic}\n{width} {height}\n-1.0\n")?;
    let mut bytes = Vec::with_capacity(width * height * channels * 4);
    for row in (0..height).rev() {
        for col in 0..width {
            for ch in 0..channels {
                bytes.extend_from_slice(&sample(col, row, ch).to_le_bytes());
            }
        }
    }
    w.write_all(&bytes)
}

pub fn write_pfm_gray<W: Write>(img: &DepthMap, w: W) -> std::io::Result<()> {
    write_pfm(w, "Pf", img.width, img.height, 1, |c, r, _| img.get(c, r) as f32)
}

pub fn write_pfm_rgb<W: Write>(img: &NormalMap, w: W) -> std::io::Result<()> {
    write_pfm(w, "PF", img.width, img.height, 3, |c, r, ch| img.get(c, r)[ch] as f32)
}

/// Returns `(width, height, channels, samples)` with rows top to bottom.
pub fn read_pfm<R: BufRead>(mut r: R) -> std::io::Result<(usize, usize, usize, Vec<f32>)> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut line = String::new();
    r.read_line(&mut line)?;
    let channels = match line.trim() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("not a PFM file")),
    };
    line.clear();
    r.read_line(&mut line)?;
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad dimensions")))
        .collect::<Result<_, _>>()?;
    let [width, height] = dims[..] else {
        return Err(bad("bad dimensions"));
    };
    line.clear();
    r.read_line(&mut line)?;
    let scale: f32 = line.trim().parse().map_err(|_| bad("bad scale"))?;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw)?;
    let value = |i: usize| {
        let b = [raw[4 * i], raw[4 * i + 1], raw[4 * i + 2], raw[4 * i + 3]];
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut out = vec![0.0; width * height * channels];
    for row in 0..height {
        let src_row = height - 1 - row;
        for k in 0..width * channels {
            out[row * width * channels + k] = value(src_row * width * channels + k);
        }
    }
    Ok((width, height, channels, out))
}
