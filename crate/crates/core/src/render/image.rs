//! Linear float images, display encoding and file output.

use crate::math::Vec3;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// Linear RGB, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec3>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![Vec3::ZERO; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Vec3 {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: Vec3) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    pub fn mean(&self) -> Vec3 {
        self.pixels.iter().fold(Vec3::ZERO, |a, &p| a + p) / self.pixels.len().max(1) as f64
    }

    pub fn is_valid(&self) -> bool {
        self.pixels.iter().all(|p| p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.z >= 0.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|p| p.max_component() > 0.0).count()
    }
}

/// 8-bit sRGB image, row-major RGB triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Exposure scale, clamp to [0, 1], sRGB transfer, round to 8 bits.
pub fn tonemap(buffer: &ImageBuffer, exposure: f64) -> Rgb8Image {
    let mut data = Vec::with_capacity(buffer.pixels.len() * 3);
    for p in &buffer.pixels {
        for c in [p.x, p.y, p.z] {
            let v = (c * exposure).clamp(0.0, 1.0);
            let v = if v.is_nan() { 0.0 } else { v };
            data.push((srgb_encode(v) * 255.0).round() as u8);
        }
    }
    Rgb8Image { width: buffer.width, height: buffer.height, data }
}

pub fn write_png_rgb(path: &Path, image: &Rgb8Image) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width, image.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(std::io::Error::other)?;
    writer.write_image_data(&image.data).map_err(std::io::Error::other)?;
    writer.finish().map_err(std::io::Error::other)
}

/// Reads an 8-bit PNG as RGB. Gray and alpha channels are expanded or dropped.
pub fn read_png_rgb(path: &Path) -> std::io::Result<Rgb8Image> {
    let file = std::fs::File::open(path)?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(std::io::Error::other)?;
    let size = reader.output_buffer_size().ok_or_else(|| std::io::Error::other("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(std::io::Error::other)?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(std::io::Error::other(format!("unsupported PNG color type {other:?}"))),
    };
    let mut data = Vec::with_capacity((info.width * info.height * 3) as usize);
    for y in 0..info.height as usize {
        let row = &buf[y * info.line_size..];
        for x in 0..info.width as usize {
            let px = &row[x * channels..];
            match channels {
                1 | 2 => data.extend_from_slice(&[px[0]; 3]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
    }
    Ok(Rgb8Image { width: info.width, height: info.height, data })
}

/// Portable float map, little-endian, rows stored bottom to top.
pub fn write_pfm(path: &Path, buffer: &ImageBuffer) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "PF\n{} {}\n-1.0\n", buffer.width, buffer.height)?;
    for y in (0..buffer.height).rev() {
        for x in 0..buffer.width {
            let p = buffer.get(x, y);
            for c in [p.x, p.y, p.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()
}

pub fn read_pfm(path: &Path) -> std::io::Result<ImageBuffer> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "PF" {
        return Err(bad("only color PFM is supported"));
    }
    let width: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let need = (width * height * 12) as usize;
    if bytes.len() < pos + need {
        return Err(bad("truncated PFM data"));
    }
    let mut img = ImageBuffer::new(width, height);
    let mut it = bytes[pos..pos + need].chunks_exact(4).map(|c| {
        let b = [c[0], c[1], c[2], c[3]];
        (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
    });
    for y in (0..height).rev() {
        for x in 0..width {
            let (r, g, b) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            img.set(x, y, Vec3::new(r, g, b));
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: f64) -> ImageBuffer {
        let mut b = ImageBuffer::new(4, 3);
        b.pixels.iter_mut().for_each(|p| *p = Vec3::splat(v));
        b
    }

    #[test]
    fn tonemap_endpoints() {
        assert!(tonemap(&uniform(0.0), 1.0).data.iter().all(|&v| v == 0));
        assert!(tonemap(&uniform(1.0), 1.0).data.iter().all(|&v| v == 255));
        assert!(tonemap(&uniform(7.0), 1.0).data.iter().all(|&v| v == 255));
    }

    #[test]
    fn tonemap_mid_gray() {
        // 255 * (1.055 * 0.214^(1/2.4) - 0.055) = 127.49
        assert!(tonemap(&uniform(0.2140), 1.0).data.iter().all(|&v| v == 127));
        // exposure scales before encoding
        assert_eq!(tonemap(&uniform(0.1070), 2.0), tonemap(&uniform(0.2140), 1.0));
    }

    #[test]
    fn tonemap_monotone() {
        let mut prev = 0u8;
        for i in 0..=1000 {
            let v = tonemap(&uniform(i as f64 / 800.0), 1.0).data[0];
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn pfm_round_trip() {
        let mut b = ImageBuffer::new(5, 2);
        for (i, p) in b.pixels.iter_mut().enumerate() {
            *p = Vec3::new(i as f64, 0.5, 0.25 * i as f64);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        write_pfm(&path, &b).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), b);
    }

    #[test]
    fn png_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = tonemap(&uniform(0.5), 1.0);
        write_png_rgb(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        assert_eq!(read_png_rgb(&path).unwrap(), img);
    }
}
