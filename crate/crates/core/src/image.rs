//! Image containers and the on-disk raster formats: 8-bit PNG for color
//! images and masks, little-endian PFM for depth and uncertainty grids.
//!
//! PNG values are used as raw `v / 255` floats; no sRGB decoding is applied.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &ImageRgb) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Single channel as a grid.
    pub fn channel(&self, c: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p[c]).collect(),
        }
    }

    pub fn luma(&self) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }
}

/// Scalar raster (depth, uncertainty, transmittance, masks as 0/1).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Grid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png_rgb(path: &Path, img: &ImageRgb) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().flat_map(|p| p.map(quantize)).collect();
    write_png(path, img.width, img.height, png::ColorType::Rgb, &bytes)
}

pub fn write_png_gray(path: &Path, grid: &Grid) -> Result<()> {
    let bytes: Vec<u8> = grid.data.iter().map(|&v| quantize(v)).collect();
    write_png(path, grid.width, grid.height, png::ColorType::Grayscale, &bytes)
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok((info.width as usize, info.height as usize, channels, buf))
}

pub fn read_png_rgb(path: &Path) -> Result<ImageRgb> {
    let (w, h, ch, buf) = read_png(path)?;
    let data = buf
        .chunks_exact(ch)
        .map(|px| match ch {
            1 | 2 => [px[0] as f64 / 255.0; 3],
            _ => [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0],
        })
        .collect();
    Ok(ImageRgb {
        width: w,
        height: h,
        data,
    })
}

/// Mask from an 8-bit PNG: any nonzero first channel is `true`.
pub fn read_png_mask(path: &Path) -> Result<Mask> {
    let (w, h, ch, buf) = read_png(path)?;
    Ok(Mask {
        width: w,
        height: h,
        data: buf.chunks_exact(ch).map(|px| px[0] != 0).collect(),
    })
}

pub fn write_png_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, mask.width, mask.height, png::ColorType::Grayscale, &bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Single-channel little-endian PFM (`Pf`), rows bottom-to-top as the format requires.
pub fn write_pfm(path: &Path, grid: &Grid) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "Pf\n{} {}\n-1.0\n", grid.width, grid.height).map_err(io)?;
    for row in (0..grid.height).rev() {
        for x in 0..grid.width {
            w.write_all(&(grid.get(x, row) as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Grid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>, n: usize| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            return Err(Error::Parse {
                line: n,
                message: "unexpected end of PFM header".into(),
            });
        }
        Ok(line.trim().to_string())
    };
    let magic = next_line(&mut r, 1)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("bad PFM magic {other:?}"),
            })
        }
    };
    let dims = next_line(&mut r, 2)?;
    let parsed: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: 2,
            message: format!("bad PFM dimensions {dims:?}"),
        })?;
    let [width, height] = parsed[..] else {
        return Err(Error::Parse {
            line: 2,
            message: format!("bad PFM dimensions {dims:?}"),
        });
    };
    let scale_line = next_line(&mut r, 3)?;
    let scale: f64 = scale_line.parse().map_err(|_| Error::Parse {
        line: 3,
        message: format!("bad PFM scale {scale_line:?}"),
    })?;
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = vec![0.0; width * height];
    for row in 0..height {
        let src_row = height - 1 - row;
        for x in 0..width {
            // Color PFMs collapse to their first channel.
            data[row * width + x] = vals[(src_row * width + x) * channels] as f64;
        }
    }
    Ok(Grid {
        width,
        height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_preserves_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let g = Grid {
            width: 3,
            height: 2,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.5, -6.25],
        };
        write_pfm(&p, &g).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), g);
    }

    #[test]
    fn pfm_bad_magic_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        std::fs::write(&p, b"P6\n1 1\n-1\n").unwrap();
        match read_pfm(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        let img = ImageRgb {
            width: 2,
            height: 1,
            data: vec![[0.0, 0.5, 1.0], [1.2, -0.1, 0.25]],
        };
        write_png_rgb(&p, &img).unwrap();
        let back = read_png_rgb(&p).unwrap();
        assert_eq!(back.data[0], [0.0, 128.0 / 255.0, 1.0]);
        assert_eq!(back.data[1], [1.0, 0.0, 64.0 / 255.0]);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask {
            width: 2,
            height: 2,
            data: vec![true, false, false, true],
        };
        write_png_mask(&p, &m).unwrap();
        assert_eq!(read_png_mask(&p).unwrap(), m);
    }
}
