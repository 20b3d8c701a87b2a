//! RGB buffers, binary PPM (P6) I/O and entity highlight rendering.

use std::io::{self, Read, Write};

use crate::corpus::EntityRegion;

/// Eight saturated colors; `color_index` is taken modulo the palette size.
pub const PALETTE: [[u8; 3]; 8] = [
    [255, 0, 0],
    [0, 200, 0],
    [0, 64, 255],
    [255, 220, 0],
    [255, 0, 255],
    [0, 230, 230],
    [255, 128, 0],
    [128, 0, 255],
];

pub fn palette_color(color_index: u32) -> [u8; 3] {
    PALETTE[color_index as usize % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("region {entity_id} bbox {bbox:?} outside {width}x{height} image")]
    OutOfBounds {
        entity_id: String,
        bbox: [u32; 4],
        width: u32,
        height: u32,
    },
    #[error("highlight thickness must be positive")]
    ZeroThickness,
    #[error("invalid PPM: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Writes `P6\n<w> <h>\n255\n` followed by raw RGB bytes.
    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            // whitespace and comments between header fields
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Format("truncated header".into()));
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if header[0] != "P6" {
            return Err(ImageError::Format(format!(
                "magic {:?}, expected P6",
                header[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| ImageError::Format(format!("bad header number {s:?}")))
        };
        let (width, height, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
        if maxval != 255 {
            return Err(ImageError::Format(format!("maxval {maxval} unsupported")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width as usize * height as usize * 3;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| ImageError::Format("raster shorter than header claims".into()))?;
        Ok(Self {
            width,
            height,
            data: raster.to_vec(),
        })
    }
}

/// Draws a `thickness`-pixel outline just inside each region's box in its
/// palette color. Pixels inside the outline are left untouched.
pub fn render_highlights(
    image: &RgbImage,
    regions: &[EntityRegion],
    thickness: u32,
) -> Result<RgbImage, ImageError> {
    if thickness == 0 {
        return Err(ImageError::ZeroThickness);
    }
    for r in regions {
        let [x0, y0, x1, y1] = r.bbox;
        if x0 >= x1 || y0 >= y1 || x1 > image.width || y1 > image.height {
            return Err(ImageError::OutOfBounds {
                entity_id: r.entity_id.clone(),
                bbox: r.bbox,
                width: image.width,
                height: image.height,
            });
        }
    }
    let mut out = image.clone();
    for r in regions {
        let [x0, y0, x1, y1] = r.bbox;
        let color = palette_color(r.color_index);
        for y in y0..y1 {
            for x in x0..x1 {
                let on_border = x < x0.saturating_add(thickness)
                    || x + thickness >= x1
                    || y < y0.saturating_add(thickness)
                    || y + thickness >= y1;
                if on_border {
                    out.set_pixel(x, y, color);
                }
            }
        }
    }
    Ok(out)
}
