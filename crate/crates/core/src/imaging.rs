//! Region cropping and base64 encoding of prompt attachments.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use image::codecs::jpeg::JpegEncoder;
use image::{ColorType, DynamicImage, ImageEncoder, RgbImage};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Origin, Region, RegionRecord};

pub const DEFAULT_JPEG_QUALITY: u8 = 90;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("region {region:?} has zero area")]
    ZeroArea { region: Region },
    #[error("region {region:?} does not intersect the {width}x{height} image")]
    EmptyIntersection { region: Region, width: u32, height: u32 },
    #[error("raster of {width}x{height}x{channels} needs {expected} bytes, got {found}")]
    BadRaster {
        width: u32,
        height: u32,
        channels: u8,
        expected: usize,
        found: usize,
    },
    #[error("failed to read image {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("image encoding failed: {0}")]
    Encode(#[from] image::ImageError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A decoded raster: row-major, top row first, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        let expected = width as usize * height as usize * channels as usize;
        if width == 0 || height == 0 || channels == 0 || pixels.len() != expected {
            return Err(ImagingError::BadRaster {
                width,
                height,
                channels,
                expected,
                found: pixels.len(),
            });
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_rgb(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        ImageBuffer {
            width,
            height,
            channels: 3,
            pixels: img.into_raw(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ImagingError> {
        let img = image::open(path).map_err(|source| ImagingError::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb(img.to_rgb8()))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, col: u32, row: u32) -> &[u8] {
        let c = self.channels as usize;
        let start = (row as usize * self.width as usize + col as usize) * c;
        &self.pixels[start..start + c]
    }

    pub fn flip_horizontal(&self) -> ImageBuffer {
        let c = self.channels as usize;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width as usize * c) {
            for px in row.chunks(c).rev() {
                pixels.extend_from_slice(px);
            }
        }
        ImageBuffer { pixels, ..*self }
    }

    /// JPEG bytes at the given quality (1-100). Grey and RGB rasters only;
    /// other channel counts are reduced to RGB first.
    pub fn to_jpeg(&self, quality: u8) -> Result<Vec<u8>, ImagingError> {
        let mut out = Cursor::new(Vec::new());
        let encoder = JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100));
        match self.channels {
            1 => encoder.write_image(&self.pixels, self.width, self.height, ColorType::L8.into())?,
            3 => encoder.write_image(&self.pixels, self.width, self.height, ColorType::Rgb8.into())?,
            _ => {
                let rgb = self.to_rgb();
                encoder.write_image(rgb.as_raw(), self.width, self.height, ColorType::Rgb8.into())?
            }
        }
        Ok(out.into_inner())
    }

    fn to_rgb(&self) -> RgbImage {
        let c = self.channels as usize;
        let mut rgb = Vec::with_capacity(self.width as usize * self.height as usize * 3);
        for px in self.pixels.chunks(c) {
            match c {
                1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
        RgbImage::from_raw(self.width, self.height, rgb).expect("raster size checked at construction")
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        DynamicImage::ImageRgb8(self.to_rgb())
    }
}

/// Pixel rectangle in top-left raster coordinates, after clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub col: u32,
    pub row: u32,
    pub width: u32,
    pub height: u32,
    /// Whether clamping to the image bounds changed the rectangle.
    pub clamped: bool,
}

/// Converts a region to raster coordinates and clamps it to the image.
pub fn resolve_region(region: &Region, width: u32, height: u32) -> Result<PixelRect, ImagingError> {
    if region.width == 0 || region.height == 0 {
        return Err(ImagingError::ZeroArea { region: *region });
    }
    let (w, h) = (region.width as i64, region.height as i64);
    let top = match region.origin {
        Origin::TopLeft => region.y,
        // y counts up from the bottom edge to the region's bottom-left corner.
        Origin::BottomLeft => height as i64 - region.y - h,
    };
    let x0 = region.x.max(0);
    let x1 = (region.x + w).min(width as i64);
    let y0 = top.max(0);
    let y1 = (top + h).min(height as i64);
    if x1 <= x0 || y1 <= y0 {
        return Err(ImagingError::EmptyIntersection {
            region: *region,
            width,
            height,
        });
    }
    let rect = PixelRect {
        col: x0 as u32,
        row: y0 as u32,
        width: (x1 - x0) as u32,
        height: (y1 - y0) as u32,
        clamped: (x1 - x0) != w || (y1 - y0) != h,
    };
    Ok(rect)
}

/// Copies the clamped intersection of `region` and the image.
pub fn crop_region(image: &ImageBuffer, region: &Region) -> Result<ImageBuffer, ImagingError> {
    let rect = resolve_region(region, image.width, image.height)?;
    if rect.clamped {
        tracing::warn!(
            ?region,
            image_width = image.width,
            image_height = image.height,
            "region exceeds image bounds; cropping the intersection"
        );
    }
    let c = image.channels as usize;
    let stride = image.width as usize * c;
    let mut pixels = Vec::with_capacity(rect.width as usize * rect.height as usize * c);
    for row in rect.row..rect.row + rect.height {
        let start = row as usize * stride + rect.col as usize * c;
        pixels.extend_from_slice(&image.pixels[start..start + rect.width as usize * c]);
    }
    Ok(ImageBuffer {
        width: rect.width,
        height: rect.height,
        channels: image.channels,
        pixels,
    })
}

/// Standard alphabet with padding.
pub fn encode_base64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_base64(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(text)
}

/// `{image_id}_{x}_{y}_{w}_{h}.jpg`
pub fn crop_file_name(record: &RegionRecord) -> String {
    format!("{}_{}.jpg", record.image_id, record.region.slug())
}

/// Where region crops come from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    /// Scene images on disk named `{image_id}.{extension}`.
    Directory {
        dir: PathBuf,
        extension: String,
        /// Crops are also written here for audit when set.
        audit_dir: Option<PathBuf>,
    },
    /// A deterministic 64x64 test pattern per image id, for offline runs
    /// without the image archive.
    Synthetic,
    /// No attachment at all.
    None,
}

/// A cropped region ready to attach to a prompt.
#[derive(Debug, Clone)]
pub struct PreparedCrop {
    pub jpeg: Vec<u8>,
    pub base64: String,
}

impl ImageSource {
    pub fn prepare(&self, record: &RegionRecord, quality: u8) -> Result<Option<PreparedCrop>, ImagingError> {
        let scene = match self {
            ImageSource::None => return Ok(None),
            ImageSource::Synthetic => synthetic_scene(&record.image_id),
            ImageSource::Directory { dir, extension, .. } => {
                ImageBuffer::load(&dir.join(format!("{}.{}", record.image_id, extension)))?
            }
        };
        let region = match self {
            // Annotations refer to the real archive; map them into the test pattern.
            ImageSource::Synthetic => Region {
                x: record.region.x.rem_euclid(48),
                y: record.region.y.rem_euclid(48),
                width: record.region.width.clamp(1, 16),
                height: record.region.height.clamp(1, 16),
                origin: record.region.origin,
            },
            _ => record.region,
        };
        let crop = crop_region(&scene, &region)?;
        let jpeg = crop.to_jpeg(quality)?;
        if let ImageSource::Directory {
            audit_dir: Some(audit), ..
        } = self
        {
            let path = audit.join(crop_file_name(record));
            std::fs::create_dir_all(audit).map_err(|source| ImagingError::Io {
                path: audit.clone(),
                source,
            })?;
            std::fs::write(&path, &jpeg).map_err(|source| ImagingError::Io { path, source })?;
        }
        let base64 = encode_base64(&jpeg);
        Ok(Some(PreparedCrop { jpeg, base64 }))
    }
}

fn synthetic_scene(image_id: &str) -> ImageBuffer {
    let digest = Sha256::digest(image_id.as_bytes());
    let mut pixels = Vec::with_capacity(64 * 64 * 3);
    for row in 0..64u32 {
        for col in 0..64u32 {
            let i = ((row / 8) * 8 + col / 8) as usize % digest.len();
            pixels.extend_from_slice(&[
                digest[i],
                digest[(i + 11) % digest.len()] ^ (row as u8 * 3),
                digest[(i + 23) % digest.len()] ^ (col as u8 * 3),
            ]);
        }
    }
    ImageBuffer {
        width: 64,
        height: 64,
        channels: 3,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numbered(width: u32, height: u32) -> ImageBuffer {
        let pixels = (0..width * height).map(|v| v as u8).collect();
        ImageBuffer::new(width, height, 1, pixels).unwrap()
    }

    fn region(x: i64, y: i64, w: u32, h: u32, origin: Origin) -> Region {
        Region::new(x, y, w, h, origin).unwrap()
    }

    #[test]
    fn full_frame_is_identity() {
        let img = numbered(4, 4);
        for origin in [Origin::TopLeft, Origin::BottomLeft] {
            assert_eq!(crop_region(&img, &region(0, 0, 4, 4, origin)).unwrap(), img);
        }
    }

    #[test]
    fn interior_block_top_left() {
        // 4x4 raster holding 0..16 row-major; rows 1-2, cols 1-2.
        let crop = crop_region(&numbered(4, 4), &region(1, 1, 2, 2, Origin::TopLeft)).unwrap();
        assert_eq!((crop.width(), crop.height()), (2, 2));
        assert_eq!(crop.pixels(), &[5, 6, 9, 10]);
    }

    #[test]
    fn bottom_left_origin_counts_from_bottom_row() {
        // y=0 with height 1 selects the last raster row.
        let crop = crop_region(&numbered(4, 4), &region(0, 0, 2, 1, Origin::BottomLeft)).unwrap();
        assert_eq!(crop.pixels(), &[12, 13]);
        let crop = crop_region(&numbered(4, 4), &region(2, 1, 2, 2, Origin::BottomLeft)).unwrap();
        assert_eq!(crop.pixels(), &[6, 7, 10, 11]);
    }

    #[test]
    fn disjoint_region_is_an_error() {
        let err = crop_region(&numbered(4, 4), &region(10, 10, 2, 2, Origin::TopLeft)).unwrap_err();
        assert!(matches!(err, ImagingError::EmptyIntersection { .. }));
    }

    #[test]
    fn zero_area_is_a_precondition_error() {
        let r = Region {
            x: 0,
            y: 0,
            width: 0,
            height: 2,
            origin: Origin::TopLeft,
        };
        assert!(matches!(
            crop_region(&numbered(4, 4), &r),
            Err(ImagingError::ZeroArea { .. })
        ));
    }

    #[test]
    fn oversized_region_is_clamped() {
        let crop = crop_region(&numbered(4, 4), &region(2, -1, 5, 2, Origin::TopLeft)).unwrap();
        assert_eq!((crop.width(), crop.height()), (2, 1));
        assert_eq!(crop.pixels(), &[2, 3]);
    }

    #[test]
    fn base64_vectors() {
        assert_eq!(encode_base64(b"Man"), "TWFu");
        assert_eq!(encode_base64(b""), "");
        assert_eq!(encode_base64(b"Ma"), "TWE=");
    }

    #[test]
    fn synthetic_source_yields_decodable_jpeg() {
        let record = RegionRecord {
            image_id: "2371".into(),
            region: region(120, 300, 90, 40, Origin::BottomLeft),
            english_caption: "a cat".into(),
            target_caption: None,
            language: crate::Language::Hi,
            split: crate::Split::Train,
        };
        let crop = ImageSource::Synthetic.prepare(&record, 90).unwrap().unwrap();
        assert_eq!(decode_base64(&crop.base64).unwrap(), crop.jpeg);
        let decoded = image::load_from_memory(&crop.jpeg).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (16, 16));
        let again = ImageSource::Synthetic.prepare(&record, 90).unwrap().unwrap();
        assert_eq!(again.base64, crop.base64);
        assert!(ImageSource::None.prepare(&record, 90).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn base64_round_trips(bytes in proptest::collection::vec(any::<u8>(), 0..1024)) {
            prop_assert_eq!(decode_base64(&encode_base64(&bytes)).unwrap(), bytes);
        }

        #[test]
        fn output_area_matches_clamped_extent(
            w in 1u32..12, h in 1u32..12,
            x in -15i64..15, y in -15i64..15,
            rw in 1u32..15, rh in 1u32..15,
            bottom in any::<bool>(),
        ) {
            let img = numbered(w, h);
            let origin = if bottom { Origin::BottomLeft } else { Origin::TopLeft };
            let r = region(x, y, rw, rh, origin);
            let top = if bottom { h as i64 - y - rh as i64 } else { y };
            let cw = (x + rw as i64).min(w as i64) - x.max(0);
            let ch = (top + rh as i64).min(h as i64) - top.max(0);
            match crop_region(&img, &r) {
                Ok(c) => {
                    prop_assert_eq!(c.width() as i64, cw);
                    prop_assert_eq!(c.height() as i64, ch);
                    prop_assert_eq!(c.pixels().len() as i64, cw * ch);
                }
                Err(ImagingError::EmptyIntersection { .. }) => prop_assert!(cw <= 0 || ch <= 0),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn crop_commutes_with_horizontal_flip(
            (w, h, x, y, rw, rh) in (1u32..8, 1u32..8).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), 0..w, 0..h).prop_flat_map(|(w, h, x, y)| {
                    (Just(w), Just(h), Just(x as i64), Just(y as i64), 1..=w - x, 1..=h - y)
                })
            }),
        ) {
            let img = numbered(w, h);
            let r = region(x, y, rw, rh, Origin::TopLeft);
            let mirrored = region(w as i64 - x - rw as i64, y, rw, rh, Origin::TopLeft);
            let a = crop_region(&img, &r).unwrap().flip_horizontal();
            let b = crop_region(&img.flip_horizontal(), &mirrored).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
