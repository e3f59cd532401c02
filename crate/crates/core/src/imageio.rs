//! Grayscale image files (PGM, PNG) and point-data CSV files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::system::DataSet;

/// Row-major grayscale image with intensities in `[0, 1]`.
///
/// Pixel `(r, c)` is stored at `r * cols + c`, which is the node index of
/// grid node `(i, j) = (c, r)` on an image grid, so the pixel vector doubles
/// as a node vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!("image must be non-empty, got {rows}x{cols}")));
        }
        if pixels.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", rows * cols),
                found: format!("{} pixels", pixels.len()),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!("pixel {i} = {} outside [0, 1]", pixels[i])));
        }
        Ok(Self { rows, cols, pixels })
    }

    /// Builds an image from arbitrary values, clipping them into `[0, 1]`.
    pub fn from_clipped(rows: usize, cols: usize, mut values: Vec<f64>) -> Result<Self> {
        values.iter_mut().for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(rows, cols, values)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.cols + c]
    }

    /// The matching grid on the unit square, one node per pixel.
    pub fn grid(&self) -> Result<Grid> {
        crate::grid::make_image_grid(self.rows, self.cols)
    }

    /// 8-bit levels with round-half-away-from-zero.
    pub fn quantized(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }
}

pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads a PGM (P2 or P5) or 8-bit grayscale PNG, detected from the file's
/// leading bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        return decode_png(bytes);
    }
    match bytes.get(..2) {
        Some(b"P2") | Some(b"P5") => decode_pgm(bytes),
        Some(b"P3") | Some(b"P6") => Err(Error::ColorImage("PPM input".into())),
        Some(b"P1") | Some(b"P4") => Err(Error::UnsupportedFormat("PBM bitmap".into())),
        _ => Err(Error::UnsupportedFormat("expected a PGM (P2/P5) or PNG file".into())),
    }
}

/// Whitespace-separated header tokens with `#` comments, tracking the byte
/// offset just past the last token read.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmHeader<'_> {
    fn next_token(&mut self) -> Option<&str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }

    fn next_number(&mut self, what: &str) -> Result<usize> {
        let tok = self
            .next_token()
            .ok_or_else(|| Error::CorruptHeader(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::CorruptHeader(format!("{what} '{tok}' is not a nonnegative integer")))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let binary = &bytes[..2] == b"P5";
    let mut h = PnmHeader { bytes, pos: 2 };
    let cols = h.next_number("width")?;
    let rows = h.next_number("height")?;
    let maxval = h.next_number("maxval")?;
    if rows == 0 || cols == 0 {
        return Err(Error::CorruptHeader(format!("zero image dimension {cols}x{rows}")));
    }
    if maxval == 0 {
        return Err(Error::CorruptHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("16-bit PGM (maxval {maxval})")));
    }
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::CorruptHeader("image dimensions overflow".into()))?;
    let scale = maxval as f64;
    let levels: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = h.pos + 1;
        let raster = bytes
            .get(start..start + count)
            .ok_or_else(|| Error::CorruptHeader(format!("raster shorter than {count} bytes")))?;
        raster.iter().map(|&b| b as usize).collect()
    } else {
        (0..count)
            .map(|k| {
                h.next_token()
                    .ok_or_else(|| Error::CorruptHeader(format!("raster ends after {k} of {count} samples")))?
                    .parse()
                    .map_err(|_| Error::CorruptHeader(format!("sample {k} is not an integer")))
            })
            .collect::<Result<_>>()?
    };
    if let Some(k) = levels.iter().position(|&v| v > maxval) {
        return Err(Error::CorruptHeader(format!("sample {k} exceeds maxval {maxval}")));
    }
    Image::new(rows, cols, levels.iter().map(|&v| v as f64 / scale).collect())
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::CorruptHeader(format!("png: {e}")))?;
    let info = reader.info();
    let (cols, rows) = (info.width as usize, info.height as usize);
    match info.color_type {
        png::ColorType::Grayscale => {}
        png::ColorType::GrayscaleAlpha => {
            return Err(Error::UnsupportedFormat("grayscale PNG with alpha channel".into()))
        }
        other => return Err(Error::ColorImage(format!("PNG color type {other:?}"))),
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!("PNG bit depth {:?}", info.bit_depth)));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptHeader("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::CorruptHeader(format!("png: {e}")))?;
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = &buf[r * frame.line_size..r * frame.line_size + cols];
        pixels.extend(line.iter().map(|&b| b as f64 / 255.0));
    }
    Image::new(rows, cols, pixels)
}

/// Writes binary PGM (`.pgm`) or 8-bit grayscale PNG (`.png`), chosen by extension.
pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "pgm" => encode_pgm(image),
        "png" => encode_png(image)?,
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "cannot infer output format from '{}'; use .pgm or .png",
                path.display()
            )))
        }
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols, image.rows).into_bytes();
    out.extend(image.quantized());
    out
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.cols as u32, image.rows as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png: {e}")))?;
        writer
            .write_image_data(&image.quantized())
            .map_err(|e| Error::InvalidArgument(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Reads scattered data from a CSV with header `x,y,z`. Every point is included.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<DataSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(BufReader::new(file))
}

pub fn parse_points_csv<R: std::io::Read>(reader: R) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != ["x", "y", "z"] {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header x,y,z, found {}", names.join(",")),
        });
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_error(&e, line)
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize, name: &str| -> Result<f64> {
            let raw = record.get(k).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv {
                    line,
                    message: format!("{name} value '{raw}' is not a finite number"),
                })
        };
        points.push(Point::new(field(0, "x")?, field(1, "y")?));
        values.push(field(2, "z")?);
    }
    DataSet::new(points, values)
}

fn csv_error(e: &csv::Error, line: u64) -> Error {
    Error::Csv {
        line,
        message: e.to_string(),
    }
}

/// Writes `x,y,value` for every node of `grid`.
pub fn write_grid_csv<W: Write>(grid: &Grid, values: &[f64], w: W) -> Result<()> {
    if values.len() != grid.node_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} node values", grid.node_count()),
            found: values.len().to_string(),
        });
    }
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Stream(std::io::Error::other(e));
    out.write_record(["x", "y", "value"]).map_err(io)?;
    for (node, v) in values.iter().enumerate() {
        let p = grid.node_point(node);
        out.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])
            .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_grid_csv_file(grid: &Grid, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_grid_csv(grid, values, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascii_pgm_divides_by_maxval() {
        let img = decode_image(b"P2\n2 2\n255\n0 128\n255 64\n").unwrap();
        assert_eq!((img.rows(), img.cols()), (2, 2));
        assert_eq!(img.pixels(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn pgm_comments_and_small_maxval() {
        let img = decode_image(b"P2 # comment\n# another\n3 1 # w h\n4\n0 2 4").unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn binary_and_ascii_agree() {
        let mut p5 = b"P5\n2 2\n255\n".to_vec();
        p5.extend([0u8, 128, 255, 64]);
        assert_eq!(
            decode_image(&p5).unwrap(),
            decode_image(b"P2\n2 2\n255\n0 128\n255 64\n").unwrap()
        );
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_image(b"P6\n1 1\n255\n\0\0\0"), Err(Error::ColorImage(_))));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_image(b"P2\n2 x\n255\n"), Err(Error::CorruptHeader(_))));
        assert!(matches!(decode_image(b"P2\n2 2\n255\n1 2 3"), Err(Error::CorruptHeader(_))));
        assert!(matches!(decode_image(b"P5\n2 2\n255\n\0\0"), Err(Error::CorruptHeader(_))));
        assert!(matches!(decode_image(b"P2\n1 1\n65535\n7"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_image(b"P2\n1 1\n9\n10"), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn png_roundtrip_and_rejections() {
        let img = Image::new(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        assert_eq!((back.rows(), back.cols()), (2, 3));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 1.0 / 510.0);
        }

        let mut rgb = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut rgb, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        }
        assert!(matches!(decode_image(&rgb), Err(Error::ColorImage(_))));

        let mut deep = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut deep, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[1, 2]).unwrap();
        }
        assert!(matches!(decode_image(&deep), Err(Error::UnsupportedFormat(_))));

        let mut truncated = encode_png(&img).unwrap();
        truncated.truncate(20);
        assert!(matches!(decode_image(&truncated), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn constant_half_writes_level_128() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(4, 5, 0.5).unwrap();
        for name in ["half.pgm", "half.png"] {
            let path = dir.path().join(name);
            write_image(&img, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert!(back.pixels().iter().all(|&p| p == 128.0 / 255.0));
        }
        assert!(matches!(write_image(&img, dir.path().join("x.tif")), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(read_image(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }

    #[test]
    fn points_csv() {
        let data = parse_points_csv("x,y,z\n0,0,1\n0.5,0.5,2\n1,1,3\n".as_bytes()).unwrap();
        assert_eq!(data.len(), 3);
        assert!(data.mask().iter().all(|&m| m));
        assert_eq!(data.values(), &[1.0, 2.0, 3.0]);

        match parse_points_csv("x,y,z\n0,0,abc\n".as_bytes()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_points_csv("a,b,c\n1,2,3\n".as_bytes()), Err(Error::Csv { line: 1, .. })));
        assert!(matches!(
            parse_points_csv("x,y,z\n1,2,3\n1,2\n".as_bytes()),
            Err(Error::Csv { line: 3, .. })
        ));
    }

    #[test]
    fn grid_csv_has_one_row_per_node() {
        let grid = crate::grid::make_image_grid(2, 3).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&grid, &[0.0; 6], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("x,y,value\n0,0,0\n"));
    }

    proptest! {
        #[test]
        fn roundtrip_error_within_half_level(levels in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let img = Image::new(3, 4, levels).unwrap();
            for bytes in [encode_pgm(&img), encode_png(&img).unwrap()] {
                let back = decode_image(&bytes).unwrap();
                for (a, b) in img.pixels().iter().zip(back.pixels()) {
                    prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
                }
            }
        }
    }
}
