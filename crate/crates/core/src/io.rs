//! Raster and sequence file formats.
//!
//! * Frames: 8/16-bit grayscale PNG or PGM (`P2`/`P5`), normalised linearly
//!   by the format's full-scale value.
//! * Label masks: 8-bit indexed PNG, palette black / red / yellow.
//! * Flow fields: `FLO1` + little-endian `u32` width/height + interleaved
//!   little-endian `f32` `(dx, dy)` in raster order.
//! * Sequence directories: `frames/%05d.png`, optional `labels/%05d.png`
//!   and a `manifest.txt` of `key = value` lines.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{FlowField, Frame, Label, LabelMask, Raster, Sequence};

/// RGB palette of label masks, indexed by [`Label`] discriminant.
pub const LABEL_PALETTE: [[u8; 3]; 3] = [[0, 0, 0], [255, 0, 0], [255, 255, 0]];

const FLOW_MAGIC: &[u8; 4] = b"FLO1";

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png_gray(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        decode_pgm(path, &bytes)
    } else {
        Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: "not a PNG or PGM file".to_string(),
        })
    }
}

fn png_error(path: &Path, err: png::DecodingError) -> Error {
    match err {
        png::DecodingError::IoError(e) => Error::io(path, e),
        other => Error::CorruptHeader {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    }
}

fn decode_png_gray(path: &Path, bytes: &[u8]) -> Result<Frame> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!("color type {:?}, expected grayscale", info.color_type),
        });
    }
    let bit_depth = info.bit_depth;
    if !matches!(bit_depth, png::BitDepth::Eight | png::BitDepth::Sixteen) {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!("bit depth {bit_depth:?}, expected 8 or 16"),
        });
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let out = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let buf = &buf[..out.buffer_size()];
    let data = match bit_depth {
        png::BitDepth::Eight => buf.iter().map(|&b| b as f32 / 255.0).collect(),
        _ => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
    };
    Frame::from_vec(width, height, data)
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Frame> {
    let corrupt = |reason: &str| Error::CorruptHeader {
        path: path.to_owned(),
        reason: reason.to_string(),
    };
    let binary = bytes[1] == b'5';
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("malformed PGM header field"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(corrupt("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!("PGM maxval {maxval} outside 1..=65535"),
        });
    }
    let n = width * height;
    let scale = maxval as f32;
    let raw: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(corrupt("missing separator after PGM header"));
        }
        let body = &bytes[pos + 1..];
        let bpp = if maxval < 256 { 1 } else { 2 };
        if body.len() < n * bpp {
            return Err(corrupt("PGM raster shorter than header dimensions"));
        }
        if bpp == 1 {
            body[..n].iter().map(|&b| b as usize).collect()
        } else {
            body[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
                .collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| corrupt("non-ASCII P2 body"))?;
        let vals: Vec<usize> = text
            .split_ascii_whitespace()
            .take(n)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt("malformed P2 sample"))?;
        if vals.len() < n {
            return Err(corrupt("PGM raster shorter than header dimensions"));
        }
        vals
    };
    if raw.iter().any(|&v| v > maxval) {
        return Err(corrupt("PGM sample exceeds maxval"));
    }
    Frame::from_vec(width, height, raw.into_iter().map(|v| v as f32 / scale).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn png_encode_error(path: &Path, err: png::EncodingError) -> Error {
    match err {
        png::EncodingError::IoError(e) => Error::io(path, e),
        other => Error::InvalidArgument(format!("{}: {other}", path.display())),
    }
}

/// Writes a frame as a 16-bit grayscale PNG.
pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut encoder = png::Encoder::new(create(path)?, frame.width() as u32, frame.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let data: Vec<u8> = frame
        .data()
        .iter()
        .flat_map(|&v| ((v * 65535.0).round() as u16).to_be_bytes())
        .collect();
    let mut writer = encoder.write_header().map_err(|e| png_encode_error(path, e))?;
    writer
        .write_image_data(&data)
        .map_err(|e| png_encode_error(path, e))?;
    writer.finish().map_err(|e| png_encode_error(path, e))
}

/// Writes a label mask as an indexed PNG with [`LABEL_PALETTE`].
pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut encoder = png::Encoder::new(create(path)?, mask.width() as u32, mask.height() as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(LABEL_PALETTE.concat());
    let data: Vec<u8> = mask.data().iter().map(|&l| l as u8).collect();
    let mut writer = encoder.write_header().map_err(|e| png_encode_error(path, e))?;
    writer
        .write_image_data(&data)
        .map_err(|e| png_encode_error(path, e))?;
    writer.finish().map_err(|e| png_encode_error(path, e))
}

/// Reads a mask written by [`save_mask`].
pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(&bytes[..]);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!(
                "{:?}/{:?}, expected 8-bit indexed",
                info.color_type, info.bit_depth
            ),
        });
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size()];
    let out = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let labels = buf[..out.buffer_size()]
        .iter()
        .map(|&b| Label::try_from(b))
        .collect::<Result<Vec<_>>>()?;
    Raster::from_vec(width, height, labels)
}

/// Decodes an indexed mask PNG to RGB triples via its palette (for checks).
pub fn mask_png_rgb(path: impl AsRef<Path>) -> Result<Vec<[u8; 3]>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(&bytes[..]);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let out = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let step = out.color_type.samples();
    Ok(buf[..out.buffer_size()]
        .chunks_exact(step)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}

pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(12 + 8 * flow.data().len());
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    for v in flow.data() {
        buf.extend_from_slice(&v[0].to_le_bytes());
        buf.extend_from_slice(&v[1].to_le_bytes());
    }
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut r| r.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptHeader {
        path: path.to_owned(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(corrupt("missing FLO1 magic"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != width * height * 8 {
        return Err(corrupt("flow body length does not match header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            ]
        })
        .collect();
    FlowField::from_vec(width, height, data)
}

/// `key = value` manifest of a sequence directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub frame_count: usize,
    pub frame_period: f64,
    /// Additional entries in file order.
    pub extra: Vec<(String, String)>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn render(&self) -> String {
        let mut s = format!(
            "frames = {}\nframe_period = {}\n",
            self.frame_count, self.frame_period
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn parse(path: &Path, text: &str) -> Result<Manifest> {
        let corrupt = |reason: String| Error::CorruptHeader {
            path: path.to_owned(),
            reason,
        };
        let mut frame_count = None;
        let mut frame_period = None;
        let mut extra = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("manifest line without '=': {line}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "frames" => frame_count = Some(v.parse().map_err(|_| corrupt(format!("bad frame count {v}")))?),
                "frame_period" => {
                    frame_period = Some(v.parse().map_err(|_| corrupt(format!("bad frame period {v}")))?)
                }
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Manifest {
            frame_count: frame_count.ok_or_else(|| corrupt("manifest lacks frames".into()))?,
            frame_period: frame_period.ok_or_else(|| corrupt("manifest lacks frame_period".into()))?,
            extra,
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:05}.png"))
}

pub fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("labels").join(format!("{index:05}.png"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes frames, labels (when present) and the manifest under `dir`.
pub fn write_sequence(seq: &Sequence, dir: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(&dir.join("frames"))?;
    for (i, f) in seq.frames().iter().enumerate() {
        save_frame(f, frame_path(dir, i))?;
    }
    if let Some(labels) = seq.labels() {
        create_dir(&dir.join("labels"))?;
        for (i, l) in labels.iter().enumerate() {
            save_mask(l, label_path(dir, i))?;
        }
    }
    let manifest = Manifest {
        frame_count: seq.len(),
        frame_period: seq.frame_period(),
        extra: extra.to_vec(),
    };
    write_text(dir.join(MANIFEST_FILE), &manifest.render())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse(&path, &text)
}

/// Loads a sequence directory; labels are read when `labels/` exists.
pub fn read_sequence(dir: impl AsRef<Path>) -> Result<(Sequence, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let frames = (0..manifest.frame_count)
        .map(|i| load_frame(frame_path(dir, i)))
        .collect::<Result<Vec<_>>>()?;
    let labels = if dir.join("labels").is_dir() {
        Some(
            (0..manifest.frame_count)
                .map(|i| load_mask(label_path(dir, i)))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let seq = Sequence::new(frames, labels, manifest.frame_period)?;
    Ok((seq, manifest))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm8(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n# test\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn pgm_extremes_and_midpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, pgm8(2, 2, &[255, 255, 255, 255])).unwrap();
        assert!(load_frame(&p).unwrap().data().iter().all(|&v| v == 1.0));
        fs::write(&p, pgm8(2, 1, &[0, 0])).unwrap();
        assert!(load_frame(&p).unwrap().data().iter().all(|&v| v == 0.0));
        fs::write(&p, pgm8(1, 1, &[128])).unwrap();
        let v = load_frame(&p).unwrap().data()[0];
        assert!((v - 0.501_960_8).abs() < 1e-6);
    }

    #[test]
    fn ascii_pgm_and_16_bit_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, "P2\n2 1\n10\n0 5\n").unwrap();
        assert_eq!(load_frame(&p).unwrap().data(), &[0.0, 0.5]);
        let mut v = b"P5 1 1 65535\n".to_vec();
        v.extend_from_slice(&65535u16.to_be_bytes());
        fs::write(&p, v).unwrap();
        assert_eq!(load_frame(&p).unwrap().data(), &[1.0]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_frame(dir.path().join("nope.png")),
            Err(Error::MissingFile(_))
        ));
        let p = dir.path().join("bad.pgm");
        fs::write(&p, "P5\nx y\n255\n").unwrap();
        assert!(matches!(load_frame(&p), Err(Error::CorruptHeader { .. })));
        fs::write(&p, "GIF89a").unwrap();
        assert!(matches!(load_frame(&p), Err(Error::UnsupportedFormat { .. })));

        // an RGB png is well-formed but unsupported
        let rgb = dir.path().join("rgb.png");
        let mut enc = png::Encoder::new(File::create(&rgb).unwrap(), 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        assert!(matches!(load_frame(&rgb), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn png_8_bit_gray_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let mut enc = png::Encoder::new(File::create(&p).unwrap(), 3, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[0, 128, 255]).unwrap();
        let f = load_frame(&p).unwrap();
        assert_eq!(f.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn mask_palette_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let one = Raster::filled(1, 1, Label::Vessel);
        save_mask(&one, &p).unwrap();
        assert_eq!(mask_png_rgb(&p).unwrap(), vec![[255, 0, 0]]);

        let bg = Raster::filled(3, 2, Label::Background);
        save_mask(&bg, &p).unwrap();
        assert!(mask_png_rgb(&p).unwrap().iter().all(|&c| c == [0, 0, 0]));

        let mixed = Raster::from_fn(5, 4, |x, y| Label::ALL[(x + 2 * y) % 3]);
        save_mask(&mixed, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), mixed);
    }

    #[test]
    fn save_mask_to_missing_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        let m = Raster::filled(1, 1, Label::Vessel);
        assert!(save_mask(&m, dir.path().join("no/such/dir/m.png")).is_err());
    }

    #[test]
    fn flow_file_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.flo");
        let flow = FlowField::from_fn(3, 2, |x, y| [x as f32 + 0.25, -(y as f32)]);
        write_flow(&flow, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"FLO1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0.25);
        assert_eq!(read_flow(&p).unwrap(), flow);
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(read_flow(&p), Err(Error::CorruptHeader { .. })));
    }

    #[test]
    fn sequence_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![Frame::constant(4, 3, 0.25), Frame::constant(4, 3, 1.0)];
        let labels = vec![
            Raster::filled(4, 3, Label::Catheter),
            Raster::filled(4, 3, Label::Background),
        ];
        let seq = Sequence::new(frames, Some(labels.clone()), 0.066).unwrap();
        write_sequence(&seq, dir.path(), &[("onset".into(), "4".into())]).unwrap();
        let (back, manifest) = read_sequence(dir.path()).unwrap();
        assert_eq!(manifest.frame_count, 2);
        assert_eq!(manifest.get("onset"), Some("4"));
        assert_eq!(back.labels().unwrap(), &labels[..]);
        assert_eq!(back.frames()[1].data(), seq.frames()[1].data());
    }
}
