//! Raster file format for image stacks and adversarial-example caches.
//!
//! Layout: 8-byte magic `ADVRAST1`, then a u32-le length-prefixed UTF-8 JSON
//! header `{count, height, width, channels, dtype, labels_present}`, then the
//! body as little-endian f32 in image-major row-major order, followed by
//! u32-le labels when present. All pixel values lie in [0,1].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ADVRAST1";

#[derive(Debug, Serialize, Deserialize)]
struct RasterHeader {
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    dtype: String,
    labels_present: bool,
}

/// Serializes images (and optional labels) into any writer.
pub fn write_raster(
    out: &mut impl Write,
    images: &[Tensor],
    labels: Option<&[usize]>,
) -> Result<()> {
    let (height, width, channels) = match images.first() {
        Some(t) => {
            let s = t.shape();
            if s.len() != 3 {
                return Err(Error::Contract(format!(
                    "raster images must be rank-3, got {s:?}"
                )));
            }
            (s[0], s[1], s[2])
        }
        None => (0, 0, 0),
    };
    for (i, t) in images.iter().enumerate() {
        if t.shape() != [height, width, channels] {
            return Err(Error::Contract(format!(
                "image {i} shape {:?} differs from first image",
                t.shape()
            )));
        }
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract(format!("image {i} has values outside [0,1]")));
        }
    }
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} images",
                l.len(),
                images.len()
            )));
        }
    }

    let header = RasterHeader {
        count: images.len(),
        height,
        width,
        channels,
        dtype: "f32le".into(),
        labels_present: labels.is_some(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header: {e}")))?;

    out.write_all(MAGIC)?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    for t in images {
        for &v in t.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    if let Some(l) = labels {
        for &label in l {
            let label = u32::try_from(label)
                .map_err(|_| Error::Contract(format!("label {label} exceeds u32")))?;
            out.write_all(&label.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_raster(path: &Path, images: &[Tensor], labels: Option<&[usize]>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_raster(&mut file, images, labels)?;
    file.flush()?;
    Ok(())
}

pub fn load_raster(path: &Path) -> Result<(Vec<Tensor>, Option<Vec<usize>>)> {
    let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file shorter than the magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }

    let header_len = super::read_exact_u32_le(&mut reader, "header length")? as usize;
    let mut header_bytes = vec![0u8; header_len];
    reader
        .read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header: RasterHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("header json: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::Format(format!(
            "unsupported dtype {:?}, expected \"f32le\"",
            header.dtype
        )));
    }

    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let pixels = header.count * header.height * header.width * header.channels;
    let expected = pixels * 4 + if header.labels_present { header.count * 4 } else { 0 };
    if body.len() != expected {
        return Err(Error::Format(format!(
            "body is {} bytes, header implies {expected}",
            body.len()
        )));
    }

    let mut images = Vec::with_capacity(header.count);
    let per_image = header.height * header.width * header.channels;
    for i in 0..header.count {
        let mut data = Vec::with_capacity(per_image);
        for p in 0..per_image {
            let off = (i * per_image + p) * 4;
            let v = f32::from_le_bytes(body[off..off + 4].try_into().expect("length checked"));
            data.push(f64::from(v));
        }
        images.push(
            Tensor::new(vec![header.height, header.width, header.channels], data)
                .map_err(|e| Error::Format(format!("image {i}: {e}")))?,
        );
    }

    let labels = if header.labels_present {
        let base = pixels * 4;
        let mut labels = Vec::with_capacity(header.count);
        for i in 0..header.count {
            let off = base + i * 4;
            labels.push(
                u32::from_le_bytes(body[off..off + 4].try_into().expect("length checked"))
                    as usize,
            );
        }
        Some(labels)
    } else {
        None
    };

    Ok((images, labels))
}
