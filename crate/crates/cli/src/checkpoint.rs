//! Binary array snapshots: an 8-byte magic, a length-prefixed UTF-8 header
//! of key = value lines (shape, dtype, provenance), then the row-major
//! little-endian f64 payload.

use crate::CliError;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"FLKHYD01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Header entries besides shape/dtype, in written order.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, meta: Vec<(String, String)>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Checkpoint { shape, data, meta }
    }
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let shape_str = ck
        .shape
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut header = format!("shape = {shape_str}\ndtype = f64le\n");
    for (k, v) in &ck.meta {
        header.push_str(&format!("{k} = {v}\n"));
    }
    let mut out = Vec::with_capacity(8 + 4 + header.len() + 8 * ck.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for x in &ck.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(CliError::Format(format!("{}: bad magic", path.display())));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(CliError::Format(format!(
            "{}: header length {hlen} exceeds file",
            path.display()
        )));
    }
    let header = std::str::from_utf8(&bytes[12..12 + hlen])
        .map_err(|_| CliError::Format(format!("{}: header is not UTF-8", path.display())))?;
    let mut shape = None;
    let mut meta = Vec::new();
    for line in header.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "shape" => {
                let dims = v
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| {
                        CliError::Format(format!("{}: bad shape '{v}'", path.display()))
                    })?;
                shape = Some(dims);
            }
            "dtype" => {
                if v != "f64le" {
                    return Err(CliError::Format(format!(
                        "{}: unsupported dtype '{v}'",
                        path.display()
                    )));
                }
            }
            _ => meta.push((k.to_string(), v.to_string())),
        }
    }
    let shape =
        shape.ok_or_else(|| CliError::Format(format!("{}: header missing shape", path.display())))?;
    let count: usize = shape.iter().product();
    let payload = &bytes[12 + hlen..];
    if payload.len() != 8 * count {
        return Err(CliError::Format(format!(
            "{}: payload length {} does not match shape ({} values)",
            path.display(),
            payload.len(),
            count
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint { shape, data, meta })
}
