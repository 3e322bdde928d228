//! Binary field dumps.
//!
//! Layout: magic `DCF1`, `u32` dimension, `u32` points per axis, `f64` period,
//! then the values as little-endian `f64` in lexicographic node order. Vector
//! and tensor dumps insert a `u32` component count after the header and
//! concatenate the component scalars.

use std::fs;
use std::path::Path;

use super::field::{ScalarField, SymTensorField, VectorField};
use super::GridSpec;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCF1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Contents of a dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub spec: GridSpec,
    /// `None` for scalar dumps.
    pub components: Option<usize>,
    pub values: Vec<f64>,
}

fn header(spec: &GridSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(spec.dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.points as u32).to_le_bytes());
    out.extend_from_slice(&spec.period.to_le_bytes());
    out
}

fn encode(spec: &GridSpec, components: Option<usize>, fields: &[&ScalarField]) -> Vec<u8> {
    let mut out = header(spec);
    if let Some(c) = components {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for f in fields {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn encode_scalar(u: &ScalarField) -> Vec<u8> {
    encode(u.spec(), None, &[u])
}

pub fn encode_vector(v: &VectorField) -> Vec<u8> {
    let comps: Vec<&ScalarField> = v.components().iter().collect();
    encode(v.spec(), Some(comps.len()), &comps)
}

pub fn encode_tensor(t: &SymTensorField) -> Vec<u8> {
    let comps: Vec<&ScalarField> = t.components().iter().collect();
    encode(comps[0].spec(), Some(comps.len()), &comps)
}

pub fn write_scalar(path: &Path, u: &ScalarField) -> std::io::Result<()> {
    fs::write(path, encode_scalar(u))
}

pub fn write_vector(path: &Path, v: &VectorField) -> std::io::Result<()> {
    fs::write(path, encode_vector(v))
}

pub fn write_tensor(path: &Path, t: &SymTensorField) -> std::io::Result<()> {
    fs::write(path, encode_tensor(t))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

/// Parses a dump. Scalar and multi-component files are told apart by length.
pub fn decode(bytes: &[u8]) -> Result<Dump> {
    let bad = |msg: &str| Error::InvalidInput(format!("field dump: {msg}"));
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing DCF1 header"));
    }
    let dim = read_u32(bytes, 4) as usize;
    let points = read_u32(bytes, 8) as usize;
    let period = f64::from_le_bytes(bytes[12..20].try_into().expect("eight bytes"));
    let spec = GridSpec::new(dim, points, period)?;
    let nodes = spec.node_count();
    let body = bytes.len() - HEADER_LEN;

    let (components, offset, count) = if body == nodes * 8 {
        (None, HEADER_LEN, nodes)
    } else if body >= 4 {
        let c = read_u32(bytes, HEADER_LEN) as usize;
        if body - 4 != c * nodes * 8 {
            return Err(bad("length does not match header"));
        }
        (Some(c), HEADER_LEN + 4, c * nodes)
    } else {
        return Err(bad("truncated body"));
    };
    let values = bytes[offset..offset + count * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Ok(Dump {
        spec,
        components,
        values,
    })
}

pub fn read(path: &Path) -> Result<Dump> {
    let bytes = fs::read(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn scalar_and_vector_round_trip() {
        let g = Grid::new(GridSpec::torus(3, 8).unwrap());
        let u = ScalarField::from_fn(&g, |x| x[0] - 2.0 * x[2]);
        let d = decode(&encode_scalar(&u)).unwrap();
        assert_eq!(d.spec, *g.spec());
        assert_eq!(d.components, None);
        assert_eq!(d.values, u.values());

        let v = VectorField::new(vec![u.clone(), u.scale(2.0), u.scale(-1.0)]).unwrap();
        let bytes = encode_vector(&v);
        assert_eq!(bytes.len(), HEADER_LEN + 4 + 3 * 512 * 8);
        let d = decode(&bytes).unwrap();
        assert_eq!(d.components, Some(3));
        assert_eq!(&d.values[512..1024], u.scale(2.0).values());
    }

    #[test]
    fn rejects_corrupt_dumps() {
        let g = Grid::new(GridSpec::torus(3, 8).unwrap());
        let mut bytes = encode_scalar(&ScalarField::zeros(&g));
        bytes.truncate(bytes.len() - 3);
        assert!(decode(&bytes).is_err());
        assert!(decode(b"XXXX").is_err());
    }
}
