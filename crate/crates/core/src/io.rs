//! PLE1 embedding files.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "PLE1"                       4 bytes
//! version                      u16 (currently 1)
//! d, n, C                      u32 each
//! features                     n·d f32, row-major
//! labels                       n i32, -1 = unlabeled
//! ids                          n u64
//! class names                  C × (u32 byte length + UTF-8)
//! base prototypes              C·d f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{ClassSpace, EmbeddingSet, UNIT_NORM_TOL};

pub const MAGIC: &[u8; 4] = b"PLE1";
pub const VERSION: u16 = 1;

/// Norm drift that is silently repaired on read; anything larger is an error.
pub const MAX_NORM_DRIFT: f64 = 1e-3;

/// Summary of a PLE1 file's header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub dim: usize,
    pub len: usize,
    pub num_classes: usize,
}

pub fn write_embedding_file(path: &Path, set: &EmbeddingSet, space: &ClassSpace) -> Result<()> {
    if set.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: set.dim(),
        });
    }
    if set.num_classes() != space.num_classes() {
        return Err(Error::InvalidInput(format!(
            "set has {} classes, class space has {}",
            set.num_classes(),
            space.num_classes()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, set, space).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode(w: &mut impl Write, set: &EmbeddingSet, space: &ClassSpace) -> std::io::Result<()> {
    let as_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "size exceeds u32"))
    };
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u32::<LE>(as_u32(set.dim())?)?;
    w.write_u32::<LE>(as_u32(set.len())?)?;
    w.write_u32::<LE>(as_u32(space.num_classes())?)?;
    for &x in set.features() {
        w.write_f32::<LE>(x as f32)?;
    }
    for label in set.labels() {
        let v = match label {
            Some(c) => i32::try_from(*c)
                .map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "label exceeds i32"))?,
            None => -1,
        };
        w.write_i32::<LE>(v)?;
    }
    for &id in set.ids() {
        w.write_u64::<LE>(id)?;
    }
    for name in space.names() {
        w.write_u32::<LE>(as_u32(name.len())?)?;
        w.write_all(name.as_bytes())?;
    }
    for &x in space.base_prototypes() {
        w.write_f32::<LE>(x as f32)?;
    }
    Ok(())
}

pub fn read_embedding_file(path: &Path) -> Result<(EmbeddingSet, ClassSpace)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header_from(&mut r, path)?;
    let (n, d, c) = (header.len, header.dim, header.num_classes);

    let mut features = read_matrix(&mut r, n, d, "features", path)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.read_i32::<LE>().map_err(|e| short(e, "labels", path))?;
        labels.push(match v {
            -1 => None,
            v if v >= 0 => Some(v as usize),
            v => return Err(Error::InvalidInput(format!("invalid label {v}"))),
        });
    }
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.read_u64::<LE>().map_err(|e| short(e, "ids", path))?);
    }
    let mut names = Vec::with_capacity(c);
    for _ in 0..c {
        let len = r.read_u32::<LE>().map_err(|e| short(e, "class names", path))? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| short(e, "class names", path))?;
        names.push(
            String::from_utf8(buf)
                .map_err(|_| Error::InvalidInput("class name is not UTF-8".into()))?,
        );
    }
    let mut prototypes = read_matrix(&mut r, c, d, "prototypes", path)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::InvalidInput("trailing bytes after PLE1 payload".into()));
    }

    repair_norms(&mut features)?;
    repair_norms(&mut prototypes)?;
    let set = EmbeddingSet::new(features, labels, ids, c)?;
    let space = ClassSpace::new(names, prototypes)?;
    Ok((set, space))
}

/// Reads and validates only the fixed-size header.
pub fn read_header(path: &Path) -> Result<Header> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header_from(&mut BufReader::new(file), path)
}

fn read_header_from(r: &mut impl Read, path: &Path) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::BadMagic,
        _ => Error::io(path, e),
    })?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.read_u16::<LE>().map_err(|e| short(e, "header", path))?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let mut dims = [0u32; 3];
    for v in &mut dims {
        *v = r.read_u32::<LE>().map_err(|e| short(e, "header", path))?;
    }
    Ok(Header {
        version,
        dim: dims[0] as usize,
        len: dims[1] as usize,
        num_classes: dims[2] as usize,
    })
}

fn read_matrix(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
    what: &str,
    path: &Path,
) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.read_f32::<LE>().map_err(|e| short(e, what, path))? as f64);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("matrix shape"))
}

fn short(e: std::io::Error, what: &str, path: &Path) -> Error {
    match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(format!("{}: ends inside {what}", path.display())),
        _ => Error::io(path, e),
    }
}

/// f32 storage loses a little precision; rows within the unit tolerance are
/// kept bit-for-bit, small drift is renormalized, large drift is rejected.
fn repair_norms(m: &mut Array2<f64>) -> Result<()> {
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        let drift = (norm - 1.0).abs();
        if drift <= UNIT_NORM_TOL {
            continue;
        }
        if drift.is_nan() || drift > MAX_NORM_DRIFT {
            return Err(Error::NormDrift { row: i, norm });
        }
        row /= norm;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> (EmbeddingSet, ClassSpace) {
        let f = array![[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]];
        let set = EmbeddingSet::new(f, vec![Some(1), None, Some(0)], vec![7, 3, 99], 2).unwrap();
        let space = ClassSpace::new(vec!["cat".into(), "dög".into()], array![[1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        (set, space)
    }

    #[test]
    fn roundtrip_tiny() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ple");
        let (set, space) = tiny();
        write_embedding_file(&p, &set, &space).unwrap();
        let (s2, sp2) = read_embedding_file(&p).unwrap();
        assert_eq!(s2.labels(), set.labels());
        assert_eq!(s2.ids(), set.ids());
        assert_eq!(sp2.names(), space.names());
        let h = read_header(&p).unwrap();
        assert_eq!((h.dim, h.len, h.num_classes), (2, 3, 2));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ple");
        let (set, space) = tiny();
        write_embedding_file(&p, &set, &space).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        let err = read_embedding_file(&p).unwrap_err();
        assert!(matches!(err, Error::BadMagic));
        assert_eq!(err.to_string(), "not a PLE1 file");

        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_embedding_file(&p).unwrap_err(), Error::Truncated(_)));
    }

    #[test]
    fn norm_repair() {
        let mut m = array![[1.0005, 0.0], [0.6, 0.8]];
        repair_norms(&mut m).unwrap();
        assert_eq!(m.row(0), array![1.0, 0.0]);
        let mut far = array![[1.01, 0.0]];
        assert!(matches!(repair_norms(&mut far), Err(Error::NormDrift { row: 0, .. })));
    }
}
