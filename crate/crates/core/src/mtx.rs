//! Per-block Matrix Market export and import of a block tridiagonal system.
//!
//! Layout of a system directory:
//! `D_j.mtx` for every plane, `E_j.mtx` for `j ≥ 1`, `F_j.mtx` for all but
//! the last plane, `f_j.txt` with one right-hand side value per line, and
//! `coords.txt` with one `x y` pair per plane index.

use crate::scalar::Scalar;
use crate::system::{BlockTridiagonalSystem, PlaneBlock, PlaneVector, SystemError};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MtxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

fn read(path: &Path) -> Result<String, MtxError> {
    fs::read_to_string(path).map_err(|source| MtxError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), MtxError> {
    fs::write(path, text).map_err(|source| MtxError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Coordinate-format text of one block (1-based indices).
pub fn block_to_mtx<T: Scalar>(block: &PlaneBlock<T>) -> String {
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", block.dim(), block.dim(), block.nnz());
    for &(r, c, v) in block.entries() {
        let _ = writeln!(s, "{} {} {}", r + 1, c + 1, v);
    }
    s
}

fn parse_num<N: std::str::FromStr>(tok: Option<&str>, path: &Path, line: usize) -> Result<N, MtxError> {
    let tok = tok.ok_or_else(|| MtxError::Parse {
        path: path.to_owned(),
        line,
        message: "missing field".into(),
    })?;
    tok.parse().map_err(|_| MtxError::Parse {
        path: path.to_owned(),
        line,
        message: format!("cannot parse {tok:?}"),
    })
}

/// Parses coordinate-format text. `symmetric` headers are expanded.
pub fn block_from_mtx<T: Scalar>(text: &str, coords: Arc<Vec<[T; 2]>>, path: &Path) -> Result<PlaneBlock<T>, MtxError> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: &str| MtxError::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let header = header.to_ascii_lowercase();
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(bad(1, "expected a coordinate Matrix Market header"));
    }
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(bad(1, "only real matrices are supported"));
    }
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        _ => return Err(bad(1, "unsupported symmetry")),
    };
    let mut body = lines.filter(|(_, l)| !l.trim_start().starts_with('%') && !l.trim().is_empty());
    let (sl, size) = body.next().ok_or_else(|| bad(2, "missing size line"))?;
    let mut it = size.split_whitespace();
    let rows: usize = parse_num(it.next(), path, sl + 1)?;
    let cols: usize = parse_num(it.next(), path, sl + 1)?;
    let nnz: usize = parse_num(it.next(), path, sl + 1)?;
    if rows != cols {
        return Err(bad(sl + 1, "plane blocks are square"));
    }
    let mut triplets = Vec::with_capacity(nnz);
    for (ln, l) in body {
        let mut it = l.split_whitespace();
        let r: usize = parse_num(it.next(), path, ln + 1)?;
        let c: usize = parse_num(it.next(), path, ln + 1)?;
        let v: f64 = parse_num(it.next(), path, ln + 1)?;
        if r == 0 || c == 0 {
            return Err(bad(ln + 1, "indices are 1-based"));
        }
        triplets.push((r - 1, c - 1, T::of(v)));
        if symmetric && r != c {
            triplets.push((c - 1, r - 1, T::of(v)));
        }
    }
    let expected = if symmetric { triplets.iter().filter(|t| t.0 >= t.1).count() } else { triplets.len() };
    if expected != nnz {
        return Err(bad(sl + 1, &format!("header announces {nnz} entries, found {expected}")));
    }
    Ok(PlaneBlock::from_triplets(rows, triplets, coords)?)
}

fn vector_to_text<T: Scalar>(v: &[T]) -> String {
    let mut s = String::with_capacity(v.len() * 24);
    for x in v {
        let _ = writeln!(s, "{x}");
    }
    s
}

fn vector_from_text<T: Scalar>(text: &str, path: &Path) -> Result<Vec<T>, MtxError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_num::<f64>(Some(l.trim()), path, i + 1).map(T::of))
        .collect()
}

/// Writes the system into `dir`, creating it if needed.
pub fn export_system<T: Scalar>(system: &BlockTridiagonalSystem<T>, dir: &Path) -> Result<(), MtxError> {
    fs::create_dir_all(dir).map_err(|source| MtxError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut coords = String::new();
    for [x, y] in system.coords().iter() {
        let _ = writeln!(coords, "{x} {y}");
    }
    write(&dir.join("coords.txt"), &coords)?;
    for j in 0..system.plane_count() {
        write(&dir.join(format!("D_{j}.mtx")), &block_to_mtx(system.d(j)))?;
        if let Some(e) = system.e(j) {
            write(&dir.join(format!("E_{j}.mtx")), &block_to_mtx(e))?;
        }
        if let Some(f) = system.f_block(j) {
            write(&dir.join(format!("F_{j}.mtx")), &block_to_mtx(f))?;
        }
        write(&dir.join(format!("f_{j}.txt")), &vector_to_text(&system.rhs()[j].values))?;
    }
    Ok(())
}

/// Reads a directory written by [`export_system`]; the plane count is the
/// number of `D_j.mtx` files.
pub fn import_system<T: Scalar>(dir: &Path) -> Result<BlockTridiagonalSystem<T>, MtxError> {
    let coords_path = dir.join("coords.txt");
    let coords_text = read(&coords_path)?;
    let mut coords = Vec::new();
    for (i, l) in coords_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut it = l.split_whitespace();
        let x: f64 = parse_num(it.next(), &coords_path, i + 1)?;
        let y: f64 = parse_num(it.next(), &coords_path, i + 1)?;
        coords.push([T::of(x), T::of(y)]);
    }
    let coords = Arc::new(coords);
    let mut planes = 0;
    while dir.join(format!("D_{planes}.mtx")).exists() {
        planes += 1;
    }
    let block = |name: String| -> Result<PlaneBlock<T>, MtxError> {
        let path = dir.join(name);
        block_from_mtx(&read(&path)?, coords.clone(), &path)
    };
    let mut d = Vec::with_capacity(planes);
    let mut e = Vec::new();
    let mut f = Vec::new();
    let mut rhs = Vec::with_capacity(planes);
    for j in 0..planes {
        d.push(block(format!("D_{j}.mtx"))?);
        if j > 0 {
            e.push(block(format!("E_{j}.mtx"))?);
        }
        if j + 1 < planes {
            f.push(block(format!("F_{j}.mtx"))?);
        }
        let path = dir.join(format!("f_{j}.txt"));
        rhs.push(PlaneVector::new(j, vector_from_text(&read(&path)?, &path)?));
    }
    Ok(BlockTridiagonalSystem::new(d, e, f, rhs)?)
}
