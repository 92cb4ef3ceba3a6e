//! Binary matrix container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  b"EPICMAT1"
//! count   u32      number of matrices
//! per matrix:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u64, cols u64
//!   rows*cols f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::reservoir::ReservoirWeights;

pub const MAGIC: &[u8; 8] = b"EPICMAT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "container matrix",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix {
            name: name.into(),
            rows,
            cols,
            data,
        })
    }
}

pub fn write_container(path: &Path, matrices: &[Matrix]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(matrices.len() as u32).to_le_bytes())?;
    for m in matrices {
        w.write_all(&(m.name.len() as u32).to_le_bytes())?;
        w.write_all(m.name.as_bytes())?;
        w.write_all(&(m.rows as u64).to_le_bytes())?;
        w.write_all(&(m.cols as u64).to_le_bytes())?;
        for v in &m.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.into(),
    }
}

pub fn read_container(path: &Path) -> Result<Vec<Matrix>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(path, "not a matrix container (bad magic)"));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b)?;
    let count = u32::from_le_bytes(u32b);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        r.read_exact(&mut u32b)?;
        let mut name = vec![0u8; u32::from_le_bytes(u32b) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad(path, "matrix name is not UTF-8"))?;
        r.read_exact(&mut u64b)?;
        let rows = u64::from_le_bytes(u64b) as usize;
        r.read_exact(&mut u64b)?;
        let cols = u64::from_le_bytes(u64b) as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| bad(path, format!("matrix `{name}` is too large")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u64b)?;
            data.push(f64::from_le_bytes(u64b));
        }
        out.push(Matrix { name, rows, cols, data });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(path, format!("{} trailing bytes", rest.len())));
    }
    Ok(out)
}

/// Dense `reservoir.w_rec` (N×N) and `reservoir.w_in` (N×D).
pub fn reservoir_matrices(res: &ReservoirWeights) -> Vec<Matrix> {
    let n = res.size();
    vec![
        Matrix {
            name: "reservoir.w_rec".into(),
            rows: n,
            cols: n,
            data: res.recurrent().to_dense(),
        },
        Matrix {
            name: "reservoir.w_in".into(),
            rows: n,
            cols: res.input_dim(),
            data: res.input().to_dense(),
        },
    ]
}

/// One matrix per parameter tensor, named as in the store.
pub fn store_matrices(store: &ParamStore) -> Vec<Matrix> {
    store
        .iter()
        .map(|(_, name, t)| Matrix {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        })
        .collect()
}

/// Overwrites every tensor in `store` from `matrices`; names and shapes must match exactly.
pub fn restore_store(store: &mut ParamStore, matrices: &[Matrix]) -> Result<()> {
    if matrices.len() != store.len() {
        return Err(Error::Dimension {
            op: "checkpoint tensor count",
            expected: store.len(),
            got: matrices.len(),
        });
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, m) in ids.into_iter().zip(matrices) {
        if store.name(id) != m.name {
            return Err(Error::usage(format!(
                "checkpoint has `{}` where `{}` was expected",
                m.name,
                store.name(id)
            )));
        }
        if store.get(id).shape() != (m.rows, m.cols) {
            return Err(Error::Dimension {
                op: "checkpoint tensor",
                expected: store.get(id).len(),
                got: m.data.len(),
            });
        }
        *store.get_mut(id) = Tensor::from_vec(m.rows, m.cols, m.data.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>(), name in "[a-z.]{0,12}") {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() - 0.5).collect();
            let m = vec![Matrix::new(name, rows, cols, data).unwrap(), Matrix::new("b", 1, 1, vec![f64::MIN_POSITIVE]).unwrap()];
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.bin");
            write_container(&p, &m).unwrap();
            prop_assert_eq!(read_container(&p).unwrap(), m);
        }
    }

    #[test]
    fn byte_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        write_container(&p, &[Matrix::new("ab", 1, 2, vec![1.0, -2.0]).unwrap()]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let mut want = b"EPICMAT1".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(b"ab");
        want.extend(1u64.to_le_bytes());
        want.extend(2u64.to_le_bytes());
        want.extend(1.0f64.to_le_bytes());
        want.extend((-2.0f64).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        std::fs::write(&p, b"NOTMAGIC\0\0\0\0").unwrap();
        assert!(matches!(read_container(&p), Err(Error::Parse { .. })));
        write_container(&p, &[Matrix::new("x", 2, 2, vec![0.0; 4]).unwrap()]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_container(&p).is_err());
    }

    #[test]
    fn checkpoint_restores_store() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![1.0, 2.0]));
        store.add("b", Tensor::zeros(2, 3));
        let mut other = store.clone();
        other.get_mut(crate::diffcore::ParamId(1)).data_mut()[4] = 7.5;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        write_container(&p, &store_matrices(&other)).unwrap();
        restore_store(&mut store, &read_container(&p).unwrap()).unwrap();
        assert_eq!(store, other);

        let mut wrong = ParamStore::new();
        wrong.add("a", Tensor::vector(vec![0.0; 3]));
        wrong.add("b", Tensor::zeros(2, 3));
        assert!(restore_store(&mut wrong, &read_container(&p).unwrap()).is_err());
    }
}
