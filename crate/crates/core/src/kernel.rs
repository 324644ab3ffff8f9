use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matfile;

/// Which kernel produced a matrix and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kernel: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl Provenance {
    pub fn new(kernel: impl Into<String>, params: serde_json::Value) -> Self {
        Provenance {
            kernel: kernel.into(),
            params,
        }
    }
}

/// Square train kernel or rectangular cross-kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    provenance: Provenance,
}

impl KernelMatrix {
    pub fn new(values: DMatrix<f64>, provenance: Provenance) -> Self {
        KernelMatrix { values, provenance }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        matfile::write_matrix(path, &self.values)?;
        matfile::write_sidecar(
            path,
            &Sidecar {
                rows: self.values.nrows(),
                cols: self.values.ncols(),
                provenance: self.provenance.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let values = matfile::read_matrix(path)?;
        let side: Sidecar = matfile::read_sidecar(path)?;
        Ok(KernelMatrix {
            values,
            provenance: side.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.lantkmat");
        let k = KernelMatrix::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            Provenance::new("test", serde_json::json!({"a": 1})),
        );
        k.save(&p).unwrap();
        assert_eq!(KernelMatrix::load(&p).unwrap(), k);
    }
}
