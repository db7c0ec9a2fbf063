//! JSON encoding helpers: matrices are written as `{"rows", "cols", "data"}`
//! with `data` a nested array of rows.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRepr {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&Array2<f64>> for MatrixRepr {
    fn from(m: &Array2<f64>) -> Self {
        MatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl TryFrom<MatrixRepr> for Array2<f64> {
    type Error = String;

    fn try_from(r: MatrixRepr) -> Result<Self, String> {
        if r.data.len() != r.rows {
            return Err(format!("expected {} rows, found {}", r.rows, r.data.len()));
        }
        let mut flat = Vec::with_capacity(r.rows * r.cols);
        for (i, row) in r.data.into_iter().enumerate() {
            if row.len() != r.cols {
                return Err(format!("row {i} has {} entries, expected {}", row.len(), r.cols));
            }
            flat.extend(row);
        }
        Array2::from_shape_vec((r.rows, r.cols), flat).map_err(|e| e.to_string())
    }
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixRepr::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let repr = MatrixRepr::deserialize(d)?;
        Array2::try_from(repr).map_err(serde::de::Error::custom)
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice()
            .map(|x| x.to_vec())
            .unwrap_or_else(|| v.to_vec())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        Ok(Array1::from(Vec::<f64>::deserialize(d)?))
    }
}
