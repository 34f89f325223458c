//! JSON encoding of dense vectors and row-major matrices with explicit shapes.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::qp::{Matrix, Vector};

#[derive(Serialize, Deserialize)]
struct Shaped {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Shaped {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let sh = Shaped::deserialize(d)?;
        if sh.data.len() != sh.rows * sh.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, shape is {}x{}",
                sh.data.len(),
                sh.rows,
                sh.cols
            )));
        }
        Ok(Matrix::from_row_slice(sh.rows, sh.cols, &sh.data))
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
