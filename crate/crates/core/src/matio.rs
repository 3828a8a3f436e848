//! Matrix <-> nested-array conversion and the fixed float format used in
//! every text output.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::InvalidMatrix("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidMatrix("matrix rows are ragged or empty".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(nrows, ncols, &flat))
}

/// Serde adapter: `#[serde(with = "crate::matio::nested")]`.
pub mod nested {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// 17 significant digits, '.' decimal, locale independent.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse()
            .map_err(|_| Error::InvalidInput(format!("not a number: {t:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, f64::INFINITY] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap().to_bits(), x.to_bits());
        }
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
    }

    #[test]
    fn rows_round_trip() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(from_rows(&to_rows(&m)).unwrap(), m);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
