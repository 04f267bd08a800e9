//! File-format round trips and failure modes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use passive_scatter::forward::{read_phlm, write_matrix_csv, write_phlm, MatrixKind, PHLM_MAGIC};
use passive_scatter::stochastics::synthesize_from_matrix;
use proptest::prelude::*;

fn matrices() -> impl Strategy<Value = DMatrix<Complex64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(rows, cols)| {
        prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), rows * cols).prop_map(move |v| {
            DMatrix::from_iterator(rows, cols, v.into_iter().map(|(re, im)| Complex64::new(re, im)))
        })
    })
}

proptest! {
    #[test]
    fn phlm_roundtrip(m in matrices()) {
        for kind in [MatrixKind::NearField, MatrixKind::Covariance, MatrixKind::Samples] {
            let mut bytes = Vec::new();
            write_phlm(&m, kind, &mut bytes).unwrap();
            prop_assert_eq!(bytes.len(), 25 + 16 * m.len());
            let (back, k) = read_phlm(bytes.as_slice()).unwrap();
            prop_assert_eq!(k, kind);
            prop_assert_eq!(&back, &m);
        }
    }
}

#[test]
fn phlm_header_layout() {
    let m = DMatrix::from_row_slice(1, 2, &[Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
    let mut bytes = Vec::new();
    write_phlm(&m, MatrixKind::Covariance, &mut bytes).unwrap();
    assert_eq!(&bytes[..5], PHLM_MAGIC);
    assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 2);
    let payload: Vec<f64> = bytes[25..].chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(payload, vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn phlm_errors_name_fields() {
    let m = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
    let mut good = Vec::new();
    write_phlm(&m, MatrixKind::NearField, &mut good).unwrap();
    let cases: [(usize, &str); 3] = [(0, "magic"), (21, "kind"), (5, "rows")];
    for (offset, field) in cases {
        let mut bad = good.clone();
        bad[offset] = 0xff;
        if field == "rows" {
            bad[5..13].copy_from_slice(&u64::MAX.to_le_bytes());
        }
        let err = read_phlm(bad.as_slice()).unwrap_err().to_string();
        assert!(err.contains(field), "{field}: {err}");
    }
    let truncated = &good[..good.len() - 3];
    assert!(read_phlm(truncated).is_err());
}

#[test]
fn samples_file_has_one_row_per_sample() {
    let g = DMatrix::from_element(3, 2, Complex64::new(0.5, 0.1));
    let set = synthesize_from_matrix(&g, &[1.0, 2.0], 7, 0.1, 1).unwrap();
    let mut bytes = Vec::new();
    set.write_phlm(&mut bytes).unwrap();
    let (m, kind) = read_phlm(bytes.as_slice()).unwrap();
    assert_eq!(kind, MatrixKind::Samples);
    assert_eq!((m.nrows(), m.ncols()), (7, 3));
    assert_eq!(m.transpose(), set.samples);
}

#[test]
fn matrix_csv_layout() {
    let m = DMatrix::from_row_slice(2, 1, &[Complex64::new(1.5, -2.0), Complex64::new(0.0, 1.0)]);
    let mut out = Vec::new();
    write_matrix_csv(&m, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,col,re,im");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,0,"));
}
