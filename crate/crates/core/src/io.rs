//! CSV and JSON file formats.
//!
//! Feature files: header `d0,d1,...,d{m-1}`, one unit vector per row.
//! Pair files: header `left_index,right_index`, 0-based row indices.
//! Label files: header `label`, one integer per row.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sphere::{FeatureSet, PairedFeatures};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e.to_string()),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            line,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn check_header(headers: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, line: u64, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} `{field}`"),
    })
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let mut rdr = reader(path.as_ref())?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let dim = headers.len();
    check_header(
        &headers,
        &(0..dim).map(|i| format!("d{i}")).collect::<Vec<_>>(),
    )?;
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for field in rec.iter() {
            let v: f64 = parse_field(field, line, "float")?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value `{field}`"),
                });
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    FeatureSet::from_flat(data, dim)
}

pub fn write_features(f: &FeatureSet, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    let header: Vec<String> = (0..f.dim()).map(|i| format!("d{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in f.rows() {
        // `Display` for f64 prints the shortest string that parses back exactly
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_features(f: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    write_features(f, create(path.as_ref())?)
}

/// Positive pairs `(left[i], right[j])` for each row `i,j` of the pair file.
pub fn load_pairs(
    path: impl AsRef<Path>,
    left: &FeatureSet,
    right: &FeatureSet,
) -> Result<PairedFeatures> {
    let mut rdr = reader(path.as_ref())?;
    check_header(
        rdr.headers().map_err(csv_err)?,
        &["left_index".into(), "right_index".into()],
    )?;
    let (mut li, mut ri) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let l: usize = parse_field(&rec[0], line, "index")?;
        let r: usize = parse_field(&rec[1], line, "index")?;
        if l >= left.n_points() || r >= right.n_points() {
            return Err(Error::CountMismatch(format!(
                "line {line}: pair ({l}, {r}) out of range for {} left and {} right rows",
                left.n_points(),
                right.n_points()
            )));
        }
        li.push(l);
        ri.push(r);
    }
    if li.is_empty() {
        return Err(Error::EmptyInput);
    }
    PairedFeatures::new(left.gather(&li)?, right.gather(&ri)?)
}

pub fn load_labels(path: impl AsRef<Path>, n: usize) -> Result<Vec<i64>> {
    let mut rdr = reader(path.as_ref())?;
    check_header(rdr.headers().map_err(csv_err)?, &["label".into()])?;
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        labels.push(parse_field(&rec[0], line, "label")?);
    }
    if labels.len() != n {
        return Err(Error::CountMismatch(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    Ok(labels)
}

/// Two-column curve data (`x,y`), e.g. a density or histogram.
pub fn write_curve<X: ToString, Y: ToString>(
    points: &[(X, Y)],
    header: (&str, &str),
    out: impl Write,
) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{},{}", header.0, header.1)?;
    for (x, y) in points {
        writeln!(w, "{},{}", x.to_string(), y.to_string())?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Emits every float with 17 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize with 17-digit floats. Object keys keep declaration order for
/// structs and sorted order for maps, so output is stable across runs.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Io(format!("json: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = create(path.as_ref())?;
    f.write_all(to_json_string(value)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentReport;
    use crate::sphere::sample_uniform_sphere;
    use proptest::prelude::*;

    fn file_with(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_row_file() {
        let f = file_with("d0,d1\n1,0\n0,1\n-0.6,0.8\n");
        let fs = load_features(f.path()).unwrap();
        assert_eq!(fs.n_points(), 3);
        assert_eq!(fs.dim(), 2);
    }

    #[test]
    fn bad_rows_are_reported() {
        let f = file_with("d0,d1\n1,0\n0.9,0\n");
        assert!(matches!(
            load_features(f.path()),
            Err(Error::NormViolation { row: 1, .. })
        ));
        let f = file_with("d0,d1\n1,0\n0,abc\n");
        assert!(matches!(
            load_features(f.path()),
            Err(Error::Parse { line: 3, .. })
        ));
        let f = file_with("d0,d1\n1,0\n0,1,0\n");
        assert!(matches!(
            load_features(f.path()),
            Err(Error::Parse { line: 3, .. })
        ));
        let f = file_with("x,y\n1,0\n");
        assert!(matches!(
            load_features(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = file_with("d0,d1\n");
        assert!(matches!(load_features(f.path()), Err(Error::EmptyInput)));
        assert!(matches!(
            load_features("/nonexistent/x.csv"),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn pairs_and_labels() {
        let feats = FeatureSet::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]).unwrap();
        let p = file_with("left_index,right_index\n0,1\n2,2\n");
        let pairs = load_pairs(p.path(), &feats, &feats).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs.right().row(0), &[0.0, 1.0]);
        let p = file_with("left_index,right_index\n0,3\n");
        assert!(matches!(
            load_pairs(p.path(), &feats, &feats),
            Err(Error::CountMismatch(_))
        ));

        let l = file_with("label\n0\n1\n1\n");
        assert_eq!(load_labels(l.path(), 3).unwrap(), vec![0, 1, 1]);
        assert!(matches!(
            load_labels(l.path(), 4),
            Err(Error::CountMismatch(_))
        ));
        let l = file_with("label\n0\nx\n");
        assert!(matches!(
            load_labels(l.path(), 2),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn csv_round_trip_is_bitwise(n in 1usize..40, m in 2usize..6, seed in any::<u64>()) {
            let f = sample_uniform_sphere(n, m, seed).unwrap();
            let tmp = tempfile::NamedTempFile::new().unwrap();
            save_features(&f, tmp.path()).unwrap();
            let back = load_features(tmp.path()).unwrap();
            prop_assert_eq!(back.as_slice(), f.as_slice());
            let text = std::fs::read_to_string(tmp.path()).unwrap();
            prop_assert!(!text.contains('\r'));
        }
    }

    #[test]
    fn json_floats_have_17_digits_and_round_trip() {
        let mut r = ExperimentReport::new("demo", 1e-9).param("tau", 0.1);
        r.info("third", 1.0 / 3.0);
        r.assert_near("zero", 0.0, 0.0);
        let s = to_json_string(&r).unwrap();
        assert!(s.contains("3.3333333333333331e-1"), "{s}");
        assert!(s.contains("\"tau\":1.0000000000000001e-1"), "{s}");
        let back: ExperimentReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert_eq!(to_json_string(&back).unwrap(), s);
        // key order is fixed
        let (a, b) = (s.find("\"name\"").unwrap(), s.find("\"verdict\"").unwrap());
        assert!(a < b);
    }

    #[test]
    fn curve_csv() {
        let mut buf = Vec::new();
        write_curve(&[(0.5, 2usize), (1.5, 3)], ("x", "count"), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,count\n0.5,2\n1.5,3\n");
    }
}
