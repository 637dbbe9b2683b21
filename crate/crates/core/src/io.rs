//! Long-format CSV panel ingestion and emission.
//!
//! Schema: header `unit,time,y,x1..xK`; one row per (unit, time) cell;
//! the panel must be balanced and duplicate-free. Matrices are assembled in
//! sorted (unit, time) order, numerically when every label parses as an
//! integer and lexicographically otherwise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::PanelData;

/// Sort key that orders integer-like labels numerically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Label {
    Int(i64),
    Text(String),
}

fn sorted_labels(raw: &[String]) -> Vec<String> {
    let all_int = raw.iter().all(|s| s.parse::<i64>().is_ok());
    let mut keys: Vec<Label> = raw
        .iter()
        .map(|s| {
            if all_int {
                Label::Int(s.parse().unwrap())
            } else {
                Label::Text(s.clone())
            }
        })
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| match k {
            Label::Int(i) => i.to_string(),
            Label::Text(s) => s,
        })
        .collect()
}

pub fn read_panel(path: &Path) -> Result<PanelData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
    if cols.len() < 3 || cols[0] != "unit" || cols[1] != "time" || cols[2] != "y" {
        return Err(Error::Parse {
            row: 1,
            message: format!(
                "header must start with unit,time,y (then x1..xK); got {}",
                cols.join(",")
            ),
        });
    }
    let k = cols.len() - 3;
    for (j, name) in cols.iter().skip(3).enumerate() {
        let expected = format!("x{}", j + 1);
        if name != &expected {
            return Err(Error::Parse {
                row: 1,
                message: format!("regressor column {} must be named {expected}, got {name}", j + 4),
            });
        }
    }

    // (unit, time) -> values
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut units_raw = Vec::new();
    let mut times_raw = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_number = idx + 2; // header is row 1
        let record = row?;
        if record.len() != cols.len() {
            return Err(Error::Parse {
                row: row_number,
                message: format!("expected {} fields, got {}", cols.len(), record.len()),
            });
        }
        let unit = record[0].to_string();
        let time = record[1].to_string();
        let mut values = Vec::with_capacity(k + 1);
        for j in 2..record.len() {
            let parsed: f64 = record[j].parse().map_err(|_| Error::Parse {
                row: row_number,
                message: format!("non-numeric value {:?} in column {}", &record[j], cols[j]),
            })?;
            values.push(parsed);
        }
        if cells
            .insert((unit.clone(), time.clone()), values)
            .is_some()
        {
            return Err(Error::DuplicateObservation { unit, time });
        }
        units_raw.push(unit);
        times_raw.push(time);
    }
    if cells.is_empty() {
        return Err(Error::Parse {
            row: 2,
            message: "panel file contains no data rows".into(),
        });
    }

    let units = sorted_labels(&units_raw);
    let times = sorted_labels(&times_raw);
    let (n, t) = (units.len(), times.len());
    let mut y = DMatrix::zeros(n, t);
    let mut xs = vec![DMatrix::zeros(n, t); k];
    for (i, unit) in units.iter().enumerate() {
        for (j, time) in times.iter().enumerate() {
            let Some(values) = cells.get(&(unit.clone(), time.clone())) else {
                return Err(Error::UnbalancedPanel {
                    unit: unit.clone(),
                    time: time.clone(),
                });
            };
            y[(i, j)] = values[0];
            for (kk, x) in xs.iter_mut().enumerate() {
                x[(i, j)] = values[kk + 1];
            }
        }
    }
    PanelData::new(y, xs, units, times)
}

/// Writes the long-format CSV with full-precision floats; `read_panel` of
/// the output reproduces the matrices bit for bit.
pub fn write_panel<W: Write>(out: &mut W, data: &PanelData) -> Result<()> {
    let mut header = String::from("unit,time,y");
    for k in 1..=data.k() {
        header.push_str(&format!(",x{k}"));
    }
    writeln!(out, "{header}")?;
    for (i, unit) in data.unit_ids().iter().enumerate() {
        for (j, time) in data.time_ids().iter().enumerate() {
            let mut line = format!("{unit},{time},{}", data.y()[(i, j)]);
            for x in data.x() {
                line.push_str(&format!(",{}", x[(i, j)]));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_panel_to_path(path: &Path, data: &PanelData) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_panel(&mut file, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_two_by_two_panel() {
        let f = write_temp(
            "unit,time,y,x1\n1,1,1.0,0.1\n1,2,2.0,0.2\n2,1,3.0,0.3\n2,2,4.0,0.4\n",
        );
        let panel = read_panel(f.path()).unwrap();
        assert_eq!(panel.n(), 2);
        assert_eq!(panel.t(), 2);
        assert_eq!(panel.k(), 1);
        assert_eq!(panel.y()[(0, 1)], 2.0);
        assert_eq!(panel.x_k(0)[(1, 0)], 0.3);
    }

    #[test]
    fn rejects_missing_cell_with_location() {
        let f = write_temp("unit,time,y,x1\n1,1,1.0,0.1\n1,2,2.0,0.2\n2,1,3.0,0.3\n");
        match read_panel(f.path()) {
            Err(Error::UnbalancedPanel { unit, time }) => {
                assert_eq!(unit, "2");
                assert_eq!(time, "2");
            }
            other => panic!("expected unbalanced panel error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_numbers() {
        let f = write_temp("unit,time,y,x1\n1,1,1.0,0.1\n1,1,2.0,0.2\n");
        assert!(matches!(
            read_panel(f.path()),
            Err(Error::DuplicateObservation { .. })
        ));

        let f = write_temp("unit,time,y,x1\n1,1,abc,0.1\n");
        match read_panel(f.path()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let f = write_temp(
            "unit,time,y,x1\n10,1,3.0,0.0\n2,1,2.0,0.0\n1,1,1.0,0.0\n10,2,6.0,0.0\n2,2,5.0,0.0\n1,2,4.0,0.0\n",
        );
        let panel = read_panel(f.path()).unwrap();
        assert_eq!(panel.unit_ids(), &["1", "2", "10"]);
        assert_eq!(panel.y()[(2, 0)], 3.0);
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let y = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() * 1e3 - 500.0);
        let x = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>());
        let panel = PanelData::new(y, vec![x], vec![], vec![]).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &panel).unwrap();
        let f = write_temp(std::str::from_utf8(&buf).unwrap());
        let back = read_panel(f.path()).unwrap();
        assert_eq!(back.y(), panel.y());
        assert_eq!(back.x_k(0), panel.x_k(0));
    }
}
