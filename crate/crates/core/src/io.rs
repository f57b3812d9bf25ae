//! File formats: trajectory JSON Lines and decimal formatting for CSV output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::IoError;
use crate::model::{SystemSnapshot, Trajectory};

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros removed, fixed
/// notation for exponents in `[-5, 17)` and scientific notation otherwise.
pub fn format_decimal(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn snapshot_line(snapshot: &SystemSnapshot) -> String {
    serde_json::to_string(snapshot).expect("snapshot serializes")
}

pub fn write_trajectory<W: Write>(snapshots: &[SystemSnapshot], mut out: W) -> std::io::Result<()> {
    for s in snapshots {
        out.write_all(snapshot_line(s).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_trajectory(snapshots: &[SystemSnapshot], path: &Path) -> Result<(), IoError> {
    let file_err = |source| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(file_err)?;
    }
    let file = File::create(path).map_err(file_err)?;
    write_trajectory(snapshots, BufWriter::new(file)).map_err(file_err)
}

/// Reads a snapshot-per-line file. Snapshots must be contiguous from `t = 0`.
pub fn load_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let file = File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut snapshots: Vec<SystemSnapshot> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| IoError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let snap: SystemSnapshot =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if snap.t != snapshots.len() {
            return Err(parse_err(format!(
                "expected t = {}, found t = {}",
                snapshots.len(),
                snap.t
            )));
        }
        if (snap.t == 0) != snap.stability.is_none() {
            return Err(parse_err("stability must be null exactly at t = 0".into()));
        }
        snapshots.push(snap);
    }
    Ok(Trajectory {
        config: None,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::model::SiloLabel;

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(0.0), "0");
        assert_eq!(format_decimal(3.0), "3");
        assert_eq!(format_decimal(0.5), "0.5");
        assert_eq!(format_decimal(0.2), "0.20000000000000001");
        assert_eq!(format_decimal(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(format_decimal(-2.5e-7), "-2.4999999999999999e-07");
        assert_eq!(format_decimal(-0.5e-6), "-4.9999999999999998e-07");
        assert_eq!(format_decimal(1e20), "1e+20");
        assert_eq!(format_decimal(0.577_350_269_189_625_8), "0.57735026918962584");
    }

    proptest! {
        #[test]
        fn decimal_round_trips(x in prop::num::f64::NORMAL) {
            let s = format_decimal(x);
            prop_assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn snapshot_wire_format() {
        let snap = SystemSnapshot {
            t: 3,
            labels: vec![SiloLabel::new(0), SiloLabel::new(2), SiloLabel::UNKNOWN],
            silo_counts: BTreeMap::from([(0, 1), (2, 1)]),
            silo_count: 2,
            stability: Some(0.5),
            entropy: 1.0,
            embeddings: None,
        };
        assert_eq!(
            snapshot_line(&snap),
            r#"{"t":3,"labels":[0,2,-1],"silo_counts":{"0":1,"2":1},"silo_count":2,"stability":0.5,"entropy":1.0}"#
        );
        let back: SystemSnapshot = serde_json::from_str(&snapshot_line(&snap)).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn load_rejects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"t":0,"labels":[0],"silo_counts":{"0":1},"silo_count":1,"stability":null,"entropy":0.0}"#,
                "\n",
                r#"{"t":2,"labels":[0],"silo_counts":{"0":1},"silo_count":1,"stability":1.0,"entropy":0.0}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = load_trajectory(&path).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 2, .. }), "{err}");
    }
}
