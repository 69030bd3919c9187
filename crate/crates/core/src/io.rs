//! Dataset CSV format and atomic file writes.
//!
//! Header is exactly `x_m,y_m,z_m,dist_m,group,time_s`; `group` is `0`
//! (control) or `1` (individual). Floats are written in shortest
//! round-trip form so a write/read cycle is lossless.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::domain::{validate_dataset, Dataset, GroupLabel, Sample, TaskFeatures};
use crate::error::{Error, Result};

pub const DATASET_HEADER: [&str; 6] = ["x_m", "y_m", "z_m", "dist_m", "group", "time_s"];

pub fn dataset_to_csv(d: &Dataset) -> String {
    let mut out = DATASET_HEADER.join(",");
    out.push('\n');
    for s in d {
        let f = &s.features;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.x,
            f.y,
            f.z,
            f.dist,
            s.group.code(),
            s.outcome
        ));
    }
    out
}

/// Parses dataset CSV text. `origin` names the source in error messages.
pub fn dataset_from_csv(text: &str, origin: &str) -> Result<Dataset> {
    let csv_err = |source| Error::Csv {
        path: origin.to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(DATASET_HEADER.iter().copied()) {
        return Err(Error::Config {
            path: origin.to_string(),
            reason: format!(
                "expected header `{}`, found `{}`",
                DATASET_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut samples = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |reason: String| Error::InvalidSample { index, reason };
        let num = |col: usize| -> Result<f64> {
            let field = &record[col];
            field
                .parse::<f64>()
                .map_err(|_| bad(format!("{} = {field:?} is not a number", DATASET_HEADER[col])))
        };
        let group = match &record[4] {
            "0" => GroupLabel::Control,
            "1" => GroupLabel::Individual,
            other => return Err(bad(format!("group = {other:?}, expected 0 or 1"))),
        };
        let features = TaskFeatures::with_dist(num(0)?, num(1)?, num(2)?, num(3)?)
            .map_err(|e| bad(e.to_string()))?;
        samples.push(Sample::new(features, group, num(5)?));
    }
    let d = Dataset::new(samples);
    validate_dataset(&d, false)?;
    Ok(d)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_csv(&text, &path.display().to_string())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::features_from_xyz;

    #[test]
    fn round_trip_is_lossless() {
        let d = Dataset::new(vec![
            Sample::new(features_from_xyz(0.1, 0.2, 0.3).unwrap(), GroupLabel::Control, 0.7),
            Sample::new(
                features_from_xyz(-0.123456789, 0.05, 0.0).unwrap(),
                GroupLabel::Individual,
                1.0 / 3.0,
            ),
        ]);
        let text = dataset_to_csv(&d);
        assert!(text.starts_with("x_m,y_m,z_m,dist_m,group,time_s\n"));
        assert_eq!(dataset_from_csv(&text, "mem").unwrap(), d);
    }

    #[test]
    fn rejects_wrong_header() {
        let err = dataset_from_csv("x,y,z,dist,group,time\n", "mem").unwrap_err();
        assert_eq!(err.kind(), "Config");
    }

    #[test]
    fn rejects_blank_and_bad_group() {
        let blank = "x_m,y_m,z_m,dist_m,group,time_s\n0.1,0.1,,0.2,0,1.0\n";
        assert!(matches!(
            dataset_from_csv(blank, "mem"),
            Err(Error::InvalidSample { index: 0, .. })
        ));
        let group = "x_m,y_m,z_m,dist_m,group,time_s\n0.1,0.1,0.1,0.2,2,1.0\n";
        assert!(matches!(
            dataset_from_csv(group, "mem"),
            Err(Error::InvalidSample { index: 0, .. })
        ));
        let short = "x_m,y_m,z_m,dist_m,group,time_s\n0.1,0.1,0.1,0.2,1\n";
        assert_eq!(dataset_from_csv(short, "mem").unwrap_err().kind(), "Csv");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("taskdiff-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let leftovers = fs::read_dir(&dir).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
