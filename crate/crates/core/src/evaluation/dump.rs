//! Text embedding dump: a header line followed by one
//! `identity,camera,modality,v0,...,v{D-1}` row per item. Floats use the
//! shortest representation that round-trips exactly; an empty camera field
//! means the item has no camera tag.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::protocols::FeatureSet;
use crate::data::Modality;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub identity: i64,
    pub camera: Option<u32>,
    pub modality: Modality,
    pub values: Vec<f64>,
}

pub fn format_dump(records: &[EmbeddingRecord]) -> String {
    let dim = records.first().map_or(0, |r| r.values.len());
    let mut out = String::from("identity,camera,modality");
    for i in 0..dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for r in records {
        let cam = r.camera.map(|c| c.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{cam},{}", r.identity, r.modality);
        for v in &r.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_dump(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, format_dump(records)).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dump(&text, path)
}

pub fn parse_dump(text: &str, origin: &Path) -> Result<Vec<EmbeddingRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty embedding dump".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..3] != ["identity", "camera", "modality"] {
        return Err(err(1, "header must start with identity,camera,modality".into()));
    }
    let dim = cols.len() - 3;
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(err(n, format!("expected {} fields, found {}", dim + 3, fields.len())));
        }
        let identity = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(n, format!("bad identity {:?}", fields[0])))?;
        let camera = match fields[1].trim() {
            "" => None,
            c => Some(c.parse().map_err(|_| err(n, format!("bad camera {c:?}")))?),
        };
        let modality = fields[2].parse().map_err(|m| err(n, m))?;
        let values = fields[3..]
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|_| err(n, format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingRecord {
            identity,
            camera,
            modality,
            values,
        });
    }
    Ok(out)
}

/// Splits records by modality, numbering identities densely across both.
pub fn feature_sets(records: &[EmbeddingRecord]) -> Result<(FeatureSet, FeatureSet)> {
    let dense: BTreeMap<i64, usize> = records
        .iter()
        .map(|r| r.identity)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let build = |m: Modality| -> Result<FeatureSet> {
        let rows: Vec<&EmbeddingRecord> = records.iter().filter(|r| r.modality == m).collect();
        let dim = rows.first().map_or(0, |r| r.values.len());
        let mut f = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            if r.values.len() != dim {
                return Err(Error::validation("embedding dimensions differ within the dump"));
            }
            for (j, v) in r.values.iter().enumerate() {
                f[[i, j]] = *v;
            }
        }
        Ok(FeatureSet {
            features: f,
            identities: rows.iter().map(|r| dense[&r.identity]).collect(),
            cameras: rows.iter().map(|r| r.camera).collect(),
            modality: m,
        })
    };
    Ok((build(Modality::Visible)?, build(Modality::Infrared)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip_is_exact() {
        let records = vec![
            EmbeddingRecord {
                identity: 5,
                camera: Some(3),
                modality: Modality::Infrared,
                values: vec![0.1, -1.0 / 3.0, 1e-300],
            },
            EmbeddingRecord {
                identity: 2,
                camera: None,
                modality: Modality::Visible,
                values: vec![f64::MIN_POSITIVE, 2.5, -0.0],
            },
        ];
        let text = format_dump(&records);
        let back = parse_dump(&text, Path::new("mem")).unwrap();
        assert_eq!(back, records);
        assert_eq!(format_dump(&back), text);
        let (vis, ir) = feature_sets(&back).unwrap();
        assert_eq!(vis.identities, vec![0]);
        assert_eq!(ir.identities, vec![1]);
        assert_eq!(vis.cameras, vec![None]);
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "identity,camera,modality,v0\n1,1,visible,0.5\n2,1,visible\n";
        assert!(matches!(parse_dump(text, Path::new("x")), Err(Error::Parse { line: 3, .. })));
    }
}
