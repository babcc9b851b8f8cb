//! `path,identity,modality,camera` CSV manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Dataset, ImageSource, Modality, Sample};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["path", "identity", "modality", "camera"];

#[derive(Debug, Clone, Copy, Default)]
pub struct ManifestOptions {
    /// Fail on rows whose image file does not exist.
    pub check_files: bool,
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    load_manifest_with(path, ManifestOptions::default())
}

/// Reads a manifest. Relative image paths resolve against the manifest's
/// directory; identities are renumbered densely in ascending label order.
pub fn load_manifest_with(path: &Path, opts: ManifestOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names != HEADER {
        return Err(parse_err(1, format!("header must be {}, got {}", HEADER.join(","), names.join(","))));
    }

    let mut raw = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or_default();
        let rel = field(0);
        if rel.is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        let identity: i64 = field(1)
            .parse()
            .map_err(|_| parse_err(line, format!("identity {:?} is not an integer", field(1))))?;
        if identity < 0 {
            return Err(parse_err(line, format!("identity {identity} is negative")));
        }
        let modality: Modality = field(2).parse().map_err(|m| parse_err(line, m))?;
        let camera: u32 = field(3)
            .parse()
            .map_err(|_| parse_err(line, format!("camera {:?} is not a non-negative integer", field(3))))?;
        let full = if Path::new(rel).is_absolute() {
            PathBuf::from(rel)
        } else {
            base.join(rel)
        };
        if opts.check_files && !full.is_file() {
            return Err(Error::io(
                &full,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("listed on manifest line {line}")),
            ));
        }
        raw.push((full, identity, modality, camera));
    }

    let dense: BTreeMap<i64, usize> = raw
        .iter()
        .map(|r| r.1)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let samples = raw
        .into_iter()
        .map(|(p, id, modality, camera)| Sample {
            source: ImageSource::Path(p),
            identity: dense[&id],
            modality,
            camera,
        })
        .collect();
    Ok(Dataset {
        samples,
        original_ids: dense.into_keys().collect(),
    })
}

/// Writes `(path, identity, modality, camera)` rows with the standard header.
pub fn write_manifest(path: &Path, rows: &[(PathBuf, i64, Modality, u32)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_io(path, e))?;
    for (p, id, m, cam) in rows {
        w.write_record([
            p.to_string_lossy().as_ref(),
            &id.to_string(),
            m.as_str(),
            &cam.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}
