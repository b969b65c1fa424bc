use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{VolumeClass, VolumeRecord};

pub const MANIFEST_HEADER: [&str; 4] = ["volume_id", "class", "path", "frames"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub volume_id: String,
    pub class: VolumeClass,
    /// Volume directory, resolved against the manifest's directory.
    pub path: PathBuf,
    pub frames: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.rows {
            counts[r.class.index()] += 1;
        }
        counts
    }

    /// Volume records with the B-scan files listed from each directory.
    pub fn volumes(&self) -> Result<Vec<VolumeRecord>> {
        self.rows
            .iter()
            .map(|r| {
                let bscans = list_bscans(&r.path)?
                    .into_iter()
                    .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                    .collect();
                Ok(VolumeRecord {
                    id: r.volume_id.clone(),
                    class: r.class,
                    bscans,
                    training_frames: r.frames.clone(),
                })
            })
            .collect()
    }
}

fn is_bscan(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
}

/// PNG and PGM files of a directory in lexicographic order.
pub fn list_bscans(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_bscan(p))
        .collect();
    files.sort();
    Ok(files)
}

fn parse_frames(field: &str, row: usize) -> Result<Option<Vec<usize>>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .split(',')
        .map(|t| {
            t.trim().parse::<usize>().map_err(|_| Error::Manifest {
                row,
                message: format!("bad frame index {t:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Parses manifest text; `root` resolves relative volume paths. Rows are
/// numbered by file line, the header being row 1.
pub fn parse_manifest(text: &str, root: &Path) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Manifest { row: 1, message: "empty manifest".into() })?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != MANIFEST_HEADER {
        return Err(Error::Manifest {
            row: 1,
            message: format!("expected header {:?}, found {cols:?}", MANIFEST_HEADER.join("\t")),
        });
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::Manifest { row, message: format!("expected 4 tab-separated fields, found {}", fields.len()) });
        }
        let volume_id = fields[0].trim().to_string();
        if volume_id.is_empty() {
            return Err(Error::Manifest { row, message: "empty volume id".into() });
        }
        let class = fields[1]
            .parse::<VolumeClass>()
            .map_err(|_| Error::UnknownClass { row, class: fields[1].trim().to_string() })?;
        if !seen.insert(volume_id.clone()) {
            return Err(Error::DuplicateVolume { row, id: volume_id });
        }
        let path = root.join(fields[2].trim());
        if !path.is_dir() {
            return Err(Error::MissingDirectory { row, path });
        }
        let frames = parse_frames(fields.get(3).copied().unwrap_or(""), row)?;
        rows.push(ManifestRow { volume_id, class, path, frames });
    }
    Ok(DatasetManifest { root: root.to_path_buf(), rows })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root)
}
