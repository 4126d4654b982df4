use std::fs;
use std::path::{Path, PathBuf};

use crate::data_model::{self, Contrast, MotionGrade, Orientation, Provenance, SliceRecord};
use crate::error::{Error, Result};
use crate::ingestion::image_io::read_image;

pub const MANIFEST_HEADER: [&str; 5] = ["image_path", "contrast", "orientation", "grade", "provenance"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest, relative to the manifest root.
    pub image_path: String,
    pub contrast: Contrast,
    pub orientation: Orientation,
    pub grade: Option<MotionGrade>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads and validates the slice behind one entry. The record id is the
    /// manifest path of the image.
    pub fn load_record(&self, entry: &ManifestEntry) -> Result<SliceRecord> {
        let pixels = read_image(&self.resolve(entry))?;
        let record = SliceRecord::new(
            entry.image_path.clone(),
            pixels,
            entry.contrast,
            entry.orientation,
            entry.grade,
        )
        .with_provenance(entry.provenance);
        data_model::validate(record)
    }

    pub fn load_records(&self) -> Result<Vec<SliceRecord>> {
        self.entries.iter().map(|e| self.load_record(e)).collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Data(format!("manifest encoding: {e}"));
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for e in &self.entries {
            let grade = e.grade.map(|g| g.as_str()).unwrap_or("");
            w.write_record([
                e.image_path.as_str(),
                e.contrast.as_str(),
                e.orientation.as_str(),
                grade,
                e.provenance.as_str(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("manifest encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("manifest fields are UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Parses a manifest and checks that every referenced image exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = parse_manifest(&text, root).map_err(|reason| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    })?;
    for (i, entry) in manifest.entries.iter().enumerate() {
        let resolved = manifest.resolve(entry);
        if !resolved.is_file() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                reason: format!("row {}: image {} does not exist", i + 1, resolved.display()),
            });
        }
    }
    Ok(manifest)
}

/// Parses manifest text without touching the filesystem. Row numbers in
/// errors count data rows from 1.
pub fn parse_manifest(text: &str, root: PathBuf) -> std::result::Result<Manifest, String> {
    if text.trim().is_empty() {
        return Err("empty manifest".into());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(format!(
            "header must be `{}`, found `{}`",
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| format!("row {row_no}: {e}"))?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(format!(
                "row {row_no}: expected {} fields, found {}",
                MANIFEST_HEADER.len(),
                row.len()
            ));
        }
        let at_row = |e: Error| format!("row {row_no}: {e}");
        let image_path = row[0].to_string();
        if image_path.is_empty() {
            return Err(format!("row {row_no}: empty image_path"));
        }
        let grade = match &row[3] {
            "" => None,
            g => Some(g.parse().map_err(at_row)?),
        };
        entries.push(ManifestEntry {
            image_path,
            contrast: row[1].parse().map_err(at_row)?,
            orientation: row[2].parse().map_err(at_row)?,
            grade,
            provenance: row[4].parse().map_err(at_row)?,
        });
    }
    if entries.is_empty() {
        return Err("empty manifest".into());
    }
    Ok(Manifest { root, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::image_io::{write_image, ImageFormat};
    use ndarray::Array2;

    const HEADER: &str = "image_path,contrast,orientation,grade,provenance\n";

    fn twelve_rows() -> String {
        let mut s = HEADER.to_string();
        let contrasts = ["T1w", "T2w", "PDw", "FLAIR"];
        let grades = ["no_motion", "subtle_motion", "severe_motion"];
        for i in 0..12 {
            s.push_str(&format!(
                "img_{i}.amac,{},axial,{},synthetic\n",
                contrasts[i % 4],
                grades[i % 3]
            ));
        }
        s
    }

    #[test]
    fn parses_well_formed_rows() {
        let m = parse_manifest(&twelve_rows(), PathBuf::from(".")).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(m.entries[3].contrast, Contrast::Flair);
        assert_eq!(m.entries[2].grade, Some(MotionGrade::SevereMotion));
    }

    #[test]
    fn unknown_contrast_names_the_row() {
        let text = format!("{HEADER}a.amac,T1w,axial,no_motion,real\nb.amac,T1rho,axial,no_motion,real\n");
        let err = parse_manifest(&text, PathBuf::from(".")).unwrap_err();
        assert!(err.contains("row 2") && err.contains("T1rho"), "{err}");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert_eq!(parse_manifest("", PathBuf::new()).unwrap_err(), "empty manifest");
        assert_eq!(parse_manifest(HEADER, PathBuf::new()).unwrap_err(), "empty manifest");
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse_manifest("path,contrast\na,T1w\n", PathBuf::new()).is_err());
    }

    #[test]
    fn missing_grade_means_unlabeled() {
        let text = format!("{HEADER}a.amac,PDw,oblique,,real\n");
        let m = parse_manifest(&text, PathBuf::new()).unwrap();
        assert_eq!(m.entries[0].grade, None);
    }

    #[test]
    fn load_checks_files_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array2::from_elem((32, 32), 3.0f32);
        write_image(&dir.path().join("a.amac"), &img, ImageFormat::Amac).unwrap();
        let text = format!("{HEADER}a.amac,T2w,coronal,subtle_motion,synthetic\n");
        let path = dir.path().join("manifest.csv");
        fs::write(&path, &text).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.to_csv_string().unwrap(), text);
        let rec = m.load_record(&m.entries[0]).unwrap();
        assert_eq!(rec.id, "a.amac");
        assert_eq!(rec.pixels, img);

        fs::write(&path, format!("{text}missing.amac,T2w,axial,no_motion,real\n")).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("missing.amac"), "{err}");
    }
}
