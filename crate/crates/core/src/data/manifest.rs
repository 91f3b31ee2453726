use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm::{read_fixations, read_image, read_map};
use super::resize::{resize_bilinear, resize_fixations};
use super::Sample;
use crate::blocks::DomainLabel;
use crate::error::{Result, SumError};

/// One manifest row. Paths are stored as written, relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub map: PathBuf,
    pub fix: PathBuf,
    pub domain: DomainLabel,
}

/// Tab-separated `image  map  fix  domain_code` rows. Blank lines and lines
/// starting with `#` are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut m = Manifest::new(root);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| SumError::Manifest {
                path: path.to_path_buf(),
                detail: format!("line {}: {detail}", n + 1),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            if cols[..3].iter().any(|c| c.is_empty()) {
                return Err(bad("empty path".into()));
            }
            let code: usize = cols[3].trim().parse().map_err(|_| bad(format!("bad domain code {:?}", cols[3])))?;
            let domain = DomainLabel::from_code(code).map_err(|e| bad(e.to_string()))?;
            m.entries.push(ManifestEntry {
                image: cols[0].into(),
                map: cols[1].into(),
                fix: cols[2].into(),
                domain,
            });
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SumError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.image.display(),
                e.map.display(),
                e.fix.display(),
                e.domain.code()
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| SumError::io(path, e))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Reads every row at model resolution `size`. Files at another
    /// resolution are resized bilinearly (fixations by nearest cell).
    pub fn load_samples(&self, size: usize) -> Result<Vec<Sample>> {
        self.entries.iter().map(|e| self.load_entry(e, size)).collect()
    }

    fn load_entry(&self, e: &ManifestEntry, size: usize) -> Result<Sample> {
        let existing = |rel: &Path| {
            let p = self.resolve(rel);
            if p.is_file() {
                Ok(p)
            } else {
                Err(SumError::Manifest {
                    path: p,
                    detail: "file not found".into(),
                })
            }
        };
        let (ip, mp, fp) = (existing(&e.image)?, existing(&e.map)?, existing(&e.fix)?);
        let mut image = read_image(&ip)?;
        let mut map = read_map(&mp)?;
        let mut fix = read_fixations(&fp)?;
        let dims = &image.shape()[..2];
        for (p, t) in [(&mp, &map), (&fp, &fix)] {
            if t.shape() != dims {
                return Err(SumError::Manifest {
                    path: p.clone(),
                    detail: format!("size {:?} does not match image {:?}", t.shape(), dims),
                });
            }
        }
        if dims != [size, size] {
            image = resize_bilinear(&image, size, size)?;
            map = resize_bilinear(&map, size, size)?;
            fix = resize_fixations(&fix, size, size)?;
        }
        let id = e
            .map
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.map.display().to_string());
        Ok(Sample {
            id,
            image,
            map: map.into_data(),
            fixations: fix.into_data(),
            label: e.domain,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "# header\nimages/a.ppm\tmaps/a.pgm\tfix/a.pgm\t2\n\nimages/b.ppm\tmaps/b.pgm\tfix/b.pgm\t0\n";
        let m = Manifest::parse(text, Path::new("/data/train.tsv")).unwrap();
        assert_eq!(m.root, Path::new("/data"));
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].domain, DomainLabel::ECommerce);
        assert_eq!(m.resolve(&m.entries[1].image), Path::new("/data/images/b.ppm"));
        let again = Manifest::parse(&m.to_tsv(), Path::new("/data/train.tsv")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        for (text, needle) in [
            ("a\tb\tc\n", "4 tab-separated"),
            ("a\tb\tc\tx\n", "domain code"),
            ("a\tb\tc\t7\n", "out of range"),
            ("a\t\tc\t1\n", "empty path"),
        ] {
            match Manifest::parse(text, Path::new("m.tsv")) {
                Err(SumError::Manifest { path, detail }) => {
                    assert_eq!(path, Path::new("m.tsv"));
                    assert!(detail.contains("line 1") && detail.contains(needle), "{detail}");
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "nope.ppm\tnope.pgm\tnope.pgm\t1\n").unwrap();
        let m = Manifest::read(&path).unwrap();
        match m.load_samples(32) {
            Err(SumError::Manifest { path, .. }) => assert!(path.ends_with("nope.ppm")),
            other => panic!("{other:?}"),
        }
    }
}
