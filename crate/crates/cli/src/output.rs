//! Output staging: files are collected in memory and written only once every
//! computation has succeeded, each through a temp file and a rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tempfile::NamedTempFile;

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, relative: impl Into<PathBuf>, contents: impl Into<Vec<u8>>) {
        self.files.push((relative.into(), contents.into()));
    }

    pub fn commit(self, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (relative, contents) in self.files {
            let target = dir.join(&relative);
            let parent = target.parent().unwrap_or(dir);
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            let mut tmp = NamedTempFile::new_in(parent).with_context(|| format!("staging {}", target.display()))?;
            tmp.write_all(&contents)?;
            tmp.as_file().sync_all()?;
            tmp.persist(&target)
                .with_context(|| format!("writing {}", target.display()))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Lossless float text for CSV cells (17 significant digits).
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_nested_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staged::default();
        s.add("a.csv", "x\n");
        s.add("reports/b.json", "{}");
        let written = s.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(std::fs::read_to_string(dir.path().join("reports/b.json")).unwrap(), "{}");
        // no temp files left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(float(1.0 / 3.0).parse().unwrap()), float(1.0 / 3.0));
    }
}
