//! Staged output: every file of a run is written under a temporary name
//! and renamed into place only once all of them were written.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn text(name: impl Into<String>, text: String) -> Self {
        Self::new(name, text.into_bytes())
    }
}

/// Builds an in-memory artifact with a writer closure.
pub fn render(name: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<Artifact> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(Artifact::new(name, buf))
}

fn temp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes all artifacts into `dir`, creating it if needed.
pub fn commit(dir: &Path, artifacts: &[Artifact]) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(artifacts.len());
    let result = (|| {
        for a in artifacts {
            let tmp = temp_path(dir, &a.name);
            staged.push(tmp.clone());
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&a.bytes)?;
            f.sync_all()?;
        }
        Ok::<_, io::Error>(())
    })();
    if let Err(e) = result {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e);
    }
    let mut finals = Vec::with_capacity(artifacts.len());
    for (a, tmp) in artifacts.iter().zip(&staged) {
        let dest = dir.join(&a.name);
        fs::rename(tmp, &dest)?;
        finals.push(dest);
    }
    Ok(finals)
}
