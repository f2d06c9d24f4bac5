//! Matching files across directories by stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// PNG files in `dir` keyed by stem.
pub fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            let stem = p.file_stem().expect("file has a stem").to_string_lossy().into_owned();
            out.insert(stem, p);
        }
    }
    Ok(out)
}

/// Pairs the files of several directories by stem. Returns the sorted ids
/// present everywhere, or a pairing error listing every orphan.
pub fn pair_by_stem(dirs: &[(&Path, &BTreeMap<String, PathBuf>)]) -> Result<Vec<String>> {
    let mut all: Vec<&String> = dirs.iter().flat_map(|(_, m)| m.keys()).collect();
    all.sort();
    all.dedup();
    let mut orphans = Vec::new();
    let mut ids = Vec::new();
    for id in all {
        let missing: Vec<String> =
            dirs.iter().filter(|(_, m)| !m.contains_key(id)).map(|(d, _)| d.display().to_string()).collect();
        if missing.is_empty() {
            ids.push(id.clone());
        } else {
            orphans.push(format!("{id} (missing in {})", missing.join(", ")));
        }
    }
    if !orphans.is_empty() {
        return Err(Error::Pairing(orphans));
    }
    Ok(ids)
}
