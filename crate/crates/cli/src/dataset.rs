//! Dataset directories: a `dataset.txt` listing sequence directories and
//! their seeds, one sequence per subdirectory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use angioseg::io::{read_sequence, MANIFEST_FILE};
use angioseg::Sequence;

use crate::error::{CliError, CliResult};
use crate::provenance::write_file;

pub const DATASET_FILE: &str = "dataset.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    /// Generator seed; `None` for sequences of other origin.
    pub seed: Option<u64>,
}

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:05}")
}

pub fn write_index(dir: &Path, entries: &[Entry]) -> CliResult<()> {
    let mut s = format!("sequences = {}\n", entries.len());
    for e in entries {
        match e.seed {
            Some(seed) => writeln!(s, "{} = {seed}", e.name),
            None => writeln!(s, "{} =", e.name),
        }
        .unwrap();
    }
    write_file(&dir.join(DATASET_FILE), &s)
}

/// Sequences of a dataset. A directory holding a single sequence (with
/// its own manifest and no index) is accepted as a one-sequence dataset
/// named after the directory.
pub fn read_index(dir: &Path) -> CliResult<Vec<Entry>> {
    let path = dir.join(DATASET_FILE);
    if !path.exists() {
        if dir.join(MANIFEST_FILE).exists() {
            return Ok(vec![Entry {
                name: String::new(),
                seed: None,
            }]);
        }
        return Err(CliError::Data(format!(
            "{} is neither a dataset (no {DATASET_FILE}) nor a sequence directory",
            dir.display()
        )));
    }
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let bad = |line: &str| CliError::Data(format!("{}: malformed line '{line}'", path.display()));
    let mut declared = None;
    let mut entries = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "sequences" {
            declared = Some(v.parse::<usize>().map_err(|_| bad(line))?);
        } else {
            let seed = if v.is_empty() {
                None
            } else {
                Some(v.parse().map_err(|_| bad(line))?)
            };
            entries.push(Entry {
                name: k.to_string(),
                seed,
            });
        }
    }
    if declared != Some(entries.len()) {
        return Err(CliError::Data(format!(
            "{}: declares {declared:?} sequences, lists {}",
            path.display(),
            entries.len()
        )));
    }
    Ok(entries)
}

pub fn entry_dir(root: &Path, entry: &Entry) -> PathBuf {
    if entry.name.is_empty() {
        root.to_path_buf()
    } else {
        root.join(&entry.name)
    }
}

pub struct LoadedSequence {
    pub entry: Entry,
    pub sequence: Sequence,
}

pub fn load_dataset(root: &Path) -> CliResult<Vec<LoadedSequence>> {
    read_index(root)?
        .into_iter()
        .map(|entry| {
            let (sequence, _) = read_sequence(entry_dir(root, &entry))?;
            Ok(LoadedSequence { entry, sequence })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            Entry {
                name: sequence_name(0),
                seed: Some(17),
            },
            Entry {
                name: "patient_a".into(),
                seed: None,
            },
        ];
        write_index(dir.path(), &entries).unwrap();
        assert_eq!(read_index(dir.path()).unwrap(), entries);
        write_index(dir.path(), &[]).unwrap();
        assert!(read_index(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn count_mismatch_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(DATASET_FILE), "sequences = 2\nseq_00000 = 1\n").unwrap();
        assert!(matches!(read_index(dir.path()), Err(CliError::Data(_))));
        assert!(matches!(read_index(&dir.path().join("nope")), Err(CliError::Data(_))));
    }
}
