//! Dataset directories: `train.tsv` / `test.tsv` manifests with one
//! `path<TAB>label<TAB>seed` line per sample and `# key=value` header lines.
//! Image paths are relative to the dataset directory; diseased samples carry
//! a lesion mask at the same relative path under `masks/`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::net::Class;

use super::codec::{read_image, read_mask, write_file, write_image, write_mask, write_pgm};
use super::phantom::{GeneratedSet, PhantomParams, GENERATOR_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Test => "test.tsv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Class,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn has_mask(&self) -> bool {
        self.label == Class::Diseased
    }

    pub fn mask_path(&self) -> String {
        mask_path_for(&self.path)
    }
}

fn mask_path_for(image_path: &str) -> String {
    let name = image_path.rsplit('/').next().unwrap_or(image_path);
    format!("masks/{name}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: Split,
    pub header: Vec<(String, String)>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k}={v}");
        }
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", e.path, e.label, e.seed);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Config(format!("manifest line {}: {what}", i + 1));
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [path, label, seed] = cols[..] else {
                return Err(bad("expected path<TAB>label<TAB>seed"));
            };
            if !seen.insert(path.to_string()) {
                return Err(bad(&format!("duplicate path {path}")));
            }
            entries.push(ManifestEntry {
                path: path.to_string(),
                label: label.parse()?,
                seed: seed.parse().map_err(|_| bad("seed is not an integer"))?,
            });
        }
        let split = match header.iter().find(|(k, _)| k == "split").map(|(_, v)| v.as_str()) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            other => return Err(Error::Config(format!("manifest split tag {other:?}"))),
        };
        Ok(Self { split, header, entries })
    }
}

/// `(train, test)` sizes of the 90/10 split of `count` samples.
pub fn split_sizes(count: usize) -> (usize, usize) {
    let train = (count * 9 + 5) / 10;
    (train, count - train)
}

/// Writes every sample (image, lesion mask for diseased samples, PGM preview)
/// and both manifests.
pub fn write_dataset(
    dir: &Path,
    set: &GeneratedSet,
    seed: u64,
    params: &PhantomParams,
) -> Result<(Manifest, Manifest)> {
    for sub in ["images", "masks", "preview"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let (n_train, _) = split_sizes(set.samples.len());
    let mut header = vec![
        ("generator".to_string(), GENERATOR_VERSION.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("count".to_string(), set.samples.len().to_string()),
        ("rejected".to_string(), set.rejected.to_string()),
    ];
    header.extend(params.to_pairs());
    let mut manifests = [Split::Train, Split::Test].map(|split| {
        let mut h = header.clone();
        h.insert(1, ("split".to_string(), split.as_str().to_string()));
        Manifest { split, header: h, entries: Vec::new() }
    });
    for (i, s) in set.samples.iter().enumerate() {
        let path = format!("images/{i:05}.ptad");
        write_image(&dir.join(&path), &s.image)?;
        write_pgm(&dir.join(format!("preview/{i:05}.pgm")), &s.image)?;
        let entry = ManifestEntry { path, label: s.label, seed: s.meta.seed };
        if entry.has_mask() {
            write_mask(&dir.join(entry.mask_path()), &s.lesion)?;
        }
        manifests[if i < n_train { 0 } else { 1 }].entries.push(entry);
    }
    for m in &manifests {
        write_file(&dir.join(m.split.file_name()), m.to_text().as_bytes())?;
    }
    let [train, test] = manifests;
    Ok((train, test))
}

pub fn read_manifest(dir: &Path, split: Split) -> Result<Manifest> {
    let path = dir.join(split.file_name());
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = Manifest::parse(&text)?;
    if m.split != split {
        return Err(Error::Config(format!("{} is tagged {}", path.display(), m.split.as_str())));
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub path: PathBuf,
    pub image: Image<f32>,
    pub label: Class,
    pub lesion: Option<Mask>,
    pub seed: u64,
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<LoadedSample>> {
    let m = read_manifest(dir, split)?;
    m.entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.path);
            let image = read_image(&path)?;
            let lesion = if e.has_mask() { Some(read_mask(&dir.join(e.mask_path()))?) } else { None };
            Ok(LoadedSample { path, image, label: e.label, lesion, seed: e.seed })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::generate_set;

    #[test]
    fn split_is_ninety_ten() {
        for k in [1usize, 9, 10, 11, 95, 2000] {
            let (a, b) = split_sizes(k);
            assert_eq!(a + b, k);
            assert!((a as f64 - 0.9 * k as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn parse_rejects_duplicates_and_bad_lines() {
        let ok = "# split=test\na.ptad\thealthy\t1\n";
        assert_eq!(Manifest::parse(ok).unwrap().entries.len(), 1);
        assert!(Manifest::parse("# split=test\na\thealthy\t1\na\tdiseased\t2\n").is_err());
        assert!(Manifest::parse("# split=test\na\thealthy\n").is_err());
        assert!(Manifest::parse("a\thealthy\t1\n").is_err());
        assert!(Manifest::parse("# split=test\na\tmaybe\t1\n").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = PhantomParams::default();
        let set = generate_set(4, 20, &params).unwrap();
        let (train, test) = write_dataset(dir.path(), &set, 4, &params).unwrap();
        assert_eq!((train.entries.len(), test.entries.len()), (18, 2));
        assert_eq!(read_manifest(dir.path(), Split::Train).unwrap(), train);
        let loaded = load_split(dir.path(), Split::Train).unwrap();
        for (l, s) in loaded.iter().zip(&set.samples) {
            assert_eq!(l.image, s.image);
            assert_eq!(l.label, s.label);
            assert_eq!(l.lesion.is_some(), s.label == Class::Diseased);
            if let Some(m) = &l.lesion {
                assert_eq!(m, &s.lesion);
            }
        }
        let train_paths: HashSet<_> = train.entries.iter().map(|e| &e.path).collect();
        assert!(test.entries.iter().all(|e| !train_paths.contains(&e.path)));
    }
}
