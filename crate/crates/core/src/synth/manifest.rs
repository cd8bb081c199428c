use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{format_err, invalid, io_at, Result};

use super::generate::{generate_sample, SynthSpec};
use super::pnm;
use super::SegSample;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

/// One image/mask pair. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Hex SHA-256 of the generator spec.
    pub spec_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# seed={} spec={}\n", self.seed, self.spec_hash);
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.split, e.image, e.mask));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |detail: String| format_err("manifest", detail);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty manifest".into()))?;
        let rest = header
            .strip_prefix("# seed=")
            .ok_or_else(|| bad(format!("bad header line {header:?}")))?;
        let (seed, hash) = rest
            .split_once(" spec=")
            .ok_or_else(|| bad(format!("bad header line {header:?}")))?;
        let seed = seed.parse().map_err(|_| bad(format!("bad seed {seed:?}")))?;
        if hash.is_empty() || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad(format!("bad spec hash {hash:?}")));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let [split, image, mask] = parts[..] else {
                return Err(bad(format!("line {}: expected 3 tab-separated fields", n + 2)));
            };
            entries.push(ManifestEntry {
                split: split.parse().map_err(|_| bad(format!("line {}: bad split {split:?}", n + 2)))?,
                image: image.to_string(),
                mask: mask.to_string(),
            });
        }
        let m = DatasetManifest {
            seed,
            spec_hash: hash.to_string(),
            entries,
        };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            for p in [&e.image, &e.mask] {
                if !seen.insert(p.as_str()) {
                    return Err(format_err("manifest", format!("duplicate path {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        Self::parse(&text)
    }
}

/// Writes `spec.n_images` samples and the manifest into `dir`. The first
/// `splits.0` images are train, the next `splits.1` val, the rest test.
pub fn generate_dataset(
    spec: &SynthSpec,
    seed: u64,
    splits: (usize, usize, usize),
    dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let (tr, va, te) = splits;
    if tr + va + te != spec.n_images {
        return Err(invalid(format!(
            "split counts {tr}+{va}+{te} do not sum to n_images={}",
            spec.n_images
        )));
    }
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut entries = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let sample = generate_sample(spec, seed, i);
        let image = format!("img_{i:05}.ppm");
        let mask = format!("msk_{i:05}.pgm");
        fs::write(dir.join(&image), pnm::write_image_ppm(&sample.image)?)?;
        fs::write(dir.join(&mask), pnm::write_mask_pgm(&sample.mask))?;
        let split = if i < tr {
            Split::Train
        } else if i < tr + va {
            Split::Val
        } else {
            Split::Test
        };
        entries.push(ManifestEntry { split, image, mask });
    }
    let manifest = DatasetManifest {
        seed,
        spec_hash: spec.hash_hex(),
        entries,
    };
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

/// Reads every sample of one split from a dataset directory.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<SegSample>> {
    let manifest = DatasetManifest::load(dir)?;
    manifest
        .split(split)
        .map(|e| {
            let (ip, mp) = (dir.join(&e.image), dir.join(&e.mask));
            let image = pnm::read_image_ppm(&fs::read(&ip).map_err(io_at(&ip))?)?;
            let mask = pnm::read_mask_pgm(&fs::read(&mp).map_err(io_at(&mp))?)?;
            SegSample::new(image, mask)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize) -> SynthSpec {
        SynthSpec {
            n_images: n,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn text_roundtrip() {
        let m = DatasetManifest {
            seed: 42,
            spec_hash: "ab01".into(),
            entries: vec![
                ManifestEntry {
                    split: Split::Train,
                    image: "img_00000.ppm".into(),
                    mask: "msk_00000.pgm".into(),
                },
                ManifestEntry {
                    split: Split::Test,
                    image: "img_00001.ppm".into(),
                    mask: "msk_00001.pgm".into(),
                },
            ],
        };
        let text = m.to_text();
        assert!(text.starts_with("# seed=42 spec=ab01\ntrain\timg_00000.ppm\tmsk_00000.pgm\n"));
        let back = DatasetManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_manifests_rejected() {
        assert!(DatasetManifest::parse("").is_err());
        assert!(DatasetManifest::parse("seed=1 spec=aa\n").is_err());
        assert!(DatasetManifest::parse("# seed=x spec=aa\n").is_err());
        assert!(DatasetManifest::parse("# seed=1 spec=aa\ntrain\ta\n").is_err());
        assert!(DatasetManifest::parse("# seed=1 spec=aa\nfoo\ta\tb\n").is_err());
        assert!(DatasetManifest::parse("# seed=1 spec=aa\ntrain\ta\tb\ntest\ta\tc\n").is_err());
    }

    #[test]
    fn generate_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(4);
        let m = generate_dataset(&spec, 3, (2, 1, 1), dir.path()).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.entries[2].split, Split::Val);
        let train = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train[1], generate_sample(&spec, 3, 1));
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn split_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&small_spec(4), 3, (2, 1, 2), dir.path()).is_err());
    }
}
