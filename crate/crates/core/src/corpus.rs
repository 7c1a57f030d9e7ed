//! Labeled corpus loading.
//!
//! A corpus is described by a headerless manifest, one record per line:
//!
//! ```text
//! relative/path<TAB>FamilyName<TAB>TypeName[<TAB>index]
//! ```
//!
//! Paths are resolved against the manifest's directory. Blank lines and lines
//! starting with `#` are ignored. Family indices follow first appearance in
//! the file unless a fourth column pins them explicitly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("MissingFile: {path}")]
    MissingFile { path: PathBuf },
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("MalformedRecord: line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("InconsistentTypeMapping: family {family} is listed as both {first} and {second}")]
    InconsistentTypeMapping {
        family: String,
        first: MalwareType,
        second: MalwareType,
    },
    #[error("InconsistentIndex: family {family} is given indices {first} and {second}")]
    InconsistentIndex {
        family: String,
        first: usize,
        second: usize,
    },
    #[error("DuplicateIndex: index {index} is used by {first} and {second}")]
    DuplicateIndex {
        index: usize,
        first: String,
        second: String,
    },
    #[error("DuplicatePath: line {line}: {path}")]
    DuplicatePath { line: usize, path: PathBuf },
    #[error("UnknownFamily: {0}")]
    UnknownFamily(String),
    #[error("UnknownType: {0}")]
    UnknownType(String),
    #[error("SampleTooShort: {path} has {len} bytes, need at least {min}")]
    SampleTooShort { path: PathBuf, len: usize, min: usize },
}

impl CorpusError {
    /// Stable short name of the error, used on the CLI diagnostic line.
    pub fn kind(&self) -> &'static str {
        match self {
            CorpusError::MissingFile { .. } => "MissingFile",
            CorpusError::Io { .. } => "Io",
            CorpusError::MalformedRecord { .. } => "MalformedRecord",
            CorpusError::InconsistentTypeMapping { .. } => "InconsistentTypeMapping",
            CorpusError::InconsistentIndex { .. } => "InconsistentIndex",
            CorpusError::DuplicateIndex { .. } => "DuplicateIndex",
            CorpusError::DuplicatePath { .. } => "DuplicatePath",
            CorpusError::UnknownFamily(_) => "UnknownFamily",
            CorpusError::UnknownType(_) => "UnknownType",
            CorpusError::SampleTooShort { .. } => "SampleTooShort",
        }
    }
}

/// Behavioral category of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MalwareType {
    Trojan,
    TrojanDownloader,
    VirTool,
    PasswordStealer,
    Backdoor,
    Worm,
    Rogue,
    Adware,
}

impl MalwareType {
    pub const ALL: [MalwareType; 8] = [
        MalwareType::Trojan,
        MalwareType::TrojanDownloader,
        MalwareType::VirTool,
        MalwareType::PasswordStealer,
        MalwareType::Backdoor,
        MalwareType::Worm,
        MalwareType::Rogue,
        MalwareType::Adware,
    ];

    /// Type used in type-level experiments: downloaders count as trojans,
    /// which leaves seven distinct types.
    pub fn collapsed(self) -> MalwareType {
        match self {
            MalwareType::TrojanDownloader => MalwareType::Trojan,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MalwareType::Trojan => "Trojan",
            MalwareType::TrojanDownloader => "TrojanDownloader",
            MalwareType::VirTool => "VirTool",
            MalwareType::PasswordStealer => "PasswordStealer",
            MalwareType::Backdoor => "Backdoor",
            MalwareType::Worm => "Worm",
            MalwareType::Rogue => "Rogue",
            MalwareType::Adware => "Adware",
        }
    }
}

impl fmt::Display for MalwareType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MalwareType {
    type Err = CorpusError;

    /// Case-insensitive; spaces, `-` and `_` are ignored, so
    /// `"Trojan Downloader"` parses as [`MalwareType::TrojanDownloader`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '_'))
            .flat_map(char::to_lowercase)
            .collect();
        MalwareType::ALL
            .into_iter()
            .find(|t| t.name().to_lowercase() == key)
            .ok_or_else(|| CorpusError::UnknownType(s.to_string()))
    }
}

/// The twenty reference families and their types, in index order.
pub const REFERENCE_FAMILIES: [(&str, MalwareType); 20] = [
    ("Adload", MalwareType::TrojanDownloader),
    ("Agent", MalwareType::Trojan),
    ("Alureon", MalwareType::Trojan),
    ("BHO", MalwareType::Trojan),
    ("CeeInject", MalwareType::VirTool),
    ("Cycbot.G", MalwareType::Backdoor),
    ("DelfInject", MalwareType::VirTool),
    ("FakeRean", MalwareType::Rogue),
    ("Hotbar", MalwareType::Adware),
    ("Lolyda.BF", MalwareType::PasswordStealer),
    ("Obfuscator", MalwareType::VirTool),
    ("OnLineGames", MalwareType::PasswordStealer),
    ("Rbot", MalwareType::Backdoor),
    ("Renos", MalwareType::TrojanDownloader),
    ("Startpage", MalwareType::Trojan),
    ("Vobfus", MalwareType::Worm),
    ("Vundo", MalwareType::TrojanDownloader),
    ("Winwebsec", MalwareType::Rogue),
    ("Zbot", MalwareType::PasswordStealer),
    ("Zeroaccess", MalwareType::Trojan),
];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FamilyLabel {
    pub name: String,
    pub index: usize,
    pub malware_type: MalwareType,
}

/// One binary sample, read fully into memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub family: FamilyLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub relative: String,
    /// Path resolved against the manifest directory.
    pub path: PathBuf,
    /// Position of the family in [`Manifest::families`].
    pub family: usize,
}

/// Which samples an experiment draws from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selector {
    All,
    Families(Vec<String>),
    /// Matches a family if its type or its collapsed type is listed, so
    /// `Trojan` also selects downloaders.
    Types(Vec<MalwareType>),
}

#[derive(Clone, Debug)]
pub struct Manifest {
    root: PathBuf,
    families: Vec<FamilyLabel>,
    entries: Vec<ManifestEntry>,
}

/// Formats one manifest record.
pub fn format_record(relative: &str, family: &FamilyLabel) -> String {
    format!(
        "{}\t{}\t{}\t{}\n",
        relative, family.name, family.malware_type, family.index
    )
}

struct PendingFamily {
    name: String,
    malware_type: MalwareType,
    index: Option<usize>,
}

impl Manifest {
    /// Reads, validates, and checks that every listed sample exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest, CorpusError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(CorpusError::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let manifest = Manifest::parse(&text, root)?;
        manifest.verify_paths()?;
        Ok(manifest)
    }

    /// Parses manifest text without touching the listed files.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Manifest, CorpusError> {
        let root = root.into();
        let mut pending: Vec<PendingFamily> = Vec::new();
        let mut by_name: HashMap<String, usize> = HashMap::new();
        let mut raw_entries: Vec<(String, PathBuf, usize)> = Vec::new();
        let mut seen_paths: HashSet<PathBuf> = HashSet::new();

        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 && fields.len() != 4 {
                return Err(CorpusError::MalformedRecord {
                    line: line_no,
                    reason: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
                });
            }
            if let Some(i) = fields.iter().position(|f| f.trim().is_empty()) {
                return Err(CorpusError::MalformedRecord {
                    line: line_no,
                    reason: format!("field {} is empty", i + 1),
                });
            }
            let relative = fields[0].to_string();
            let family = fields[1].trim().to_string();
            let malware_type: MalwareType =
                fields[2]
                    .trim()
                    .parse()
                    .map_err(|_| CorpusError::MalformedRecord {
                        line: line_no,
                        reason: format!("unknown malware type {:?}", fields[2].trim()),
                    })?;
            let index = match fields.get(3) {
                Some(raw) => Some(raw.trim().parse::<usize>().map_err(|_| {
                    CorpusError::MalformedRecord {
                        line: line_no,
                        reason: format!("index {:?} is not a non-negative integer", raw.trim()),
                    }
                })?),
                None => None,
            };

            let slot = match by_name.get(&family) {
                Some(&slot) => {
                    let known = &mut pending[slot];
                    if known.malware_type != malware_type {
                        return Err(CorpusError::InconsistentTypeMapping {
                            family,
                            first: known.malware_type,
                            second: malware_type,
                        });
                    }
                    match (known.index, index) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(CorpusError::InconsistentIndex {
                                family,
                                first: a,
                                second: b,
                            })
                        }
                        (None, Some(b)) => known.index = Some(b),
                        _ => {}
                    }
                    slot
                }
                None => {
                    pending.push(PendingFamily {
                        name: family.clone(),
                        malware_type,
                        index,
                    });
                    by_name.insert(family, pending.len() - 1);
                    pending.len() - 1
                }
            };

            let path = root.join(&relative);
            if !seen_paths.insert(path.clone()) {
                return Err(CorpusError::DuplicatePath {
                    line: line_no,
                    path,
                });
            }
            raw_entries.push((relative, path, slot));
        }

        let families = assign_indices(pending)?;
        // pending slot -> position in the index-sorted family list
        let mut position = vec![0; families.len()];
        let mut sorted: Vec<(usize, FamilyLabel)> = families.into_iter().enumerate().collect();
        sorted.sort_by_key(|(_, f)| f.index);
        for (pos, (slot, _)) in sorted.iter().enumerate() {
            position[*slot] = pos;
        }
        let families: Vec<FamilyLabel> = sorted.into_iter().map(|(_, f)| f).collect();
        let entries = raw_entries
            .into_iter()
            .map(|(relative, path, slot)| ManifestEntry {
                relative,
                path,
                family: position[slot],
            })
            .collect();
        Ok(Manifest {
            root,
            families,
            entries,
        })
    }

    /// Fails on the first listed sample that is not a readable file.
    pub fn verify_paths(&self) -> Result<(), CorpusError> {
        for entry in &self.entries {
            if !entry.path.is_file() {
                return Err(CorpusError::MissingFile {
                    path: entry.path.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Families sorted by index.
    pub fn families(&self) -> &[FamilyLabel] {
        &self.families
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Looks a family up by name, ignoring ASCII case.
    pub fn family(&self, name: &str) -> Result<&FamilyLabel, CorpusError> {
        self.families
            .iter()
            .find(|f| f.name == name)
            .or_else(|| {
                self.families
                    .iter()
                    .find(|f| f.name.eq_ignore_ascii_case(name))
            })
            .ok_or_else(|| CorpusError::UnknownFamily(name.to_string()))
    }

    /// Sample counts per type, optionally with downloaders folded into trojans.
    pub fn type_histogram(&self, collapsed: bool) -> BTreeMap<MalwareType, usize> {
        let mut hist = BTreeMap::new();
        for entry in &self.entries {
            let t = self.families[entry.family].malware_type;
            let t = if collapsed { t.collapsed() } else { t };
            *hist.entry(t).or_insert(0) += 1;
        }
        hist
    }

    /// Entries matching the selector, in manifest order.
    pub fn select(&self, selector: &Selector) -> Result<Vec<&ManifestEntry>, CorpusError> {
        let wanted: Vec<bool> = match selector {
            Selector::All => vec![true; self.families.len()],
            Selector::Families(names) => {
                let mut wanted = vec![false; self.families.len()];
                for name in names {
                    let family = self.family(name)?;
                    let pos = self
                        .families
                        .iter()
                        .position(|f| f == family)
                        .expect("family comes from this manifest");
                    wanted[pos] = true;
                }
                wanted
            }
            Selector::Types(types) => {
                for t in types {
                    let present = self
                        .families
                        .iter()
                        .any(|f| f.malware_type == *t || f.malware_type.collapsed() == *t);
                    if !present {
                        return Err(CorpusError::UnknownType(t.to_string()));
                    }
                }
                self.families
                    .iter()
                    .map(|f| {
                        types
                            .iter()
                            .any(|t| f.malware_type == *t || f.malware_type.collapsed() == *t)
                    })
                    .collect()
            }
        };
        Ok(self.entries.iter().filter(|e| wanted[e.family]).collect())
    }

    /// Lazily reads the selected samples in manifest order.
    pub fn samples_for<'a>(
        &'a self,
        selector: &Selector,
    ) -> Result<impl Iterator<Item = Result<Sample, CorpusError>> + 'a, CorpusError> {
        let selected = self.select(selector)?;
        Ok(selected.into_iter().map(move |entry| self.read_entry(entry)))
    }

    /// Reads the selected samples into memory, rejecting any shorter than
    /// `min_len` bytes.
    pub fn load_samples(
        &self,
        selector: &Selector,
        min_len: usize,
    ) -> Result<Vec<Sample>, CorpusError> {
        let selected = self.select(selector)?;
        par::try_map(&selected, |entry| {
            let sample = self.read_entry(entry)?;
            if sample.bytes.len() < min_len {
                return Err(CorpusError::SampleTooShort {
                    path: sample.path,
                    len: sample.bytes.len(),
                    min: min_len,
                });
            }
            Ok(sample)
        })
    }

    fn read_entry(&self, entry: &ManifestEntry) -> Result<Sample, CorpusError> {
        let bytes = fs::read(&entry.path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                CorpusError::MissingFile {
                    path: entry.path.clone(),
                }
            } else {
                CorpusError::Io {
                    path: entry.path.clone(),
                    source,
                }
            }
        })?;
        Ok(Sample {
            path: entry.path.clone(),
            bytes,
            family: self.families[entry.family].clone(),
        })
    }
}

fn assign_indices(pending: Vec<PendingFamily>) -> Result<Vec<FamilyLabel>, CorpusError> {
    let mut owner: BTreeMap<usize, String> = BTreeMap::new();
    for fam in &pending {
        if let Some(index) = fam.index {
            if let Some(first) = owner.insert(index, fam.name.clone()) {
                return Err(CorpusError::DuplicateIndex {
                    index,
                    first,
                    second: fam.name.clone(),
                });
            }
        }
    }
    let mut next = 0;
    Ok(pending
        .into_iter()
        .map(|fam| {
            let index = match fam.index {
                Some(index) => index,
                None => {
                    while owner.contains_key(&next) {
                        next += 1;
                    }
                    owner.insert(next, fam.name.clone());
                    next
                }
            };
            FamilyLabel {
                name: fam.name,
                index,
                malware_type: fam.malware_type,
            }
        })
        .collect())
}
