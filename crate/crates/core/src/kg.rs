//! Triple datasets in the id-mapped benchmark layout.
//!
//! A dataset directory holds `entity2id.txt` and `relation2id.txt`
//! (`name<TAB>id` per line, optionally preceded by a count line) and the
//! split files `train2id.txt`, `valid2id.txt`, `test2id.txt`. Each split file
//! starts with the triple count and then lists `head tail relation` per line.
//! Note the token order: relation comes last on disk.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rustc_hash::FxHashSet;
use thiserror::Error;

pub const ENTITY_FILE: &str = "entity2id.txt";
pub const RELATION_FILE: &str = "relation2id.txt";
pub const TRAIN_FILE: &str = "train2id.txt";
pub const VALID_FILE: &str = "valid2id.txt";
pub const TEST_FILE: &str = "test2id.txt";

/// An integer-indexed `(head, relation, tail)` fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => TRAIN_FILE,
            Split::Valid => VALID_FILE,
            Split::Test => TEST_FILE,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: {what} id {id} out of range (count {count})")]
    OutOfRange {
        file: String,
        line: usize,
        what: &'static str,
        id: u64,
        count: usize,
    },
    #[error("{file}:{line}: duplicate mapping: {message}")]
    Duplicate {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: {message}")]
    Inconsistent { file: String, message: String },
    #[error("knowledge graph needs at least one entity and one relation")]
    EmptyVocabulary,
    #[error("{split} triple {triple} out of range ({entities} entities, {relations} relations)")]
    TripleOutOfRange {
        split: Split,
        triple: Triple,
        entities: usize,
        relations: usize,
    },
}

/// Entity/relation vocabularies, the three splits, and the set of every known
/// golden triple (used by filtered ranking and corruption rejection).
///
/// Immutable after construction, so any number of workers may read it.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    golden: FxHashSet<Triple>,
    entity_names: Option<Vec<String>>,
    relation_names: Option<Vec<String>>,
}

impl KnowledgeGraph {
    /// Builds a graph from already indexed splits, validating every index.
    pub fn new(
        entity_count: usize,
        relation_count: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, DataError> {
        if entity_count == 0 || relation_count == 0 {
            return Err(DataError::EmptyVocabulary);
        }
        for (split, triples) in [
            (Split::Train, &train),
            (Split::Valid, &valid),
            (Split::Test, &test),
        ] {
            if let Some(bad) = triples.iter().find(|t| {
                t.head as usize >= entity_count
                    || t.tail as usize >= entity_count
                    || t.relation as usize >= relation_count
            }) {
                return Err(DataError::TripleOutOfRange {
                    split,
                    triple: *bad,
                    entities: entity_count,
                    relations: relation_count,
                });
            }
        }

        let mut golden = FxHashSet::with_capacity_and_hasher(
            train.len() + valid.len() + test.len(),
            Default::default(),
        );
        golden.extend(train.iter().chain(&valid).chain(&test).copied());

        Ok(KnowledgeGraph {
            entity_count,
            relation_count,
            train,
            valid,
            test,
            golden,
            entity_names: None,
            relation_names: None,
        })
    }

    pub fn with_names(
        mut self,
        entity_names: Option<Vec<String>>,
        relation_names: Option<Vec<String>>,
    ) -> Self {
        self.entity_names = entity_names.filter(|n| n.len() == self.entity_count);
        self.relation_names = relation_names.filter(|n| n.len() == self.relation_count);
        self
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Distinct triples over all three splits.
    pub fn golden_set(&self) -> &FxHashSet<Triple> {
        &self.golden
    }

    pub fn entity_names(&self) -> Option<&[String]> {
        self.entity_names.as_deref()
    }

    pub fn relation_names(&self) -> Option<&[String]> {
        self.relation_names.as_deref()
    }

    /// True iff `triple` occurs in any split.
    #[inline]
    pub fn contains(&self, triple: &Triple) -> bool {
        debug_assert!(
            (triple.head as usize) < self.entity_count
                && (triple.tail as usize) < self.entity_count
                && (triple.relation as usize) < self.relation_count,
            "triple {triple} out of range"
        );
        self.golden.contains(triple)
    }
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entity_count == other.entity_count
            && self.relation_count == other.relation_count
            && self.train == other.train
            && self.valid == other.valid
            && self.test == other.test
            && self.golden == other.golden
    }
}

/// Loads a dataset directory. `valid2id.txt` and `test2id.txt` may be absent,
/// in which case those splits are empty.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<KnowledgeGraph, DataError> {
    let dir = dir.as_ref();
    let entity_names = read_name_table(&dir.join(ENTITY_FILE), "entity")?;
    let relation_names = read_name_table(&dir.join(RELATION_FILE), "relation")?;
    let (entities, relations) = (entity_names.len(), relation_names.len());

    let train = read_triples(&dir.join(TRAIN_FILE), entities, relations)?;
    let optional = |split: Split| -> Result<Vec<Triple>, DataError> {
        let path = dir.join(split.file_name());
        if path.exists() {
            read_triples(&path, entities, relations)
        } else {
            Ok(Vec::new())
        }
    };
    let valid = optional(Split::Valid)?;
    let test = optional(Split::Test)?;

    Ok(
        KnowledgeGraph::new(entities, relations, train, valid, test)?
            .with_names(Some(entity_names), Some(relation_names)),
    )
}

/// Writes `kg` in the layout read by [`load_dataset`]. Missing names are
/// written as `e<id>` / `r<id>`.
pub fn write_dataset(kg: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_owned(),
        source,
    })?;

    let write = |name: &str, body: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| {
        let path = dir.join(name);
        let io = |source| DataError::Io {
            path: path.clone(),
            source,
        };
        let mut out = BufWriter::new(fs::File::create(&path).map_err(io)?);
        body(&mut out).map_err(io)?;
        out.flush().map_err(io)
    };

    write(ENTITY_FILE, &|out| {
        writeln!(out, "{}", kg.entity_count)?;
        for id in 0..kg.entity_count {
            match &kg.entity_names {
                Some(names) => writeln!(out, "{}\t{id}", names[id])?,
                None => writeln!(out, "e{id}\t{id}")?,
            }
        }
        Ok(())
    })?;
    write(RELATION_FILE, &|out| {
        writeln!(out, "{}", kg.relation_count)?;
        for id in 0..kg.relation_count {
            match &kg.relation_names {
                Some(names) => writeln!(out, "{}\t{id}", names[id])?,
                None => writeln!(out, "r{id}\t{id}")?,
            }
        }
        Ok(())
    })?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        write(split.file_name(), &|out| {
            let triples = kg.split(split);
            writeln!(out, "{}", triples.len())?;
            for t in triples {
                writeln!(out, "{} {} {}", t.head, t.tail, t.relation)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_owned()));
    }
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a `name<TAB>id` table into a dense id-indexed name list.
fn read_name_table(path: &Path, what: &'static str) -> Result<Vec<String>, DataError> {
    let text = read_file(path)?;
    let file = file_label(path);

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let mut declared = None;
    if let Some(&(line, first)) = lines.peek() {
        let tokens: Vec<&str> = first.split_whitespace().collect();
        if tokens.len() == 1 {
            let count = tokens[0]
                .parse::<usize>()
                .map_err(|_| DataError::Malformed {
                    file: file.clone(),
                    line,
                    message: format!("expected a count or `name<TAB>id`, found {first:?}"),
                })?;
            declared = Some(count);
            lines.next();
        }
    }

    let mut names: Vec<Option<String>> = Vec::with_capacity(declared.unwrap_or(0));
    let mut seen = FxHashSet::default();
    for (line, raw) in lines {
        let (name, id) = match raw.rsplit_once('\t') {
            Some((name, id)) => (name.trim(), id.trim()),
            None => {
                let tokens: Vec<&str> = raw.split_whitespace().collect();
                if tokens.len() != 2 {
                    return Err(DataError::Malformed {
                        file,
                        line,
                        message: format!("expected `name<TAB>id`, found {} tokens", tokens.len()),
                    });
                }
                (tokens[0], tokens[1])
            }
        };
        if name.is_empty() {
            return Err(DataError::Malformed {
                file,
                line,
                message: "empty name".into(),
            });
        }
        let id: u64 = id.parse().map_err(|_| DataError::Malformed {
            file: file.clone(),
            line,
            message: format!("non-numeric {what} id {id:?}"),
        })?;
        if let Some(count) = declared {
            if id >= count as u64 {
                return Err(DataError::OutOfRange {
                    file,
                    line,
                    what,
                    id,
                    count,
                });
            }
        }
        let id = id as usize;
        if !seen.insert(name.to_owned()) {
            return Err(DataError::Duplicate {
                file,
                line,
                message: format!("{what} name {name:?} listed twice"),
            });
        }
        if id >= names.len() {
            names.resize(id + 1, None);
        }
        if names[id].is_some() {
            return Err(DataError::Duplicate {
                file,
                line,
                message: format!("{what} id {id} assigned twice"),
            });
        }
        names[id] = Some(name.to_owned());
    }

    let count = declared.unwrap_or(names.len());
    if names.len() != count {
        return Err(DataError::Inconsistent {
            file,
            message: format!(
                "header declares {count} {what}s but {} lines found",
                names.len()
            ),
        });
    }
    names
        .into_iter()
        .enumerate()
        .map(|(id, n)| {
            n.ok_or_else(|| DataError::Inconsistent {
                file: file.clone(),
                message: format!("{what} ids are not dense: id {id} missing"),
            })
        })
        .collect()
}

fn read_triples(path: &Path, entities: usize, relations: usize) -> Result<Vec<Triple>, DataError> {
    let text = read_file(path)?;
    let file = file_label(path);

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (line, header) = lines.next().ok_or_else(|| DataError::Malformed {
        file: file.clone(),
        line: 1,
        message: "empty file, expected a triple count".into(),
    })?;
    let declared: usize = header.trim().parse().map_err(|_| DataError::Malformed {
        file: file.clone(),
        line,
        message: format!("expected a triple count, found {:?}", header.trim()),
    })?;

    let mut triples = Vec::with_capacity(declared);
    for (line, raw) in lines {
        let mut ids = [0u64; 3];
        let mut n = 0;
        for token in raw.split_whitespace() {
            if n == 3 {
                n += 1;
                break;
            }
            ids[n] = token.parse().map_err(|_| DataError::Malformed {
                file: file.clone(),
                line,
                message: format!("non-numeric id {token:?}"),
            })?;
            n += 1;
        }
        if n != 3 {
            return Err(DataError::Malformed {
                file,
                line,
                message: "expected 3 ids `head tail relation`".into(),
            });
        }
        let [head, tail, relation] = ids;
        for (what, id, count) in [
            ("head entity", head, entities),
            ("tail entity", tail, entities),
            ("relation", relation, relations),
        ] {
            if id >= count as u64 {
                return Err(DataError::OutOfRange {
                    file,
                    line,
                    what,
                    id,
                    count,
                });
            }
        }
        triples.push(Triple::new(head as u32, relation as u32, tail as u32));
    }

    if triples.len() != declared {
        return Err(DataError::Inconsistent {
            file,
            message: format!(
                "header declares {declared} triples but {} found",
                triples.len()
            ),
        });
    }
    Ok(triples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn minimal(dir: &Path) {
        write(dir, ENTITY_FILE, "2\na\t0\nb\t1\n");
        write(dir, RELATION_FILE, "1\nr\t0\n");
        write(dir, TRAIN_FILE, "1\n0 1 0\n");
    }

    #[test]
    fn minimal_single_triple() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let kg = load_dataset(dir.path()).unwrap();
        assert_eq!(kg.entity_count(), 2);
        assert_eq!(kg.relation_count(), 1);
        assert_eq!(kg.train(), &[Triple::new(0, 0, 1)]);
        assert!(kg.valid().is_empty() && kg.test().is_empty());
        assert_eq!(kg.golden_set().len(), 1);
        assert!(kg.contains(&Triple::new(0, 0, 1)));
        assert!(!kg.contains(&Triple::new(1, 0, 0)));
        assert_eq!(kg.entity_names().unwrap(), ["a", "b"]);
    }

    #[test]
    fn name_table_without_count_line() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), ENTITY_FILE, "b\t1\na\t0\n");
        let kg = load_dataset(dir.path()).unwrap();
        assert_eq!(kg.entity_names().unwrap(), ["a", "b"]);
    }

    #[test]
    fn duplicates_kept_in_split_but_not_in_golden_set() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), TRAIN_FILE, "2\n0 1 0\n0 1 0\n");
        write(dir.path(), TEST_FILE, "1\n0 1 0\n");
        let kg = load_dataset(dir.path()).unwrap();
        assert_eq!(kg.train().len(), 2);
        assert_eq!(kg.test().len(), 1);
        assert_eq!(kg.golden_set().len(), 1);
    }

    fn load_err(entity: &str, relation: &str, train: &str) -> String {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), ENTITY_FILE, entity);
        write(dir.path(), RELATION_FILE, relation);
        write(dir.path(), TRAIN_FILE, train);
        load_dataset(dir.path()).unwrap_err().to_string()
    }

    #[test]
    fn errors_carry_file_and_line() {
        let ent = "2\na\t0\nb\t1\n";
        let rel = "1\nr\t0\n";

        let e = load_err(ent, rel, "2\n0 1 0\n0 1\n");
        assert!(e.starts_with("train2id.txt:3:"), "{e}");

        let e = load_err(ent, rel, "1\n0 x 0\n");
        assert!(
            e.contains("train2id.txt:2") && e.contains("non-numeric"),
            "{e}"
        );

        let e = load_err(ent, rel, "1\n0 2 0\n");
        assert!(
            e.contains("train2id.txt:2") && e.contains("out of range"),
            "{e}"
        );

        let e = load_err(ent, rel, "1\n0 1 1\n");
        assert!(e.contains("relation id 1"), "{e}");

        let e = load_err("2\na\t0\na\t1\n", rel, "1\n0 1 0\n");
        assert!(
            e.contains("entity2id.txt:3") && e.contains("duplicate"),
            "{e}"
        );

        let e = load_err("2\na\t0\nb\t0\n", rel, "1\n0 1 0\n");
        assert!(e.contains("assigned twice"), "{e}");

        let e = load_err("2\na\t0\nb\t5\n", rel, "1\n0 1 0\n");
        assert!(
            e.contains("entity2id.txt:3") && e.contains("out of range"),
            "{e}"
        );

        let e = load_err(ent, rel, "3\n0 1 0\n");
        assert!(e.contains("declares 3"), "{e}");
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), ENTITY_FILE, "1\na\t0\n");
        let e = load_dataset(dir.path()).unwrap_err();
        assert!(
            matches!(e, DataError::MissingFile(ref p) if p.ends_with(RELATION_FILE)),
            "{e}"
        );
    }

    #[test]
    fn exhaustive_membership_matches_linear_scan() {
        let train = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(2, 0, 2),
        ];
        let valid = vec![Triple::new(2, 1, 0)];
        let test = vec![Triple::new(0, 1, 0), Triple::new(0, 0, 1)];
        let kg = KnowledgeGraph::new(3, 2, train.clone(), valid.clone(), test.clone()).unwrap();
        let all: Vec<Triple> = train.into_iter().chain(valid).chain(test).collect();
        for h in 0..3 {
            for r in 0..2 {
                for t in 0..3 {
                    let q = Triple::new(h, r, t);
                    assert_eq!(kg.contains(&q), all.contains(&q), "{q}");
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_range_construction() {
        let e = KnowledgeGraph::new(2, 1, vec![], vec![], vec![Triple::new(0, 0, 2)]).unwrap_err();
        assert!(matches!(
            e,
            DataError::TripleOutOfRange {
                split: Split::Test,
                ..
            }
        ));
        assert!(matches!(
            KnowledgeGraph::new(0, 1, vec![], vec![], vec![]),
            Err(DataError::EmptyVocabulary)
        ));
    }
}
