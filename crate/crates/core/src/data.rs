//! Triple files, vocabularies, and the known-triple filter index.
//!
//! Triple files are UTF-8 TSV with one `head<TAB>relation<TAB>tail` per line
//! and no header. Entity and relation ids are dense and assigned in order of
//! first appearance over the train, valid, and test files, in that order, so
//! entities that only occur in evaluation splits are still rankable.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("training split is empty")]
    EmptyTrain,
    #[error("triple ({head}, {rel}, {tail}) is out of range")]
    OutOfRange {
        head: EntityId,
        rel: RelationId,
        tail: EntityId,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }
}

/// Bijective name/id mapping with dense zero-based ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, assigning the next free id if it is new.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Writes the `name<TAB>id` sidecar.
    pub fn write_tsv(&self, path: &Path) -> Result<(), DataError> {
        let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (id, name) in self.names.iter().enumerate() {
            writeln!(out, "{name}\t{id}").map_err(|e| DataError::io(path, e))?;
        }
        out.flush().map_err(|e| DataError::io(path, e))
    }
}

/// Membership index over every known triple plus per-query answer lists
/// used by filtered ranking.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    known: HashSet<Triple>,
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn build<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut index = FilterIndex::default();
        for &t in triples {
            if index.known.insert(t) {
                index.tails.entry((t.head, t.rel)).or_default().push(t.tail);
                index.heads.entry((t.rel, t.tail)).or_default().push(t.head);
            }
        }
        for v in index.tails.values_mut().chain(index.heads.values_mut()) {
            v.sort_unstable();
        }
        index
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// Every tail `x` with `(head, rel, x)` known, sorted.
    pub fn known_tails(&self, head: EntityId, rel: RelationId) -> &[EntityId] {
        self.tails.get(&(head, rel)).map_or(&[], Vec::as_slice)
    }

    /// Every head `x` with `(x, rel, tail)` known, sorted.
    pub fn known_heads(&self, rel: RelationId, tail: EntityId) -> &[EntityId] {
        self.heads.get(&(rel, tail)).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone)]
pub struct TripleStore {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    filter: FilterIndex,
}

impl TripleStore {
    pub fn new(train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Self {
        let filter = FilterIndex::build(train.iter().chain(&valid).chain(&test));
        TripleStore {
            train,
            valid,
            test,
            filter,
        }
    }

    /// True iff `t` occurs in any split.
    pub fn contains(&self, t: &Triple) -> bool {
        self.filter.contains(t)
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    pub fn total_len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub entities: Vocab,
    pub relations: Vocab,
    pub store: TripleStore,
    /// Entities that never occur in the training split.
    pub unseen_in_train: usize,
}

/// One split given by names rather than ids.
pub type NamedTriple<'a> = (&'a str, &'a str, &'a str);

impl Dataset {
    /// Builds vocabularies and id triples from named splits.
    pub fn from_named(
        train: &[NamedTriple<'_>],
        valid: &[NamedTriple<'_>],
        test: &[NamedTriple<'_>],
    ) -> Result<Self, DataError> {
        Self::from_named_with(Vocab::new(), Vocab::new(), train, valid, test)
    }

    /// As [`from_named`](Self::from_named), extending vocabularies that may
    /// already hold some names.
    pub fn from_named_with(
        mut entities: Vocab,
        mut relations: Vocab,
        train: &[NamedTriple<'_>],
        valid: &[NamedTriple<'_>],
        test: &[NamedTriple<'_>],
    ) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::EmptyTrain);
        }
        let mut convert = |split: &[NamedTriple<'_>]| -> Vec<Triple> {
            split
                .iter()
                .map(|&(h, r, t)| {
                    let head = entities.intern(h);
                    let rel = relations.intern(r);
                    let tail = entities.intern(t);
                    Triple { head, rel, tail }
                })
                .collect()
        };
        let train = convert(train);
        let valid = convert(valid);
        let test = convert(test);

        let mut seen = vec![false; entities.len()];
        for t in &train {
            seen[t.head as usize] = true;
            seen[t.tail as usize] = true;
        }
        let unseen_in_train = seen.iter().filter(|s| !**s).count();

        Ok(Dataset {
            entities,
            relations,
            store: TripleStore::new(train, valid, test),
            unseen_in_train,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Writes `train.tsv`, `valid.tsv`, `test.tsv` into `dir`.
    pub fn write_tsv(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        for (name, split) in [
            ("train.tsv", &self.store.train),
            ("valid.tsv", &self.store.valid),
            ("test.tsv", &self.store.test),
        ] {
            let path = dir.join(name);
            write_split(&path, split, &self.entities, &self.relations)?;
        }
        Ok(())
    }

    /// Writes the `entities.tsv` and `relations.tsv` sidecars into `dir`.
    pub fn write_vocab_sidecars(&self, dir: &Path) -> Result<(), DataError> {
        self.entities.write_tsv(&dir.join("entities.tsv"))?;
        self.relations.write_tsv(&dir.join("relations.tsv"))
    }
}

pub fn write_split(
    path: &Path,
    triples: &[Triple],
    entities: &Vocab,
    relations: &Vocab,
) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in triples {
        let (Some(h), Some(r), Some(tl)) = (
            entities.name(t.head),
            relations.name(t.rel),
            entities.name(t.tail),
        ) else {
            return Err(DataError::OutOfRange {
                head: t.head,
                rel: t.rel,
                tail: t.tail,
            });
        };
        writeln!(out, "{h}\t{r}\t{tl}").map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

fn parse_split<'a>(path: &Path, text: &'a str) -> Result<Vec<NamedTriple<'a>>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [h, r, t] => out.push((*h, *r, *t)),
            _ => {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    found: fields.len(),
                })
            }
        }
    }
    Ok(out)
}

/// Loads the three split files and builds vocabularies over all of them.
///
/// Duplicate lines are kept in the split lists; the filter index holds each
/// distinct triple once.
pub fn load_dataset(train: &Path, valid: &Path, test: &Path) -> Result<Dataset, DataError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| DataError::io(p, e));
    let (train_text, valid_text, test_text) = (read(train)?, read(valid)?, read(test)?);
    let dataset = Dataset::from_named(
        &parse_split(train, &train_text)?,
        &parse_split(valid, &valid_text)?,
        &parse_split(test, &test_text)?,
    )?;
    log::info!(
        "loaded {} entities, {} relations; train {} / valid {} / test {} (total {})",
        dataset.n_entities(),
        dataset.n_relations(),
        dataset.store.train.len(),
        dataset.store.valid.len(),
        dataset.store.test.len(),
        dataset.store.total_len(),
    );
    if dataset.unseen_in_train > 0 {
        log::warn!(
            "{} entities appear only in valid/test splits",
            dataset.unseen_in_train
        );
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn duplicates_kept_in_split_but_not_in_filter() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train", "a\tr\tb\na\tr\tb\n");
        let va = write(dir.path(), "valid", "");
        let te = write(dir.path(), "test", "");
        let ds = load_dataset(&tr, &va, &te).unwrap();
        assert_eq!(ds.store.train.len(), 2);
        assert_eq!(ds.store.filter().len(), 1);
    }

    #[test]
    fn test_only_entity_gets_id_and_is_counted() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train", "a\tr\tb\n");
        let va = write(dir.path(), "valid", "b\tr\ta\n");
        let te = write(dir.path(), "test", "a\tr\tz\n");
        let ds = load_dataset(&tr, &va, &te).unwrap();
        assert_eq!(ds.entities.id("z"), Some(2));
        assert_eq!(ds.unseen_in_train, 1);
        let t = ds.store.test[0];
        assert!(ds.store.contains(&t));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train", "a\tr\tb\na\tr\n");
        let va = write(dir.path(), "valid", "");
        let te = write(dir.path(), "test", "");
        match load_dataset(&tr, &va, &te) {
            Err(DataError::Parse { line, found, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(found, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_train_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "train", "");
        let va = write(dir.path(), "valid", "a\tr\tb\n");
        let te = write(dir.path(), "test", "");
        assert!(matches!(
            load_dataset(&tr, &va, &te),
            Err(DataError::EmptyTrain)
        ));
    }

    #[test]
    fn self_loops_and_absent_triples() {
        let ds = Dataset::from_named(&[("a", "r", "a"), ("a", "s", "b")], &[], &[]).unwrap();
        assert!(ds.store.contains(&Triple::new(0, 0, 0)));
        assert!(!ds.store.contains(&Triple::new(1, 0, 0)));
        assert_eq!(ds.store.filter().known_tails(0, 1), &[1]);
        assert_eq!(ds.store.filter().known_heads(1, 1), &[0]);
    }

    #[test]
    fn ids_follow_first_appearance() {
        let ds = Dataset::from_named(&[("x", "p", "y"), ("y", "q", "w")], &[("v", "p", "x")], &[])
            .unwrap();
        assert_eq!(ds.entities.names(), &["x", "y", "w", "v"]);
        assert_eq!(ds.relations.names(), &["p", "q"]);
    }
}
