use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Interaction, RelationTriple, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    /// `user,item,rating,timestamp`
    TabularRatings,
    /// `head,relation,tail`
    TripleList,
}

struct Interner {
    index: HashMap<String, usize>,
    ids: Vec<String>,
}

impl Interner {
    fn new() -> Self {
        Self { index: HashMap::new(), ids: Vec::new() }
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }
}

/// `skip_header` decides whether the first record is a header line.
fn records(
    path: &Path,
    expected_fields: usize,
    skip_header: impl Fn(&csv::StringRecord) -> bool,
) -> Result<Vec<(u64, Vec<String>)>, DataError> {
    let display = path.display().to_string();
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(
            |e| match e.into_kind() {
                csv::ErrorKind::Io(io) => DataError::Io(io),
                other => DataError::Invalid(format!("{}: {:?}", display, other)),
            },
        )?;
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Parse {
            path: display.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if k == 0 && skip_header(&rec) {
            continue;
        }
        if rec.len() != expected_fields {
            return Err(DataError::Parse {
                path: display.clone(),
                line,
                message: format!("expected {} fields, found {}", expected_fields, rec.len()),
            });
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    if out.is_empty() {
        return Err(DataError::EmptyFile(display));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, value: &str) -> Result<T, DataError> {
    value.parse().map_err(|_| DataError::Parse {
        path: path.display().to_string(),
        line,
        message: format!("{} field {:?} is not a number", name, value),
    })
}

/// Reads a source file. Ratings are kept on their original scale; call
/// [`super::preprocess`] afterwards. Ids are re-indexed by first appearance.
pub fn load_dataset(path: &Path, format: SourceFormat) -> Result<Dataset, DataError> {
    let mut ds = Dataset::empty();
    match format {
        SourceFormat::TabularRatings => {
            let mut users = Interner::new();
            let mut items = Interner::new();
            for (line, f) in records(path, 4, |r| !r[0].starts_with(|c: char| c.is_ascii_digit()))? {
                let rating: f64 = parse_field(path, line, "rating", &f[2])?;
                if !rating.is_finite() {
                    return Err(DataError::Parse {
                        path: path.display().to_string(),
                        line,
                        message: "rating is not finite".into(),
                    });
                }
                let timestamp: i64 = parse_field(path, line, "timestamp", &f[3])?;
                ds.interactions.push(Interaction {
                    user: users.intern(&f[0]),
                    item: items.intern(&f[1]),
                    rating,
                    timestamp,
                    relevant: false,
                    split: Split::Train,
                });
            }
            ds.n_users = users.ids.len();
            ds.n_items = items.ids.len();
            ds.n_entities = ds.n_items;
            ds.user_ids = users.ids;
            ds.item_ids = items.ids;
        }
        SourceFormat::TripleList => load_triples_into(&mut ds, path)?,
    }
    Ok(ds)
}

/// Adds the triples in `path` to `ds`. Entity ids equal to an item's original
/// id resolve to that item; other entities are appended after the items.
pub fn load_triples_into(ds: &mut Dataset, path: &Path) -> Result<(), DataError> {
    let mut entities = Interner::new();
    for id in ds.item_ids.iter().chain(&ds.extra_entity_ids) {
        entities.intern(id);
    }
    let mut relations = Interner::new();
    for id in &ds.relation_ids {
        relations.intern(id);
    }
    for (line, f) in records(path, 3, |r| r.iter().eq(["head", "relation", "tail"]))? {
        let head = entities.intern(&f[0]);
        let relation = relations.intern(&f[1]);
        let tail = entities.intern(&f[2]);
        if head == tail {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line,
                message: format!("self-loop on entity {:?}", f[0]),
            });
        }
        ds.triples.push(RelationTriple { head, relation, tail });
    }
    ds.extra_entity_ids = entities.ids[ds.n_items..].to_vec();
    ds.n_entities = entities.ids.len();
    ds.relation_ids = relations.ids;
    ds.n_relations = ds.relation_ids.len();
    Ok(())
}

/// Writes interactions in the tabular-ratings source format with original ids.
pub fn write_ratings(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "user,item,rating,timestamp")?;
    for it in &ds.interactions {
        writeln!(w, "{},{},{},{}", ds.user_ids[it.user], ds.item_ids[it.item], it.rating, it.timestamp)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    n_users: usize,
    n_items: usize,
    n_relations: usize,
    n_entities: usize,
    n_interactions: usize,
    n_triples: usize,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    relation_ids: Vec<String>,
    extra_entity_ids: Vec<String>,
    original_rating_range: Option<(f64, f64)>,
    split_seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InteractionRow {
    user: usize,
    item: usize,
    rating: f64,
    timestamp: i64,
    relevant: bool,
    split: Split,
}

/// Persists `ds` as `interactions.csv`, `triples.csv` and `meta.json` in `dir`.
pub fn save_dataset_dir(dir: &Path, ds: &Dataset) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("interactions.csv"))?;
    for it in &ds.interactions {
        w.serialize(InteractionRow {
            user: it.user,
            item: it.item,
            rating: it.rating,
            timestamp: it.timestamp,
            relevant: it.relevant,
            split: it.split,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("triples.csv"))?;
    w.write_record(["head", "relation", "tail"])?;
    for t in &ds.triples {
        w.write_record([t.head.to_string(), t.relation.to_string(), t.tail.to_string()])?;
    }
    w.flush()?;
    let meta = Meta {
        n_users: ds.n_users,
        n_items: ds.n_items,
        n_relations: ds.n_relations,
        n_entities: ds.n_entities,
        n_interactions: ds.interactions.len(),
        n_triples: ds.triples.len(),
        user_ids: ds.user_ids.clone(),
        item_ids: ds.item_ids.clone(),
        relation_ids: ds.relation_ids.clone(),
        extra_entity_ids: ds.extra_entity_ids.clone(),
        original_rating_range: ds.original_rating_range,
        split_seed: ds.split_seed,
    };
    let mut f = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset, DataError> {
    let meta: Meta = serde_json::from_reader(File::open(dir.join("meta.json"))?)?;
    let mut ds = Dataset::empty();
    let mut r = csv::Reader::from_path(dir.join("interactions.csv"))?;
    for row in r.deserialize() {
        let row: InteractionRow = row?;
        ds.interactions.push(Interaction {
            user: row.user,
            item: row.item,
            rating: row.rating,
            timestamp: row.timestamp,
            relevant: row.relevant,
            split: row.split,
        });
    }
    let mut r = csv::Reader::from_path(dir.join("triples.csv"))?;
    for row in r.deserialize() {
        let (head, relation, tail): (usize, usize, usize) = row?;
        ds.triples.push(RelationTriple { head, relation, tail });
    }
    if ds.interactions.len() != meta.n_interactions || ds.triples.len() != meta.n_triples {
        return Err(DataError::Invalid("record counts disagree with meta.json".into()));
    }
    ds.n_users = meta.n_users;
    ds.n_items = meta.n_items;
    ds.n_relations = meta.n_relations;
    ds.n_entities = meta.n_entities;
    ds.user_ids = meta.user_ids;
    ds.item_ids = meta.item_ids;
    ds.relation_ids = meta.relation_ids;
    ds.extra_entity_ids = meta.extra_entity_ids;
    ds.original_rating_range = meta.original_rating_range;
    ds.split_seed = meta.split_seed;
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reindexes_by_first_appearance() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "7,100,4,1\n9,100,2,2\n7,100,5,3\n");
        let ds = load_dataset(&p, SourceFormat::TabularRatings).unwrap();
        assert_eq!((ds.n_users, ds.n_items), (2, 1));
        assert_eq!(ds.user_ids, vec!["7", "9"]);
        assert_eq!(ds.interactions.iter().map(|i| i.user).collect::<Vec<_>>(), vec![0, 1, 0]);
        assert!(ds.interactions.iter().all(|i| i.item == 0));
    }

    #[test]
    fn header_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "user,item,rating,timestamp\n1,2,3,4\n");
        assert_eq!(load_dataset(&p, SourceFormat::TabularRatings).unwrap().interactions.len(), 1);
    }

    #[test]
    fn non_numeric_rating_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "1,2,3,4\n1,3,abc,5\n");
        match load_dataset(&p, SourceFormat::TabularRatings) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn empty_and_short_rows_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "empty.csv", "");
        assert!(matches!(load_dataset(&p, SourceFormat::TabularRatings), Err(DataError::EmptyFile(_))));
        let p = write(dir.path(), "short.csv", "1,2,3,4\n1,2\n");
        assert!(matches!(load_dataset(&p, SourceFormat::TabularRatings), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn triples_resolve_to_items_and_extra_entities() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "1,a1,3,1\n1,a2,4,2\n");
        let t = write(dir.path(), "t.csv", "a1,author,strunk\na2,author,strunk\na1,genre,a2\n");
        let mut ds = load_dataset(&r, SourceFormat::TabularRatings).unwrap();
        load_triples_into(&mut ds, &t).unwrap();
        assert_eq!(ds.n_entities, 3);
        assert_eq!(ds.extra_entity_ids, vec!["strunk"]);
        assert_eq!(ds.n_relations, 2);
        assert_eq!(ds.triples[2], RelationTriple { head: 0, relation: 1, tail: 1 });
        let bad = write(dir.path(), "bad.csv", "a1,x,a1\n");
        assert!(load_triples_into(&mut ds, &bad).is_err());
    }
}
