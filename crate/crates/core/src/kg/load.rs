use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{KnowledgeGraph, Triple, Vocab};
use crate::error::{Error, Result};

/// Loads `head<TAB>relation<TAB>tail` triples whose names resolve through the
/// two `index<TAB>name` vocabulary files.
pub fn load_triples(
    triples_path: impl AsRef<Path>,
    entity_vocab_path: impl AsRef<Path>,
    relation_vocab_path: impl AsRef<Path>,
) -> Result<KnowledgeGraph> {
    let entities = read_vocab(entity_vocab_path.as_ref())?;
    let relations = read_vocab(relation_vocab_path.as_ref())?;

    let path = triples_path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut triples = Vec::new();
    for (n, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let resolve = |vocab: &Vocab, token: &str, kind: &'static str| {
            vocab.id(token).ok_or_else(|| Error::Resolution {
                path: path.to_path_buf(),
                line: n,
                kind,
                token: token.to_string(),
            })
        };
        triples.push(Triple::new(
            resolve(&entities, fields[0], "entity")?,
            resolve(&relations, fields[1], "relation")?,
            resolve(&entities, fields[2], "entity")?,
        ));
    }
    KnowledgeGraph::new(entities, relations, triples)
}

/// Writes `train.txt`, `entities.dict` and `relations.dict` into `dir`.
pub fn write_dataset(g: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<[PathBuf; 3]> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths = [dir.join("train.txt"), dir.join("entities.dict"), dir.join("relations.dict")];

    let mut out = std::io::BufWriter::new(fs::File::create(&paths[0])?);
    for t in g.triples() {
        writeln!(
            out,
            "{}\t{}\t{}",
            g.entities().names()[t.head as usize],
            g.relations().names()[t.rel as usize],
            g.entities().names()[t.tail as usize]
        )?;
    }
    out.flush()?;
    for (vocab, path) in [(g.entities(), &paths[1]), (g.relations(), &paths[2])] {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, name) in vocab.names().iter().enumerate() {
            writeln!(out, "{i}\t{name}")?;
        }
        out.flush()?;
    }
    Ok(paths)
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path)?;
    let mut by_index = BTreeMap::new();
    for (n, line) in lines(&text) {
        let (index, name) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `index<TAB>name`".into()))?;
        let index: usize = index
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n, format!("invalid index `{index}`")))?;
        if by_index.insert(index, name.to_string()).is_some() {
            return Err(Error::Integrity(format!("{}: duplicate index {index}", path.display())));
        }
    }
    if let Some((&last, _)) = by_index.last_key_value() {
        if last + 1 != by_index.len() {
            return Err(Error::Integrity(format!(
                "{}: indices are not dense (max {last}, {} entries)",
                path.display(),
                by_index.len()
            )));
        }
    }
    Vocab::from_names(by_index.into_values())
        .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))
}

/// Non-empty lines with 1-based line numbers and line endings stripped.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_err(path: &Path, line: usize, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Files {
        _dir: tempfile::TempDir,
        triples: PathBuf,
        ents: PathBuf,
        rels: PathBuf,
    }

    fn files(triples: &str, ents: &str, rels: &str) -> Files {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str, body: &str| {
            let path = dir.path().join(n);
            fs::write(&path, body).unwrap();
            path
        };
        Files {
            triples: p("train.txt", triples),
            ents: p("entities.dict", ents),
            rels: p("relations.dict", rels),
            _dir: dir,
        }
    }

    const ENTS: &str = "0\ta\n1\tb\n2\tc\n";
    const RELS: &str = "0\tr\n";

    fn load(f: &Files) -> Result<KnowledgeGraph> {
        load_triples(&f.triples, &f.ents, &f.rels)
    }

    #[test]
    fn loads_small_graph() {
        let f = files("a\tr\tb\nb\tr\tc\n", ENTS, RELS);
        let g = load(&f).unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.triples().len(), 2);
    }

    #[test]
    fn empty_triple_file() {
        let f = files("", ENTS, RELS);
        let g = load(&f).unwrap();
        assert!(g.triples().is_empty());
        for e in 0..3 {
            assert!(g.neighbors(e, 0).unwrap().is_empty());
        }
    }

    #[test]
    fn duplicate_triple_lines_collapse() {
        let f = files("a\tr\tb\na\tr\tb\n", ENTS, RELS);
        assert_eq!(load(&f).unwrap().triples().len(), 1);
    }

    #[test]
    fn order_does_not_matter() {
        let a = load(&files("a\tr\tb\nb\tr\tc\n", ENTS, RELS)).unwrap();
        let b = load(&files("b\tr\tc\na\tr\tb\n", ENTS, RELS)).unwrap();
        assert_eq!(a.triples(), b.triples());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = files("a\tr\tb\na r c\n", ENTS, RELS);
        match load(&f) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_name_is_named() {
        let f = files("a\tr\tzz\n", ENTS, RELS);
        match load(&f) {
            Err(Error::Resolution { token, kind, line, .. }) => {
                assert_eq!(token, "zz");
                assert_eq!(kind, "entity");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_vocab_index() {
        let f = files("", "0\ta\n0\tb\n", RELS);
        assert!(matches!(load(&f), Err(Error::Integrity(_))));
    }

    #[test]
    fn names_may_contain_spaces() {
        let f = files("New York\tlocated in\tUSA\n", "0\tNew York\n1\tUSA\n", "0\tlocated in\n");
        assert_eq!(load(&f).unwrap().triples().len(), 1);
    }

    #[test]
    fn write_then_load() {
        let g = KnowledgeGraph::synthetic(crate::kg::SyntheticSpec { triples: 200, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let [t, e, r] = write_dataset(&g, dir.path()).unwrap();
        let back = load_triples(t, e, r).unwrap();
        assert_eq!(back.triples(), g.triples());
        assert_eq!(back.entities(), g.entities());
    }
}
