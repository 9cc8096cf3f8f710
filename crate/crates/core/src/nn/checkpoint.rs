//! Parameter checkpoints.
//!
//! Layout: one line of JSON manifest terminated by `\n`, followed by a flat
//! block of little-endian `f64` values. Each manifest entry records the
//! tensor's qualified name (`section.param`), shape and byte offset into the
//! data block.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Tensor2};

const FORMAT: &str = "kgrl-params";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub section: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SectionEntry {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub sections: Vec<SectionEntry>,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut out: W, sections: &[(&str, &ParamStore)]) -> Result<(), NnError> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (section, store) in sections {
        for id in store.ids() {
            let v = store.value(id);
            tensors.push(TensorEntry {
                name: format!("{}.{}", section, store.name(id)),
                section: section.to_string(),
                rows: v.rows(),
                cols: v.cols(),
                offset,
            });
            offset += 8 * v.data().len() as u64;
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        sections: sections.iter().map(|(n, s)| SectionEntry { name: n.to_string(), seed: s.seed() }).collect(),
        tensors,
    };
    serde_json::to_writer(&mut out, &manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    for (_, store) in sections {
        for id in store.ids() {
            for v in store.value(id).data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads every section back, preserving section and parameter order.
pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Vec<(String, ParamStore)>, NnError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let manifest: Manifest =
        serde_json::from_str(line.trim_end()).map_err(|e| NnError::Checkpoint(format!("bad manifest: {}", e)))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;

    let mut sections: Vec<(String, ParamStore)> =
        manifest.sections.iter().map(|s| (s.name.clone(), ParamStore::new(s.seed))).collect();
    for t in &manifest.tensors {
        let start = t.offset as usize;
        let end = start + 8 * t.rows * t.cols;
        if end > data.len() {
            return Err(NnError::Checkpoint(format!("tensor {} runs past end of data", t.name)));
        }
        let values =
            data[start..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        let param = t
            .name
            .strip_prefix(&format!("{}.", t.section))
            .ok_or_else(|| NnError::Checkpoint(format!("tensor {} not in section {}", t.name, t.section)))?;
        let store = sections
            .iter_mut()
            .find(|(n, _)| *n == t.section)
            .map(|(_, s)| s)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown section {}", t.section)))?;
        store.insert(param, Tensor2::from_vec(t.rows, t.cols, values)?)?;
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_order() {
        let mut a = ParamStore::new(5);
        a.insert_uniform("w", 3, 2, 3).unwrap();
        a.insert_zeros("b", 1, 2).unwrap();
        let mut b = ParamStore::new(6);
        b.insert_uniform("emb", 4, 4, 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("actor", &a), ("kg", &b)]).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "actor");
        let names: Vec<_> = back[0].1.names().collect();
        assert_eq!(names, vec!["w", "b"]);
        for (orig, read) in [(&a, &back[0].1), (&b, &back[1].1)] {
            for id in orig.ids() {
                assert_eq!(orig.value(id), read.value(read.id(orig.name(id)).unwrap()));
            }
        }
        assert_eq!(back[1].1.seed(), 6);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut a = ParamStore::new(5);
        a.insert_uniform("w", 3, 2, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("actor", &a)]).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
