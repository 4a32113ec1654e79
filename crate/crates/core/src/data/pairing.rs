use std::collections::BTreeMap;

use super::{DataError, EmbeddingSet, Result};

/// Two embedding sets aligned by sample id, iterated in id order.
#[derive(Debug, Clone)]
pub struct PairedSet<'a> {
    pub a: &'a EmbeddingSet,
    pub b: &'a EmbeddingSet,
    /// `(index in a, index in b)` sorted by sample id.
    order: Vec<(usize, usize)>,
}

impl<'a> PairedSet<'a> {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.order
    }

    /// `(id, vector_a, vector_b, label)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&'a str, &'a [f32], &'a [f32], usize)> + '_ {
        self.order.iter().map(|&(i, j)| {
            let (sa, sb) = (&self.a.samples[i], &self.b.samples[j]);
            (sa.id.as_str(), sa.vector.as_slice(), sb.vector.as_slice(), sa.label)
        })
    }
}

/// Aligns two sets that must hold the same sample ids with the same labels.
pub fn pair_datasets<'a>(a: &'a EmbeddingSet, b: &'a EmbeddingSet) -> Result<PairedSet<'a>> {
    if a.class_names != b.class_names {
        return Err(DataError::Alignment {
            id: String::new(),
            reason: format!(
                "class names differ: {:?} vs {:?}",
                a.class_names, b.class_names
            ),
        });
    }
    let index_a: BTreeMap<&str, usize> = a
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let index_b: BTreeMap<&str, usize> = b
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    // the first offending id in sorted order, whichever side it is missing from
    let missing = index_a
        .keys()
        .filter(|id| !index_b.contains_key(*id))
        .map(|id| (*id, b.name.as_str()))
        .chain(
            index_b
                .keys()
                .filter(|id| !index_a.contains_key(*id))
                .map(|id| (*id, a.name.as_str())),
        )
        .min();
    if let Some((id, side)) = missing {
        return Err(DataError::Alignment {
            id: id.to_string(),
            reason: format!("missing from {side:?}"),
        });
    }

    let mut order = Vec::with_capacity(index_a.len());
    for (id, &i) in &index_a {
        let j = index_b[id];
        let (la, lb) = (a.samples[i].label, b.samples[j].label);
        if la != lb {
            return Err(DataError::Alignment {
                id: id.to_string(),
                reason: format!("labels disagree ({la} vs {lb})"),
            });
        }
        order.push((i, j));
    }
    Ok(PairedSet { a, b, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn set(name: &str, ids: &[(&str, usize)]) -> EmbeddingSet {
        let mut s = EmbeddingSet::new(name, 2, vec!["x".into(), "y".into()]);
        for (k, &(id, label)) in ids.iter().enumerate() {
            s.samples.push(Sample {
                id: id.into(),
                label,
                vector: vec![k as f32, label as f32],
            });
        }
        s
    }

    #[test]
    fn aligned_pair_count() {
        let a = set("a", &[("u1", 0), ("u2", 1), ("u3", 0)]);
        let b = set("b", &[("u1", 0), ("u2", 1), ("u3", 0)]);
        assert_eq!(pair_datasets(&a, &b).unwrap().len(), 3);
    }

    #[test]
    fn extra_id_is_an_error() {
        let a = set("a", &[("u1", 0), ("u2", 1)]);
        let b = set("b", &[("u1", 0), ("u2", 1), ("u9", 0)]);
        match pair_datasets(&a, &b) {
            Err(DataError::Alignment { id, .. }) => assert_eq!(id, "u9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_disagreement_is_an_error() {
        let a = set("a", &[("u1", 0), ("u2", 1)]);
        let b = set("b", &[("u1", 0), ("u2", 0)]);
        assert!(matches!(
            pair_datasets(&a, &b),
            Err(DataError::Alignment { id, .. }) if id == "u2"
        ));
    }

    #[test]
    fn storage_order_does_not_matter() {
        let a = set("a", &[("u3", 0), ("u1", 1), ("u2", 0)]);
        let b = set("b", &[("u2", 0), ("u3", 0), ("u1", 1)]);
        let p = pair_datasets(&a, &b).unwrap();
        // sorted-merge oracle
        let mut ids: Vec<&str> = a.samples.iter().map(|s| s.id.as_str()).collect();
        ids.sort();
        let got: Vec<&str> = p.iter().map(|(id, ..)| id).collect();
        assert_eq!(got, ids);
        for (id, va, vb, label) in p.iter() {
            let sa = a.samples.iter().find(|s| s.id == id).unwrap();
            let sb = b.samples.iter().find(|s| s.id == id).unwrap();
            assert_eq!((va, vb, label), (&sa.vector[..], &sb.vector[..], sa.label));
        }
    }
}
