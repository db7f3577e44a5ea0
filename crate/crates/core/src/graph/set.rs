use std::fmt;

use super::TensorId;

/// A set of tensor ids with bitmask semantics.
///
/// Equality and hashing are value-based: two sets with the same members are
/// equal and hash equal regardless of how they were built, which makes the
/// type usable as a memoization key. Internally the mask is a word vector
/// with trailing zero words trimmed so the representation stays canonical
/// for graphs of any size.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct TensorSet {
    words: Vec<u64>,
}

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: TensorId) -> bool {
        let (w, bit) = Self::split(id);
        self.words.get(w).is_some_and(|word| word & bit != 0)
    }

    /// Adds `id`; returns true if it was not already present.
    pub fn insert(&mut self, id: TensorId) -> bool {
        let (w, bit) = Self::split(id);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        let fresh = self.words[w] & bit == 0;
        self.words[w] |= bit;
        fresh
    }

    /// Removes `id`; returns true if it was present.
    pub fn remove(&mut self, id: TensorId) -> bool {
        let (w, bit) = Self::split(id);
        let Some(word) = self.words.get_mut(w) else {
            return false;
        };
        let present = *word & bit != 0;
        *word &= !bit;
        // Keep the representation canonical for Eq/Hash.
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
        present
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Member ids in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros();
                rest &= rest - 1;
                Some(TensorId(w as u32 * 64 + bit))
            })
        })
    }

    fn split(id: TensorId) -> (usize, u64) {
        ((id.0 / 64) as usize, 1u64 << (id.0 % 64))
    }
}

impl FromIterator<TensorId> for TensorSet {
    fn from_iter<I: IntoIterator<Item = TensorId>>(iter: I) -> Self {
        let mut set = TensorSet::new();
        for id in iter {
            set.insert(id);
        }
        set
    }
}

impl fmt::Debug for TensorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(raw: &[u32]) -> TensorSet {
        raw.iter().copied().map(TensorId).collect()
    }

    #[test]
    fn insert_remove_contains() {
        let mut set = TensorSet::new();
        assert!(set.insert(TensorId(3)));
        assert!(!set.insert(TensorId(3)));
        assert!(set.contains(TensorId(3)));
        assert!(set.insert(TensorId(130)));
        assert_eq!(set.len(), 2);
        assert!(set.remove(TensorId(3)));
        assert!(!set.remove(TensorId(3)));
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![TensorId(130)]);
    }

    #[test]
    fn equality_is_value_based() {
        let a = ids(&[0, 7, 64]);
        let mut b = ids(&[64, 0]);
        b.insert(TensorId(7));
        assert_eq!(a, b);

        // Removing a high member must not leave a longer-but-equal mask.
        let mut c = ids(&[1, 200]);
        c.remove(TensorId(200));
        assert_eq!(c, ids(&[1]));

        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let hash = |s: &TensorSet| {
            let mut h = DefaultHasher::new();
            s.hash(&mut h);
            h.finish()
        };
        assert_eq!(hash(&c), hash(&ids(&[1])));
    }

    #[test]
    fn iter_is_ascending() {
        let set = ids(&[190, 2, 65, 0]);
        let got: Vec<u32> = set.iter().map(|t| t.0).collect();
        assert_eq!(got, vec![0, 2, 65, 190]);
    }

    #[test]
    fn empty_set() {
        let set = TensorSet::new();
        assert!(set.is_empty());
        assert_eq!(set.len(), 0);
        assert_eq!(set.iter().count(), 0);
    }
}
