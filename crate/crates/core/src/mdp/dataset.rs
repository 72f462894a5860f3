use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer code of a state in a [`StateAlphabet`].
pub type State = u32;
/// Index into the action set.
pub type Action = u32;

/// One observed transition `(S0, A0, Y0, S1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s0: State,
    pub a0: Action,
    pub y0: f64,
    pub s1: State,
}

/// Registry mapping integer state codes to integer tuples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "AlphabetRepr", into = "AlphabetRepr")]
pub struct StateAlphabet {
    components: Vec<String>,
    states: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, State>,
}

#[derive(Serialize, Deserialize)]
struct AlphabetRepr {
    components: Vec<String>,
    states: Vec<Vec<i64>>,
}

impl From<AlphabetRepr> for StateAlphabet {
    fn from(r: AlphabetRepr) -> Self {
        let index = r
            .states
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as State))
            .collect();
        StateAlphabet {
            components: r.components,
            states: r.states,
            index,
        }
    }
}

impl From<StateAlphabet> for AlphabetRepr {
    fn from(a: StateAlphabet) -> Self {
        AlphabetRepr {
            components: a.components,
            states: a.states,
        }
    }
}

impl PartialEq for StateAlphabet {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components && self.states == other.states
    }
}

impl StateAlphabet {
    pub fn new(components: Vec<String>, states: Vec<Vec<i64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("state alphabet must be nonempty"));
        }
        let mut index = HashMap::with_capacity(states.len());
        for (i, t) in states.iter().enumerate() {
            if t.len() != components.len() {
                return Err(Error::invalid(format!(
                    "state tuple {i} has {} components, expected {}",
                    t.len(),
                    components.len()
                )));
            }
            if index.insert(t.clone(), i as State).is_some() {
                return Err(Error::invalid(format!("duplicate state tuple {t:?}")));
            }
        }
        Ok(StateAlphabet {
            components,
            states,
            index,
        })
    }

    /// Alphabet `0..n` with a single component named `s`.
    pub fn indexed(n: usize) -> Self {
        Self::new(vec!["s".into()], (0..n as i64).map(|i| vec![i]).collect())
            .expect("indexed alphabet is valid")
    }

    /// Mixed-radix product alphabet; the first component varies slowest.
    pub fn product(components: &[&str], radices: &[usize]) -> Result<Self> {
        if components.len() != radices.len() || radices.iter().any(|&r| r == 0) {
            return Err(Error::invalid("product alphabet needs one positive radix per component"));
        }
        let total: usize = radices.iter().product();
        let mut states = Vec::with_capacity(total);
        for code in 0..total {
            let mut rem = code;
            let mut t = vec![0i64; radices.len()];
            for k in (0..radices.len()).rev() {
                t[k] = (rem % radices[k]) as i64;
                rem /= radices[k];
            }
            states.push(t);
        }
        Self::new(components.iter().map(|c| c.to_string()).collect(), states)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn component_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c == name)
    }

    pub fn tuple(&self, s: State) -> Option<&[i64]> {
        self.states.get(s as usize).map(|t| t.as_slice())
    }

    pub fn code(&self, tuple: &[i64]) -> Option<State> {
        self.index.get(tuple).copied()
    }

    pub fn contains(&self, s: State) -> bool {
        (s as usize) < self.states.len()
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    alphabet: StateAlphabet,
    n_actions: usize,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    s0: State,
    a0: Action,
    y0: f64,
    s1: State,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<f64>,
}

/// An ordered, immutable collection of i.i.d. transitions.
///
/// Optional per-record weights let callers feed population pseudo-data
/// (every reachable transition weighted by its probability).
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    records: Vec<Transition>,
    weights: Option<Vec<f64>>,
    alphabet: Arc<StateAlphabet>,
    n_actions: usize,
}

impl TransitionDataset {
    pub fn new(
        records: Vec<Transition>,
        alphabet: Arc<StateAlphabet>,
        n_actions: usize,
    ) -> Result<Self> {
        Self::build(records, None, alphabet, n_actions)
    }

    pub fn weighted(
        records: Vec<Transition>,
        weights: Vec<f64>,
        alphabet: Arc<StateAlphabet>,
        n_actions: usize,
    ) -> Result<Self> {
        Self::build(records, Some(weights), alphabet, n_actions)
    }

    fn build(
        records: Vec<Transition>,
        weights: Option<Vec<f64>>,
        alphabet: Arc<StateAlphabet>,
        n_actions: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("dataset must contain at least one transition"));
        }
        if n_actions == 0 {
            return Err(Error::invalid("action set must be nonempty"));
        }
        for (i, t) in records.iter().enumerate() {
            if !t.y0.is_finite() {
                return Err(Error::invalid(format!("record {i}: reward is not finite")));
            }
            for s in [t.s0, t.s1] {
                if !alphabet.contains(s) {
                    return Err(Error::Domain {
                        state: s,
                        size: alphabet.len(),
                    });
                }
            }
            if t.a0 as usize >= n_actions {
                return Err(Error::ActionDomain {
                    action: t.a0,
                    size: n_actions,
                });
            }
        }
        if let Some(w) = &weights {
            if w.len() != records.len() {
                return Err(Error::invalid("weights length differs from record count"));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid("weights must be finite and nonnegative"));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid("weights must have positive total"));
            }
        }
        Ok(TransitionDataset {
            records,
            weights,
            alphabet,
            n_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Transition {
        &self.records[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Per-record weights (ones when unweighted).
    pub fn weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.records.len()])
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights
            .as_ref()
            .map_or(self.records.len() as f64, |w| w.iter().sum())
    }

    pub fn alphabet(&self) -> &Arc<StateAlphabet> {
        &self.alphabet
    }

    pub fn n_states(&self) -> usize {
        self.alphabet.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Dataset restricted to the given record indices (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i]).collect();
        let weights = self
            .weights
            .as_ref()
            .map(|w| indices.iter().map(|&i| w[i]).collect());
        Self::build(records, weights, self.alphabet.clone(), self.n_actions)
    }

    /// Path of the JSON alphabet sidecar written next to `csv_path`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("alphabet.json")
    }

    /// Writes `s0,a0,y0,s1` rows (plus a `w` column when weighted) and the
    /// alphabet sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
        for (i, t) in self.records.iter().enumerate() {
            wtr.serialize(CsvRow {
                s0: t.s0,
                a0: t.a0,
                y0: t.y0,
                s1: t.s1,
                w: self.weights.as_ref().map(|w| w[i]),
            })?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let file = File::create(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::to_writer_pretty(
            BufWriter::new(file),
            &Sidecar {
                alphabet: (*self.alphabet).clone(),
                n_actions: self.n_actions,
            },
        )?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let file = File::open(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(file))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let mut records = Vec::new();
        let mut weights = Vec::new();
        let mut any_weight = false;
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            records.push(Transition {
                s0: row.s0,
                a0: row.a0,
                y0: row.y0,
                s1: row.s1,
            });
            any_weight |= row.w.is_some();
            weights.push(row.w.unwrap_or(1.0));
        }
        Self::build(
            records,
            any_weight.then_some(weights),
            Arc::new(sidecar.alphabet),
            sidecar.n_actions,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_alphabet_codes_are_mixed_radix() {
        let a = StateAlphabet::product(&["z", "e"], &[2, 3]).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.tuple(4), Some(&[1i64, 1][..]));
        assert_eq!(a.code(&[1, 2]), Some(5));
    }

    #[test]
    fn rejects_empty_and_out_of_alphabet() {
        let alpha = Arc::new(StateAlphabet::indexed(2));
        assert!(TransitionDataset::new(vec![], alpha.clone(), 2).is_err());
        let bad = Transition { s0: 0, a0: 0, y0: 1.0, s1: 7 };
        assert!(matches!(
            TransitionDataset::new(vec![bad], alpha, 2),
            Err(Error::Domain { state: 7, .. })
        ));
    }

    #[test]
    fn csv_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let alpha = Arc::new(StateAlphabet::product(&["x"], &[3]).unwrap());
        let recs = vec![
            Transition { s0: 0, a0: 1, y0: 0.5, s1: 2 },
            Transition { s0: 2, a0: 0, y0: -1.0, s1: 1 },
        ];
        let d = TransitionDataset::new(recs.clone(), alpha.clone(), 2).unwrap();
        d.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("s0,a0,y0,s1\n"));
        let back = TransitionDataset::read_csv(&path).unwrap();
        assert_eq!(back.records(), &recs[..]);
        assert_eq!(**back.alphabet(), *alpha);
        assert!(!back.is_weighted());
    }
}
