use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mdp::{Action, State, StateAlphabet};

/// Where a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Explicit,
    TreeLeaves,
}

/// A state-action feature map `phi: A x S -> R^m`.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn write(&self, a: Action, s: State, out: &mut [f64]);

    fn provenance(&self) -> Provenance {
        Provenance::Explicit
    }

    fn features(&self, a: Action, s: State) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write(a, s, &mut out);
        out
    }
}

impl<T: FeatureMap + ?Sized> FeatureMap for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn write(&self, a: Action, s: State, out: &mut [f64]) {
        (**self).write(a, s, out)
    }
    fn provenance(&self) -> Provenance {
        (**self).provenance()
    }
}

/// `[a, s]`: identifies the cell; pairs with the tabular-mean backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellFeatures;

impl FeatureMap for CellFeatures {
    fn dim(&self) -> usize {
        2
    }
    fn write(&self, a: Action, s: State, out: &mut [f64]) {
        out[0] = a as f64;
        out[1] = s as f64;
    }
}

/// Indicator of the state-action cell `s * n_actions + a`.
#[derive(Debug, Clone, Copy)]
pub struct OneHotCells {
    pub n_states: usize,
    pub n_actions: usize,
}

impl FeatureMap for OneHotCells {
    fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }
    fn write(&self, a: Action, s: State, out: &mut [f64]) {
        out.fill(0.0);
        out[s as usize * self.n_actions + a as usize] = 1.0;
    }
}

/// `[a, t_1, ..., t_k]` where `t` is the state's integer tuple.
#[derive(Debug, Clone)]
pub struct TupleFeatures {
    alphabet: Arc<StateAlphabet>,
}

impl TupleFeatures {
    pub fn new(alphabet: Arc<StateAlphabet>) -> Self {
        TupleFeatures { alphabet }
    }
}

impl FeatureMap for TupleFeatures {
    fn dim(&self) -> usize {
        1 + self.alphabet.components().len()
    }
    fn write(&self, a: Action, s: State, out: &mut [f64]) {
        out[0] = a as f64;
        let t = self.alphabet.tuple(s).expect("state in alphabet");
        for (o, v) in out[1..].iter_mut().zip(t) {
            *o = *v as f64;
        }
    }
}

/// Feature map backed by a closure.
pub struct FnFeatures<F> {
    dim: usize,
    f: F,
}

impl<F> FnFeatures<F>
where
    F: Fn(Action, State, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnFeatures { dim, f }
    }
}

impl<F> FeatureMap for FnFeatures<F>
where
    F: Fn(Action, State, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn write(&self, a: Action, s: State, out: &mut [f64]) {
        (self.f)(a, s, out)
    }
}
