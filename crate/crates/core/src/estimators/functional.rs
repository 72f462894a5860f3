use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Policy, RecordQ, State, Transition, TransitionDataset};

/// One evaluation `coef * q(action, state)` inside `m(S0, A0, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub action: Action,
    pub state: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalKind {
    PolicyValue,
    AteContrast,
    CustomLinear,
}

type TermFn = dyn Fn(&Transition, &mut Vec<Term>) + Send + Sync;

/// A linear functional `q -> m(S0, A0, q)` given by finitely many
/// point evaluations of `q` per record.
#[derive(Clone)]
pub struct FunctionalSpec {
    kind: FunctionalKind,
    terms: Arc<TermFn>,
}

impl fmt::Debug for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalSpec").field("kind", &self.kind).finish()
    }
}

impl FunctionalSpec {
    /// `m = V^pi(q)(S0)`.
    pub fn policy_value(pi: Policy) -> Self {
        FunctionalSpec {
            kind: FunctionalKind::PolicyValue,
            terms: Arc::new(move |t, out| {
                for &(a, p) in pi.support(t.s0) {
                    out.push(Term { coef: p, action: a, state: t.s0 });
                }
            }),
        }
    }

    /// `m = q(treated, S0) - q(control, S0)`.
    pub fn ate_contrast(treated: Action, control: Action) -> Self {
        Self::ate_contrast_with(treated, control, |s, _| s)
    }

    /// `m = q(treated, relabel(S0, treated)) - q(control, relabel(S0, control))`,
    /// for states that carry the treatment arm themselves.
    pub fn ate_contrast_with<F>(treated: Action, control: Action, relabel: F) -> Self
    where
        F: Fn(State, Action) -> State + Send + Sync + 'static,
    {
        FunctionalSpec {
            kind: FunctionalKind::AteContrast,
            terms: Arc::new(move |t, out| {
                out.push(Term { coef: 1.0, action: treated, state: relabel(t.s0, treated) });
                out.push(Term { coef: -1.0, action: control, state: relabel(t.s0, control) });
            }),
        }
    }

    pub fn custom<F>(terms: F) -> Self
    where
        F: Fn(&Transition, &mut Vec<Term>) + Send + Sync + 'static,
    {
        FunctionalSpec {
            kind: FunctionalKind::CustomLinear,
            terms: Arc::new(terms),
        }
    }

    pub fn kind(&self) -> FunctionalKind {
        self.kind
    }

    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.terms.clone();
        FunctionalSpec {
            kind: self.kind,
            terms: Arc::new(move |t, out| {
                let from = out.len();
                inner(t, out);
                for term in &mut out[from..] {
                    term.coef *= c;
                }
            }),
        }
    }

    pub fn plus(&self, other: &FunctionalSpec) -> Self {
        let (a, b) = (self.terms.clone(), other.terms.clone());
        FunctionalSpec {
            kind: FunctionalKind::CustomLinear,
            terms: Arc::new(move |t, out| {
                a(t, out);
                b(t, out);
            }),
        }
    }

    pub fn terms(&self, t: &Transition) -> Vec<Term> {
        let mut out = Vec::new();
        (self.terms)(t, &mut out);
        out
    }

    pub(crate) fn push_terms(&self, t: &Transition, out: &mut Vec<Term>) {
        (self.terms)(t, out)
    }

    /// `m(S0_i, A0_i, q)` for record `i`.
    pub fn evaluate<Q: RecordQ + ?Sized>(&self, i: usize, t: &Transition, q: &Q) -> f64 {
        self.terms(t)
            .iter()
            .map(|term| term.coef * q.value_for(i, term.action, term.state))
            .sum()
    }

    /// Empirical signed measure `nu(s, a) = P_n[sum of coefs on (a, s)]`,
    /// laid out as `s * n_actions + a`.
    pub fn initial_measure(&self, data: &TransitionDataset) -> Result<Vec<f64>> {
        let na = data.n_actions();
        let mut nu = vec![0.0; data.n_states() * na];
        let total = data.total_weight();
        let mut buf = Vec::new();
        for (i, r) in data.records().iter().enumerate() {
            buf.clear();
            self.push_terms(r, &mut buf);
            let w = data.weight(i) / total;
            for t in &buf {
                if t.state as usize >= data.n_states() {
                    return Err(Error::Domain { state: t.state, size: data.n_states() });
                }
                if t.action as usize >= na {
                    return Err(Error::ActionDomain { action: t.action, size: na });
                }
                nu[t.state as usize * na + t.action as usize] += w * t.coef;
            }
        }
        Ok(nu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{StateAlphabet, TabularQ};
    use proptest::prelude::*;

    fn rec(s0: State) -> Transition {
        Transition { s0, a0: 0, y0: 0.0, s1: 0 }
    }

    #[test]
    fn policy_value_and_contrast() {
        let pi = Policy::from_table(2, 2, vec![0.75, 0.25, 0.0, 1.0]).unwrap();
        let q = TabularQ::new(2, 2, vec![0.0, 4.0, 1.0, 3.0]).unwrap();
        let pv = FunctionalSpec::policy_value(pi);
        assert_eq!(pv.evaluate(0, &rec(0), &q), 1.0);
        assert_eq!(pv.evaluate(0, &rec(1), &q), 3.0);
        let ate = FunctionalSpec::ate_contrast(1, 0);
        assert_eq!(ate.evaluate(0, &rec(1), &q), 2.0);
    }

    #[test]
    fn relabelled_contrast_moves_state() {
        // states 0,1 = (z=0, x), 2,3 = (z=1, x)
        let ate = FunctionalSpec::ate_contrast_with(1, 0, |s, z| (s % 2) + 2 * z);
        let q = TabularQ::from_fn(4, 2, |a, s| (10 * s + a) as f64);
        assert_eq!(ate.evaluate(0, &rec(1), &q), 31.0 - 10.0);
    }

    #[test]
    fn initial_measure_sums_coefs() {
        let data = TransitionDataset::new(
            vec![rec(0), rec(1), rec(1), rec(1)],
            Arc::new(StateAlphabet::indexed(2)),
            2,
        )
        .unwrap();
        let nu = FunctionalSpec::ate_contrast(1, 0).initial_measure(&data).unwrap();
        assert_eq!(nu, vec![-0.25, 0.25, -0.75, 0.75]);
    }

    proptest! {
        #[test]
        fn functional_is_linear(
            q1 in prop::collection::vec(-5.0f64..5.0, 6),
            q2 in prop::collection::vec(-5.0f64..5.0, 6),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            s in 0u32..3,
        ) {
            let pi = Policy::uniform(3, 2).unwrap();
            let f = FunctionalSpec::policy_value(pi).plus(&FunctionalSpec::ate_contrast(1, 0).scaled(0.5));
            let t1 = TabularQ::new(3, 2, q1.clone()).unwrap();
            let t2 = TabularQ::new(3, 2, q2.clone()).unwrap();
            let mix = TabularQ::new(3, 2, q1.iter().zip(&q2).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let lhs = f.evaluate(0, &rec(s), &mix);
            let rhs = a * f.evaluate(0, &rec(s), &t1) + b * f.evaluate(0, &rec(s), &t2);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
