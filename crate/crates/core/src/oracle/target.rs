//! Exact tiny-scale targets written as finite mixtures of "atoms": a fixed
//! discrete configuration times independent diagonal Gaussians on the
//! continuous elements.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{IgdError, Result};
use crate::state::{ElementLayout, Sequence, Token};

/// Cap on `|X|^{L1}` for enumerable targets.
pub const MAX_STATES: usize = 4096;

/// One Gaussian component on `R^d` with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, std: Vec<f64>) -> Self {
        Self { weight, mean, std }
    }

    pub fn isotropic(weight: f64, mean: Vec<f64>, std: f64) -> Self {
        let d = mean.len();
        Self::new(weight, mean, vec![std; d])
    }
}

/// A point mass on the tokens times a Gaussian per continuous element.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub tokens: Vec<Token>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    DiscreteTable,
    LabeledGmm,
    Mixture,
}

#[derive(Debug, Clone)]
pub struct TargetDistribution {
    layout: Arc<ElementLayout>,
    kind: TargetKind,
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

/// Index of a token configuration, first position most significant.
pub fn state_index(tokens: &[Token], vocab: usize) -> usize {
    tokens.iter().fold(0, |acc, &t| acc * vocab + t as usize)
}

/// Inverse of [`state_index`].
pub fn state_tokens(mut idx: usize, len: usize, vocab: usize) -> Vec<Token> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (idx % vocab) as Token;
        idx /= vocab;
    }
    out
}

/// `|X|^{L1}`, or an error above [`MAX_STATES`].
pub fn state_count(layout: &ElementLayout) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..layout.discrete_len() {
        n = n.saturating_mul(layout.vocab_size() as usize);
        if n > MAX_STATES {
            return Err(IgdError::StateSpaceTooLarge(n));
        }
    }
    Ok(n)
}

impl TargetDistribution {
    /// A general mixture of atoms. Weights must sum to 1 within 1e−12 and
    /// every standard deviation must be positive.
    pub fn from_atoms(layout: Arc<ElementLayout>, atoms: Vec<Atom>) -> Result<Self> {
        Self::build(layout, TargetKind::Mixture, atoms)
    }

    fn build(layout: Arc<ElementLayout>, kind: TargetKind, atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(IgdError::InvalidValue("target has no atoms".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(IgdError::InvalidValue(format!("target weights sum to {total}")));
        }
        for a in &atoms {
            if a.weight.is_nan() || a.weight < 0.0 {
                return Err(IgdError::InvalidValue("negative atom weight".into()));
            }
            if a.tokens.len() != layout.discrete_len() || a.tokens.iter().any(|&t| t >= layout.vocab_size()) {
                return Err(IgdError::InvalidValue("atom tokens do not fit the layout".into()));
            }
            if a.means.len() != layout.continuous_len() || a.stds.len() != layout.continuous_len() {
                return Err(IgdError::InvalidValue("atom Gaussians do not fit the layout".into()));
            }
            for ((m, s), &d) in a.means.iter().zip(&a.stds).zip(layout.dims()) {
                if m.len() != d || s.len() != d {
                    return Err(IgdError::InvalidValue("atom Gaussian dimension mismatch".into()));
                }
                if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) || m.iter().any(|v| !v.is_finite()) {
                    return Err(IgdError::InvalidValue(
                        "Gaussian parameters must be finite with std > 0".into(),
                    ));
                }
            }
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect();
        Ok(Self {
            layout,
            kind,
            atoms,
            cumulative,
        })
    }

    /// Explicit probabilities over `X^{L1}` (index order of
    /// [`state_index`]); needs `L1 ≤ 6`, `|X| ≤ 4` and no continuous part.
    pub fn discrete_table(layout: Arc<ElementLayout>, probs: Vec<f64>) -> Result<Self> {
        if layout.continuous_len() > 0 || layout.discrete_len() > 6 || layout.vocab_size() > 4 {
            return Err(IgdError::InvalidValue(
                "discrete tables need L1 <= 6, |X| <= 4 and no continuous elements".into(),
            ));
        }
        let n = state_count(&layout)?;
        if probs.len() != n {
            return Err(IgdError::InvalidValue(format!(
                "expected {n} probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(IgdError::InvalidValue("negative probability".into()));
        }
        let (l1, vocab) = (layout.discrete_len(), layout.vocab_size() as usize);
        let atoms = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| Atom {
                weight: p,
                tokens: state_tokens(i, l1, vocab),
                means: vec![],
                stds: vec![],
            })
            .collect();
        Self::build(layout, TargetKind::DiscreteTable, atoms)
    }

    /// One label token times a per-label Gaussian mixture on one vector of
    /// dimension `d ≤ 3`. Component weights within a label must sum to 1.
    pub fn labeled_gmm(
        layout: Arc<ElementLayout>,
        label_probs: Vec<f64>,
        components: Vec<Vec<Component>>,
    ) -> Result<Self> {
        if layout.discrete_len() != 1 || layout.continuous_len() != 1 || layout.dims()[0] > 3 {
            return Err(IgdError::InvalidValue(
                "labeled GMM needs one label token and one vector of dimension <= 3".into(),
            ));
        }
        if label_probs.len() != layout.vocab_size() as usize || components.len() != label_probs.len() {
            return Err(IgdError::InvalidValue(
                "one probability and mixture per label required".into(),
            ));
        }
        let mut atoms = Vec::new();
        for (label, (p, comps)) in label_probs.iter().zip(&components).enumerate() {
            let w: f64 = comps.iter().map(|c| c.weight).sum();
            if (w - 1.0).abs() > 1e-12 {
                return Err(IgdError::InvalidValue(format!(
                    "label {label} mixture weights sum to {w}"
                )));
            }
            for c in comps {
                atoms.push(Atom {
                    weight: p * c.weight,
                    tokens: vec![label as Token],
                    means: vec![c.mean.clone()],
                    stds: vec![c.std.clone()],
                });
            }
        }
        Self::build(layout, TargetKind::LabeledGmm, atoms)
    }

    pub fn layout(&self) -> &ElementLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<ElementLayout> {
        &self.layout
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.atoms.len() - 1);
        let a = &self.atoms[idx];
        let vectors = a
            .means
            .iter()
            .zip(&a.stds)
            .map(|(m, s)| {
                m.iter()
                    .zip(s)
                    .map(|(mu, sd)| mu + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Sequence::new(self.layout.clone(), a.tokens.clone(), vectors).expect("atoms fit the layout")
    }

    /// Probability of every token configuration (discrete-only targets).
    pub fn discrete_probs(&self) -> Result<Vec<f64>> {
        if self.layout.continuous_len() > 0 {
            return Err(IgdError::InvalidValue("target has continuous elements".into()));
        }
        let n = state_count(&self.layout)?;
        let vocab = self.layout.vocab_size() as usize;
        let mut p = vec![0.0; n];
        for a in &self.atoms {
            p[state_index(&a.tokens, vocab)] += a.weight;
        }
        Ok(p)
    }

    /// Marginal law of the token at `pos`.
    pub fn token_marginal(&self, pos: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.vocab_size() as usize];
        for a in &self.atoms {
            p[a.tokens[pos] as usize] += a.weight;
        }
        p
    }

    /// Mean of continuous element `vec_index` given token `tok` at `pos`.
    pub fn conditional_mean(&self, pos: usize, tok: Token, vec_index: usize) -> Option<Vec<f64>> {
        let d = self.layout.dims()[vec_index];
        let mut acc = vec![0.0; d];
        let mut w = 0.0;
        for a in self.atoms.iter().filter(|a| a.tokens[pos] == tok) {
            w += a.weight;
            for (s, m) in acc.iter_mut().zip(&a.means[vec_index]) {
                *s += a.weight * m;
            }
        }
        (w > 0.0).then(|| acc.into_iter().map(|s| s / w).collect())
    }

    /// Components of the mixture on vector `vec_index` given token `tok` at
    /// `pos`, with weights renormalized.
    pub fn conditional_components(&self, pos: usize, tok: Token, vec_index: usize) -> Vec<Component> {
        let sel: Vec<&Atom> = self.atoms.iter().filter(|a| a.tokens[pos] == tok).collect();
        let w: f64 = sel.iter().map(|a| a.weight).sum();
        sel.into_iter()
            .map(|a| Component::new(a.weight / w, a.means[vec_index].clone(), a.stds[vec_index].clone()))
            .collect()
    }
}
