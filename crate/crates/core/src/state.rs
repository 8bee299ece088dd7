//! The discrete-continuous state space: layouts, sequences and conditioning
//! masks.
//!
//! Positions are zero-based: `0..discrete_len` are tokens, the remaining
//! positions are real vectors whose dimensions are listed in
//! [`ElementLayout::dims`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{IgdError, Result};

pub type Token = u32;

/// Kind of the element stored at a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Discrete,
    Continuous,
}

impl ElementKind {
    fn name(self) -> &'static str {
        match self {
            ElementKind::Discrete => "discrete",
            ElementKind::Continuous => "continuous",
        }
    }
}

/// Shape of a sequence: how many tokens, the vector dimensions and the
/// reserved token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementLayout {
    discrete_len: usize,
    dims: Vec<usize>,
    vocab_size: u32,
    pad_token: Option<Token>,
    mask_token: Token,
    phi_token: Token,
}

impl ElementLayout {
    /// Layout with the mask token at `vocab_size` and φ at `vocab_size + 1`.
    pub fn new(discrete_len: usize, dims: Vec<usize>, vocab_size: u32) -> Result<Self> {
        Self::with_tokens(discrete_len, dims, vocab_size, None, vocab_size, vocab_size + 1)
    }

    pub fn with_tokens(
        discrete_len: usize,
        dims: Vec<usize>,
        vocab_size: u32,
        pad_token: Option<Token>,
        mask_token: Token,
        phi_token: Token,
    ) -> Result<Self> {
        if discrete_len + dims.len() == 0 {
            return Err(IgdError::InvalidLayout("sequence length must be at least 1".into()));
        }
        if dims.contains(&0) {
            return Err(IgdError::InvalidLayout(
                "every continuous dimension must be >= 1".into(),
            ));
        }
        if vocab_size < 2 {
            return Err(IgdError::InvalidLayout("vocabulary needs at least two tokens".into()));
        }
        if let Some(pad) = pad_token {
            if pad >= vocab_size {
                return Err(IgdError::InvalidLayout(format!(
                    "pad token {pad} must be inside the vocabulary of size {vocab_size}"
                )));
            }
        }
        if mask_token < vocab_size || phi_token < vocab_size || mask_token == phi_token {
            return Err(IgdError::InvalidLayout(
                "mask and phi tokens must be distinct and outside the vocabulary".into(),
            ));
        }
        Ok(Self {
            discrete_len,
            dims,
            vocab_size,
            pad_token,
            mask_token,
            phi_token,
        })
    }

    pub fn with_pad(mut self, pad: Token) -> Result<Self> {
        if pad >= self.vocab_size {
            return Err(IgdError::InvalidLayout(format!("pad token {pad} outside vocabulary")));
        }
        self.pad_token = Some(pad);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.discrete_len + self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn discrete_len(&self) -> usize {
        self.discrete_len
    }

    pub fn continuous_len(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Dimension of continuous position `pos` (absolute index).
    pub fn dim_at(&self, pos: usize) -> Option<usize> {
        pos.checked_sub(self.discrete_len)
            .and_then(|j| self.dims.get(j).copied())
    }

    pub fn total_continuous_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn pad_token(&self) -> Option<Token> {
        self.pad_token
    }

    pub fn mask_token(&self) -> Token {
        self.mask_token
    }

    pub fn phi_token(&self) -> Token {
        self.phi_token
    }

    pub fn kind(&self, pos: usize) -> Result<ElementKind> {
        if pos < self.discrete_len {
            Ok(ElementKind::Discrete)
        } else if pos < self.len() {
            Ok(ElementKind::Continuous)
        } else {
            Err(IgdError::PositionOutOfRange { pos, len: self.len() })
        }
    }

    pub fn is_discrete(&self, pos: usize) -> bool {
        pos < self.discrete_len
    }

    pub(crate) fn expect_kind(&self, pos: usize, expected: ElementKind) -> Result<()> {
        let actual = self.kind(pos)?;
        if actual != expected {
            return Err(IgdError::KindMismatch {
                pos,
                expected: expected.name(),
                actual: actual.name(),
            });
        }
        Ok(())
    }
}

/// A value for a single position.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Token(Token),
    Vector(Vec<f64>),
}

/// Which elements are held fixed by conditioning. Vectors carry one flag per
/// scalar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CondMask {
    pub tokens: Vec<bool>,
    pub vectors: Vec<Vec<bool>>,
}

impl CondMask {
    pub fn none(layout: &ElementLayout) -> Self {
        Self {
            tokens: vec![false; layout.discrete_len()],
            vectors: layout.dims().iter().map(|&d| vec![false; d]).collect(),
        }
    }

    pub fn all(layout: &ElementLayout) -> Self {
        Self {
            tokens: vec![true; layout.discrete_len()],
            vectors: layout.dims().iter().map(|&d| vec![true; d]).collect(),
        }
    }

    fn matches(&self, layout: &ElementLayout) -> bool {
        self.tokens.len() == layout.discrete_len()
            && self.vectors.len() == layout.continuous_len()
            && self.vectors.iter().zip(layout.dims()).all(|(v, &d)| v.len() == d)
    }

    /// True when every scalar of the element at `pos` is conditioned.
    pub fn is_fixed(&self, layout: &ElementLayout, pos: usize) -> bool {
        if layout.is_discrete(pos) {
            self.tokens[pos]
        } else {
            self.vectors[pos - layout.discrete_len()].iter().all(|&m| m)
        }
    }

    /// True when any scalar of the element at `pos` is conditioned.
    pub fn touches(&self, layout: &ElementLayout, pos: usize) -> bool {
        if layout.is_discrete(pos) {
            self.tokens[pos]
        } else {
            self.vectors[pos - layout.discrete_len()].iter().any(|&m| m)
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.tokens.iter().any(|&m| m) && !self.vectors.iter().flatten().any(|&m| m)
    }
}

/// A point of the state space together with its conditioning mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    layout: Arc<ElementLayout>,
    tokens: Vec<Token>,
    vectors: Vec<Vec<f64>>,
    cond: CondMask,
}

impl Sequence {
    pub fn new(layout: Arc<ElementLayout>, tokens: Vec<Token>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let cond = CondMask::none(&layout);
        Self::with_mask(layout, tokens, vectors, cond)
    }

    pub fn with_mask(
        layout: Arc<ElementLayout>,
        tokens: Vec<Token>,
        vectors: Vec<Vec<f64>>,
        cond: CondMask,
    ) -> Result<Self> {
        if tokens.len() != layout.discrete_len() {
            return Err(IgdError::InvalidValue(format!(
                "expected {} tokens, got {}",
                layout.discrete_len(),
                tokens.len()
            )));
        }
        if vectors.len() != layout.continuous_len() || vectors.iter().zip(layout.dims()).any(|(v, &d)| v.len() != d) {
            return Err(IgdError::InvalidValue("vector shapes do not match layout".into()));
        }
        if let Some(&bad) = tokens
            .iter()
            .find(|&&tok| tok >= layout.vocab_size() && tok != layout.mask_token())
        {
            return Err(IgdError::InvalidValue(format!("token {bad} outside vocabulary")));
        }
        if !cond.matches(&layout) {
            return Err(IgdError::InvalidValue("conditioning mask does not match layout".into()));
        }
        Ok(Self {
            layout,
            tokens,
            vectors,
            cond,
        })
    }

    pub fn layout(&self) -> &ElementLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<ElementLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn cond_mask(&self) -> &CondMask {
        &self.cond
    }

    pub fn token(&self, pos: usize) -> Result<Token> {
        self.layout.expect_kind(pos, ElementKind::Discrete)?;
        Ok(self.tokens[pos])
    }

    pub fn vector(&self, pos: usize) -> Result<&[f64]> {
        self.layout.expect_kind(pos, ElementKind::Continuous)?;
        Ok(&self.vectors[pos - self.layout.discrete_len()])
    }

    pub fn value(&self, pos: usize) -> Result<Value> {
        match self.layout.kind(pos)? {
            ElementKind::Discrete => Ok(Value::Token(self.tokens[pos])),
            ElementKind::Continuous => Ok(Value::Vector(self.vectors[pos - self.layout.discrete_len()].clone())),
        }
    }

    /// True when the element at `pos` is entirely held fixed.
    pub fn is_conditioned(&self, pos: usize) -> bool {
        self.cond.is_fixed(&self.layout, pos)
    }

    pub fn has_mask_token(&self) -> bool {
        self.tokens.contains(&self.layout.mask_token())
    }

    /// Returns a copy with the element at `pos` replaced by `value`.
    pub fn replace_element(&self, pos: usize, value: Value) -> Result<Sequence> {
        let mut out = self.clone();
        out.set(pos, value)?;
        Ok(out)
    }

    /// In-place form of [`Sequence::replace_element`].
    pub fn set(&mut self, pos: usize, value: Value) -> Result<()> {
        match value {
            Value::Token(tok) => self.set_token(pos, tok),
            Value::Vector(v) => self.set_vector(pos, &v),
        }
    }

    pub fn set_token(&mut self, pos: usize, tok: Token) -> Result<()> {
        self.layout.expect_kind(pos, ElementKind::Discrete)?;
        if self.cond.tokens[pos] {
            return Err(IgdError::Conditioned(pos));
        }
        if tok >= self.layout.vocab_size() && tok != self.layout.mask_token() {
            return Err(IgdError::InvalidValue(format!("token {tok} outside vocabulary")));
        }
        self.tokens[pos] = tok;
        Ok(())
    }

    /// Replaces a vector. Any conditioned scalar in it makes this an error;
    /// use [`Sequence::set_vector_unmasked`] to write only the free scalars.
    pub fn set_vector(&mut self, pos: usize, v: &[f64]) -> Result<()> {
        self.layout.expect_kind(pos, ElementKind::Continuous)?;
        let j = pos - self.layout.discrete_len();
        if self.cond.vectors[j].iter().any(|&m| m) {
            return Err(IgdError::Conditioned(pos));
        }
        if v.len() != self.vectors[j].len() {
            return Err(IgdError::InvalidValue(format!(
                "vector at {pos} has dimension {}, got {}",
                self.vectors[j].len(),
                v.len()
            )));
        }
        self.vectors[j].copy_from_slice(v);
        Ok(())
    }

    /// Writes the unconditioned scalars of `v` into position `pos`, leaving
    /// conditioned scalars untouched.
    pub fn set_vector_unmasked(&mut self, pos: usize, v: &[f64]) -> Result<()> {
        self.layout.expect_kind(pos, ElementKind::Continuous)?;
        let j = pos - self.layout.discrete_len();
        if v.len() != self.vectors[j].len() {
            return Err(IgdError::InvalidValue(format!("dimension mismatch at {pos}")));
        }
        for ((dst, &src), &fixed) in self.vectors[j].iter_mut().zip(v).zip(&self.cond.vectors[j]) {
            if !fixed {
                *dst = src;
            }
        }
        Ok(())
    }

    /// Copy with the token at discrete position `pos` replaced by the mask
    /// token. In strict mode an input that already holds a mask token is
    /// rejected.
    pub fn masked_view(&self, pos: usize, strict: bool) -> Result<Sequence> {
        if self.layout.discrete_len() == 0 {
            return Err(IgdError::KindMismatch {
                pos,
                expected: "discrete",
                actual: "continuous",
            });
        }
        self.layout.expect_kind(pos, ElementKind::Discrete)?;
        if strict {
            if let Some(at) = self.tokens.iter().position(|&t| t == self.layout.mask_token()) {
                return Err(IgdError::AlreadyMasked(at));
            }
        }
        let mut out = self.clone();
        out.tokens[pos] = self.layout.mask_token();
        Ok(out)
    }

    pub fn with_cond_mask(mut self, cond: CondMask) -> Result<Sequence> {
        if !cond.matches(&self.layout) {
            return Err(IgdError::InvalidValue("conditioning mask does not match layout".into()));
        }
        self.cond = cond;
        Ok(self)
    }

    /// Raw write used by the processes after they have checked conditioning.
    pub(crate) fn token_slot(&mut self, pos: usize) -> &mut Token {
        &mut self.tokens[pos]
    }

    pub(crate) fn vector_slot(&mut self, pos: usize) -> (&mut Vec<f64>, &[bool]) {
        let j = pos - self.layout.discrete_len();
        (&mut self.vectors[j], &self.cond.vectors[j])
    }
}

/// A non-empty set of sequences with one layout.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    sequences: Vec<Sequence>,
}

impl SequenceBatch {
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| IgdError::InvalidValue("batch must be non-empty".into()))?;
        if sequences.iter().any(|s| s.layout() != first.layout()) {
            return Err(IgdError::InvalidValue("batch layouts differ".into()));
        }
        Ok(Self { sequences })
    }

    pub fn layout(&self) -> &ElementLayout {
        self.sequences[0].layout()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn into_inner(self) -> Vec<Sequence> {
        self.sequences
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<ElementLayout> {
        Arc::new(ElementLayout::new(2, vec![1], 2).unwrap())
    }

    fn seq() -> Sequence {
        Sequence::new(layout(), vec![0, 1], vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn layout_invariants() {
        assert!(ElementLayout::new(0, vec![], 2).is_err());
        assert!(ElementLayout::new(1, vec![0], 2).is_err());
        assert!(ElementLayout::new(1, vec![], 1).is_err());
        assert!(ElementLayout::with_tokens(1, vec![], 3, Some(3), 3, 4).is_err());
        assert!(ElementLayout::with_tokens(1, vec![], 3, None, 2, 4).is_err());
        assert!(ElementLayout::with_tokens(1, vec![], 3, None, 4, 4).is_err());
        let l = ElementLayout::new(2, vec![3, 1], 4).unwrap().with_pad(0).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l.dim_at(2), Some(3));
        assert_eq!(l.dim_at(1), None);
        assert_eq!(l.pad_token(), Some(0));
    }

    #[test]
    fn replace_discrete() {
        let out = seq().replace_element(0, Value::Token(1)).unwrap();
        assert_eq!(out.tokens(), &[1, 1]);
        assert_eq!(out.vectors(), seq().vectors());
    }

    #[test]
    fn replace_continuous() {
        let out = seq().replace_element(2, Value::Vector(vec![2.5])).unwrap();
        assert_eq!(out.vectors(), &[vec![2.5]]);
        assert_eq!(out.tokens(), seq().tokens());
    }

    #[test]
    fn replace_conditioned_fails() {
        let mut cond = CondMask::none(&layout());
        cond.tokens[0] = true;
        let s = seq().with_cond_mask(cond).unwrap();
        assert_eq!(s.replace_element(0, Value::Token(1)), Err(IgdError::Conditioned(0)));
    }

    #[test]
    fn replace_kind_mismatch() {
        assert!(matches!(
            seq().replace_element(0, Value::Vector(vec![1.0])),
            Err(IgdError::KindMismatch { .. })
        ));
        assert!(matches!(
            seq().replace_element(2, Value::Token(0)),
            Err(IgdError::KindMismatch { .. })
        ));
        assert!(matches!(
            seq().replace_element(3, Value::Token(0)),
            Err(IgdError::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn masked_view_cases() {
        let m = seq().masked_view(1, true).unwrap();
        assert_eq!(m.tokens(), &[0, 2]);
        assert_eq!(seq().tokens(), &[0, 1]);
        assert_eq!(m.masked_view(0, true), Err(IgdError::AlreadyMasked(1)));
        assert_eq!(m.masked_view(0, false).unwrap().tokens(), &[2, 2]);
        assert!(seq().masked_view(2, true).is_err());
        let only_cont = Sequence::new(
            Arc::new(ElementLayout::new(0, vec![2], 2).unwrap()),
            vec![],
            vec![vec![0.0, 1.0]],
        )
        .unwrap();
        assert!(only_cont.masked_view(0, true).is_err());
    }

    #[test]
    fn partial_vector_mask() {
        let l = Arc::new(ElementLayout::new(0, vec![2], 2).unwrap());
        let mut cond = CondMask::none(&l);
        cond.vectors[0][1] = true;
        let mut s = Sequence::with_mask(l, vec![], vec![vec![1.0, 2.0]], cond).unwrap();
        assert!(s.set_vector(0, &[5.0, 5.0]).is_err());
        s.set_vector_unmasked(0, &[5.0, 5.0]).unwrap();
        assert_eq!(s.vector(0).unwrap(), &[5.0, 2.0]);
        assert!(!s.is_conditioned(0));
    }

    #[test]
    fn batch_homogeneous() {
        assert!(SequenceBatch::new(vec![]).is_err());
        let other = Sequence::new(Arc::new(ElementLayout::new(1, vec![], 2).unwrap()), vec![0], vec![]).unwrap();
        assert!(SequenceBatch::new(vec![seq(), other]).is_err());
        assert_eq!(SequenceBatch::new(vec![seq(), seq()]).unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn replacements_commute_and_are_idempotent(a in 0u32..2, b in 0u32..2, x in -5.0f64..5.0) {
            let s = seq();
            let one = s.replace_element(0, Value::Token(a)).unwrap()
                .replace_element(2, Value::Vector(vec![x])).unwrap()
                .replace_element(1, Value::Token(b)).unwrap();
            let two = s.replace_element(1, Value::Token(b)).unwrap()
                .replace_element(0, Value::Token(a)).unwrap()
                .replace_element(2, Value::Vector(vec![x])).unwrap();
            prop_assert_eq!(&one, &two);
            let again = one.replace_element(0, Value::Token(a)).unwrap();
            prop_assert_eq!(&one, &again);
        }

        #[test]
        fn mask_then_fill_has_no_mask(pos in 0usize..2, tok in 0u32..2) {
            let m = seq().masked_view(pos, true).unwrap();
            prop_assert!(m.has_mask_token());
            let filled = m.replace_element(pos, Value::Token(tok)).unwrap();
            prop_assert!(!filled.has_mask_token());
        }
    }
}
