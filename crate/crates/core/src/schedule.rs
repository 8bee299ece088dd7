//! Noise orders, discrete flip schedules, continuous β schedules and the
//! precomputed tables used for direct forward sampling.
//!
//! Sequence time `t` runs over `0..=T` with `T = rounds * L`. The element
//! visited at time `t` is `perm[t % L]`, and `t / L` is its round. Every
//! position is visited once per round, so each continuous element walks the
//! same cumulative step index `j` through the β table: round `ρ`, inner step
//! `k` maps to `j = Σ_{ρ' < ρ} K_ρ' + k`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IgdError, Result};
use crate::state::ElementLayout;

/// β(j) = b + ½(a − b)(1 + cos(jπ/K)). Runs from `a` at `j = 0` to `b` at
/// `j = K`.
pub fn beta_cosine(a: f64, b: f64, k_total: usize, j: usize) -> Result<f64> {
    check_ab(a, b, k_total, j)?;
    let frac = j as f64 / k_total as f64;
    Ok(b + 0.5 * (a - b) * (1.0 + (frac * PI).cos()))
}

/// β(j) = a + (b − a) j/K.
pub fn beta_linear(a: f64, b: f64, k_total: usize, j: usize) -> Result<f64> {
    check_ab(a, b, k_total, j)?;
    Ok(a + (b - a) * (j as f64 / k_total as f64))
}

fn check_ab(a: f64, b: f64, k_total: usize, j: usize) -> Result<()> {
    if !(a > 0.0 && a <= b && b < 1.0) {
        return Err(IgdError::InvalidSchedule(format!(
            "need 0 < a <= b < 1, got a={a}, b={b}"
        )));
    }
    if k_total == 0 || j > k_total {
        return Err(IgdError::IndexOutOfRange(format!("step {j} outside 0..={k_total}")));
    }
    Ok(())
}

/// Per-round permutation of positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseOrder {
    perm: Vec<usize>,
    rounds: usize,
}

impl NoiseOrder {
    pub fn round_robin(len: usize, rounds: usize) -> Result<Self> {
        Self::with_permutation((0..len).collect(), rounds)
    }

    pub fn with_permutation(perm: Vec<usize>, rounds: usize) -> Result<Self> {
        if rounds < 2 {
            return Err(IgdError::InvalidSchedule(format!(
                "need more than one round, got {rounds}"
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(IgdError::InvalidSchedule(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        if perm.is_empty() {
            return Err(IgdError::InvalidSchedule("empty permutation".into()));
        }
        Ok(Self { perm, rounds })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn total_steps(&self) -> usize {
        self.rounds * self.perm.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Position `i_t`.
    pub fn position(&self, t: usize) -> usize {
        self.perm[t % self.perm.len()]
    }

    pub fn round_of(&self, t: usize) -> usize {
        t / self.perm.len()
    }

    /// Offset of `pos` inside each round.
    fn slot_of(&self, pos: usize) -> usize {
        self.perm
            .iter()
            .position(|&p| p == pos)
            .expect("position in permutation")
    }

    /// Number of visits to `pos` at times strictly before `t`.
    pub fn visits_before(&self, pos: usize, t: usize) -> usize {
        let l = self.perm.len();
        t / l + usize::from(self.slot_of(pos) < t % l)
    }
}

/// Per-round probability of φ ("keep") with the token law fixed to uniform
/// over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSchedule {
    phi: Vec<f64>,
    vocab_size: u32,
}

impl DiscreteSchedule {
    pub fn new(phi: Vec<f64>, vocab_size: u32) -> Result<Self> {
        if phi.is_empty() {
            return Err(IgdError::InvalidSchedule("empty discrete schedule".into()));
        }
        if let Some(bad) = phi.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(IgdError::InvalidSchedule(format!("Π(φ) = {bad} outside [0, 1]")));
        }
        if vocab_size < 2 {
            return Err(IgdError::InvalidSchedule("vocabulary needs at least two tokens".into()));
        }
        Ok(Self { phi, vocab_size })
    }

    pub fn rounds(&self) -> usize {
        self.phi.len()
    }

    pub fn phi_per_round(&self) -> &[f64] {
        &self.phi
    }

    /// Π(φ) in round `round`. Rounds past the end reuse the last value.
    pub fn phi(&self, round: usize) -> f64 {
        self.phi[round.min(self.phi.len() - 1)]
    }

    /// Π(x) for any single token x in round `round`.
    pub fn token_prob(&self, round: usize) -> f64 {
        (1.0 - self.phi(round)) / self.vocab_size as f64
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Probability that at least one of the first `visits` visits replaced the
    /// token: 1 − ∏ Π_ρ(φ).
    pub fn cumulative_flip_prob(&self, visits: usize) -> f64 {
        1.0 - (0..visits).map(|r| self.phi(r)).product::<f64>()
    }

    /// The convergence hypothesis Π(φ) ≤ 1 − ε with ε > 0 in every round.
    pub fn mixes(&self) -> bool {
        self.phi.iter().all(|&p| p < 1.0)
    }
}

/// Named β schedule over the cumulative step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    Cosine { a: f64, b: f64 },
    Linear { a: f64, b: f64 },
    Table { values: Vec<f64> },
}

/// Steps per round and the β / ᾱ tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSchedule {
    steps_per_round: Vec<usize>,
    offsets: Vec<usize>,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    spec: BetaSchedule,
}

impl ContinuousSchedule {
    pub fn new(steps_per_round: Vec<usize>, spec: BetaSchedule) -> Result<Self> {
        if steps_per_round.is_empty() || steps_per_round.contains(&0) {
            return Err(IgdError::InvalidSchedule("every round needs at least one step".into()));
        }
        let k_total: usize = steps_per_round.iter().sum();
        let beta: Vec<f64> = match &spec {
            BetaSchedule::Cosine { a, b } => (0..k_total)
                .map(|j| beta_cosine(*a, *b, k_total, j))
                .collect::<Result<_>>()?,
            BetaSchedule::Linear { a, b } => (0..k_total)
                .map(|j| beta_linear(*a, *b, k_total, j))
                .collect::<Result<_>>()?,
            BetaSchedule::Table { values } => {
                if values.len() != k_total {
                    return Err(IgdError::InvalidSchedule(format!(
                        "β table has {} entries, steps sum to {k_total}",
                        values.len()
                    )));
                }
                values.clone()
            }
        };
        if let Some(bad) = beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(IgdError::InvalidSchedule(format!("β = {bad} outside [0, 1]")));
        }
        let mut alpha_bar = Vec::with_capacity(k_total);
        let mut acc = 1.0;
        for &b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let mut offsets = Vec::with_capacity(steps_per_round.len() + 1);
        let mut off = 0;
        offsets.push(0);
        for &k in &steps_per_round {
            off += k;
            offsets.push(off);
        }
        Ok(Self {
            steps_per_round,
            offsets,
            beta,
            alpha_bar,
            spec,
        })
    }

    pub fn rounds(&self) -> usize {
        self.steps_per_round.len()
    }

    pub fn steps_per_round(&self) -> &[usize] {
        &self.steps_per_round
    }

    /// K for round `round`.
    pub fn steps_in_round(&self, round: usize) -> usize {
        self.steps_per_round[round]
    }

    pub fn max_steps_per_round(&self) -> usize {
        self.steps_per_round.iter().copied().max().unwrap_or(0)
    }

    pub fn total_steps(&self) -> usize {
        self.beta.len()
    }

    /// Cumulative step index of the first inner step of `round`.
    pub fn round_offset(&self, round: usize) -> usize {
        self.offsets[round.min(self.offsets.len() - 1)]
    }

    pub fn spec(&self) -> &BetaSchedule {
        &self.spec
    }

    pub fn beta(&self, j: usize) -> Result<f64> {
        self.beta
            .get(j)
            .copied()
            .ok_or_else(|| IgdError::IndexOutOfRange(format!("β index {j} >= {}", self.beta.len())))
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// ᾱ(j) = ∏_{j' ≤ j} (1 − β(j')).
    pub fn cumulative_alpha(&self, j: usize) -> Result<f64> {
        self.alpha_bar
            .get(j)
            .copied()
            .ok_or_else(|| IgdError::IndexOutOfRange(format!("ᾱ index {j} >= {}", self.alpha_bar.len())))
    }

    /// Signal retention after `m` noising steps: 1 for `m = 0`, otherwise
    /// ᾱ(m − 1).
    pub fn alpha_bar_after(&self, m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.alpha_bar[(m - 1).min(self.alpha_bar.len() - 1)]
        }
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        *self.alpha_bar.last().expect("non-empty schedule")
    }
}

/// Serializable description of a full schedule (the `[schedule]` section of
/// a run config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub noise_order: NoiseOrderConfig,
    pub rounds: usize,
    pub phi: Vec<f64>,
    pub steps_per_round: Vec<usize>,
    pub beta: BetaSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseOrderConfig {
    Named(String),
    Permutation(Vec<usize>),
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            noise_order: NoiseOrderConfig::Named("round_robin".into()),
            rounds: 4,
            phi: vec![0.5; 4],
            steps_per_round: vec![200; 4],
            beta: BetaSchedule::Cosine { a: 0.0001, b: 0.03 },
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, layout: Arc<ElementLayout>) -> Result<ScheduleTable> {
        if self.phi.len() != self.rounds || self.steps_per_round.len() != self.rounds {
            return Err(IgdError::InvalidSchedule(format!(
                "rounds = {} but {} Π(φ) values and {} step counts",
                self.rounds,
                self.phi.len(),
                self.steps_per_round.len()
            )));
        }
        let order = match &self.noise_order {
            NoiseOrderConfig::Named(name) if name == "round_robin" => {
                NoiseOrder::round_robin(layout.len(), self.rounds)?
            }
            NoiseOrderConfig::Named(name) => {
                return Err(IgdError::InvalidSchedule(format!("unknown noise order {name:?}")))
            }
            NoiseOrderConfig::Permutation(p) => NoiseOrder::with_permutation(p.clone(), self.rounds)?,
        };
        let discrete = DiscreteSchedule::new(self.phi.clone(), layout.vocab_size())?;
        let continuous = ContinuousSchedule::new(self.steps_per_round.clone(), self.beta.clone())?;
        ScheduleTable::new(layout, order, discrete, continuous)
    }
}

/// Noise order plus both schedules plus the tables needed to jump directly
/// from `s^(0)` to `s^(t, k)`.
#[derive(Debug, Clone)]
pub struct ScheduleTable {
    layout: Arc<ElementLayout>,
    order: NoiseOrder,
    discrete: DiscreteSchedule,
    continuous: ContinuousSchedule,
    /// `(T + 1) × L` visits strictly before `t`.
    visits: Vec<u32>,
    /// `(T + 1) × L` probability that a discrete position has been replaced
    /// by time `t`.
    flip_prob: Vec<f64>,
}

impl ScheduleTable {
    pub fn new(
        layout: Arc<ElementLayout>,
        order: NoiseOrder,
        discrete: DiscreteSchedule,
        continuous: ContinuousSchedule,
    ) -> Result<Self> {
        if order.len() != layout.len() {
            return Err(IgdError::InvalidSchedule(format!(
                "noise order covers {} positions, layout has {}",
                order.len(),
                layout.len()
            )));
        }
        if discrete.rounds() != order.rounds() || continuous.rounds() != order.rounds() {
            return Err(IgdError::InvalidSchedule("round counts disagree".into()));
        }
        if discrete.vocab_size() != layout.vocab_size() {
            return Err(IgdError::InvalidSchedule(
                "discrete schedule vocabulary differs from layout".into(),
            ));
        }
        let l = layout.len();
        let t_total = order.total_steps();
        let mut visits = Vec::with_capacity((t_total + 1) * l);
        let mut flip_prob = Vec::with_capacity((t_total + 1) * l);
        for t in 0..=t_total {
            for j in 0..l {
                let v = order.visits_before(j, t);
                visits.push(v as u32);
                flip_prob.push(discrete.cumulative_flip_prob(v));
            }
        }
        Ok(Self {
            layout,
            order,
            discrete,
            continuous,
            visits,
            flip_prob,
        })
    }

    pub fn layout(&self) -> &ElementLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<ElementLayout> {
        &self.layout
    }

    pub fn order(&self) -> &NoiseOrder {
        &self.order
    }

    pub fn discrete(&self) -> &DiscreteSchedule {
        &self.discrete
    }

    pub fn continuous(&self) -> &ContinuousSchedule {
        &self.continuous
    }

    /// T = rounds · L.
    pub fn total_steps(&self) -> usize {
        self.order.total_steps()
    }

    pub fn rounds(&self) -> usize {
        self.order.rounds()
    }

    pub fn position(&self, t: usize) -> usize {
        self.order.position(t)
    }

    pub fn round_of(&self, t: usize) -> usize {
        self.order.round_of(t)
    }

    /// Π_t(φ).
    pub fn phi_at(&self, t: usize) -> f64 {
        self.discrete.phi(self.round_of(t))
    }

    /// K for the visit at time `t`.
    pub fn inner_steps(&self, t: usize) -> usize {
        self.continuous.steps_in_round(self.round_of(t).min(self.rounds() - 1))
    }

    /// Cumulative β index of inner step `k` of the visit at time `t`.
    pub fn step_index(&self, t: usize, k: usize) -> usize {
        self.continuous.round_offset(self.round_of(t)) + k
    }

    fn check_tk(&self, t: usize, k: usize) -> Result<()> {
        let t_total = self.total_steps();
        if t > t_total {
            return Err(IgdError::IndexOutOfRange(format!("t = {t} > T = {t_total}")));
        }
        let k_max = if t == t_total { 0 } else { self.inner_steps(t) };
        if k > k_max {
            return Err(IgdError::IndexOutOfRange(format!("k = {k} > {k_max} at t = {t}")));
        }
        Ok(())
    }

    /// Visits to `pos` strictly before time `t` (precomputed).
    pub fn visits_before(&self, pos: usize, t: usize) -> usize {
        self.visits[t * self.layout.len() + pos] as usize
    }

    /// m_j^(t,k): the number of noising steps element `pos` has received in
    /// the state `s^(t,k)`. For a discrete element this is the number of
    /// visits before `t`; for a continuous element it is the sum of K over
    /// those visits, plus `k` when `pos` is the element being noised at `t`.
    pub fn visit_count(&self, pos: usize, t: usize, k: usize) -> Result<usize> {
        self.check_tk(t, k)?;
        self.layout.kind(pos)?;
        let v = self.visits_before(pos, t);
        if self.layout.is_discrete(pos) {
            return Ok(v);
        }
        let prior = self.continuous.round_offset(v);
        if t < self.total_steps() && self.position(t) == pos {
            Ok(prior + k)
        } else {
            Ok(prior)
        }
    }

    /// p_j^t for a discrete position (precomputed).
    pub fn flip_prob(&self, pos: usize, t: usize) -> f64 {
        self.flip_prob[t * self.layout.len() + pos]
    }

    /// ᾱ seen by continuous element `pos` in state `s^(t,k)`.
    pub fn alpha_bar_at(&self, pos: usize, t: usize, k: usize) -> Result<f64> {
        let m = self.visit_count(pos, t, k)?;
        Ok(self.continuous.alpha_bar_after(m))
    }

    /// Recomputes the precomputed tables by walking the chain step by step
    /// and reports the first disagreement.
    pub fn verify_consistency(&self) -> Result<()> {
        let l = self.layout.len();
        let mut counts = vec![0usize; l];
        let mut keep = vec![1.0f64; l];
        for t in 0..=self.total_steps() {
            for j in 0..l {
                if self.visits_before(j, t) != counts[j] {
                    return Err(IgdError::InvalidSchedule(format!(
                        "visit table mismatch at t={t}, j={j}"
                    )));
                }
                if (self.flip_prob(j, t) - (1.0 - keep[j])).abs() > 1e-15 {
                    return Err(IgdError::InvalidSchedule(format!(
                        "flip table mismatch at t={t}, j={j}"
                    )));
                }
            }
            if t < self.total_steps() {
                let i = self.position(t);
                counts[i] += 1;
                keep[i] *= self.phi_at(t);
            }
        }
        let mut acc = 1.0;
        for j in 0..self.continuous.total_steps() {
            acc *= 1.0 - self.continuous.beta(j)?;
            if (acc - self.continuous.cumulative_alpha(j)?).abs() > 1e-15 {
                return Err(IgdError::InvalidSchedule(format!("ᾱ table mismatch at {j}")));
            }
        }
        Ok(())
    }

    /// Hex digest identifying the schedule, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.order.permutation()).as_bytes());
        h.update(format!("{:?}", self.discrete.phi_per_round()).as_bytes());
        h.update(format!("{:?}", self.continuous.steps_per_round()).as_bytes());
        for b in self.continuous.betas() {
            h.update(b.to_le_bytes());
        }
        h.update(format!("{:?}", self.layout).as_bytes());
        hex::encode(h.finalize())
    }

    /// Human-readable notes on hypotheses that do not hold: a round with
    /// Π(φ) = 1 never mixes, and ᾱ staying above 0.05 leaves the continuous
    /// terminal law far from N(0, I).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.layout.discrete_len() > 0 && !self.discrete.mixes() {
            out.push("discrete schedule has Π(φ) = 1 in some round; convergence hypothesis violated".into());
        }
        if self.layout.continuous_len() > 0 && self.continuous.terminal_alpha_bar() >= 0.05 {
            out.push(format!(
                "terminal ᾱ = {:.4} >= 0.05; continuous elements stay far from N(0, I)",
                self.continuous.terminal_alpha_bar()
            ));
        }
        out
    }
}
