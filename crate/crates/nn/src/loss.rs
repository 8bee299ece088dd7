//! Per-example training losses.

use serde::{Deserialize, Serialize};

use igd_core::forward::{ExampleTarget, TrainingExample};

use crate::error::{NnError, Result};
use crate::model::{DiscoDit, NetInput};
use crate::tape::{Tape, Var};

/// Which discrete objective trains the network, and so which denoiser
/// flavor it serves at sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteLoss {
    /// Binary reduction: the query slot is masked with ω and logit `x`
    /// predicts whether the step's draw was `x` rather than φ.
    #[default]
    Bce,
    /// `|X|`-ary classification of `s^(t)_{i_t}` from the unmasked `s^(t+1)`.
    XaryCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Discrete,
    Continuous,
}

/// Records the loss of one example on `tape`.
pub fn example_loss(
    model: &DiscoDit,
    tape: &mut Tape,
    ex: &TrainingExample,
    flavor: DiscreteLoss,
) -> Result<(Var, LossKind)> {
    let pos = ex.position;
    match &ex.target {
        ExampleTarget::Discrete {
            target_token,
            z_was_phi,
        } => {
            let shown = ex.input.tokens()[pos] as usize;
            let masked;
            let tokens = match flavor {
                DiscreteLoss::Bce => {
                    masked = ex.input.masked_view(pos, false)?;
                    masked.tokens()
                }
                DiscreteLoss::XaryCe => ex.input.tokens(),
            };
            let out = model.forward(
                tape,
                NetInput {
                    tokens,
                    vectors: ex.input.vectors(),
                    t: ex.t,
                    k: 0,
                    query: pos,
                },
            )?;
            let logits = out.logits.ok_or_else(|| NnError::Graph("no discrete head".into()))?;
            let loss = match flavor {
                DiscreteLoss::Bce => tape.bce_logit(logits, pos, shown, !z_was_phi),
                DiscreteLoss::XaryCe => tape.cross_entropy(logits, pos, *target_token as usize),
            };
            Ok((loss, LossKind::Discrete))
        }
        ExampleTarget::Continuous { k, eps } => {
            let out = model.forward(
                tape,
                NetInput {
                    tokens: ex.input.tokens(),
                    vectors: ex.input.vectors(),
                    t: ex.t,
                    k: *k,
                    query: pos,
                },
            )?;
            let slot = pos - ex.input.layout().discrete_len();
            let fixed = &ex.input.cond_mask().vectors[slot];
            let n = eps.len();
            let target = ndarray::Array2::from_shape_vec((1, n), eps.clone()).expect("shape");
            let mask = ndarray::Array2::from_shape_fn((1, n), |(_, j)| if fixed[j] { 0.0 } else { 1.0 });
            Ok((tape.sq_err(out.eps[slot], target, mask), LossKind::Continuous))
        }
    }
}
