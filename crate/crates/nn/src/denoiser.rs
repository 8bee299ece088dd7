//! The trained network as a sampler denoiser.

use rayon::prelude::*;

use igd_core::reverse::{Denoiser, DiscreteOutput};
use igd_core::state::Sequence;
use igd_core::{IgdError, Result};

use crate::loss::DiscreteLoss;
use crate::model::{DiscoDit, NetInput};
use crate::params::ParamStore;
use crate::tape::{sigmoid, Tape};

pub struct NetworkDenoiser<'a> {
    pub model: &'a DiscoDit,
    pub params: &'a ParamStore,
    pub flavor: DiscreteLoss,
}

impl NetworkDenoiser<'_> {
    fn discrete_one(&self, seq: &Sequence, pos: usize, t: usize) -> Result<DiscreteOutput> {
        let masked;
        let tokens = match self.flavor {
            DiscreteLoss::Bce => {
                masked = seq.masked_view(pos, false)?;
                masked.tokens()
            }
            DiscreteLoss::XaryCe => seq.tokens(),
        };
        let mut tape = Tape::new(self.params);
        let out = self.model.forward(
            &mut tape,
            NetInput {
                tokens,
                vectors: seq.vectors(),
                t,
                k: 0,
                query: pos,
            },
        )?;
        let logits = out
            .logits
            .ok_or_else(|| IgdError::InvalidDenoiserOutput("network has no discrete head".into()))?;
        let row = tape.value(logits).row(pos).to_vec();
        Ok(match self.flavor {
            DiscreteLoss::Bce => DiscreteOutput::Binary(row.into_iter().map(sigmoid).collect()),
            DiscreteLoss::XaryCe => DiscreteOutput::Logits(row),
        })
    }

    fn continuous_one(&self, seq: &Sequence, pos: usize, t: usize, k: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(self.params);
        let out = self.model.forward(
            &mut tape,
            NetInput {
                tokens: seq.tokens(),
                vectors: seq.vectors(),
                t,
                k,
                query: pos,
            },
        )?;
        let slot = pos - seq.layout().discrete_len();
        Ok(tape.value(out.eps[slot]).row(0).to_vec())
    }
}

impl Denoiser for NetworkDenoiser<'_> {
    fn discrete(&self, seqs: &[&Sequence], pos: usize, t: usize) -> Result<Vec<DiscreteOutput>> {
        seqs.par_iter().map(|s| self.discrete_one(s, pos, t)).collect()
    }

    fn continuous(&self, seqs: &[&Sequence], pos: usize, t: usize, k: usize) -> Result<Vec<Vec<f64>>> {
        seqs.par_iter().map(|s| self.continuous_one(s, pos, t, k)).collect()
    }
}
