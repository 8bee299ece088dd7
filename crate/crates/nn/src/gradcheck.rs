//! Central finite-difference checks of the network gradients.

use igd_core::forward::TrainingExample;

use crate::error::Result;
use crate::loss::{example_loss, DiscreteLoss};
use crate::model::DiscoDit;
use crate::params::{Grads, ParamStore};
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub analytic_norm: f64,
    /// `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)`, or 0 when both vanish.
    pub rel_err: f64,
}

/// Summed loss over `examples`, each with its own discrete flavor.
pub fn total_loss(model: &DiscoDit, params: &ParamStore, examples: &[(TrainingExample, DiscreteLoss)]) -> Result<f64> {
    let mut s = 0.0;
    for (ex, flavor) in examples {
        let mut tape = Tape::new(params);
        let (l, _) = example_loss(model, &mut tape, ex, *flavor)?;
        s += tape.value(l)[[0, 0]];
    }
    Ok(s)
}

pub fn total_grad(
    model: &DiscoDit,
    params: &ParamStore,
    examples: &[(TrainingExample, DiscreteLoss)],
) -> Result<Grads> {
    let mut g = params.zeros_like();
    for (ex, flavor) in examples {
        let mut tape = Tape::new(params);
        let (l, _) = example_loss(model, &mut tape, ex, *flavor)?;
        tape.backward(l, 1.0, &mut g)?;
    }
    Ok(g)
}

/// Compares every parameter entry's analytic gradient with a central
/// difference of step `h`, aggregated per tensor.
pub fn check_gradients(
    model: &DiscoDit,
    params: &ParamStore,
    examples: &[(TrainingExample, DiscreteLoss)],
    h: f64,
) -> Result<Vec<GroupCheck>> {
    let g = total_grad(model, params, examples)?;
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let (mut diff, mut fd_sq, mut an_sq) = (0.0, 0.0, 0.0);
        for idx in 0..params.get(p).len() {
            let cols = params.get(p).ncols();
            let at = [idx / cols, idx % cols];
            let orig = params.get(p)[at];
            work.get_mut(p)[at] = orig + h;
            let up = total_loss(model, &work, examples)?;
            work.get_mut(p)[at] = orig - h;
            let down = total_loss(model, &work, examples)?;
            work.get_mut(p)[at] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.tensors[p][at];
            diff += (fd - an) * (fd - an);
            fd_sq += fd * fd;
            an_sq += an * an;
        }
        let denom = fd_sq.sqrt().max(an_sq.sqrt());
        out.push(GroupCheck {
            name: params.name(p).to_string(),
            analytic_norm: an_sq.sqrt(),
            rel_err: if denom > 0.0 { diff.sqrt() / denom } else { 0.0 },
        });
    }
    Ok(out)
}
