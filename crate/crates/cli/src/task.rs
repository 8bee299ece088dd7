//! A configured task: layout, schedule, data or target, conditioning and
//! task metrics.

use std::sync::Arc;

use igd_core::oracle::{Component, TargetDistribution};
use igd_core::rng::{domain, keyed_rng};
use igd_core::schedule::ScheduleTable;
use igd_core::state::{CondMask, ElementLayout, Sequence};
use igd_core::tasks::sat::{sat_layout, sat_to_sequence, sequence_solves, split};
use igd_core::tasks::tabular::TabularSchema;
use igd_core::tasks::{gen_tiny_sat, load_tabular, RingTask, SatInstance};

use crate::config::{RunConfig, TaskConfig};
use crate::error::{CliError, Result};

pub struct Task {
    pub config: TaskConfig,
    pub layout: Arc<ElementLayout>,
    pub table: ScheduleTable,
    /// The closed-form target, for synthetic tasks.
    pub target: Option<TargetDistribution>,
    /// Training and held-out sequences, for data-backed tasks.
    pub train: Vec<Sequence>,
    pub test: Vec<Sequence>,
    pub sat_test: Vec<SatInstance>,
    pub schema: Option<TabularSchema>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl Task {
    /// Builds and validates everything the config describes. No sampling or
    /// training happens here.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        cfg.validate_sections()?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut sat_test = Vec::new();
        let mut schema = None;
        let (layout, target) = match &cfg.task {
            TaskConfig::ToyDiscrete { length, vocab, probs } => {
                let layout = Arc::new(ElementLayout::new(*length, vec![], *vocab)?);
                let target = TargetDistribution::discrete_table(layout.clone(), probs.clone())?;
                (layout, Some(target))
            }
            TaskConfig::ToyMixed {
                label_probs,
                means,
                sigma,
            } => {
                if means.len() != label_probs.len() {
                    return Err(invalid("toy-mixed needs one mean per label"));
                }
                let layout = Arc::new(ElementLayout::new(1, vec![1], label_probs.len() as u32)?);
                let comps = means
                    .iter()
                    .map(|&m| vec![Component::isotropic(1.0, vec![m], *sigma)])
                    .collect();
                let target = TargetDistribution::labeled_gmm(layout.clone(), label_probs.clone(), comps)?;
                (layout, Some(target))
            }
            TaskConfig::Ring { labels, sigma } => {
                let ring = RingTask::new(*labels, *sigma)?;
                let layout = Arc::new(ring.layout()?);
                let target = ring.target(layout.clone())?;
                (layout, Some(target))
            }
            TaskConfig::Sat {
                n,
                train_instances,
                test_instances,
                data_seed,
            } => {
                if *test_instances == 0 {
                    return Err(invalid("sat needs at least one test instance"));
                }
                let all = gen_tiny_sat(*n, train_instances + test_instances, *data_seed)?;
                let (tr, te) = split(all, *test_instances);
                let layout = Arc::new(sat_layout(*n, te[0].m())?);
                train = tr
                    .iter()
                    .map(|i| sat_to_sequence(i, &layout, true))
                    .collect::<igd_core::Result<_>>()?;
                test = te
                    .iter()
                    .map(|i| sat_to_sequence(i, &layout, true))
                    .collect::<igd_core::Result<_>>()?;
                sat_test = te;
                (layout, None)
            }
            TaskConfig::Tabular {
                manifest,
                test_fraction,
                data_seed,
            } => {
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(invalid("test_fraction must lie in [0, 1)"));
                }
                let csv = cfg
                    .paths
                    .dataset
                    .as_ref()
                    .ok_or_else(|| invalid("tabular task needs paths.dataset"))?;
                let ds = load_tabular(csv, manifest, *test_fraction, *data_seed)?;
                train = ds.train;
                test = ds.test;
                schema = Some(ds.schema);
                (ds.layout, None)
            }
        };
        let table = cfg.schedule.build(layout.clone())?;
        table.verify_consistency()?;
        Ok(Self {
            config: cfg.task.clone(),
            layout,
            table,
            target,
            train,
            test,
            sat_test,
            schema,
        })
    }

    pub fn ring(&self) -> Option<RingTask> {
        match self.config {
            TaskConfig::Ring { labels, sigma } => RingTask::new(labels, sigma).ok(),
            _ => None,
        }
    }

    fn blank(&self) -> Sequence {
        let tokens = vec![0; self.layout.discrete_len()];
        let vectors = self.layout.dims().iter().map(|&d| vec![0.0; d]).collect();
        Sequence::new(self.layout.clone(), tokens, vectors).expect("blank sequence fits its layout")
    }

    /// The conditioning template of sample `id`: unconditioned for synthetic
    /// and tabular tasks, the clauses of held-out instance `id mod count` for
    /// SAT.
    pub fn template(&self, id: u64) -> Result<Sequence> {
        match self.config {
            TaskConfig::Sat { .. } => {
                let inst = &self.sat_test[(id % self.sat_test.len() as u64) as usize];
                Ok(sat_to_sequence(inst, &self.layout, false)?)
            }
            _ => Ok(self.blank()),
        }
    }

    /// Re-applies the task's structural conditioning to a sequence read back
    /// from a file.
    pub fn recondition(&self, seq: Sequence) -> Result<Sequence> {
        match self.config {
            TaskConfig::Sat { n, .. } => {
                let mut cond = CondMask::none(&self.layout);
                let m3 = self.layout.discrete_len() - n;
                cond.tokens[..m3].iter_mut().for_each(|c| *c = true);
                Ok(seq.with_cond_mask(cond)?)
            }
            _ => Ok(seq),
        }
    }

    /// Reference draws for metrics: `n` target samples for synthetic tasks,
    /// the held-out split otherwise.
    pub fn reference(&self, n: usize, seed: u64) -> Vec<Sequence> {
        match &self.target {
            Some(t) => (0..n as u64)
                .map(|i| t.sample(&mut keyed_rng(seed, &[domain::DATA, i])))
                .collect(),
            None => self.test.clone(),
        }
    }

    /// Task-defined constraint accuracy: sector agreement for the ring,
    /// solved fraction for SAT.
    pub fn constraint_accuracy(&self, samples: &[Sequence]) -> Option<f64> {
        match self.config {
            TaskConfig::Ring { .. } => self.ring().map(|r| r.constraint_accuracy(samples)),
            TaskConfig::Sat { n, .. } => {
                if samples.is_empty() {
                    return Some(0.0);
                }
                let ok = samples
                    .iter()
                    .filter(|s| sequence_solves(s, n).unwrap_or(false))
                    .count();
                Some(ok as f64 / samples.len() as f64)
            }
            _ => None,
        }
    }

    /// Constraint accuracy of exact target draws, where it is known in
    /// closed form.
    pub fn ideal_accuracy(&self) -> Option<f64> {
        match self.config {
            TaskConfig::Ring { .. } => self.ring().map(|r| r.ideal_accuracy()),
            TaskConfig::Sat { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Default continuous time scale for the network: the largest K.
    pub fn default_t_c(&self) -> f64 {
        self.table.continuous().max_steps_per_round() as f64
    }
}
