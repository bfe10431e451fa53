//! Pieces shared by the classifier and generator training loops.

use std::io::Write;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch counts (1-based, within an epoch) after which validation runs,
/// evenly spaced so the last one closes the epoch.
pub fn validation_points(batches_per_epoch: usize, per_epoch: usize) -> Vec<usize> {
    let per_epoch = per_epoch.max(1).min(batches_per_epoch.max(1));
    let mut points: Vec<usize> = (1..=per_epoch)
        .map(|k| (k * batches_per_epoch).div_ceil(per_epoch))
        .filter(|p| *p > 0)
        .collect();
    points.dedup();
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    NotImproved,
    /// Patience exhausted: stop training now.
    Stop,
}

/// Patience counted in validation steps.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        EarlyStopping {
            patience,
            higher_is_better,
            best: None,
            since_best: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: f64) -> Observation {
        let better = match self.best {
            None => true,
            Some(b) if self.higher_is_better => value > b,
            Some(b) => value < b,
        };
        if better {
            self.best = Some(value);
            self.since_best = 0;
            return Observation::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Observation::Stop
        } else {
            Observation::NotImproved
        }
    }
}

/// One optimizer per parameter group, each with its own base rate.
pub struct GroupedOptimizer {
    groups: Vec<Group>,
}

struct Group {
    name: String,
    vars: Vec<Var>,
    base_lr: f64,
    decays: bool,
    opt: AdamW,
}

impl std::fmt::Debug for GroupedOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.groups.iter().map(|g| (&g.name, g.vars.len(), g.opt.learning_rate())))
            .finish()
    }
}

impl Default for GroupedOptimizer {
    fn default() -> Self {
        Self::new()
    }
}

impl GroupedOptimizer {
    pub fn new() -> Self {
        GroupedOptimizer { groups: Vec::new() }
    }

    /// Adds an Adam group. `decays` marks it for [`Self::decay_per_step`].
    pub fn add_group(&mut self, name: &str, vars: Vec<Var>, lr: f64, decays: bool) -> Result<()> {
        if vars.is_empty() {
            return Ok(());
        }
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        };
        let opt = AdamW::new(vars.clone(), params)?;
        self.groups.push(Group {
            name: name.to_string(),
            vars,
            base_lr: lr,
            decays,
            opt,
        });
        Ok(())
    }

    pub fn learning_rates(&self) -> Vec<(String, f64)> {
        self.groups
            .iter()
            .map(|g| (g.name.clone(), g.opt.learning_rate()))
            .collect()
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.groups.iter().flat_map(|g| g.vars.iter())
    }

    /// Sets every decaying group to `base_lr * factor^steps`.
    pub fn decay_per_step(&mut self, factor: f64, steps: usize) {
        for g in self.groups.iter_mut().filter(|g| g.decays) {
            g.opt.set_learning_rate(g.base_lr * factor.powi(steps as i32));
        }
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        for g in &mut self.groups {
            g.opt.step(grads)?;
        }
        Ok(())
    }
}

/// Sums gradients of several micro-batches into one store.
#[derive(Default)]
pub struct GradAccumulator {
    store: Option<GradStore>,
}

impl GradAccumulator {
    pub fn new() -> Self {
        GradAccumulator { store: None }
    }

    /// Backpropagates `loss` and adds its gradients for `vars`.
    pub fn add(&mut self, loss: &Tensor, vars: &[&Var]) -> Result<()> {
        let mut grads = loss.backward()?;
        match &mut self.store {
            None => self.store = Some(grads),
            Some(acc) => {
                for v in vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        let sum = match acc.get(v.as_tensor()) {
                            Some(prev) => (prev + g)?,
                            None => g,
                        };
                        acc.insert(v.as_tensor(), sum);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn take(&mut self) -> Option<GradStore> {
        self.store.take()
    }
}

/// Rejects NaN or infinite losses with a diagnostic.
pub fn check_finite(loss: f64, step: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("{what} loss is {loss} at step {step}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    #[serde(default)]
    pub macro_f1: Option<f64>,
}

/// Per-validation-step training log, written as CSV
/// `step,split,loss,macro_f1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn push(&mut self, step: usize, split: &str, loss: f64, macro_f1: Option<f64>) {
        self.rows.push(LogRow {
            step,
            split: split.to_string(),
            loss,
            macro_f1,
        });
    }

    pub fn split_rows<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a LogRow> + 'a {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(TrainingLog { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn validation_points_are_evenly_spaced() {
        assert_eq!(validation_points(8, 4), vec![2, 4, 6, 8]);
        assert_eq!(validation_points(10, 4), vec![3, 5, 8, 10]);
        assert_eq!(validation_points(2, 4), vec![1, 2]);
        assert_eq!(validation_points(1, 4), vec![1]);
    }

    #[test]
    fn early_stopping_counts_validation_steps() {
        let mut es = EarlyStopping::new(2, true);
        assert_eq!(es.observe(0.5), Observation::Improved);
        assert_eq!(es.observe(0.5), Observation::NotImproved);
        assert_eq!(es.observe(0.7), Observation::Improved);
        assert_eq!(es.observe(0.6), Observation::NotImproved);
        assert_eq!(es.observe(0.6), Observation::Stop);
        let mut lower = EarlyStopping::new(1, false);
        lower.observe(3.0);
        assert_eq!(lower.observe(2.0), Observation::Improved);
        assert_eq!(lower.observe(2.5), Observation::Stop);
    }

    #[test]
    fn accumulated_gradients_equal_full_batch_gradient() {
        let w = Var::from_slice(&[1.0f64, -2.0], 2, &Device::Cpu).unwrap();
        let xs = [[1.0f64, 2.0], [3.0, 1.0], [0.5, -1.0], [2.0, 2.0]];
        let x = Tensor::new(&xs, &Device::Cpu).unwrap();
        // loss = mean over rows of (x_i . w)^2
        let loss_of = |rows: &Tensor| -> Tensor {
            rows.broadcast_mul(w.as_tensor())
                .unwrap()
                .sum(1)
                .unwrap()
                .sqr()
                .unwrap()
                .sum_all()
                .unwrap()
        };
        let whole = (loss_of(&x) / 4.0).unwrap().backward().unwrap();
        let mut acc = GradAccumulator::new();
        for chunk in [x.narrow(0, 0, 2).unwrap(), x.narrow(0, 2, 2).unwrap()] {
            acc.add(&(loss_of(&chunk) / 4.0).unwrap(), &[&w]).unwrap();
        }
        let acc = acc.take().unwrap();
        let a: Vec<f64> = whole.get(w.as_tensor()).unwrap().to_vec1().unwrap();
        let b: Vec<f64> = acc.get(w.as_tensor()).unwrap().to_vec1().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn per_step_decay_touches_only_decaying_groups() {
        let a = Var::zeros(1, DType::F32, &Device::Cpu).unwrap();
        let b = Var::zeros(1, DType::F32, &Device::Cpu).unwrap();
        let mut opt = GroupedOptimizer::new();
        opt.add_group("head", vec![a], 1e-3, false).unwrap();
        opt.add_group("encoder", vec![b], 1e-4, true).unwrap();
        opt.decay_per_step(0.5, 2);
        let lrs = opt.learning_rates();
        assert_eq!(lrs[0].1, 1e-3);
        assert!((lrs[1].1 - 2.5e-5).abs() < 1e-18);
    }

    #[test]
    fn log_csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut log = TrainingLog::default();
        log.push(0, "train", 0.7, None);
        log.push(4, "dev", 0.5, Some(0.8));
        log.save_csv(tmp.path().join("log.csv")).unwrap();
        let text = std::fs::read_to_string(tmp.path().join("log.csv")).unwrap();
        assert!(text.starts_with("step,split,loss,macro_f1\n"));
        assert_eq!(TrainingLog::read_csv(tmp.path().join("log.csv")).unwrap(), log);
    }

    #[test]
    fn nan_loss_is_rejected() {
        assert!(check_finite(f64::NAN, 3, "train").is_err());
        assert!(check_finite(0.1, 3, "train").is_ok());
    }
}
