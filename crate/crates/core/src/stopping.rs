//! Stopping regimes and the development-language epoch rule, as pure
//! functions over per-epoch dev-accuracy traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub dev_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Dev accuracy per epoch, epochs numbered 1, 2, ... without gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainingTrace {
    records: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_accuracies(accuracies: &[f64]) -> Result<Self> {
        let mut trace = Self::new();
        for &a in accuracies {
            trace.push(a)?;
        }
        Ok(trace)
    }

    /// Appends the next epoch and returns its number.
    pub fn push(&mut self, dev_accuracy: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&dev_accuracy) {
            return Err(Error::Training(format!(
                "dev accuracy {dev_accuracy} outside [0, 1] at epoch {}",
                self.records.len() + 1
            )));
        }
        let epoch = self.records.len() + 1;
        self.records.push(EpochRecord {
            epoch,
            dev_accuracy,
            checkpoint: None,
        });
        Ok(epoch)
    }

    pub fn set_checkpoint(&mut self, epoch: usize, reference: impl Into<String>) {
        if let Some(r) = epoch.checked_sub(1).and_then(|i| self.records.get_mut(i)) {
            r.checkpoint = Some(reference.into());
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dev_accuracy).collect()
    }

    pub fn accuracy_at(&self, epoch: usize) -> Option<f64> {
        epoch
            .checked_sub(1)
            .and_then(|i| self.records.get(i))
            .map(|r| r.dev_accuracy)
    }

    /// The first `epochs` epochs.
    pub fn prefix(&self, epochs: usize) -> TrainingTrace {
        TrainingTrace {
            records: self.records[..epochs.min(self.len())].to_vec(),
        }
    }
}

/// Epoch of maximum dev accuracy; the earliest epoch wins ties.
pub fn select_best_epoch(trace: &TrainingTrace) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in trace.records() {
        if best.is_none_or(|b| r.dev_accuracy > b.dev_accuracy) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Stop,
}

/// Epochs at which the running-best dev accuracy strictly improved,
/// starting from a running best of 0.
fn improvement_epochs(trace: &TrainingTrace) -> impl Iterator<Item = usize> + '_ {
    let mut best = 0.0;
    trace.records().iter().filter_map(move |r| {
        if r.dev_accuracy > best {
            best = r.dev_accuracy;
            Some(r.epoch)
        } else {
            None
        }
    })
}

/// Patience decision after the trace's last epoch `e`: continue while
/// `e < min_epochs` or the running best improved in `(e - window, e]`.
pub fn patience_budget(trace: &TrainingTrace, min_epochs: usize, window: usize) -> Decision {
    let e = trace.len();
    if e < min_epochs {
        return Decision::Continue;
    }
    let recent = improvement_epochs(trace).any(|i| i + window > e);
    if recent {
        Decision::Continue
    } else {
        Decision::Stop
    }
}

/// Epoch at which patience stops on `trace`, if it stops within it.
pub fn patience_stop_epoch(trace: &TrainingTrace, min_epochs: usize, window: usize) -> Option<usize> {
    let improvements: Vec<usize> = improvement_epochs(trace).collect();
    let mut k = 0;
    for e in min_epochs.max(1)..=trace.len() {
        while k < improvements.len() && improvements[k] <= e {
            k += 1;
        }
        let last = k.checked_sub(1).map(|i| improvements[i]);
        if last.is_none_or(|i| i + window <= e) {
            return Some(e);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StoppingPolicy {
    /// Train `budget` epochs and keep the best.
    BestOfBudget { budget: usize },
    /// Train at least `min_epochs`, extending while improvements keep
    /// landing within the trailing `window`.
    Patience { min_epochs: usize, window: usize },
    /// Train exactly `epoch` epochs and keep the last.
    FixedEpoch { epoch: usize },
}

impl StoppingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StoppingPolicy::BestOfBudget { budget: 0 } => {
                Err(Error::config("best-of-budget needs budget >= 1"))
            }
            StoppingPolicy::Patience { min_epochs, window } if window == 0 || min_epochs < window => {
                Err(Error::config("patience needs min_epochs >= window >= 1"))
            }
            StoppingPolicy::FixedEpoch { epoch: 0 } => Err(Error::config("fixed-epoch needs epoch >= 1")),
            _ => Ok(()),
        }
    }

    /// Whether training under this policy ends after the trace's last epoch.
    pub fn decide(&self, trace: &TrainingTrace) -> Decision {
        let stop = match *self {
            StoppingPolicy::BestOfBudget { budget } => trace.len() >= budget,
            StoppingPolicy::FixedEpoch { epoch } => trace.len() >= epoch,
            StoppingPolicy::Patience { min_epochs, window } => {
                patience_budget(trace, min_epochs, window) == Decision::Stop
            }
        };
        if stop {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    /// First epoch of `trace` at which the policy stops, if any.
    pub fn stop_epoch(&self, trace: &TrainingTrace) -> Option<usize> {
        let fixed = |n: usize| (trace.len() >= n).then_some(n);
        match *self {
            StoppingPolicy::BestOfBudget { budget } => fixed(budget),
            StoppingPolicy::FixedEpoch { epoch } => fixed(epoch),
            StoppingPolicy::Patience { min_epochs, window } => patience_stop_epoch(trace, min_epochs, window),
        }
    }

    /// Epoch whose model the policy keeps, given a trace that has reached
    /// the policy's stopping point. Epochs past that point are ignored.
    pub fn selected_epoch(&self, trace: &TrainingTrace) -> Option<usize> {
        let stop = self.stop_epoch(trace)?;
        match self {
            StoppingPolicy::FixedEpoch { .. } => Some(stop),
            _ => select_best_epoch(&trace.prefix(stop)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
    Floor,
    Ceil,
}

impl Rounding {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => x.round(),
            Rounding::HalfToEven => x.round_ties_even(),
            Rounding::Floor => x.floor(),
            Rounding::Ceil => x.ceil(),
        }
    }
}

/// Averaged target epoch, kept alongside the unrounded mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetEpoch {
    pub epoch: usize,
    pub raw_mean: f64,
}

/// Mean of `best_epochs`, rounded, at least 1.
pub fn devlang_epoch(best_epochs: &[usize], rounding: Rounding) -> Result<TargetEpoch> {
    if best_epochs.is_empty() {
        return Err(Error::config("cannot average an empty list of best epochs"));
    }
    let raw_mean = best_epochs.iter().sum::<usize>() as f64 / best_epochs.len() as f64;
    let epoch = (rounding.apply(raw_mean) as usize).max(1);
    Ok(TargetEpoch { epoch, raw_mean })
}

/// Best epochs of the development languages other than `target`.
pub fn loo_best_epochs(best_by_language: &BTreeMap<String, usize>, target: &str) -> Result<Vec<usize>> {
    let epochs: Vec<usize> = best_by_language
        .iter()
        .filter(|(lang, _)| lang.as_str() != target)
        .map(|(_, &e)| e)
        .collect();
    if epochs.is_empty() {
        return Err(Error::config(format!(
            "no development languages left after excluding `{target}`"
        )));
    }
    Ok(epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace_with_improvements(len: usize, at: &[usize]) -> TrainingTrace {
        let mut acc = 0.1;
        let mut values = Vec::with_capacity(len);
        for e in 1..=len {
            if at.contains(&e) {
                acc += 0.01;
            }
            values.push(acc);
        }
        TrainingTrace::from_accuracies(&values).unwrap()
    }

    fn patience_run(trace: &TrainingTrace) -> usize {
        (1..=trace.len())
            .find(|&e| patience_budget(&trace.prefix(e), 300, 100) == Decision::Stop)
            .unwrap()
    }

    #[test]
    fn best_epoch_examples() {
        let t = TrainingTrace::from_accuracies(&[0.1, 0.5, 0.3]).unwrap();
        assert_eq!(select_best_epoch(&t), Some(2));
        let t = TrainingTrace::from_accuracies(&[0.5, 0.5]).unwrap();
        assert_eq!(select_best_epoch(&t), Some(1));
        assert_eq!(select_best_epoch(&TrainingTrace::new()), None);
    }

    #[test]
    fn english_norm_trace_selects_epoch_26() {
        let mut acc: Vec<f64> = (1..=50).map(|e| 0.5 + e as f64 * 0.005).collect();
        for a in acc.iter_mut().skip(26) {
            *a = 0.7600;
        }
        acc[25] = 0.7705;
        let t = TrainingTrace::from_accuracies(&acc).unwrap();
        assert_eq!(StoppingPolicy::BestOfBudget { budget: 50 }.selected_epoch(&t), Some(26));
    }

    #[test]
    fn patience_examples() {
        let t = trace_with_improvements(700, &[150]);
        assert_eq!(patience_run(&t), 300);
        let t = trace_with_improvements(700, &[299]);
        assert_eq!(patience_run(&t), 399);
        // Training must still be running at 350 for that improvement to count.
        let t = trace_with_improvements(700, &[280, 350, 420]);
        assert_eq!(patience_run(&t), 520);
        assert_eq!(patience_stop_epoch(&t, 300, 100), Some(520));
    }

    #[test]
    fn all_zero_trace_stops_at_the_minimum() {
        let t = TrainingTrace::from_accuracies(&[0.0; 400]).unwrap();
        assert_eq!(patience_stop_epoch(&t, 300, 100), Some(300));
    }

    #[test]
    fn devlang_epoch_examples() {
        let r = Rounding::HalfAwayFromZero;
        assert_eq!(devlang_epoch(&[14, 18], r).unwrap().epoch, 16);
        assert_eq!(devlang_epoch(&[10], r).unwrap().epoch, 10);
        let t = devlang_epoch(&[26, 44, 43], r).unwrap();
        assert_eq!(t.epoch, 38);
        assert!((t.raw_mean - 37.666_666_666_666_664).abs() < 1e-12);
        assert_eq!(devlang_epoch(&[1, 2], r).unwrap().epoch, 2);
        assert_eq!(devlang_epoch(&[1, 2], Rounding::HalfToEven).unwrap().epoch, 2);
        assert_eq!(devlang_epoch(&[2, 3], Rounding::HalfToEven).unwrap().epoch, 2);
        assert!(devlang_epoch(&[], r).is_err());
    }

    #[test]
    fn leave_one_out_examples() {
        let map: BTreeMap<String, usize> = [("L1".to_string(), 14), ("L2".to_string(), 18)].into();
        assert_eq!(loo_best_epochs(&map, "L3").unwrap(), vec![14, 18]);
        assert_eq!(loo_best_epochs(&map, "L1").unwrap(), vec![18]);
        let single: BTreeMap<String, usize> = [("L1".to_string(), 14)].into();
        assert!(matches!(loo_best_epochs(&single, "L1"), Err(Error::Config(_))));
        let ten: BTreeMap<String, usize> = (0..10).map(|i| (format!("d{i}"), i + 1)).collect();
        assert_eq!(loo_best_epochs(&ten, "albanian").unwrap().len(), 10);
    }

    #[test]
    fn policy_validation() {
        assert!(StoppingPolicy::BestOfBudget { budget: 0 }.validate().is_err());
        assert!(StoppingPolicy::Patience { min_epochs: 50, window: 100 }.validate().is_err());
        assert!(StoppingPolicy::Patience { min_epochs: 300, window: 0 }.validate().is_err());
        assert!(StoppingPolicy::Patience { min_epochs: 300, window: 100 }.validate().is_ok());
        assert!(StoppingPolicy::FixedEpoch { epoch: 0 }.validate().is_err());
    }

    #[test]
    fn policy_parses_from_toml() {
        let p: StoppingPolicy = toml::from_str("kind = \"patience\"\nmin_epochs = 300\nwindow = 100").unwrap();
        assert_eq!(p, StoppingPolicy::Patience { min_epochs: 300, window: 100 });
        assert!(toml::from_str::<StoppingPolicy>("kind = \"best-of-budget\"\nbudgte = 3").is_err());
    }

    #[test]
    fn trace_rejects_out_of_range_accuracy() {
        assert!(TrainingTrace::from_accuracies(&[0.2, 1.5]).is_err());
        assert!(TrainingTrace::from_accuracies(&[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn constant_list_averages_to_itself(e in 1usize..1000, n in 1usize..20) {
            prop_assert_eq!(devlang_epoch(&vec![e; n], Rounding::default()).unwrap().epoch, e);
        }

        #[test]
        fn best_epoch_dominates(acc in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
            let t = TrainingTrace::from_accuracies(&acc).unwrap();
            let best = select_best_epoch(&t).unwrap();
            let a = t.accuracy_at(best).unwrap();
            prop_assert!(acc.iter().all(|&x| x <= a));
        }

        #[test]
        fn patience_never_stops_early_or_with_recent_improvement(
            steps in proptest::collection::vec(0u8..4, 1..80),
            min_epochs in 5usize..30,
            window in 1usize..5,
        ) {
            prop_assume!(min_epochs >= window);
            let acc: Vec<f64> = steps.iter().map(|&s| f64::from(s) / 4.0).collect();
            let t = TrainingTrace::from_accuracies(&acc).unwrap();
            if let Some(e) = patience_stop_epoch(&t, min_epochs, window) {
                prop_assert!(e >= min_epochs);
                let prefix = t.prefix(e);
                prop_assert!(improvement_epochs(&prefix).all(|i| i + window <= e));
            }
        }
    }
}
