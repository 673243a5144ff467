//! Training schedule: early stopping, learning-rate decay, and best-epoch
//! tracking driven by a monitored validation score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs without improvement before the learning rate is divided by
    /// the decay factor.
    pub lr_patience_epochs: usize,
    /// Epochs without improvement before training stops.
    pub early_stop_patience_epochs: usize,
    /// Hard cap on the number of epochs.
    pub max_epochs: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            lr_decay_factor: 10.0,
            lr_patience_epochs: 5,
            early_stop_patience_epochs: 10,
            max_epochs: 200,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) {
            return Err(Error::InvalidInput("initial_lr must be positive".into()));
        }
        if !(self.lr_decay_factor > 1.0) {
            return Err(Error::InvalidInput("lr_decay_factor must exceed 1".into()));
        }
        if self.lr_patience_epochs == 0 || self.early_stop_patience_epochs == 0 {
            return Err(Error::InvalidInput("patience values must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidInput("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// What the tracker decided after observing one epoch's score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDecision {
    pub epoch: usize,
    pub improved: bool,
    pub lr_decayed: bool,
    pub stop: bool,
}

/// State machine for the monitored-metric schedule.
///
/// Improvement means strictly greater than the best score seen; ties do not
/// reset patience. After `lr_patience_epochs` epochs without improvement
/// (and every further multiple while training continues) the learning rate
/// is divided by the decay factor; after `early_stop_patience_epochs` the
/// run stops. The decay is skipped on a stopping epoch.
#[derive(Debug, Clone)]
pub struct ScheduleTracker {
    schedule: TrainSchedule,
    lr: f64,
    epoch: usize,
    best_score: Option<f64>,
    best_epoch: Option<usize>,
    since_improvement: usize,
}

impl ScheduleTracker {
    pub fn new(schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        let lr = schedule.initial_lr;
        Ok(Self {
            schedule,
            lr,
            epoch: 0,
            best_score: None,
            best_epoch: None,
            since_improvement: 0,
        })
    }

    /// Feeds the validation score of the epoch that just finished
    /// (epochs are 1-indexed).
    pub fn observe(&mut self, score: f64) -> EpochDecision {
        self.epoch += 1;
        let improved = self.best_score.map_or(true, |best| score > best);
        if improved {
            self.best_score = Some(score);
            self.best_epoch = Some(self.epoch);
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }

        let stop = self.since_improvement >= self.schedule.early_stop_patience_epochs;
        let mut lr_decayed = false;
        if !stop
            && self.since_improvement > 0
            && self.since_improvement % self.schedule.lr_patience_epochs == 0
        {
            self.lr /= self.schedule.lr_decay_factor;
            lr_decayed = true;
        }
        EpochDecision {
            epoch: self.epoch,
            improved,
            lr_decayed,
            stop,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best_score
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_tracker() -> ScheduleTracker {
        ScheduleTracker::new(TrainSchedule::default()).unwrap()
    }

    #[test]
    fn stops_after_ten_flat_epochs_and_keeps_epoch_two() {
        // [.1, .2, then ten epochs of .2]: ties never improve
        let mut tracker = default_tracker();
        let mut scores = vec![0.1, 0.2];
        scores.extend(std::iter::repeat(0.2).take(10));
        let mut stopped_at = None;
        for (i, &s) in scores.iter().enumerate() {
            let d = tracker.observe(s);
            if d.stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(12));
        assert_eq!(tracker.best_epoch(), Some(2));
    }

    #[test]
    fn decays_once_after_five_flat_epochs() {
        // three improving epochs, then flat
        let mut tracker = default_tracker();
        for s in [0.1, 0.2, 0.3] {
            let d = tracker.observe(s);
            assert!(d.improved);
            assert!(!d.lr_decayed);
        }
        for i in 1..=4 {
            let d = tracker.observe(0.3);
            assert!(!d.lr_decayed, "no decay at {i} flat epochs");
        }
        let d = tracker.observe(0.3);
        assert!(d.lr_decayed, "decay at 5 flat epochs");
        assert!((tracker.lr() - 1e-5).abs() < 1e-18);
        assert!(!d.stop);
    }

    #[test]
    fn no_decay_on_the_stopping_epoch() {
        let mut tracker = default_tracker();
        tracker.observe(0.5);
        let mut last = None;
        for _ in 0..10 {
            last = Some(tracker.observe(0.1));
        }
        let last = last.unwrap();
        assert!(last.stop);
        assert!(!last.lr_decayed);
        // exactly one decay happened, at 5 epochs without improvement
        assert!((tracker.lr() - 1e-5).abs() < 1e-18);
    }

    /// Plain reference simulation of the schedule, written with its own
    /// counters, used to pin the tracker on random score sequences.
    fn reference_run(scores: &[f64], sched: &TrainSchedule) -> (usize, Vec<usize>, usize, f64) {
        let mut best = f64::NEG_INFINITY;
        let mut best_epoch = 0usize;
        let mut flat = 0usize;
        let mut lr = sched.initial_lr;
        let mut decay_epochs = Vec::new();
        let mut stop_epoch = scores.len();
        for (idx, &s) in scores.iter().enumerate() {
            let epoch = idx + 1;
            if s > best {
                best = s;
                best_epoch = epoch;
                flat = 0;
            } else {
                flat += 1;
                if flat >= sched.early_stop_patience_epochs {
                    stop_epoch = epoch;
                    break;
                }
                if flat % sched.lr_patience_epochs == 0 {
                    lr /= sched.lr_decay_factor;
                    decay_epochs.push(epoch);
                }
            }
        }
        (stop_epoch, decay_epochs, best_epoch, lr)
    }

    #[test]
    fn tracker_matches_reference_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sched = TrainSchedule::default();
        for _ in 0..200 {
            let len = rng.gen_range(1..40);
            // few distinct levels, so ties and droughts are common
            let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(0..6) as f64 / 10.0).collect();

            let mut tracker = ScheduleTracker::new(sched.clone()).unwrap();
            let mut decay_epochs = Vec::new();
            let mut stop_epoch = scores.len();
            for &s in &scores {
                let d = tracker.observe(s);
                if d.lr_decayed {
                    decay_epochs.push(d.epoch);
                }
                if d.stop {
                    stop_epoch = d.epoch;
                    break;
                }
            }

            let (ref_stop, ref_decays, ref_best, ref_lr) = reference_run(&scores, &sched);
            assert_eq!(stop_epoch, ref_stop, "scores {scores:?}");
            assert_eq!(decay_epochs, ref_decays, "scores {scores:?}");
            assert_eq!(tracker.best_epoch(), Some(ref_best), "scores {scores:?}");
            assert!((tracker.lr() - ref_lr).abs() < 1e-18, "scores {scores:?}");
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = TrainSchedule::default();
        s.lr_decay_factor = 1.0;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::default();
        s.lr_patience_epochs = 0;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::default();
        s.initial_lr = 0.0;
        assert!(s.validate().is_err());
    }
}
