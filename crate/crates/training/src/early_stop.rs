use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best: Option<f64>,
    /// 1-based epoch of the best value.
    pub best_epoch: usize,
    pub since_improvement: usize,
    epochs_seen: usize,
}

impl EarlyStopState {
    pub fn new() -> Self {
        Self {
            best: None,
            best_epoch: 0,
            since_improvement: 0,
            epochs_seen: 0,
        }
    }

    /// Whether the last update recorded a new best (the caller snapshots weights then).
    pub fn improved_last(&self) -> bool {
        self.best_epoch == self.epochs_seen && self.epochs_seen > 0
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new()
    }
}

/// Records one epoch's metric. Improvement means better than the best by more
/// than `min_delta`; equal values count as no improvement.
pub fn early_stop_update(state: &mut EarlyStopState, value: f64, patience: usize, min_delta: f64, maximize: bool) -> Decision {
    state.epochs_seen += 1;
    let improved = match state.best {
        None => true,
        Some(best) if maximize => value > best + min_delta,
        Some(best) => value < best - min_delta,
    };
    if improved {
        state.best = Some(value);
        state.best_epoch = state.epochs_seen;
        state.since_improvement = 0;
        Decision::Continue
    } else {
        state.since_improvement += 1;
        if state.since_improvement >= patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seq: &[f64], patience: usize, maximize: bool) -> (Option<usize>, EarlyStopState) {
        let mut s = EarlyStopState::new();
        for (i, &v) in seq.iter().enumerate() {
            if early_stop_update(&mut s, v, patience, 0.0, maximize) == Decision::Stop {
                return (Some(i + 1), s);
            }
        }
        (None, s)
    }

    #[test]
    fn stops_after_two_worse_epochs() {
        let (stop, s) = run(&[1.0, 0.9, 0.91, 0.92, 0.93], 2, false);
        assert_eq!(stop, Some(4));
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn strictly_improving_never_stops() {
        let seq: Vec<f64> = (0..50).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(run(&seq, 1, false).0, None);
        let acc: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        assert_eq!(run(&acc, 1, true).0, None);
    }

    #[test]
    fn flat_sequence_counts_as_stalled() {
        assert_eq!(run(&[1.0, 1.0, 1.0], 1, false).0, Some(2));
    }

    #[test]
    fn min_delta_requires_margin() {
        let mut s = EarlyStopState::new();
        early_stop_update(&mut s, 1.0, 3, 0.1, false);
        early_stop_update(&mut s, 0.95, 3, 0.1, false);
        assert_eq!(s.best_epoch, 1);
        early_stop_update(&mut s, 0.85, 3, 0.1, false);
        assert_eq!(s.best_epoch, 3);
    }
}
