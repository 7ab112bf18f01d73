use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Index `j` of the hidden output `h_j` a skip of `k` reaches from step `t`
/// (steps are 1-based, `h_0` is the initial state). `None` when `k = 0` or
/// the source lies at or before `h_0`, in which case the candidate is the
/// zero vector.
pub fn skip_source(t: usize, k: usize) -> Option<usize> {
    if k == 0 || t <= k + 1 {
        None
    } else {
        Some(t - k - 1)
    }
}

/// How many of the skip actions `1..=K` resolve to a zero-padded candidate at
/// step `t`.
pub fn zero_padded_count(t: usize, window: usize) -> usize {
    (1..=window).filter(|&k| skip_source(t, k).is_none()).count()
}

/// Rolling store of the last `K + 1` hidden outputs for one sequence.
#[derive(Clone, Debug)]
pub struct HiddenHistory {
    window: usize,
    hidden_dim: usize,
    /// Step about to be processed (1-based).
    t: usize,
    /// `h_{first}..h_{t-1}`.
    past: VecDeque<Vec<f64>>,
    first: usize,
    memory: Option<Vec<f64>>,
}

impl HiddenHistory {
    pub fn new(window: usize, hidden_dim: usize, with_memory: bool) -> Self {
        let mut past = VecDeque::with_capacity(window + 2);
        past.push_back(vec![0.0; hidden_dim]);
        HiddenHistory {
            window,
            hidden_dim,
            t: 1,
            past,
            first: 0,
            memory: with_memory.then(|| vec![0.0; hidden_dim]),
        }
    }

    pub fn step(&self) -> usize {
        self.t
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn h_prev(&self) -> &[f64] {
        self.past.back().expect("history is never empty")
    }

    pub fn memory(&self) -> Option<&[f64]> {
        self.memory.as_deref()
    }

    /// Skip candidate for action `k` at the current step; zeros when the
    /// source precedes the sequence.
    pub fn candidate(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.window {
            return Err(Error::Action(format!("skip index {k} outside 1..={}", self.window)));
        }
        Ok(match skip_source(self.t, k) {
            Some(j) => self.past[j - self.first].clone(),
            None => vec![0.0; self.hidden_dim],
        })
    }

    pub fn zero_padded(&self) -> usize {
        zero_padded_count(self.t, self.window)
    }

    /// Records `h_t` (and the LSTM memory) and advances to step `t + 1`.
    pub fn push(&mut self, h: Vec<f64>, memory: Option<Vec<f64>>) {
        debug_assert_eq!(h.len(), self.hidden_dim);
        self.past.push_back(h);
        if self.memory.is_some() {
            self.memory = memory;
        }
        self.t += 1;
        while self.past.len() > self.window + 1 {
            self.past.pop_front();
            self.first += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_sources_follow_the_lag() {
        assert_eq!(skip_source(5, 0), None);
        assert_eq!(skip_source(5, 3), Some(1));
        assert_eq!(skip_source(5, 4), None);
        assert_eq!(skip_source(10, 8), Some(1));
    }

    #[test]
    fn zero_padding_count_matches_closed_form() {
        for window in 1..10 {
            for t in 1..30 {
                let expected = (window as i64 - t as i64 + 2).clamp(0, window as i64) as usize;
                assert_eq!(zero_padded_count(t, window), expected, "t={t} K={window}");
            }
        }
    }

    #[test]
    fn candidates_come_from_the_right_step() {
        let mut hist = HiddenHistory::new(3, 1, false);
        for t in 1..=8 {
            for k in 1..=3 {
                let c = hist.candidate(k).unwrap();
                let expected = skip_source(t, k).map_or(0.0, |j| j as f64);
                assert_eq!(c, vec![expected], "t={t} k={k}");
            }
            hist.push(vec![t as f64], None);
        }
        assert!(hist.candidate(0).is_err());
        assert!(hist.candidate(4).is_err());
    }
}
