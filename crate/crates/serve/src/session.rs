use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::classify::PredictionEvent;
use crate::error::{Result, ServeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Consecutive confident frames needed to commit a letter.
    pub k: usize,
    /// Minimum top-1 probability for a frame to count toward a run.
    pub tau: f32,
    /// Silence after the last commit before a word space is appended.
    pub idle_ms: u64,
    /// Capacity of the recent-prediction ring.
    pub window: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: 8,
            tau: 0.6,
            idle_ms: 1500,
            window: 32,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ServeError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.k > self.window {
            return bad(format!("k {} exceeds window {}", self.k, self.window));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub label: String,
    pub at_ms: u64,
}

/// Client text commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionCommand {
    Clear,
    Backspace,
    /// Omitted fields keep their current value.
    Config {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        tau: Option<f32>,
        #[serde(default)]
        idle_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionInput {
    Event(PredictionEvent),
    Tick { now_ms: u64 },
    Command(SessionCommand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub id: u64,
    config: SessionConfig,
    /// Recent top-1 `(class, prob)`, oldest first.
    window: VecDeque<(usize, f32)>,
    text: String,
    last_commit: Option<Commit>,
}

impl SessionState {
    pub fn new(id: u64, config: SessionConfig) -> Self {
        Self {
            id,
            config,
            window: VecDeque::with_capacity(config.window),
            text: String::new(),
            last_commit: None,
        }
    }

    pub fn config(&self) -> SessionConfig {
        self.config
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn last_commit(&self) -> Option<&Commit> {
        self.last_commit.as_ref()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Trailing frames sharing the newest class, each at or above `tau`.
    pub fn run(&self) -> usize {
        let Some(&(class, _)) = self.window.back() else {
            return 0;
        };
        self.window
            .iter()
            .rev()
            .take_while(|&&(c, p)| c == class && p >= self.config.tau)
            .count()
    }

    fn reset_window(&mut self) {
        self.window.clear();
    }
}

/// Feeds one prediction; returns the committed label when this event completes a run of `k`.
/// Committing clears the window, so a held sign repeats only after a fresh run.
pub fn update_session(state: &mut SessionState, event: &PredictionEvent) -> Option<String> {
    if state.window.len() == state.config.window {
        state.window.pop_front();
    }
    state.window.push_back((event.class, event.prob));
    if state.run() < state.config.k {
        return None;
    }
    state.text.push_str(&event.label);
    state.last_commit = Some(Commit {
        label: event.label.clone(),
        at_ms: event.timestamp_ms,
    });
    state.reset_window();
    Some(event.label.clone())
}

/// Appends one space once `idle_ms` has passed since the last commit; returns whether text changed.
pub fn idle_gap(state: &mut SessionState, now_ms: u64) -> bool {
    let Some(c) = &state.last_commit else {
        return false;
    };
    if state.text.is_empty() || state.text.ends_with(' ') {
        return false;
    }
    if now_ms.saturating_sub(c.at_ms) < state.config.idle_ms {
        return false;
    }
    state.text.push(' ');
    true
}

pub fn apply_command(state: &mut SessionState, cmd: &SessionCommand) -> Result<()> {
    match cmd {
        SessionCommand::Clear => {
            state.text.clear();
            state.last_commit = None;
        }
        SessionCommand::Backspace => {
            state.text.pop();
        }
        SessionCommand::Config { k, tau, idle_ms } => {
            let mut next = state.config;
            if let Some(k) = k {
                next.k = *k;
            }
            if let Some(t) = tau {
                next.tau = *t;
            }
            if let Some(i) = idle_ms {
                next.idle_ms = *i;
            }
            next.validate()?;
            state.config = next;
        }
    }
    state.reset_window();
    Ok(())
}

/// One step of the session machine. Events are preceded by an idle check at their timestamp.
pub fn apply(state: &mut SessionState, input: &SessionInput) -> Result<Option<String>> {
    match input {
        SessionInput::Event(e) => {
            idle_gap(state, e.timestamp_ms);
            Ok(update_session(state, e))
        }
        SessionInput::Tick { now_ms } => {
            idle_gap(state, *now_ms);
            Ok(None)
        }
        SessionInput::Command(c) => apply_command(state, c).map(|_| None),
    }
}

/// Runs `inputs` from a fresh session; rejected commands leave the state unchanged.
pub fn replay(config: SessionConfig, inputs: &[SessionInput]) -> SessionState {
    let mut s = SessionState::new(0, config);
    for i in inputs {
        let _ = apply(&mut s, i);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(label: char, prob: f32, t: u64) -> PredictionEvent {
        let class = (label as u8 - b'A') as usize;
        PredictionEvent {
            frame: t,
            class,
            label: label.to_string(),
            prob,
            probs: vec![],
            timestamp_ms: t,
        }
    }

    fn cfg(k: usize) -> SessionConfig {
        SessionConfig {
            k,
            ..SessionConfig::default()
        }
    }

    fn feed(s: &mut SessionState, evs: &[(char, f32)]) -> Vec<String> {
        evs.iter()
            .enumerate()
            .filter_map(|(i, &(l, p))| update_session(s, &ev(l, p, i as u64)))
            .collect()
    }

    #[test]
    fn three_confident_frames_commit() {
        let mut s = SessionState::new(0, cfg(3));
        assert_eq!(feed(&mut s, &[('A', 0.9), ('A', 0.9), ('A', 0.9)]), ["A"]);
        assert_eq!(s.text(), "A");
        assert_eq!(s.window_len(), 0);
    }

    #[test]
    fn alternating_never_commits() {
        for k in 2..6 {
            let mut s = SessionState::new(0, cfg(k));
            let evs: Vec<_> = (0..40).map(|i| (if i % 2 == 0 { 'A' } else { 'B' }, 0.9)).collect();
            assert!(feed(&mut s, &evs).is_empty());
        }
    }

    #[test]
    fn low_confidence_breaks_run() {
        let mut s = SessionState::new(0, cfg(3));
        assert!(feed(&mut s, &[('A', 0.9), ('A', 0.5), ('A', 0.9)]).is_empty());
    }

    #[test]
    fn double_letters_need_fresh_run() {
        let mut s = SessionState::new(0, cfg(2));
        assert_eq!(feed(&mut s, &[('L', 0.9), ('L', 0.9), ('L', 0.9), ('L', 0.9)]), ["L", "L"]);
        assert_eq!(s.text(), "LL");
    }

    #[test]
    fn idle_gap_adds_a_single_space() {
        let mut s = SessionState::new(0, cfg(1));
        update_session(&mut s, &ev('H', 0.9, 0));
        update_session(&mut s, &ev('I', 0.9, 100));
        assert!(!idle_gap(&mut s, 1000));
        assert_eq!(s.text(), "HI");
        assert!(idle_gap(&mut s, 1600));
        assert_eq!(s.text(), "HI ");
        assert!(!idle_gap(&mut s, 5000));
        assert_eq!(s.text(), "HI ");
    }

    #[test]
    fn no_space_on_empty_text() {
        let mut s = SessionState::new(0, cfg(1));
        assert!(!idle_gap(&mut s, 10_000));
        update_session(&mut s, &ev('A', 0.9, 0));
        apply_command(&mut s, &SessionCommand::Clear).unwrap();
        assert!(!idle_gap(&mut s, 10_000));
        assert_eq!(s.text(), "");
    }

    #[test]
    fn commands() {
        let mut s = SessionState::new(0, cfg(1));
        feed(&mut s, &[('A', 0.9), ('B', 0.9)]);
        apply_command(&mut s, &SessionCommand::Backspace).unwrap();
        assert_eq!(s.text(), "A");
        let c: SessionCommand = serde_json::from_str(r#"{"cmd":"config","k":4,"tau":0.8,"idle_ms":900}"#).unwrap();
        apply_command(&mut s, &c).unwrap();
        assert_eq!((s.config().k, s.config().tau, s.config().idle_ms), (4, 0.8, 900));
        let bad = SessionCommand::Config {
            k: Some(0),
            tau: None,
            idle_ms: None,
        };
        assert!(apply_command(&mut s, &bad).is_err());
        assert_eq!(s.config().k, 4);
        assert!(serde_json::from_str::<SessionCommand>(r#"{"cmd":"clear"}"#).is_ok());
        assert!(serde_json::from_str::<SessionCommand>(r#"{"cmd":"explode"}"#).is_err());
    }

    #[test]
    fn window_is_bounded() {
        let mut s = SessionState::new(0, SessionConfig::default());
        for i in 0..1000 {
            update_session(&mut s, &ev(if i % 2 == 0 { 'A' } else { 'B' }, 0.9, i));
            assert!(s.window_len() <= 32);
        }
    }
}
