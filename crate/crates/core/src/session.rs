//! Session lifecycle.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use converge_sim::Policy;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Created,
    Scheduled,
    Running,
    Completed,
    Aborted,
}

impl SessionState {
    pub const ALL: [SessionState; 5] = [
        SessionState::Created,
        SessionState::Scheduled,
        SessionState::Running,
        SessionState::Completed,
        SessionState::Aborted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Created => "CREATED",
            SessionState::Scheduled => "SCHEDULED",
            SessionState::Running => "RUNNING",
            SessionState::Completed => "COMPLETED",
            SessionState::Aborted => "ABORTED",
        }
    }

    pub fn can_transition(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Created, Scheduled) | (Created, Aborted) | (Scheduled, Running) | (Running, Completed) | (Running, Aborted)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Completed | SessionState::Aborted)
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SessionState::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown session state `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub owner: String,
    pub scenario_ref: String,
    pub policy: Policy,
    /// Overrides the scenario's seed when set.
    #[serde(default)]
    pub seed: Option<u64>,
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub ended_at: Option<DateTime<Utc>>,
    pub result_dataset_id: Option<String>,
}

impl Session {
    pub fn new(session_id: String, owner: String, scenario_ref: String, policy: Policy, seed: Option<u64>) -> Self {
        Self {
            session_id,
            owner,
            scenario_ref,
            policy,
            seed,
            state: SessionState::Created,
            created_at: Utc::now(),
            started_at: None,
            ended_at: None,
            result_dataset_id: None,
        }
    }

    /// Applies a transition, stamping times so they never run backwards even
    /// if the wall clock does.
    pub fn transition(&self, to: SessionState, now: DateTime<Utc>) -> Result<Session, CoreError> {
        if !self.state.can_transition(to) {
            return Err(CoreError::IllegalTransition { from: self.state, to });
        }
        let mut next = self.clone();
        next.state = to;
        match to {
            SessionState::Running => next.started_at = Some(now.max(self.created_at)),
            SessionState::Completed | SessionState::Aborted => {
                let floor = self.started_at.unwrap_or(self.created_at);
                next.ended_at = Some(now.max(floor));
            }
            SessionState::Created | SessionState::Scheduled => {}
        }
        Ok(next)
    }

    /// Non-terminal sessions count against the owner's quota.
    pub fn is_active(&self) -> bool {
        !self.state.is_terminal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn session() -> Session {
        Session::new("s1".into(), "alice".into(), "flagship".into(), Policy::Reactive, None)
    }

    #[test]
    fn legal_paths() {
        let now = Utc::now();
        let s = session();
        let done = s
            .transition(SessionState::Scheduled, now)
            .and_then(|s| s.transition(SessionState::Running, now))
            .and_then(|s| s.transition(SessionState::Completed, now))
            .unwrap();
        assert_eq!(done.state, SessionState::Completed);
        assert!(done.started_at.unwrap() <= done.ended_at.unwrap());
        assert!(matches!(
            done.transition(SessionState::Running, now),
            Err(CoreError::IllegalTransition { from: SessionState::Completed, to: SessionState::Running })
        ));
        let aborted = s.transition(SessionState::Aborted, now).unwrap();
        assert!(aborted.started_at.is_none());
        assert!(aborted.ended_at.is_some());
    }

    #[test]
    fn clock_going_backwards_keeps_order() {
        let s = session();
        let earlier = s.created_at - Duration::seconds(30);
        let r = s
            .transition(SessionState::Scheduled, earlier)
            .and_then(|s| s.transition(SessionState::Running, earlier))
            .and_then(|s| s.transition(SessionState::Aborted, earlier - Duration::seconds(1)))
            .unwrap();
        assert!(r.created_at <= r.started_at.unwrap());
        assert!(r.started_at.unwrap() <= r.ended_at.unwrap());
    }

    #[test]
    fn state_names_parse() {
        for st in SessionState::ALL {
            assert_eq!(st.as_str().to_lowercase().parse::<SessionState>(), Ok(st));
            let json = serde_json::to_string(&st).unwrap();
            assert_eq!(json, format!("\"{}\"", st.as_str()));
        }
    }
}
