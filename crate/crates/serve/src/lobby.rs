//! Lobby: queues players by token and forms groups of four.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GROUP_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupPolicy {
    /// Groups are filled in arrival order with whoever is waiting.
    Fill,
    /// Only these groups may form; each waits for all its members.
    Fixed { groups: Vec<Vec<String>> },
}

impl Default for GroupPolicy {
    fn default() -> Self {
        GroupPolicy::Fill
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LobbyError {
    #[error("token is already waiting in the lobby")]
    DuplicateToken,
    #[error("token is not assigned to any fixed group")]
    UnknownToken,
    #[error("empty token")]
    EmptyToken,
    #[error("fixed group {0} does not have exactly {GROUP_SIZE} distinct members")]
    BadFixedGroup(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Placement {
    Waiting { queued: usize, needed: usize },
    /// A new group; `members[i]` plays agent `i`.
    GroupFormed { group: u64, members: Vec<String> },
    /// The token already belongs to a running group.
    Reattached { group: u64, agent: usize },
}

#[derive(Debug, Default)]
pub struct Lobby {
    policy: GroupPolicy,
    queue: Vec<String>,
    seated: HashMap<String, (u64, usize)>,
    next_group: u64,
    /// Fixed groups that have already played.
    used: HashSet<usize>,
}

impl Lobby {
    pub fn new(policy: GroupPolicy) -> Result<Self, LobbyError> {
        if let GroupPolicy::Fixed { groups } = &policy {
            let mut seen = HashSet::new();
            for (i, g) in groups.iter().enumerate() {
                let distinct: HashSet<_> = g.iter().collect();
                if g.len() != GROUP_SIZE || distinct.len() != GROUP_SIZE || g.iter().any(|t| !seen.insert(t.clone())) {
                    return Err(LobbyError::BadFixedGroup(i));
                }
            }
        }
        Ok(Self {
            policy,
            ..Self::default()
        })
    }

    pub fn waiting(&self) -> &[String] {
        &self.queue
    }

    pub fn join(&mut self, token: &str) -> Result<Placement, LobbyError> {
        if token.is_empty() {
            return Err(LobbyError::EmptyToken);
        }
        if let Some(&(group, agent)) = self.seated.get(token) {
            return Ok(Placement::Reattached { group, agent });
        }
        if self.queue.iter().any(|t| t == token) {
            return Err(LobbyError::DuplicateToken);
        }
        let members = match &self.policy {
            GroupPolicy::Fill => {
                self.queue.push(token.to_string());
                if self.queue.len() < GROUP_SIZE {
                    return Ok(self.waiting_placement(GROUP_SIZE - self.queue.len()));
                }
                self.queue.drain(..GROUP_SIZE).collect::<Vec<_>>()
            }
            GroupPolicy::Fixed { groups } => {
                let idx = groups
                    .iter()
                    .position(|g| g.iter().any(|t| t == token))
                    .filter(|i| !self.used.contains(i))
                    .ok_or(LobbyError::UnknownToken)?;
                self.queue.push(token.to_string());
                let group = &groups[idx];
                let present = group.iter().filter(|t| self.queue.contains(t)).count();
                if present < GROUP_SIZE {
                    return Ok(self.waiting_placement(GROUP_SIZE - present));
                }
                let members = group.clone();
                self.queue.retain(|t| !members.contains(t));
                self.used.insert(idx);
                members
            }
        };
        let group = self.next_group;
        self.next_group += 1;
        for (agent, t) in members.iter().enumerate() {
            self.seated.insert(t.clone(), (group, agent));
        }
        Ok(Placement::GroupFormed { group, members })
    }

    fn waiting_placement(&self, needed: usize) -> Placement {
        Placement::Waiting {
            queued: self.queue.len(),
            needed,
        }
    }

    /// A waiting player disconnected. Seated players keep their seat.
    pub fn leave(&mut self, token: &str) {
        self.queue.retain(|t| t != token);
    }

    /// The group has finished; its tokens may not rejoin it.
    pub fn release_group(&mut self, group: u64) {
        self.seated.retain(|_, (g, _)| *g != group);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn fourth_player_forms_a_group() {
        let mut lobby = Lobby::new(GroupPolicy::Fill).unwrap();
        let t = tokens(5);
        assert_eq!(lobby.join(&t[0]).unwrap(), Placement::Waiting { queued: 1, needed: 3 });
        lobby.join(&t[1]).unwrap();
        assert_eq!(lobby.join(&t[2]).unwrap(), Placement::Waiting { queued: 3, needed: 1 });
        assert_eq!(
            lobby.join(&t[3]).unwrap(),
            Placement::GroupFormed {
                group: 0,
                members: t[..4].to_vec()
            }
        );
        assert!(lobby.waiting().is_empty());
        assert_eq!(lobby.join(&t[4]).unwrap(), Placement::Waiting { queued: 1, needed: 3 });
    }

    #[test]
    fn duplicate_and_reattach() {
        let mut lobby = Lobby::new(GroupPolicy::Fill).unwrap();
        lobby.join("a").unwrap();
        assert_eq!(lobby.join("a"), Err(LobbyError::DuplicateToken));
        assert_eq!(lobby.join(""), Err(LobbyError::EmptyToken));
        for t in ["b", "c", "d"] {
            lobby.join(t).unwrap();
        }
        assert_eq!(lobby.join("c").unwrap(), Placement::Reattached { group: 0, agent: 2 });
        lobby.release_group(0);
        assert_eq!(lobby.join("c").unwrap(), Placement::Waiting { queued: 1, needed: 3 });
    }

    #[test]
    fn leaving_frees_the_slot() {
        let mut lobby = Lobby::new(GroupPolicy::Fill).unwrap();
        lobby.join("a").unwrap();
        lobby.leave("a");
        assert!(lobby.waiting().is_empty());
        assert!(matches!(lobby.join("a").unwrap(), Placement::Waiting { queued: 1, .. }));
    }

    #[test]
    fn fixed_groups_wait_for_their_own_members() {
        let g0 = tokens(4);
        let g1: Vec<String> = (4..8).map(|i| format!("p{i}")).collect();
        let mut lobby = Lobby::new(GroupPolicy::Fixed {
            groups: vec![g0.clone(), g1.clone()],
        })
        .unwrap();
        assert_eq!(lobby.join("stranger"), Err(LobbyError::UnknownToken));
        for t in &g1[..3] {
            lobby.join(t).unwrap();
        }
        for t in &g0[..3] {
            assert!(matches!(lobby.join(t).unwrap(), Placement::Waiting { .. }));
        }
        assert_eq!(
            lobby.join(&g0[3]).unwrap(),
            Placement::GroupFormed {
                group: 0,
                members: g0.clone()
            }
        );
        assert_eq!(lobby.waiting(), &g1[..3]);
        lobby.release_group(0);
        assert_eq!(lobby.join(&g0[0]), Err(LobbyError::UnknownToken));
    }

    #[test]
    fn malformed_fixed_groups_are_rejected() {
        let bad = GroupPolicy::Fixed {
            groups: vec![vec!["a".into(), "b".into(), "c".into()]],
        };
        assert_eq!(Lobby::new(bad).err(), Some(LobbyError::BadFixedGroup(0)));
        let overlap = GroupPolicy::Fixed {
            groups: vec![tokens(4), vec!["p0".into(), "x".into(), "y".into(), "z".into()]],
        };
        assert_eq!(Lobby::new(overlap).err(), Some(LobbyError::BadFixedGroup(1)));
    }
}
