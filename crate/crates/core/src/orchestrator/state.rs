//! Instance lifecycle state machine.
//!
//! Declared transitions: pending→running, pending→failed, pending→terminated,
//! running→terminated, running→failed. Terminated and failed absorb. Every
//! other (status, event) pair leaves the status unchanged.

use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum InstanceStatus {
    Pending,
    Running,
    Terminated,
    Failed,
}

impl InstanceStatus {
    pub const ALL: [InstanceStatus; 4] = [
        InstanceStatus::Pending,
        InstanceStatus::Running,
        InstanceStatus::Terminated,
        InstanceStatus::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, InstanceStatus::Terminated | InstanceStatus::Failed)
    }
}

/// Instance state as reported by a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderState {
    Pending,
    Running,
    ShuttingDown,
    Terminated,
    Failed,
}

impl ProviderState {
    pub const ALL: [ProviderState; 5] = [
        ProviderState::Pending,
        ProviderState::Running,
        ProviderState::ShuttingDown,
        ProviderState::Terminated,
        ProviderState::Failed,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LifecycleEvent {
    /// A describe call returned this state.
    Reported(ProviderState),
    /// The provider no longer knows the instance.
    Vanished,
    /// The provider acknowledged a terminate request.
    TerminateAcked,
}

impl LifecycleEvent {
    pub fn all() -> Vec<LifecycleEvent> {
        let mut v: Vec<_> = ProviderState::ALL
            .into_iter()
            .map(LifecycleEvent::Reported)
            .collect();
        v.push(LifecycleEvent::Vanished);
        v.push(LifecycleEvent::TerminateAcked);
        v
    }
}

pub const DECLARED_TRANSITIONS: [(InstanceStatus, InstanceStatus); 5] = [
    (InstanceStatus::Pending, InstanceStatus::Running),
    (InstanceStatus::Pending, InstanceStatus::Failed),
    (InstanceStatus::Pending, InstanceStatus::Terminated),
    (InstanceStatus::Running, InstanceStatus::Terminated),
    (InstanceStatus::Running, InstanceStatus::Failed),
];

pub fn next_status(current: InstanceStatus, event: LifecycleEvent) -> InstanceStatus {
    use InstanceStatus as S;
    use LifecycleEvent as E;
    use ProviderState as P;
    match (current, event) {
        (S::Terminated | S::Failed, _) => current,
        (S::Pending, E::Reported(P::Running)) => S::Running,
        (S::Pending | S::Running, E::Reported(P::Terminated)) => S::Terminated,
        (S::Pending | S::Running, E::Reported(P::Failed) | E::Vanished) => S::Failed,
        (S::Pending | S::Running, E::TerminateAcked) => S::Terminated,
        // pending/shutting-down reports never move an instance backwards
        (S::Pending | S::Running, E::Reported(_)) => current,
    }
}
