use gridhall_core::orchestrator::{InstanceStatus as S, LifecycleEvent as E, ProviderState as P};

/// The five transitions an instance may take.
pub const ALLOWED: [(S, S); 5] = [
    (S::Pending, S::Running),
    (S::Pending, S::Failed),
    (S::Pending, S::Terminated),
    (S::Running, S::Terminated),
    (S::Running, S::Failed),
];

pub fn events() -> Vec<E> {
    vec![
        E::Reported(P::Pending),
        E::Reported(P::Running),
        E::Reported(P::ShuttingDown),
        E::Reported(P::Terminated),
        E::Reported(P::Failed),
        E::Vanished,
        E::TerminateAcked,
    ]
}

/// Expected status after `event`, written out as a table row per status in
/// the column order of [`events`].
pub fn expected(status: S, event: E) -> S {
    let row: [S; 7] = match status {
        S::Pending => [
            S::Pending,
            S::Running,
            S::Pending,
            S::Terminated,
            S::Failed,
            S::Failed,
            S::Terminated,
        ],
        S::Running => [
            S::Running,
            S::Running,
            S::Running,
            S::Terminated,
            S::Failed,
            S::Failed,
            S::Terminated,
        ],
        S::Terminated => [S::Terminated; 7],
        S::Failed => [S::Failed; 7],
    };
    let col = events().iter().position(|e| *e == event).expect("known event");
    row[col]
}

pub fn is_allowed(from: S, to: S) -> bool {
    from == to || ALLOWED.contains(&(from, to))
}
