/// Logical table names.
pub mod tables {
    pub const USERS: &str = "users";
    pub const USERS_BY_NAME: &str = "users_by_name";
    pub const USERS_BY_EMAIL: &str = "users_by_email";
    pub const SESSIONS: &str = "sessions";
    pub const RESET_TICKETS: &str = "reset_tickets";
    pub const GROUPS: &str = "groups";
    pub const GROUP_NAMES: &str = "group_names";
    pub const APPLICATIONS: &str = "applications";
    pub const IMAGES: &str = "images";
    pub const CREDENTIALS: &str = "credentials";
    pub const INSTANCES: &str = "instances";
    pub const DESCRIPTORS: &str = "descriptors";
    pub const EVENTS: &str = "events";
    pub const PARTICIPATION: &str = "participation";
    pub const META: &str = "meta";
    pub const API_TOKENS: &str = "api_tokens";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    CreateTable(&'static str),
    DropTable(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Migration {
    pub version: u32,
    pub name: &'static str,
    pub steps: Vec<Step>,
}

impl Migration {
    pub fn new(version: u32, name: &'static str, steps: Vec<Step>) -> Self {
        Self { version, name, steps }
    }
}

pub fn builtin_migrations() -> Vec<Migration> {
    use tables::*;
    use Step::CreateTable as create;
    vec![
        Migration::new(
            1,
            "identity",
            vec![
                create(USERS),
                create(USERS_BY_NAME),
                create(USERS_BY_EMAIL),
                create(SESSIONS),
                create(RESET_TICKETS),
            ],
        ),
        Migration::new(2, "groups", vec![create(GROUPS), create(GROUP_NAMES)]),
        Migration::new(3, "registry", vec![create(APPLICATIONS), create(IMAGES)]),
        Migration::new(4, "vault", vec![create(CREDENTIALS)]),
        Migration::new(5, "instances", vec![create(INSTANCES)]),
        Migration::new(6, "launch_descriptors", vec![create(DESCRIPTORS)]),
        Migration::new(
            7,
            "analytics",
            vec![create(EVENTS), create(PARTICIPATION), create(META)],
        ),
        Migration::new(8, "api_tokens", vec![create(API_TOKENS)]),
    ]
}
