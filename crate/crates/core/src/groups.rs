//! User groups and the application tags their owners attach to them.
//!
//! Membership changes are check-and-set inside a single storage transaction,
//! so concurrent joins never lose a member.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::auth::Caller;
use crate::error::{Error, Result};
use crate::ids::{AppId, GroupId, UserId};
use crate::platform::Platform;
use crate::registry::{load_app, Visibility};
use crate::storage::{tables, ReadExt, ReadTx, WriteExt, WriteTx};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ToSchema)]
pub struct AppLink {
    pub application_id: AppId,
    pub tag_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct Group {
    pub group_id: GroupId,
    pub name: String,
    pub owner_id: UserId,
    pub member_ids: BTreeSet<UserId>,
    pub app_links: Vec<AppLink>,
}

pub(crate) type GroupRecord = Group;

fn load_group(tx: &dyn ReadTx, id: GroupId) -> Result<Group> {
    tx.get_json(tables::GROUPS, &id.to_string())?
        .ok_or(Error::GroupNotFound)
}

fn save_group(tx: &mut dyn WriteTx, g: &Group) -> Result<()> {
    tx.put_json(tables::GROUPS, &g.group_id.to_string(), g)
}

/// Tags `user` may select when launching `app`: every tag attached to `app`
/// by a group `user` belongs to.
pub(crate) fn tags_for(tx: &dyn ReadTx, user: UserId, app: AppId) -> Result<Vec<String>> {
    let mut tags: BTreeSet<String> = BTreeSet::new();
    for g in tx.scan_json::<Group>(tables::GROUPS)? {
        if g.member_ids.contains(&user) {
            tags.extend(
                g.app_links
                    .into_iter()
                    .filter(|l| l.application_id == app)
                    .map(|l| l.tag_id),
            );
        }
    }
    Ok(tags.into_iter().collect())
}

pub(crate) fn check_tag(tx: &dyn ReadTx, user: UserId, app: AppId, tag: Option<&str>) -> Result<()> {
    match tag {
        None => Ok(()),
        Some(t) if tags_for(tx, user, app)?.iter().any(|have| have == t) => Ok(()),
        Some(_) => Err(Error::InvalidTag),
    }
}

impl Platform {
    pub fn create_group(&self, caller: &Caller, name: &str) -> Result<Group> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::ValidationFailed("group name must not be empty".into()));
        }
        let group = Group {
            group_id: GroupId::new(),
            name: name.to_string(),
            owner_id: caller.user_id,
            member_ids: [caller.user_id].into_iter().collect(),
            app_links: Vec::new(),
        };
        self.storage.transact(|tx| {
            if tx.exists(tables::GROUP_NAMES, name)? {
                return Err(Error::DuplicateGroupName);
            }
            tx.put_json(tables::GROUP_NAMES, name, &group.group_id)?;
            save_group(tx, &group)
        })?;
        Ok(group)
    }

    pub fn list_groups(&self) -> Result<Vec<Group>> {
        let mut groups = self.storage.read(|tx| tx.scan_json::<Group>(tables::GROUPS))?;
        groups.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(groups)
    }

    pub fn get_group(&self, id: GroupId) -> Result<Group> {
        self.storage.read(|tx| load_group(tx, id))
    }

    pub fn join_group(&self, caller: &Caller, id: GroupId) -> Result<Group> {
        self.storage.transact(|tx| {
            let mut g = load_group(tx, id)?;
            if !g.member_ids.insert(caller.user_id) {
                return Err(Error::AlreadyMember);
            }
            save_group(tx, &g)?;
            Ok(g)
        })
    }

    pub fn leave_group(&self, caller: &Caller, id: GroupId) -> Result<()> {
        self.storage.transact(|tx| {
            let mut g = load_group(tx, id)?;
            if g.owner_id == caller.user_id {
                return Err(Error::OwnerCannotLeave);
            }
            if !g.member_ids.remove(&caller.user_id) {
                return Err(Error::NotMember);
            }
            save_group(tx, &g)
        })
    }

    /// Owner only. The group's links go with it.
    pub fn delete_group(&self, caller: &Caller, id: GroupId) -> Result<()> {
        self.storage.transact(|tx| {
            let g = load_group(tx, id)?;
            if g.owner_id != caller.user_id {
                return Err(Error::NotOwner);
            }
            tx.delete(tables::GROUP_NAMES, &g.name)?;
            tx.delete(tables::GROUPS, &id.to_string())?;
            Ok(())
        })
    }

    pub fn attach_application_to_group(
        &self,
        caller: &Caller,
        id: GroupId,
        app: AppId,
        tag_id: &str,
    ) -> Result<Group> {
        let tag_id = tag_id.trim();
        if tag_id.is_empty() {
            return Err(Error::ValidationFailed("tag id must not be empty".into()));
        }
        self.storage.transact(|tx| {
            let mut g = load_group(tx, id)?;
            if g.owner_id != caller.user_id {
                return Err(Error::NotOwner);
            }
            match load_app(tx, app)? {
                Some(a) if a.visibility == Visibility::Public => {}
                _ => return Err(Error::AppNotFound),
            }
            let link = AppLink {
                application_id: app,
                tag_id: tag_id.to_string(),
            };
            if g.app_links.contains(&link) {
                return Err(Error::DuplicateLink);
            }
            g.app_links.push(link);
            save_group(tx, &g)?;
            Ok(g)
        })
    }

    /// Tags the caller may select when launching `app`.
    pub fn launch_tags(&self, caller: &Caller, app: AppId) -> Result<Vec<String>> {
        self.storage.read(|tx| tags_for(tx, caller.user_id, app))
    }
}
