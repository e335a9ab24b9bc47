//! Application directory: registration, discovery and machine images.

use bytes::Bytes;
use chrono::{DateTime, Utc};
use futures::Stream;
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::auth::Caller;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::groups::GroupRecord;
use crate::identity::{username_of, Role};
use crate::ids::{AppId, ImageId, UserId};
use crate::orchestrator::{Instance, InstanceSummary};
use crate::platform::Platform;
use crate::storage::{tables, ReadExt, ReadTx, WriteExt};

pub const MAX_PAGE_SIZE: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct Application {
    pub application_id: AppId,
    pub name: String,
    pub description: String,
    pub keywords: Vec<String>,
    pub branch: String,
    pub category: String,
    pub subcategory: String,
    pub owner_id: UserId,
    pub visibility: Visibility,
    /// Where running clients send their results; handed to the launcher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_server_url: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct NewApplication {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub branch: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub subcategory: String,
    #[serde(default)]
    pub visibility: Option<Visibility>,
    #[serde(default)]
    pub project_server_url: Option<String>,
}

/// One directory row: the row id plus the seven listing columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct DirectoryEntry {
    pub application_id: AppId,
    pub name: String,
    pub description: String,
    pub keywords: Vec<String>,
    pub branch: String,
    pub category: String,
    pub subcategory: String,
    pub owner: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum SortColumn {
    #[default]
    Name,
    Description,
    Keywords,
    Branch,
    Category,
    Subcategory,
    Owner,
}

impl SortColumn {
    pub const ALL: [SortColumn; 7] = [
        SortColumn::Name,
        SortColumn::Description,
        SortColumn::Keywords,
        SortColumn::Branch,
        SortColumn::Category,
        SortColumn::Subcategory,
        SortColumn::Owner,
    ];

    fn key(self, e: &DirectoryEntry) -> String {
        match self {
            SortColumn::Name => e.name.to_lowercase(),
            SortColumn::Description => e.description.to_lowercase(),
            SortColumn::Keywords => e.keywords.join(",").to_lowercase(),
            SortColumn::Branch => e.branch.to_lowercase(),
            SortColumn::Category => e.category.to_lowercase(),
            SortColumn::Subcategory => e.subcategory.to_lowercase(),
            SortColumn::Owner => e.owner.to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
#[serde(default)]
pub struct SearchQuery {
    pub text: String,
    pub sort_column: SortColumn,
    pub sort_direction: SortDirection,
    /// 1-based.
    pub page: u32,
    pub page_size: u32,
}

impl Default for SearchQuery {
    fn default() -> Self {
        Self {
            text: String::new(),
            sort_column: SortColumn::Name,
            sort_direction: SortDirection::Asc,
            page: 1,
            page_size: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct SearchPage {
    pub total: usize,
    pub page: u32,
    pub page_size: u32,
    pub items: Vec<DirectoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Client,
    Server,
}

/// Where an image runs. Cloud images are referenced by the platform-assigned
/// id; local images are uploaded blobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum ImageTarget {
    Cloud {
        provider_ref: String,
        external_image_id: String,
    },
    LocalHypervisor {
        blob_digest: String,
        size_bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct MachineImage {
    pub image_id: ImageId,
    pub application_id: AppId,
    pub kind: ImageKind,
    #[serde(flatten)]
    pub target: ImageTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_instance_type: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl MachineImage {
    pub fn blob_digest(&self) -> Option<&str> {
        match &self.target {
            ImageTarget::LocalHypervisor { blob_digest, .. } => Some(blob_digest),
            ImageTarget::Cloud { .. } => None,
        }
    }
}

/// A row of the "launch on the cloud" table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct CloudLaunchRow {
    pub image_id: ImageId,
    pub cloud: String,
    #[serde(rename = "type")]
    pub kind: ImageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_instance_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct ApplicationDetail {
    pub application: Application,
    pub owner: String,
    pub images: Vec<MachineImage>,
    pub cloud_launch: Vec<CloudLaunchRow>,
    /// Tags the viewer may pick when launching this application.
    pub launch_tags: Vec<String>,
    /// The viewer's own live instances of this application.
    pub running_instances: Vec<InstanceSummary>,
}

pub(crate) fn load_app(tx: &dyn ReadTx, id: AppId) -> Result<Option<Application>> {
    tx.get_json(tables::APPLICATIONS, &id.to_string())
}

pub(crate) fn load_image(tx: &dyn ReadTx, id: ImageId) -> Result<Option<MachineImage>> {
    tx.get_json(tables::IMAGES, &id.to_string())
}

pub(crate) fn images_of(tx: &dyn ReadTx, app: AppId) -> Result<Vec<MachineImage>> {
    let mut v: Vec<MachineImage> = tx
        .scan_json::<MachineImage>(tables::IMAGES)?
        .into_iter()
        .filter(|i| i.application_id == app)
        .collect();
    v.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.image_id.cmp(&b.image_id)));
    Ok(v)
}

fn owned_app(tx: &dyn ReadTx, caller: &Caller, id: AppId) -> Result<Application> {
    let app = load_app(tx, id)?.ok_or(Error::AppNotFound)?;
    if app.owner_id != caller.user_id {
        return Err(Error::NotOwner);
    }
    caller.require_role(Role::Provider)?;
    Ok(app)
}

fn entry(tx: &dyn ReadTx, app: &Application) -> Result<DirectoryEntry> {
    Ok(DirectoryEntry {
        application_id: app.application_id,
        name: app.name.clone(),
        description: app.description.clone(),
        keywords: app.keywords.clone(),
        branch: app.branch.clone(),
        category: app.category.clone(),
        subcategory: app.subcategory.clone(),
        owner: username_of(tx, app.owner_id)?,
    })
}

pub(crate) fn public_directory(tx: &dyn ReadTx) -> Result<Vec<DirectoryEntry>> {
    tx.scan_json::<Application>(tables::APPLICATIONS)?
        .iter()
        .filter(|a| a.visibility == Visibility::Public)
        .map(|a| entry(tx, a))
        .collect()
}

fn matches_text(e: &DirectoryEntry, needle: &str) -> bool {
    needle.is_empty()
        || e.name.to_lowercase().contains(needle)
        || e.description.to_lowercase().contains(needle)
        || e.keywords.iter().any(|k| k.to_lowercase().contains(needle))
}

impl SearchQuery {
    pub fn validate(&self) -> Result<()> {
        if self.page_size == 0 || self.page_size > MAX_PAGE_SIZE {
            return Err(Error::ValidationFailed(format!(
                "page_size must be between 1 and {MAX_PAGE_SIZE}"
            )));
        }
        if self.page == 0 {
            return Err(Error::ValidationFailed("page is 1-based".into()));
        }
        Ok(())
    }
}

/// Filters and orders directory rows. Ascending order breaks ties by
/// application id; descending order is the exact reverse of ascending.
pub fn search_directory(entries: &[DirectoryEntry], query: &SearchQuery, exec: Exec) -> Result<SearchPage> {
    query.validate()?;
    let needle = query.text.trim().to_lowercase();
    let hits = exec::filter_cloned(entries, |e| matches_text(e, &needle), exec);
    let mut keyed: Vec<(String, DirectoryEntry)> =
        exec::map_collect(&hits, |e| (query.sort_column.key(e), e.clone()), exec);
    let asc = |a: &(String, DirectoryEntry), b: &(String, DirectoryEntry)| {
        a.0.cmp(&b.0)
            .then_with(|| a.1.application_id.cmp(&b.1.application_id))
    };
    match query.sort_direction {
        SortDirection::Asc => exec::sort_by(&mut keyed, asc, exec),
        SortDirection::Desc => exec::sort_by(&mut keyed, |a, b| asc(b, a), exec),
    }
    let total = keyed.len();
    let start = ((query.page - 1) as usize).saturating_mul(query.page_size as usize);
    let items = keyed
        .into_iter()
        .skip(start)
        .take(query.page_size as usize)
        .map(|(_, e)| e)
        .collect();
    Ok(SearchPage {
        total,
        page: query.page,
        page_size: query.page_size,
        items,
    })
}

impl Platform {
    pub fn create_application(&self, caller: &Caller, new: NewApplication) -> Result<Application> {
        caller.require_role(Role::Provider)?;
        if new.name.trim().is_empty() {
            return Err(Error::ValidationFailed(
                "application name must not be empty".into(),
            ));
        }
        let app = Application {
            application_id: AppId::new(),
            name: new.name.trim().to_string(),
            description: new.description,
            keywords: new
                .keywords
                .into_iter()
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .collect(),
            branch: new.branch,
            category: new.category,
            subcategory: new.subcategory,
            owner_id: caller.user_id,
            visibility: new.visibility.unwrap_or_default(),
            project_server_url: new.project_server_url,
            created_at: self.clock.now(),
        };
        self.storage
            .transact(|tx| tx.put_json(tables::APPLICATIONS, &app.application_id.to_string(), &app))?;
        Ok(app)
    }

    pub fn list_my_apps(&self, caller: &Caller) -> Result<Vec<Application>> {
        caller.require_role(Role::Provider)?;
        let mut apps: Vec<Application> = self.storage.read(|tx| {
            Ok(tx
                .scan_json::<Application>(tables::APPLICATIONS)?
                .into_iter()
                .filter(|a| a.owner_id == caller.user_id)
                .collect())
        })?;
        apps.sort_by(|a, b| a.name.cmp(&b.name).then(a.application_id.cmp(&b.application_id)));
        Ok(apps)
    }

    pub fn search_applications(&self, query: &SearchQuery) -> Result<SearchPage> {
        query.validate()?;
        let entries = self.storage.read(public_directory)?;
        search_directory(&entries, query, self.exec)
    }

    /// Detail view. Private applications are visible to their owner only; non
    /// owners see client images only.
    pub fn get_application_detail(&self, viewer: Option<&Caller>, id: AppId) -> Result<ApplicationDetail> {
        self.storage.read(|tx| {
            let app = load_app(tx, id)?.ok_or(Error::AppNotFound)?;
            let is_owner = viewer.is_some_and(|v| v.user_id == app.owner_id);
            if app.visibility == Visibility::Private && !is_owner {
                return Err(Error::AppNotFound);
            }
            let images: Vec<MachineImage> = images_of(tx, id)?
                .into_iter()
                .filter(|i| is_owner || i.kind == ImageKind::Client)
                .collect();
            let cloud_launch = images
                .iter()
                .filter_map(|i| match &i.target {
                    ImageTarget::Cloud { provider_ref, .. } => Some(CloudLaunchRow {
                        image_id: i.image_id,
                        cloud: provider_ref.clone(),
                        kind: i.kind,
                        recommended_instance_type: i.recommended_instance_type.clone(),
                    }),
                    ImageTarget::LocalHypervisor { .. } => None,
                })
                .collect();
            let (launch_tags, running_instances) = match viewer {
                Some(v) => (
                    crate::groups::tags_for(tx, v.user_id, id)?,
                    tx.scan_json::<Instance>(tables::INSTANCES)?
                        .iter()
                        .filter(|i| {
                            i.owner_id == v.user_id && i.application_id == id && !i.status.is_terminal()
                        })
                        .map(InstanceSummary::from)
                        .collect(),
                ),
                None => (Vec::new(), Vec::new()),
            };
            Ok(ApplicationDetail {
                owner: username_of(tx, app.owner_id)?,
                application: app,
                images,
                cloud_launch,
                launch_tags,
                running_instances,
            })
        })
    }

    pub fn register_cloud_image(
        &self,
        caller: &Caller,
        app_id: AppId,
        kind: ImageKind,
        provider_ref: &str,
        external_image_id: &str,
        recommended_instance_type: Option<String>,
    ) -> Result<MachineImage> {
        if external_image_id.trim().is_empty() {
            return Err(Error::ValidationFailed(
                "external image id must not be empty".into(),
            ));
        }
        let image = MachineImage {
            image_id: ImageId::new(),
            application_id: app_id,
            kind,
            target: ImageTarget::Cloud {
                provider_ref: provider_ref.to_string(),
                external_image_id: external_image_id.trim().to_string(),
            },
            recommended_instance_type,
            created_at: self.clock.now(),
        };
        self.storage.transact(|tx| {
            owned_app(tx, caller, app_id)?;
            self.providers.get(provider_ref)?;
            tx.put_json(tables::IMAGES, &image.image_id.to_string(), &image)
        })?;
        Ok(image)
    }

    /// Streams an uploaded client image into the blob store and registers it.
    pub async fn upload_local_image<S, E>(
        &self,
        caller: &Caller,
        app_id: AppId,
        body: S,
    ) -> Result<MachineImage>
    where
        S: Stream<Item = std::result::Result<Bytes, E>> + Unpin,
        E: std::fmt::Display,
    {
        self.storage.read(|tx| owned_app(tx, caller, app_id))?;
        let blob = self.blobs.put_stream(body, self.config.upload_max_bytes).await?;
        let image = MachineImage {
            image_id: ImageId::new(),
            application_id: app_id,
            kind: ImageKind::Client,
            target: ImageTarget::LocalHypervisor {
                blob_digest: blob.digest.clone(),
                size_bytes: blob.size_bytes,
            },
            recommended_instance_type: None,
            created_at: self.clock.now(),
        };
        let res = self.storage.transact(|tx| {
            owned_app(tx, caller, app_id)?;
            tx.put_json(tables::IMAGES, &image.image_id.to_string(), &image)
        });
        if let Err(e) = res {
            self.collect_blob(&blob.digest)?;
            return Err(e);
        }
        Ok(image)
    }

    pub fn remove_image(&self, caller: &Caller, image_id: ImageId) -> Result<()> {
        let removed = self.storage.transact(|tx| {
            let image = load_image(tx, image_id)?.ok_or(Error::ImageNotFound)?;
            owned_app(tx, caller, image.application_id)?;
            let in_use = tx
                .scan_json::<Instance>(tables::INSTANCES)?
                .iter()
                .any(|i| i.image_id == image_id && !i.status.is_terminal());
            if in_use {
                return Err(Error::ImageInUse);
            }
            tx.delete(tables::IMAGES, &image_id.to_string())?;
            Ok(image)
        })?;
        if let Some(digest) = removed.blob_digest() {
            self.collect_blob(digest)?;
        }
        Ok(())
    }

    /// Deletes an application that no longer has images or instances. Group
    /// links to it are dropped.
    pub fn delete_application(&self, caller: &Caller, app_id: AppId) -> Result<()> {
        self.storage.transact(|tx| {
            owned_app(tx, caller, app_id)?;
            let has_images = !images_of(tx, app_id)?.is_empty();
            let has_instances = tx
                .scan_json::<Instance>(tables::INSTANCES)?
                .iter()
                .any(|i| i.application_id == app_id);
            if has_images || has_instances {
                return Err(Error::HasDependents);
            }
            for mut g in tx.scan_json::<GroupRecord>(tables::GROUPS)? {
                let before = g.app_links.len();
                g.app_links.retain(|l| l.application_id != app_id);
                if g.app_links.len() != before {
                    tx.put_json(tables::GROUPS, &g.group_id.to_string(), &g)?;
                }
            }
            tx.delete(tables::APPLICATIONS, &app_id.to_string())?;
            Ok(())
        })
    }

    /// Removes a blob once no image references it.
    fn collect_blob(&self, digest: &str) -> Result<()> {
        let referenced = self.storage.read(|tx| {
            Ok(tx
                .scan_json::<MachineImage>(tables::IMAGES)?
                .iter()
                .any(|i| i.blob_digest() == Some(digest)))
        })?;
        if !referenced {
            self.blobs.remove(digest)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
