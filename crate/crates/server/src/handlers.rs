//! Route handlers. Each one translates a request into a single platform call.

use std::collections::BTreeSet;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{on, MethodFilter, MethodRouter};
use axum::Json;
use futures::TryStreamExt;
use gridhall_core::analytics::{
    EventRecord, NewEvent, ParticipationView, PlatformStats, UsageReport, Window,
};
use gridhall_core::auth::{ApiToken, Scope};
use gridhall_core::groups::Group;
use gridhall_core::identity::{Role, Session, UserAccount};
use gridhall_core::ids::{AppId, CredentialId, DescriptorId, EventId, GroupId, ImageId, TokenId};
use gridhall_core::launcher::{LaunchDescriptor, RunOutcome, DESCRIPTOR_MIME};
use gridhall_core::orchestrator::{Instance, LaunchOutcome, LaunchRequest, ProviderDescriptor};
use gridhall_core::platform::Dashboard;
use gridhall_core::registry::{
    Application, ApplicationDetail, ImageKind, MachineImage, NewApplication, SearchPage, SearchQuery,
};
use gridhall_core::vault::{CredentialMeta, SecretFields};
use gridhall_core::Error;
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::error::{ApiError, ApiJson, ApiPath, ApiQuery, ApiResult};
use crate::routes::{Route, API_PREFIX, ROUTES};
use crate::{download, openapi, AppState, Auth, MaybeAuth, MetricsSnapshot};

type S = State<AppState>;

// ---- bodies ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct RegisterBody {
    pub username: String,
    pub email: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct LoginBody {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct ResetRequestBody {
    pub email: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct ResetConfirmBody {
    pub ticket: String,
    pub new_password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct RoleBody {
    pub role: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct CloudImageBody {
    pub kind: ImageKind,
    pub provider_ref: String,
    pub external_image_id: String,
    #[serde(default)]
    pub recommended_instance_type: Option<String>,
}

#[derive(Clone, Serialize, Deserialize, ToSchema)]
pub struct CredentialBody {
    pub provider_ref: String,
    #[serde(default)]
    pub label: String,
    #[serde(flatten)]
    pub secret: SecretFields,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct GroupBody {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct AttachBody {
    pub application_id: AppId,
    pub tag_id: String,
}

/// A single event or a batch.
#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
#[serde(untagged)]
pub enum EventsBody {
    Batch(Vec<NewEvent>),
    One(NewEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct EventsAccepted {
    pub event_ids: Vec<EventId>,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct ReportBody {
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct LocalLaunchBody {
    pub application_id: AppId,
    #[serde(default)]
    pub tag_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct TokenBody {
    pub scopes: Vec<Scope>,
    /// Lifetime in seconds; defaults to the platform maximum.
    #[serde(default)]
    pub ttl_secs: Option<i64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, ToSchema)]
pub struct InstancesQuery {
    #[serde(default)]
    pub application_id: Option<AppId>,
    #[serde(default)]
    pub live_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct UsageQuery {
    /// `<rfc3339>/<rfc3339>`, half-open.
    pub window: String,
}

// ---- responses ------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct ServiceInfo {
    pub name: String,
    pub version: String,
    pub api_prefix: String,
    pub openapi: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct RouteInfo {
    pub id: String,
    pub method: String,
    pub path: String,
    pub api_path: String,
    pub family: String,
    #[serde(default)]
    pub scope: Option<Scope>,
    pub summary: String,
}

impl From<&Route> for RouteInfo {
    fn from(r: &Route) -> Self {
        Self {
            id: r.id.into(),
            method: r.method.as_str().into(),
            path: r.path.into(),
            api_path: r.api_path(),
            family: serde_json::to_value(r.family)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            scope: r.scope(),
            summary: r.summary.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct ContactInfo {
    pub email: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct Health {
    pub status: String,
    pub storage_backend: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, ToSchema)]
pub struct Me {
    pub account: UserAccount,
    pub active_role: Role,
    pub scopes: BTreeSet<Scope>,
}

fn created<T: Serialize>(v: T) -> Response {
    (StatusCode::CREATED, Json(v)).into_response()
}

fn descriptor_response(status: StatusCode, d: &LaunchDescriptor) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, DESCRIPTOR_MIME)],
        d.to_canonical_json(),
    )
        .into_response()
}

// ---- standard -------------------------------------------------------------

async fn home() -> Json<ServiceInfo> {
    Json(ServiceInfo {
        name: "gridhall".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        api_prefix: API_PREFIX.into(),
        openapi: format!("{API_PREFIX}/openapi.json"),
    })
}

async fn docs() -> Json<Vec<RouteInfo>> {
    Json(ROUTES.iter().map(RouteInfo::from).collect())
}

async fn contact() -> Json<ContactInfo> {
    Json(ContactInfo {
        email: "support@gridhall.invalid".into(),
        url: "/docs".into(),
    })
}

async fn health(State(s): S) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        storage_backend: s.platform.storage.backend_name().into(),
    })
}

async fn metrics(State(s): S) -> Json<MetricsSnapshot> {
    Json(s.metrics.snapshot())
}

async fn openapi_doc() -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        openapi::document_json(),
    )
        .into_response()
}

async fn register(State(s): S, ApiJson(b): ApiJson<RegisterBody>) -> ApiResult<Response> {
    Ok(created(s.platform.register(
        &b.username,
        &b.email,
        &b.password,
    )?))
}

async fn login(State(s): S, ApiJson(b): ApiJson<LoginBody>) -> ApiResult<Json<Session>> {
    Ok(Json(s.platform.login(&b.username, &b.password)?))
}

async fn request_password_reset(State(s): S, ApiJson(b): ApiJson<ResetRequestBody>) -> ApiResult<StatusCode> {
    s.platform.request_password_reset(&b.email)?;
    Ok(StatusCode::ACCEPTED)
}

async fn reset_password(State(s): S, ApiJson(b): ApiJson<ResetConfirmBody>) -> ApiResult<StatusCode> {
    s.platform.reset_password(&b.ticket, &b.new_password)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn search_apps(State(s): S, ApiQuery(q): ApiQuery<SearchQuery>) -> ApiResult<Json<SearchPage>> {
    Ok(Json(s.platform.search_applications(&q)?))
}

async fn app_detail(
    State(s): S,
    MaybeAuth(c): MaybeAuth,
    ApiPath(id): ApiPath<AppId>,
) -> ApiResult<Json<ApplicationDetail>> {
    Ok(Json(s.platform.get_application_detail(c.as_ref(), id)?))
}

async fn list_providers(State(s): S) -> Json<Vec<ProviderDescriptor>> {
    Json(s.platform.providers.list())
}

async fn platform_stats(State(s): S) -> ApiResult<Json<PlatformStats>> {
    Ok(Json(s.platform.platform_stats()?))
}

async fn ingest_events(
    State(s): S,
    MaybeAuth(c): MaybeAuth,
    ApiJson(b): ApiJson<EventsBody>,
) -> ApiResult<Response> {
    let batch = match b {
        EventsBody::Batch(v) => v,
        EventsBody::One(e) => vec![e],
    };
    let event_ids = s.platform.ingest_events(c.as_ref(), batch)?;
    Ok(created(EventsAccepted { event_ids }))
}

async fn get_descriptor(State(s): S, ApiPath(id): ApiPath<DescriptorId>) -> ApiResult<Response> {
    let d = s.platform.get_descriptor(id)?;
    Ok(descriptor_response(StatusCode::OK, &d))
}

async fn report_run(
    State(s): S,
    ApiPath(id): ApiPath<DescriptorId>,
    ApiJson(b): ApiJson<ReportBody>,
) -> ApiResult<StatusCode> {
    s.platform.report_run(id, b.outcome)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- secure ---------------------------------------------------------------

fn session_token(headers: &HeaderMap) -> ApiResult<&str> {
    crate::bearer(headers).ok_or_else(ApiError::unauthenticated)
}

/// Session-only operations reject API tokens.
fn require_session(c: &gridhall_core::auth::Caller) -> ApiResult<()> {
    match c.via {
        gridhall_core::auth::AuthVia::Session { .. } => Ok(()),
        gridhall_core::auth::AuthVia::ApiToken { .. } => Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "session_required",
            "this operation requires a login session",
        )),
    }
}

async fn logout(State(s): S, Auth(c): Auth, headers: HeaderMap) -> ApiResult<StatusCode> {
    require_session(&c)?;
    s.platform.logout(session_token(&headers)?)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn switch_role(
    State(s): S,
    Auth(c): Auth,
    headers: HeaderMap,
    ApiJson(b): ApiJson<RoleBody>,
) -> ApiResult<Json<Session>> {
    require_session(&c)?;
    Ok(Json(s.platform.switch_role(session_token(&headers)?, &b.role)?))
}

async fn me(State(s): S, Auth(c): Auth) -> ApiResult<Json<Me>> {
    Ok(Json(Me {
        account: s.platform.account(c.user_id)?,
        active_role: c.active_role,
        scopes: c.scopes.clone(),
    }))
}

async fn my_apps(State(s): S, Auth(c): Auth) -> ApiResult<Json<Vec<Application>>> {
    Ok(Json(s.platform.list_my_apps(&c)?))
}

async fn create_app(State(s): S, Auth(c): Auth, ApiJson(b): ApiJson<NewApplication>) -> ApiResult<Response> {
    Ok(created(s.platform.create_application(&c, b)?))
}

async fn delete_app(State(s): S, Auth(c): Auth, ApiPath(id): ApiPath<AppId>) -> ApiResult<StatusCode> {
    s.platform.delete_application(&c, id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn register_cloud_image(
    State(s): S,
    Auth(c): Auth,
    ApiPath(id): ApiPath<AppId>,
    ApiJson(b): ApiJson<CloudImageBody>,
) -> ApiResult<Response> {
    let image = s.platform.register_cloud_image(
        &c,
        id,
        b.kind,
        &b.provider_ref,
        &b.external_image_id,
        b.recommended_instance_type,
    )?;
    Ok(created(image))
}

async fn upload_local_image(
    State(s): S,
    Auth(c): Auth,
    ApiPath(id): ApiPath<AppId>,
    body: Body,
) -> ApiResult<Response> {
    let stream = body.into_data_stream().map_err(std::io::Error::other);
    let image: MachineImage = s.platform.upload_local_image(&c, id, stream).await?;
    Ok(created(image))
}

async fn remove_image(
    State(s): S,
    Auth(c): Auth,
    ApiPath((app, image)): ApiPath<(AppId, ImageId)>,
) -> ApiResult<StatusCode> {
    let detail = s.platform.get_application_detail(Some(&c), app)?;
    if !detail.images.iter().any(|i| i.image_id == image) {
        return Err(Error::ImageNotFound.into());
    }
    s.platform.remove_image(&c, image)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn launch_tags(
    State(s): S,
    Auth(c): Auth,
    ApiPath(id): ApiPath<AppId>,
) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(s.platform.launch_tags(&c, id)?))
}

async fn list_credentials(State(s): S, Auth(c): Auth) -> ApiResult<Json<Vec<CredentialMeta>>> {
    Ok(Json(s.platform.list_credentials(&c, None)?))
}

async fn add_credential(
    State(s): S,
    Auth(c): Auth,
    ApiJson(b): ApiJson<CredentialBody>,
) -> ApiResult<Response> {
    Ok(created(s.platform.add_credential(
        &c,
        &b.provider_ref,
        &b.label,
        &b.secret,
    )?))
}

async fn delete_credential(
    State(s): S,
    Auth(c): Auth,
    ApiPath(id): ApiPath<CredentialId>,
) -> ApiResult<StatusCode> {
    s.platform.delete_credential(&c, id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_groups(State(s): S) -> ApiResult<Json<Vec<Group>>> {
    Ok(Json(s.platform.list_groups()?))
}

async fn create_group(State(s): S, Auth(c): Auth, ApiJson(b): ApiJson<GroupBody>) -> ApiResult<Response> {
    Ok(created(s.platform.create_group(&c, &b.name)?))
}

async fn get_group(State(s): S, ApiPath(id): ApiPath<GroupId>) -> ApiResult<Json<Group>> {
    Ok(Json(s.platform.get_group(id)?))
}

async fn delete_group(State(s): S, Auth(c): Auth, ApiPath(id): ApiPath<GroupId>) -> ApiResult<StatusCode> {
    s.platform.delete_group(&c, id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn join_group(State(s): S, Auth(c): Auth, ApiPath(id): ApiPath<GroupId>) -> ApiResult<Json<Group>> {
    Ok(Json(s.platform.join_group(&c, id)?))
}

async fn leave_group(State(s): S, Auth(c): Auth, ApiPath(id): ApiPath<GroupId>) -> ApiResult<StatusCode> {
    s.platform.leave_group(&c, id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn attach_app(
    State(s): S,
    Auth(c): Auth,
    ApiPath(id): ApiPath<GroupId>,
    ApiJson(b): ApiJson<AttachBody>,
) -> ApiResult<Json<Group>> {
    s.platform
        .attach_application_to_group(&c, id, b.application_id, &b.tag_id)?;
    Ok(Json(s.platform.get_group(id)?))
}

async fn dashboard(State(s): S, Auth(c): Auth) -> ApiResult<Json<Dashboard>> {
    Ok(Json(s.platform.dashboard(&c)?))
}

async fn participation(State(s): S, Auth(c): Auth) -> ApiResult<Json<Vec<ParticipationView>>> {
    Ok(Json(s.platform.user_participation(&c)?))
}

async fn my_events(State(s): S, Auth(c): Auth) -> ApiResult<Json<Vec<EventRecord>>> {
    Ok(Json(s.platform.user_events(&c)?))
}

async fn usage_report(State(s): S, ApiQuery(q): ApiQuery<UsageQuery>) -> ApiResult<Json<UsageReport>> {
    let window: Window = q.window.parse()?;
    Ok(Json(s.platform.usage_report(window)?))
}

// ---- launch ---------------------------------------------------------------

async fn launch_cloud(State(s): S, Auth(c): Auth, ApiJson(b): ApiJson<LaunchRequest>) -> ApiResult<Response> {
    let outcome: LaunchOutcome = s.platform.launch(&c, &b).await?;
    Ok(created(outcome))
}

async fn launch_local(
    State(s): S,
    Auth(c): Auth,
    ApiJson(b): ApiJson<LocalLaunchBody>,
) -> ApiResult<Response> {
    let d = s
        .platform
        .issue_descriptor(&c, b.application_id, b.tag_id.as_deref())?;
    Ok(descriptor_response(StatusCode::CREATED, &d))
}

async fn list_instances(
    State(s): S,
    Auth(c): Auth,
    ApiQuery(q): ApiQuery<InstancesQuery>,
) -> ApiResult<Json<Vec<Instance>>> {
    Ok(Json(s.platform.list_instances(
        &c,
        q.application_id,
        q.live_only,
    )?))
}

async fn instance_status(
    State(s): S,
    Auth(c): Auth,
    ApiPath((p, id)): ApiPath<(String, String)>,
) -> ApiResult<Json<Instance>> {
    Ok(Json(s.platform.instance_status(&c, &p, &id).await?))
}

async fn terminate(
    State(s): S,
    Auth(c): Auth,
    ApiPath((p, id)): ApiPath<(String, String)>,
) -> ApiResult<Json<Instance>> {
    Ok(Json(s.platform.terminate(&c, &p, &id).await?))
}

// ---- programmatic ---------------------------------------------------------

async fn issue_token(State(s): S, Auth(c): Auth, ApiJson(b): ApiJson<TokenBody>) -> ApiResult<Response> {
    let ttl = b
        .ttl_secs
        .map(chrono::Duration::seconds)
        .unwrap_or(s.platform.config.max_token_ttl);
    let token: ApiToken = s.platform.issue_token(&c, b.scopes.into_iter().collect(), ttl)?;
    Ok(created(token))
}

async fn revoke_token(State(s): S, Auth(c): Auth, ApiPath(id): ApiPath<TokenId>) -> ApiResult<StatusCode> {
    s.platform.revoke_token(&c, id)?;
    Ok(StatusCode::NO_CONTENT)
}

/// The handler for a route id, restricted to the given method.
pub fn endpoint(id: &str, m: MethodFilter) -> MethodRouter<AppState> {
    match id {
        "home" => on(m, home),
        "docs" => on(m, docs),
        "contact" => on(m, contact),
        "health" => on(m, health),
        "metrics" => on(m, metrics),
        "openapi" => on(m, openapi_doc),
        "register" => on(m, register),
        "login" => on(m, login),
        "request_password_reset" => on(m, request_password_reset),
        "reset_password" => on(m, reset_password),
        "search_apps" => on(m, search_apps),
        "app_detail" => on(m, app_detail),
        "download_image" => on(m, download::download_image),
        "list_providers" => on(m, list_providers),
        "platform_stats" => on(m, platform_stats),
        "ingest_events" => on(m, ingest_events),
        "get_descriptor" => on(m, get_descriptor),
        "report_run" => on(m, report_run),
        "logout" => on(m, logout),
        "switch_role" => on(m, switch_role),
        "me" => on(m, me),
        "my_apps" => on(m, my_apps),
        "create_app" => on(m, create_app),
        "delete_app" => on(m, delete_app),
        "register_cloud_image" => on(m, register_cloud_image),
        "upload_local_image" => on(m, upload_local_image),
        "remove_image" => on(m, remove_image),
        "launch_tags" => on(m, launch_tags),
        "list_credentials" => on(m, list_credentials),
        "add_credential" => on(m, add_credential),
        "delete_credential" => on(m, delete_credential),
        "list_groups" => on(m, list_groups),
        "create_group" => on(m, create_group),
        "get_group" => on(m, get_group),
        "delete_group" => on(m, delete_group),
        "join_group" => on(m, join_group),
        "leave_group" => on(m, leave_group),
        "attach_app" => on(m, attach_app),
        "dashboard" => on(m, dashboard),
        "participation" => on(m, participation),
        "my_events" => on(m, my_events),
        "usage_report" => on(m, usage_report),
        "launch_cloud" => on(m, launch_cloud),
        "launch_local" => on(m, launch_local),
        "list_instances" => on(m, list_instances),
        "instance_status" => on(m, instance_status),
        "terminate" => on(m, terminate),
        "issue_token" => on(m, issue_token),
        "revoke_token" => on(m, revoke_token),
        other => panic!("route `{other}` has no handler"),
    }
}
