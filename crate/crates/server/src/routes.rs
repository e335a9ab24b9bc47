//! The static route table. The router, the scope checks and the OpenAPI
//! document are all generated from it.
//!
//! Every route is mounted twice: at its browser path and under [`API_PREFIX`]
//! for programmatic clients, with the same handler. Routes of the `api`
//! family exist only under the prefix.

use gridhall_core::auth::Scope;
use serde::Serialize;

pub const API_PREFIX: &str = "/api/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// No login required.
    Standard,
    /// Logged-in views.
    Secure,
    /// Cloud and local launches.
    Launch,
    /// Programmatic-only.
    Api,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Delete,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
            HttpMethod::Put => "PUT",
            HttpMethod::Delete => "DELETE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Access {
    /// Anyone; a bearer, if sent, must still be valid.
    Public,
    /// Any authenticated caller holding the scope.
    Scoped(Scope),
}

/// Payload description for the OpenAPI document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    None,
    Json(&'static str),
    JsonList(&'static str),
    Binary,
    Html,
}

#[derive(Debug, Clone, Copy)]
pub struct Route {
    pub id: &'static str,
    pub method: HttpMethod,
    pub path: &'static str,
    pub family: Family,
    pub access: Access,
    pub summary: &'static str,
    pub request: Payload,
    pub status: u16,
    pub response: Payload,
    /// Browsers asking for HTML get the portal shell instead of JSON.
    pub page: bool,
}

impl Route {
    pub fn api_path(&self) -> String {
        format!("{API_PREFIX}{}", if self.path == "/" { "" } else { self.path })
    }

    pub fn browser_path(&self) -> Option<&'static str> {
        (self.family != Family::Api).then_some(self.path)
    }

    pub fn scope(&self) -> Option<Scope> {
        match self.access {
            Access::Public => None,
            Access::Scoped(s) => Some(s),
        }
    }
}

use Access::{Public, Scoped};
use Family::{Api, Launch, Secure, Standard};
use HttpMethod::{Delete, Get, Post, Put};
use Payload::{Binary, Json, JsonList};
use Scope::{Launch as LaunchScope, Read, Write};

const fn r(
    id: &'static str,
    method: HttpMethod,
    path: &'static str,
    family: Family,
    access: Access,
    summary: &'static str,
    request: Payload,
    status: u16,
    response: Payload,
) -> Route {
    Route {
        id,
        method,
        path,
        family,
        access,
        summary,
        request,
        status,
        response,
        page: false,
    }
}

const fn page(mut route: Route) -> Route {
    route.page = true;
    route
}

pub static ROUTES: &[Route] = &[
    // standard
    page(r(
        "home",
        Get,
        "/",
        Standard,
        Public,
        "Service overview",
        Payload::None,
        200,
        Json("ServiceInfo"),
    )),
    page(r(
        "docs",
        Get,
        "/docs",
        Standard,
        Public,
        "Route listing",
        Payload::None,
        200,
        JsonList("RouteInfo"),
    )),
    page(r(
        "contact",
        Get,
        "/contact",
        Standard,
        Public,
        "Contact information",
        Payload::None,
        200,
        Json("ContactInfo"),
    )),
    r(
        "health",
        Get,
        "/healthz",
        Standard,
        Public,
        "Liveness probe",
        Payload::None,
        200,
        Json("Health"),
    ),
    r(
        "metrics",
        Get,
        "/metrics",
        Standard,
        Public,
        "Request counters",
        Payload::None,
        200,
        Json("MetricsSnapshot"),
    ),
    r(
        "openapi",
        Get,
        "/openapi.json",
        Standard,
        Public,
        "This document",
        Payload::None,
        200,
        Json("OpenApiDocument"),
    ),
    r(
        "register",
        Post,
        "/auth/register",
        Standard,
        Public,
        "Create an account",
        Json("RegisterBody"),
        201,
        Json("UserAccount"),
    ),
    r(
        "login",
        Post,
        "/auth/login",
        Standard,
        Public,
        "Start a session",
        Json("LoginBody"),
        200,
        Json("Session"),
    ),
    r(
        "request_password_reset",
        Post,
        "/auth/password-reset",
        Standard,
        Public,
        "Send a reset ticket",
        Json("ResetRequestBody"),
        202,
        Payload::None,
    ),
    r(
        "reset_password",
        Post,
        "/auth/password-reset/confirm",
        Standard,
        Public,
        "Redeem a reset ticket",
        Json("ResetConfirmBody"),
        204,
        Payload::None,
    ),
    page(r(
        "search_apps",
        Get,
        "/apps",
        Standard,
        Public,
        "Search the public directory",
        Payload::None,
        200,
        Json("SearchPage"),
    )),
    page(r(
        "app_detail",
        Get,
        "/apps/{id}",
        Standard,
        Public,
        "Application detail",
        Payload::None,
        200,
        Json("ApplicationDetail"),
    )),
    r(
        "download_image",
        Get,
        "/images/{digest}",
        Standard,
        Public,
        "Download a client image (supports Range)",
        Payload::None,
        200,
        Binary,
    ),
    r(
        "list_providers",
        Get,
        "/providers",
        Standard,
        Public,
        "Configured compute providers",
        Payload::None,
        200,
        JsonList("ProviderDescriptor"),
    ),
    page(r(
        "platform_stats",
        Get,
        "/stats",
        Standard,
        Public,
        "Platform statistics",
        Payload::None,
        200,
        Json("PlatformStats"),
    )),
    r(
        "ingest_events",
        Post,
        "/events",
        Standard,
        Public,
        "Record usage events",
        Json("EventsBody"),
        201,
        Json("EventsAccepted"),
    ),
    r(
        "get_descriptor",
        Get,
        "/descriptors/{id}",
        Standard,
        Public,
        "Fetch a launch descriptor by id",
        Payload::None,
        200,
        Json("LaunchDescriptor"),
    ),
    r(
        "report_run",
        Post,
        "/descriptors/{id}/report",
        Standard,
        Public,
        "Report a local run",
        Json("ReportBody"),
        204,
        Payload::None,
    ),
    // secure
    r(
        "logout",
        Post,
        "/auth/logout",
        Secure,
        Scoped(Read),
        "End the session",
        Payload::None,
        204,
        Payload::None,
    ),
    r(
        "switch_role",
        Post,
        "/session/role",
        Secure,
        Scoped(Read),
        "Change the active role",
        Json("RoleBody"),
        200,
        Json("Session"),
    ),
    page(r(
        "me",
        Get,
        "/me",
        Secure,
        Scoped(Read),
        "Current account",
        Payload::None,
        200,
        Json("Me"),
    )),
    page(r(
        "my_apps",
        Get,
        "/my/apps",
        Secure,
        Scoped(Read),
        "Applications I own",
        Payload::None,
        200,
        JsonList("Application"),
    )),
    r(
        "create_app",
        Post,
        "/apps",
        Secure,
        Scoped(Write),
        "Create an application",
        Json("NewApplication"),
        201,
        Json("Application"),
    ),
    r(
        "delete_app",
        Delete,
        "/apps/{id}",
        Secure,
        Scoped(Write),
        "Delete an application",
        Payload::None,
        204,
        Payload::None,
    ),
    r(
        "register_cloud_image",
        Post,
        "/apps/{id}/images/cloud",
        Secure,
        Scoped(Write),
        "Register a cloud image",
        Json("CloudImageBody"),
        201,
        Json("MachineImage"),
    ),
    r(
        "upload_local_image",
        Put,
        "/apps/{id}/images/local",
        Secure,
        Scoped(Write),
        "Upload a local client image",
        Binary,
        201,
        Json("MachineImage"),
    ),
    r(
        "remove_image",
        Delete,
        "/apps/{id}/images/{image_id}",
        Secure,
        Scoped(Write),
        "Remove an image",
        Payload::None,
        204,
        Payload::None,
    ),
    r(
        "launch_tags",
        Get,
        "/apps/{id}/tags",
        Secure,
        Scoped(Read),
        "Tags I may launch with",
        Payload::None,
        200,
        JsonList("String"),
    ),
    page(r(
        "list_credentials",
        Get,
        "/credentials",
        Secure,
        Scoped(Read),
        "My cloud credentials",
        Payload::None,
        200,
        JsonList("CredentialMeta"),
    )),
    r(
        "add_credential",
        Post,
        "/credentials",
        Secure,
        Scoped(Write),
        "Store a cloud credential",
        Json("CredentialBody"),
        201,
        Json("CredentialMeta"),
    ),
    r(
        "delete_credential",
        Delete,
        "/credentials/{id}",
        Secure,
        Scoped(Write),
        "Delete a cloud credential",
        Payload::None,
        204,
        Payload::None,
    ),
    page(r(
        "list_groups",
        Get,
        "/groups",
        Secure,
        Scoped(Read),
        "All groups",
        Payload::None,
        200,
        JsonList("Group"),
    )),
    r(
        "create_group",
        Post,
        "/groups",
        Secure,
        Scoped(Write),
        "Create a group",
        Json("GroupBody"),
        201,
        Json("Group"),
    ),
    r(
        "get_group",
        Get,
        "/groups/{id}",
        Secure,
        Scoped(Read),
        "One group",
        Payload::None,
        200,
        Json("Group"),
    ),
    r(
        "delete_group",
        Delete,
        "/groups/{id}",
        Secure,
        Scoped(Write),
        "Delete a group",
        Payload::None,
        204,
        Payload::None,
    ),
    r(
        "join_group",
        Post,
        "/groups/{id}/join",
        Secure,
        Scoped(Write),
        "Join a group",
        Payload::None,
        200,
        Json("Group"),
    ),
    r(
        "leave_group",
        Post,
        "/groups/{id}/leave",
        Secure,
        Scoped(Write),
        "Leave a group",
        Payload::None,
        204,
        Payload::None,
    ),
    r(
        "attach_app",
        Post,
        "/groups/{id}/apps",
        Secure,
        Scoped(Write),
        "Link an application and tag to a group",
        Json("AttachBody"),
        200,
        Json("Group"),
    ),
    page(r(
        "dashboard",
        Get,
        "/dashboard",
        Secure,
        Scoped(Read),
        "Role-filtered dashboard",
        Payload::None,
        200,
        Json("Dashboard"),
    )),
    page(r(
        "participation",
        Get,
        "/my/participation",
        Secure,
        Scoped(Read),
        "My participation history",
        Payload::None,
        200,
        JsonList("ParticipationView"),
    )),
    r(
        "my_events",
        Get,
        "/my/events",
        Secure,
        Scoped(Read),
        "My recorded events",
        Payload::None,
        200,
        JsonList("EventRecord"),
    ),
    r(
        "usage_report",
        Get,
        "/stats/usage",
        Secure,
        Scoped(Read),
        "Usage report for a window",
        Payload::None,
        200,
        Json("UsageReport"),
    ),
    // launch
    r(
        "launch_cloud",
        Post,
        "/launch/cloud",
        Launch,
        Scoped(LaunchScope),
        "Launch on a cloud provider",
        Json("LaunchRequest"),
        201,
        Json("LaunchOutcome"),
    ),
    r(
        "launch_local",
        Post,
        "/launch/local",
        Launch,
        Scoped(LaunchScope),
        "Issue a local launch descriptor",
        Json("LocalLaunchBody"),
        201,
        Json("LaunchDescriptor"),
    ),
    page(r(
        "list_instances",
        Get,
        "/instances",
        Launch,
        Scoped(Read),
        "My instances",
        Payload::None,
        200,
        JsonList("Instance"),
    )),
    r(
        "instance_status",
        Get,
        "/instances/{provider}/{id}",
        Launch,
        Scoped(Read),
        "Refresh one instance",
        Payload::None,
        200,
        Json("Instance"),
    ),
    r(
        "terminate",
        Post,
        "/instances/{provider}/{id}/terminate",
        Launch,
        Scoped(LaunchScope),
        "Stop an instance",
        Payload::None,
        200,
        Json("Instance"),
    ),
    // programmatic only
    r(
        "issue_token",
        Post,
        "/tokens",
        Api,
        Scoped(Write),
        "Issue an API token",
        Json("TokenBody"),
        201,
        Json("ApiToken"),
    ),
    r(
        "revoke_token",
        Delete,
        "/tokens/{id}",
        Api,
        Scoped(Write),
        "Revoke an API token",
        Payload::None,
        204,
        Payload::None,
    ),
];

pub fn find(id: &str) -> Option<&'static Route> {
    ROUTES.iter().find(|r| r.id == id)
}
