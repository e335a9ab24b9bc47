//! OpenAPI document generated from the route table.

use std::sync::OnceLock;

use gridhall_core::analytics::{EventRecord, ParticipationView, PlatformStats, UsageReport};
use gridhall_core::auth::ApiToken;
use gridhall_core::groups::Group;
use gridhall_core::identity::{Session, UserAccount};
use gridhall_core::launcher::{LaunchDescriptor, DESCRIPTOR_MIME};
use gridhall_core::orchestrator::{Instance, LaunchOutcome, LaunchRequest, ProviderDescriptor};
use gridhall_core::platform::Dashboard;
use gridhall_core::registry::{Application, ApplicationDetail, MachineImage, NewApplication, SearchPage};
use gridhall_core::vault::CredentialMeta;
use utoipa::openapi::path::{HttpMethod, OperationBuilder, ParameterBuilder, ParameterIn};
use utoipa::openapi::request_body::RequestBodyBuilder;
use utoipa::openapi::schema::{ArrayBuilder, KnownFormat, ObjectBuilder, Schema, SchemaFormat, Type};
use utoipa::openapi::security::{Http, HttpAuthScheme, SecurityRequirement, SecurityScheme};
use utoipa::openapi::{
    ComponentsBuilder, ContentBuilder, InfoBuilder, OpenApi, OpenApiBuilder, Paths, Ref, RefOr, Required,
    ResponseBuilder, Responses,
};
use utoipa::ToSchema;

use crate::error::ErrorBody;
use crate::handlers::*;
use crate::routes::{self, Payload, Route, ROUTES};
use crate::MetricsSnapshot;

type Schemas = Vec<(String, RefOr<Schema>)>;

fn add<T: ToSchema>(out: &mut Schemas) {
    out.push((T::name().into_owned(), T::schema()));
    T::schemas(out);
}

fn component_schemas() -> Schemas {
    let mut s = Schemas::new();
    add::<ErrorBody>(&mut s);
    add::<ServiceInfo>(&mut s);
    add::<RouteInfo>(&mut s);
    add::<ContactInfo>(&mut s);
    add::<Health>(&mut s);
    add::<MetricsSnapshot>(&mut s);
    add::<RegisterBody>(&mut s);
    add::<LoginBody>(&mut s);
    add::<ResetRequestBody>(&mut s);
    add::<ResetConfirmBody>(&mut s);
    add::<RoleBody>(&mut s);
    add::<CloudImageBody>(&mut s);
    add::<CredentialBody>(&mut s);
    add::<GroupBody>(&mut s);
    add::<AttachBody>(&mut s);
    add::<EventsBody>(&mut s);
    add::<EventsAccepted>(&mut s);
    add::<ReportBody>(&mut s);
    add::<LocalLaunchBody>(&mut s);
    add::<TokenBody>(&mut s);
    add::<Me>(&mut s);
    add::<UserAccount>(&mut s);
    add::<Session>(&mut s);
    add::<SearchPage>(&mut s);
    add::<ApplicationDetail>(&mut s);
    add::<Application>(&mut s);
    add::<NewApplication>(&mut s);
    add::<MachineImage>(&mut s);
    add::<ProviderDescriptor>(&mut s);
    add::<PlatformStats>(&mut s);
    add::<LaunchDescriptor>(&mut s);
    add::<CredentialMeta>(&mut s);
    add::<Group>(&mut s);
    add::<Dashboard>(&mut s);
    add::<ParticipationView>(&mut s);
    add::<EventRecord>(&mut s);
    add::<UsageReport>(&mut s);
    add::<LaunchRequest>(&mut s);
    add::<LaunchOutcome>(&mut s);
    add::<Instance>(&mut s);
    add::<ApiToken>(&mut s);
    s.push((
        "OpenApiDocument".into(),
        ObjectBuilder::new()
            .description(Some("An OpenAPI 3.1 document"))
            .additional_properties(Some(ObjectBuilder::new()))
            .into(),
    ));
    s
}

fn string_schema() -> RefOr<Schema> {
    ObjectBuilder::new().schema_type(Type::String).into()
}

fn payload_schema(name: &str) -> RefOr<Schema> {
    if name == "String" {
        string_schema()
    } else {
        Ref::from_schema_name(name).into()
    }
}

fn content(p: Payload) -> Option<(&'static str, RefOr<Schema>)> {
    match p {
        Payload::None => None,
        Payload::Json(name) if name == "LaunchDescriptor" => Some((DESCRIPTOR_MIME, payload_schema(name))),
        Payload::Json(name) => Some(("application/json", payload_schema(name))),
        Payload::JsonList(name) => Some((
            "application/json",
            ArrayBuilder::new().items(payload_schema(name)).into(),
        )),
        Payload::Binary => Some((
            "application/octet-stream",
            ObjectBuilder::new()
                .schema_type(Type::String)
                .format(Some(SchemaFormat::KnownFormat(KnownFormat::Binary)))
                .into(),
        )),
        Payload::Html => Some(("text/html", string_schema())),
    }
}

fn query_params(route: &Route) -> &'static [(&'static str, Type, bool)] {
    match route.id {
        "search_apps" => &[
            ("text", Type::String, false),
            ("sort_column", Type::String, false),
            ("sort_direction", Type::String, false),
            ("page", Type::Integer, false),
            ("page_size", Type::Integer, false),
        ],
        "usage_report" => &[("window", Type::String, true)],
        "list_instances" => &[
            ("application_id", Type::String, false),
            ("live_only", Type::Boolean, false),
        ],
        _ => &[],
    }
}

pub fn path_params(path: &str) -> Vec<&str> {
    path.split('/')
        .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
        .collect()
}

fn method(route: &Route) -> HttpMethod {
    match route.method {
        routes::HttpMethod::Get => HttpMethod::Get,
        routes::HttpMethod::Post => HttpMethod::Post,
        routes::HttpMethod::Put => HttpMethod::Put,
        routes::HttpMethod::Delete => HttpMethod::Delete,
    }
}

fn error_response(description: &str) -> RefOr<utoipa::openapi::Response> {
    ResponseBuilder::new()
        .description(description)
        .content(
            "application/json",
            ContentBuilder::new()
                .schema(Some(Ref::from_schema_name("ErrorBody")))
                .build(),
        )
        .into()
}

fn operation(route: &Route) -> utoipa::openapi::path::Operation {
    let family = serde_json::to_value(route.family).expect("family serializes");
    let mut op = OperationBuilder::new()
        .operation_id(Some(route.id))
        .summary(Some(route.summary))
        .tag(family.as_str().unwrap_or_default());
    for name in path_params(route.path) {
        op = op.parameter(
            ParameterBuilder::new()
                .name(name)
                .parameter_in(ParameterIn::Path)
                .required(Required::True)
                .schema(Some(string_schema())),
        );
    }
    for (name, ty, required) in query_params(route) {
        op = op.parameter(
            ParameterBuilder::new()
                .name(*name)
                .parameter_in(ParameterIn::Query)
                .required(if *required {
                    Required::True
                } else {
                    Required::False
                })
                .schema(Some(ObjectBuilder::new().schema_type(ty.clone()))),
        );
    }
    if let Some((mime, schema)) = content(route.request) {
        op = op.request_body(Some(
            RequestBodyBuilder::new()
                .content(mime, ContentBuilder::new().schema(Some(schema)).build())
                .required(Some(Required::True))
                .build(),
        ));
    }
    let mut ok = ResponseBuilder::new().description(route.summary);
    if let Some((mime, schema)) = content(route.response) {
        ok = ok.content(mime, ContentBuilder::new().schema(Some(schema)).build());
    }
    let mut responses = Responses::new();
    responses.responses.insert(route.status.to_string(), ok.into());
    responses
        .responses
        .insert("default".into(), error_response("Error"));
    if route.id == "download_image" {
        responses.responses.insert(
            "206".into(),
            ResponseBuilder::new()
                .description("Partial content")
                .content(
                    "application/octet-stream",
                    ContentBuilder::new()
                        .schema(content(Payload::Binary).map(|c| c.1))
                        .build(),
                )
                .into(),
        );
        responses.responses.insert(
            "304".into(),
            ResponseBuilder::new().description("Not modified").into(),
        );
        responses
            .responses
            .insert("416".into(), error_response("Range not satisfiable"));
    }
    op = op.responses(responses);
    if route.scope().is_some() {
        op = op.security(SecurityRequirement::new(
            "bearer",
            [route.scope().unwrap().to_string()],
        ));
    } else {
        // Public routes accept an optional bearer.
        op = op.securities(Some([
            SecurityRequirement::default(),
            SecurityRequirement::new("bearer", Vec::<String>::new()),
        ]));
    }
    op.build()
}

pub fn document() -> OpenApi {
    let mut paths = Paths::new();
    for route in ROUTES {
        paths.add_path_operation(route.api_path(), vec![method(route)], operation(route));
    }
    let components = ComponentsBuilder::new()
        .schemas_from_iter(component_schemas())
        .security_scheme("bearer", SecurityScheme::Http(Http::new(HttpAuthScheme::Bearer)))
        .build();
    OpenApiBuilder::new()
        .info(
            InfoBuilder::new()
                .title("gridhall")
                .version(env!("CARGO_PKG_VERSION"))
                .description(Some(
                    "Hosting and launch service for citizen-science applications",
                ))
                .build(),
        )
        .paths(paths)
        .components(Some(components))
        .build()
}

/// The serialized document, built once.
pub fn document_json() -> String {
    static DOC: OnceLock<String> = OnceLock::new();
    DOC.get_or_init(|| document().to_pretty_json().expect("document serializes"))
        .clone()
}
