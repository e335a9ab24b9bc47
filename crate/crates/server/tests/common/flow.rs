//! One pass over every secure and launch operation, shared by the parity
//! and acceptance suites.

use gridhall_core::platform::testing::{provider, BackendKind};
use reqwest::Method;
use serde_json::{json, Value};
use simcloud::{SimConfig, SimHandle};

use super::{Env, Mount};

pub async fn sim() -> SimHandle {
    let s = simcloud::spawn(SimConfig::default()).await.unwrap();
    s.add_key("AK-prov", "SK-prov");
    s.add_key("AK-vol", "SK-vol");
    s
}

pub async fn env_with_sim(backend: BackendKind, mount: Mount) -> (Env, SimHandle) {
    let s = sim().await;
    let mut env = Env::start(backend, vec![provider("sim-cloud", &s.url())]).await;
    env.mount = mount;
    (env, s)
}

pub fn id(v: &Value, field: &str) -> String {
    v[field]
        .as_str()
        .unwrap_or_else(|| panic!("no {field} in {v}"))
        .to_string()
}

/// Exercises every secure and launch operation once, through `env.mount`.
pub async fn full_flow(env: &Env) {
    let p = env.provider("prov").await;
    env.get("/me", Some(&p)).await.expect(200);
    let app = env.create_app(&p, "VAS").await;
    let doomed = env.create_app(&p, "Doomed").await;
    env.delete(&format!("/apps/{doomed}"), Some(&p)).await.expect(204);
    env.get("/my/apps", Some(&p)).await.expect(200);

    let server_image = env
        .post(
            &format!("/apps/{app}/images/cloud"),
            Some(&p),
            json!({"kind": "server", "provider_ref": "sim-cloud", "external_image_id": "ami-0001",
                   "recommended_instance_type": "m1.large"}),
        )
        .await
        .expect(201);
    let client_image = env
        .post(
            &format!("/apps/{app}/images/cloud"),
            Some(&p),
            json!({"kind": "client", "provider_ref": "sim-cloud", "external_image_id": "ami-0002"}),
        )
        .await
        .expect(201);
    let spare = env
        .post(
            &format!("/apps/{app}/images/cloud"),
            Some(&p),
            json!({"kind": "client", "provider_ref": "sim-cloud", "external_image_id": "ami-0003"}),
        )
        .await
        .expect(201);
    env.delete(
        &format!("/apps/{app}/images/{}", id(&spare, "image_id")),
        Some(&p),
    )
    .await
    .expect(204);
    env.upload(&p, &app, b"client image bytes".to_vec()).await;

    let cred = env
        .post(
            "/credentials",
            Some(&p),
            json!({"provider_ref": "sim-cloud", "label": "lab", "access_key_id": "AK-prov", "secret_key": "SK-prov"}),
        )
        .await
        .expect(201);
    let old = env
        .post(
            "/credentials",
            Some(&p),
            json!({"provider_ref": "sim-cloud", "label": "old", "access": "AK-x", "secret": "SK-x"}),
        )
        .await
        .expect(201);
    env.delete(&format!("/credentials/{}", id(&old, "credential_id")), Some(&p))
        .await
        .expect(204);
    env.get("/credentials", Some(&p)).await.expect(200);

    let group = env
        .post("/groups", Some(&p), json!({"name": "Team Red"}))
        .await
        .expect(201);
    let gid = id(&group, "group_id");
    env.post(
        &format!("/groups/{gid}/apps"),
        Some(&p),
        json!({"application_id": app, "tag_id": "red"}),
    )
    .await
    .expect(200);
    let scratch = env
        .post("/groups", Some(&p), json!({"name": "Scratch"}))
        .await
        .expect(201);
    env.delete(&format!("/groups/{}", id(&scratch, "group_id")), Some(&p))
        .await
        .expect(204);
    env.get(&format!("/groups/{gid}"), Some(&p)).await.expect(200);
    env.get("/groups", Some(&p)).await.expect(200);

    let launched = env
        .post(
            "/launch/cloud",
            Some(&p),
            json!({"application_id": app, "image_id": server_image["image_id"], "credential_id": cred["credential_id"],
                   "instance_type": "m1.large", "role": "server"}),
        )
        .await
        .expect(201);
    assert!(launched["reservation_id"].as_str().unwrap().starts_with("r-"));
    let server_id = id(&launched["instance"], "instance_id");
    env.platform.background_poll_cycle().await.unwrap();
    let status = env
        .get(&format!("/instances/sim-cloud/{server_id}"), Some(&p))
        .await
        .expect(200);
    assert_eq!(status["status"], "running");
    env.get("/instances?live_only=true", Some(&p)).await.expect(200);
    env.get("/dashboard", Some(&p)).await.expect(200);

    let v = env.login("vol").await;
    env.post(&format!("/groups/{gid}/join"), Some(&v), json!({}))
        .await
        .expect(200);
    let tags = env.get(&format!("/apps/{app}/tags"), Some(&v)).await.expect(200);
    assert_eq!(tags, json!(["red"]));
    let vcred = env
        .post(
            "/credentials",
            Some(&v),
            json!({"provider_ref": "sim-cloud", "label": "home", "access_key_id": "AK-vol", "secret_key": "SK-vol"}),
        )
        .await
        .expect(201);
    let client = env
        .post(
            "/launch/cloud",
            Some(&v),
            json!({"application_id": app, "image_id": client_image["image_id"], "credential_id": vcred["credential_id"],
                   "instance_type": "m1.small", "role": "client", "tag_id": "red"}),
        )
        .await
        .expect(201);
    let client_id = id(&client["instance"], "instance_id");
    env.platform.background_poll_cycle().await.unwrap();
    let dash = env.get("/dashboard", Some(&v)).await.expect(200);
    assert_eq!(dash["instances"][0]["instance_id"], client_id.as_str());
    env.get("/my/participation", Some(&v)).await.expect(200);

    let descriptor = env
        .post(
            "/launch/local",
            Some(&v),
            json!({"application_id": app, "tag_id": "red"}),
        )
        .await
        .expect(201);
    env.post(
        &format!("/descriptors/{}/report", id(&descriptor, "descriptor_id")),
        None,
        json!({"outcome": "started"}),
    )
    .await
    .expect(204);

    env.post(
        &format!("/instances/sim-cloud/{client_id}/terminate"),
        Some(&v),
        json!({}),
    )
    .await
    .expect(200);
    env.post(
        &format!("/instances/sim-cloud/{server_id}/terminate"),
        Some(&p),
        json!({}),
    )
    .await
    .expect(200);
    env.platform.background_poll_cycle().await.unwrap();

    env.get("/my/events", Some(&v)).await.expect(200);
    env.get(
        "/stats/usage?window=2026-03-01T00:00:00Z/2026-03-02T00:00:00Z",
        Some(&v),
    )
    .await
    .expect(200);
    env.post(&format!("/groups/{gid}/leave"), Some(&v), json!({}))
        .await
        .expect(204);
    env.send(Method::POST, "/auth/logout", Some(&v), None)
        .await
        .expect(204);
}
