//! End-to-end flows over HTTP against a live service and simulated provider.

use std::collections::BTreeSet;
use std::time::Instant;

use chrono::{SubsecRound, TimeZone, Utc};
use gridhall_agent::{Agent, Cache, Runner, Source};
use gridhall_core::launcher::DescriptorKey;
use gridhall_core::orchestrator::wire::{signed_params, WireCredentials};
use gridhall_core::platform::testing::BackendKind;
use gridhall_server::routes::{Family, ROUTES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::common::flow::{env_with_sim, full_flow, id};
use crate::common::{normalized_dump, Env, Mount};

async fn cloud_image(env: &Env, token: &str, app: &str, kind: &str, ami: &str) -> String {
    let img = env
        .post(
            &format!("/apps/{app}/images/cloud"),
            Some(token),
            json!({"kind": kind, "provider_ref": "sim-cloud", "external_image_id": ami}),
        )
        .await
        .expect(201);
    id(&img, "image_id")
}

async fn credential(env: &Env, token: &str, ak: &str, sk: &str) -> String {
    let c = env
        .post(
            "/credentials",
            Some(token),
            json!({"provider_ref": "sim-cloud", "label": "lab", "access_key_id": ak, "secret_key": sk}),
        )
        .await
        .expect(201);
    id(&c, "credential_id")
}

pub async fn provider_flow(backend: BackendKind) {
    let started = Instant::now();
    let (env, sim) = env_with_sim(backend, Mount::Api).await;
    let p = env.provider("prov").await;
    let app = env.create_app(&p, "VAS").await;
    let image = cloud_image(&env, &p, &app, "server", "ami-0001").await;
    let cred = credential(&env, &p, "AK-prov", "SK-prov").await;

    let launched = env
        .post(
            "/launch/cloud",
            Some(&p),
            json!({"application_id": app, "image_id": image, "credential_id": cred,
                   "instance_type": "m1.large", "role": "server"}),
        )
        .await
        .expect(201);
    assert!(
        launched["reservation_id"].as_str().unwrap().starts_with("r-"),
        "{launched}"
    );
    let instance = id(&launched["instance"], "instance_id");
    let path = format!("/instances/sim-cloud/{instance}");

    let mut cycles = 0;
    loop {
        let s = env.get(&path, Some(&p)).await.expect(200);
        if s["status"] == "running" {
            assert!(s["public_address"].is_string(), "running without an address: {s}");
            break;
        }
        assert!(cycles < 2, "not running after {cycles} poll cycles: {s}");
        env.platform.background_poll_cycle().await.unwrap();
        cycles += 1;
    }

    let done = env
        .post(&format!("{path}/terminate"), Some(&p), json!({}))
        .await
        .expect(200);
    assert_eq!(done["status"], "terminated");
    assert_eq!(env.get(&path, Some(&p)).await.expect(200)["status"], "terminated");
    assert!(sim.live().is_empty());
    assert!(
        started.elapsed().as_secs() < 30,
        "flow took {:?}",
        started.elapsed()
    );
}

pub async fn volunteer_flow(backend: BackendKind) {
    let (env, sim) = env_with_sim(backend, Mount::Api).await;
    let p = env.provider("prov").await;
    let app = env.create_app(&p, "VAS").await;
    cloud_image(&env, &p, &app, "server", "ami-0001").await;
    let client_image = cloud_image(&env, &p, &app, "client", "ami-0002").await;

    let v = env.login("vol").await;
    let found = env.get("/apps?text=vas", Some(&v)).await.expect(200);
    assert_eq!(found["total"], 1);
    assert_eq!(found["items"][0]["application_id"], app.as_str());
    let detail = env.get(&format!("/apps/{app}"), Some(&v)).await.expect(200);
    let kinds: Vec<&str> = detail["images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["client"], "volunteers see only client images");

    let cred = credential(&env, &v, "AK-vol", "SK-vol").await;
    let launched = env
        .post(
            "/launch/cloud",
            Some(&v),
            json!({"application_id": app, "image_id": client_image, "credential_id": cred,
                   "instance_type": "m1.small", "role": "client"}),
        )
        .await
        .expect(201);
    let instance = id(&launched["instance"], "instance_id");
    env.platform.background_poll_cycle().await.unwrap();

    let dash = env.get("/dashboard", Some(&v)).await.expect(200);
    let shown: BTreeSet<(String, String, String)> = dash["instances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| {
            (
                i["instance_id"].as_str().unwrap().to_string(),
                i["status"].as_str().unwrap().to_string(),
                i["public_address"].as_str().unwrap_or_default().to_string(),
            )
        })
        .collect();
    let live: BTreeSet<(String, String, String)> = sim
        .live()
        .into_iter()
        .map(|i| {
            (
                i.instance_id,
                "running".to_string(),
                i.public_address.unwrap_or_default(),
            )
        })
        .collect();
    assert_eq!(shown, live, "dashboard equals the provider's live set");
    assert!(shown
        .iter()
        .all(|(i, _, addr)| *i == instance && !addr.is_empty()));

    env.post(
        &format!("/instances/sim-cloud/{instance}/terminate"),
        Some(&v),
        json!({}),
    )
    .await
    .expect(200);
    assert!(sim.live().is_empty());
    assert!(env.platform.live_instances().unwrap().is_empty());
}

fn downloads(metrics: &Value) -> u64 {
    metrics["downloads"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum()
}

pub async fn local_launch_cache_once(backend: BackendKind) {
    let env = Env::offline(backend).await;
    // Descriptors carry expiry times that the agent checks against its own clock.
    env.clock.set(Utc::now().trunc_subsecs(0));
    let p = env.provider("prov").await;
    let app = env.create_app(&p, "Folding").await;
    env.upload(&p, &app, (0..300_000u32).map(|i| (i % 251) as u8).collect())
        .await;
    let v = env.login("vol").await;

    let cache_dir = tempfile::tempdir().unwrap();
    let cache = Cache::open(cache_dir.path()).unwrap();
    let key = DescriptorKey::from_hex(&env.platform.descriptor_key().to_hex()).unwrap();
    let agent = Agent::new(cache.clone(), key, Runner::noop(cache.runs_dir()));

    let mut first_run = None;
    for n in 1..=2u64 {
        let d = env
            .post("/launch/local", Some(&v), json!({"application_id": app}))
            .await
            .expect(201);
        let url = env.url(&format!("/descriptors/{}", id(&d, "descriptor_id")));
        let outcome = agent.launch(&Source::parse(&url)).await.unwrap();
        assert_eq!(outcome.downloaded, n == 1);
        assert!(outcome.reported);
        let rows = env.get("/my/participation", Some(&v)).await.expect(200);
        assert_eq!(rows[0]["run_count"], n);
        let first = rows[0]["first_run_at"].clone();
        assert!(first.is_string());
        assert_eq!(
            first_run.get_or_insert(first.clone()),
            &first,
            "first_run_at never moves"
        );
    }
    assert_eq!(downloads(&env.metrics().await), 1, "image served exactly once");
}

pub async fn api_parity(backend: BackendKind) {
    let (browser, _s1) = env_with_sim(backend, Mount::Browser).await;
    let (api, _s2) = env_with_sim(backend, Mount::Api).await;
    full_flow(&browser).await;
    full_flow(&api).await;

    let hit: BTreeSet<String> = browser.metrics().await["requests"]
        .as_object()
        .unwrap()
        .keys()
        .cloned()
        .collect();
    for r in ROUTES
        .iter()
        .filter(|r| matches!(r.family, Family::Secure | Family::Launch))
    {
        assert!(hit.contains(r.id), "browser flow misses {}", r.id);
    }
    let a = normalized_dump(&browser.platform);
    let b = normalized_dump(&api.platform);
    assert!(a.len() > 20);
    assert_eq!(
        a, b,
        "storage after the browser flow equals storage after the api flow"
    );
}

pub async fn wire_conformance(backend: BackendKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5167);
    let text = |rng: &mut ChaCha8Rng, max: usize| -> String {
        let alphabet: Vec<char> = "abcXYZ019 -_.~/+=&%?é東\u{1F600}".chars().collect();
        (0..rng.gen_range(0..max))
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect()
    };
    for _ in 0..500 {
        let secret = format!("s{}", text(&mut rng, 30));
        let creds = WireCredentials {
            access_key_id: "AK".into(),
            secret_key: secret.clone(),
        };
        let params: Vec<(String, String)> = (0..rng.gen_range(0..8))
            .map(|i| (format!("P{i}.{}", rng.gen_range(1..12)), text(&mut rng, 20)))
            .collect();
        let path = if rng.gen_bool(0.5) { "/" } else { "/ec2/v1" };
        let at = Utc.timestamp_opt(rng.gen_range(0..4_000_000_000), 0).unwrap();
        let form = signed_params(path, &creds, "DescribeInstances", params, at);
        let sig = &form.iter().find(|(k, _)| k == "Signature").unwrap().1;
        assert_eq!(
            sig,
            &gridhall_acceptance::wire::signature(&secret, path, &form),
            "independent signer disagrees"
        );
    }

    // A live provider rejects a corrupted signature, whether sent raw or by
    // the client holding the wrong secret.
    let (env, sim) = env_with_sim(backend, Mount::Api).await;
    let creds = WireCredentials {
        access_key_id: "AK-prov".into(),
        secret_key: "SK-prov".into(),
    };
    let mut form = signed_params("/", &creds, "DescribeInstances", vec![], Utc::now());
    let http = reqwest::Client::new();
    let post = |form: Vec<(String, String)>| {
        http.post(sim.url())
            .header("accept", "application/xml")
            .form(&form)
            .send()
    };
    assert_eq!(post(form.clone()).await.unwrap().status(), 200);
    let sig = &mut form.iter_mut().find(|(k, _)| k == "Signature").unwrap().1;
    let flipped = if sig.starts_with('0') { '1' } else { '0' };
    sig.replace_range(0..1, &flipped.to_string());
    let resp = post(form).await.unwrap();
    assert_eq!(resp.status(), 403);
    assert!(resp
        .text()
        .await
        .unwrap()
        .contains("<Code>SignatureDoesNotMatch</Code>"));

    let p = env.provider("prov").await;
    let app = env.create_app(&p, "VAS").await;
    let image = cloud_image(&env, &p, &app, "server", "ami-0001").await;
    let cred = credential(&env, &p, "AK-prov", "not-the-secret").await;
    let refused = env
        .post(
            "/launch/cloud",
            Some(&p),
            json!({"application_id": app, "image_id": image, "credential_id": cred,
                   "instance_type": "m1.large", "role": "server"}),
        )
        .await;
    assert_eq!(refused.body["code"], "provider_rejected", "{}", refused.body);
    assert!(
        refused.body.to_string().contains("SignatureDoesNotMatch"),
        "{}",
        refused.body
    );
    assert!(sim.sim().instances().is_empty());
}

/// The same flow leaves the same logical state on both backends.
pub async fn backend_parity() {
    let mut dumps = Vec::new();
    for backend in BackendKind::ALL {
        let (env, _sim) = env_with_sim(backend, Mount::Api).await;
        full_flow(&env).await;
        dumps.push(normalized_dump(&env.platform));
    }
    assert_eq!(dumps[0], dumps[1]);
}
