//! Domain checks against brute-force oracles, through the platform API on a
//! real storage backend.

use aho_corasick::AhoCorasick;
use std::collections::BTreeMap;

use bytes::Bytes;
use chrono::{DateTime, Duration, TimeZone, Utc};
use gridhall_acceptance::{analytics as recount, lifecycle, search as brute};
use gridhall_core::analytics::{NewEvent, Window};
use gridhall_core::auth::Caller;
use gridhall_core::ids::{AppId, CredentialId, ImageId, UserId};
use gridhall_core::launcher::RunOutcome;
use gridhall_core::orchestrator::{
    next_status, Instance, InstanceStatus, LaunchRequest, DECLARED_TRANSITIONS,
};
use gridhall_core::platform::testing::{fixture_with, offline_providers, BackendKind, Fixture};
use gridhall_core::registry::{
    DirectoryEntry, ImageKind, NewApplication, SearchQuery, SortColumn, SortDirection, Visibility,
};
use gridhall_core::storage::{tables, ReadExt, WriteExt};
use gridhall_core::vault::{SealedSecret, SecretFields};
use gridhall_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 0, 0, 0).unwrap()
}

fn random_string(rng: &mut ChaCha8Rng, alphabet: &str, len: std::ops::Range<usize>) -> String {
    let chars: Vec<char> = alphabet.chars().collect();
    (0..rng.gen_range(len))
        .map(|_| chars[rng.gen_range(0..chars.len())])
        .collect()
}

const PRINTABLE: &str =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789!#$%&'()*+,-./:;<=>?@[]^_`{|}~ \"\\";

fn stored_sealed(f: &Fixture, id: CredentialId) -> SealedSecret {
    let row: serde_json::Value = f
        .platform
        .storage
        .read(|tx| tx.get_json(tables::CREDENTIALS, &id.to_string()))
        .unwrap()
        .expect("credential row");
    serde_json::from_value(row["sealed_payload"].clone()).expect("sealed payload")
}

pub async fn vault(backend: BackendKind) {
    let f = fixture_with(backend, offline_providers());
    let owner = f.provider("owner");
    let mut rng = ChaCha8Rng::seed_from_u64(0xFA017);
    let mut stored = Vec::new();
    for i in 0..1000 {
        let secret = SecretFields {
            access_key_id: format!(
                "AKIA{}",
                random_string(&mut rng, "ABCDEFGHIJKLMNOPQRSTUVWXYZ234567", 16..17)
            ),
            secret_key: random_string(&mut rng, PRINTABLE, 24..48),
            private_key: rng.gen_bool(0.3).then(|| {
                format!(
                    "-----BEGIN KEY-----{}-----END KEY-----",
                    random_string(&mut rng, PRINTABLE, 32..200)
                )
            }),
        };
        let meta = f
            .platform
            .add_credential(&owner, "sim-cloud", &format!("cred {i}"), &secret)
            .unwrap();
        let plain = f
            .platform
            .keyring()
            .unseal(&stored_sealed(&f, meta.credential_id))
            .unwrap();
        let back: SecretFields = serde_json::from_slice(&plain).unwrap();
        assert!(back == secret, "credential {i} did not round-trip");
        stored.push((meta.credential_id, secret));
    }

    let dumps = [
        f.platform.storage.dump().unwrap(),
        f.platform.storage.physical_dump().unwrap(),
    ]
    .map(|d| String::from_utf8_lossy(&d).into_owned());
    // Each secret field, raw and JSON-escaped, matched in one pass per dump.
    let needles: Vec<String> = stored
        .iter()
        .flat_map(|(_, s)| {
            [
                Some(&s.access_key_id),
                Some(&s.secret_key),
                s.private_key.as_ref(),
            ]
        })
        .flatten()
        .flat_map(|p| {
            [
                p.clone(),
                serde_json::to_string(p).unwrap().trim_matches('"').to_string(),
            ]
        })
        .collect();
    let matcher = AhoCorasick::new(&needles).unwrap();
    for d in &dumps {
        assert!(!matcher.is_match(d), "plaintext secret in a storage dump");
    }

    for (id, _) in stored.iter().take(50) {
        let sealed = stored_sealed(&f, *id);
        let mut t = sealed.clone();
        let byte = rng.gen_range(0..t.ciphertext.len());
        t.ciphertext[byte] ^= 1 << rng.gen_range(0..8);
        assert_eq!(f.platform.keyring().unseal(&t), Err(Error::SealBroken));
        let mut t = sealed.clone();
        t.nonce[rng.gen_range(0..sealed.nonce.len())] ^= 0x80;
        assert_eq!(f.platform.keyring().unseal(&t), Err(Error::SealBroken));
    }

    // A flipped byte written back to storage stops a launch before any
    // provider call.
    let app = f
        .platform
        .create_application(
            &owner,
            NewApplication {
                name: "VAS".into(),
                ..Default::default()
            },
        )
        .unwrap();
    let image = f
        .platform
        .register_cloud_image(
            &owner,
            app.application_id,
            ImageKind::Server,
            "sim-cloud",
            "ami-1",
            None,
        )
        .unwrap();
    let (victim, _) = stored[0].clone();
    let key = victim.to_string();
    f.platform
        .storage
        .transact(|tx| {
            let mut row: serde_json::Value = tx.get_json(tables::CREDENTIALS, &key)?.expect("row");
            let ct = row["sealed_payload"]["ciphertext"].as_str().unwrap().to_string();
            let flipped = if ct.starts_with('0') { "1" } else { "0" };
            row["sealed_payload"]["ciphertext"] = format!("{flipped}{}", &ct[1..]).into();
            tx.put_json(tables::CREDENTIALS, &key, &row)
        })
        .unwrap();
    let err = f
        .platform
        .launch(
            &owner,
            &LaunchRequest {
                application_id: app.application_id,
                image_id: image.image_id,
                credential_id: victim,
                instance_type: "m1.small".into(),
                role: ImageKind::Server,
                tag_id: None,
            },
        )
        .await
        .unwrap_err();
    assert_eq!(err, Error::SealBroken);
}

pub async fn state_machine(backend: BackendKind) {
    let declared: Vec<_> = DECLARED_TRANSITIONS.to_vec();
    let mut allowed = lifecycle::ALLOWED.to_vec();
    allowed.sort_by_key(|(a, b)| (*a as u8, *b as u8));
    let mut declared_sorted = declared.clone();
    declared_sorted.sort_by_key(|(a, b)| (*a as u8, *b as u8));
    assert_eq!(declared_sorted, allowed, "declared transition table");

    let events = lifecycle::events();
    for s in InstanceStatus::ALL {
        for e in &events {
            assert_eq!(next_status(s, *e), lifecycle::expected(s, *e), "({s:?}, {e:?})");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x57A7E);
    for _ in 0..20 {
        let mut s = InstanceStatus::Pending;
        for _ in 0..10_000 {
            let next = next_status(s, *events.choose(&mut rng).unwrap());
            assert!(lifecycle::is_allowed(s, next), "{s:?} -> {next:?}");
            s = next;
        }
    }

    // Every status survives a round trip through the backend.
    let f = fixture_with(backend, offline_providers());
    let mut row = Instance {
        instance_id: "i-1".into(),
        reservation_id: "r-1".into(),
        application_id: AppId::new(),
        image_id: ImageId::new(),
        owner_id: UserId::new(),
        provider_ref: "sim-cloud".into(),
        credential_id: CredentialId::new(),
        role: ImageKind::Client,
        instance_type: "m1.small".into(),
        status: InstanceStatus::Pending,
        public_address: None,
        launched_at: t0(),
        last_polled_at: None,
        tag_id: None,
    };
    for _ in 0..300 {
        let next = next_status(row.status, *events.choose(&mut rng).unwrap());
        assert!(lifecycle::is_allowed(row.status, next));
        row.status = next;
        if row.status.is_terminal() && rng.gen_bool(0.2) {
            row.status = InstanceStatus::Pending;
        }
        f.platform
            .storage
            .transact(|tx| tx.put_json(tables::INSTANCES, &row.key(), &row))
            .unwrap();
        let back: Instance = f
            .platform
            .storage
            .read(|tx| tx.get_json(tables::INSTANCES, &row.key()))
            .unwrap()
            .unwrap();
        assert_eq!(back, row);
    }
}

/// A randomized world built through the platform: accounts, applications,
/// event batches, local runs and instance rows.
struct World {
    f: Fixture,
    users: Vec<Caller>,
    ingested: usize,
    runs: BTreeMap<(UserId, AppId), (u64, u64)>,
}

async fn build_world(backend: BackendKind, seed: u64, apps: usize, events: usize) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = fixture_with(backend, offline_providers());
    let users: Vec<Caller> = (0..12)
        .map(|i| {
            if i < 4 {
                f.provider(&format!("p{i}"))
            } else {
                f.caller(&format!("u{i}"))
            }
        })
        .collect();
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs[rng.gen_range(0..xs.len())].to_string();
    let mut app_ids = Vec::new();
    let mut runnable = Vec::new();
    for i in 0..apps {
        let owner = &users[i % 4];
        let public = rng.gen_bool(0.85);
        let app = f
            .platform
            .create_application(
                owner,
                NewApplication {
                    name: format!("app-{}", rng.gen_range(0..apps * 2)),
                    branch: pick(&mut rng, &["science", "humanities", "arts"]),
                    category: pick(&mut rng, &["physics", "biology", "history", "music"]),
                    subcategory: pick(&mut rng, &["a", "b", "c", "d", "e"]),
                    visibility: Some(if public {
                        Visibility::Public
                    } else {
                        Visibility::Private
                    }),
                    ..Default::default()
                },
            )
            .unwrap();
        if public && runnable.len() < 12 {
            let body = futures::stream::iter([Ok::<_, std::io::Error>(Bytes::from(vec![i as u8; 64]))]);
            f.platform
                .upload_local_image(owner, app.application_id, body)
                .await
                .unwrap();
            runnable.push(app.application_id);
        }
        app_ids.push(app.application_id);
    }

    // Sessions belong to an account or are anonymous; each is one batch.
    let mut ingested = 0;
    let per_session = 60;
    for s in 0..events.div_ceil(per_session) {
        let who = rng.gen_bool(0.6).then(|| &users[rng.gen_range(0..users.len())]);
        let n = per_session.min(events - ingested);
        let mut times: Vec<i64> = (0..n).map(|_| rng.gen_range(0..60 * 86_400)).collect();
        if rng.gen_bool(0.5) {
            // Compact sessions make bounce and duration figures interesting.
            let base = times[0];
            times.iter_mut().for_each(|t| *t = base + (*t % 1800));
        }
        times.sort();
        let batch: Vec<NewEvent> = times
            .into_iter()
            .map(|t| NewEvent {
                kind: gridhall_core::analytics::EventKind::ALL[rng.gen_range(0..7)]
                    .as_str()
                    .into(),
                subject: (!app_ids.is_empty() && rng.gen_bool(0.5))
                    .then(|| *app_ids.choose(&mut rng).unwrap()),
                occurred_at: Some(t0() + Duration::seconds(t)),
                session_key: format!("sess-{seed}-{s}"),
            })
            .collect();
        f.platform.ingest_events(who, batch).unwrap();
        ingested += n;
    }

    let mut runs: BTreeMap<(UserId, AppId), (u64, u64)> = BTreeMap::new();
    for _ in 0..if runnable.is_empty() { 0 } else { 150 } {
        let who = &users[rng.gen_range(0..users.len())];
        let app = *runnable.choose(&mut rng).unwrap();
        f.clock
            .set(t0() + Duration::seconds(rng.gen_range(0..60 * 86_400)));
        let d = f.platform.issue_descriptor(who, app, None).unwrap();
        let started = rng.gen_bool(0.8);
        let outcome = if started {
            RunOutcome::Started
        } else {
            RunOutcome::Failed
        };
        f.platform.report_run(d.descriptor_id, outcome).unwrap();
        let tally = runs.entry((who.user_id, app)).or_default();
        if started {
            tally.0 += 1;
        } else {
            tally.1 += 1;
        }
    }

    for i in 0..if app_ids.is_empty() { 0 } else { 40 } {
        let inst = Instance {
            instance_id: format!("i-{i:06}"),
            reservation_id: format!("r-{i:06}"),
            application_id: *app_ids.choose(&mut rng).unwrap(),
            image_id: ImageId::new(),
            owner_id: users[rng.gen_range(0..users.len())].user_id,
            provider_ref: "sim-cloud".into(),
            credential_id: CredentialId::new(),
            role: ImageKind::Client,
            instance_type: "m1.small".into(),
            status: InstanceStatus::ALL[rng.gen_range(0..4)],
            public_address: rng.gen_bool(0.5).then(|| format!("10.0.0.{i}")),
            launched_at: t0() + Duration::seconds(rng.gen_range(0..60 * 86_400)),
            last_polled_at: None,
            tag_id: None,
        };
        f.platform
            .storage
            .transact(|tx| tx.put_json(tables::INSTANCES, &inst.key(), &inst))
            .unwrap();
    }
    f.clock.set(t0() + Duration::days(60));
    World {
        f,
        users,
        ingested,
        runs,
    }
}

pub async fn analytics(backend: BackendKind) {
    for (seed, apps, events) in [(1u64, 500, 10_000), (2, 37, 900), (3, 0, 0), (4, 120, 4_321)] {
        let w = build_world(backend, seed, apps, events).await;
        let rows = w.f.platform.stats_inputs().unwrap();
        let started: u64 = w.runs.values().map(|r| r.0).sum();
        assert_eq!(rows.user_count, w.users.len() as u64);
        assert_eq!(
            rows.events.len(),
            w.ingested + started as usize,
            "every event stored once"
        );
        let stored: BTreeMap<(UserId, AppId), (u64, u64)> = rows
            .participation
            .iter()
            .map(|p| ((p.user_id, p.application_id), (p.run_count, p.failure_count)))
            .collect();
        assert_eq!(stored, w.runs, "participation tallies");

        let now = t0() + Duration::days(60);
        assert_eq!(
            w.f.platform.platform_stats().unwrap(),
            recount::platform_stats(&rows, now, w.f.platform.config.active_window),
            "platform stats, seed {seed}"
        );
        for (a, b) in [(0, 60), (10, 20), (30, 31), (59, 70), (-5, 0), (0, 0)] {
            let win = Window::new(t0() + Duration::days(a), t0() + Duration::days(b)).unwrap();
            let got = w.f.platform.usage_report(win).unwrap();
            let want = recount::usage_report(&rows.events, win);
            assert!(
                recount::same_usage(&got, &want),
                "usage {a}..{b}, seed {seed}: {got:?} vs {want:?}"
            );
        }
        for u in &w.users {
            assert_eq!(
                w.f.platform.user_participation(u).unwrap(),
                recount::participation(&rows, u.user_id),
                "participation, seed {seed}"
            );
        }
    }
}

pub async fn search(backend: BackendKind) {
    let words = [
        "Galaxy",
        "zoo",
        "fold",
        "FOLDit",
        "bird",
        "song",
        "rosetta",
        "Σ-particle",
        "",
        "galaxy zoo",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EA4C);
    let mut pairs = 0;
    for fixture in 0..10 {
        let f = fixture_with(backend, offline_providers());
        let owners: Vec<(Caller, String)> = ["ada", "Bob", "cy"]
            .iter()
            .map(|n| (f.provider(n), n.to_string()))
            .collect();
        let mut public = Vec::new();
        for _ in 0..rng.gen_range(0..120) {
            let (owner, owner_name) = &owners[rng.gen_range(0..3)];
            let word = |rng: &mut ChaCha8Rng| words[rng.gen_range(0..words.len())].to_string();
            let new = NewApplication {
                name: format!("{} {}", word(&mut rng), rng.gen_range(0..5)),
                description: format!("{} {}", word(&mut rng), word(&mut rng)),
                keywords: (0..rng.gen_range(0..3))
                    .map(|_| word(&mut rng))
                    .filter(|k| !k.is_empty())
                    .collect(),
                branch: word(&mut rng),
                category: word(&mut rng),
                subcategory: word(&mut rng),
                visibility: Some(if rng.gen_bool(0.85) {
                    Visibility::Public
                } else {
                    Visibility::Private
                }),
                project_server_url: None,
            };
            let app = f.platform.create_application(owner, new.clone()).unwrap();
            if app.visibility == Visibility::Public {
                public.push(DirectoryEntry {
                    application_id: app.application_id,
                    name: new.name.trim().to_string(),
                    description: new.description,
                    keywords: new.keywords,
                    branch: new.branch,
                    category: new.category,
                    subcategory: new.subcategory,
                    owner: owner_name.clone(),
                });
            }
        }
        for _ in 0..10 {
            let q = SearchQuery {
                text: if rng.gen_bool(0.3) {
                    String::new()
                } else {
                    words[rng.gen_range(0..words.len())].to_lowercase()
                },
                sort_column: SortColumn::ALL[rng.gen_range(0..SortColumn::ALL.len())],
                sort_direction: if rng.gen_bool(0.5) {
                    SortDirection::Asc
                } else {
                    SortDirection::Desc
                },
                page: rng.gen_range(1..4),
                page_size: [1, 5, 20, 200][rng.gen_range(0..4)],
            };
            let page = f.platform.search_applications(&q).unwrap();
            let (total, ids) = brute::search(&public, &q);
            assert_eq!(page.total, total, "fixture {fixture}: {q:?}");
            let got: Vec<AppId> = page.items.iter().map(|e| e.application_id).collect();
            assert_eq!(got, ids, "fixture {fixture}: {q:?}");
            pairs += 1;
        }
    }
    assert_eq!(pairs, 100);
}
