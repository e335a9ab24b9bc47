use bytes::Bytes;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

use super::*;
use crate::clock::Clock;
use crate::ids::CredentialId;
use crate::orchestrator::InstanceStatus;
use crate::platform::testing::{fixture, Fixture};
use crate::storage::WriteExt;

fn new_app(name: &str) -> NewApplication {
    NewApplication {
        name: name.into(),
        description: format!("{name} description"),
        keywords: vec!["physics".into(), "game".into()],
        branch: "science".into(),
        category: "physics".into(),
        subcategory: "particle".into(),
        ..Default::default()
    }
}

fn one_chunk(bytes: &'static [u8]) -> impl Stream<Item = std::result::Result<Bytes, std::io::Error>> + Unpin {
    futures::stream::iter([Ok(Bytes::from_static(bytes))])
}

/// Puts an instance row straight into storage, as if a launch had happened.
fn fake_instance(f: &Fixture, owner: UserId, image: &MachineImage, status: InstanceStatus) {
    let inst = Instance {
        instance_id: format!("i-{}", ImageId::new()),
        reservation_id: "r-1".into(),
        application_id: image.application_id,
        image_id: image.image_id,
        owner_id: owner,
        provider_ref: "sim-cloud".into(),
        credential_id: CredentialId::new(),
        role: image.kind,
        instance_type: "m1.small".into(),
        status,
        public_address: None,
        launched_at: f.clock.now(),
        last_polled_at: None,
        tag_id: None,
    };
    f.platform
        .storage
        .transact(|tx| tx.put_json(tables::INSTANCES, &inst.key(), &inst))
        .unwrap();
}

#[test]
fn create_requires_provider_role_and_a_name() {
    let f = fixture();
    let user = f.caller("vol");
    assert_eq!(
        f.platform.create_application(&user, new_app("VAS")),
        Err(Error::RoleRequired(Role::Provider))
    );
    let prov = f.provider("prov");
    assert!(matches!(
        f.platform.create_application(&prov, new_app("  ")),
        Err(Error::ValidationFailed(_))
    ));
    let app = f.platform.create_application(&prov, new_app("VAS")).unwrap();
    assert_eq!(app.visibility, Visibility::Public);
    let page = f.platform.search_applications(&SearchQuery::default()).unwrap();
    assert_eq!(page.total, 1);
    assert_eq!(page.items[0].owner, "prov");
}

#[test]
fn my_apps_are_exactly_the_owned_ones() {
    let f = fixture();
    let a = f.provider("a");
    let b = f.provider("b");
    assert!(f.platform.list_my_apps(&a).unwrap().is_empty());
    for i in 0..3 {
        f.platform
            .create_application(&a, new_app(&format!("a{i}")))
            .unwrap();
        f.platform
            .create_application(&b, new_app(&format!("b{i}")))
            .unwrap();
    }
    let mine = f.platform.list_my_apps(&a).unwrap();
    assert_eq!(mine.len(), 3);
    assert!(mine.iter().all(|x| x.owner_id == a.user_id));
    let user = f.caller("u");
    assert_eq!(
        f.platform.list_my_apps(&user),
        Err(Error::RoleRequired(Role::Provider))
    );
}

#[test]
fn directory_row_has_exactly_the_listing_columns() {
    let f = fixture();
    let prov = f.provider("prov");
    f.platform.create_application(&prov, new_app("VAS")).unwrap();
    let page = f.platform.search_applications(&SearchQuery::default()).unwrap();
    let v = serde_json::to_value(&page.items[0]).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "application_id",
            "branch",
            "category",
            "description",
            "keywords",
            "name",
            "owner",
            "subcategory"
        ]
    );
}

#[test]
fn private_apps_stay_out_of_the_directory() {
    let f = fixture();
    let prov = f.provider("prov");
    let draft = f
        .platform
        .create_application(
            &prov,
            NewApplication {
                visibility: Some(Visibility::Private),
                ..new_app("draft")
            },
        )
        .unwrap();
    assert_eq!(
        f.platform
            .search_applications(&SearchQuery::default())
            .unwrap()
            .total,
        0
    );
    let other = f.caller("other");
    assert_eq!(
        f.platform
            .get_application_detail(Some(&other), draft.application_id),
        Err(Error::AppNotFound)
    );
    assert_eq!(
        f.platform.get_application_detail(None, draft.application_id),
        Err(Error::AppNotFound)
    );
    assert!(f
        .platform
        .get_application_detail(Some(&prov), draft.application_id)
        .is_ok());
}

#[test]
fn page_size_bounds() {
    let f = fixture();
    for (size, ok) in [(0, false), (1, true), (200, true), (201, false)] {
        let q = SearchQuery {
            page_size: size,
            ..SearchQuery::default()
        };
        assert_eq!(f.platform.search_applications(&q).is_ok(), ok, "page_size {size}");
    }
    let q = SearchQuery {
        page: 0,
        ..SearchQuery::default()
    };
    assert!(f.platform.search_applications(&q).is_err());
}

#[test]
fn cloud_images_and_detail_views() {
    let f = fixture();
    let prov = f.provider("prov");
    let vol = f.caller("vol");
    let app = f.platform.create_application(&prov, new_app("VAS")).unwrap();
    let id = app.application_id;
    assert_eq!(
        f.platform
            .register_cloud_image(&prov, id, ImageKind::Server, "nope", "ami-1", None),
        Err(Error::UnknownProvider("nope".into()))
    );
    assert_eq!(
        f.platform
            .register_cloud_image(&vol, id, ImageKind::Server, "sim-cloud", "ami-1", None),
        Err(Error::NotOwner)
    );
    f.platform
        .register_cloud_image(
            &prov,
            id,
            ImageKind::Server,
            "sim-cloud",
            "ami-0001",
            Some("m1.large".into()),
        )
        .unwrap();
    f.clock.advance(chrono::Duration::seconds(1));
    f.platform
        .register_cloud_image(&prov, id, ImageKind::Client, "sim-cloud", "ami-0002", None)
        .unwrap();

    let owner_view = f.platform.get_application_detail(Some(&prov), id).unwrap();
    assert_eq!(owner_view.images.len(), 2);
    let kinds: Vec<ImageKind> = owner_view.cloud_launch.iter().map(|r| r.kind).collect();
    assert_eq!(kinds, vec![ImageKind::Server, ImageKind::Client]);
    let row = serde_json::to_value(&owner_view.cloud_launch[0]).unwrap();
    assert_eq!(row["cloud"], "sim-cloud");
    assert_eq!(row["type"], "server");

    for viewer in [Some(&vol), None] {
        let v = f.platform.get_application_detail(viewer, id).unwrap();
        assert!(v.images.iter().all(|i| i.kind == ImageKind::Client));
        assert!(v.cloud_launch.iter().all(|r| r.kind == ImageKind::Client));
        assert_eq!(v.images.len(), 1);
    }
    assert_eq!(
        f.platform.get_application_detail(None, AppId::new()),
        Err(Error::AppNotFound)
    );
}

#[tokio::test]
async fn upload_round_trip_and_dedup() {
    let f = fixture();
    let prov = f.provider("prov");
    let vol = f.caller("vol");
    let app = f.platform.create_application(&prov, new_app("VAS")).unwrap();
    let id = app.application_id;

    let data: Vec<u8> = (0..(1 << 20)).map(|i| (i * 31 % 256) as u8).collect();
    let leaked: &'static [u8] = Box::leak(data.clone().into_boxed_slice());
    let a = f
        .platform
        .upload_local_image(&prov, id, one_chunk(leaked))
        .await
        .unwrap();
    let b = f
        .platform
        .upload_local_image(&prov, id, one_chunk(leaked))
        .await
        .unwrap();
    assert_eq!(a.blob_digest(), b.blob_digest());
    assert_eq!(a.kind, ImageKind::Client);
    assert_eq!(f.platform.blobs.list().unwrap().len(), 1);
    let path = f.platform.blobs.path_for(a.blob_digest().unwrap()).unwrap();
    assert_eq!(std::fs::read(path).unwrap(), data);

    assert_eq!(
        f.platform.upload_local_image(&prov, id, one_chunk(b"")).await,
        Err(Error::EmptyUpload)
    );
    assert_eq!(
        f.platform.upload_local_image(&vol, id, one_chunk(b"x")).await,
        Err(Error::NotOwner)
    );

    // The blob survives while any image still references it.
    f.platform.remove_image(&prov, a.image_id).unwrap();
    assert_eq!(f.platform.blobs.list().unwrap().len(), 1);
    f.platform.remove_image(&prov, b.image_id).unwrap();
    assert!(f.platform.blobs.list().unwrap().is_empty());
}

#[tokio::test]
async fn upload_size_cap() {
    let mut f = fixture();
    f.platform.config.upload_max_bytes = 8;
    let prov = f.provider("prov");
    let app = f.platform.create_application(&prov, new_app("VAS")).unwrap();
    assert_eq!(
        f.platform
            .upload_local_image(&prov, app.application_id, one_chunk(b"123456789"))
            .await,
        Err(Error::TooLarge { limit: 8 })
    );
    assert!(f.platform.blobs.list().unwrap().is_empty());
}

#[test]
fn images_in_use_cannot_be_removed() {
    let f = fixture();
    let prov = f.provider("prov");
    let other = f.provider("other");
    let app = f.platform.create_application(&prov, new_app("VAS")).unwrap();
    let img = f
        .platform
        .register_cloud_image(
            &prov,
            app.application_id,
            ImageKind::Server,
            "sim-cloud",
            "ami-1",
            None,
        )
        .unwrap();
    fake_instance(&f, prov.user_id, &img, InstanceStatus::Running);
    assert_eq!(
        f.platform.remove_image(&prov, img.image_id),
        Err(Error::ImageInUse)
    );
    assert_eq!(
        f.platform.remove_image(&other, img.image_id),
        Err(Error::NotOwner)
    );

    let unused = f
        .platform
        .register_cloud_image(
            &prov,
            app.application_id,
            ImageKind::Client,
            "sim-cloud",
            "ami-2",
            None,
        )
        .unwrap();
    fake_instance(&f, prov.user_id, &unused, InstanceStatus::Terminated);
    f.platform.remove_image(&prov, unused.image_id).unwrap();
    assert_eq!(
        f.platform.remove_image(&prov, unused.image_id),
        Err(Error::ImageNotFound)
    );
}

#[test]
fn application_delete_is_restricted_and_drops_group_links() {
    let f = fixture();
    let prov = f.provider("prov");
    let app = f.platform.create_application(&prov, new_app("VAS")).unwrap();
    let id = app.application_id;
    let g = f.platform.create_group(&prov, "team").unwrap();
    f.platform
        .attach_application_to_group(&prov, g.group_id, id, "queue-1")
        .unwrap();
    let img = f
        .platform
        .register_cloud_image(&prov, id, ImageKind::Client, "sim-cloud", "ami-1", None)
        .unwrap();
    assert_eq!(
        f.platform.delete_application(&prov, id),
        Err(Error::HasDependents)
    );
    f.platform.remove_image(&prov, img.image_id).unwrap();
    f.platform.delete_application(&prov, id).unwrap();
    assert!(f.platform.get_group(g.group_id).unwrap().app_links.is_empty());
    assert_eq!(
        f.platform.get_application_detail(Some(&prov), id),
        Err(Error::AppNotFound)
    );
}

// Search oracle: an independent filter + sort over the full fixture.

fn oracle(entries: &[DirectoryEntry], q: &SearchQuery) -> (usize, Vec<AppId>) {
    let needle = q.text.trim().to_lowercase();
    let mut hits: Vec<&DirectoryEntry> = entries
        .iter()
        .filter(|e| {
            let fields = std::iter::once(&e.name)
                .chain(std::iter::once(&e.description))
                .chain(e.keywords.iter());
            needle.is_empty() || fields.map(|s| s.to_lowercase()).any(|s| s.contains(&needle))
        })
        .collect();
    let key = |e: &DirectoryEntry| -> String {
        let raw = match q.sort_column {
            SortColumn::Name => e.name.clone(),
            SortColumn::Description => e.description.clone(),
            SortColumn::Keywords => e.keywords.join(","),
            SortColumn::Branch => e.branch.clone(),
            SortColumn::Category => e.category.clone(),
            SortColumn::Subcategory => e.subcategory.clone(),
            SortColumn::Owner => e.owner.clone(),
        };
        raw.to_lowercase()
    };
    // Insertion sort keeps this obviously correct rather than fast.
    let mut sorted: Vec<&DirectoryEntry> = Vec::new();
    for h in hits.drain(..) {
        let pos = sorted
            .iter()
            .position(|s| (key(h), h.application_id) < (key(s), s.application_id))
            .unwrap_or(sorted.len());
        sorted.insert(pos, h);
    }
    if q.sort_direction == SortDirection::Desc {
        sorted.reverse();
    }
    let total = sorted.len();
    let start = (q.page as usize - 1) * q.page_size as usize;
    let ids = sorted
        .into_iter()
        .skip(start)
        .take(q.page_size as usize)
        .map(|e| e.application_id)
        .collect();
    (total, ids)
}

const WORDS: &[&str] = &[
    "physics", "Game", "galaxy", "bird", "PROTEIN", "atom", "sky", "zoo", "Phys",
];

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(WORDS).prop_map(String::from)
}

fn entry_strategy() -> impl Strategy<Value = DirectoryEntry> {
    (
        word(),
        prop::collection::vec(word(), 0..3),
        prop::collection::vec(word(), 0..3),
        prop::sample::select(&["science", "humanities", ""][..]),
        word(),
        word(),
        prop::sample::select(&["ada", "bob", "Cy"][..]),
    )
        .prop_map(|(name, desc, keywords, branch, cat, sub, owner)| DirectoryEntry {
            application_id: AppId::new(),
            name,
            description: desc.join(" "),
            keywords,
            branch: branch.to_string(),
            category: cat,
            subcategory: sub,
            owner: owner.to_string(),
        })
}

fn query_strategy() -> impl Strategy<Value = SearchQuery> {
    (
        prop_oneof![
            Just(String::new()),
            word(),
            word().prop_map(|w| w[..2].to_string())
        ],
        prop::sample::select(&SortColumn::ALL[..]),
        prop::sample::select(&[SortDirection::Asc, SortDirection::Desc][..]),
        1u32..4,
        1u32..40,
    )
        .prop_map(
            |(text, sort_column, sort_direction, page, page_size)| SearchQuery {
                text,
                sort_column,
                sort_direction,
                page,
                page_size,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn search_matches_brute_force_oracle(
        entries in prop::collection::vec(entry_strategy(), 0..120),
        q in query_strategy(),
    ) {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let page = search_directory(&entries, &q, exec).unwrap();
            let (total, ids) = oracle(&entries, &q);
            prop_assert_eq!(page.total, total);
            let got: Vec<AppId> = page.items.iter().map(|e| e.application_id).collect();
            prop_assert_eq!(got, ids);
        }
    }

    #[test]
    fn descending_is_reverse_of_ascending(
        entries in prop::collection::vec(entry_strategy(), 0..80),
        col in prop::sample::select(&SortColumn::ALL[..]),
    ) {
        let q = |d| SearchQuery { sort_column: col, sort_direction: d, page_size: 200, ..SearchQuery::default() };
        let asc: Vec<AppId> = search_directory(&entries, &q(SortDirection::Asc), Exec::Auto).unwrap().items.iter().map(|e| e.application_id).collect();
        let mut desc: Vec<AppId> = search_directory(&entries, &q(SortDirection::Desc), Exec::Auto).unwrap().items.iter().map(|e| e.application_id).collect();
        desc.reverse();
        prop_assert_eq!(asc, desc);
    }
}

#[test]
fn platform_search_matches_oracle_on_stored_fixture() {
    let f = fixture();
    let owners: Vec<Caller> = ["ada", "bob", "cy"].iter().map(|n| f.provider(n)).collect();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for i in 0..60 {
        let e = entry_strategy().new_tree(&mut runner).unwrap().current();
        f.platform
            .create_application(
                &owners[i % 3],
                NewApplication {
                    name: e.name,
                    description: e.description,
                    keywords: e.keywords,
                    branch: e.branch,
                    category: e.category,
                    subcategory: e.subcategory,
                    visibility: Some(if i % 7 == 0 {
                        Visibility::Private
                    } else {
                        Visibility::Public
                    }),
                    project_server_url: None,
                },
            )
            .unwrap();
    }
    let public = f.platform.storage.read(public_directory).unwrap();
    assert_eq!(public.len(), 60 - 9);
    for _ in 0..20 {
        let q = query_strategy().new_tree(&mut runner).unwrap().current();
        let page = f.platform.search_applications(&q).unwrap();
        let (total, ids) = oracle(&public, &q);
        assert_eq!(page.total, total);
        assert_eq!(
            page.items.iter().map(|e| e.application_id).collect::<Vec<_>>(),
            ids
        );
    }
}
