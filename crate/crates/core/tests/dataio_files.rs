use std::collections::{HashMap, HashSet};

use tempfile::TempDir;

use dualagent_core::constraints::required_count;
use dualagent_core::dataio::{
    generate_synthetic, load_catalog, load_dataset, load_embeddings, write_catalog, write_dataset,
    write_embeddings_binary, write_embeddings_jsonl, DatasetPaths, SyntheticConfig,
};
use dualagent_core::objectives::{Evaluator, ObjectiveSettings};
use dualagent_core::{ConstraintThresholds, ItemId, ItemRecord, UserContext};

#[test]
fn dataset_round_trips_through_files() {
    let tmp = TempDir::new().unwrap();
    let dataset = generate_synthetic(&SyntheticConfig { seed: 3, ..Default::default() }).unwrap();
    let paths = DatasetPaths::in_dir(tmp.path());
    write_dataset(&dataset, &paths).unwrap();
    let loaded = load_dataset(&paths, 5).unwrap();
    assert_eq!(loaded.catalog.items(), dataset.catalog.items());
    assert_eq!(loaded.interactions, dataset.interactions);
    assert_eq!(loaded.users, dataset.users);

    // Writing the reloaded data again is byte-identical.
    let again = DatasetPaths::in_dir(&tmp.path().join("again"));
    std::fs::create_dir_all(tmp.path().join("again")).unwrap();
    write_dataset(&loaded, &again).unwrap();
    for (a, b) in [(&paths.catalog, &again.catalog), (&paths.interactions, &again.interactions)] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}

#[test]
fn catalog_and_embedding_formats_agree() {
    let tmp = TempDir::new().unwrap();
    let items = generate_synthetic(&SyntheticConfig { n_items: 80, n_users: 2, ..Default::default() })
        .unwrap()
        .catalog
        .items()
        .to_vec();
    let jsonl = tmp.path().join("e.jsonl");
    let binary = tmp.path().join("e.bin");
    write_embeddings_jsonl(&items, &jsonl).unwrap();
    write_embeddings_binary(&items, &binary).unwrap();
    let catalog = tmp.path().join("c.jsonl");
    write_catalog(&items, &catalog).unwrap();

    let exact = load_catalog(&catalog, Some(&load_embeddings(&jsonl).unwrap())).unwrap();
    assert_eq!(exact, items);
    let narrowed = load_catalog(&catalog, Some(&load_embeddings(&binary).unwrap())).unwrap();
    for (a, b) in narrowed.iter().zip(&items) {
        assert_eq!((&a.item_id, &a.categories, a.listed_at), (&b.item_id, &b.categories, b.listed_at));
        let norm: f64 = a.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

/// Hand-builds a list meeting all three constraints from the user's pool.
fn witness(user: &UserContext, items: &HashMap<&str, &ItemRecord>, th: &ConstraintThresholds, k: usize) -> Option<Vec<ItemId>> {
    let recent = |i: &ItemRecord| th.now - i.listed_at <= th.recency_window;
    let mut by_category: HashMap<&str, Vec<&ItemRecord>> = HashMap::new();
    for id in &user.candidate_pool {
        let item = items[id.as_str()];
        by_category.entry(item.categories[0].as_str()).or_default().push(item);
    }
    // Recent items first so the exposure quota is met early.
    for group in by_category.values_mut() {
        group.sort_by_key(|i| (!recent(i), i.item_id.clone()));
    }
    let mut categories: Vec<&str> = by_category.keys().copied().collect();
    categories.sort_by_key(|c| (!by_category[c].iter().any(|i| recent(i)), *c));
    let per = 2;
    let mut list = Vec::new();
    for c in categories.iter().take(k / per) {
        list.extend(by_category[c].iter().take(per).map(|i| i.item_id.clone()));
    }
    (list.len() == k).then_some(list)
}

#[test]
fn generated_datasets_admit_a_feasible_list() {
    let k = 10;
    for seed in 0..5 {
        for config in [
            SyntheticConfig { seed, ..Default::default() },
            SyntheticConfig { seed, recent_fraction: 0.1, n_sellers: 2, n_categories: 5, ..Default::default() },
        ] {
            let dataset = generate_synthetic(&config).unwrap();
            let th = ConstraintThresholds::with_now(dataset.now());
            assert!(config.n_sellers >= required_count(th.theta_seller, k));
            let items: HashMap<&str, &ItemRecord> =
                dataset.catalog.items().iter().map(|i| (i.item_id.as_str(), i)).collect();
            for user in dataset.users.iter().take(10) {
                let list = witness(user, &items, &th, k).expect("pool covers enough categories");
                assert_eq!(list.iter().collect::<HashSet<_>>().len(), k);
                let evaluator =
                    Evaluator::new(user, &dataset.catalog, &th, k, ObjectiveSettings::default()).unwrap();
                // Keys that decode to exactly the witness list.
                let keys: Vec<f64> = user
                    .candidate_pool
                    .iter()
                    .map(|id| if list.contains(id) { 1.0 } else { 0.0 })
                    .collect();
                let solution = evaluator.evaluate(&keys).unwrap();
                assert!(solution.is_feasible(), "seed {seed}: {:?}", solution.constraints);
            }
        }
    }
}
