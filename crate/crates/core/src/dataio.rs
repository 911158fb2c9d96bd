//! Dataset ingestion, popularity, user splits and the synthetic generator.
//!
//! Interchange files are line-delimited JSON:
//!
//! * catalog: `{"item_id", "categories", "seller_id", "listed_at", "popularity"?, "embedding"?}`
//! * interactions: `{"user_id", "item_id", "timestamp"}`
//! * embeddings: `{"item_id", "embedding"}`, or the dense binary layout
//!   described on [`write_embeddings_binary`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{l2_norm, Catalog, ItemId, ItemRecord, UserContext, DAY};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"DAEM";
const BINARY_VERSION: u32 = 1;

/// Vectors this close to unit length are stored as given.
const RENORMALIZE_TOLERANCE: f64 = 1e-12;

/// A catalog line before embeddings and popularity are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub item_id: ItemId,
    pub categories: Vec<String>,
    pub seller_id: String,
    pub listed_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl From<&ItemRecord> for CatalogEntry {
    fn from(item: &ItemRecord) -> Self {
        Self {
            item_id: item.item_id.clone(),
            categories: item.categories.clone(),
            seller_id: item.seller_id.clone(),
            listed_at: item.listed_at,
            popularity: Some(item.popularity),
            embedding: Some(item.embedding.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: ItemId,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingLine {
    item_id: ItemId,
    embedding: Vec<f64>,
}

/// Unit-normalized embeddings keyed by item id, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: Option<usize>,
    vectors: HashMap<ItemId, Vec<f64>>,
}

impl EmbeddingTable {
    /// Inserts a vector after normalizing it.
    pub fn insert(&mut self, item_id: ItemId, vector: Vec<f64>) -> Result<()> {
        let vector = normalize(&item_id, vector)?;
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::DimensionMismatch {
                    item: item_id,
                    expected: d,
                    found: vector.len(),
                })
            }
            _ => self.dim = Some(vector.len()),
        }
        self.vectors.insert(item_id, vector);
        Ok(())
    }

    pub fn get(&self, item_id: &str) -> Option<&Vec<f64>> {
        self.vectors.get(item_id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Scales a vector to unit length; zero or non-finite vectors are rejected.
pub fn normalize(item_id: &str, mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = l2_norm(&v);
    if v.is_empty() || norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroEmbedding(item_id.to_string()));
    }
    if (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
        for x in &mut v {
            *x /= norm;
        }
    }
    Ok(v)
}

fn malformed(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Malformed {
        line,
        message: e.to_string(),
    }
}

/// Parses non-blank lines as JSON objects, checking `required` fields first
/// so that a missing field is reported by name.
fn read_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
    required: &[&'static str],
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| malformed(n, e))?;
        let object = value
            .as_object()
            .ok_or_else(|| malformed(n, "expected a JSON object"))?;
        if let Some(field) = required.iter().find(|f| !object.contains_key(**f)) {
            return Err(Error::MissingField { line: n, field });
        }
        out.push(serde_json::from_value(value).map_err(|e| malformed(n, e))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_catalog_entries(path: &Path) -> Result<Vec<CatalogEntry>> {
    read_jsonl(
        BufReader::new(File::open(path)?),
        &["item_id", "categories", "seller_id", "listed_at"],
    )
}

/// Builds validated records. Inline embeddings take precedence over the
/// table; missing popularity defaults to 0.
pub fn attach_embeddings(
    entries: Vec<CatalogEntry>,
    table: Option<&EmbeddingTable>,
) -> Result<Vec<ItemRecord>> {
    let mut missing = Vec::new();
    let mut items = Vec::with_capacity(entries.len());
    for e in entries {
        let embedding = match (e.embedding, table.and_then(|t| t.get(&e.item_id))) {
            (Some(v), _) => normalize(&e.item_id, v)?,
            (None, Some(v)) => v.clone(),
            (None, None) => {
                missing.push(e.item_id);
                continue;
            }
        };
        let item = ItemRecord {
            item_id: e.item_id,
            categories: e.categories,
            seller_id: e.seller_id,
            listed_at: e.listed_at,
            popularity: e.popularity.unwrap_or(0.0),
            embedding,
        };
        item.validate()?;
        items.push(item);
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    Ok(items)
}

/// Reads a catalog, filling absent embeddings from `embeddings`.
pub fn load_catalog(path: &Path, embeddings: Option<&EmbeddingTable>) -> Result<Vec<ItemRecord>> {
    attach_embeddings(read_catalog_entries(path)?, embeddings)
}

/// Writes full records, embeddings and popularity included.
pub fn write_catalog(items: &[ItemRecord], path: &Path) -> Result<()> {
    write_jsonl(items.iter().map(CatalogEntry::from), path)
}

/// Writes catalog lines without embeddings, for use with a separate embedding file.
pub fn write_catalog_metadata(items: &[ItemRecord], path: &Path) -> Result<()> {
    write_jsonl(
        items.iter().map(|i| CatalogEntry {
            embedding: None,
            ..CatalogEntry::from(i)
        }),
        path,
    )
}

pub fn load_interactions(path: &Path) -> Result<Vec<Interaction>> {
    read_jsonl(
        BufReader::new(File::open(path)?),
        &["user_id", "item_id", "timestamp"],
    )
}

pub fn write_interactions(interactions: &[Interaction], path: &Path) -> Result<()> {
    write_jsonl(interactions, path)
}

/// Loads embeddings from line-delimited JSON or the binary layout, chosen by
/// the leading magic bytes.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(BINARY_MAGIC) {
        return parse_embeddings_binary(&bytes);
    }
    let rows: Vec<EmbeddingLine> = read_jsonl(bytes.as_slice(), &["item_id", "embedding"])?;
    let mut table = EmbeddingTable::default();
    for row in rows {
        table.insert(row.item_id, row.embedding)?;
    }
    Ok(table)
}

pub fn write_embeddings_jsonl(items: &[ItemRecord], path: &Path) -> Result<()> {
    write_jsonl(
        items.iter().map(|i| EmbeddingLine {
            item_id: i.item_id.clone(),
            embedding: i.embedding.clone(),
        }),
        path,
    )
}

/// Binary layout, little endian: `b"DAEM"`, `u32` version (1), `u32` row
/// count `n`, `u32` dimension `d`; then `n` ids, each a `u16` byte length
/// followed by UTF-8 bytes; then `n * d` `f32` values, row-major.
pub fn write_embeddings_binary(items: &[ItemRecord], path: &Path) -> Result<()> {
    let d = items.first().map_or(0, |i| i.embedding.len());
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(BINARY_MAGIC)?;
    for v in [BINARY_VERSION, items.len() as u32, d as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for item in items {
        let id = item.item_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::EmbeddingFormat(format!("item id `{}` is too long", item.item_id)))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(id)?;
    }
    for item in items {
        if item.embedding.len() != d {
            return Err(Error::DimensionMismatch {
                item: item.item_id.clone(),
                expected: d,
                found: item.embedding.len(),
            });
        }
        for &x in &item.embedding {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::EmbeddingFormat("unexpected end of file".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn parse_embeddings_binary(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32()?;
    if version != BINARY_VERSION {
        return Err(Error::EmbeddingFormat(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    let d = c.u32()? as usize;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u16()? as usize;
        let id = std::str::from_utf8(c.take(len)?)
            .map_err(|e| Error::EmbeddingFormat(e.to_string()))?;
        ids.push(id.to_string());
    }
    let mut table = EmbeddingTable::default();
    for id in ids {
        let v = (0..d).map(|_| c.f32().map(f64::from)).collect::<Result<Vec<f64>>>()?;
        table.insert(id, v)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::EmbeddingFormat("trailing bytes".into()));
    }
    Ok(table)
}

/// Sets popularity to interaction count over the largest count. Interactions
/// with unknown items are ignored.
pub fn compute_popularity(interactions: &[Interaction], mut items: Vec<ItemRecord>) -> Vec<ItemRecord> {
    let index: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, item)| (item.item_id.as_str(), i))
        .collect();
    let mut counts = vec![0usize; items.len()];
    let mut unknown = 0usize;
    for x in interactions {
        match index.get(x.item_id.as_str()) {
            Some(&i) => counts[i] += 1,
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        warn!("{unknown} interaction(s) reference items outside the catalog");
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    for (item, &count) in items.iter_mut().zip(&counts) {
        item.popularity = if max == 0 {
            0.0
        } else {
            count as f64 / max as f64
        };
    }
    items
}

/// Temporal split per user: the last `holdout_len` distinct items (by
/// timestamp, then item id) are held out, the rest form the history. The
/// candidate pool is the catalog minus the history. Users left with an empty
/// history are skipped.
pub fn build_users(
    interactions: &[Interaction],
    catalog: &Catalog,
    holdout_len: usize,
) -> Vec<UserContext> {
    let mut by_user: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
    for x in interactions {
        if catalog.contains(&x.item_id) {
            by_user.entry(&x.user_id).or_default().push(x);
        }
    }
    let mut users = Vec::with_capacity(by_user.len());
    for (user_id, mut rows) in by_user {
        rows.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.item_id.cmp(&b.item_id)));
        let mut seen = HashSet::new();
        rows.retain(|x| seen.insert(x.item_id.as_str()));
        if rows.len() <= holdout_len {
            debug!("skipping user {user_id}: {} interaction(s)", rows.len());
            continue;
        }
        let split = rows.len() - holdout_len;
        let history: Vec<(ItemId, i64)> = rows[..split]
            .iter()
            .map(|x| (x.item_id.clone(), x.timestamp))
            .collect();
        let in_history: HashSet<&str> = history.iter().map(|(id, _)| id.as_str()).collect();
        let candidate_pool = catalog
            .items()
            .iter()
            .filter(|i| !in_history.contains(i.item_id.as_str()))
            .map(|i| i.item_id.clone())
            .collect();
        users.push(UserContext {
            user_id: user_id.to_string(),
            history,
            held_out: rows[split..].iter().map(|x| x.item_id.clone()).collect(),
            candidate_pool,
        });
    }
    users
}

/// A loaded dataset ready for optimization.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub catalog: Catalog,
    pub interactions: Vec<Interaction>,
    pub users: Vec<UserContext>,
}

impl Dataset {
    /// Assembles a dataset, recomputing popularity from the interactions.
    pub fn new(items: Vec<ItemRecord>, interactions: Vec<Interaction>, holdout_len: usize) -> Result<Self> {
        let catalog = Catalog::new(compute_popularity(&interactions, items))?;
        let users = build_users(&interactions, &catalog, holdout_len);
        Ok(Self {
            catalog,
            interactions,
            users,
        })
    }

    /// Latest timestamp in the data: the reference time for recency.
    pub fn now(&self) -> i64 {
        let listed = self.catalog.latest_listing().unwrap_or(0);
        self.interactions
            .iter()
            .map(|x| x.timestamp)
            .max()
            .map_or(listed, |t| t.max(listed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub catalog: PathBuf,
    pub interactions: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            catalog: dir.join("catalog.jsonl"),
            interactions: dir.join("interactions.jsonl"),
            embeddings: Some(dir.join("embeddings.jsonl")),
        }
    }
}

pub fn load_dataset(paths: &DatasetPaths, holdout_len: usize) -> Result<Dataset> {
    let table = paths.embeddings.as_deref().map(load_embeddings).transpose()?;
    let items = load_catalog(&paths.catalog, table.as_ref())?;
    let interactions = load_interactions(&paths.interactions)?;
    Dataset::new(items, interactions, holdout_len)
}

/// Writes catalog metadata, interactions and JSONL embeddings.
pub fn write_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    let items = dataset.catalog.items();
    match &paths.embeddings {
        Some(path) => {
            write_catalog_metadata(items, &paths.catalog)?;
            write_embeddings_jsonl(items, path)?;
        }
        None => write_catalog(items, &paths.catalog)?,
    }
    write_interactions(&dataset.interactions, &paths.interactions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_sellers: usize,
    /// Zipf exponent of the category distribution.
    pub category_skew: f64,
    /// Fraction of items listed inside the recency window.
    pub recent_fraction: f64,
    pub recency_window_days: i64,
    pub embedding_dim: usize,
    /// Per-coordinate noise around the category centroid.
    pub cluster_spread: f64,
    /// Probability that an item carries a second category.
    pub second_category_prob: f64,
    pub n_users: usize,
    pub history_len: usize,
    pub holdout_len: usize,
    /// Probability that an interaction comes from a preferred category.
    pub preference_strength: f64,
    /// Reference time; the latest interaction happens exactly then.
    pub now: i64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_items: 300,
            n_categories: 12,
            n_sellers: 25,
            category_skew: 1.0,
            recent_fraction: 0.15,
            recency_window_days: 30,
            embedding_dim: 16,
            cluster_spread: 0.15,
            second_category_prob: 0.3,
            n_users: 134,
            history_len: 12,
            holdout_len: 5,
            preference_strength: 0.8,
            now: 1_700_000_000,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_items == 0 || self.n_categories == 0 || self.n_sellers == 0 {
            return fail("n_items, n_categories and n_sellers must be positive".into());
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive".into());
        }
        if !(self.category_skew >= 0.0 && self.category_skew.is_finite()) {
            return fail(format!("category_skew = {} must be non-negative", self.category_skew));
        }
        for (name, p) in [
            ("recent_fraction", self.recent_fraction),
            ("second_category_prob", self.second_category_prob),
            ("preference_strength", self.preference_strength),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if self.recency_window_days <= 0 {
            return fail("recency_window_days must be positive".into());
        }
        if self.history_len == 0 {
            return fail("history_len must be positive".into());
        }
        if self.history_len + self.holdout_len > self.n_items {
            return fail(format!(
                "history_len + holdout_len = {} exceeds n_items = {}",
                self.history_len + self.holdout_len,
                self.n_items
            ));
        }
        Ok(())
    }

    /// Number of items listed inside the recency window.
    pub fn recent_count(&self) -> usize {
        ((self.recent_fraction * self.n_items as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

fn gaussian_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = l2_norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates a seeded catalog with interaction histories.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_items;
    let width = |x: usize| x.saturating_sub(1).to_string().len();
    let category = |c: usize| format!("cat-{c:0w$}", w = width(config.n_categories));
    let seller = |s: usize| format!("seller-{s:0w$}", w = width(config.n_sellers));

    let weights: Vec<f64> = (0..config.n_categories)
        .map(|c| ((c + 1) as f64).powf(-config.category_skew))
        .collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let centroids: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|_| gaussian_unit(config.embedding_dim, &mut rng))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut recent = vec![false; n];
    for &i in order.iter().take(config.recent_count()) {
        recent[i] = true;
    }
    let window = config.recency_window_days * DAY;

    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        // The first items cover every category once so none is empty.
        let primary = if i < config.n_categories {
            i
        } else {
            zipf.sample(&mut rng)
        };
        let mut categories = vec![category(primary)];
        if config.n_categories > 1 && rng.random::<f64>() < config.second_category_prob {
            let mut other = rng.random_range(0..config.n_categories - 1);
            if other >= primary {
                other += 1;
            }
            categories.push(category(other));
        }
        let mut embedding: Vec<f64> = centroids[primary]
            .iter()
            .map(|&c| c + config.cluster_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = l2_norm(&embedding);
        for x in &mut embedding {
            *x /= norm;
        }
        let age = if recent[i] {
            rng.random_range(0..=window)
        } else {
            rng.random_range(window + DAY..=window + 720 * DAY)
        };
        items.push(ItemRecord {
            item_id: format!("item-{i:0w$}", w = width(n)),
            categories,
            seller_id: seller(rng.random_range(0..config.n_sellers)),
            listed_at: config.now - age,
            popularity: 0.0,
            embedding,
        });
    }

    let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); config.n_categories];
    for (i, item) in items.iter().enumerate() {
        for c in &item.categories {
            let idx = c["cat-".len()..].parse::<usize>().expect("generated label");
            by_category[idx].push(i);
        }
    }

    let per_user = config.history_len + config.holdout_len;
    let mut interactions = Vec::with_capacity(config.n_users * per_user);
    for u in 0..config.n_users {
        let user_id = format!("user-{u:0w$}", w = width(config.n_users));
        let n_preferred = if config.n_categories > 1 && rng.random::<bool>() { 2 } else { 1 };
        let preferred: Vec<usize> = rand::seq::index::sample(&mut rng, config.n_categories, n_preferred)
            .into_iter()
            .collect();
        let mut chosen: Vec<usize> = Vec::with_capacity(per_user);
        let mut taken = vec![false; n];
        while chosen.len() < per_user {
            let from_preferred = rng.random::<f64>() < config.preference_strength;
            let pick = if from_preferred {
                let c = *preferred.choose(&mut rng).expect("non-empty");
                let free: Vec<usize> = by_category[c].iter().copied().filter(|&i| !taken[i]).collect();
                free.choose(&mut rng).copied()
            } else {
                None
            };
            let pick = pick.unwrap_or_else(|| loop {
                let i = rng.random_range(0..n);
                if !taken[i] {
                    break i;
                }
            });
            taken[pick] = true;
            chosen.push(pick);
        }
        let mut times: Vec<i64> = (0..per_user)
            .map(|_| config.now - rng.random_range(1..=365 * DAY))
            .collect();
        times.sort_unstable();
        if u == 0 {
            *times.last_mut().expect("per_user > 0") = config.now;
        }
        for (i, t) in chosen.into_iter().zip(times) {
            interactions.push(Interaction {
                user_id: user_id.clone(),
                item_id: items[i].item_id.clone(),
                timestamp: t,
            });
        }
    }

    Dataset::new(items, interactions, config.holdout_len)
}
