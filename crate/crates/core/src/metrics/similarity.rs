use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::MetricError;

/// Ratio denominators at or below this magnitude leave norm_sem undefined.
pub const NORM_EPSILON: f64 = 1e-6;
pub const DEFAULT_EMBEDDING_MODEL: &str = "sentence-transformers/distiluse-base-multilingual-cased-v1";

/// Text to fixed-dimension vector. Implementations must be deterministic
/// and safe to call from several threads.
pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError>;
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    /// cos(E(gen), E(ref)), both in the target language.
    pub sem_sim: f64,
    /// cos(E(gen), E(src)) / cos(E(ref), E(src)); `None` when the guard fires.
    pub norm_sem: Option<f64>,
    pub gen_src: f64,
    pub ref_src: f64,
}

pub fn similarity_scores(
    gen: &str,
    reference: &str,
    src: &str,
    embedder: &dyn Embedder,
) -> Result<SimilarityScores, MetricError> {
    for (name, s) in [("generated", gen), ("reference", reference), ("source", src)] {
        if s.trim().is_empty() {
            return Err(MetricError::EmptyInput(name));
        }
    }
    let e_gen = embedder.embed(gen)?;
    let e_ref = embedder.embed(reference)?;
    let e_src = embedder.embed(src)?;
    let sem_sim = cosine(&e_gen, &e_ref)?;
    let gen_src = cosine(&e_gen, &e_src)?;
    let ref_src = cosine(&e_ref, &e_src)?;
    let norm_sem = (ref_src.abs() > NORM_EPSILON).then(|| gen_src / ref_src);
    Ok(SimilarityScores {
        sem_sim,
        norm_sem,
        gen_src,
        ref_src,
    })
}

/// Offline embedder: the sum of pseudo-random per-token vectors, each seeded
/// by a hash of the lowercased token. Shared words give correlated vectors,
/// so it orders sentences sensibly without any model.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(token.as_bytes())
            .finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        for x in out.iter_mut() {
            *x += rng.random_range(-1.0..1.0);
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256, 0)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash(dim={},seed={})", self.dim, self.seed)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let lower = text.to_lowercase();
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for token in lower.split_whitespace() {
            self.token_vector(token, &mut v);
            any = true;
        }
        if !any {
            self.token_vector(&lower, &mut v);
        }
        Ok(v)
    }
}

/// Fixed string-to-vector table; unknown strings are an error.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.table.insert(text.to_string(), vector);
        self
    }
}

impl Embedder for TableEmbedder {
    fn id(&self) -> String {
        "table".into()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| MetricError::Embedder(format!("no vector for {text:?}")))
    }
}

/// Remote embedding service speaking the OpenAI-style `/embeddings` shape:
/// `{"model", "input": [text]}` in, `{"data": [{"embedding": [...]}]}` out.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }

    pub fn parse_response(body: &Value) -> Result<Vec<f64>, MetricError> {
        body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| MetricError::Embedder("response has no data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| MetricError::Embedder("non-numeric embedding entry".into()))
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http({})", self.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let body: Value = req
            .send_json(json!({"model": self.model, "input": [text]}))
            .map_err(|e| MetricError::Embedder(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| MetricError::Embedder(e.to_string()))?;
        Self::parse_response(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine(&[2.0, 2.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(MetricError::ZeroVector));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(MetricError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn table_embedder_ratio() {
        let e = TableEmbedder::new()
            .with("gen", vec![1.0, 0.0])
            .with("ref", vec![0.0, 1.0])
            .with("src", vec![1.0, 1.0])
            .with("orth", vec![1.0, -1.0]);
        let s = similarity_scores("gen", "ref", "src", &e).unwrap();
        assert_eq!(s.sem_sim, 0.0);
        assert!((s.norm_sem.unwrap() - 1.0).abs() < 1e-12);
        let undefined = similarity_scores("gen", "src", "orth", &e).unwrap();
        assert_eq!(undefined.norm_sem, None);
        assert!(similarity_scores("", "ref", "src", &e).is_err());
        assert!(matches!(
            similarity_scores("nope", "ref", "src", &e),
            Err(MetricError::Embedder(_))
        ));
    }

    #[test]
    fn hash_embedder_is_deterministic_and_lexical() {
        let e = HashEmbedder::default();
        assert_eq!(e.embed("Soap in a dish").unwrap(), e.embed("soap  in a DISH").unwrap());
        let a = e.embed("white soap in a dish").unwrap();
        let b = e.embed("white soap on a dish").unwrap();
        let c = e.embed("red car parked outside").unwrap();
        assert!(cosine(&a, &b).unwrap() > cosine(&a, &c).unwrap());
    }

    #[test]
    fn parses_embedding_response() {
        let v = HttpEmbedder::parse_response(&json!({"data": [{"embedding": [0.5, -1]}]})).unwrap();
        assert_eq!(v, vec![0.5, -1.0]);
        assert!(HttpEmbedder::parse_response(&json!({"error": "x"})).is_err());
    }

    fn vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 3).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(u in vector(), v in vector(), a in 0.01f64..100.0) {
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * a).collect();
            prop_assert!((c - cosine(&scaled, &v).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn equal_texts_have_unit_ratio(gen in "[a-z]{1,8}( [a-z]{1,8}){0,5}", src in "[a-z]{1,8}( [a-z]{1,8}){0,5}") {
            let s = similarity_scores(&gen, &gen, &src, &HashEmbedder::default()).unwrap();
            if let Some(n) = s.norm_sem {
                prop_assert_eq!(n, 1.0);
            }
        }
    }
}
