//! Object-level prompts, base-prompt assembly and object-restricted
//! embeddings (ORE).
//!
//! Each target object prompt is encoded in isolation, so none of its rows
//! (including the padded EOS rows) can carry another object's semantics.
//! The base embedding used for cross-attention values is the plain encoding
//! of the joined prompt with each object's token rows spliced back in from
//! its isolated encoding.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed::{rng_from_seed, stable_hash};
use crate::tensor::Matrix;

/// Joins object prompts into the base prompt.
pub const CONNECTIVE: &str = " and ";

pub const BOS_TOKEN: u32 = 49406;
pub const EOS_TOKEN: u32 = 49407;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("edit request has no object prompt pairs")]
    EmptyRequest,
    #[error("invalid prompt pair {index}: {reason}")]
    InvalidPair { index: usize, reason: String },
    #[error("prompt needs {tokens} tokens but the encoder allows at most {limit}")]
    Overflow { tokens: usize, limit: usize },
    #[error("encoder returned a {got_rows}x{got_cols} embedding, expected {rows}x{cols}")]
    EncoderShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("eos strategy `ets` needs one stripped prompt per object ({expected}), got {got}")]
    MissingStrippedPrompt { expected: usize, got: usize },
    #[error("unknown eos strategy `{0}`")]
    UnknownStrategy(String),
}

/// One `(source, target)` object prompt pair with its 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPromptPair {
    pub index: usize,
    pub source: String,
    pub target: String,
}

impl ObjectPromptPair {
    pub fn new(index: usize, source: impl Into<String>, target: impl Into<String>) -> Result<Self, PromptError> {
        let pair = Self {
            index,
            source: source.into().trim().to_string(),
            target: target.into().trim().to_string(),
        };
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(PromptError::InvalidPair {
                index,
                reason: "source and target prompts must be non-empty".into(),
            });
        }
        Ok(pair)
    }

    /// Parses `"src->tgt"`.
    pub fn parse(index: usize, spec: &str) -> Result<Self, PromptError> {
        let (src, tgt) = spec.split_once("->").ok_or_else(|| PromptError::InvalidPair {
            index,
            reason: format!("expected \"source->target\", got {spec:?}"),
        })?;
        Self::new(index, src, tgt)
    }

    pub fn side(&self, side: PromptSide) -> &str {
        match side {
            PromptSide::Source => &self.source,
            PromptSide::Target => &self.target,
        }
    }
}

/// Checks non-emptiness and that indices run `1..=K` in order.
pub fn validate_pairs(pairs: &[ObjectPromptPair]) -> Result<(), PromptError> {
    if pairs.is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    for (pos, pair) in pairs.iter().enumerate() {
        if pair.index != pos + 1 {
            return Err(PromptError::InvalidPair {
                index: pair.index,
                reason: format!("indices must be contiguous from 1, expected {}", pos + 1),
            });
        }
        if pair.source.trim().is_empty() || pair.target.trim().is_empty() {
            return Err(PromptError::InvalidPair {
                index: pair.index,
                reason: "source and target prompts must be non-empty".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSide {
    Source,
    Target,
}

/// How the padded-EOS rows of the base embedding are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EosStrategy {
    /// Splice isolated object token rows into their spans.
    #[default]
    Ore,
    /// Plain encoding of the base prompt.
    Naive,
    /// Padded-EOS rows set to zero.
    Zeros,
    /// Padded-EOS rows set to the BOS embedding.
    Bos,
    /// Padded-EOS rows taken from the empty-prompt encoding.
    Empty,
    /// Padded-EOS rows taken from the encoding of attribute-free prompts.
    Ets,
}

impl EosStrategy {
    pub const ALL: [EosStrategy; 6] = [
        EosStrategy::Ore,
        EosStrategy::Naive,
        EosStrategy::Zeros,
        EosStrategy::Bos,
        EosStrategy::Empty,
        EosStrategy::Ets,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EosStrategy::Ore => "ore",
            EosStrategy::Naive => "naive",
            EosStrategy::Zeros => "zeros",
            EosStrategy::Bos => "bos",
            EosStrategy::Empty => "empty",
            EosStrategy::Ets => "ets",
        }
    }
}

impl fmt::Display for EosStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EosStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

/// Padded `L × d` prompt embedding.
///
/// Row 0 is BOS, rows `1..content_len-1` are prompt tokens, row
/// `content_len - 1` is the first EOS and every row from `content_len` on is
/// a padded EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub rows: Matrix,
    pub token_ids: Vec<u32>,
    pub content_len: usize,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    /// Rows holding prompt tokens (excludes BOS and EOS).
    pub fn token_rows(&self) -> Range<usize> {
        1..self.content_len.saturating_sub(1)
    }

    /// Rows holding padded EOS embeddings.
    pub fn padded_rows(&self) -> Range<usize> {
        self.content_len..self.len()
    }
}

/// Text encoder adapter.
///
/// `encode` must return an embedding of exactly `max_len() × width()`.
/// Implementations that are not thread-safe should not implement `Sync`;
/// the pipeline only calls an encoder from one thread at a time.
pub trait TextEncoder {
    /// Padded prompt length `L`.
    fn max_len(&self) -> usize;
    /// Embedding width `d`.
    fn width(&self) -> usize;
    /// Prompt tokens without BOS/EOS.
    fn tokenize(&self, text: &str) -> Vec<u32>;
    fn encode(&self, text: &str) -> Result<EmbeddingMatrix, PromptError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockEncoderConfig {
    pub width: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for MockEncoderConfig {
    fn default() -> Self {
        Self {
            width: 32,
            max_len: 77,
            seed: 0x0A1E,
        }
    }
}

/// Deterministic stand-in for a causal text encoder.
///
/// Every token id maps to a fixed pseudo-random unit vector. Token rows mix
/// in a summary of the preceding tokens and all EOS rows share one vector
/// derived from the whole prompt, so a joined prompt entangles its objects
/// the way an autoregressive encoder does.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    config: MockEncoderConfig,
}

const PREFIX_MIX: f32 = 0.5;

impl MockEncoder {
    pub fn new(config: MockEncoderConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.config
    }

    fn unit_vector(&self, key: u64) -> Vec<f32> {
        let mut rng = rng_from_seed(self.config.seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let v: Vec<f32> = (0..self.config.width).map(|_| rng.sample(StandardNormal)).collect();
        normalized(v)
    }

    fn token_vector(&self, token: u32) -> Vec<f32> {
        self.unit_vector(u64::from(token) + 1)
    }
}

impl Default for MockEncoder {
    fn default() -> Self {
        Self::new(MockEncoderConfig::default())
    }
}

fn normalized(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Lowercases, splits on whitespace, and emits every non-alphanumeric
/// character as its own token.
pub fn mock_tokenize(text: &str) -> Vec<u32> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            words.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
        .iter()
        .map(|w| (stable_hash(&[w.as_bytes()]) % u64::from(BOS_TOKEN)) as u32)
        .collect()
}

impl TextEncoder for MockEncoder {
    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn width(&self) -> usize {
        self.config.width
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        mock_tokenize(text)
    }

    fn encode(&self, text: &str) -> Result<EmbeddingMatrix, PromptError> {
        let (len, width) = (self.config.max_len, self.config.width);
        let tokens = self.tokenize(text);
        let limit = len.saturating_sub(2);
        if tokens.len() > limit {
            return Err(PromptError::Overflow {
                tokens: tokens.len(),
                limit,
            });
        }
        let content_len = tokens.len() + 2;
        let mut rows = Matrix::zeros(len, width);
        rows.set_row(0, &self.token_vector(BOS_TOKEN));

        let mut prefix = vec![0.0f32; width];
        for (t, &tok) in tokens.iter().enumerate() {
            let own = self.token_vector(tok);
            let context = normalized(prefix.clone());
            let row: Vec<f32> = own.iter().zip(&context).map(|(a, c)| a + PREFIX_MIX * c).collect();
            rows.set_row(t + 1, &normalized(row));
            prefix.iter_mut().zip(&own).for_each(|(p, o)| *p += o);
        }

        let ids_bytes: Vec<u8> = tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
        let keyed = self.unit_vector(stable_hash(&[b"eos", &ids_bytes]));
        let eos = normalized(keyed.iter().zip(&prefix).map(|(k, p)| k + p).collect());
        for r in content_len - 1..len {
            rows.set_row(r, &eos);
        }

        let mut token_ids = Vec::with_capacity(len);
        token_ids.push(BOS_TOKEN);
        token_ids.extend_from_slice(&tokens);
        token_ids.resize(len, EOS_TOKEN);
        Ok(EmbeddingMatrix {
            rows,
            token_ids,
            content_len,
        })
    }
}

/// Joined prompt plus, per object, the embedding rows its tokens occupy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePrompt {
    pub text: String,
    pub spans: Vec<Range<usize>>,
}

pub fn join_prompts<'a>(prompts: impl IntoIterator<Item = &'a str>) -> String {
    prompts.into_iter().collect::<Vec<_>>().join(CONNECTIVE)
}

/// Joins one side of the pairs with `" and "` and maps each object to its
/// row range in the padded base embedding (row 0 is BOS, so the first span
/// starts at 1).
pub fn build_base_prompt(
    pairs: &[ObjectPromptPair],
    side: PromptSide,
    encoder: &dyn TextEncoder,
) -> Result<BasePrompt, PromptError> {
    if pairs.is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    let text = join_prompts(pairs.iter().map(|p| p.side(side)));
    let base_tokens = encoder.tokenize(&text);
    let limit = encoder.max_len().saturating_sub(2);
    if base_tokens.len() > limit {
        return Err(PromptError::Overflow {
            tokens: base_tokens.len(),
            limit,
        });
    }

    let connective_len = encoder.tokenize(CONNECTIVE).len();
    let mut spans = Vec::with_capacity(pairs.len());
    let mut cursor = 0usize;
    let mut offset = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        let object_tokens = encoder.tokenize(pair.side(side));
        if object_tokens.is_empty() {
            return Err(PromptError::InvalidPair {
                index: pair.index,
                reason: "prompt produced no tokens".into(),
            });
        }
        if i > 0 {
            offset += connective_len;
        }
        let start = find_subsequence(&base_tokens[cursor.min(base_tokens.len())..], &object_tokens)
            .map(|pos| cursor + pos)
            // Merges across the connective can hide the subsequence.
            .unwrap_or(offset);
        spans.push(1 + start..1 + start + object_tokens.len());
        cursor = start + object_tokens.len();
        offset += object_tokens.len();
    }
    Ok(BasePrompt { text, spans })
}

fn find_subsequence(haystack: &[u32], needle: &[u32]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Per-object isolated embeddings plus the base embedding built from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OreSet {
    pub per_object: Vec<EmbeddingMatrix>,
    /// Base embedding after applying `eos_strategy`; feeds `V_base`.
    pub base: EmbeddingMatrix,
    /// Unmodified encoding of the base prompt; feeds the attention keys.
    pub base_plain: EmbeddingMatrix,
    pub spans: Vec<Range<usize>>,
    pub base_prompt: String,
    pub eos_strategy: EosStrategy,
}

fn check_shape(encoder: &dyn TextEncoder, e: &EmbeddingMatrix) -> Result<(), PromptError> {
    let (rows, cols) = (encoder.max_len(), encoder.width());
    if e.rows.shape() != (rows, cols) || e.token_ids.len() != rows || e.content_len > rows || e.content_len < 2 {
        return Err(PromptError::EncoderShape {
            rows,
            cols,
            got_rows: e.rows.rows(),
            got_cols: e.rows.cols(),
        });
    }
    Ok(())
}

fn encode_checked(encoder: &dyn TextEncoder, text: &str) -> Result<EmbeddingMatrix, PromptError> {
    let e = encoder.encode(text)?;
    check_shape(encoder, &e)?;
    Ok(e)
}

/// Builds the [`OreSet`] for one side of the request.
///
/// `stripped` supplies one attribute-free prompt per object and is only
/// consulted by [`EosStrategy::Ets`].
pub fn encode_object_restricted(
    pairs: &[ObjectPromptPair],
    side: PromptSide,
    encoder: &dyn TextEncoder,
    strategy: EosStrategy,
    stripped: Option<&[String]>,
) -> Result<OreSet, PromptError> {
    let base_prompt = build_base_prompt(pairs, side, encoder)?;
    let per_object = pairs
        .iter()
        .map(|p| encode_checked(encoder, p.side(side)))
        .collect::<Result<Vec<_>, _>>()?;
    let base_plain = encode_checked(encoder, &base_prompt.text)?;
    let mut base = base_plain.clone();

    let replace_padded = |base: &mut EmbeddingMatrix, source: &EmbeddingMatrix| {
        for r in base.padded_rows() {
            base.rows.set_row(r, source.rows.row(r));
        }
    };

    match strategy {
        EosStrategy::Ore => {
            for (span, object) in base_prompt.spans.iter().zip(&per_object) {
                for (offset, row) in span.clone().enumerate() {
                    base.rows.set_row(row, object.rows.row(1 + offset));
                }
            }
        }
        EosStrategy::Naive => {}
        EosStrategy::Zeros => {
            let zero = vec![0.0; base.width()];
            for r in base.padded_rows() {
                base.rows.set_row(r, &zero);
            }
        }
        EosStrategy::Bos => {
            let bos = base_plain.rows.row(0).to_vec();
            for r in base.padded_rows() {
                base.rows.set_row(r, &bos);
            }
        }
        EosStrategy::Empty => {
            let empty = encode_checked(encoder, "")?;
            replace_padded(&mut base, &empty);
        }
        EosStrategy::Ets => {
            let stripped = stripped.unwrap_or(&[]);
            if stripped.len() != pairs.len() || stripped.iter().any(|s| s.trim().is_empty()) {
                return Err(PromptError::MissingStrippedPrompt {
                    expected: pairs.len(),
                    got: stripped.iter().filter(|s| !s.trim().is_empty()).count(),
                });
            }
            let simplified = encode_checked(encoder, &join_prompts(stripped.iter().map(String::as_str)))?;
            replace_padded(&mut base, &simplified);
        }
    }

    Ok(OreSet {
        per_object,
        base,
        base_plain,
        spans: base_prompt.spans,
        base_prompt: base_prompt.text,
        eos_strategy: strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(targets: &[&str]) -> Vec<ObjectPromptPair> {
        targets
            .iter()
            .enumerate()
            .map(|(i, t)| ObjectPromptPair::new(i + 1, format!("object {i}"), *t).unwrap())
            .collect()
    }

    fn bits(row: &[f32]) -> Vec<u32> {
        row.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn base_prompt_joins_with_and() {
        let enc = MockEncoder::default();
        let p = vec![
            ObjectPromptPair::new(1, "a yellow bell pepper", "x").unwrap(),
            ObjectPromptPair::new(2, "a red bell pepper", "y").unwrap(),
        ];
        let base = build_base_prompt(&p, PromptSide::Source, &enc).unwrap();
        assert_eq!(base.text, "a yellow bell pepper and a red bell pepper");
        assert_eq!(base.spans, vec![1..5, 6..10]);
    }

    #[test]
    fn single_object_base_is_identity() {
        let enc = MockEncoder::default();
        let base = build_base_prompt(&pairs(&["a red pumpkin"]), PromptSide::Target, &enc).unwrap();
        assert_eq!(base.text, "a red pumpkin");
        assert_eq!(base.spans, vec![1..4]);
    }

    #[test]
    fn three_long_prompts_overflow() {
        let enc = MockEncoder::default();
        let long: String = (0..30).map(|i| format!("w{i} ")).collect();
        assert_eq!(enc.tokenize(&long).len(), 30);
        let p = pairs(&[&long, &long, &long]);
        let err = build_base_prompt(&p, PromptSide::Target, &enc).unwrap_err();
        assert_eq!(err, PromptError::Overflow { tokens: 92, limit: 75 });
    }

    #[test]
    fn empty_request_rejected() {
        let enc = MockEncoder::default();
        assert_eq!(
            build_base_prompt(&[], PromptSide::Source, &enc).unwrap_err(),
            PromptError::EmptyRequest
        );
        assert_eq!(validate_pairs(&[]).unwrap_err(), PromptError::EmptyRequest);
    }

    #[test]
    fn pair_validation() {
        assert!(ObjectPromptPair::new(1, "  ", "cat").is_err());
        let p = ObjectPromptPair::parse(1, " a wolf -> a cat ").unwrap();
        assert_eq!((p.source.as_str(), p.target.as_str()), ("a wolf", "a cat"));
        assert!(ObjectPromptPair::parse(1, "a wolf").is_err());
        let mut ps = pairs(&["a", "b"]);
        ps[1].index = 3;
        assert!(validate_pairs(&ps).is_err());
    }

    #[test]
    fn duplicate_objects_get_ordered_spans() {
        let enc = MockEncoder::default();
        let p = pairs(&["a cat", "a cat"]);
        let base = build_base_prompt(&p, PromptSide::Target, &enc).unwrap();
        assert_eq!(base.spans, vec![1..3, 4..6]);
    }

    /// Tokenizer that merges "and" with a following "a", hiding the
    /// second object's subsequence in the joined prompt.
    struct MergingEncoder(MockEncoder);

    impl TextEncoder for MergingEncoder {
        fn max_len(&self) -> usize {
            self.0.max_len()
        }
        fn width(&self) -> usize {
            self.0.width()
        }
        fn tokenize(&self, text: &str) -> Vec<u32> {
            mock_tokenize(&text.replace("and a ", "anda "))
        }
        fn encode(&self, text: &str) -> Result<EmbeddingMatrix, PromptError> {
            self.0.encode(text)
        }
    }

    #[test]
    fn span_falls_back_to_offsets_when_merged() {
        let enc = MergingEncoder(MockEncoder::default());
        let p = pairs(&["a red cat", "a blue dog"]);
        let base = build_base_prompt(&p, PromptSide::Target, &enc).unwrap();
        // "a red cat anda blue dog": the fallback assumes one connective token.
        assert_eq!(base.spans, vec![1..4, 5..8]);
    }

    #[test]
    fn ore_object_rows_follow_bos_token_eos_layout() {
        let enc = MockEncoder::default();
        let ore = encode_object_restricted(&pairs(&["a red diamond"]), PromptSide::Target, &enc, EosStrategy::Ore, None)
            .unwrap();
        let e1 = &ore.per_object[0];
        assert_eq!(e1.content_len, 5);
        assert_eq!(e1.token_ids[0], BOS_TOKEN);
        assert_eq!(&e1.token_ids[1..4], enc.tokenize("a red diamond").as_slice());
        assert!(e1.token_ids[4..].iter().all(|&t| t == EOS_TOKEN));
        assert_eq!(e1.rows.shape(), (77, 32));
        assert_eq!(e1.rows.row(4), e1.rows.row(76));
    }

    #[test]
    fn isolated_rows_do_not_depend_on_other_objects() {
        let enc = MockEncoder::default();
        let alone = encode_object_restricted(&pairs(&["a red diamond"]), PromptSide::Target, &enc, EosStrategy::Ore, None)
            .unwrap();
        let crowded = encode_object_restricted(
            &pairs(&["a red diamond", "a green apple", "a blue boat"]),
            PromptSide::Target,
            &enc,
            EosStrategy::Ore,
            None,
        )
        .unwrap();
        assert_eq!(bits(alone.per_object[0].rows.as_slice()), bits(crowded.per_object[0].rows.as_slice()));
    }

    #[test]
    fn joined_encoding_is_entangled() {
        let enc = MockEncoder::default();
        let ore = encode_object_restricted(&pairs(&["a red diamond", "a green apple"]), PromptSide::Target, &enc, EosStrategy::Ore, None)
            .unwrap();
        let span = ore.spans[1].clone();
        assert_ne!(ore.base_plain.rows.row(span.start), ore.per_object[1].rows.row(1));
        assert_eq!(ore.base.rows.row(span.start), ore.per_object[1].rows.row(1));
        // Padded EOS rows of the base stay from the plain encoding.
        let last = ore.base.len() - 1;
        assert_eq!(ore.base.rows.row(last), ore.base_plain.rows.row(last));
    }

    #[test]
    fn zeros_strategy_clears_padded_rows() {
        let enc = MockEncoder::default();
        let ore = encode_object_restricted(&pairs(&["a red diamond", "a green apple"]), PromptSide::Target, &enc, EosStrategy::Zeros, None)
            .unwrap();
        for r in ore.base.padded_rows() {
            assert!(ore.base.rows.row(r).iter().all(|&v| v == 0.0));
        }
        assert!(ore.base.rows.row(ore.base.content_len - 1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn ets_requires_stripped_prompts() {
        let enc = MockEncoder::default();
        let p = pairs(&["a red truck", "a yellow boat"]);
        let err = encode_object_restricted(&p, PromptSide::Target, &enc, EosStrategy::Ets, None).unwrap_err();
        assert!(matches!(err, PromptError::MissingStrippedPrompt { expected: 2, got: 0 }));
        let stripped = vec!["a truck".to_string(), "a boat".to_string()];
        let ore = encode_object_restricted(&p, PromptSide::Target, &enc, EosStrategy::Ets, Some(&stripped)).unwrap();
        let simplified = enc.encode("a truck and a boat").unwrap();
        for r in ore.base.padded_rows() {
            assert_eq!(ore.base.rows.row(r), simplified.rows.row(r));
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in EosStrategy::ALL {
            assert_eq!(s.as_str().parse::<EosStrategy>().unwrap(), s);
        }
        assert!("bogus".parse::<EosStrategy>().is_err());
    }

    struct WrongShape;

    impl TextEncoder for WrongShape {
        fn max_len(&self) -> usize {
            77
        }
        fn width(&self) -> usize {
            32
        }
        fn tokenize(&self, text: &str) -> Vec<u32> {
            mock_tokenize(text)
        }
        fn encode(&self, _text: &str) -> Result<EmbeddingMatrix, PromptError> {
            Ok(EmbeddingMatrix {
                rows: Matrix::zeros(10, 32),
                token_ids: vec![0; 10],
                content_len: 2,
            })
        }
    }

    #[test]
    fn encoder_shape_is_checked() {
        let err = encode_object_restricted(&pairs(&["a cat"]), PromptSide::Target, &WrongShape, EosStrategy::Ore, None)
            .unwrap_err();
        assert!(matches!(err, PromptError::EncoderShape { got_rows: 10, .. }));
    }
}
