//! Deterministic synthetic sequence tasks.
//!
//! Three task kinds provide `(prompt, target)` pairs at desk scale:
//!
//! - `copy`: the target is the prompt body reversed.
//! - `modular-sum`: the target is the running sum of the prompt body modulo
//!   `vocab.size - 3`.
//! - `weighted-grammar`: the target is sampled from a fixed stochastic
//!   right-linear grammar seeded by the last prompt token.
//!
//! Prompts start with BOS, targets end with EOS, PAD never appears inside
//! either.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::{Error, Result, TokenId};

/// Token alphabet with three reserved ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

impl Vocab {
    /// Vocabulary of `size` tokens with BOS, EOS and PAD occupying the top
    /// three ids, leaving `0..size-3` as content tokens.
    pub fn new(size: u32) -> Result<Self> {
        if size < 4 {
            return Err(Error::config("vocab.size", format!("must be >= 4, got {size}")));
        }
        let vocab = Vocab { size, bos: size - 3, eos: size - 2, pad: size - 1 };
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::config("vocab.size", format!("must be >= 4, got {}", self.size)));
        }
        for (name, id) in [("vocab.bos", self.bos), ("vocab.eos", self.eos), ("vocab.pad", self.pad)] {
            if id >= self.size {
                return Err(Error::config(name, format!("id {id} outside vocabulary of size {}", self.size)));
            }
        }
        if self.bos == self.eos || self.bos == self.pad || self.eos == self.pad {
            return Err(Error::config("vocab", "BOS, EOS and PAD must be distinct"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn is_reserved(&self, token: TokenId) -> bool {
        token == self.bos || token == self.eos || token == self.pad
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token < self.size
    }

    /// Non-reserved token ids in ascending order.
    pub fn content_tokens(&self) -> Vec<TokenId> {
        (0..self.size).filter(|&t| !self.is_reserved(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    ModularSum,
    WeightedGrammar,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::ModularSum => "modular-sum",
            TaskKind::WeightedGrammar => "weighted-grammar",
        })
    }
}

/// Inclusive length range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

impl LengthRange {
    pub const fn new(min: usize, max: usize) -> Self {
        LengthRange { min, max }
    }

    fn intersect(self, other: LengthRange) -> Option<LengthRange> {
        let min = self.min.max(other.min);
        let max = self.max.min(other.max);
        (min <= max).then_some(LengthRange { min, max })
    }
}

/// Task description. `prompt_len` counts body tokens (BOS excluded);
/// `target_len` counts target tokens including the closing EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab: Vocab,
    pub prompt_len: LengthRange,
    pub target_len: LengthRange,
    pub seed: u64,
}

impl TaskSpec {
    /// Desk-scale defaults for each kind over a 16-token vocabulary.
    ///
    /// Lengths are short because an order-2 table can only reverse a
    /// single-token body: once the first output token is emitted its context
    /// is `(v, v)` whatever preceded `v`. Modular-sum bodies have fixed
    /// length 2 so that an order-3 teacher sees no ambiguous context.
    pub fn desk_default(kind: TaskKind, seed: u64) -> Self {
        let vocab = Vocab::new(16).expect("16 >= 4");
        let (prompt_len, target_len) = match kind {
            TaskKind::Copy => (LengthRange::new(1, 1), LengthRange::new(2, 2)),
            TaskKind::ModularSum => (LengthRange::new(2, 2), LengthRange::new(3, 3)),
            TaskKind::WeightedGrammar => (LengthRange::new(1, 3), LengthRange::new(4, 12)),
        };
        TaskSpec { kind, vocab, prompt_len, target_len, seed }
    }

    pub fn modulus(&self) -> u32 {
        self.vocab.size - 3
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        check_range("prompt_len", self.prompt_len)?;
        check_range("target_len", self.target_len)?;
        match self.kind {
            TaskKind::Copy | TaskKind::ModularSum => {
                self.body_range()?;
            }
            TaskKind::WeightedGrammar => {}
        }
        if self.kind == TaskKind::ModularSum {
            if self.modulus() < 2 {
                return Err(Error::config("vocab", "modular-sum needs at least two digits (vocab size >= 5)"));
            }
            if let Some(clash) = (0..self.modulus()).find(|&d| self.vocab.is_reserved(d)) {
                return Err(Error::config("vocab", format!("digit token {clash} collides with a reserved id")));
            }
        }
        Ok(())
    }

    /// Body lengths usable by the deterministic kinds, whose target length is
    /// always body length + 1.
    fn body_range(&self) -> Result<LengthRange> {
        let from_target =
            LengthRange::new(self.target_len.min.saturating_sub(1), self.target_len.max.saturating_sub(1));
        self.prompt_len.intersect(from_target).filter(|r| r.max >= 1).ok_or_else(|| {
            Error::config(
                "target_len",
                format!(
                    "{} targets are one token longer than the body; prompt_len {:?} and target_len {:?} are incompatible",
                    self.kind, self.prompt_len, self.target_len
                ),
            )
        })
    }
}

fn check_range(field: &str, range: LengthRange) -> Result<()> {
    if range.min == 0 {
        return Err(Error::config(field, "minimum length must be positive"));
    }
    if range.min > range.max {
        return Err(Error::config(field, format!("min {} exceeds max {}", range.min, range.max)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl Example {
    /// Prompt without its leading BOS.
    pub fn body(&self) -> &[TokenId] {
        &self.prompt[1..]
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.prompt.first() != Some(&vocab.bos) {
            return Err(Error::contract(format!("example {}: prompt must begin with BOS", self.id)));
        }
        if self.target.last() != Some(&vocab.eos) {
            return Err(Error::contract(format!("example {}: target must end with EOS", self.id)));
        }
        let tokens = self.prompt.iter().chain(&self.target);
        for &t in tokens {
            if !vocab.contains(t) {
                return Err(Error::contract(format!("example {}: token {t} outside vocabulary", self.id)));
            }
            if t == vocab.pad {
                return Err(Error::contract(format!("example {}: PAD inside sequence", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Split names and the order they are generated in.
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Example]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Generates train/valid/test splits. Each split draws from its own
/// substream of `spec.seed`, so the result is a pure function of the inputs.
pub fn generate_dataset(spec: &TaskSpec, n_train: usize, n_valid: usize, n_test: usize) -> Result<Dataset> {
    spec.validate()?;
    for (field, n) in [("n_train", n_train), ("n_valid", n_valid), ("n_test", n_test)] {
        if n == 0 {
            return Err(Error::config(field, "split size must be >= 1"));
        }
    }
    Ok(Dataset {
        train: generate_split(spec, "train", n_train)?,
        valid: generate_split(spec, "valid", n_valid)?,
        test: generate_split(spec, "test", n_test)?,
    })
}

fn generate_split(spec: &TaskSpec, split: &str, n: usize) -> Result<Vec<Example>> {
    let mut rng = substream(spec.seed, &["data", split]);
    let content = spec.vocab.content_tokens();
    let vocab = spec.vocab;
    (0..n)
        .map(|index| {
            let id = format!("{split}-{index:06}");
            let (body, target) = match spec.kind {
                TaskKind::Copy => {
                    let range = spec.body_range()?;
                    let len = rng.gen_range(range.min..=range.max);
                    let body: Vec<TokenId> = (0..len).map(|_| content[rng.gen_range(0..content.len())]).collect();
                    let target = copy_target(&body, &vocab);
                    (body, target)
                }
                TaskKind::ModularSum => {
                    let range = spec.body_range()?;
                    let len = rng.gen_range(range.min..=range.max);
                    let modulus = spec.modulus();
                    // zero digits would make (b, 0, b) both a mid-sum and a final context
                    let body: Vec<TokenId> = (0..len).map(|_| rng.gen_range(1..modulus)).collect();
                    let target = modular_sum_target(&body, modulus, &vocab);
                    (body, target)
                }
                TaskKind::WeightedGrammar => {
                    let len = rng.gen_range(spec.prompt_len.min..=spec.prompt_len.max);
                    let body: Vec<TokenId> = (0..len).map(|_| content[rng.gen_range(0..content.len())]).collect();
                    let target_len = rng.gen_range(spec.target_len.min..=spec.target_len.max);
                    let target =
                        grammar_target(*body.last().expect("len >= 1"), target_len, &content, &vocab, &mut rng);
                    (body, target)
                }
            };
            let mut prompt = Vec::with_capacity(body.len() + 1);
            prompt.push(vocab.bos);
            prompt.extend(body);
            Ok(Example { id, prompt, target })
        })
        .collect()
}

fn copy_target(body: &[TokenId], vocab: &Vocab) -> Vec<TokenId> {
    let mut target: Vec<TokenId> = body.iter().rev().copied().collect();
    target.push(vocab.eos);
    target
}

fn modular_sum_target(body: &[TokenId], modulus: u32, vocab: &Vocab) -> Vec<TokenId> {
    let mut acc = 0u32;
    let mut target: Vec<TokenId> = body
        .iter()
        .map(|&d| {
            acc = (acc + d) % modulus;
            acc
        })
        .collect();
    target.push(vocab.eos);
    target
}

/// Successor offsets and weights of the right-linear grammar
/// `A_s -> s' A_s'` over content tokens.
type Successor = fn(usize, usize) -> usize;

const GRAMMAR_RULES: [(Successor, f64); 3] =
    [(|s, n| (s + 1) % n, 0.6), (|s, n| (s + 3) % n, 0.3), (|s, n| (3 * s + 1) % n, 0.1)];

fn grammar_target(
    start: TokenId,
    target_len: usize,
    content: &[TokenId],
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Vec<TokenId> {
    let n = content.len();
    let mut state = content.iter().position(|&t| t == start).unwrap_or(0);
    let mut target = Vec::with_capacity(target_len);
    for _ in 1..target_len {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = GRAMMAR_RULES[GRAMMAR_RULES.len() - 1].0(state, n);
        for (rule, weight) in GRAMMAR_RULES {
            acc += weight;
            if u < acc {
                next = rule(state, n);
                break;
            }
        }
        state = next;
        target.push(content[state]);
    }
    target.push(vocab.eos);
    target
}

/// True iff the sequences agree once trailing EOS/PAD tokens are stripped.
pub fn exact_match(prediction: &[TokenId], target: &[TokenId], vocab: &Vocab) -> bool {
    strip_trailing(prediction, vocab) == strip_trailing(target, vocab)
}

fn strip_trailing<'a>(tokens: &'a [TokenId], vocab: &Vocab) -> &'a [TokenId] {
    let end = tokens.iter().rposition(|&t| t != vocab.eos && t != vocab.pad).map_or(0, |i| i + 1);
    &tokens[..end]
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for example in examples {
        serde_json::to_writer(&mut out, example)?;
        out.write_all(b"\n").map_err(|e| Error::io("writing examples", e))?;
    }
    out.flush().map_err(|e| Error::io("flushing examples", e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut examples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io("reading examples", e))?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(serde_json::from_str(&line)?);
    }
    Ok(examples)
}
