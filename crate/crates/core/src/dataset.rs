//! Random-policy transition datasets: collection, batching, the
//! within-batch action shuffle, and JSON Lines persistence.
//!
//! File layout: the first line is a JSON header
//! `{"format":"mdpval-dataset","version":1,"d":..,"meta":{..}}`, followed by
//! one JSON object per transition with fields
//! `episode_id, t, state, action, reward, next_state`. Paths ending in
//! `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{Env, RandomPolicy, Transition, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::rng;

const FORMAT: &str = "mdpval-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Env { env_id: u8 },
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: Source,
    pub env_seed: Option<u64>,
    pub policy_seed: Option<u64>,
    pub horizon: Option<usize>,
    pub num_episodes: usize,
    pub num_transitions: usize,
}

/// How `collect` handles a batch size that does not split into whole episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemainderPolicy {
    /// Refuse: `batch_size` must be a multiple of the episode length.
    #[default]
    Strict,
    /// Roll out whole episodes until enough transitions exist, then truncate.
    PadEpisodes,
}

/// How `batches` treats a trailing batch shorter than `batch_size`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchPolicy {
    #[default]
    DropRemainder,
    AllowPartial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub d: usize,
    /// Row-major `len x d`.
    pub states: Vec<f64>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    /// Row-major `len x d`.
    pub next_states: Vec<f64>,
}

impl MiniBatch {
    pub fn from_transitions<'a, I>(d: usize, transitions: I) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let mut b = MiniBatch {
            d,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
        };
        for tr in transitions {
            b.states.extend_from_slice(&tr.state);
            b.actions.push(tr.action);
            b.rewards.push(tr.reward);
            b.next_states.extend_from_slice(&tr.next_state);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state(&self, row: usize) -> &[f64] {
        &self.states[row * self.d..(row + 1) * self.d]
    }

    pub fn next_state(&self, row: usize) -> &[f64] {
        &self.next_states[row * self.d..(row + 1) * self.d]
    }
}

/// Roll out random-policy episodes until `num_batches * batch_size`
/// transitions exist.
pub fn collect(
    env: &mut Env,
    num_batches: usize,
    batch_size: usize,
    policy_seed: u64,
    remainder: RemainderPolicy,
) -> Result<Dataset> {
    let spec = *env.spec();
    if num_batches == 0 || batch_size == 0 {
        return Err(Error::Config(
            "num_batches and batch_size must be positive".into(),
        ));
    }
    if remainder == RemainderPolicy::Strict && !batch_size.is_multiple_of(spec.horizon) {
        return Err(Error::Config(format!(
            "batch_size {batch_size} is not a multiple of the episode length {}; \
             use the pad-episodes remainder policy",
            spec.horizon
        )));
    }
    let target = num_batches * batch_size;
    let num_episodes = target.div_ceil(spec.horizon);
    let mut policy = RandomPolicy::new(policy_seed);
    let mut transitions = Vec::with_capacity(num_episodes * spec.horizon);
    for id in 0..num_episodes as u64 {
        transitions.extend(env.rollout_with(&mut policy, id).transitions);
    }
    transitions.truncate(target);
    Ok(Dataset {
        d: spec.d,
        meta: DatasetMeta {
            source: Source::Env {
                env_id: spec.env_id,
            },
            env_seed: Some(spec.seed),
            policy_seed: Some(policy_seed),
            horizon: Some(spec.horizon),
            num_episodes,
            num_transitions: transitions.len(),
        },
        transitions,
    })
}

/// Split into mini-batches. Without a seed the collection order is kept;
/// with one, rows are permuted by a seeded shuffle first.
pub fn batches(
    ds: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    policy: BatchPolicy,
) -> Result<Vec<MiniBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let order = row_order(ds.transitions.len(), shuffle_seed);
    let chunks = order.chunks(batch_size);
    let out: Vec<MiniBatch> = chunks
        .filter(|c| c.len() == batch_size || policy == BatchPolicy::AllowPartial)
        .map(|c| MiniBatch::from_transitions(ds.d, c.iter().map(|&i| &ds.transitions[i])))
        .collect();
    if out.is_empty() {
        return Err(Error::Config(format!(
            "dataset of {} transitions yields no full batch of {batch_size}",
            ds.transitions.len()
        )));
    }
    Ok(out)
}

pub(crate) fn row_order(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut rng::rng_from(seed));
    }
    order
}

/// Permute the batch's actions uniformly at random, leaving states,
/// rewards and next states in place.
pub fn shuffle_actions_within_batch(b: &MiniBatch, seed: u64) -> MiniBatch {
    let mut out = b.clone();
    out.actions.shuffle(&mut rng::rng_from(seed));
    out
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    d: usize,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn num_episodes(&self) -> usize {
        self.meta.num_episodes
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let mut current = None;
        for (row, tr) in self.transitions.iter().enumerate() {
            if tr.state.len() != self.d || tr.next_state.len() != self.d {
                return Err(Error::Validation(format!(
                    "transition {row}: expected dimension {}, got state {} / next_state {}",
                    self.d,
                    tr.state.len(),
                    tr.next_state.len()
                )));
            }
            if tr.action as usize >= NUM_ACTIONS {
                return Err(Error::Validation(format!(
                    "transition {row}: action {} out of range",
                    tr.action
                )));
            }
            let finite = tr.reward.is_finite()
                && tr.state.iter().chain(&tr.next_state).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Validation(format!(
                    "transition {row}: non-finite value"
                )));
            }
            if current != Some(tr.episode_id) {
                if !seen.insert(tr.episode_id) {
                    return Err(Error::Validation(format!(
                        "transition {row}: episode {} is not contiguous",
                        tr.episode_id
                    )));
                }
                current = Some(tr.episode_id);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let sink: Box<dyn Write> = if is_gzip(path) {
            Box::new(GzEncoder::new(file, Compression::default()))
        } else {
            Box::new(file)
        };
        let mut w = BufWriter::new(sink);
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            d: self.d,
            meta: self.meta.clone(),
        };
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for tr in &self.transitions {
            serde_json::to_writer(&mut w, tr)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?
            .flush()
            .map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let source: Box<dyn Read> = if is_gzip(path) {
            Box::new(GzDecoder::new(file))
        } else {
            Box::new(file)
        };
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };

        let mut lines = BufReader::new(source).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header =
            serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(parse_err(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }

        let mut transitions = Vec::with_capacity(header.meta.num_transitions);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let tr: Transition =
                serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
            if tr.state.len() != header.d || tr.next_state.len() != header.d {
                return Err(Error::Validation(format!(
                    "line {lineno}: expected dimension {}, got state {} / next_state {}",
                    header.d,
                    tr.state.len(),
                    tr.next_state.len()
                )));
            }
            transitions.push(tr);
        }
        if transitions.len() != header.meta.num_transitions {
            return Err(parse_err(
                transitions.len() + 2,
                format!(
                    "header declares {} transitions, found {} (truncated file?)",
                    header.meta.num_transitions,
                    transitions.len()
                ),
            ));
        }
        let ds = Dataset {
            d: header.d,
            meta: header.meta,
            transitions,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, EnvSpec};

    fn small(seed: u64) -> Dataset {
        let mut env = make_env(EnvSpec::new(5, 10, 10, seed)).unwrap();
        collect(&mut env, 2, 100, seed + 1, RemainderPolicy::Strict).unwrap()
    }

    #[test]
    fn collect_counts() {
        let ds = small(1);
        assert_eq!(ds.transitions.len(), 200);
        assert_eq!(ds.num_episodes(), 20);
        ds.validate().unwrap();
    }

    #[test]
    fn strict_policy_rejects_ragged_batches() {
        let mut env = make_env(EnvSpec::new(1, 10, 10, 0)).unwrap();
        let err = collect(&mut env, 3, 1024, 0, RemainderPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ds = collect(&mut env, 3, 1024, 0, RemainderPolicy::PadEpisodes).unwrap();
        assert_eq!(ds.transitions.len(), 3072);
        assert_eq!(ds.num_episodes(), 308);
    }

    #[test]
    fn batching() {
        let ds = small(2);
        let bs = batches(&ds, 100, None, BatchPolicy::DropRemainder).unwrap();
        assert_eq!(bs.len(), 2);
        assert_eq!(bs[0].state(0), ds.transitions[0].state.as_slice());

        let a = batches(&ds, 64, Some(9), BatchPolicy::DropRemainder).unwrap();
        let b = batches(&ds, 64, Some(9), BatchPolicy::DropRemainder).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);

        let partial = batches(&ds, 64, None, BatchPolicy::AllowPartial).unwrap();
        assert_eq!(partial.len(), 4);
        assert_eq!(partial[3].len(), 8);
    }

    #[test]
    fn oversized_batch() {
        let ds = small(3);
        assert!(batches(&ds, 500, None, BatchPolicy::DropRemainder).is_err());
        let one = batches(&ds, 500, None, BatchPolicy::AllowPartial).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 200);
    }

    #[test]
    fn shuffle_keeps_multiset() {
        let ds = small(4);
        let b = MiniBatch::from_transitions(10, ds.transitions.iter().take(4));
        let mut b = b;
        b.actions = vec![0, 1, 1, 0];
        let s = shuffle_actions_within_batch(&b, 17);
        assert_eq!(s.actions.iter().filter(|&&a| a == 1).count(), 2);
        assert_eq!(s.states, b.states);
        assert_eq!(s.rewards, b.rewards);
        assert_eq!(s.next_states, b.next_states);

        let single = MiniBatch::from_transitions(10, ds.transitions.iter().take(1));
        assert_eq!(shuffle_actions_within_batch(&single, 3), single);
    }

    #[test]
    fn shuffle_is_uniform() {
        let ds = small(5);
        let mut b = MiniBatch::from_transitions(10, ds.transitions.iter().take(4));
        b.actions = vec![0, 0, 0, 1];
        let n = 10_000;
        let mut hits = [0usize; 4];
        for seed in 0..n {
            let s = shuffle_actions_within_batch(&b, seed);
            hits[s.actions.iter().position(|&a| a == 1).unwrap()] += 1;
        }
        for h in hits {
            let f = h as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(6);
        for name in ["d.jsonl", "d.jsonl.gz"] {
            let p = dir.path().join(name);
            ds.save(&p).unwrap();
            assert_eq!(Dataset::load(&p).unwrap(), ds);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        small(7).save(&a).unwrap();
        small(7).save(&b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        small(8).save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();

        // Cut in the middle of a line.
        std::fs::write(&p, &text[..text.len() / 2]).unwrap();
        let err = Dataset::load(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line, .. } if line > 1), "{err}");

        // Drop whole lines.
        let keep: Vec<&str> = text.lines().take(50).collect();
        std::fs::write(&p, keep.join("\n")).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn dimension_mismatch_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let mut ds = small(9);
        ds.transitions[3].state.pop();
        ds.save(&p).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Validation(_))));
    }
}
