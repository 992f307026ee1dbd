use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PoseSession;
use crate::fsutil::atomic_write;
use crate::{CoreError, Result};

/// Train / validation / test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.64, 0.16, 0.20];

/// Minimum sessions per genotype for stratified assignment.
const STRATIFY_MIN: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train_sessions: Vec<String>,
    pub val_sessions: Vec<String>,
    pub test_sessions: Vec<String>,
    pub seed: u64,
}

impl CohortSplit {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train_sessions, &self.val_sessions, &self.test_sessions]
    }

    /// Sessions of `sessions` whose ids fall in split `part` (0 train, 1 val, 2 test).
    pub fn select<'a>(&self, sessions: &'a [PoseSession], part: usize) -> Vec<&'a PoseSession> {
        let ids = self.parts()[part];
        sessions
            .iter()
            .filter(|s| ids.contains(&s.session_id))
            .collect()
    }
}

/// Integer counts summing to `n`, proportional to `fractions`: floors first,
/// then one extra unit per largest fractional remainder (ties to the earlier
/// index).
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn validate_fractions(fractions: &[f64; 3]) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::Config(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    Ok(())
}

/// Session-level split over `(session_id, genotype)` pairs.
///
/// Ids are shuffled by a generator seeded with `seed`, then assigned
/// contiguously to train, val and test with largest-remainder counts. When
/// every genotype has at least three sessions, each genotype is shuffled
/// separately and the groups are interleaved by relative position so every
/// contiguous block has near-proportional genotype composition.
pub fn split_ids(items: &[(String, String)], fractions: [f64; 3], seed: u64) -> Result<CohortSplit> {
    validate_fractions(&fractions)?;
    if items.len() < 3 {
        return Err(CoreError::TooFewSessions {
            needed: 3,
            got: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, g) in items {
        groups.entry(g.as_str()).or_default().push(id.as_str());
    }
    let stratify = groups.values().all(|v| v.len() >= STRATIFY_MIN);

    let order: Vec<&str> = if stratify {
        let mut keyed: Vec<(f64, usize, &str)> = Vec::with_capacity(items.len());
        for (gi, ids) in groups.values_mut().enumerate() {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            let n = ids.len() as f64;
            for (k, id) in ids.iter().enumerate() {
                keyed.push(((k as f64 + 0.5) / n, gi, id));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, id)| id).collect()
    } else {
        let mut ids: Vec<&str> = items.iter().map(|(id, _)| id.as_str()).collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        ids
    };

    let counts = largest_remainder(order.len(), &fractions);
    let take = |from: usize, n: usize| -> Vec<String> {
        order[from..from + n].iter().map(|s| s.to_string()).collect()
    };
    Ok(CohortSplit {
        train_sessions: take(0, counts[0]),
        val_sessions: take(counts[0], counts[1]),
        test_sessions: take(counts[0] + counts[1], counts[2]),
        seed,
    })
}

pub fn split_sessions(
    sessions: &[PoseSession],
    fractions: [f64; 3],
    seed: u64,
) -> Result<CohortSplit> {
    let items: Vec<(String, String)> = sessions
        .iter()
        .map(|s| (s.session_id.clone(), s.genotype.clone()))
        .collect();
    split_ids(&items, fractions, seed)
}

/// Renders the manifest: `seed:`, `train:`, `val:`, `test:` lines with
/// comma-separated ids.
pub fn format_split_manifest(split: &CohortSplit) -> String {
    format!(
        "seed: {}\ntrain: {}\nval: {}\ntest: {}\n",
        split.seed,
        split.train_sessions.join(","),
        split.val_sessions.join(","),
        split.test_sessions.join(",")
    )
}

pub fn write_split_manifest(path: &Path, split: &CohortSplit) -> Result<()> {
    atomic_write(path, format_split_manifest(split).as_bytes())
}

pub fn parse_split_manifest(text: &str, path: &Path) -> Result<CohortSplit> {
    let err = |line: usize, msg: String| CoreError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut seed = None;
    let mut parts: [Option<Vec<String>>; 3] = [None, None, None];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| err(i + 1, format!("expected 'key: value', found '{line}'")))?;
        let value = value.trim();
        let ids = || -> Vec<String> {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        match key.trim() {
            "seed" => {
                seed = Some(
                    value
                        .parse::<u64>()
                        .map_err(|_| err(i + 1, format!("bad seed '{value}'")))?,
                )
            }
            "train" => parts[0] = Some(ids()),
            "val" => parts[1] = Some(ids()),
            "test" => parts[2] = Some(ids()),
            other => return Err(err(i + 1, format!("unknown key '{other}'"))),
        }
    }
    let [train, val, test] = parts;
    let missing = |k: &str| err(0, format!("missing '{k}:' line"));
    Ok(CohortSplit {
        seed: seed.ok_or_else(|| missing("seed"))?,
        train_sessions: train.ok_or_else(|| missing("train"))?,
        val_sessions: val.ok_or_else(|| missing("val"))?,
        test_sessions: test.ok_or_else(|| missing("test"))?,
    })
}

pub fn read_split_manifest(path: &Path) -> Result<CohortSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_split_manifest(&text, path)
}
