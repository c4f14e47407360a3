//! Interaction logs: TSV ingestion with dense id remapping, length
//! normalization, leave-one-out splitting and a planted-pattern synthetic
//! corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PAD;

/// One user's time-ordered history. Item ids are dense (`1..vocab`), `0`
/// marks padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSequence {
    pub user: u64,
    pub items: Vec<usize>,
    pub timestamps: Vec<i64>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of non-padding entries.
    pub fn real_len(&self) -> usize {
        self.items.iter().take_while(|&&v| v != PAD).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.len() != self.timestamps.len() {
            return Err(Error::Data(format!(
                "user {}: {} items but {} timestamps",
                self.user,
                self.items.len(),
                self.timestamps.len()
            )));
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Data(format!("user {}: timestamps decrease at {}", self.user, i + 1)));
        }
        let real = self.real_len();
        if self.items[real..].iter().any(|&v| v != PAD) {
            return Err(Error::Data(format!("user {}: padding must be a suffix", self.user)));
        }
        Ok(())
    }
}

/// Bijection between original item ids and dense ids `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    /// `originals[d - 1]` is the original id of dense id `d`.
    originals: Vec<u64>,
}

impl Vocabulary {
    /// Dense ids follow ascending original id.
    pub fn from_originals(mut originals: Vec<u64>) -> Self {
        originals.sort_unstable();
        originals.dedup();
        Vocabulary { originals }
    }

    /// Identity vocabulary over `1..=items`.
    pub fn identity(items: usize) -> Self {
        Vocabulary {
            originals: (1..=items as u64).collect(),
        }
    }

    /// Real item count (excluding padding).
    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// Model vocabulary size: real items plus the padding id.
    pub fn model_size(&self) -> usize {
        self.originals.len() + 1
    }

    pub fn dense(&self, original: u64) -> Option<usize> {
        self.originals.binary_search(&original).ok().map(|i| i + 1)
    }

    pub fn original(&self, dense: usize) -> Option<u64> {
        dense.checked_sub(1).and_then(|i| self.originals.get(i)).copied()
    }

    /// `original_id<TAB>dense_id` per line, ascending.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, o) in self.originals.iter().enumerate() {
            let _ = writeln!(out, "{o}\t{}", i + 1);
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut originals = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let bad = || Error::Data(format!("{source}:{}: expected original_id<TAB>dense_id", idx + 1));
            let (o, d) = line.split_once('\t').ok_or_else(bad)?;
            let o: u64 = o.parse().map_err(|_| bad())?;
            let d: usize = d.parse().map_err(|_| bad())?;
            if d != originals.len() + 1 || originals.last().is_some_and(|&last| last >= o) {
                return Err(Error::Data(format!(
                    "{source}:{}: dense ids must count up from 1 with ascending original ids",
                    idx + 1
                )));
            }
            originals.push(o);
        }
        Ok(Vocabulary { originals })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Sequences plus the vocabulary they were remapped with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// Sorted by user id.
    pub sequences: Vec<InteractionSequence>,
    pub vocab: Vocabulary,
}

impl Dataset {
    /// Canonical TSV: `user<TAB>dense_item<TAB>timestamp`, users ascending,
    /// each user's rows in sequence order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.sequences {
            for (&v, &t) in s.items.iter().zip(&s.timestamps) {
                let _ = writeln!(out, "{}\t{v}\t{t}", s.user);
            }
        }
        out
    }

    pub fn interaction_count(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

/// File names inside a prepared dataset directory.
pub const DATASET_FILE: &str = "dataset.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const SPLIT_FILE: &str = "split.txt";

impl Dataset {
    /// Writes the canonical TSV, the vocabulary and the split manifest.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write(DATASET_FILE, self.to_tsv())?;
        write(VOCAB_FILE, self.vocab.to_text())?;
        write(SPLIT_FILE, split_leave_one_out(&self.sequences).manifest_text())
    }

    /// Reads a directory written by [`Dataset::save_dir`]. Item ids in the
    /// TSV are already dense and are checked against the vocabulary.
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let source = path.display().to_string();
        let mut by_user: BTreeMap<u64, InteractionSequence> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Data(format!("{source}:{}: {what}: {line:?}", idx + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let user: u64 = f[0].parse().map_err(|_| bad("bad user id"))?;
            let item: usize = f[1].parse().map_err(|_| bad("bad item id"))?;
            let ts: i64 = f[2].parse().map_err(|_| bad("bad timestamp"))?;
            if item == PAD || item > vocab.len() {
                return Err(bad("dense item id outside the vocabulary"));
            }
            let seq = by_user.entry(user).or_insert_with(|| InteractionSequence {
                user,
                items: Vec::new(),
                timestamps: Vec::new(),
            });
            seq.items.push(item);
            seq.timestamps.push(ts);
        }
        if by_user.is_empty() {
            return Err(Error::Data(format!("{source}: no interactions")));
        }
        let sequences: Vec<InteractionSequence> = by_user.into_values().collect();
        for s in &sequences {
            s.validate()?;
        }
        Ok(Dataset { sequences, vocab })
    }
}

/// Parses `user_id<TAB>item_id<TAB>timestamp_seconds` lines, groups them by
/// user, stable-sorts each user by timestamp and remaps items densely.
pub fn ingest_text(text: &str, source: &str) -> Result<Dataset> {
    let mut by_user: BTreeMap<u64, Vec<(i64, u64)>> = BTreeMap::new();
    let mut seen = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("{source}:{line_no}: {what}: {line:?}"));
        let mut fields = line.split('\t');
        let (Some(u), Some(v), Some(t), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected 3 tab-separated fields"));
        };
        let user: u64 = u.trim().parse().map_err(|_| bad("user id is not a positive integer"))?;
        let item: u64 = v.trim().parse().map_err(|_| bad("item id is not a positive integer"))?;
        let ts: i64 = t.trim().parse().map_err(|_| bad("timestamp is not an integer"))?;
        if user == 0 || item == 0 {
            return Err(bad("ids must be positive"));
        }
        if ts < 0 {
            return Err(bad("timestamp must be non-negative"));
        }
        by_user.entry(user).or_default().push((ts, item));
        seen.push(item);
    }
    if by_user.is_empty() {
        return Err(Error::Data(format!("{source}: no interactions")));
    }
    let vocab = Vocabulary::from_originals(seen);
    let sequences = by_user
        .into_iter()
        .map(|(user, mut rows)| {
            rows.sort_by_key(|&(ts, _)| ts);
            InteractionSequence {
                user,
                items: rows.iter().map(|&(_, v)| vocab.dense(v).expect("observed id")).collect(),
                timestamps: rows.iter().map(|&(ts, _)| ts).collect(),
            }
        })
        .collect();
    Ok(Dataset { sequences, vocab })
}

pub fn ingest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_text(&text, &path.display().to_string())
}

/// Keeps the most recent `n` interactions and pads the suffix with item 0
/// and the last real timestamp.
pub fn normalize_length(seq: &InteractionSequence, n: usize) -> InteractionSequence {
    let real = seq.real_len();
    let start = real.saturating_sub(n);
    let mut items = seq.items[start..real].to_vec();
    let mut timestamps = seq.timestamps[start..real].to_vec();
    let last = timestamps.last().copied().unwrap_or(0);
    items.resize(n, PAD);
    timestamps.resize(n, last);
    InteractionSequence {
        user: seq.user,
        items,
        timestamps,
    }
}

/// Drops the padding suffix.
pub fn strip_padding(seq: &InteractionSequence) -> InteractionSequence {
    let real = seq.real_len();
    InteractionSequence {
        user: seq.user,
        items: seq.items[..real].to_vec(),
        timestamps: seq.timestamps[..real].to_vec(),
    }
}

/// A held-out next-item query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: u64,
    /// Input prefix (unpadded, untruncated).
    pub history: InteractionSequence,
    pub target: usize,
    pub target_timestamp: i64,
    /// Index of the target in the user's full sequence.
    pub target_index: usize,
}

/// Leave-one-out views of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Training portion of every user: `items[..len-2]` for users with at
    /// least 3 interactions, the whole sequence otherwise.
    pub train: Vec<InteractionSequence>,
    pub valid: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
    /// Per user: `(user, length)`.
    pub lengths: Vec<(u64, usize)>,
}

impl DatasetSplit {
    /// `user<TAB>length<TAB>train_len<TAB>valid_index<TAB>test_index`, with
    /// `-` for users that only train.
    pub fn manifest_text(&self) -> String {
        let mut out = String::from("user\tlength\ttrain_len\tvalid_index\ttest_index\n");
        for &(user, len) in &self.lengths {
            if len >= 3 {
                let _ = writeln!(out, "{user}\t{len}\t{}\t{}\t{}", len - 2, len - 2, len - 1);
            } else {
                let _ = writeln!(out, "{user}\t{len}\t{len}\t-\t-");
            }
        }
        out
    }
}

fn eval_case(seq: &InteractionSequence, target_index: usize) -> EvalCase {
    EvalCase {
        user: seq.user,
        history: InteractionSequence {
            user: seq.user,
            items: seq.items[..target_index].to_vec(),
            timestamps: seq.timestamps[..target_index].to_vec(),
        },
        target: seq.items[target_index],
        target_timestamp: seq.timestamps[target_index],
        target_index,
    }
}

pub fn split_leave_one_out(sequences: &[InteractionSequence]) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::with_capacity(sequences.len()),
        valid: Vec::new(),
        test: Vec::new(),
        lengths: Vec::with_capacity(sequences.len()),
    };
    for seq in sequences {
        let seq = strip_padding(seq);
        let len = seq.len();
        split.lengths.push((seq.user, len));
        if len >= 3 {
            split.train.push(InteractionSequence {
                user: seq.user,
                items: seq.items[..len - 2].to_vec(),
                timestamps: seq.timestamps[..len - 2].to_vec(),
            });
            split.valid.push(eval_case(&seq, len - 2));
            split.test.push(eval_case(&seq, len - 1));
        } else {
            split.train.push(seq);
        }
    }
    split
}

/// Fixed-length model arrays for one training sequence: inputs are all but
/// the last item, targets are the inputs shifted by one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub user: u64,
    pub items: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub targets: Vec<usize>,
}

/// `None` when the sequence has fewer than two items.
pub fn training_example(seq: &InteractionSequence, n: usize) -> Option<TrainExample> {
    let real = seq.real_len();
    if real < 2 {
        return None;
    }
    let input = InteractionSequence {
        user: seq.user,
        items: seq.items[..real - 1].to_vec(),
        timestamps: seq.timestamps[..real - 1].to_vec(),
    };
    let shifted = InteractionSequence {
        user: seq.user,
        items: seq.items[1..real].to_vec(),
        timestamps: seq.timestamps[1..real].to_vec(),
    };
    let input = normalize_length(&input, n);
    Some(TrainExample {
        user: seq.user,
        items: input.items,
        timestamps: input.timestamps,
        targets: normalize_length(&shifted, n).items,
    })
}

/// Shape of the planted synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub users: usize,
    /// Model vocabulary including padding; items are `1..vocab`.
    pub vocab: usize,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Bursts hold `1..=max_burst` interactions.
    pub max_burst: usize,
    /// Gaps below this many seconds count as short.
    pub gap_threshold: i64,
    /// Short gaps are uniform on `[1, short_gap_max]` seconds.
    pub short_gap_max: i64,
    /// Long gaps are uniform on `[long_gap_min, long_gap_max]` seconds.
    pub long_gap_min: i64,
    pub long_gap_max: i64,
    pub start_time: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            vocab: 200,
            seed: 7,
            min_len: 20,
            max_len: 60,
            max_burst: 18,
            gap_threshold: 3_600,
            short_gap_max: 300,
            long_gap_min: 86_400,
            long_gap_max: 10 * 86_400,
            start_time: 1_600_000_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab < 20 {
            return fail(format!("synthetic vocab must be >= 20, got {}", self.vocab));
        }
        if self.users == 0 {
            return fail("users must be >= 1".into());
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return fail(format!("need 3 <= min_len <= max_len, got {}..{}", self.min_len, self.max_len));
        }
        if self.max_burst == 0 {
            return fail("max_burst must be >= 1".into());
        }
        if !(1 <= self.short_gap_max
            && self.short_gap_max < self.gap_threshold
            && self.gap_threshold <= self.long_gap_min
            && self.long_gap_min <= self.long_gap_max)
        {
            return fail("gaps must satisfy 1 <= short_gap_max < gap_threshold <= long_gap_min <= long_gap_max".into());
        }
        if self.start_time < 0 {
            return fail("start_time must be non-negative".into());
        }
        Ok(())
    }
}

/// The planted rule: after a short gap the next item is `short[last]`;
/// after a long gap it is `long[opener]`, where `opener` started the burst
/// that just ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedRule {
    pub short: Vec<usize>,
    pub long: Vec<usize>,
    pub gap_threshold: i64,
}

impl PlantedRule {
    /// Index of the interaction that opened the burst containing the last
    /// item of `timestamps`.
    pub fn burst_start(&self, timestamps: &[i64]) -> usize {
        (1..timestamps.len())
            .rev()
            .find(|&i| timestamps[i] - timestamps[i - 1] >= self.gap_threshold)
            .unwrap_or(0)
    }

    /// The item the rule emits after `history` when the next interaction
    /// happens at `next_timestamp`.
    pub fn next_item(&self, history: &InteractionSequence, next_timestamp: i64) -> usize {
        let last = history.items.len() - 1;
        if next_timestamp - history.timestamps[last] < self.gap_threshold {
            self.short[history.items[last]]
        } else {
            self.long[history.items[self.burst_start(&history.timestamps)]]
        }
    }
}

/// A generated corpus and the rule that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    pub rule: PlantedRule,
}

/// Random permutation of `1..vocab` with no fixed points; index 0 maps to 0.
fn derangement<R: Rng>(vocab: usize, rng: &mut R) -> Vec<usize> {
    loop {
        let mut perm: Vec<usize> = (1..vocab).collect();
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &v)| v != i + 1) {
            return std::iter::once(PAD).chain(perm).collect();
        }
    }
}

/// Generates sequences of bursts: inside a burst gaps are short, between
/// bursts they are long. Item transitions follow [`PlantedRule`].
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rule = PlantedRule {
        short: derangement(cfg.vocab, &mut rng),
        long: derangement(cfg.vocab, &mut rng),
        gap_threshold: cfg.gap_threshold,
    };
    let mut sequences = Vec::with_capacity(cfg.users);
    for user in 1..=cfg.users as u64 {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut seq = InteractionSequence {
            user,
            items: vec![rng.random_range(1..cfg.vocab)],
            timestamps: vec![cfg.start_time + rng.random_range(0..cfg.long_gap_max)],
        };
        let mut burst_left = rng.random_range(1..=cfg.max_burst) - 1;
        while seq.len() < len {
            let gap = if burst_left > 0 {
                burst_left -= 1;
                rng.random_range(1..=cfg.short_gap_max)
            } else {
                burst_left = rng.random_range(1..=cfg.max_burst) - 1;
                rng.random_range(cfg.long_gap_min..=cfg.long_gap_max)
            };
            let ts = seq.timestamps[seq.len() - 1] + gap;
            let item = rule.next_item(&seq, ts);
            seq.items.push(item);
            seq.timestamps.push(ts);
        }
        sequences.push(seq);
    }
    Ok(SynthCorpus {
        dataset: Dataset {
            sequences,
            vocab: Vocabulary::identity(cfg.vocab - 1),
        },
        rule,
    })
}

/// Item frequencies over training sequences, indexed by dense id.
pub fn item_counts(train: &[InteractionSequence], vocab: usize) -> Vec<usize> {
    let mut counts = vec![0; vocab];
    for s in train {
        for &v in &s.items {
            if v != PAD && v < vocab {
                counts[v] += 1;
            }
        }
    }
    counts
}
