//! Synthetic task generators, the closed-grammar tokenizer and train/val splits.
//!
//! Two tasks share one 44-way label space:
//!
//! * MATH: `"[MATH] a x + b = c x + d"`, label `3 + (x + 20)` for the integer
//!   solution `x ∈ [-20, 20]`.
//! * NLI: `"[NLI] premise: <facts> hypothesis: <fact>"` where a fact is
//!   `"<entity> has a <color> <object>"`; label 0 entailment, 1 contradiction,
//!   2 neutral.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed::derive_seed;

pub const MAX_SEQ_LEN: usize = 48;
pub const PAD_ID: u32 = 0;
pub const NLI_CLASSES: usize = 3;
pub const MATH_MIN_SOLUTION: i64 = -20;
pub const MATH_MAX_SOLUTION: i64 = 20;
/// 3 NLI labels followed by one class per integer answer in [-20, 20].
pub const NUM_CLASSES: usize = NLI_CLASSES + (MATH_MAX_SOLUTION - MATH_MIN_SOLUTION + 1) as usize;

pub const ENTITIES: [&str; 8] = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"];
pub const OBJECTS: [&str; 8] = ["ball", "cup", "hat", "book", "kite", "lamp", "shoe", "vase"];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "pink", "gray"];
const VARIABLES: [&str; 4] = ["x", "y", "z", "c"];
/// Premise length range, in facts.
pub const MIN_FACTS: usize = 2;
pub const MAX_FACTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("sequence of {0} tokens exceeds the maximum of {MAX_SEQ_LEN}")]
    TooLong(usize),
    #[error("could only produce {produced} distinct {task} examples of {requested} requested")]
    RangeTooSmall {
        task: Task,
        requested: usize,
        produced: usize,
    },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Task {
    #[serde(rename = "MATH")]
    Math,
    #[serde(rename = "NLI")]
    Nli,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Math => "MATH",
            Task::Nli => "NLI",
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Task::Math => "[MATH]",
            Task::Nli => "[NLI]",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "MATH" => Some(Task::Math),
            "NLI" => Some(Task::Nli),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NliLabel {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl NliLabel {
    pub fn class(self) -> usize {
        self as usize
    }
}

pub fn math_label(solution: i64) -> usize {
    debug_assert!((MATH_MIN_SOLUTION..=MATH_MAX_SOLUTION).contains(&solution));
    NLI_CLASSES + (solution - MATH_MIN_SOLUTION) as usize
}

/// Inverse of [`math_label`]; `None` for NLI classes.
pub fn label_to_solution(label: usize) -> Option<i64> {
    (NLI_CLASSES..NUM_CLASSES)
        .contains(&label)
        .then(|| label as i64 - NLI_CLASSES as i64 + MATH_MIN_SOLUTION)
}

/// Closed token set of both grammars. Pad is id 0.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<&'static str>,
    token_to_id: BTreeMap<&'static str, u32>,
}

const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
const SIGN: &str = "-";

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut tokens: Vec<&'static str> = vec!["<pad>", "[MATH]", "[NLI]"];
        tokens.extend(DIGITS);
        tokens.extend([SIGN, "+", "="]);
        tokens.extend(VARIABLES);
        tokens.extend(["premise:", "hypothesis:", "has", "a", "."]);
        tokens.extend(ENTITIES);
        tokens.extend(OBJECTS);
        tokens.extend(COLORS);
        let token_to_id = tokens.iter().enumerate().map(|(i, &t)| (t, i as u32)).collect();
        Self {
            id_to_token: tokens,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&'static str> {
        self.id_to_token.get(id as usize).copied()
    }

    fn is_number_part(&self, id: u32) -> bool {
        matches!(self.token(id), Some(t) if t == SIGN || DIGITS.contains(&t))
    }

    fn is_digit(&self, id: u32) -> bool {
        matches!(self.token(id), Some(t) if DIGITS.contains(&t))
    }

    /// Splits on whitespace; signed integers become a sign token followed by
    /// one token per digit. The result is not padded.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, DataError> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let (neg, digits) = match word.strip_prefix(SIGN) {
                Some(rest) if !rest.is_empty() => (true, rest),
                _ => (false, word),
            };
            if digits.bytes().all(|b| b.is_ascii_digit()) && !digits.is_empty() {
                if neg {
                    ids.push(self.token_to_id[SIGN]);
                }
                for ch in digits.chars() {
                    let mut buf = [0u8; 4];
                    ids.push(self.token_to_id[&*ch.encode_utf8(&mut buf)]);
                }
            } else {
                ids.push(self.id(word).ok_or_else(|| DataError::UnknownToken(word.to_string()))?);
            }
        }
        if ids.len() > MAX_SEQ_LEN {
            return Err(DataError::TooLong(ids.len()));
        }
        Ok(ids)
    }

    /// Tokenizes and right-pads to [`MAX_SEQ_LEN`], returning ids and the
    /// non-pad mask.
    pub fn tokenize_padded(&self, text: &str) -> Result<(Vec<u32>, Vec<bool>), DataError> {
        let ids = self.tokenize(text)?;
        Ok(pad_to(&ids, MAX_SEQ_LEN))
    }

    /// Inverse of [`Vocabulary::tokenize`]; pad ids are skipped.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, DataError> {
        let mut out = String::new();
        let mut prev: Option<u32> = None;
        for &id in ids.iter().filter(|&&id| id != PAD_ID) {
            let tok = self
                .token(id)
                .ok_or_else(|| DataError::UnknownToken(format!("#{id}")))?;
            let glue = self.is_digit(id) && prev.is_some_and(|p| self.is_number_part(p));
            if !out.is_empty() && !glue {
                out.push(' ');
            }
            out.push_str(tok);
            prev = Some(id);
        }
        Ok(out)
    }
}

/// Right-pads `ids` with [`PAD_ID`] to `len`, returning ids and the mask.
pub fn pad_to(ids: &[u32], len: usize) -> (Vec<u32>, Vec<bool>) {
    let mut padded = ids.to_vec();
    padded.resize(len.max(ids.len()), PAD_ID);
    let mask = (0..padded.len()).map(|i| i < ids.len()).collect();
    (padded, mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub task: Task,
    /// Unpadded token ids, beginning with the task token.
    pub tokens: Vec<u32>,
    pub label: usize,
    pub source_text: String,
}

impl TaskExample {
    pub fn from_text(vocab: &Vocabulary, task: Task, label: usize, text: String) -> Result<Self, DataError> {
        let tokens = vocab.tokenize(&text)?;
        Ok(Self {
            task,
            tokens,
            label,
            source_text: text,
        })
    }
}

/// Solution of `a·x + b = c·x + d`, or `None` when `a = c` or the
/// solution is not an integer.
pub fn solve_lineq(a: i64, b: i64, c: i64, d: i64) -> Option<i64> {
    let k = a - c;
    let rhs = d - b;
    (k != 0 && rhs % k == 0).then(|| rhs / k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MathParams {
    pub coeff_range: (i64, i64),
    pub sol_range: (i64, i64),
    /// Probability that `|a - c| = 1`, so the answer is read off `d - b`.
    pub unit_slope_prob: f64,
    /// Probability that the left-hand constant `b` is zero.
    pub zero_constant_prob: f64,
}

impl Default for MathParams {
    fn default() -> Self {
        Self {
            coeff_range: (-50, 50),
            sol_range: (MATH_MIN_SOLUTION, MATH_MAX_SOLUTION),
            unit_slope_prob: 0.5,
            zero_constant_prob: 0.8,
        }
    }
}

pub fn render_math(a: i64, b: i64, c: i64, d: i64, var: &str) -> String {
    format!("[MATH] {a} {var} + {b} = {c} {var} + {d}")
}

/// Draws `(a, b, c, d)` with `a ≠ c` and `a·x + b = c·x + d` for the given
/// solution, or `None` if the coefficient range admits no such equation.
fn sample_equation(rng: &mut ChaCha8Rng, x: i64, params: &MathParams) -> Option<(i64, i64, i64, i64)> {
    let (lo, hi) = params.coeff_range;
    let span = hi - lo;
    // k = a - c must satisfy |k·x| ≤ span so that some b, d = b + k·x fit.
    let max_k = if x == 0 { span } else { span / x.abs() };
    if max_k == 0 {
        return None;
    }
    let mut k = if rng.gen_bool(params.unit_slope_prob) {
        1
    } else {
        rng.gen_range(1..=max_k)
    };
    if rng.gen_bool(0.5) {
        k = -k;
    }
    let shift = k * x;
    let a = rng.gen_range(lo.max(lo + k)..=hi.min(hi + k));
    let c = a - k;
    let b = if rng.gen_bool(params.zero_constant_prob) && lo <= 0 && 0 <= hi && lo <= shift && shift <= hi {
        0
    } else {
        rng.gen_range(lo.max(lo - shift)..=hi.min(hi - shift))
    };
    Some((a, b, c, b + shift))
}

/// Linear equations in one variable with integer solutions, sampled solution
/// first so every equation is well posed.
pub fn gen_math(seed: u64, count: usize, params: MathParams) -> Result<Vec<TaskExample>, DataError> {
    let (lo, hi) = params.coeff_range;
    let (smin, smax) = params.sol_range;
    if count == 0 {
        return Err(DataError::InvalidParameter("count must be at least 1".into()));
    }
    let probs_ok = [params.unit_slope_prob, params.zero_constant_prob]
        .iter()
        .all(|p| (0.0..=1.0).contains(p));
    if lo >= hi || smin > smax || smin < MATH_MIN_SOLUTION || smax > MATH_MAX_SOLUTION || !probs_ok {
        return Err(DataError::InvalidParameter(format!(
            "coeff_range {:?}, sol_range {:?}",
            params.coeff_range, params.sol_range
        )));
    }
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let max_attempts = count * 20 + 1000;
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let x = rng.gen_range(smin..=smax);
        let Some((a, b, c, d)) = sample_equation(&mut rng, x, &params) else {
            continue;
        };
        let var = VARIABLES[rng.gen_range(0..VARIABLES.len())];
        let text = render_math(a, b, c, d, var);
        if seen.insert(text.clone()) {
            out.push(TaskExample::from_text(&vocab, Task::Math, math_label(x), text)?);
        }
    }
    out.shuffle(&mut rng);
    if out.len() < count {
        return Err(DataError::RangeTooSmall {
            task: Task::Math,
            requested: count,
            produced: out.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NliParams {
    pub n_entities: usize,
    pub n_objects: usize,
    pub n_colors: usize,
}

impl Default for NliParams {
    fn default() -> Self {
        Self {
            n_entities: 6,
            n_objects: 6,
            n_colors: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fact {
    pub entity: usize,
    pub color: usize,
    pub object: usize,
}

impl Fact {
    pub fn render(&self) -> String {
        format!(
            "{} has a {} {}",
            ENTITIES[self.entity], COLORS[self.color], OBJECTS[self.object]
        )
    }
}

pub fn render_nli(premise: &[Fact], hypothesis: &Fact) -> String {
    let mut s = String::from("[NLI] premise:");
    for f in premise {
        s.push(' ');
        s.push_str(&f.render());
        s.push_str(" .");
    }
    s.push_str(" hypothesis: ");
    s.push_str(&hypothesis.render());
    s
}

/// Label of `hypothesis` under the one-color-per-(entity, object) world.
pub fn nli_label(premise: &[Fact], hypothesis: &Fact) -> NliLabel {
    match premise
        .iter()
        .find(|f| f.entity == hypothesis.entity && f.object == hypothesis.object)
    {
        Some(f) if f.color == hypothesis.color => NliLabel::Entailment,
        Some(_) => NliLabel::Contradiction,
        None => NliLabel::Neutral,
    }
}

fn sample_nli(rng: &mut ChaCha8Rng, p: NliParams, target: NliLabel) -> (Vec<Fact>, Fact) {
    let n_facts = rng.gen_range(MIN_FACTS..=MAX_FACTS);
    // Premise facts use distinct entities, objects and colors. The
    // remaining ones are free for neutral and contradicting hypotheses.
    let shuffled = |rng: &mut ChaCha8Rng, n: usize| {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        v
    };
    let entities = shuffled(rng, p.n_entities);
    let objects = shuffled(rng, p.n_objects);
    let colors = shuffled(rng, p.n_colors);
    let premise: Vec<Fact> = (0..n_facts)
        .map(|i| Fact {
            entity: entities[i],
            object: objects[i],
            color: colors[i],
        })
        .collect();
    let unused = |rng: &mut ChaCha8Rng, pool: &[usize]| pool[rng.gen_range(n_facts..pool.len())];
    let hypothesis = match target {
        NliLabel::Entailment => premise[rng.gen_range(0..n_facts)],
        NliLabel::Contradiction => Fact {
            color: unused(rng, &colors),
            ..premise[rng.gen_range(0..n_facts)]
        },
        NliLabel::Neutral => Fact {
            entity: unused(rng, &entities),
            object: unused(rng, &objects),
            color: unused(rng, &colors),
        },
    };
    (premise, hypothesis)
}

/// Three-way entailment pairs over a small fact world, balanced by label.
pub fn gen_nli(seed: u64, count: usize, params: NliParams) -> Result<Vec<TaskExample>, DataError> {
    if count == 0 {
        return Err(DataError::InvalidParameter("count must be at least 1".into()));
    }
    let NliParams {
        n_entities,
        n_objects,
        n_colors,
    } = params;
    if n_entities <= MAX_FACTS
        || n_objects <= MAX_FACTS
        || n_colors <= MAX_FACTS
        || n_entities > ENTITIES.len()
        || n_objects > OBJECTS.len()
        || n_colors > COLORS.len()
    {
        return Err(DataError::InvalidParameter(format!("{params:?}")));
    }
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let labels = [NliLabel::Entailment, NliLabel::Contradiction, NliLabel::Neutral];
    let max_attempts = count * 20 + 1000;
    let mut attempts = 0;
    while out.len() < count && attempts < max_attempts {
        attempts += 1;
        let target = labels[out.len() % 3];
        let (premise, hypothesis) = sample_nli(&mut rng, params, target);
        debug_assert_eq!(nli_label(&premise, &hypothesis), target);
        let text = render_nli(&premise, &hypothesis);
        if seen.insert(text.clone()) {
            out.push(TaskExample::from_text(&vocab, Task::Nli, target.class(), text)?);
        }
    }
    if out.len() < count {
        return Err(DataError::RangeTooSmall {
            task: Task::Nli,
            requested: count,
            produced: out.len(),
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub task: Task,
    pub seed: u64,
    pub train: Vec<TaskExample>,
    pub val: Vec<TaskExample>,
}

/// Generates `train + val` distinct examples and splits them, so the two
/// sides are disjoint as rendered strings.
fn split_task(task: Task, seed: u64, train_count: usize, val_count: usize) -> Result<DatasetSplit, DataError> {
    if train_count == 0 || val_count == 0 {
        return Err(DataError::InvalidParameter("split counts must be at least 1".into()));
    }
    let total = train_count + val_count;
    let mut all = match task {
        Task::Math => gen_math(seed, total, MathParams::default())?,
        Task::Nli => gen_nli(seed, total, NliParams::default())?,
    };
    let val = match task {
        Task::Math => all.split_off(train_count),
        Task::Nli => {
            // Stratified: each label gets its share of the validation set.
            let mut quota: Vec<usize> = (0..NLI_CLASSES)
                .map(|l| val_count / NLI_CLASSES + usize::from(l < val_count % NLI_CLASSES))
                .collect();
            let (val, train): (Vec<_>, Vec<_>) = all.into_iter().partition(|ex| {
                let take = quota[ex.label] > 0;
                if take {
                    quota[ex.label] -= 1;
                }
                take
            });
            all = train;
            val
        }
    };
    Ok(DatasetSplit {
        task,
        seed,
        train: all,
        val,
    })
}

/// Equal-size MATH and NLI splits for one experiment suite.
pub fn build_splits(
    seed: u64,
    train_count: usize,
    val_count: usize,
) -> Result<(DatasetSplit, DatasetSplit), DataError> {
    let math = split_task(Task::Math, derive_seed(seed, 0x4d41_5448), train_count, val_count)?;
    let nli = split_task(Task::Nli, derive_seed(seed, 0x004e_4c49), train_count, val_count)?;
    Ok((math, nli))
}

/// Writes examples as `task<TAB>label<TAB>source_text` lines.
pub fn write_examples<W: Write>(mut w: W, examples: &[TaskExample]) -> Result<(), DataError> {
    for ex in examples {
        writeln!(w, "{}\t{}\t{}", ex.task, ex.label, ex.source_text)?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(r: R) -> Result<Vec<TaskExample>, DataError> {
    let vocab = Vocabulary::new();
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse { line: i + 1, message };
        let mut parts = line.splitn(3, '\t');
        let (Some(task), Some(label), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err("expected three tab-separated fields".into()));
        };
        let task = Task::parse(task).ok_or_else(|| parse_err(format!("unknown task {task:?}")))?;
        let label: usize = label.parse().map_err(|_| parse_err(format!("bad label {label:?}")))?;
        let valid = match task {
            Task::Math => (NLI_CLASSES..NUM_CLASSES).contains(&label),
            Task::Nli => label < NLI_CLASSES,
        };
        if !valid {
            return Err(parse_err(format!("label {label} invalid for {task}")));
        }
        let ex = TaskExample::from_text(&vocab, task, label, text.to_string()).map_err(|e| parse_err(e.to_string()))?;
        if ex.tokens.first() != vocab.id(task.token()).as_ref() {
            return Err(parse_err("text does not start with its task token".into()));
        }
        out.push(ex);
    }
    Ok(out)
}

/// Writes `<dir>/<task>.train.tsv` and `<dir>/<task>.val.tsv`.
pub fn export_split(dir: &Path, split: &DatasetSplit) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let name = split.task.as_str().to_lowercase();
    for (suffix, data) in [("train", &split.train), ("val", &split.val)] {
        let f = std::fs::File::create(dir.join(format!("{name}.{suffix}.tsv")))?;
        let mut w = std::io::BufWriter::new(f);
        write_examples(&mut w, data)?;
        w.flush()?;
    }
    Ok(())
}

pub fn import_split(dir: &Path, task: Task, seed: u64) -> Result<DatasetSplit, DataError> {
    let name = task.as_str().to_lowercase();
    let read = |suffix: &str| -> Result<Vec<TaskExample>, DataError> {
        let f = std::fs::File::open(dir.join(format!("{name}.{suffix}.tsv")))?;
        read_examples(std::io::BufReader::new(f))
    };
    Ok(DatasetSplit {
        task,
        seed,
        train: read("train")?,
        val: read("val")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_small_bijection() {
        let v = Vocabulary::new();
        assert!(v.len() <= 64);
        assert_eq!(v.id("<pad>"), Some(PAD_ID));
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
        assert_eq!(NUM_CLASSES, 44);
    }

    #[test]
    fn negative_numbers_encode_sign_then_digits() {
        let v = Vocabulary::new();
        assert_eq!(v.tokenize("-6").unwrap(), vec![v.id("-").unwrap(), v.id("6").unwrap()]);
        let ids = v.tokenize("[MATH] 24 x + -50 = -4 x + 0").unwrap();
        assert_eq!(v.detokenize(&ids).unwrap(), "[MATH] 24 x + -50 = -4 x + 0");
    }

    #[test]
    fn tokenizer_errors() {
        let v = Vocabulary::new();
        assert!(matches!(v.tokenize("[MATH] 2 q"), Err(DataError::UnknownToken(t)) if t == "q"));
        let long = vec!["1"; 49].join(" ");
        assert!(matches!(v.tokenize(&long), Err(DataError::TooLong(49))));
    }

    #[test]
    fn padding_mask_marks_prefix() {
        let v = Vocabulary::new();
        let (ids, mask) = v.tokenize_padded("[NLI] premise: alice has a red ball .").unwrap();
        assert_eq!(ids.len(), MAX_SEQ_LEN);
        let n = v.tokenize("[NLI] premise: alice has a red ball .").unwrap().len();
        assert!(mask[..n].iter().all(|&m| m));
        assert!(mask[n..].iter().all(|&m| !m));
        assert!(ids[n..].iter().all(|&id| id == PAD_ID));
    }

    #[test]
    fn solve_lineq_cases() {
        // 24 = 1601c - 1605c, i.e. 0c + 24 = -4c + 0
        assert_eq!(solve_lineq(0, 24, 1601 - 1605, 0), Some(-6));
        assert_eq!(solve_lineq(2, 3, 0, 7), Some(2));
        assert_eq!(solve_lineq(3, 1, 3, 5), None);
        assert_eq!(solve_lineq(2, 0, 0, 3), None);
    }

    #[test]
    fn nli_rule_examples() {
        let alice_red_ball = Fact {
            entity: 0,
            color: 0,
            object: 0,
        };
        let alice_blue_ball = Fact {
            entity: 0,
            color: 1,
            object: 0,
        };
        let bob_red_ball = Fact {
            entity: 1,
            color: 0,
            object: 0,
        };
        let premise = [
            alice_red_ball,
            Fact {
                entity: 0,
                color: 2,
                object: 1,
            },
        ];
        assert_eq!(alice_red_ball.render(), "alice has a red ball");
        assert_eq!(nli_label(&premise, &alice_red_ball), NliLabel::Entailment);
        assert_eq!(nli_label(&premise, &alice_blue_ball), NliLabel::Contradiction);
        assert_eq!(nli_label(&premise, &bob_red_ball), NliLabel::Neutral);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            gen_math(3, 200, MathParams::default()).unwrap(),
            gen_math(3, 200, MathParams::default()).unwrap()
        );
        assert_eq!(
            gen_nli(3, 200, NliParams::default()).unwrap(),
            gen_nli(3, 200, NliParams::default()).unwrap()
        );
    }

    #[test]
    fn too_small_ranges_are_reported() {
        let tiny = MathParams {
            coeff_range: (0, 1),
            sol_range: (0, 0),
            ..MathParams::default()
        };
        assert!(matches!(
            gen_math(1, 100, tiny),
            Err(DataError::RangeTooSmall { task: Task::Math, .. })
        ));
        // Every pool needs a member left over after the largest premise.
        for small in [
            NliParams {
                n_entities: MAX_FACTS,
                ..NliParams::default()
            },
            NliParams {
                n_objects: MAX_FACTS,
                ..NliParams::default()
            },
            NliParams {
                n_colors: MAX_FACTS,
                ..NliParams::default()
            },
        ] {
            assert!(matches!(gen_nli(1, 10, small), Err(DataError::InvalidParameter(_))));
        }
        assert!(gen_nli(
            1,
            10,
            NliParams {
                n_entities: 5,
                n_objects: 5,
                n_colors: 5
            }
        )
        .is_ok());
        assert!(gen_math(1, 0, MathParams::default()).is_err());
        let one_entity = NliParams {
            n_entities: 1,
            ..NliParams::default()
        };
        assert!(matches!(
            gen_nli(1, 10, one_entity),
            Err(DataError::InvalidParameter(_))
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let (math, nli) = build_splits(5, 30, 10).unwrap();
        let mut buf = Vec::new();
        write_examples(&mut buf, &math.train).unwrap();
        write_examples(&mut buf, &nli.val).unwrap();
        let back = read_examples(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 40);
        assert_eq!(&back[..30], &math.train[..]);
        assert_eq!(&back[30..], &nli.val[..]);
        assert!(read_examples("NLI\t7\t[NLI] premise:".as_bytes()).is_err());
        assert!(read_examples("MATH\t3".as_bytes()).is_err());
    }
}
