//! On-disk formats: model and policy documents (JSON), episode files (JSON
//! lines with a header record) and result tables (CSV).
//!
//! Every computed real is written with 17 significant digits so that a
//! reader recovers the exact bit pattern.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ope_absorb::mdp::{sample_episodes, Episode, EpisodeBatch, Policy, TabularMdp};
use ope_absorb::seed::hash_f64s;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

pub const EPISODE_FORMAT_VERSION: u32 = 1;

/// Models with more dense transition entries than this are written in the
/// sparse row layout.
pub const DENSE_LIMIT: usize = 1 << 20;

/// `{:.16e}`, i.e. 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON formatter that writes every `f64` with 17 significant digits.
/// Non-finite values still come out as `null`.
struct Digits<F>(F);

impl<F: Formatter> Formatter for Digits<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn write_compact<W: Write, T: Serialize>(writer: &mut W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, Digits(CompactFormatter));
    value.serialize(&mut ser)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Serialized [`TabularMdp`]. `transition` is the dense row-major table
/// `P[s][a][s′]` with `s′ = n_states` standing for ξ; large models use
/// `transition_sparse`, one list of `[next, prob]` pairs per `(s, a)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_sparse: Option<Vec<Vec<(usize, f64)>>>,
    pub mean_reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub reward_noise_halfwidth: f64,
}

impl ModelFile {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let (n, h) = (mdp.n_states(), mdp.n_actions());
        let (transition, transition_sparse) = if n * h * (n + 1) <= DENSE_LIMIT {
            (Some(mdp.dense_transition()), None)
        } else {
            let rows = (0..n * h).map(|i| mdp.transition_row(i / h, i % h).to_vec()).collect();
            (None, Some(rows))
        };
        Self {
            n_states: n,
            n_actions: h,
            transition,
            transition_sparse,
            mean_reward: mdp.mean_rewards().to_vec(),
            initial_dist: mdp.initial_dist().to_vec(),
            reward_noise_halfwidth: mdp.reward_noise_halfwidth(),
        }
    }

    pub fn into_mdp(self) -> Result<TabularMdp> {
        let mdp = match (self.transition, self.transition_sparse) {
            (Some(dense), None) => TabularMdp::new(
                self.n_states,
                self.n_actions,
                &dense,
                self.mean_reward,
                self.initial_dist,
                self.reward_noise_halfwidth,
            )?,
            (None, Some(rows)) => TabularMdp::from_sparse(
                self.n_states,
                self.n_actions,
                rows,
                self.mean_reward,
                self.initial_dist,
                self.reward_noise_halfwidth,
            )?,
            _ => bail!("model file needs exactly one of `transition` and `transition_sparse`"),
        };
        Ok(mdp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `π[s][a]`.
    pub probs: Vec<f64>,
}

impl PolicyFile {
    pub fn from_policy(policy: &Policy) -> Self {
        Self { n_states: policy.n_states(), n_actions: policy.n_actions(), probs: policy.probs().to_vec() }
    }

    pub fn into_policy(self) -> Result<Policy> {
        Ok(Policy::new(self.n_states, self.n_actions, self.probs)?)
    }
}

pub fn save_model(path: &Path, mdp: &TabularMdp) -> Result<()> {
    write_json(path, &ModelFile::from_mdp(mdp))
}

pub fn load_model(path: &Path) -> Result<TabularMdp> {
    read_json::<ModelFile>(path)?.into_mdp().with_context(|| format!("invalid model in {}", path.display()))
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    write_json(path, &PolicyFile::from_policy(policy))
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    read_json::<PolicyFile>(path)?.into_policy().with_context(|| format!("invalid policy in {}", path.display()))
}

/// Fingerprint of a model's dimensions, kernel, rewards, `μ` and noise.
pub fn model_hash(mdp: &TabularMdp) -> u64 {
    let (n, h) = (mdp.n_states(), mdp.n_actions());
    let mut words = vec![n as f64, h as f64, mdp.reward_noise_halfwidth()];
    for i in 0..n * h {
        let row = mdp.transition_row(i / h, i % h);
        words.push(row.len() as f64);
        for &(j, p) in row {
            words.push(j as f64);
            words.push(p);
        }
    }
    words.extend_from_slice(mdp.mean_rewards());
    words.extend_from_slice(mdp.initial_dist());
    hash_f64s(&words)
}

pub fn policy_hash(policy: &Policy) -> u64 {
    let mut words = vec![policy.n_states() as f64, policy.n_actions() as f64];
    words.extend_from_slice(policy.probs());
    hash_f64s(&words)
}

/// First line of an episode file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    /// Hex fingerprint of the behavior policy.
    pub policy_hash: String,
    /// Hex fingerprint of the model.
    pub env_hash: String,
    pub seed: u64,
}

impl EpisodeHeader {
    pub fn new(mdp: &TabularMdp, policy: &Policy, horizon: usize, seed: u64) -> Self {
        Self {
            format_version: EPISODE_FORMAT_VERSION,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            horizon,
            policy_hash: format!("{:016x}", policy_hash(policy)),
            env_hash: format!("{:016x}", model_hash(mdp)),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeLine {
    states: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    absorbed: bool,
}

fn write_episode<W: Write>(out: &mut W, ep: &Episode) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        states: &'a [usize],
        actions: &'a [usize],
        rewards: &'a [f64],
        absorbed: bool,
    }
    let line = Borrowed { states: &ep.states, actions: &ep.actions, rewards: &ep.rewards, absorbed: ep.absorbed };
    write_compact(out, &line)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_episode_file(path: &Path, header: &EpisodeHeader, episodes: &[Episode]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    write_compact(&mut out, header)?;
    out.write_all(b"\n")?;
    for ep in episodes {
        write_episode(&mut out, ep)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_episode_header(path: &Path) -> Result<EpisodeHeader> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first)?;
    parse_header(&first, path)
}

fn parse_header(line: &str, path: &Path) -> Result<EpisodeHeader> {
    let header: EpisodeHeader =
        serde_json::from_str(line.trim()).with_context(|| format!("bad header in {}", path.display()))?;
    ensure!(
        header.format_version == EPISODE_FORMAT_VERSION,
        "{}: unsupported episode format version {}",
        path.display(),
        header.format_version
    );
    ensure!(header.horizon >= 1, "{}: H must be at least 1", path.display());
    Ok(header)
}

/// Reads an episode file into a validated batch.
pub fn read_episode_file(path: &Path) -> Result<(EpisodeHeader, EpisodeBatch)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().with_context(|| format!("{} is empty", path.display()))??;
    let header = parse_header(&first, path)?;
    let mut episodes = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeLine =
            serde_json::from_str(&line).with_context(|| format!("{}: bad episode on line {}", path.display(), k + 2))?;
        episodes.push(Episode {
            states: rec.states,
            actions: rec.actions,
            rewards: rec.rewards,
            absorbed: rec.absorbed,
            truncation: header.horizon,
        });
    }
    let batch = EpisodeBatch::new(header.n_states, header.n_actions, header.horizon, episodes)
        .with_context(|| format!("invalid episodes in {}", path.display()))?;
    Ok((header, batch))
}

fn count_records(path: &Path) -> Result<usize> {
    let file = File::open(path)?;
    let mut count = 0;
    for line in BufReader::new(file).lines().skip(1) {
        if !line?.trim().is_empty() {
            count += 1;
        }
    }
    Ok(count)
}

/// Samples `m` episodes of `policy` into `path`.
///
/// Episode `i` of a file always comes from stream `i` of `seed`. With
/// `append`, an existing file must carry the same header; the new episodes
/// continue its stream numbering, so collecting `a` then appending `b`
/// produces the same file as collecting `a + b` at once.
pub fn collect(
    mdp: &TabularMdp,
    policy: &Policy,
    m: usize,
    horizon: usize,
    seed: u64,
    path: &Path,
    append: bool,
) -> Result<EpisodeHeader> {
    ensure!(horizon >= 1, "H must be at least 1");
    policy.conforms_to(mdp)?;
    let header = EpisodeHeader::new(mdp, policy, horizon, seed);
    if append && path.exists() {
        let existing = read_episode_header(path)?;
        if existing != header {
            bail!(
                "{}: signature mismatch (file has {:?}, requested {:?})",
                path.display(),
                existing,
                header
            );
        }
        let start = count_records(path)?;
        let episodes = sample_episodes(mdp, policy, start..start + m, horizon, seed);
        let file = OpenOptions::new().append(true).open(path)?;
        let mut out = BufWriter::new(file);
        for ep in &episodes {
            write_episode(&mut out, ep)?;
        }
        out.flush()?;
    } else {
        let episodes = sample_episodes(mdp, policy, 0..m, horizon, seed);
        write_episode_file(path, &header, &episodes)?;
    }
    Ok(header)
}
