//! Checkpoints, batched runs with command injection, and the on-disk
//! trajectory archive.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{ConfigError, Resolved, SimConfig};
use crate::des_kernel::{read_jsonl, write_jsonl, EventRecord, Kernel, SimTime};
use crate::interventions::{parse_commands, Command, InterventionError};
use crate::metrics::{RunSummary, TimeSeries};
use crate::sim::{SimEvent, Simulation, WorldState};

pub const CHECKPOINT_MAGIC: &str = "edsim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "pairs.json";
pub const CONFIG_FILE: &str = "config.yaml";

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("checkpoint belongs to configuration {found}, current configuration is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("batch length must be at least one step")]
    BatchLength,
    #[error("batch {0} is not in the archive")]
    MissingBatch(u64),
    #[error("i/o error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("archive index: {0}")]
    Index(#[from] serde_json::Error),
    #[error(transparent)]
    Commands(#[from] InterventionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReplayError + '_ {
    move |source| ReplayError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub magic: String,
    pub version: u32,
    pub config_hash: String,
    pub batch: u64,
    pub time: SimTime,
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    header: CheckpointHeader,
    kernel: &'a Kernel<SimEvent>,
    state: &'a WorldState,
}

/// Complete run state at a batch boundary. Buffered ledger records and the
/// time series are outputs and are not included.
#[derive(Debug, Clone, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    kernel: Kernel<SimEvent>,
    state: WorldState,
}

/// Serializes the live state of `sim` as a CBOR checkpoint.
pub fn encode_checkpoint(sim: &Simulation, batch: u64) -> Vec<u8> {
    let snapshot = CheckpointRef {
        header: CheckpointHeader {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: sim.world.ctx.hash.clone(),
            batch,
            time: sim.now(),
        },
        kernel: &sim.kernel,
        state: &sim.world.state,
    };
    let mut out = Vec::new();
    ciborium::into_writer(&snapshot, &mut out).expect("run state serializes");
    out
}

impl Checkpoint {
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, ReplayError> {
        let cp: Checkpoint =
            ciborium::from_reader(bytes).map_err(|e| ReplayError::Format(e.to_string()))?;
        if cp.header.magic != CHECKPOINT_MAGIC {
            return Err(ReplayError::Format(format!(
                "unexpected magic {:?}",
                cp.header.magic
            )));
        }
        if cp.header.version != CHECKPOINT_VERSION {
            return Err(ReplayError::Format(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                cp.header.version
            )));
        }
        Ok(cp)
    }

    pub fn read(path: &Path) -> Result<Checkpoint, ReplayError> {
        Checkpoint::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }

    /// Rebuilds a live run. Refuses a configuration whose hash differs from
    /// the one the checkpoint was taken under.
    pub fn restore(self, ctx: Arc<Resolved>) -> Result<Simulation, ReplayError> {
        if ctx.hash != self.header.config_hash {
            return Err(ReplayError::ConfigMismatch {
                expected: ctx.hash.clone(),
                found: self.header.config_hash,
            });
        }
        Ok(Simulation::from_parts(ctx, self.kernel, self.state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCommand {
    pub command: Command,
    pub reason: String,
}

/// Supplies intervention commands once per batch boundary.
pub trait CommandSource {
    /// Commands submitted for the batch covering `[start, end)`. Anything
    /// returned outside that window is rejected by the caller.
    fn commands_for(
        &mut self,
        batch: u64,
        start: SimTime,
        end: SimTime,
    ) -> Result<Vec<Command>, ReplayError>;

    /// Commands still held when the run reaches its horizon.
    fn undelivered(&mut self) -> Vec<Command> {
        Vec::new()
    }
}

/// Never injects anything.
pub struct NoCommands;

impl CommandSource for NoCommands {
    fn commands_for(
        &mut self,
        _: u64,
        _: SimTime,
        _: SimTime,
    ) -> Result<Vec<Command>, ReplayError> {
        Ok(Vec::new())
    }
}

/// A fixed list handed out batch by batch: each boundary receives every
/// remaining command stamped before the batch end.
pub struct ScriptedCommands {
    pending: Vec<Command>,
}

impl ScriptedCommands {
    pub fn new(mut commands: Vec<Command>) -> Self {
        commands.sort_by_key(|c| c.t);
        ScriptedCommands { pending: commands }
    }
}

impl CommandSource for ScriptedCommands {
    fn commands_for(
        &mut self,
        _: u64,
        _: SimTime,
        end: SimTime,
    ) -> Result<Vec<Command>, ReplayError> {
        let n = self.pending.partition_point(|c| c.t < end);
        Ok(self.pending.drain(..n).collect())
    }

    fn undelivered(&mut self) -> Vec<Command> {
        std::mem::take(&mut self.pending)
    }
}

/// A JSON-lines command file that another process may append to. Each
/// boundary re-reads the file, queues the lines added since the previous
/// read and hands out every queued command stamped before the batch end;
/// a missing file means no commands yet.
pub struct FileCommands {
    path: PathBuf,
    consumed: usize,
    pending: ScriptedCommands,
}

impl FileCommands {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileCommands {
            path: path.into(),
            consumed: 0,
            pending: ScriptedCommands::new(Vec::new()),
        }
    }
}

impl CommandSource for FileCommands {
    fn commands_for(
        &mut self,
        batch: u64,
        start: SimTime,
        end: SimTime,
    ) -> Result<Vec<Command>, ReplayError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => {
                return Err(ReplayError::Io {
                    path: self.path.clone(),
                    source: e,
                })
            }
        };
        let all = parse_commands(&text)?;
        if let Some(fresh) = all.get(self.consumed..) {
            self.pending.pending.extend_from_slice(fresh);
            self.pending.pending.sort_by_key(|c| c.t);
        }
        self.consumed = self.consumed.max(all.len());
        self.pending.commands_for(batch, start, end)
    }

    fn undelivered(&mut self) -> Vec<Command> {
        self.pending.undelivered()
    }
}

/// Splits commands into those inside `[start, end)` and rejections.
pub fn partition_window(
    commands: Vec<Command>,
    start: SimTime,
    end: SimTime,
) -> (Vec<Command>, Vec<RejectedCommand>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for c in commands {
        if c.t >= start && c.t < end {
            accepted.push(c);
        } else {
            let reason = format!(
                "time {} is outside the batch window [{}, {})",
                c.t, start, end
            );
            rejected.push(RejectedCommand { command: c, reason });
        }
    }
    (accepted, rejected)
}

/// Index entry for one batch of an archived run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub batch: u64,
    pub start: SimTime,
    pub end: SimTime,
    pub checkpoint: String,
    pub baseline: String,
    pub intervened: Option<String>,
    pub first_injection: Option<SimTime>,
    pub commands: Vec<Command>,
    pub rejected: Vec<RejectedCommand>,
    /// Whole-run summary at the batch end on the baseline branch.
    pub baseline_summary: RunSummary,
    pub intervened_summary: Option<RunSummary>,
}

/// Contents of `pairs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub config_hash: String,
    pub batch_len: u64,
    pub horizon: SimTime,
    pub batches: Vec<BatchEntry>,
}

impl ArchiveIndex {
    pub fn read(dir: &Path) -> Result<ArchiveIndex, ReplayError> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn entry(&self, batch: u64) -> Result<&BatchEntry, ReplayError> {
        self.batches
            .iter()
            .find(|b| b.batch == batch)
            .ok_or(ReplayError::MissingBatch(batch))
    }

    fn write(&self, dir: &Path) -> Result<(), ReplayError> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&dir.join(INDEX_FILE), text.as_bytes())
    }
}

/// Baseline and intervened slices of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub batch: u64,
    pub commands: Vec<Command>,
    pub first_injection: SimTime,
    pub baseline: Vec<EventRecord>,
    pub intervened: Vec<EventRecord>,
    pub baseline_summary: RunSummary,
    pub intervened_summary: RunSummary,
}

pub struct BatchedRun {
    /// Final state, continuing from whichever branch each batch chose.
    pub sim: Simulation,
    /// The chosen slices concatenated: intervened where a batch had
    /// commands, baseline otherwise.
    pub ledger: Vec<EventRecord>,
    pub pairs: Vec<TrajectoryPair>,
    pub index: ArchiveIndex,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReplayError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_slice(path: &Path, records: &[EventRecord]) -> Result<(), ReplayError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_jsonl(&mut out, records).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_slice(path: &Path) -> Result<Vec<EventRecord>, ReplayError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(read_jsonl(&text)?)
}

fn branch(
    checkpoint: &[u8],
    ctx: &Arc<Resolved>,
    commands: &[Command],
    end: SimTime,
    series: TimeSeries,
    record_series: bool,
) -> Result<Simulation, ReplayError> {
    let mut sim = Checkpoint::from_bytes(checkpoint)?.restore(ctx.clone())?;
    let mut series = series;
    series.truncate_from(sim.now().0);
    let pools = sim.resources().pools().len();
    series.pool_names.truncate(pools);
    series.pool_kinds.truncate(pools);
    sim.world.series = series;
    sim.world.record_series = record_series;
    for c in commands {
        sim.schedule_command(c.clone())
            .expect("window checked against the checkpoint time");
    }
    sim.run_until(end);
    Ok(sim)
}

/// Runs to the horizon in batches of `batch_len` steps. Every batch is
/// checkpointed and run; commands submitted for it are injected into a
/// single replay from the checkpoint, and the run continues from the
/// intervened state. With `archive` set, slices, checkpoints, the index and
/// the configuration are written there.
pub fn run_batched(
    ctx: Arc<Resolved>,
    batch_len: u64,
    source: &mut dyn CommandSource,
    archive: Option<&Path>,
) -> Result<BatchedRun, ReplayError> {
    if batch_len == 0 {
        return Err(ReplayError::BatchLength);
    }
    if let Some(dir) = archive {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_atomic(&dir.join(CONFIG_FILE), ctx.source.to_yaml().as_bytes())?;
    }
    let horizon = ctx.config.horizon();
    let mut index = ArchiveIndex {
        config_hash: ctx.hash.clone(),
        batch_len,
        horizon,
        batches: Vec::new(),
    };
    let mut sim = Simulation::new(ctx.clone());
    let mut ledger = Vec::new();
    let mut pairs = Vec::new();
    let mut batch = 0u64;
    while sim.now() < horizon {
        let start = sim.now();
        let end = SimTime((start.0 + batch_len).min(horizon.0));
        let checkpoint = encode_checkpoint(&sim, batch);
        sim.run_until(end);
        let baseline = sim.kernel.ledger.drain();
        let baseline_summary = sim.summary();

        let submitted = source.commands_for(batch, start, end)?;
        let (commands, rejected) = partition_window(submitted, start, end);
        let mut entry = BatchEntry {
            batch,
            start,
            end,
            checkpoint: format!("checkpoint_{batch}.bin"),
            baseline: format!("baseline_{batch}.evlog"),
            intervened: None,
            first_injection: commands.iter().map(|c| c.t).min(),
            commands: commands.clone(),
            rejected,
            baseline_summary: baseline_summary.clone(),
            intervened_summary: None,
        };
        if let Some(dir) = archive {
            write_atomic(&dir.join(&entry.checkpoint), &checkpoint)?;
            write_slice(&dir.join(&entry.baseline), &baseline)?;
        }

        if commands.is_empty() {
            ledger.extend(baseline);
        } else {
            let series = std::mem::take(&mut sim.world.series);
            let mut replay = branch(
                &checkpoint,
                &ctx,
                &commands,
                end,
                series,
                sim.world.record_series,
            )?;
            let intervened = replay.kernel.ledger.drain();
            let intervened_summary = replay.summary();
            if let Some(dir) = archive {
                let name = format!("intervened_{batch}.evlog");
                write_slice(&dir.join(&name), &intervened)?;
                entry.intervened = Some(name);
            }
            entry.intervened_summary = Some(intervened_summary.clone());
            ledger.extend(intervened.iter().cloned());
            pairs.push(TrajectoryPair {
                batch,
                commands,
                first_injection: entry.first_injection.expect("commands are non-empty"),
                baseline,
                intervened,
                baseline_summary,
                intervened_summary,
            });
            sim = replay;
        }
        index.batches.push(entry);
        if let Some(dir) = archive {
            index.write(dir)?;
        }
        batch += 1;
    }
    let leftover = source.undelivered();
    if let Some(last) = index.batches.last_mut().filter(|_| !leftover.is_empty()) {
        last.rejected
            .extend(leftover.into_iter().map(|command| RejectedCommand {
                reason: format!("time {} is at or past the horizon {}", command.t, horizon),
                command,
            }));
        if let Some(dir) = archive {
            index.write(dir)?;
        }
    }
    Ok(BatchedRun {
        sim,
        ledger,
        pairs,
        index,
    })
}

/// Result of replaying one archived batch with new commands.
pub struct BatchReplay {
    pub pair: TrajectoryPair,
    pub rejected: Vec<RejectedCommand>,
}

/// Restores checkpoint `batch` from an archive, injects `commands`, runs to
/// the batch end and records the intervened slice and index entry.
pub fn replay_batch(
    dir: &Path,
    batch: u64,
    ctx: Arc<Resolved>,
    commands: Vec<Command>,
) -> Result<BatchReplay, ReplayError> {
    let mut index = ArchiveIndex::read(dir)?;
    let entry = index.entry(batch)?.clone();
    let path = dir.join(&entry.checkpoint);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    if checkpoint.header.config_hash != ctx.hash {
        return Err(ReplayError::ConfigMismatch {
            expected: ctx.hash.clone(),
            found: checkpoint.header.config_hash,
        });
    }
    let (accepted, rejected) = partition_window(commands, entry.start, entry.end);
    let mut sim = branch(
        &bytes,
        &ctx,
        &accepted,
        entry.end,
        TimeSeries::default(),
        false,
    )?;
    let intervened = sim.kernel.ledger.drain();
    let intervened_summary = sim.summary();
    let baseline = read_slice(&dir.join(&entry.baseline))?;

    let name = format!("intervened_{batch}.evlog");
    write_slice(&dir.join(&name), &intervened)?;
    let slot = index
        .batches
        .iter_mut()
        .find(|b| b.batch == batch)
        .expect("entry found above");
    slot.intervened = Some(name);
    slot.first_injection = accepted.iter().map(|c| c.t).min();
    slot.commands = accepted.clone();
    slot.rejected = rejected.clone();
    slot.intervened_summary = Some(intervened_summary.clone());
    index.write(dir)?;

    let pair = TrajectoryPair {
        batch,
        first_injection: accepted.iter().map(|c| c.t).min().unwrap_or(entry.end),
        commands: accepted,
        baseline,
        intervened,
        baseline_summary: entry.baseline_summary,
        intervened_summary,
    };
    Ok(BatchReplay { pair, rejected })
}

/// Loads the configuration stored in an archive.
pub fn archive_config(dir: &Path) -> Result<Resolved, ReplayError> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(SimConfig::from_yaml(&text)?.resolve(Some(dir))?)
}
