//! Task assignment and rating submission with soft leases.
//!
//! A dialogue is offered to a judge only while fewer than three judges have
//! rated it or hold an unexpired lease on it, and never to a judge who has
//! already rated it. All state changes go through one mutex.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::store::RatingStore;
use super::{TurnRating, NUM_LABELS};
use crate::corpus::dialogue::{Dialogue, Speaker};
use crate::error::Error;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub lease_secs: u64,
    pub judges_per_turn: usize,
    /// Registered judges; empty means any judge id is accepted.
    pub judges: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            lease_secs: 15 * 60,
            judges_per_turn: 3,
            judges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTurn {
    pub turn_index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub to_rate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub dialogue_id: String,
    pub turns: Vec<TaskTurn>,
    pub rate_turns: Vec<usize>,
    pub lease_expires: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextTask {
    Task(Task),
    Done,
}

/// One rating as submitted; kept wide so out-of-range values reach
/// validation instead of failing deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingInput {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub rating: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub stored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub dialogues: usize,
    pub dialogues_complete: usize,
    pub turns: usize,
    pub turns_complete: usize,
    pub ratings: usize,
    pub active_leases: usize,
    pub per_judge: BTreeMap<String, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown judge '{0}'")]
    UnknownJudge(String),
    #[error("unknown dialogue '{0}'")]
    UnknownDialogue(String),
    #[error("rating {rating} for turn {turn_index} is outside 1..=5; batch rejected")]
    InvalidRating { turn_index: usize, rating: i64 },
    #[error("batch must rate exactly the assigned turns: {0}")]
    Coverage(String),
    #[error("judge '{judge}' already rated dialogue '{dialogue}'")]
    Duplicate { judge: String, dialogue: String },
    #[error("lease on '{0}' expired; request the next task and retry")]
    LeaseExpired(String),
    #[error("no lease on '{0}'; request a task first")]
    NoLease(String),
    #[error(transparent)]
    Storage(#[from] Error),
}

struct State {
    dialogues: Vec<Dialogue>,
    positions: HashMap<String, usize>,
    store: RatingStore,
    /// (judge, dialogue) → lease expiry.
    leases: HashMap<(String, String), u64>,
    /// Judges with ratings per dialogue.
    raters: HashMap<String, BTreeSet<String>>,
}

pub struct AnnotationService {
    config: ServiceConfig,
    clock: Clock,
    state: Mutex<State>,
}

/// Absolute indices of the turns judges rate: the generated continuation,
/// or every turn of a dialogue with no generated part.
pub fn rated_turns(d: &Dialogue) -> Vec<usize> {
    if d.generated.is_empty() {
        (0..d.num_turns()).collect()
    } else {
        (d.seed.len()..d.num_turns()).collect()
    }
}

impl AnnotationService {
    pub fn new(dialogues: Vec<Dialogue>, store: RatingStore, config: ServiceConfig, clock: Clock) -> Self {
        let positions = dialogues
            .iter()
            .enumerate()
            .map(|(i, d)| (d.dialogue_id.clone(), i))
            .collect();
        let mut raters: HashMap<String, BTreeSet<String>> = HashMap::new();
        for r in store.ratings() {
            raters
                .entry(r.dialogue_id.clone())
                .or_default()
                .insert(r.judge_id.clone());
        }
        AnnotationService {
            config,
            clock,
            state: Mutex::new(State {
                dialogues,
                positions,
                store,
                leases: HashMap::new(),
                raters,
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn check_judge(&self, judge: &str) -> Result<(), ServiceError> {
        if judge.is_empty() || (!self.config.judges.is_empty() && !self.config.judges.iter().any(|j| j == judge)) {
            return Err(ServiceError::UnknownJudge(judge.to_string()));
        }
        Ok(())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn assign_task(&self, judge: &str) -> Result<NextTask, ServiceError> {
        self.check_judge(judge)?;
        let now = (self.clock)();
        let mut st = self.lock();
        let held = st
            .leases
            .iter()
            .find(|((j, _), exp)| j == judge && **exp > now)
            .map(|((_, d), exp)| (d.clone(), *exp));
        if let Some((did, exp)) = held {
            let d = &st.dialogues[st.positions[&did]];
            return Ok(NextTask::Task(make_task(d, exp)));
        }
        let mut chosen = None;
        for (i, d) in st.dialogues.iter().enumerate() {
            let raters = st.raters.get(&d.dialogue_id);
            if raters.is_some_and(|r| r.contains(judge)) {
                continue;
            }
            let leased = st
                .leases
                .iter()
                .filter(|((j, did), exp)| did == &d.dialogue_id && **exp > now && j != judge)
                .count();
            let done = raters.map_or(0, BTreeSet::len);
            if done + leased < self.config.judges_per_turn {
                chosen = Some(i);
                break;
            }
        }
        let Some(i) = chosen else {
            return Ok(NextTask::Done);
        };
        let did = st.dialogues[i].dialogue_id.clone();
        let exp = now + self.config.lease_secs;
        st.leases.insert((judge.to_string(), did), exp);
        Ok(NextTask::Task(make_task(&st.dialogues[i], exp)))
    }

    pub fn submit_ratings(&self, judge: &str, batch: &[RatingInput]) -> Result<Ack, ServiceError> {
        self.check_judge(judge)?;
        let Some(first) = batch.first() else {
            return Err(ServiceError::Coverage("empty batch".into()));
        };
        for r in batch {
            if !(1..=NUM_LABELS as i64).contains(&r.rating) {
                return Err(ServiceError::InvalidRating {
                    turn_index: r.turn_index,
                    rating: r.rating,
                });
            }
        }
        let did = first.dialogue_id.clone();
        if batch.iter().any(|r| r.dialogue_id != did) {
            return Err(ServiceError::Coverage("all ratings must belong to one dialogue".into()));
        }
        let now = (self.clock)();
        let mut st = self.lock();
        let pos = *st
            .positions
            .get(&did)
            .ok_or_else(|| ServiceError::UnknownDialogue(did.clone()))?;
        if st.raters.get(&did).is_some_and(|r| r.contains(judge)) {
            return Err(ServiceError::Duplicate {
                judge: judge.to_string(),
                dialogue: did,
            });
        }
        let lease_key = (judge.to_string(), did.clone());
        match st.leases.get(&lease_key) {
            None => return Err(ServiceError::NoLease(did)),
            Some(&exp) if exp <= now => {
                st.leases.remove(&lease_key);
                return Err(ServiceError::LeaseExpired(did));
            }
            Some(_) => {}
        }
        let expected: BTreeSet<usize> = rated_turns(&st.dialogues[pos]).into_iter().collect();
        let got: BTreeSet<usize> = batch.iter().map(|r| r.turn_index).collect();
        if got.len() != batch.len() {
            return Err(ServiceError::Coverage("a turn is rated twice".into()));
        }
        if got != expected {
            return Err(ServiceError::Coverage(format!(
                "expected turns {expected:?}, got {got:?}"
            )));
        }
        let rows: Vec<TurnRating> = batch
            .iter()
            .map(|r| TurnRating {
                dialogue_id: did.clone(),
                turn_index: r.turn_index,
                judge_id: judge.to_string(),
                rating: r.rating as u8,
                timestamp: now,
            })
            .collect();
        let n = rows.len();
        st.store.commit(rows)?;
        st.leases.remove(&lease_key);
        st.raters.entry(did).or_default().insert(judge.to_string());
        Ok(Ack { stored: n })
    }

    pub fn progress(&self) -> Progress {
        let now = (self.clock)();
        let st = self.lock();
        let mut per_turn: HashMap<(&str, usize), usize> = HashMap::new();
        let mut per_judge = BTreeMap::new();
        for r in st.store.ratings() {
            *per_turn.entry((r.dialogue_id.as_str(), r.turn_index)).or_default() += 1;
            *per_judge.entry(r.judge_id.clone()).or_default() += 1;
        }
        let need = self.config.judges_per_turn;
        let mut turns = 0;
        let mut turns_complete = 0;
        let mut dialogues_complete = 0;
        for d in &st.dialogues {
            let idx = rated_turns(d);
            turns += idx.len();
            let complete = idx
                .iter()
                .filter(|&&t| per_turn.get(&(d.dialogue_id.as_str(), t)).copied().unwrap_or(0) >= need)
                .count();
            turns_complete += complete;
            if complete == idx.len() {
                dialogues_complete += 1;
            }
        }
        Progress {
            dialogues: st.dialogues.len(),
            dialogues_complete,
            turns,
            turns_complete,
            ratings: st.store.len(),
            active_leases: st.leases.values().filter(|&&e| e > now).count(),
            per_judge,
        }
    }

    pub fn ratings(&self) -> Vec<TurnRating> {
        self.lock().store.ratings().to_vec()
    }

    pub fn export_csv(&self) -> Result<String, ServiceError> {
        Ok(self.lock().store.to_csv()?)
    }
}

fn make_task(d: &Dialogue, lease_expires: u64) -> Task {
    let rate = rated_turns(d);
    Task {
        dialogue_id: d.dialogue_id.clone(),
        turns: d
            .turns()
            .enumerate()
            .map(|(i, u)| TaskTurn {
                turn_index: i,
                speaker: u.speaker,
                text: u.text(),
                to_rate: rate.contains(&i),
            })
            .collect(),
        rate_turns: rate,
        lease_expires,
    }
}
