use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::demographics::Demographics;
use super::{Annotation, HumanBenchError, StudyConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub demographics: Demographics,
    /// Every image ever handed to this session.
    pub assigned: BTreeSet<String>,
    pub annotated: BTreeSet<String>,
}

/// Batch assignment state. Callers serialize access (one writer); every
/// image's completed plus in-flight count stays at or below the cap.
#[derive(Debug, Clone)]
pub struct Assigner {
    pool: Vec<String>,
    batch_size: usize,
    max_assessments: u32,
    timeout_ms: u64,
    completed: HashMap<String, u32>,
    /// image -> session -> assignment time (ms).
    in_flight: HashMap<String, BTreeMap<String, u64>>,
    sessions: HashMap<String, SessionState>,
}

fn tiebreak(session: &str, image: &str) -> [u8; 8] {
    let d = Sha256::digest(format!("{session}:{image}").as_bytes());
    d[..8].try_into().expect("8 bytes")
}

impl Assigner {
    pub fn new(cfg: &StudyConfig) -> Self {
        let mut pool: Vec<String> = cfg.images.iter().map(|i| i.id.clone()).collect();
        pool.sort();
        Self {
            completed: pool.iter().map(|id| (id.clone(), 0)).collect(),
            pool,
            batch_size: cfg.batch_size,
            max_assessments: cfg.max_assessments,
            timeout_ms: cfg.inflight_timeout_secs.saturating_mul(1000),
            in_flight: HashMap::new(),
            sessions: HashMap::new(),
        }
    }

    pub fn open_session(&mut self, id: &str, demographics: Demographics) {
        self.sessions.entry(id.to_string()).or_insert_with(|| SessionState {
            demographics,
            assigned: BTreeSet::new(),
            annotated: BTreeSet::new(),
        });
    }

    pub fn session(&self, id: &str) -> Option<&SessionState> {
        self.sessions.get(id)
    }

    pub fn completed(&self, image: &str) -> u32 {
        self.completed.get(image).copied().unwrap_or(0)
    }

    pub fn in_flight(&self, image: &str) -> u32 {
        self.in_flight.get(image).map_or(0, |m| m.len() as u32)
    }

    /// Returns expired assignments to the pool.
    pub fn expire(&mut self, now_ms: u64) {
        let timeout = self.timeout_ms;
        for sessions in self.in_flight.values_mut() {
            sessions.retain(|_, at| now_ms.saturating_sub(*at) < timeout);
        }
        self.in_flight.retain(|_, s| !s.is_empty());
    }

    fn pending(&self, session: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .in_flight
            .iter()
            .filter(|(_, s)| s.contains_key(session))
            .map(|(img, _)| img.clone())
            .collect();
        out.sort();
        out
    }

    /// The session's unanswered assignments if any, else a fresh batch of
    /// the least assessed images it has not seen.
    pub fn next_batch(&mut self, session: &str, now_ms: u64) -> Result<Vec<String>, HumanBenchError> {
        if !self.sessions.contains_key(session) {
            return Err(HumanBenchError::UnknownSession(session.to_string()));
        }
        self.expire(now_ms);
        let pending = self.pending(session);
        if !pending.is_empty() {
            return Ok(pending);
        }
        let seen = &self.sessions[session].assigned;
        let mut candidates: Vec<(u32, u32, [u8; 8], &String)> = self
            .pool
            .iter()
            .filter(|id| !seen.contains(*id))
            .filter(|id| self.completed(id) + self.in_flight(id) < self.max_assessments)
            .map(|id| (self.completed(id), self.in_flight(id), tiebreak(session, id), id))
            .collect();
        if candidates.is_empty() {
            return Err(HumanBenchError::PoolExhausted);
        }
        candidates.sort();
        let batch: Vec<String> = candidates.into_iter().take(self.batch_size).map(|c| c.3.clone()).collect();
        let state = self.sessions.get_mut(session).expect("checked above");
        for id in &batch {
            state.assigned.insert(id.clone());
            self.in_flight.entry(id.clone()).or_default().insert(session.to_string(), now_ms);
        }
        let mut sorted = batch;
        sorted.sort();
        Ok(sorted)
    }

    /// Checks that `a` answers an assignment of its session and counts it.
    /// A late answer to an expired assignment is taken only while the image
    /// is still under the cap.
    pub fn record(&mut self, a: &Annotation) -> Result<(), HumanBenchError> {
        let reject = |reason: String| HumanBenchError::InvalidAnnotation { annotation_id: a.annotation_id.clone(), reason };
        let Some(state) = self.sessions.get(&a.session_id) else {
            return Err(HumanBenchError::UnknownSession(a.session_id.clone()));
        };
        if !state.assigned.contains(&a.image_id) {
            return Err(reject(format!("image {} was not assigned to this session", a.image_id)));
        }
        if state.annotated.contains(&a.image_id) {
            return Err(reject(format!("image {} already annotated in this session", a.image_id)));
        }
        let live = self.in_flight.get_mut(&a.image_id).and_then(|s| s.remove(&a.session_id)).is_some();
        if !live && self.completed(&a.image_id) + self.in_flight(&a.image_id) >= self.max_assessments {
            return Err(reject(format!("assignment of {} expired and the image is fully assessed", a.image_id)));
        }
        self.in_flight.retain(|_, s| !s.is_empty());
        self.replay(a);
        Ok(())
    }

    /// Counts a stored annotation without checks (used when reloading).
    pub fn replay(&mut self, a: &Annotation) {
        *self.completed.entry(a.image_id.clone()).or_insert(0) += 1;
        if let Some(state) = self.sessions.get_mut(&a.session_id) {
            state.assigned.insert(a.image_id.clone());
            state.annotated.insert(a.image_id.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::human_bench::tests::pool;
    use crate::metrics::{BBox, Label};

    fn demo() -> Demographics {
        serde_json::from_str(
            r#"{"gender":"female","age_range":"18-24","education":"eqf_6","current_education":"eqf_7",
                "ai_familiarity":"slightly_familiar","photography":"basic"}"#,
        )
        .unwrap()
    }

    fn answer(session: &str, image: &str, n: usize) -> Annotation {
        Annotation {
            annotation_id: format!("{session}-{image}-{n}"),
            session_id: session.into(),
            image_id: image.into(),
            verdict: Label::Inpainted,
            boxes: vec![BBox::new(0, 0, 1, 1)],
            elapsed_ms: 0,
        }
    }

    #[test]
    fn fresh_batch_is_distinct() {
        let mut a = Assigner::new(&pool(20, 20));
        a.open_session("s", demo());
        let b = a.next_batch("s", 0).unwrap();
        assert_eq!(b.len(), 20);
        assert_eq!(b.iter().collect::<BTreeSet<_>>().len(), 20);
        // Asking again before answering returns the same batch.
        assert_eq!(a.next_batch("s", 1).unwrap(), b);
    }

    #[test]
    fn full_image_never_assigned() {
        let cfg = pool(3, 0);
        let mut a = Assigner::new(&cfg);
        for s in 0..5 {
            let sid = format!("old{s}");
            a.open_session(&sid, demo());
            a.sessions.get_mut(&sid).unwrap().assigned.insert("inp000".into());
            a.record(&answer(&sid, "inp000", 0)).unwrap();
        }
        assert_eq!(a.completed("inp000"), 5);
        a.open_session("new", demo());
        let b = a.next_batch("new", 0).unwrap();
        assert!(!b.contains(&"inp000".to_string()));
    }

    #[test]
    fn expiry_returns_images() {
        let mut cfg = pool(2, 0);
        cfg.max_assessments = 1;
        cfg.min_assessments = 1;
        let mut a = Assigner::new(&cfg);
        a.open_session("s1", demo());
        a.open_session("s2", demo());
        assert_eq!(a.next_batch("s1", 0).unwrap().len(), 2);
        assert!(matches!(a.next_batch("s2", 1000), Err(HumanBenchError::PoolExhausted)));
        let later = cfg.inflight_timeout_secs * 1000;
        assert_eq!(a.next_batch("s2", later).unwrap().len(), 2);
        // s1's late answer is refused: s2 now holds the only slot.
        assert!(a.record(&answer("s1", "inp000", 0)).is_err());
        a.record(&answer("s2", "inp000", 0)).unwrap();
    }

    #[test]
    fn foreign_and_repeat_answers_rejected() {
        let mut a = Assigner::new(&pool(2, 0));
        a.open_session("s", demo());
        a.next_batch("s", 0).unwrap();
        assert!(a.record(&answer("s", "nope", 0)).is_err());
        a.record(&answer("s", "inp000", 0)).unwrap();
        assert!(a.record(&answer("s", "inp000", 1)).is_err());
        assert!(matches!(a.record(&answer("x", "inp000", 0)), Err(HumanBenchError::UnknownSession(_))));
    }

    /// Replays random interleavings of several sessions (fetch, partial
    /// answers, abandonment with expiry) and checks the cap after every
    /// step by recounting from an independent ledger.
    fn simulate(seed: u64, n_images: usize, n_sessions: usize) -> (Assigner, HashMap<String, u32>) {
        let mut cfg = pool(n_images, 0);
        cfg.batch_size = 4;
        let max = cfg.max_assessments;
        let mut a = Assigner::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ledger: HashMap<String, u32> = HashMap::new();
        let mut holding: HashMap<String, Vec<String>> = HashMap::new();
        let mut now = 0u64;
        let mut live: Vec<String> = Vec::new();
        let mut opened = 0;
        for step in 0..4000 {
            now += rng.random_range(0..120_000);
            if (live.len() < 3 && opened < n_sessions) || (opened < n_sessions && rng.random_bool(0.05)) {
                let sid = format!("s{opened}");
                opened += 1;
                a.open_session(&sid, demo());
                live.push(sid);
            }
            if live.is_empty() {
                break;
            }
            let sid = live[rng.random_range(0..live.len())].clone();
            let held = holding.entry(sid.clone()).or_default();
            if held.is_empty() {
                match a.next_batch(&sid, now) {
                    Ok(b) => *held = b,
                    Err(HumanBenchError::PoolExhausted) => {
                        live.retain(|s| s != &sid);
                        continue;
                    }
                    Err(e) => panic!("{e}"),
                }
            } else if rng.random_bool(0.02) {
                // Abandon: drop what we hold and leave.
                held.clear();
                live.retain(|s| s != &sid);
            } else {
                let img = held.remove(rng.random_range(0..held.len()));
                if a.record(&answer(&sid, &img, step)).is_ok() {
                    *ledger.entry(img).or_default() += 1;
                }
            }
            for id in &a.pool {
                assert!(ledger.get(id).copied().unwrap_or(0) + a.in_flight(id) <= max);
            }
        }
        (a, ledger)
    }

    #[test]
    fn concurrent_sessions_respect_cap() {
        for seed in 0..5 {
            let (a, ledger) = simulate(seed, 12, 30);
            for id in &a.pool {
                assert_eq!(a.completed(id), ledger.get(id).copied().unwrap_or(0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn completed_study_is_fair(seed in any::<u64>(), n_images in 4usize..16) {
            // Diligent participants only: everyone answers every batch.
            let mut cfg = pool(n_images, 0);
            cfg.batch_size = 3;
            let mut a = Assigner::new(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = 0;
            loop {
                let sid = format!("p{s}");
                s += 1;
                a.open_session(&sid, demo());
                let rounds = rng.random_range(1..4);
                let mut exhausted = false;
                for _ in 0..rounds {
                    match a.next_batch(&sid, 0) {
                        Ok(batch) => for img in batch { a.record(&answer(&sid, &img, 0)).unwrap(); },
                        Err(_) => { exhausted = true; break; }
                    }
                }
                if exhausted && a.pool.iter().all(|id| a.completed(id) == cfg.max_assessments) {
                    break;
                }
                prop_assert!(s < 1000);
            }
            for id in &a.pool {
                let c = a.completed(id);
                prop_assert!(c >= cfg.min_assessments && c <= cfg.max_assessments);
            }
        }
    }
}
