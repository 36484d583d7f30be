//! The human oracle: a queue of outstanding label queries shared between the
//! trainer thread and the HTTP service.
//!
//! The trainer calls [`Oracle::ask`], which enqueues the query and blocks
//! until the service delivers an answer for that `query_id` or the timeout
//! passes. A query accepts exactly one answer.

mod server;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use ssal_core::oracle::{validate_answer, AnswerSource, LabelAnswer, LabelQuery, Oracle, OracleError};
use ssal_core::trainer::Phase;
use ssal_core::Image;

pub use server::{router, serve, LabelServer};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Live run figures reported by `/api/v1/status`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub labels_collected: usize,
    pub budget: usize,
    pub test_accuracy: Option<f64>,
    pub step: u64,
    pub total_steps: u64,
    pub phase: Option<Phase>,
    pub finished: bool,
}

#[derive(Debug, Clone)]
pub struct PendingQuery {
    pub query: LabelQuery,
    pub issued_at_ms: u64,
}

/// Outcome of submitting an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submit {
    Accepted,
    UnknownQuery,
    AlreadyAnswered,
    LabelOutOfRange { num_classes: usize },
}

#[derive(Default)]
struct Inner {
    pending: BTreeMap<u64, PendingQuery>,
    answers: HashMap<u64, LabelAnswer>,
    answered: HashSet<u64>,
    status: RunStatus,
    closed: bool,
}

/// Bounded set of outstanding queries plus the run status.
pub struct LabelQueue {
    inner: Mutex<Inner>,
    changed: Condvar,
    capacity: usize,
}

impl LabelQueue {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(LabelQueue {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            capacity: capacity.max(1),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Oldest outstanding query and the number outstanding.
    pub fn next(&self) -> Option<(PendingQuery, usize)> {
        let g = self.lock();
        g.pending.values().next().cloned().map(|p| (p, g.pending.len()))
    }

    pub fn depth(&self) -> usize {
        self.lock().pending.len()
    }

    /// Image of an outstanding query.
    pub fn image(&self, query_id: u64) -> Option<Image> {
        self.lock().pending.get(&query_id).map(|p| p.query.image.clone())
    }

    pub fn submit(&self, query_id: u64, label: i64) -> Submit {
        let mut g = self.lock();
        if g.answered.contains(&query_id) {
            return Submit::AlreadyAnswered;
        }
        let Some(p) = g.pending.get(&query_id) else {
            return Submit::UnknownQuery;
        };
        let num_classes = p.query.class_names.len();
        if label < 0 || label as usize >= num_classes {
            return Submit::LabelOutOfRange { num_classes };
        }
        g.pending.remove(&query_id);
        g.answered.insert(query_id);
        g.answers.insert(
            query_id,
            LabelAnswer {
                query_id,
                label: label as usize,
                answered_at_ms: now_ms(),
                source: AnswerSource::Human,
            },
        );
        drop(g);
        self.changed.notify_all();
        Submit::Accepted
    }

    pub fn status(&self) -> RunStatus {
        self.lock().status.clone()
    }

    pub fn update_status(&self, f: impl FnOnce(&mut RunStatus)) {
        f(&mut self.lock().status);
    }

    /// Wake every waiting `ask` with an error and refuse new queries.
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    fn ask(&self, query: &LabelQuery, timeout: Option<Duration>) -> Result<LabelAnswer, OracleError> {
        let id = query.query_id;
        let mut g = self.lock();
        if g.closed {
            return Err(OracleError::Unavailable("label queue is closed".into()));
        }
        if g.pending.len() >= self.capacity {
            return Err(OracleError::Unavailable("label queue is full".into()));
        }
        if g.pending.contains_key(&id) || g.answered.contains(&id) {
            return Err(OracleError::Unavailable(format!("query {id} was already issued")));
        }
        g.pending.insert(
            id,
            PendingQuery {
                query: query.clone(),
                issued_at_ms: now_ms(),
            },
        );
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(answer) = g.answers.remove(&id) {
                return validate_answer(query, &answer).map(|_| answer);
            }
            if g.closed {
                g.pending.remove(&id);
                return Err(OracleError::Unavailable("label queue is closed".into()));
            }
            g = match deadline {
                None => self.changed.wait(g).unwrap_or_else(|p| p.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        g.pending.remove(&id);
                        return Err(OracleError::Timeout { query_id: id });
                    }
                    self.changed
                        .wait_timeout(g, d - now)
                        .unwrap_or_else(|p| p.into_inner())
                        .0
                }
            };
        }
    }
}

/// Oracle answered through the HTTP service.
#[derive(Clone)]
pub struct HumanOracle {
    queue: Arc<LabelQueue>,
}

impl HumanOracle {
    pub fn new(queue: Arc<LabelQueue>) -> Self {
        HumanOracle { queue }
    }
}

impl Oracle for HumanOracle {
    fn ask(&mut self, query: &LabelQuery, timeout: Option<Duration>) -> Result<LabelAnswer, OracleError> {
        self.queue.ask(query, timeout)
    }
}

/// 8-bit PNG (RGB, or grey for one channel).
pub fn encode_png(img: &Image) -> Result<Vec<u8>, png::EncodingError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width() as u32, img.height() as u32);
        enc.set_color(match img.channels() {
            1 => png::ColorType::Grayscale,
            _ => png::ColorType::Rgb,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(&img.to_u8())?;
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn query(id: u64) -> LabelQuery {
        LabelQuery {
            query_id: id,
            dataset_index: id as usize * 10,
            image: Image::filled(4, 4, 3, 0.5),
            class_names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        }
    }

    fn wait_for_depth(q: &LabelQueue, n: usize) {
        while q.depth() < n {
            thread::sleep(Duration::from_millis(2));
        }
    }

    #[test]
    fn out_of_order_answers_match_by_id() {
        let q = LabelQueue::new(8);
        let handles: Vec<_> = [0u64, 1]
            .into_iter()
            .map(|id| {
                let mut o = HumanOracle::new(q.clone());
                thread::spawn(move || o.ask(&query(id), None).unwrap())
            })
            .collect();
        wait_for_depth(&q, 2);
        assert_eq!(q.submit(1, 2), Submit::Accepted);
        assert_eq!(q.submit(0, 3), Submit::Accepted);
        let answers: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!((answers[0].query_id, answers[0].label), (0, 3));
        assert_eq!((answers[1].query_id, answers[1].label), (1, 2));
        assert!(answers.iter().all(|a| a.source == AnswerSource::Human));
    }

    #[test]
    fn one_answer_per_query() {
        let q = LabelQueue::new(8);
        let mut o = HumanOracle::new(q.clone());
        let h = thread::spawn(move || o.ask(&query(5), None));
        wait_for_depth(&q, 1);
        assert_eq!(q.submit(5, 9), Submit::LabelOutOfRange { num_classes: 4 });
        assert_eq!(q.submit(5, -1), Submit::LabelOutOfRange { num_classes: 4 });
        assert_eq!(q.submit(6, 1), Submit::UnknownQuery);
        assert_eq!(q.submit(5, 1), Submit::Accepted);
        assert_eq!(q.submit(5, 2), Submit::AlreadyAnswered);
        assert_eq!(h.join().unwrap().unwrap().label, 1);
        assert_eq!(q.depth(), 0);
    }

    #[test]
    fn timeout_withdraws_the_query() {
        let q = LabelQueue::new(8);
        let err = HumanOracle::new(q.clone())
            .ask(&query(2), Some(Duration::from_millis(20)))
            .unwrap_err();
        assert_eq!(err, OracleError::Timeout { query_id: 2 });
        assert_eq!(q.depth(), 0);
        assert_eq!(q.submit(2, 0), Submit::UnknownQuery);
    }

    #[test]
    fn closing_releases_waiters() {
        let q = LabelQueue::new(8);
        let mut o = HumanOracle::new(q.clone());
        let h = thread::spawn(move || o.ask(&query(1), None));
        wait_for_depth(&q, 1);
        q.close();
        assert!(matches!(h.join().unwrap(), Err(OracleError::Unavailable(_))));
    }

    #[test]
    fn png_has_signature_and_size() {
        let png = encode_png(&Image::filled(3, 5, 3, 1.0)).unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(u32::from_be_bytes(png[16..20].try_into().unwrap()), 5);
        assert_eq!(u32::from_be_bytes(png[20..24].try_into().unwrap()), 3);
    }
}
