//! Resumable, abortable batch scanning over host-supplied text units.
//!
//! A host (browser extension, CLI) extracts [`TextUnit`]s, starts a
//! [`ScanSession`] and drives it with [`ScanSession::next_batch`]. The abort
//! flag may be raised from any thread through an [`AbortHandle`]; it is
//! checked before and after each batch, so at most the batch in flight
//! completes after it is set.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::classify::{score_checked, Classifier, ClassifyError, DEFAULT_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("cannot {op} a session that is {state}")]
    State { op: &'static str, state: ScanState },
    #[error("duplicate locator `{0}`")]
    DuplicateLocator(String),
    #[error("invalid scan configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextUnit {
    pub locator: String,
    pub text: String,
}

impl TextUnit {
    pub fn new(locator: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            locator: locator.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanState {
    Idle,
    Scanning,
    Paused,
    Aborted,
    Done,
}

impl ScanState {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanState::Idle => "idle",
            ScanState::Scanning => "scanning",
            ScanState::Paused => "paused",
            ScanState::Aborted => "aborted",
            ScanState::Done => "done",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ScanState::Aborted | ScanState::Done)
    }
}

impl fmt::Display for ScanState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub batch_size: usize,
    pub threshold: f64,
    /// Units with fewer characters than this (after trimming) are skipped.
    pub min_len: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            threshold: DEFAULT_THRESHOLD,
            min_len: 3,
        }
    }
}

impl ScanConfig {
    fn validate(&self) -> Result<(), ScanError> {
        if self.batch_size == 0 {
            return Err(ScanError::Config("batch_size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ScanError::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

type Loader = Box<dyn Fn() -> Result<Arc<dyn Classifier>, ClassifyError> + Send + Sync>;

/// Loads a classifier on first use and hands the same instance to every
/// later session.
pub struct ClassifierSlot {
    loader: Loader,
    loaded: Mutex<Option<Arc<dyn Classifier>>>,
    inits: AtomicUsize,
}

impl ClassifierSlot {
    pub fn new<F>(loader: F) -> Self
    where
        F: Fn() -> Result<Arc<dyn Classifier>, ClassifyError> + Send + Sync + 'static,
    {
        Self {
            loader: Box::new(loader),
            loaded: Mutex::new(None),
            inits: AtomicUsize::new(0),
        }
    }

    /// Wraps an already built classifier; the loader runs once on first use.
    pub fn ready(classifier: Arc<dyn Classifier>) -> Self {
        Self::new(move || Ok(classifier.clone()))
    }

    /// Returns the loaded classifier, loading it if needed. A failed load is
    /// retried on the next call.
    pub fn get(&self) -> Result<Arc<dyn Classifier>, ClassifyError> {
        let mut slot = self.loaded.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(c) = slot.as_ref() {
            return Ok(c.clone());
        }
        self.inits.fetch_add(1, Ordering::SeqCst);
        let c = (self.loader)()?;
        *slot = Some(c.clone());
        Ok(c)
    }

    /// Number of times the loader has been invoked.
    pub fn init_count(&self) -> usize {
        self.inits.load(Ordering::SeqCst)
    }
}

/// Shared stop flag; cloning yields another handle to the same flag.
#[derive(Debug, Clone, Default)]
pub struct AbortHandle(Arc<AtomicBool>);

impl AbortHandle {
    pub fn abort(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_aborted(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// A flagged unit, streamed to hosts as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoilerSpan {
    pub locator: String,
    pub text: String,
    #[serde(rename = "score")]
    pub toxic_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub processed: usize,
    pub total: usize,
    pub state: ScanState,
}

/// Serializable session summary, polled by the extension popup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub processed: usize,
    pub total: usize,
    pub state: ScanState,
    pub findings_count: usize,
}

/// Popup to content-script command, `{"cmd": "start" | "stop" | "resume" | "status"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum ScanCommand {
    Start,
    Stop,
    Resume,
    Status,
}

/// Writes spans as JSON lines.
pub fn write_findings<W: Write>(mut out: W, spans: &[SpoilerSpan]) -> io::Result<()> {
    for span in spans {
        serde_json::to_writer(&mut out, span)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub struct ScanSession {
    units: Vec<TextUnit>,
    skipped: Vec<bool>,
    cursor: usize,
    state: ScanState,
    config: ScanConfig,
    abort: AbortHandle,
    findings: Vec<SpoilerSpan>,
    classifier: Option<Arc<dyn Classifier>>,
    invocations: usize,
}

impl fmt::Debug for ScanSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScanSession")
            .field("units", &self.units.len())
            .field("cursor", &self.cursor)
            .field("state", &self.state)
            .field("findings", &self.findings.len())
            .finish()
    }
}

/// Loads (or reuses) the classifier and returns a session ready to scan.
pub fn start_scan(
    units: Vec<TextUnit>,
    slot: &ClassifierSlot,
    config: ScanConfig,
) -> Result<ScanSession, ScanError> {
    let mut session = ScanSession::new(units, config)?;
    session.start(slot)?;
    Ok(session)
}

impl ScanSession {
    /// Builds an idle session over a fixed unit list.
    pub fn new(units: Vec<TextUnit>, config: ScanConfig) -> Result<Self, ScanError> {
        config.validate()?;
        let mut seen = HashSet::new();
        for u in &units {
            if !seen.insert(u.locator.as_str()) {
                return Err(ScanError::DuplicateLocator(u.locator.clone()));
            }
        }
        let skipped = units
            .iter()
            .map(|u| u.text.trim().chars().count() < config.min_len)
            .collect();
        Ok(Self {
            units,
            skipped,
            cursor: 0,
            state: ScanState::Idle,
            config,
            abort: AbortHandle::default(),
            findings: Vec::new(),
            classifier: None,
            invocations: 0,
        })
    }

    /// Idle to Scanning. The classifier is obtained before any batch runs.
    pub fn start(&mut self, slot: &ClassifierSlot) -> Result<(), ScanError> {
        self.observe_abort();
        if self.state != ScanState::Idle {
            return Err(ScanError::State {
                op: "start",
                state: self.state,
            });
        }
        self.classifier = Some(slot.get()?);
        self.state = if self.units.is_empty() {
            ScanState::Done
        } else {
            ScanState::Scanning
        };
        Ok(())
    }

    fn observe_abort(&mut self) {
        if self.abort.is_aborted() && !self.state.is_terminal() {
            self.state = ScanState::Aborted;
        }
    }

    /// Classifies the next `batch_size` units and returns the spans found in
    /// them. Short units are passed over without classification.
    pub fn next_batch(&mut self) -> Result<Vec<SpoilerSpan>, ScanError> {
        self.observe_abort();
        if self.state != ScanState::Scanning {
            return Err(ScanError::State {
                op: "advance",
                state: self.state,
            });
        }
        let end = (self.cursor + self.config.batch_size).min(self.units.len());
        let picked: Vec<usize> = (self.cursor..end).filter(|&i| !self.skipped[i]).collect();
        let mut spans = Vec::new();
        if !picked.is_empty() {
            let classifier = self
                .classifier
                .as_ref()
                .expect("scanning session holds a classifier");
            let texts: Vec<&str> = picked
                .iter()
                .map(|&i| self.units[i].text.as_str())
                .collect();
            self.invocations += 1;
            let scores = score_checked(classifier.as_ref(), &texts)?;
            for (&i, score) in picked.iter().zip(scores) {
                if score >= self.config.threshold {
                    let unit = &self.units[i];
                    spans.push(SpoilerSpan {
                        locator: unit.locator.clone(),
                        text: unit.text.clone(),
                        toxic_score: score,
                    });
                }
            }
        }
        self.cursor = end;
        self.findings.extend(spans.iter().cloned());
        self.observe_abort();
        if self.state == ScanState::Scanning && self.cursor == self.units.len() {
            self.state = ScanState::Done;
        }
        Ok(spans)
    }

    /// Runs batches until the session stops scanning, returning the new spans.
    pub fn run_to_end(&mut self) -> Result<Vec<SpoilerSpan>, ScanError> {
        let mut out = Vec::new();
        while self.state() == ScanState::Scanning {
            out.extend(self.next_batch()?);
        }
        Ok(out)
    }

    pub fn pause(&mut self) -> Result<(), ScanError> {
        self.transition("pause", ScanState::Scanning, ScanState::Paused)
    }

    pub fn resume(&mut self) -> Result<(), ScanError> {
        self.transition("resume", ScanState::Paused, ScanState::Scanning)
    }

    fn transition(
        &mut self,
        op: &'static str,
        from: ScanState,
        to: ScanState,
    ) -> Result<(), ScanError> {
        self.observe_abort();
        if self.state != from {
            return Err(ScanError::State {
                op,
                state: self.state,
            });
        }
        self.state = to;
        Ok(())
    }

    /// Stops the session for good. Aborting a finished or already aborted
    /// session changes nothing.
    pub fn abort(&mut self) {
        if self.state != ScanState::Done {
            self.abort.abort();
        }
        self.observe_abort();
    }

    /// Handle for raising the abort flag from another thread.
    pub fn abort_handle(&self) -> AbortHandle {
        self.abort.clone()
    }

    /// Current state, reflecting an abort raised through a handle.
    pub fn state(&mut self) -> ScanState {
        self.observe_abort();
        self.state
    }

    pub fn progress(&mut self) -> Progress {
        Progress {
            processed: self.cursor,
            total: self.units.len(),
            state: self.state(),
        }
    }

    pub fn snapshot(&mut self) -> SessionSnapshot {
        let p = self.progress();
        SessionSnapshot {
            processed: p.processed,
            total: p.total,
            state: p.state,
            findings_count: self.findings.len(),
        }
    }

    pub fn findings(&self) -> &[SpoilerSpan] {
        &self.findings
    }

    pub fn units(&self) -> &[TextUnit] {
        &self.units
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Number of classifier calls made so far.
    pub fn invocations(&self) -> usize {
        self.invocations
    }

    pub fn config(&self) -> &ScanConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Lexicon;
    use proptest::prelude::*;

    fn lexicon_slot() -> ClassifierSlot {
        ClassifierSlot::ready(Arc::new(Lexicon::builtin()))
    }

    fn units(texts: &[&str]) -> Vec<TextUnit> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| TextUnit::new(format!("u{i}"), *t))
            .collect()
    }

    fn numbered(n: usize) -> Vec<TextUnit> {
        (0..n)
            .map(|i| {
                TextUnit::new(
                    format!("n{i}"),
                    if i % 5 == 0 { "you noob" } else { "nice play" },
                )
            })
            .collect()
    }

    #[test]
    fn flags_only_the_toxic_unit() {
        let mut s = start_scan(
            units(&["gg", "mother fucking noob"]),
            &lexicon_slot(),
            ScanConfig::default(),
        )
        .unwrap();
        let spans = s.next_batch().unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].locator, "u1");
        assert_eq!(s.state(), ScanState::Done);
    }

    #[test]
    fn benign_batch_advances() {
        let mut s = start_scan(
            units(&["nice play", "well done"]),
            &lexicon_slot(),
            ScanConfig::default(),
        )
        .unwrap();
        assert!(s.next_batch().unwrap().is_empty());
        assert_eq!(
            s.progress(),
            Progress {
                processed: 2,
                total: 2,
                state: ScanState::Done
            }
        );
    }

    #[test]
    fn empty_session_is_done() {
        let mut s = start_scan(Vec::new(), &lexicon_slot(), ScanConfig::default()).unwrap();
        assert_eq!(
            s.progress(),
            Progress {
                processed: 0,
                total: 0,
                state: ScanState::Done
            }
        );
    }

    #[test]
    fn hundred_units_take_seven_batches() {
        let mut s = start_scan(numbered(100), &lexicon_slot(), ScanConfig::default()).unwrap();
        let mut batches = 0;
        while s.state() == ScanState::Scanning {
            s.next_batch().unwrap();
            batches += 1;
            let p = s.progress();
            assert_eq!(p.processed, (batches * 16).min(100));
        }
        assert_eq!(batches, 7);
        assert_eq!(s.invocations(), 7);
        assert_eq!(s.findings().len(), 20);
    }

    #[test]
    fn slot_loads_once() {
        let slot = ClassifierSlot::new(|| Ok(Arc::new(Lexicon::builtin()) as Arc<dyn Classifier>));
        start_scan(numbered(3), &slot, ScanConfig::default()).unwrap();
        start_scan(numbered(3), &slot, ScanConfig::default()).unwrap();
        assert_eq!(slot.init_count(), 1);
    }

    #[test]
    fn failed_load_surfaces_before_scanning() {
        let slot = ClassifierSlot::new(|| Err(ClassifyError::Config("missing".into())));
        assert!(matches!(
            start_scan(numbered(3), &slot, ScanConfig::default()),
            Err(ScanError::Classify(_))
        ));
    }

    #[test]
    fn duplicate_locators_rejected() {
        let u = vec![TextUnit::new("a", "x y z"), TextUnit::new("a", "w v u")];
        assert!(matches!(
            ScanSession::new(u, ScanConfig::default()),
            Err(ScanError::DuplicateLocator(_))
        ));
    }

    #[test]
    fn abort_semantics() {
        let mut s = start_scan(numbered(100), &lexicon_slot(), ScanConfig::default()).unwrap();
        s.abort();
        assert_eq!(
            s.progress(),
            Progress {
                processed: 0,
                total: 100,
                state: ScanState::Aborted
            }
        );
        s.abort();
        assert_eq!(s.state(), ScanState::Aborted);
        assert!(s.next_batch().is_err());

        let mut s = start_scan(numbered(100), &lexicon_slot(), ScanConfig::default()).unwrap();
        s.next_batch().unwrap();
        s.next_batch().unwrap();
        let frozen = s.findings().to_vec();
        s.abort_handle().abort();
        assert!(matches!(
            s.next_batch(),
            Err(ScanError::State {
                state: ScanState::Aborted,
                ..
            })
        ));
        assert_eq!(s.findings(), &frozen[..]);
        assert_eq!(s.invocations(), 2);
        assert_eq!(s.cursor(), 32);
    }

    #[test]
    fn pause_abort_resume_rejected() {
        let mut s = start_scan(numbered(10), &lexicon_slot(), ScanConfig::default()).unwrap();
        s.pause().unwrap();
        s.abort();
        assert!(s.resume().is_err());
        let mut done = start_scan(numbered(1), &lexicon_slot(), ScanConfig::default()).unwrap();
        done.run_to_end().unwrap();
        assert!(done.resume().is_err());
        done.abort();
        assert_eq!(done.state(), ScanState::Done);
    }

    #[test]
    fn wire_formats() {
        let span = SpoilerSpan {
            locator: "p[3]".into(),
            text: "noob".into(),
            toxic_score: 0.5,
        };
        let mut buf = Vec::new();
        write_findings(&mut buf, &[span.clone(), span]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"locator":"p[3]","text":"noob","score":0.5}"#
        );

        let mut s = start_scan(numbered(20), &lexicon_slot(), ScanConfig::default()).unwrap();
        s.next_batch().unwrap();
        let snap = serde_json::to_string(&s.snapshot()).unwrap();
        assert_eq!(
            snap,
            r#"{"processed":16,"total":20,"state":"scanning","findings_count":4}"#
        );

        let cmd: ScanCommand = serde_json::from_str(r#"{"cmd":"stop"}"#).unwrap();
        assert_eq!(cmd, ScanCommand::Stop);
    }

    proptest! {
        #[test]
        fn pausing_never_changes_findings(
            texts in prop::collection::vec(prop::sample::select(vec!["gg", "you noob", "nice one", "kys", "trash team", "ok"]), 0..60),
            batch in 1usize..10,
            pauses in prop::collection::vec(any::<bool>(), 0..60),
        ) {
            let u = units(&texts);
            let cfg = ScanConfig { batch_size: batch, ..Default::default() };
            let mut plain = start_scan(u.clone(), &lexicon_slot(), cfg).unwrap();
            plain.run_to_end().unwrap();

            let mut paused = start_scan(u, &lexicon_slot(), cfg).unwrap();
            let mut i = 0;
            while paused.state() == ScanState::Scanning {
                if pauses.get(i).copied().unwrap_or(false) {
                    let before = (paused.cursor(), paused.findings().to_vec());
                    paused.pause().unwrap();
                    paused.resume().unwrap();
                    prop_assert_eq!(before, (paused.cursor(), paused.findings().to_vec()));
                }
                paused.next_batch().unwrap();
                i += 1;
            }
            prop_assert_eq!(plain.findings(), paused.findings());
            let locs: HashSet<_> = paused.findings().iter().map(|s| s.locator.clone()).collect();
            prop_assert_eq!(locs.len(), paused.findings().len());
        }
    }
}
