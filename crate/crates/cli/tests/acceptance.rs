//! Acceptance checks for the session pipeline. Runs without the test harness
//! so every criterion prints its own PASS/FAIL line; exits non-zero if any
//! fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use vpatient_cli::script::{SimScript, SAMPLE_INTERVIEW};
use vpatient_cli::simulate::simulate;
use vpatient_core::clock::{Clock, ManualClock, SystemClock};
use vpatient_core::dialogue::{
    encode_text_chunk, is_legal_transition, ChunkVerdict, DialogueManager, GateCloseOutcome, GateOpenOutcome,
    InputChunk, RejectReason, TextChunkTranscriber, TranscribeError, Transcriber, TurnPhase,
};
use vpatient_core::responder::{mentions_term, Reply, Responder, ResponderError, ResponseRequest, ScriptedResponder};
use vpatient_core::scenario::{jane_ryan, AnimationClipMeta, Role, ScenarioPack, Side};
use vpatient_core::session::{
    collect_metrics, parse_record, read_record, reproduce, Session, SessionConfig, SessionEvent,
};
use vpatient_core::timeline::{full_clip_plan, measure_desync, plan_playback, trim_lead_in, DESYNC_TOLERANCE_MS};
use vpatient_core::trigger::{detect_input_triggers, detect_output_negation, select_animation, SelectionSource};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn pack() -> Arc<ScenarioPack> {
    Arc::new(jane_ryan())
}

const QUESTIONS: &[&str] = &[
    "Hello, I'm part of the team looking after you today.",
    "What brings you in?",
    "Have you had any fever or chills?",
    "Any other symptoms, like discharge?",
    "Does it burn when you urinate?",
    "Do you have any allergies?",
    "How are things at work?",
    "When was your last period?",
    "Do you smoke or drink?",
    "Were you sexually active recently?",
];

// ---------------------------------------------------------------- helpers

/// Responder wrapper that counts calls made outside an allowed window.
struct Spy {
    inner: ScriptedResponder,
    allowed: Arc<AtomicBool>,
    calls: Arc<AtomicUsize>,
    stray: Arc<AtomicUsize>,
}

impl Responder for Spy {
    fn respond(&mut self, req: &ResponseRequest<'_>) -> Result<Reply, ResponderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.allowed.load(Ordering::SeqCst) {
            self.stray.fetch_add(1, Ordering::SeqCst);
        }
        if req.utterance.contains("__fail__") {
            return Err(ResponderError::Timeout(15_000));
        }
        self.inner.respond(req)
    }

    fn kind(&self) -> &'static str {
        "spy"
    }
}

#[derive(Clone, Default)]
struct SpyHandles {
    allowed: Arc<AtomicBool>,
    calls: Arc<AtomicUsize>,
    stray: Arc<AtomicUsize>,
}

impl SpyHandles {
    fn responder(&self, pack: &Arc<ScenarioPack>) -> Box<dyn Responder> {
        Box::new(Spy {
            inner: ScriptedResponder::new(Arc::clone(pack)),
            allowed: Arc::clone(&self.allowed),
            calls: Arc::clone(&self.calls),
            stray: Arc::clone(&self.stray),
        })
    }

    /// Runs `f` with responder calls permitted.
    fn permit<T>(&self, f: impl FnOnce() -> T) -> T {
        self.allowed.store(true, Ordering::SeqCst);
        let out = f();
        self.allowed.store(false, Ordering::SeqCst);
        out
    }
}

struct CountingTranscriber {
    chunks: Arc<AtomicUsize>,
}

impl Transcriber for CountingTranscriber {
    fn transcribe(&mut self, chunks: &[String]) -> Result<String, TranscribeError> {
        self.chunks.fetch_add(chunks.len(), Ordering::SeqCst);
        TextChunkTranscriber.transcribe(chunks)
    }
}

fn session_with(
    pack: &Arc<ScenarioPack>,
    scene: &str,
    role: Role,
    seed: u64,
    responder: Box<dyn Responder>,
    clock: Arc<dyn Clock>,
) -> Session {
    let cfg = SessionConfig { seed, ..SessionConfig::default() };
    Session::new("acceptance", Arc::clone(pack), scene, role, cfg, responder, clock).expect("scene exists")
}

fn scripted(pack: &Arc<ScenarioPack>) -> Box<dyn Responder> {
    Box::new(ScriptedResponder::new(Arc::clone(pack)))
}

fn reply_text(events: &[SessionEvent]) -> Option<&str> {
    events.iter().find_map(|e| match e {
        SessionEvent::PatientResponse(r) => Some(r.text.as_str()),
        _ => None,
    })
}

fn discards(events: &[SessionEvent]) -> usize {
    events.iter().filter(|e| matches!(e, SessionEvent::InputDiscarded { .. })).count()
}

/// Lets the current reply finish on a manual clock.
fn settle(s: &mut Session, clock: &ManualClock) {
    if let Some(until) = s.speaking_until() {
        clock.set(until);
        s.tick();
    }
}

// ---------------------------------------------------------------- triggers

fn trigger_fidelity() -> Outcome {
    let started = Instant::now();
    let pack = jane_ryan();
    let mut checked = 0;
    let mut rules = HashMap::new();
    let neutral_reply = "Okay, let me think about that.";

    for scene in &pack.scenes {
        for rule in &scene.trigger_rules {
            *rules.entry(scene.id.as_str()).or_insert(0) += 1;
            for phrase in &rule.phrases {
                let (utterance, reply) = match rule.side {
                    Side::Input => (format!("Okay so tell me, {phrase} I was wondering"), neutral_reply.to_string()),
                    Side::Output => ("Anything else I should know about?".to_string(), format!("{phrase}, nothing like that.")),
                };
                let matches = detect_input_triggers(&utterance, scene);
                let negated = detect_output_negation(&reply, &pack.negation_tokens);
                let sel = select_animation(&pack, scene, &matches, negated);
                ensure!(
                    sel.clip_id == rule.clip_id && sel.rule_id.as_deref() == Some(rule.id.as_str()),
                    "{}: phrase {phrase:?} selected {} instead of {}",
                    scene.id,
                    sel.clip_id,
                    rule.clip_id
                );
                checked += 1;
            }
        }
        // no phrase and no rejection: the scene's general conversation clip
        let sel = select_animation(&pack, scene, &detect_input_triggers("Tell me about your weekend", scene), false);
        ensure!(
            sel.clip_id == scene.fallback_clip_id && sel.source == SelectionSource::Fallback,
            "{}: unmatched utterance picked {}",
            scene.id,
            sel.clip_id
        );
    }
    ensure!(rules.get("ed") == Some(&5), "ed has {:?} rules", rules.get("ed"));
    ensure!(rules.get("primary_care") == Some(&2), "primary_care has {:?} rules", rules.get("primary_care"));
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{checked} phrases across 7 rules map to their clips in {} ms", elapsed.as_millis()))
}

// ---------------------------------------------------------------- gate

fn gate_safety() -> Outcome {
    let pack = pack();
    let clock = ManualClock::new(1_000_000);
    let transcribed = Arc::new(AtomicUsize::new(0));
    let mut s = session_with(&pack, "ed", Role::Physician, 1, scripted(&pack), Arc::new(clock.clone()))
        .with_transcriber(Box::new(CountingTranscriber { chunks: Arc::clone(&transcribed) }));
    let mut rng = StdRng::seed_from_u64(0x6a7e);
    let mut discarded = 0;
    let mut in_gate = 0;

    for i in 0..100 {
        let noise = encode_text_chunk(&format!("facilitator says next steps {i}"));
        // where the stray chunk lands: before the button, or during the reply
        let before = rng.random_bool(0.5);
        settle(&mut s, &clock);
        clock.advance(rng.random_range(0..2_000));
        if before {
            discarded += discards(&s.input_chunk(None, noise.clone()));
        }
        s.gate_open();
        let turn = s.current_turn_id();
        clock.advance(rng.random_range(1..400));
        let ev = s.input_chunk(Some(turn), encode_text_chunk(QUESTIONS[i % QUESTIONS.len()]));
        ensure!(discards(&ev) == 0, "in-gate chunk {i} was discarded");
        in_gate += 1;
        clock.advance(rng.random_range(1..400));
        let ev = s.gate_close();
        ensure!(reply_text(&ev).is_some(), "turn {i} got no reply");
        if !before {
            clock.advance(rng.random_range(0..300));
            discarded += discards(&s.input_chunk(None, noise));
        }
    }
    s.finish();
    let reached = transcribed.load(Ordering::SeqCst);
    let recorded: u64 = s.metrics(&[]).discarded_inputs.values().sum();
    ensure!(in_gate == 100 && reached == 100, "{reached} chunks reached transcription");
    ensure!(discarded == 100 && recorded == 100, "{discarded} discard events, {recorded} recorded");
    Ok(format!("{reached} of 100 in-gate chunks transcribed, {discarded} of 100 strays discarded with a reason"))
}

// ---------------------------------------------------------------- sync

fn random_clip(rng: &mut StdRng, i: usize) -> AnimationClipMeta {
    let total = rng.random_range(1..3_000);
    let fps = [12.0, 24.0, 25.0, 29.97, 30.0, 60.0][rng.random_range(0..6)];
    AnimationClipMeta {
        id: format!("c{i}"),
        display_label: String::new(),
        total_frames: total,
        fps,
        lead_in_frames: rng.random_range(0..=total),
        loopable: rng.random_bool(0.5),
        expression_tag: "neutral".into(),
    }
}

fn sync_contract() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5e1c);
    let shipped = jane_ryan().clips;
    let pairs = 5_000;
    let mut worst = 0;
    for i in 0..pairs {
        let clip = if i % 5 == 0 { shipped[i % shipped.len()].clone() } else { random_clip(&mut rng, i) };
        let audio = if i % 7 == 0 { rng.random_range(0..50) } else { rng.random_range(0..180_000) };
        let plan = plan_playback(&trim_lead_in(&clip), audio).map_err(|e| e.to_string())?;
        let d = measure_desync(&plan, audio);
        ensure!(d <= DESYNC_TOLERANCE_MS, "{clip:?} with {audio} ms audio: desync {d} ms");
        worst = worst.max(d);
    }

    let legacy = AnimationClipMeta {
        id: "legacy".into(),
        display_label: String::new(),
        total_frames: 420,
        fps: 30.0,
        lead_in_frames: 100,
        loopable: false,
        expression_tag: "neutral".into(),
    };
    let before = measure_desync(&full_clip_plan(&legacy, 4_000), 4_000);
    ensure!(before == 10_000, "untrimmed fixture desync {before} ms");
    ensure!(plan_playback(&legacy, 4_000).is_err(), "untrimmed clip was planned");
    let after = measure_desync(&plan_playback(&trim_lead_in(&legacy), 4_000).unwrap(), 4_000);
    ensure!(after <= DESYNC_TOLERANCE_MS, "trimmed fixture desync {after} ms");
    Ok(format!("{pairs} pairs, worst desync {worst} ms; 14 s clip on 4 s audio: {before} ms untrimmed, {after} ms trimmed"))
}

// ---------------------------------------------------------------- barge-in

fn barge_in() -> Outcome {
    let pack = pack();
    let clock = ManualClock::new(5_000_000);
    let spy = SpyHandles::default();
    let mut s = session_with(&pack, "ed", Role::NursePractitioner, 3, spy.responder(&pack), Arc::new(clock.clone()));
    let mut rng = StdRng::seed_from_u64(0xba46);

    let mut observed = TurnPhase::Idle;
    let mut reply_ends_at = 0u64;
    let mut responses = 0;
    let mut bad_responses = 0;
    let mut overlaps = 0;
    let mut speaking_rejections = 0;
    let mut wrong_rejections = 0;

    let mut watch = |events: Vec<SessionEvent>, now: u64, observed: &mut TurnPhase| {
        for e in events {
            match e {
                SessionEvent::State { phase, .. } => {
                    if phase == TurnPhase::Listening && now < reply_ends_at {
                        overlaps += 1;
                    }
                    *observed = phase;
                }
                SessionEvent::PatientResponse(r) => {
                    responses += 1;
                    if *observed == TurnPhase::Listening {
                        bad_responses += 1;
                    }
                    reply_ends_at = r.emitted_at_ms + r.plan.play_duration_ms;
                }
                SessionEvent::Rejected { reason, .. } => {
                    if reason == RejectReason::PatientSpeaking {
                        speaking_rejections += 1;
                    }
                    if now >= reply_ends_at {
                        wrong_rejections += 1;
                    }
                }
                _ => {}
            }
        }
    };

    while s.record().patient_turns() < 1_000 {
        // the student may press while the patient is still talking
        clock.advance(rng.random_range(0..3_000));
        if rng.random_bool(0.15) {
            let text = QUESTIONS[rng.random_range(0..QUESTIONS.len())];
            let ev = spy.permit(|| s.text_input(text));
            watch(ev, clock.now_ms(), &mut observed);
            continue;
        }
        let ev = s.gate_open();
        watch(ev, clock.now_ms(), &mut observed);
        if s.phase() != TurnPhase::Listening {
            // rejected; stray speech and releases go nowhere
            if rng.random_bool(0.5) {
                s.input_chunk(None, encode_text_chunk("hang on"));
            }
            if rng.random_bool(0.3) {
                let ev = s.gate_close();
                watch(ev, clock.now_ms(), &mut observed);
            }
            continue;
        }
        for _ in 0..rng.random_range(0..4) {
            clock.advance(rng.random_range(0..700));
            let q = QUESTIONS[rng.random_range(0..QUESTIONS.len())];
            let ev = s.input_chunk(None, encode_text_chunk(q));
            watch(ev, clock.now_ms(), &mut observed);
            if rng.random_bool(0.1) {
                let ev = s.gate_open();
                watch(ev, clock.now_ms(), &mut observed);
            }
        }
        clock.advance(rng.random_range(0..700));
        let ev = spy.permit(|| s.gate_close());
        watch(ev, clock.now_ms(), &mut observed);
    }

    let stray = spy.stray.load(Ordering::SeqCst);
    let calls = spy.calls.load(Ordering::SeqCst);
    ensure!(stray == 0, "{stray} responder calls outside gate close");
    ensure!(bad_responses == 0, "{bad_responses} replies while listening");
    ensure!(overlaps == 0, "{overlaps} listening windows opened during a reply");
    ensure!(wrong_rejections == 0, "{wrong_rejections} presses rejected after the reply ended");
    ensure!(speaking_rejections > 0, "no press ever landed during a reply; timing is not random enough");
    ensure!(responses == 1_000, "{responses} replies for 1000 turns");
    Ok(format!(
        "1000 turns, {calls} responder calls all after close, {speaking_rejections} presses during replies rejected, 0 overlaps"
    ))
}

// ---------------------------------------------------------------- disclosure

fn disclosure() -> Outcome {
    let pack = pack();
    let rule = pack.disclosure_rule("med_history").ok_or("no med_history rule")?.clone();
    ensure!(rule.reveal_after_asks == 1, "reveal_after_asks is {}", rule.reveal_after_asks);
    let term = &rule.withheld_terms[0];
    let fillers = ["Any fever?", "What brought you in?", "Any allergies?", "How is work going?", "Why were you in the ER"];
    let mut sessions = 0;
    let mut replies_checked = 0;
    let mut disclosed_on_second = 0;

    for scene in &pack.scenes {
        for role in Role::ALL {
            // three variants, so seeds 0..3 cover every rotation
            for seed in 0..3 {
                for rotation in 0..fillers.len() {
                    for pattern in &rule.topic_patterns {
                        let clock = ManualClock::new(0);
                        let mut s = session_with(&pack, &scene.id, role, seed, scripted(&pack), Arc::new(clock.clone()));
                        sessions += 1;
                        for f in &fillers[..rotation] {
                            let ev = s.text_input(f);
                            ensure!(!reply_text(&ev).is_some_and(|t| mentions_term(t, term)), "filler {f:?} leaked");
                            replies_checked += 1;
                            settle(&mut s, &clock);
                        }
                        let ask = format!("Can you tell me about {pattern}?");
                        let first = s.text_input(&ask);
                        let first = reply_text(&first).ok_or("no reply to the first ask")?.to_string();
                        ensure!(
                            !mentions_term(&first, term),
                            "{}/{role}/seed {seed}: first ask {ask:?} revealed: {first}",
                            scene.id
                        );
                        replies_checked += 1;
                        settle(&mut s, &clock);
                        let second = s.text_input(&ask);
                        if reply_text(&second).is_some_and(|t| mentions_term(t, term)) {
                            disclosed_on_second += 1;
                        }
                    }
                }
            }
        }
    }
    ensure!(disclosed_on_second > 0, "the second ask never disclosed");
    Ok(format!(
        "{sessions} sessions, {replies_checked} gated replies free of {term:?}; {disclosed_on_second} second asks disclosed"
    ))
}

// ---------------------------------------------------------------- repetition

/// Brute-force 4-gram Jaccard written independently of the library.
fn oracle_similarity(a: &str, b: &str) -> f64 {
    fn words(s: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for c in s.to_lowercase().chars().chain(std::iter::once(' ')) {
            if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
                cur.push(if c == '\u{2019}' { '\'' } else { c });
            } else {
                let w = cur.trim_matches('\'').to_string();
                if !w.is_empty() {
                    out.push(w);
                }
                cur.clear();
            }
        }
        out
    }
    fn grams(w: &[String]) -> Vec<String> {
        let mut g = Vec::new();
        let mut i = 0;
        while i + 4 <= w.len() {
            let joined = format!("{} {} {} {}", w[i], w[i + 1], w[i + 2], w[i + 3]);
            if !g.contains(&joined) {
                g.push(joined);
            }
            i += 1;
        }
        g
    }
    let (wa, wb) = (words(a), words(b));
    if wa.len() < 4 || wb.len() < 4 {
        return if wa == wb { 1.0 } else { 0.0 };
    }
    let (ga, gb) = (grams(&wa), grams(&wb));
    let shared = ga.iter().filter(|g| gb.contains(g)).count();
    let union = ga.len() + gb.iter().filter(|g| !ga.contains(g)).count();
    shared as f64 / union as f64
}

fn repetition() -> Outcome {
    let mut adversarial = jane_ryan();
    let only = "It has been burning every time I go to the bathroom and I feel tired and sore all over my back.";
    for scene in &mut adversarial.scenes {
        for intent in &mut scene.scripted_intents {
            intent.response_variants = vec![only.to_string()];
            intent.disclosure_rule_id = None;
        }
    }
    let pack = Arc::new(adversarial);
    let clock = ManualClock::new(0);
    let mut s = session_with(&pack, "ed", Role::Physician, 0, scripted(&pack), Arc::new(clock.clone()));
    for i in 0..60 {
        s.text_input(QUESTIONS[i % QUESTIONS.len()]);
        settle(&mut s, &clock);
    }
    let replies: Vec<String> = s.record().patient_entries().map(|e| e.text.clone()).collect();
    ensure!(replies.len() == 60, "{} replies", replies.len());
    let mut worst = 0.0f64;
    for (i, reply) in replies.iter().enumerate() {
        for prior in &replies[i.saturating_sub(10)..i] {
            let score = oracle_similarity(reply, prior);
            ensure!(score <= 0.6, "reply {i} {reply:?} scores {score:.3} against {prior:?}");
            worst = worst.max(score);
        }
    }
    let m = s.metrics(&[]);
    ensure!(m.repetition_incidents > 0 && m.fallback_uses > 0, "the fixture never forced suppression");
    Ok(format!(
        "60 replies from one variant, worst windowed 4-gram Jaccard {worst:.3}; {} regenerations, {} fallbacks",
        m.repetition_incidents, m.fallback_uses
    ))
}

// ---------------------------------------------------------------- model check

#[derive(Debug, Clone, Copy)]
enum Ev {
    Open,
    Chunk,
    StaleChunk,
    Close,
    CloseFailing,
    CloseSilent,
    Text,
    TextBlank,
    Speak,
    StopSpeaking,
    ResponderFails,
    Wait,
}

const EVENTS: [Ev; 12] = [
    Ev::Open,
    Ev::Chunk,
    Ev::StaleChunk,
    Ev::Close,
    Ev::CloseFailing,
    Ev::CloseSilent,
    Ev::Text,
    Ev::TextBlank,
    Ev::Speak,
    Ev::StopSpeaking,
    Ev::ResponderFails,
    Ev::Wait,
];

struct Fixed(Result<String, TranscribeError>);

impl Transcriber for Fixed {
    fn transcribe(&mut self, _: &[String]) -> Result<String, TranscribeError> {
        self.0.clone()
    }
}

#[derive(Clone)]
struct Machine {
    dm: DialogueManager,
    now: u64,
}

/// Applies one event and checks the step. Returns an error describing any
/// violation.
fn step(m: &mut Machine, ev: Ev) -> Result<(), String> {
    let before = m.dm.phase();
    let turn = m.dm.state().current_turn_id();
    let close = |m: &mut Machine, t: Result<String, TranscribeError>| m.dm.on_gate_close(m.now, &mut Fixed(t));
    let must_idle = match ev {
        Ev::Open => {
            let out = m.dm.on_gate_open();
            let ok = match before {
                TurnPhase::Idle => matches!(out, GateOpenOutcome::Opened { .. }),
                TurnPhase::Listening => out == GateOpenOutcome::AlreadyOpen,
                _ => matches!(out, GateOpenOutcome::Rejected(_)),
            };
            ensure!(ok, "gate open from {before} gave {out:?}");
            false
        }
        Ev::Chunk | Ev::StaleChunk => {
            let turn_id = matches!(ev, Ev::StaleChunk).then(|| turn.wrapping_sub(1));
            let verdict = m.dm.on_input_chunk(InputChunk { turn_id, at_ms: m.now, payload: encode_text_chunk("x") });
            ensure!(
                verdict != ChunkVerdict::Accepted || (before == TurnPhase::Listening && turn_id.is_none()),
                "chunk {ev:?} accepted in {before}"
            );
            false
        }
        Ev::Close | Ev::CloseFailing | Ev::CloseSilent => {
            let t = match ev {
                Ev::Close => Ok("any fever".to_string()),
                Ev::CloseSilent => Ok("   ".to_string()),
                _ => Err(TranscribeError("boom".into())),
            };
            let buffered = !m.dm.buffer().chunks.is_empty();
            let out = close(m, t);
            match out {
                GateCloseOutcome::Finalized { .. } => {
                    // the only place a responder may be called from
                    ensure!(!m.dm.state().gate_open(), "finalized with the gate open");
                    ensure!(m.dm.phase() == TurnPhase::Generating, "finalized into {}", m.dm.phase());
                    false
                }
                GateCloseOutcome::NotListening => {
                    ensure!(before != TurnPhase::Listening, "close refused while listening");
                    ensure!(m.dm.phase() == before, "refused close moved {before} to {}", m.dm.phase());
                    false
                }
                _ => {
                    ensure!(before == TurnPhase::Listening, "{out:?} from {before}");
                    ensure!(buffered || matches!(out, GateCloseOutcome::Empty { .. }), "empty buffer gave {out:?}");
                    true
                }
            }
        }
        Ev::Text | Ev::TextBlank => {
            let text = if matches!(ev, Ev::Text) { "any fever" } else { " " };
            match m.dm.on_text_input(text) {
                Ok(GateCloseOutcome::Finalized { .. }) => {
                    ensure!(m.dm.phase() == TurnPhase::Generating, "text finalized into {}", m.dm.phase());
                    false
                }
                Ok(GateCloseOutcome::Empty { .. }) => true,
                Ok(other) => return Err(format!("text gave {other:?}")),
                Err(_) => {
                    ensure!(before != TurnPhase::Idle, "text refused while idle");
                    false
                }
            }
        }
        Ev::Speak => {
            let ok = m.dm.begin_speaking();
            ensure!(ok == (before == TurnPhase::Generating), "begin speaking from {before} returned {ok}");
            false
        }
        Ev::StopSpeaking => {
            let ok = m.dm.finish_speaking();
            ensure!(ok == (before == TurnPhase::Speaking), "finish speaking from {before} returned {ok}");
            ok
        }
        Ev::ResponderFails => {
            let failed = m.dm.responder_failed();
            ensure!(failed == (before == TurnPhase::Generating), "responder failure from {before} returned {failed}");
            failed
        }
        Ev::Wait => {
            m.now += 300;
            false
        }
    };
    if must_idle {
        ensure!(m.dm.phase() == TurnPhase::Idle, "{ev:?} from {before} ended in {}", m.dm.phase());
    }
    let mut at = before;
    for t in m.dm.take_transitions() {
        ensure!(t.from == at && is_legal_transition(t.from, t.to), "illegal move {} -> {}", t.from, t.to);
        at = t.to;
    }
    ensure!(at == m.dm.phase(), "transitions end in {at}, machine in {}", m.dm.phase());
    ensure!(m.dm.phase() != TurnPhase::Finalizing, "left resting in finalizing");
    Ok(())
}

/// Drives a machine back to Idle the way the session would.
fn drains_to_idle(m: &Machine) -> bool {
    let mut m = m.clone();
    for _ in 0..4 {
        match m.dm.phase() {
            TurnPhase::Idle => return true,
            TurnPhase::Listening => {
                m.dm.on_gate_close(m.now, &mut Fixed(Ok("x".into())));
            }
            TurnPhase::Generating => {
                m.dm.begin_speaking();
            }
            TurnPhase::Speaking => {
                m.dm.finish_speaking();
            }
            TurnPhase::Finalizing => return false,
        }
    }
    m.dm.phase() == TurnPhase::Idle
}

fn explore(m: &Machine, depth: usize, seen: &mut HashSet<(String, u64, usize)>, stats: &mut (u64, u64)) -> Result<(), String> {
    stats.0 += 1;
    ensure!(drains_to_idle(m), "wedged in {:?}", m.dm);
    if depth == 0 {
        return Ok(());
    }
    // identical state and budget means identical futures
    if !seen.insert((format!("{:?}", m.dm), m.now, depth)) {
        return Ok(());
    }
    stats.1 += 1;
    for ev in EVENTS {
        let mut next = m.clone();
        step(&mut next, ev).map_err(|e| format!("{e} (after {ev:?})"))?;
        explore(&next, depth - 1, seen, stats)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum SessEv {
    Open,
    Chunk,
    BadChunk,
    StaleChunk,
    Close,
    Text,
    FailingText,
    Wait,
}

const SESSION_EVENTS: [SessEv; 8] = [
    SessEv::Open,
    SessEv::Chunk,
    SessEv::BadChunk,
    SessEv::StaleChunk,
    SessEv::Close,
    SessEv::Text,
    SessEv::FailingText,
    SessEv::Wait,
];

fn run_session_sequence(pack: &Arc<ScenarioPack>, seq: &[SessEv]) -> Result<(), String> {
    let clock = ManualClock::new(0);
    let spy = SpyHandles::default();
    let mut s = session_with(pack, "ed", Role::Physician, 0, spy.responder(pack), Arc::new(clock.clone()));
    for &ev in seq {
        let before = s.phase();
        let prior_until = s.speaking_until();
        let ev_out = match ev {
            SessEv::Open => s.gate_open(),
            SessEv::Chunk | SessEv::BadChunk | SessEv::StaleChunk => {
                let (turn, payload) = match ev {
                    SessEv::StaleChunk => (Some(s.current_turn_id().wrapping_sub(1)), encode_text_chunk("fever")),
                    SessEv::BadChunk => (None, "!!not base64!!".to_string()),
                    _ => (None, encode_text_chunk("any fever")),
                };
                let out = s.input_chunk(turn, payload);
                ensure!(discards(&out) == 1 || before == TurnPhase::Listening, "chunk accepted in {before}");
                out
            }
            SessEv::Close => spy.permit(|| s.gate_close()),
            SessEv::Text => spy.permit(|| s.text_input("Do you have a fever?")),
            SessEv::FailingText => spy.permit(|| s.text_input("__fail__")),
            SessEv::Wait => {
                clock.advance(2_500);
                s.tick()
            }
        };
        ensure!(spy.stray.load(Ordering::SeqCst) == 0, "responder called during {ev:?}");
        for e in &ev_out {
            match e {
                SessionEvent::PatientResponse(r) => {
                    ensure!(prior_until.is_none_or(|u| u <= r.emitted_at_ms), "overlapping replies");
                }
                SessionEvent::Error { .. } => {
                    ensure!(s.phase() == TurnPhase::Idle || before == s.phase(), "error left {}", s.phase());
                }
                _ => {}
            }
        }
        ensure!(s.phase() != TurnPhase::Finalizing && s.phase() != TurnPhase::Generating, "resting in {}", s.phase());
    }
    // every state can still reach Idle and take a new turn
    if let Some(until) = s.speaking_until() {
        clock.set(until);
    }
    s.tick();
    if s.phase() == TurnPhase::Listening {
        spy.permit(|| s.gate_close());
        if let Some(until) = s.speaking_until() {
            clock.set(until);
        }
        s.tick();
    }
    ensure!(s.phase() == TurnPhase::Idle, "wedged in {} after {seq:?}", s.phase());
    let ev = spy.permit(|| s.text_input("Any allergies?"));
    ensure!(reply_text(&ev).is_some(), "no turn possible after {seq:?}");
    Ok(())
}

fn session_sequences(pack: &Arc<ScenarioPack>, prefix: &mut Vec<SessEv>, depth: usize, count: &mut u64) -> Result<(), String> {
    run_session_sequence(pack, prefix)?;
    *count += 1;
    if depth == 0 {
        return Ok(());
    }
    for ev in SESSION_EVENTS {
        prefix.push(ev);
        session_sequences(pack, prefix, depth - 1, count)?;
        prefix.pop();
    }
    Ok(())
}

fn model_check() -> Outcome {
    let root = Machine { dm: DialogueManager::default(), now: 0 };
    let mut seen = HashSet::new();
    let mut stats = (0, 0);
    explore(&root, 8, &mut seen, &mut stats)?;

    let pack = pack();
    let mut sequences = 0;
    session_sequences(&pack, &mut Vec::new(), 5, &mut sequences)?;
    Ok(format!(
        "turn machine: all {}-event sequences to depth 8 ({} distinct states); sessions: {sequences} sequences to depth 5",
        EVENTS.len(),
        stats.1
    ))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let pack = pack();
    let script = SimScript::parse(SAMPLE_INTERVIEW).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let sa = simulate(Arc::clone(&pack), &script, Some(11), Some(&a)).map_err(|e| e.to_string())?;
    let sb = simulate(Arc::clone(&pack), &script, Some(11), Some(&b)).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&a).map_err(|e| e.to_string())?;
    ensure!(sa.transcript() == sb.transcript(), "transcripts differ");
    ensure!(sa.sent == sb.sent, "client frames differ");
    ensure!(bytes == std::fs::read(&b).map_err(|e| e.to_string())?, "records differ");

    let loaded = read_record(&a).map_err(|e| e.to_string())?;
    let recomputed = collect_metrics(&loaded.record, &[]);
    ensure!(recomputed.same_measurements(&sa.metrics), "replayed metrics differ from stored");
    let mismatches = reproduce(&loaded.record, Arc::clone(&pack)).map_err(|e| e.to_string())?;
    ensure!(mismatches.is_empty(), "re-run differs: {mismatches:?}");

    // crash at every byte after the header
    let text = String::from_utf8(bytes.clone()).map_err(|e| e.to_string())?;
    let header_end = text.find('\n').ok_or("no header line")? + 1;
    let mut patient_line_ends = Vec::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        pos += line.len();
        if line.contains(r#""kind":"entry""#) && !line.contains(r#""speaker":"Healthcare Provider""#) {
            patient_line_ends.push(pos - 1);
        }
    }
    let full = &loaded.record.entries;
    let mut cuts = 0;
    for cut in header_end..=bytes.len() {
        let partial = String::from_utf8_lossy(&bytes[..cut]);
        let got = parse_record(&partial).map_err(|e| format!("cut at byte {cut}: {e}"))?;
        let complete = patient_line_ends.iter().filter(|&&end| end <= cut).count();
        let recovered = got.record.patient_turns();
        ensure!(
            got.record.entries.len() == recovered * 2 && full[..got.record.entries.len()] == got.record.entries[..],
            "cut at byte {cut}: entries are not a prefix of the original"
        );
        ensure!(recovered == complete, "cut at byte {cut}: {recovered} turns recovered, {complete} written");
        cuts += 1;
    }
    Ok(format!(
        "seed 11 twice: identical transcript and {} byte record; metrics and re-run match; {cuts} crash points lose at most the in-flight turn",
        bytes.len()
    ))
}

// ---------------------------------------------------------------- latency

/// Wall clock that can be pushed forward to skip past playback.
struct SkippingClock {
    skipped: AtomicU64,
}

impl Clock for SkippingClock {
    fn now_ms(&self) -> u64 {
        SystemClock.now_ms() + self.skipped.load(Ordering::SeqCst)
    }
}

fn latency() -> Outcome {
    let pack = pack();
    let clock = Arc::new(SkippingClock { skipped: AtomicU64::new(0) });
    let mut s = session_with(&pack, "ed", Role::Pharmacist, 5, scripted(&pack), clock.clone());
    let mut wall = Vec::with_capacity(500);
    for i in 0..500 {
        s.gate_open();
        s.input_chunk(None, encode_text_chunk(QUESTIONS[i % QUESTIONS.len()]));
        let started = Instant::now();
        let ev = s.gate_close();
        wall.push(started.elapsed().as_micros() as u64);
        ensure!(reply_text(&ev).is_some(), "turn {i} got no reply");
        if let Some(until) = s.speaking_until() {
            let ahead = until.saturating_sub(clock.now_ms());
            clock.skipped.fetch_add(ahead + 1, Ordering::SeqCst);
        }
        s.tick();
    }
    wall.sort_unstable();
    let p95_us = wall[(wall.len() * 95).div_ceil(100) - 1];
    let m = s.metrics(&[]);
    ensure!(m.patient_turns == 500, "{} turns", m.patient_turns);
    ensure!(m.p95_latency_ms < 100 && p95_us < 100_000, "p95 {} ms recorded, {p95_us} us measured", m.p95_latency_ms);
    Ok(format!("500 turns, p95 {:.2} ms measured, {} ms recorded", p95_us as f64 / 1000.0, m.p95_latency_ms))
}

// ---------------------------------------------------------------- runner

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("trigger table fidelity", trigger_fidelity),
        ("gate safety", gate_safety),
        ("animation sync", sync_contract),
        ("barge-in ordering", barge_in),
        ("disclosure gating", disclosure),
        ("repetition suppression", repetition),
        ("turn machine model check", model_check),
        ("determinism and persistence", determinism),
        ("scripted pipeline latency", latency),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
