//! V2X channel model between the roadside unit and the vehicle.
//!
//! A synthetic link draws each message's fate independently: a uniform base
//! latency, an occasional spike on top of it, Bernoulli loss, and scheduled
//! episodes (outages or extra delay) that override the draw. A recorded
//! [`LatencyTrace`] can be replayed in place of the synthetic draw.

use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{secs_to_micros, Timestamp};
use crate::rng::{derive_rng, Purpose};

/// Delivered messages never take less than this.
pub const MIN_LATENCY_US: u64 = 1;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid link model: {0}")]
    InvalidModel(String),
    #[error("message for tick {tick} sent at {send} before previous send at {previous}")]
    NonMonotonicSend { tick: u64, send: Timestamp, previous: Timestamp },
    #[error("trace has no entry for tick {tick}")]
    TraceExhausted { tick: u64 },
    #[error("trace line {line}: {message}")]
    TraceFormat { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Outage,
    ExtraDelay { ms: f64 },
}

/// A scheduled period of degraded connectivity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub start: Timestamp,
    pub duration_s: f64,
    pub kind: EpisodeKind,
}

impl Episode {
    pub fn end(&self) -> Timestamp {
        self.start.plus(secs_to_micros(self.duration_s))
    }

    /// Half-open: `[start, end)`.
    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end()
    }
}

/// Stochastic description of the channel. Latencies are in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    pub base_low: f64,
    pub base_high: f64,
    pub spike_prob: f64,
    pub spike_low: f64,
    pub spike_high: f64,
    pub loss_prob: f64,
    pub episodes: Vec<Episode>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::field()
    }
}

impl LinkModel {
    /// Field-calibrated channel: 15-35 ms base band, a quarter of messages
    /// spiking by 20-80 ms, 5% loss.
    pub fn field() -> Self {
        LinkModel {
            base_low: 15.0,
            base_high: 35.0,
            spike_prob: 0.25,
            spike_low: 20.0,
            spike_high: 80.0,
            loss_prob: 0.05,
            episodes: Vec::new(),
        }
    }

    /// Base band only: no spikes, no loss.
    pub fn jitter_only() -> Self {
        LinkModel { spike_prob: 0.0, loss_prob: 0.0, ..LinkModel::field() }
    }

    /// Instant, lossless delivery (latency floored at [`MIN_LATENCY_US`]).
    pub fn perfect() -> Self {
        LinkModel {
            base_low: 0.0,
            base_high: 0.0,
            spike_prob: 0.0,
            spike_low: 0.0,
            spike_high: 0.0,
            loss_prob: 0.0,
            episodes: Vec::new(),
        }
    }

    pub fn with_episodes(mut self, episodes: impl IntoIterator<Item = Episode>) -> Self {
        self.episodes.extend(episodes);
        self.episodes.sort_by_key(|e| e.start);
        self
    }

    pub fn without_episodes(&self) -> Self {
        LinkModel { episodes: Vec::new(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::InvalidModel(m));
        let finite = [self.base_low, self.base_high, self.spike_low, self.spike_high, self.spike_prob, self.loss_prob];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.base_low < 0.0 || self.base_low > self.base_high {
            return bad(format!(
                "base band must satisfy 0 <= base_low <= base_high, got [{}, {}]",
                self.base_low, self.base_high
            ));
        }
        if self.spike_low < 0.0 || self.spike_low > self.spike_high {
            return bad(format!(
                "spike band must satisfy 0 <= spike_low <= spike_high, got [{}, {}]",
                self.spike_low, self.spike_high
            ));
        }
        for (name, p) in [("spike_prob", self.spike_prob), ("loss_prob", self.loss_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        let mut sorted = self.episodes.clone();
        sorted.sort_by_key(|e| e.start);
        for e in &sorted {
            if !e.duration_s.is_finite() || e.duration_s <= 0.0 {
                return bad(format!("episode at {} has non-positive duration", e.start));
            }
            if let EpisodeKind::ExtraDelay { ms } = e.kind {
                if !ms.is_finite() || ms < 0.0 {
                    return bad(format!("episode at {} has negative extra delay", e.start));
                }
            }
        }
        for pair in sorted.windows(2) {
            if pair[1].start < pair[0].end() {
                return bad(format!("episodes at {} and {} overlap", pair[0].start, pair[1].start));
            }
        }
        Ok(())
    }

    pub fn episode_at(&self, t: Timestamp) -> Option<&Episode> {
        self.episodes.iter().find(|e| e.contains(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered { latency_us: u64 },
    Lost,
}

impl DeliveryOutcome {
    pub fn latency_us(self) -> Option<u64> {
        match self {
            DeliveryOutcome::Delivered { latency_us } => Some(latency_us),
            DeliveryOutcome::Lost => None,
        }
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

fn uniform_us<R: Rng + ?Sized>(rng: &mut R, low_ms: f64, high_ms: f64) -> u64 {
    let (lo, hi) = (ms_to_us(low_ms), ms_to_us(high_ms));
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws the fate of one message sent at `send_time`.
pub fn sample_outcome<R: Rng + ?Sized>(model: &LinkModel, send_time: Timestamp, rng: &mut R) -> DeliveryOutcome {
    let episode = model.episode_at(send_time);
    if matches!(episode, Some(Episode { kind: EpisodeKind::Outage, .. })) {
        return DeliveryOutcome::Lost;
    }
    let lost = rng.random_bool(model.loss_prob);
    let base = uniform_us(rng, model.base_low, model.base_high);
    let spiked = rng.random_bool(model.spike_prob);
    let spike = uniform_us(rng, model.spike_low, model.spike_high);
    if lost {
        return DeliveryOutcome::Lost;
    }
    let mut latency = base;
    if spiked {
        latency += spike;
    }
    if let Some(Episode { kind: EpisodeKind::ExtraDelay { ms }, .. }) = episode {
        latency += ms_to_us(*ms);
    }
    DeliveryOutcome::Delivered { latency_us: latency.max(MIN_LATENCY_US) }
}

/// Monte-Carlo estimate of a miss probability with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissEstimate {
    pub ratio: f64,
    pub std_error: f64,
    pub samples: u64,
}

/// Probability that a message outside any episode is lost or arrives later
/// than `wait_window_us` after it was sent.
pub fn analytic_miss_ratio(model: &LinkModel, wait_window_us: u64, n_samples: u64, seed: u64) -> MissEstimate {
    let n = n_samples.max(1);
    let quiet = model.without_episodes();
    let mut rng = derive_rng(seed, Purpose::MonteCarlo, 0);
    let misses = (0..n)
        .filter(|_| match sample_outcome(&quiet, Timestamp::ZERO, &mut rng) {
            DeliveryOutcome::Lost => true,
            DeliveryOutcome::Delivered { latency_us } => latency_us > wait_window_us,
        })
        .count() as u64;
    let p = misses as f64 / n as f64;
    MissEstimate { ratio: p, std_error: (p * (1.0 - p) / n as f64).sqrt(), samples: n }
}

/// The two SoR-to-SoV message streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    PostPerception,
    HeavyPrediction,
}

impl Stream {
    fn purpose(self) -> Purpose {
        match self {
            Stream::PostPerception => Purpose::LinkPerception,
            Stream::HeavyPrediction => Purpose::LinkHeavy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick: u64,
    pub outcome: DeliveryOutcome,
}

/// Per-tick delivery outcomes of one stream.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyTrace {
    pub entries: Vec<TraceEntry>,
}

const TRACE_HEADER: [&str; 3] = ["tick", "outcome", "latency_us"];

impl LatencyTrace {
    pub fn push(&mut self, tick: u64, outcome: DeliveryOutcome) {
        self.entries.push(TraceEntry { tick, outcome });
    }

    pub fn get(&self, tick: u64) -> Option<DeliveryOutcome> {
        self.entries.binary_search_by_key(&tick, |e| e.tick).ok().map(|i| self.entries[i].outcome)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("tick,outcome,latency_us\n");
        for e in &self.entries {
            match e.outcome {
                DeliveryOutcome::Delivered { latency_us } => out.push_str(&format!("{},D,{}\n", e.tick, latency_us)),
                DeliveryOutcome::Lost => out.push_str(&format!("{},L,\n", e.tick)),
            }
        }
        out
    }

    /// Parses the `tick,outcome,latency_us` CSV format. Any malformed input
    /// yields an error, never a panic.
    pub fn from_csv_str(text: &str) -> Result<Self, LinkError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(text.as_bytes());
        let fmt_err = |line: u64, message: String| LinkError::TraceFormat { line, message };
        let header = reader.headers().map_err(|e| fmt_err(1, e.to_string()))?;
        if header.iter().ne(TRACE_HEADER) {
            return Err(fmt_err(1, format!("expected header {:?}", TRACE_HEADER.join(","))));
        }
        let mut trace = LatencyTrace::default();
        for (i, record) in reader.records().enumerate() {
            let line = i as u64 + 2;
            let record = record.map_err(|e| fmt_err(line, e.to_string()))?;
            let tick: u64 = record[0].parse().map_err(|_| fmt_err(line, format!("bad tick {:?}", &record[0])))?;
            let outcome = match (&record[1], &record[2]) {
                ("D", lat) => {
                    let latency_us: u64 = lat.parse().map_err(|_| fmt_err(line, format!("bad latency {lat:?}")))?;
                    if latency_us == 0 {
                        return Err(fmt_err(line, "delivered latency must be positive".into()));
                    }
                    DeliveryOutcome::Delivered { latency_us }
                }
                ("L", "") => DeliveryOutcome::Lost,
                ("L", _) => return Err(fmt_err(line, "lost entry must have empty latency".into())),
                (other, _) => return Err(fmt_err(line, format!("bad outcome {other:?}"))),
            };
            if let Some(prev) = trace.entries.last() {
                if tick <= prev.tick {
                    return Err(fmt_err(line, format!("tick {tick} not after {}", prev.tick)));
                }
            }
            trace.push(tick, outcome);
        }
        Ok(trace)
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self, LinkError> {
        LatencyTrace::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Where delivery outcomes come from.
#[derive(Clone, Debug)]
pub enum LinkSource {
    Synthetic { model: LinkModel, seed: u64 },
    Replay { post_perception: LatencyTrace, heavy: LatencyTrace },
}

impl LinkSource {
    /// Replays one trace on both streams.
    pub fn replay_single(trace: LatencyTrace) -> Self {
        LinkSource::Replay { post_perception: trace.clone(), heavy: trace }
    }

    pub fn outcome(&self, stream: Stream, tick: u64, send_time: Timestamp) -> Result<DeliveryOutcome, LinkError> {
        match self {
            LinkSource::Synthetic { model, seed } => {
                let mut rng = derive_rng(*seed, stream.purpose(), tick);
                Ok(sample_outcome(model, send_time, &mut rng))
            }
            LinkSource::Replay { post_perception, heavy } => {
                let trace = match stream {
                    Stream::PostPerception => post_perception,
                    Stream::HeavyPrediction => heavy,
                };
                trace.get(tick).ok_or(LinkError::TraceExhausted { tick })
            }
        }
    }

    /// Checks that a replayed trace covers ticks `0..ticks`.
    pub fn check_covers(&self, ticks: u64) -> Result<(), LinkError> {
        if let LinkSource::Replay { post_perception, heavy } = self {
            for trace in [post_perception, heavy] {
                if let Some(tick) = (0..ticks).find(|t| trace.get(*t).is_none()) {
                    return Err(LinkError::TraceExhausted { tick });
                }
            }
        }
        Ok(())
    }
}

/// One stream's sending side: enforces monotone send times and records every
/// outcome.
#[derive(Clone, Debug)]
pub struct Channel {
    stream: Stream,
    last_send: Option<Timestamp>,
    trace: LatencyTrace,
}

impl Channel {
    pub fn new(stream: Stream) -> Self {
        Self { stream, last_send: None, trace: LatencyTrace::default() }
    }

    /// Sends the message produced at `tick`. Returns its arrival time, or
    /// `None` when it is lost.
    pub fn transmit(
        &mut self,
        link: &LinkSource,
        tick: u64,
        send_time: Timestamp,
    ) -> Result<Option<Timestamp>, LinkError> {
        if let Some(previous) = self.last_send {
            if send_time < previous {
                return Err(LinkError::NonMonotonicSend { tick, send: send_time, previous });
            }
        }
        let outcome = link.outcome(self.stream, tick, send_time)?;
        self.last_send = Some(send_time);
        self.trace.push(tick, outcome);
        Ok(outcome.latency_us().map(|l| send_time.plus(l)))
    }

    pub fn trace(&self) -> &LatencyTrace {
        &self.trace
    }

    pub fn into_trace(self) -> LatencyTrace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn jitter_only_stays_in_base_band() {
        let model = LinkModel::jitter_only();
        let mut r = rng();
        for i in 0..5_000 {
            match sample_outcome(&model, Timestamp(i), &mut r) {
                DeliveryOutcome::Delivered { latency_us } => {
                    assert!((15_000..=35_000).contains(&latency_us), "{latency_us}")
                }
                DeliveryOutcome::Lost => panic!("lossless model lost a message"),
            }
        }
    }

    #[test]
    fn point_distribution_is_exact() {
        let model = LinkModel { base_low: 20.0, base_high: 20.0, ..LinkModel::jitter_only() };
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(sample_outcome(&model, Timestamp(0), &mut r), DeliveryOutcome::Delivered { latency_us: 20_000 });
        }
    }

    #[test]
    fn outage_episode_loses_everything() {
        let tunnel = Episode { start: Timestamp(1_000_000), duration_s: 2.0, kind: EpisodeKind::Outage };
        let model = LinkModel::perfect().with_episodes([tunnel]);
        let mut r = rng();
        assert_eq!(sample_outcome(&model, Timestamp(1_000_000), &mut r), DeliveryOutcome::Lost);
        assert_eq!(sample_outcome(&model, Timestamp(2_999_999), &mut r), DeliveryOutcome::Lost);
        assert!(matches!(sample_outcome(&model, Timestamp(3_000_000), &mut r), DeliveryOutcome::Delivered { .. }));
        assert!(matches!(sample_outcome(&model, Timestamp(999_999), &mut r), DeliveryOutcome::Delivered { .. }));
    }

    #[test]
    fn extra_delay_episode_adds_latency() {
        let ep = Episode { start: Timestamp(0), duration_s: 1.0, kind: EpisodeKind::ExtraDelay { ms: 50.0 } };
        let model = LinkModel { base_low: 20.0, base_high: 20.0, ..LinkModel::jitter_only() }.with_episodes([ep]);
        assert_eq!(
            sample_outcome(&model, Timestamp(10), &mut rng()),
            DeliveryOutcome::Delivered { latency_us: 70_000 }
        );
    }

    #[test]
    fn perfect_link_floors_latency() {
        assert_eq!(
            sample_outcome(&LinkModel::perfect(), Timestamp(0), &mut rng()),
            DeliveryOutcome::Delivered { latency_us: MIN_LATENCY_US }
        );
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(LinkModel::field().validate().is_ok());
        let inverted = LinkModel { base_low: 40.0, ..LinkModel::field() };
        assert!(inverted.validate().is_err());
        let prob = LinkModel { loss_prob: 1.5, ..LinkModel::field() };
        assert!(prob.validate().is_err());
        let ep = |s: u64| Episode { start: Timestamp(s), duration_s: 1.0, kind: EpisodeKind::Outage };
        let overlapping = LinkModel::field().with_episodes([ep(0), ep(500_000)]);
        assert!(overlapping.validate().is_err());
        let adjacent = LinkModel::field().with_episodes([ep(0), ep(1_000_000)]);
        assert!(adjacent.validate().is_ok());
    }

    #[test]
    fn transmit_adds_latency_and_preserves_reordering() {
        let trace = LatencyTrace {
            entries: vec![
                TraceEntry { tick: 0, outcome: DeliveryOutcome::Delivered { latency_us: 90_000 } },
                TraceEntry { tick: 1, outcome: DeliveryOutcome::Delivered { latency_us: 20_000 } },
                TraceEntry { tick: 2, outcome: DeliveryOutcome::Lost },
            ],
        };
        let link = LinkSource::replay_single(trace);
        let mut ch = Channel::new(Stream::PostPerception);
        let a0 = ch.transmit(&link, 0, Timestamp(0)).unwrap().unwrap();
        let a1 = ch.transmit(&link, 1, Timestamp(100_000)).unwrap().unwrap();
        assert_eq!(a0, Timestamp(90_000));
        assert_eq!(a1, Timestamp(120_000));
        // oracle: sorting (send + latency) pairs orders tick 0 before tick 1
        let mut arrivals = [(a1, 1), (a0, 0)];
        arrivals.sort();
        assert_eq!(arrivals.map(|a| a.1), [0, 1]);
        assert_eq!(ch.transmit(&link, 2, Timestamp(200_000)).unwrap(), None);
        assert_eq!(ch.trace().entries.len(), 3);
    }

    #[test]
    fn transmit_rejects_non_monotonic_sends() {
        let link = LinkSource::Synthetic { model: LinkModel::field(), seed: 1 };
        let mut ch = Channel::new(Stream::PostPerception);
        ch.transmit(&link, 1, Timestamp(100)).unwrap();
        assert!(matches!(ch.transmit(&link, 2, Timestamp(50)), Err(LinkError::NonMonotonicSend { .. })));
    }

    #[test]
    fn replay_returns_trace_entries_and_exhausts() {
        let trace = LatencyTrace::from_csv_str("tick,outcome,latency_us\n0,D,18000\n1,L,\n").unwrap();
        let link = LinkSource::replay_single(trace);
        assert_eq!(
            link.outcome(Stream::PostPerception, 0, Timestamp(0)).unwrap(),
            DeliveryOutcome::Delivered { latency_us: 18_000 }
        );
        assert_eq!(link.outcome(Stream::PostPerception, 1, Timestamp(0)).unwrap(), DeliveryOutcome::Lost);
        assert!(matches!(
            link.outcome(Stream::PostPerception, 2, Timestamp(0)),
            Err(LinkError::TraceExhausted { tick: 2 })
        ));
        let empty = LinkSource::replay_single(LatencyTrace::default());
        assert!(matches!(empty.check_covers(1), Err(LinkError::TraceExhausted { tick: 0 })));
    }

    #[test]
    fn trace_csv_rejects_malformed_rows() {
        for bad in [
            "",
            "tick,outcome\n",
            "tick,outcome,latency_us\n0,D,\n",
            "tick,outcome,latency_us\n0,L,5\n",
            "tick,outcome,latency_us\n0,X,5\n",
            "tick,outcome,latency_us\n1,D,5\n1,D,5\n",
            "tick,outcome,latency_us\n0,D,0\n",
            "tick,outcome,latency_us\n-1,D,5\n",
        ] {
            assert!(LatencyTrace::from_csv_str(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn miss_ratio_edge_cases() {
        let jitter = LinkModel::jitter_only();
        assert_eq!(analytic_miss_ratio(&jitter, 35_000, 20_000, 1).ratio, 0.0);
        assert_eq!(analytic_miss_ratio(&jitter, 0, 1_000, 1).ratio, 1.0);
    }

    fn arb_model() -> impl proptest::strategy::Strategy<Value = LinkModel> {
        use proptest::prelude::*;
        (
            0.0f64..50.0,
            0.0f64..50.0,
            0.0f64..=1.0,
            0.0f64..100.0,
            0.0f64..100.0,
            0.0f64..=1.0,
            0u64..3_000_000,
            0.05f64..2.0,
            prop::option::of(0.0f64..200.0),
        )
            .prop_map(|(b0, bw, sp, s0, sw, loss, start, dur, extra)| LinkModel {
                base_low: b0,
                base_high: b0 + bw,
                spike_prob: sp,
                spike_low: s0,
                spike_high: s0 + sw,
                loss_prob: loss,
                episodes: vec![Episode {
                    start: Timestamp(start),
                    duration_s: dur,
                    kind: extra.map_or(EpisodeKind::Outage, |ms| EpisodeKind::ExtraDelay { ms }),
                }],
            })
    }

    fn channel_run(model: &LinkModel, seed: u64, ticks: u64) -> (Vec<(Timestamp, Option<Timestamp>)>, LatencyTrace) {
        let link = LinkSource::Synthetic { model: model.clone(), seed };
        let mut ch = Channel::new(Stream::PostPerception);
        let sends: Vec<_> = (0..ticks)
            .map(|tick| {
                let send = Timestamp(tick * 100_000 + 30_000);
                (send, ch.transmit(&link, tick, send).unwrap())
            })
            .collect();
        (sends, ch.into_trace())
    }

    proptest::proptest! {
        #[test]
        fn link_invariants(model in arb_model(), seed in proptest::prelude::any::<u64>()) {
            proptest::prop_assert!(model.validate().is_ok());
            let (a, trace) = channel_run(&model, seed, 50);
            let (b, again) = channel_run(&model, seed, 50);
            proptest::prop_assert_eq!(&a, &b);
            proptest::prop_assert_eq!(&trace, &again);
            let outage = model.episodes.iter().find(|e| e.kind == EpisodeKind::Outage);
            for (send, arrival) in a {
                if let Some(arrival) = arrival {
                    proptest::prop_assert!(arrival > send);
                }
                if outage.is_some_and(|e| e.contains(send)) {
                    proptest::prop_assert_eq!(arrival, None);
                }
            }
            proptest::prop_assert_eq!(LatencyTrace::from_csv_str(&trace.to_csv_string()).unwrap(), trace);
        }

        #[test]
        fn trace_parser_never_panics(text in "\\PC{0,300}") {
            let _ = LatencyTrace::from_csv_str(&text);
        }

        #[test]
        fn trace_parser_handles_near_valid_rows(
            rows in proptest::collection::vec((0u64..20, prop_oneof_outcome(), "[0-9a-z-]{0,8}"), 0..20),
        ) {
            let mut text = String::from("tick,outcome,latency_us\n");
            for (tick, outcome, latency) in rows {
                text.push_str(&format!("{tick},{outcome},{latency}\n"));
            }
            let _ = LatencyTrace::from_csv_str(&text);
        }
    }

    fn prop_oneof_outcome() -> impl proptest::strategy::Strategy<Value = &'static str> {
        proptest::sample::select(vec!["delivered", "lost", "", "Delivered", "x"])
    }
}
