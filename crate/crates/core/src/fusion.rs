//! The three ways roadside data can enter the vehicle pipeline and the
//! selector that picks one per tick.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Detection, FusionMode, PerceptionFrame, PredictedTrajectory, Source, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("SoV tick {sov} does not match SoR tick {sor}")]
    TickMismatch { sov: u64, sor: u64 },
    #[error("no buffered SoR frame")]
    BufferEmpty,
    #[error("buffered SoR frame is {staleness_us} µs old, tolerance is {tolerance_us} µs")]
    StalenessExceeded { staleness_us: u64, tolerance_us: u64 },
    #[error("no heavy prediction within its validity")]
    NoValidHeavyPrediction,
    #[error("invalid policy config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyMode {
    /// Wait for the matching frame, otherwise drive on local data.
    #[serde(rename = "intra")]
    IntraOnly,
    /// Wait, then fall back to the buffered frame.
    #[serde(rename = "inter")]
    InterEnabled,
    /// Full ladder: intra, inter, planning, none.
    #[serde(rename = "adaptive")]
    Adaptive,
    /// Never wait; consume roadside predictions at the planning stage only.
    #[serde(rename = "planning")]
    PlanningOnly,
}

impl PolicyMode {
    pub const ALL: [PolicyMode; 4] =
        [PolicyMode::IntraOnly, PolicyMode::InterEnabled, PolicyMode::Adaptive, PolicyMode::PlanningOnly];

    pub fn label(self) -> &'static str {
        match self {
            PolicyMode::IntraOnly => "intra",
            PolicyMode::InterEnabled => "inter",
            PolicyMode::Adaptive => "adaptive",
            PolicyMode::PlanningOnly => "planning",
        }
    }

    pub fn from_label(s: &str) -> Option<PolicyMode> {
        PolicyMode::ALL.into_iter().find(|m| m.label() == s)
    }

    /// Whether the tracking stage waits for the matching SoR frame.
    pub fn waits(self) -> bool {
        self != PolicyMode::PlanningOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    pub inter_tolerance_us: u64,
    pub heavy_validity_us: u64,
    pub dedup_gate_m: f64,
    pub extrapolate_stale: bool,
    /// Consecutive fresh frames needed before returning to intra fusion after
    /// a degraded tick.
    pub switch_back_frames: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            mode: PolicyMode::Adaptive,
            inter_tolerance_us: 600_000,
            heavy_validity_us: 5_000_000,
            dedup_gate_m: 1.0,
            extrapolate_stale: true,
            switch_back_frames: 0,
        }
    }
}

impl PolicyConfig {
    pub fn with_mode(mode: PolicyMode) -> Self {
        PolicyConfig { mode, ..PolicyConfig::default() }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad =
            |path: &str, message: &str| Err(FusionError::InvalidConfig { path: path.into(), message: message.into() });
        if self.inter_tolerance_us >= self.heavy_validity_us {
            return bad("inter_tolerance_us", "must be below heavy_validity_us");
        }
        if !(self.dedup_gate_m.is_finite() && self.dedup_gate_m > 0.0) {
            return bad("dedup_gate_m", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferedFrame {
    pub frame: PerceptionFrame,
    pub arrival: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferedHeavy {
    pub tick: u64,
    pub trajectories: Vec<PredictedTrajectory>,
    pub arrival: Timestamp,
}

impl BufferedHeavy {
    pub fn issued_at(&self) -> Option<Timestamp> {
        self.trajectories.iter().map(|t| t.issued_at).max()
    }
}

/// Newest roadside data received so far, by source tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SorBuffer {
    pub latest_post_perception: Option<BufferedFrame>,
    pub latest_heavy: Option<BufferedHeavy>,
}

impl SorBuffer {
    /// Stores `frame` unless a newer tick is already held.
    pub fn offer_frame(&mut self, frame: PerceptionFrame, arrival: Timestamp) -> bool {
        if self.latest_post_perception.as_ref().is_some_and(|b| b.frame.tick >= frame.tick) {
            return false;
        }
        self.latest_post_perception = Some(BufferedFrame { frame, arrival });
        true
    }

    /// Stores a heavy batch unless it is empty or older than the one held.
    pub fn offer_heavy(&mut self, tick: u64, trajectories: Vec<PredictedTrajectory>, arrival: Timestamp) -> bool {
        if trajectories.is_empty() || self.latest_heavy.as_ref().is_some_and(|b| b.tick >= tick) {
            return false;
        }
        self.latest_heavy = Some(BufferedHeavy { tick, trajectories, arrival });
        true
    }

    pub fn frame_for_tick(&self, tick: u64) -> Option<&PerceptionFrame> {
        self.latest_post_perception.as_ref().map(|b| &b.frame).filter(|f| f.tick == tick)
    }

    pub fn staleness(&self, now: Timestamp) -> Option<u64> {
        self.latest_post_perception.as_ref().map(|b| now.0.saturating_sub(b.frame.timestamp.0))
    }

    /// Age of the newest heavy batch, if it is still valid at `now`.
    pub fn valid_heavy_age(&self, now: Timestamp, validity_us: u64) -> Option<u64> {
        let issued = self.latest_heavy.as_ref()?.issued_at()?;
        let age = now.0.saturating_sub(issued.0);
        (age <= validity_us).then_some(age)
    }
}

/// Merges detections of the same object, keeping the vehicle's measurement
/// when both sides saw it. Detections of different objects are never merged,
/// however close. Output is ordered by object id.
pub fn dedup_detections(detections: Vec<Detection>, gate_m: f64) -> Vec<Detection> {
    debug_assert!(gate_m > 0.0);
    let mut by_id: BTreeMap<_, Detection> = BTreeMap::new();
    for d in detections {
        match by_id.get(&d.object_id) {
            Some(kept) if kept.source == Source::SoV || d.source != Source::SoV => {}
            _ => {
                by_id.insert(d.object_id, d);
            }
        }
    }
    by_id.into_values().collect()
}

fn union(sov: &PerceptionFrame, extra: impl IntoIterator<Item = Detection>, gate_m: f64) -> PerceptionFrame {
    let all = sov.detections.iter().cloned().chain(extra).collect();
    PerceptionFrame {
        tick: sov.tick,
        timestamp: sov.timestamp,
        source: Source::SoV,
        detections: dedup_detections(all, gate_m),
    }
}

/// Tracking-stage fusion of two frames sharing a timestamp.
pub fn intra_frame_fuse(
    sov: &PerceptionFrame,
    sor: &PerceptionFrame,
    gate_m: f64,
) -> Result<PerceptionFrame, FusionError> {
    if sov.tick != sor.tick {
        return Err(FusionError::TickMismatch { sov: sov.tick, sor: sor.tick });
    }
    Ok(union(sov, sor.detections.iter().cloned(), gate_m))
}

/// Tracking-stage fusion with the buffered, older SoR frame. Returns the
/// fused frame and the staleness of the SoR data used.
pub fn inter_frame_fuse(
    sov: &PerceptionFrame,
    buffer: &SorBuffer,
    now: Timestamp,
    cfg: &PolicyConfig,
) -> Result<(PerceptionFrame, u64), FusionError> {
    let stored = &buffer.latest_post_perception.as_ref().ok_or(FusionError::BufferEmpty)?.frame;
    let staleness = now.0.saturating_sub(stored.timestamp.0);
    if staleness > cfg.inter_tolerance_us {
        return Err(FusionError::StalenessExceeded { staleness_us: staleness, tolerance_us: cfg.inter_tolerance_us });
    }
    let dt = staleness as f64 / 1e6;
    let compensated = stored.detections.iter().map(|d| {
        let mut d = d.clone();
        if cfg.extrapolate_stale {
            d.position = d.position.advanced(d.velocity, dt);
        }
        d
    });
    Ok((union(sov, compensated, cfg.dedup_gate_m), staleness))
}

/// Planning-stage fusion: local predictions plus the buffered roadside ones,
/// the roadside trajectory winning for objects both sides predicted.
pub fn planning_fuse(
    local: &[PredictedTrajectory],
    buffer: &SorBuffer,
    now: Timestamp,
    cfg: &PolicyConfig,
) -> Result<Vec<PredictedTrajectory>, FusionError> {
    buffer.valid_heavy_age(now, cfg.heavy_validity_us).ok_or(FusionError::NoValidHeavyPrediction)?;
    let heavy = &buffer.latest_heavy.as_ref().ok_or(FusionError::NoValidHeavyPrediction)?.trajectories;
    let mut merged: BTreeMap<_, PredictedTrajectory> = local.iter().map(|t| (t.object_id, t.clone())).collect();
    for t in heavy {
        merged.insert(t.object_id, t.clone());
    }
    Ok(merged.into_values().collect())
}

/// Outcome of the tracking-stage wait.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArrivalStatus {
    pub sor_configured: bool,
    /// The frame with the current tick arrived before the wait expired.
    pub matching_arrived: bool,
}

/// Picks the fusion mode for one tick.
pub fn select_mode(arrival: ArrivalStatus, buffer: &SorBuffer, now: Timestamp, cfg: &PolicyConfig) -> FusionMode {
    if !arrival.sor_configured {
        return FusionMode::NoFusion;
    }
    let mode = cfg.mode;
    let intra = mode != PolicyMode::PlanningOnly && arrival.matching_arrived;
    let inter = matches!(mode, PolicyMode::InterEnabled | PolicyMode::Adaptive)
        && buffer.staleness(now).is_some_and(|s| s <= cfg.inter_tolerance_us);
    let planning = matches!(mode, PolicyMode::Adaptive | PolicyMode::PlanningOnly)
        && buffer.valid_heavy_age(now, cfg.heavy_validity_us).is_some();
    if intra {
        FusionMode::Intra
    } else if inter {
        FusionMode::Inter
    } else if planning {
        FusionMode::Planning
    } else {
        FusionMode::NoFusion
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ObjectId, Position2D, TrajectoryPoint, Velocity2D};
    use proptest::prelude::*;

    fn det(id: u32, x: f64, source: Source) -> Detection {
        Detection {
            object_id: ObjectId(id),
            position: Position2D::new(x, 0.0),
            velocity: Velocity2D::new(14.0, 0.0),
            source,
        }
    }

    fn frame(tick: u64, source: Source, dets: Vec<Detection>) -> PerceptionFrame {
        PerceptionFrame { tick, timestamp: Timestamp(tick * 100_000), source, detections: dets }
    }

    fn heavy(issued: u64) -> PredictedTrajectory {
        PredictedTrajectory {
            object_id: ObjectId(9),
            issued_at: Timestamp(issued),
            horizon_us: 5_000_000,
            source: Source::SoR,
            points: vec![TrajectoryPoint { timestamp: Timestamp(issued + 100_000), position: Position2D::default() }],
        }
    }

    #[test]
    fn intra_examples() {
        let sov = frame(3, Source::SoV, vec![det(1, 0.0, Source::SoV)]);
        let sor = frame(3, Source::SoR, vec![det(2, 50.0, Source::SoR)]);
        let fused = intra_frame_fuse(&sov, &sor, 1.0).unwrap();
        assert_eq!(fused.detections.iter().map(|d| d.object_id.0).collect::<Vec<_>>(), vec![1, 2]);

        let sor_same = frame(3, Source::SoR, vec![det(1, 0.4, Source::SoR)]);
        let fused = intra_frame_fuse(&sov, &sor_same, 1.0).unwrap();
        assert_eq!(fused.detections, sov.detections);

        let empty = frame(3, Source::SoR, vec![]);
        assert_eq!(intra_frame_fuse(&sov, &empty, 1.0).unwrap(), sov);

        let other = frame(4, Source::SoR, vec![]);
        assert_eq!(intra_frame_fuse(&sov, &other, 1.0), Err(FusionError::TickMismatch { sov: 3, sor: 4 }));
    }

    #[test]
    fn inter_compensates_motion() {
        let cfg = PolicyConfig::default();
        let mut buffer = SorBuffer::default();
        buffer.offer_frame(frame(2, Source::SoR, vec![det(5, 10.0, Source::SoR)]), Timestamp(230_000));
        let sov = frame(3, Source::SoV, vec![]);
        let (fused, staleness) = inter_frame_fuse(&sov, &buffer, sov.timestamp, &cfg).unwrap();
        assert_eq!(staleness, 100_000);
        assert!((fused.detections[0].position.x - 11.4).abs() < 1e-12);
    }

    #[test]
    fn inter_tolerance_boundary() {
        let cfg = PolicyConfig::default();
        let mut buffer = SorBuffer::default();
        assert_eq!(
            inter_frame_fuse(&frame(0, Source::SoV, vec![]), &buffer, Timestamp(0), &cfg),
            Err(FusionError::BufferEmpty)
        );
        buffer.offer_frame(frame(0, Source::SoR, vec![]), Timestamp(30_000));
        let sov = frame(6, Source::SoV, vec![]);
        assert!(inter_frame_fuse(&sov, &buffer, Timestamp(590_000), &cfg).is_ok());
        assert!(inter_frame_fuse(&sov, &buffer, Timestamp(600_000), &cfg).is_ok());
        assert_eq!(
            inter_frame_fuse(&sov, &buffer, Timestamp(610_000), &cfg),
            Err(FusionError::StalenessExceeded { staleness_us: 610_000, tolerance_us: 600_000 })
        );
    }

    #[test]
    fn buffer_keeps_newest_tick_under_reordering() {
        let mut buffer = SorBuffer::default();
        assert!(buffer.offer_frame(frame(5, Source::SoR, vec![]), Timestamp(600_000)));
        assert!(!buffer.offer_frame(frame(4, Source::SoR, vec![]), Timestamp(610_000)));
        assert_eq!(buffer.latest_post_perception.as_ref().unwrap().frame.tick, 5);
        assert!(!buffer.offer_heavy(1, vec![], Timestamp(0)));
        assert!(buffer.offer_heavy(2, vec![heavy(240_000)], Timestamp(300_000)));
        assert!(!buffer.offer_heavy(1, vec![heavy(140_000)], Timestamp(310_000)));
    }

    #[test]
    fn planning_examples() {
        let cfg = PolicyConfig::default();
        let mut local = heavy(0);
        local.object_id = ObjectId(1);
        local.source = Source::SoV;
        let empty = SorBuffer::default();
        assert_eq!(
            planning_fuse(std::slice::from_ref(&local), &empty, Timestamp(0), &cfg),
            Err(FusionError::NoValidHeavyPrediction)
        );

        let mut buffer = SorBuffer::default();
        buffer.offer_heavy(1, vec![heavy(1_000_000)], Timestamp(1_020_000));
        let out = planning_fuse(std::slice::from_ref(&local), &buffer, Timestamp(5_900_000), &cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1], heavy(1_000_000));
        assert!(planning_fuse(&[], &buffer, Timestamp(6_100_000), &cfg).is_err());

        let mut shadow = heavy(1_000_000);
        shadow.object_id = ObjectId(1);
        buffer.offer_heavy(2, vec![shadow.clone()], Timestamp(1_200_000));
        let out = planning_fuse(&[local], &buffer, Timestamp(1_300_000), &cfg).unwrap();
        assert_eq!(out, vec![shadow]);
    }

    #[test]
    fn selector_ladder() {
        let cfg = PolicyConfig::default();
        let fresh = ArrivalStatus { sor_configured: true, matching_arrived: true };
        let missed = ArrivalStatus { sor_configured: true, matching_arrived: false };
        let mut buffer = SorBuffer::default();
        assert_eq!(select_mode(fresh, &buffer, Timestamp(0), &cfg), FusionMode::Intra);
        assert_eq!(select_mode(missed, &buffer, Timestamp(0), &cfg), FusionMode::NoFusion);
        buffer.offer_frame(frame(10, Source::SoR, vec![]), Timestamp(1_030_000));
        buffer.offer_heavy(10, vec![heavy(1_040_000)], Timestamp(1_070_000));
        assert_eq!(select_mode(missed, &buffer, Timestamp(1_300_000), &cfg), FusionMode::Inter);
        assert_eq!(select_mode(missed, &buffer, Timestamp(3_000_000), &cfg), FusionMode::Planning);
        assert_eq!(select_mode(missed, &buffer, Timestamp(6_100_000), &cfg), FusionMode::NoFusion);
        assert_eq!(select_mode(fresh, &buffer, Timestamp(6_100_000), &cfg), FusionMode::Intra);

        let intra_only = PolicyConfig::with_mode(PolicyMode::IntraOnly);
        assert_eq!(select_mode(missed, &buffer, Timestamp(1_300_000), &intra_only), FusionMode::NoFusion);
        let inter = PolicyConfig::with_mode(PolicyMode::InterEnabled);
        assert_eq!(select_mode(missed, &buffer, Timestamp(3_000_000), &inter), FusionMode::NoFusion);
        let planning = PolicyConfig::with_mode(PolicyMode::PlanningOnly);
        assert_eq!(select_mode(fresh, &buffer, Timestamp(1_300_000), &planning), FusionMode::Planning);
        let none = ArrivalStatus { sor_configured: false, matching_arrived: false };
        assert_eq!(select_mode(none, &buffer, Timestamp(1_300_000), &cfg), FusionMode::NoFusion);
    }

    #[test]
    fn dedup_examples() {
        let out = dedup_detections(vec![det(4, 0.0, Source::SoR), det(4, 0.3, Source::SoV)], 1.0);
        assert_eq!(out, vec![det(4, 0.3, Source::SoV)]);
        let out = dedup_detections(vec![det(2, 0.0, Source::SoV), det(1, 0.5, Source::SoR)], 1.0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].object_id, ObjectId(1));
        assert!(dedup_detections(vec![], 1.0).is_empty());
    }

    #[test]
    fn policy_validation() {
        let cfg = PolicyConfig { inter_tolerance_us: 6_000_000, ..PolicyConfig::default() };
        assert!(matches!(cfg.validate(), Err(FusionError::InvalidConfig { path, .. }) if path == "inter_tolerance_us"));
        PolicyConfig::default().validate().unwrap();
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        (0u32..6, -5.0f64..5.0, any::<bool>())
            .prop_map(|(id, x, sov)| det(id, x, if sov { Source::SoV } else { Source::SoR }))
    }

    proptest! {
        #[test]
        fn dedup_matches_exhaustive_oracle(dets in prop::collection::vec(arb_detection(), 0..12)) {
            let out = dedup_detections(dets.clone(), 1.0);
            let mut ids: Vec<_> = dets.iter().map(|d| d.object_id).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(out.iter().map(|d| d.object_id).collect::<Vec<_>>(), ids);
            for d in &out {
                let first_sov = dets.iter().find(|x| x.object_id == d.object_id && x.source == Source::SoV);
                let first_any = dets.iter().find(|x| x.object_id == d.object_id).unwrap();
                prop_assert_eq!(d, first_sov.unwrap_or(first_any));
            }
        }

        #[test]
        fn fusion_never_drops_local_detections(
            sov in prop::collection::vec(arb_detection(), 0..8),
            sor in prop::collection::vec(arb_detection(), 0..8),
        ) {
            let sov: Vec<_> = dedup_detections(
                sov.into_iter().map(|mut d| { d.source = Source::SoV; d }).collect(), 1.0);
            let sor: Vec<_> = sor.into_iter().map(|mut d| { d.source = Source::SoR; d }).collect();
            let a = frame(1, Source::SoV, sov.clone());
            let b = frame(1, Source::SoR, sor);
            let fused = intra_frame_fuse(&a, &b, 1.0).unwrap();
            for d in &sov {
                prop_assert!(fused.detections.contains(d));
            }
        }

        #[test]
        fn zero_staleness_inter_equals_intra(
            sov in prop::collection::vec(arb_detection(), 0..8),
            sor in prop::collection::vec(arb_detection(), 0..8),
        ) {
            let cfg = PolicyConfig { extrapolate_stale: false, ..PolicyConfig::default() };
            let a = frame(4, Source::SoV, sov);
            let b = frame(4, Source::SoR, sor);
            let mut buffer = SorBuffer::default();
            buffer.offer_frame(b.clone(), b.timestamp);
            let (inter, staleness) = inter_frame_fuse(&a, &buffer, a.timestamp, &cfg).unwrap();
            prop_assert_eq!(staleness, 0);
            prop_assert_eq!(inter, intra_frame_fuse(&a, &b, cfg.dedup_gate_m).unwrap());
        }

        #[test]
        fn inter_acceptance_is_sharp(staleness in 0u64..=1_200_000) {
            let cfg = PolicyConfig::default();
            let mut buffer = SorBuffer::default();
            buffer.offer_frame(frame(0, Source::SoR, vec![]), Timestamp(1));
            let sov = frame(13, Source::SoV, vec![]);
            let accepted = inter_frame_fuse(&sov, &buffer, Timestamp(staleness), &cfg).is_ok();
            prop_assert_eq!(accepted, staleness <= cfg.inter_tolerance_us);
            let missed = ArrivalStatus { sor_configured: true, matching_arrived: false };
            let mode = select_mode(missed, &buffer, Timestamp(staleness), &cfg);
            prop_assert_eq!(mode == FusionMode::Inter, accepted);
        }

        #[test]
        fn selector_is_total(
            configured in any::<bool>(),
            arrived in any::<bool>(),
            frame_age in prop::option::of(0u64..2_000_000),
            heavy_age in prop::option::of(0u64..8_000_000),
            mode_idx in 0usize..4,
        ) {
            let cfg = PolicyConfig::with_mode(PolicyMode::ALL[mode_idx]);
            let now = Timestamp(10_000_000);
            let mut buffer = SorBuffer::default();
            if let Some(age) = frame_age {
                let mut f = frame(0, Source::SoR, vec![]);
                f.timestamp = Timestamp(now.0 - age);
                buffer.offer_frame(f, now);
            }
            if let Some(age) = heavy_age {
                buffer.offer_heavy(0, vec![heavy(now.0 - age)], now);
            }
            let arrival = ArrivalStatus { sor_configured: configured, matching_arrived: arrived };
            let got = select_mode(arrival, &buffer, now, &cfg);
            let inter_ok = frame_age.is_some_and(|a| a <= cfg.inter_tolerance_us);
            let heavy_ok = heavy_age.is_some_and(|a| a <= cfg.heavy_validity_us);
            let expected = if !configured {
                FusionMode::NoFusion
            } else {
                match cfg.mode {
                    PolicyMode::IntraOnly if arrived => FusionMode::Intra,
                    PolicyMode::IntraOnly => FusionMode::NoFusion,
                    PolicyMode::InterEnabled if arrived => FusionMode::Intra,
                    PolicyMode::InterEnabled if inter_ok => FusionMode::Inter,
                    PolicyMode::InterEnabled => FusionMode::NoFusion,
                    PolicyMode::Adaptive if arrived => FusionMode::Intra,
                    PolicyMode::Adaptive if inter_ok => FusionMode::Inter,
                    PolicyMode::Adaptive if heavy_ok => FusionMode::Planning,
                    PolicyMode::Adaptive => FusionMode::NoFusion,
                    PolicyMode::PlanningOnly if heavy_ok => FusionMode::Planning,
                    PolicyMode::PlanningOnly => FusionMode::NoFusion,
                }
            };
            prop_assert_eq!(got, expected);
        }
    }
}
