//! Drift magnitude, drift time and preference value-gap statistics.

use crate::error::{Error, Result};
use crate::eval::ValueSnapshot;
use crate::stance::Stance;
use crate::world::{PreferencePair, TopicId, World};

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

/// Default histogram resolution over [0, √2].
pub const DEFAULT_GAP_BINS: usize = 30;

/// Ordered value snapshots of one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    checkpoints: Vec<ValueSnapshot>,
}

impl Trajectory {
    pub fn new(checkpoints: Vec<ValueSnapshot>) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::invalid("trajectory needs at least one checkpoint"));
        }
        if checkpoints.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(Error::invalid("checkpoint steps must be strictly increasing"));
        }
        Ok(Trajectory { checkpoints })
    }

    pub fn checkpoints(&self) -> &[ValueSnapshot] {
        &self.checkpoints
    }

    pub fn first(&self) -> &ValueSnapshot {
        &self.checkpoints[0]
    }

    pub fn last(&self) -> &ValueSnapshot {
        self.checkpoints.last().expect("non-empty")
    }

    /// Steps between the first and last checkpoint.
    pub fn step_span(&self) -> usize {
        self.last().step - self.first().step
    }

    /// Time-reversed trajectory on the mirrored step grid.
    pub fn reversed(&self) -> Trajectory {
        let (first, last) = (self.first().step, self.last().step);
        let checkpoints = self
            .checkpoints
            .iter()
            .rev()
            .map(|c| c.at_step(first + last - c.step))
            .collect();
        Trajectory { checkpoints }
    }

    /// Every step index multiplied by `factor`.
    pub fn rescaled(&self, factor: usize) -> Result<Trajectory> {
        Trajectory::new(self.checkpoints.iter().map(|c| c.at_step(c.step * factor)).collect())
    }
}

/// Topic mean and 95% interval `mean ± 1.96 s/√n` over the topic's prompts.
///
/// `s` is the sample standard deviation; a single prompt gives a zero-width interval.
pub fn topic_interval(snapshot: &ValueSnapshot, topic: TopicId, stance: Stance) -> Result<(f64, f64, f64)> {
    let tv = snapshot.topic(topic)?;
    let mean = tv.mean[stance];
    let n = tv.prompts.len();
    if n < 2 {
        return Ok((mean, mean, mean));
    }
    let m = tv.prompts.iter().map(|(_, v)| v[stance]).sum::<f64>() / n as f64;
    let ss: f64 = tv.prompts.iter().map(|(_, v)| (v[stance] - m).powi(2)).sum();
    let half = Z_95 * (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt();
    Ok((mean, mean - half, mean + half))
}

/// Change in the topic's stance probability from the first to the last checkpoint.
pub fn drift_magnitude(traj: &Trajectory, topic: TopicId, stance: Stance) -> Result<f64> {
    Ok(traj.last().per_topic(topic)?[stance] - traj.first().per_topic(topic)?[stance])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftTime {
    /// Fraction of the phase's steps needed to enter the extremum's interval.
    pub time: f64,
    pub extremum_value: f64,
    pub extremum_step: usize,
    /// Step at which the trajectory first lies within the interval.
    pub entry_step: usize,
}

/// How fast the topic-stance probability reaches its eventual extremum.
///
/// The extremum is the checkpoint after the first whose value lies farthest
/// from the starting value (ties: larger value, then earlier step). The result
/// is the relative step at which the trajectory first enters that
/// checkpoint's 95% interval, divided by the phase's step span.
pub fn drift_time(traj: &Trajectory, topic: TopicId, stance: Stance) -> Result<DriftTime> {
    let cps = traj.checkpoints();
    if cps.len() < 2 {
        return Err(Error::invalid("drift time needs at least two checkpoints"));
    }
    let start = cps[0].per_topic(topic)?[stance];
    let mut ext = &cps[1];
    let mut ext_val = ext.per_topic(topic)?[stance];
    for cp in &cps[2..] {
        let v = cp.per_topic(topic)?[stance];
        let (d, best) = ((v - start).abs(), (ext_val - start).abs());
        if d > best || (d == best && v > ext_val) {
            ext = cp;
            ext_val = v;
        }
    }
    let (_, lo, hi) = topic_interval(ext, topic, stance)?;
    let mut entry = ext.step;
    for cp in &cps[1..] {
        let v = cp.per_topic(topic)?[stance];
        if lo <= v && v <= hi {
            entry = cp.step;
            break;
        }
    }
    Ok(DriftTime {
        time: (entry - cps[0].step) as f64 / traj.step_span() as f64,
        extremum_value: ext_val,
        extremum_step: ext.step,
        entry_step: entry,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub topic: TopicId,
    pub stance: Stance,
    pub magnitude: f64,
    pub time: f64,
    pub extremum_value: f64,
    pub extremum_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
}

impl DriftReport {
    pub fn row(&self, topic: TopicId, stance: Stance) -> Option<&DriftRow> {
        self.rows.iter().find(|r| r.topic == topic && r.stance == stance)
    }
}

/// Magnitude and time for every (topic, stance) of the trajectory, topic-major.
pub fn drift_report(traj: &Trajectory) -> Result<DriftReport> {
    let mut rows = Vec::new();
    for tv in &traj.first().topics {
        for stance in Stance::ALL {
            let t = drift_time(traj, tv.topic, stance)?;
            rows.push(DriftRow {
                topic: tv.topic,
                stance,
                magnitude: drift_magnitude(traj, tv.topic, stance)?,
                time: t.time,
                extremum_value: t.extremum_value,
                extremum_step: t.extremum_step,
            });
        }
    }
    Ok(DriftReport { rows })
}

/// Euclidean distance between the chosen and rejected stance vectors.
pub fn value_gap(pair: &PreferencePair, world: &World) -> Result<f64> {
    world.candidate_index(pair.prompt_id, pair.chosen_id)?;
    world.candidate_index(pair.prompt_id, pair.rejected_id)?;
    let a = world.response(pair.chosen_id)?.stance;
    let b = world.response(pair.rejected_id)?.stance;
    Ok(a.distance(&b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Equal-width histogram of value gaps over `[0, √2]`; the last bin is closed.
pub fn value_gap_histogram(dataset: &[PreferencePair], world: &World, n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let hi = 2f64.sqrt();
    let width = hi / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|i| i as f64 * width).collect();
    edges.push(hi);
    let mut counts = vec![0usize; n_bins];
    for pair in dataset {
        let g = value_gap(pair, world)?;
        let bin = ((g / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stance::StanceVector;
    use crate::world::{generate_preference_dataset, generate_world, Alignment, PromptId, WorldParams};

    fn snap(step: usize, topic_prompts: &[Vec<[f64; 3]>]) -> ValueSnapshot {
        let mut pid = 0;
        let topics = topic_prompts
            .iter()
            .enumerate()
            .map(|(t, prompts)| {
                let values = prompts
                    .iter()
                    .map(|v| {
                        pid += 1;
                        (PromptId(pid - 1), StanceVector::from_array(*v).unwrap())
                    })
                    .collect();
                (TopicId(t), values)
            })
            .collect();
        ValueSnapshot::from_prompt_values(step, topics).unwrap()
    }

    fn single(step: usize, v: [f64; 3]) -> ValueSnapshot {
        snap(step, &[vec![v]])
    }

    fn support_series(values: &[f64]) -> Trajectory {
        Trajectory::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &s)| single(i, [s, 1.0 - s, 0.0]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn magnitude_example() {
        let traj = Trajectory::new(vec![single(0, [0.20, 0.70, 0.10]), single(10, [0.27, 0.57, 0.16])]).unwrap();
        let m: Vec<f64> = Stance::ALL
            .iter()
            .map(|&s| drift_magnitude(&traj, TopicId(0), s).unwrap())
            .collect();
        for (a, b) in m.iter().zip([0.07, -0.13, 0.06]) {
            assert!((a - b).abs() < 1e-12);
        }
        let rev = traj.reversed();
        for s in Stance::ALL {
            let a = drift_magnitude(&traj, TopicId(0), s).unwrap();
            let b = drift_magnitude(&rev, TopicId(0), s).unwrap();
            assert_eq!(a, -b);
        }
        assert!(drift_magnitude(&traj, TopicId(5), Stance::Support).is_err());
    }

    #[test]
    fn constant_trajectory() {
        let traj = Trajectory::new((0..5).map(|i| single(i * 3, [0.2, 0.3, 0.5])).collect()).unwrap();
        let report = drift_report(&traj).unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert_eq!(r.magnitude, 0.0);
            assert_eq!(r.time, 3.0 / 12.0);
        }
    }

    #[test]
    fn monotone_single_prompt_takes_full_span() {
        let values: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let traj = support_series(&values);
        let t = drift_time(&traj, TopicId(0), Stance::Support).unwrap();
        assert_eq!(t.extremum_step, 9);
        assert_eq!(t.extremum_value, 1.0);
        assert_eq!(t.time, 1.0);
    }

    #[test]
    fn immediate_jump() {
        let mut values = vec![0.1];
        values.extend(std::iter::repeat_n(0.9, 10));
        let traj = support_series(&values);
        let t = drift_time(&traj, TopicId(0), Stance::Support).unwrap();
        assert_eq!(t.entry_step, 1);
        assert!((t.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn farthest_excursion_wins_over_nearer_peak() {
        // rises to 0.6 then falls to 0.0 from a 0.5 start: the trough is farther
        let traj = support_series(&[0.5, 0.6, 0.3, 0.0, 0.1]);
        let t = drift_time(&traj, TopicId(0), Stance::Support).unwrap();
        assert_eq!(t.extremum_step, 3);
        assert_eq!(t.extremum_value, 0.0);
        // equal distances: larger value wins
        let traj = support_series(&[0.5, 0.25, 0.75, 0.6]);
        let t = drift_time(&traj, TopicId(0), Stance::Support).unwrap();
        assert_eq!(t.extremum_step, 2);
    }

    #[test]
    fn interval_uses_prompt_dispersion() {
        let s = snap(0, &[vec![[0.2, 0.8, 0.0], [0.4, 0.6, 0.0], [0.6, 0.4, 0.0]]]);
        let (m, lo, hi) = topic_interval(&s, TopicId(0), Stance::Support).unwrap();
        assert!((m - 0.4).abs() < 1e-15);
        let half = 1.96 * 0.2 / 3f64.sqrt();
        assert!((hi - m - half).abs() < 1e-12 && (m - lo - half).abs() < 1e-12);
    }

    #[test]
    fn drift_time_needs_two_checkpoints() {
        let traj = Trajectory::new(vec![single(0, [1.0, 0.0, 0.0])]).unwrap();
        assert!(drift_time(&traj, TopicId(0), Stance::Support).is_err());
        assert_eq!(drift_magnitude(&traj, TopicId(0), Stance::Support).unwrap(), 0.0);
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![single(2, [1.0, 0.0, 0.0]), single(2, [1.0, 0.0, 0.0])]).is_err());
    }

    #[test]
    fn rescaling_preserves_time() {
        let traj = support_series(&[0.1, 0.3, 0.5, 0.55, 0.56, 0.56]);
        let a = drift_time(&traj, TopicId(0), Stance::Support).unwrap();
        let b = drift_time(&traj.rescaled(7).unwrap(), TopicId(0), Stance::Support).unwrap();
        assert_eq!(a.time, b.time);
    }

    fn world() -> World {
        generate_world(&WorldParams {
            n_topics: 2,
            prompts_per_topic: 10,
            responses_per_prompt: 6,
            seed: 9,
            ..WorldParams::default()
        })
        .unwrap()
    }

    #[test]
    fn value_gap_examples() {
        let w = world();
        let ids = &w.prompts()[0].response_ids;
        // coverage rule: slot 0 support, slot 1 neutral, slot 2 oppose
        let p = |a: usize, b: usize| PreferencePair {
            prompt_id: PromptId(0),
            chosen_id: ids[a],
            rejected_id: ids[b],
        };
        assert!((value_gap(&p(0, 2), &w).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(value_gap(&p(1, 1), &w).unwrap(), 0.0);
        assert_eq!(value_gap(&p(0, 2), &w).unwrap(), value_gap(&p(2, 0), &w).unwrap());
        let foreign = PreferencePair {
            prompt_id: PromptId(1),
            ..p(0, 2)
        };
        assert!(value_gap(&foreign, &w).is_err());

        let a = StanceVector::new(0.5, 0.5, 0.0).unwrap();
        let b = StanceVector::new(0.0, 0.5, 0.5).unwrap();
        assert!((a.distance(&b) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn histogram_extremes() {
        let w = world();
        let zero = generate_preference_dataset(&w, 0.0, Alignment::SupportAligned, 500, 1).unwrap();
        let h = value_gap_histogram(&zero, &w, DEFAULT_GAP_BINS).unwrap();
        assert_eq!(h.counts[0], 500);
        assert_eq!(h.edges.len(), 31);
        let full = generate_preference_dataset(&w, 1.0, Alignment::SupportAligned, 500, 1).unwrap();
        let h = value_gap_histogram(&full, &w, DEFAULT_GAP_BINS).unwrap();
        assert_eq!(h.counts[DEFAULT_GAP_BINS - 1], 500);
        let empty = value_gap_histogram(&[], &w, 4).unwrap();
        assert_eq!(empty.counts, vec![0; 4]);
        assert!(value_gap_histogram(&[], &w, 0).is_err());
    }

    #[test]
    fn histogram_half_gap() {
        let w = world();
        let n = 10_000;
        let d = generate_preference_dataset(&w, 0.5, Alignment::SupportAligned, n, 12).unwrap();
        let h = value_gap_histogram(&d, &w, DEFAULT_GAP_BINS).unwrap();
        assert_eq!(h.total(), n);
        assert_eq!(h.counts[0] + h.counts[DEFAULT_GAP_BINS - 1], n);
        let f = h.counts[DEFAULT_GAP_BINS - 1] as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.015, "{f}");
    }
}
