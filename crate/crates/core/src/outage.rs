//! Grid outages drawn from SAIFI/CAIDI reliability indices.
//!
//! Outage arrivals are a homogeneous Poisson process with rate SAIFI per
//! year; each duration is `1 + Poisson(CAIDI - 1)` hours, so the minimum
//! outage lasts one hour and the mean duration is CAIDI.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::HOURS_PER_YEAR;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outage {
    pub start_hour: usize,
    pub duration_hours: usize,
}

impl Outage {
    pub fn end_hour(&self) -> usize {
        self.start_hour + self.duration_hours
    }

    pub fn hours(&self) -> std::ops::Range<usize> {
        self.start_hour..self.end_hour()
    }
}

/// Time-ordered, non-overlapping outages over `[0, horizon_hours)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OutageTrace {
    pub outages: Vec<Outage>,
    pub horizon_hours: usize,
}

impl OutageTrace {
    pub fn len(&self) -> usize {
        self.outages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outages.is_empty()
    }

    /// Shifts every outage by `offset` hours (used to place a period's trace
    /// on the absolute horizon clock).
    pub fn offset(mut self, offset: usize) -> Self {
        for o in &mut self.outages {
            o.start_hour += offset;
        }
        self
    }

    /// Outages starting within `[from, to)`.
    pub fn starting_in(&self, from: usize, to: usize) -> impl Iterator<Item = &Outage> {
        self.outages
            .iter()
            .filter(move |o| o.start_hour >= from && o.start_hour < to)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_hour,duration_hours\n");
        for o in &self.outages {
            out.push_str(&format!("{},{}\n", o.start_hour, o.duration_hours));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OutageModel {
    count: Poisson<f64>,
    extra_hours: Poisson<f64>,
    horizon_hours: usize,
}

impl OutageModel {
    pub fn new(saifi: f64, caidi: f64, horizon_years: usize) -> Result<Self> {
        if !(saifi > 0.0 && saifi.is_finite()) {
            return Err(Error::Domain(format!("saifi must be > 0, got {saifi}")));
        }
        if !(caidi > 1.0 && caidi.is_finite()) {
            return Err(Error::Domain(format!(
                "caidi must exceed 1 hour for a unit-shifted duration, got {caidi}"
            )));
        }
        if horizon_years < 1 {
            return Err(Error::Domain("horizon must span at least one year".into()));
        }
        Ok(OutageModel {
            count: Poisson::new(saifi * horizon_years as f64).expect("positive rate"),
            extra_hours: Poisson::new(caidi - 1.0).expect("positive rate"),
            horizon_hours: horizon_years * HOURS_PER_YEAR,
        })
    }

    /// Draws a trace. Overlapping outages are merged and anything past the
    /// horizon is truncated.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> OutageTrace {
        let n = self.count.sample(rng) as usize;
        let mut raw: Vec<Outage> = (0..n)
            .map(|_| Outage {
                start_hour: rng.random_range(0..self.horizon_hours),
                duration_hours: 1 + self.extra_hours.sample(rng) as usize,
            })
            .collect();
        raw.sort_by_key(|o| o.start_hour);

        let mut outages: Vec<Outage> = Vec::with_capacity(raw.len());
        for o in raw {
            match outages.last_mut() {
                Some(prev) if o.start_hour < prev.end_hour() => {
                    let end = prev.end_hour().max(o.end_hour());
                    prev.duration_hours = end - prev.start_hour;
                }
                _ => outages.push(o),
            }
        }
        for o in &mut outages {
            o.duration_hours = o.duration_hours.min(self.horizon_hours - o.start_hour);
        }
        OutageTrace {
            outages,
            horizon_hours: self.horizon_hours,
        }
    }
}

pub fn generate_outages<R: Rng + ?Sized>(
    saifi: f64,
    caidi: f64,
    horizon_years: usize,
    rng: &mut R,
) -> Result<OutageTrace> {
    Ok(OutageModel::new(saifi, caidi, horizon_years)?.sample(rng))
}

/// Empirical interruption frequency (per year) and mean duration (hours).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageStats {
    pub frequency: f64,
    pub mean_duration: f64,
    pub count: usize,
}

pub fn outage_stats(trace: &OutageTrace) -> OutageStats {
    let years = trace.horizon_hours as f64 / HOURS_PER_YEAR as f64;
    let total: usize = trace.outages.iter().map(|o| o.duration_hours).sum();
    let count = trace.len();
    OutageStats {
        frequency: count as f64 / years,
        mean_duration: if count == 0 { 0.0 } else { total as f64 / count as f64 },
        count,
    }
}

/// Counts of outage durations; index `h` holds outages lasting `h` hours.
pub fn duration_histogram<'a>(traces: impl IntoIterator<Item = &'a OutageTrace>) -> Vec<usize> {
    let mut hist = Vec::new();
    for o in traces.into_iter().flat_map(|t| t.outages.iter()) {
        if hist.len() <= o.duration_hours {
            hist.resize(o.duration_hours + 1, 0);
        }
        hist[o.duration_hours] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};

    #[test]
    fn same_stream_same_trace() {
        let a = generate_outages(1.155, 5.122, 20, &mut stream(1, tag::OUTAGE_CHECK, 0)).unwrap();
        let b = generate_outages(1.155, 5.122, 20, &mut stream(1, tag::OUTAGE_CHECK, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn caidi_at_or_below_one_is_rejected() {
        let mut rng = stream(1, tag::OUTAGE_CHECK, 0);
        assert!(generate_outages(1.0, 1.0, 1, &mut rng).is_err());
        assert!(generate_outages(1.0, 0.5, 1, &mut rng).is_err());
        assert!(generate_outages(0.0, 5.0, 1, &mut rng).is_err());
    }

    #[test]
    fn traces_are_sorted_disjoint_and_within_horizon() {
        // High rate forces plenty of overlaps.
        let trace = generate_outages(400.0, 12.0, 3, &mut stream(2, tag::OUTAGE_CHECK, 0)).unwrap();
        assert!(trace.len() > 100);
        for w in trace.outages.windows(2) {
            assert!(w[0].end_hour() <= w[1].start_hour, "{:?}", w);
        }
        for o in &trace.outages {
            assert!(o.duration_hours >= 1);
            assert!(o.end_hour() <= trace.horizon_hours);
        }
    }

    #[test]
    fn long_run_statistics_match_indices() {
        let years = 100_000;
        let trace = generate_outages(1.155, 5.122, years, &mut stream(3, tag::OUTAGE_CHECK, 0)).unwrap();
        let s = outage_stats(&trace);
        // Poisson count sd ~ sqrt(115500) ~ 340, i.e. 0.3%; duration sd ~ 0.2%.
        assert!((s.frequency / 1.155 - 1.0).abs() < 0.02, "{s:?}");
        assert!((s.mean_duration / 5.122 - 1.0).abs() < 0.02, "{s:?}");
    }

    #[test]
    fn histogram_counts_every_outage() {
        let trace = generate_outages(1.155, 5.122, 500, &mut stream(4, tag::OUTAGE_CHECK, 0)).unwrap();
        let hist = duration_histogram([&trace]);
        assert_eq!(hist.iter().sum::<usize>(), trace.len());
        assert_eq!(hist[0], 0);
    }
}
