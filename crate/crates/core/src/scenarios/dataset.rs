use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_scenario, sub_seed, Scenario, ScenarioClass, SimulationSettings, Source};
use crate::error::{Error, Result};
use crate::normalform::{ErrorSeries, Setpoints};
use crate::signal::DqSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Train,
    Validation,
    Test,
    Ood,
}

impl Partition {
    pub const SPLITS: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn label(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
            Partition::Ood => "ood",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Partition::Train),
            "validation" => Some(Partition::Validation),
            "test" => Some(Partition::Test),
            "ood" => Some(Partition::Ood),
            _ => None,
        }
    }
}

/// One preprocessed recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub class: ScenarioClass,
    pub seed: u64,
    pub series: DqSeries,
}

/// Named recordings, each in exactly one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub setpoints: Setpoints,
    pub dt: f64,
    pub records: Vec<Record>,
    pub partitions: Vec<Partition>,
}

impl Dataset {
    pub fn new(setpoints: Setpoints, dt: f64, records: Vec<Record>, partitions: Vec<Partition>) -> Result<Self> {
        if records.len() != partitions.len() {
            return Err(Error::LengthMismatch { left: records.len(), right: partitions.len() });
        }
        let mut names: Vec<&str> = records.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSeries("duplicate record names".into()));
        }
        for r in &records {
            if (r.series.dt() - dt).abs() > 1e-9 * dt {
                return Err(Error::DtMismatch { expected: dt, got: r.series.dt() });
            }
        }
        Ok(Self { setpoints, dt, records, partitions })
    }

    pub fn partition(&self, p: Partition) -> Vec<&Record> {
        self.records
            .iter()
            .zip(&self.partitions)
            .filter(|(_, q)| **q == p)
            .map(|(r, _)| r)
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<(&Record, Partition)> {
        self.records
            .iter()
            .zip(&self.partitions)
            .find(|(r, _)| r.name == name)
            .map(|(r, p)| (r, *p))
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for p in &self.partitions {
            c[*p as usize] += 1;
        }
        c
    }
}

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::param("fractions", "must be non-negative"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::param("fractions", format!("must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items; equal remainders favour
/// the earlier partition.
pub fn partition_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    check_fractions(fractions)?;
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    Ok(counts)
}

/// Assigns partitions per scenario class so every partition with a
/// nonzero fraction holds at least one record of each class.
///
/// `records` are `(name, class)` pairs; the result is in the same order.
pub fn split_records(records: &[(String, ScenarioClass)], fractions: [f64; 3], seed: u64) -> Result<Vec<Partition>> {
    check_fractions(fractions)?;
    let mut classes: Vec<ScenarioClass> = records.iter().map(|r| r.1).collect();
    classes.sort();
    classes.dedup();
    let mut out = vec![Partition::Train; records.len()];
    for class in classes {
        let mut members: Vec<usize> = (0..records.len()).filter(|&k| records[k].1 == class).collect();
        members.sort_by(|&a, &b| records[a].0.cmp(&records[b].0));
        let mut counts = partition_counts(members.len(), fractions)?;
        for p in 0..3 {
            if fractions[p] > 0.0 && counts[p] == 0 {
                let donor = (0..3)
                    .filter(|&q| counts[q] > 1)
                    .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
                match donor {
                    Some(q) => {
                        counts[q] -= 1;
                        counts[p] += 1;
                    }
                    None => {
                        return Err(Error::Stratification(format!(
                            "class {} has {} records, too few to place one in every partition",
                            class.label(),
                            members.len()
                        )))
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("split/{}", class.label())));
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for (p, &count) in counts.iter().enumerate() {
            for k in it.by_ref().take(count) {
                out[k] = Partition::SPLITS[p];
            }
        }
    }
    Ok(out)
}

/// Sample variance of each error-coordinate channel of a record must exceed
/// `floor`.
pub fn check_excitation(record: &Record, setpoints: &Setpoints, floor: f64) -> Result<()> {
    let e = ErrorSeries::from_dq(&record.series, setpoints);
    let n = e.len() as f64;
    for (ch, name) in ["P", "Q", "|v|^2"].iter().enumerate() {
        let mean = e.e.iter().map(|x| x[ch]).sum::<f64>() / n;
        let var = e.e.iter().map(|x| (x[ch] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        if !(var > floor) {
            return Err(Error::RankDeficient(format!(
                "record {}: channel {name} variance {var:e} below {floor:e}",
                record.name
            )));
        }
    }
    Ok(())
}

/// Simulates every in-distribution scenario, preprocesses it and assigns
/// partitions. Scenarios of out-of-distribution classes are rejected.
pub fn build_dataset(
    scenarios: &[Scenario],
    source: &Source,
    settings: &SimulationSettings,
    fractions: [f64; 3],
    seed: u64,
) -> Result<Dataset> {
    check_fractions(fractions)?;
    if let Some(s) = scenarios.iter().find(|s| s.class.is_ood()) {
        return Err(Error::param("scenarios", format!("{} is out-of-distribution", s.name)));
    }
    let keys: Vec<(String, ScenarioClass)> = scenarios.iter().map(|s| (s.name.clone(), s.class)).collect();
    let partitions = split_records(&keys, fractions, seed)?;
    let records = scenarios
        .par_iter()
        .map(|s| {
            let run = simulate_scenario(s, source, settings)?;
            Ok(Record {
                name: s.name.clone(),
                class: s.class,
                seed: s.seed,
                series: run.ports.into_iter().next().expect("one port"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sp = source.setpoints();
    for (r, p) in records.iter().zip(&partitions) {
        if *p == Partition::Train {
            if let Err(e) = check_excitation(r, &sp, 1e-8) {
                log::warn!("{e}");
            }
        }
    }
    Dataset::new(sp, settings.dt, records, partitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(partition_counts(10, [0.7, 0.2, 0.1]).unwrap(), [7, 2, 1]);
        assert_eq!(partition_counts(10, [1.0, 0.0, 0.0]).unwrap(), [10, 0, 0]);
        assert_eq!(partition_counts(5, [0.7, 0.2, 0.1]).unwrap(), [4, 1, 0]);
        assert!(partition_counts(5, [0.7, 0.2, 0.2]).is_err());
    }

    fn keys(per_class: usize) -> Vec<(String, ScenarioClass)> {
        let mut out = Vec::new();
        for class in [ScenarioClass::MagnitudeSteps, ScenarioClass::FrequencySteps, ScenarioClass::RapidChanges] {
            for k in 0..per_class {
                out.push((format!("{}-{k:02}", class.label()), class));
            }
        }
        out
    }

    #[test]
    fn stratified_split() {
        let split = split_records(&keys(3), [0.7, 0.2, 0.1], 1).unwrap();
        for class in 0..3 {
            let mut seen = split[class * 3..class * 3 + 3].to_vec();
            seen.sort();
            assert_eq!(seen, Partition::SPLITS.to_vec());
        }
        let split = split_records(&keys(5), [0.7, 0.2, 0.1], 1).unwrap();
        let count = |p| split.iter().filter(|q| **q == p).count();
        assert_eq!([count(Partition::Train), count(Partition::Validation), count(Partition::Test)], [9, 3, 3]);
        assert!(matches!(split_records(&keys(2), [0.7, 0.2, 0.1], 1), Err(Error::Stratification(_))));
    }

    #[test]
    fn single_class_ten_records() {
        let k: Vec<_> = (0..10).map(|i| (format!("r{i}"), ScenarioClass::RapidChanges)).collect();
        let split = split_records(&k, [0.7, 0.2, 0.1], 4).unwrap();
        let count = |p| split.iter().filter(|q| **q == p).count();
        assert_eq!([count(Partition::Train), count(Partition::Validation), count(Partition::Test)], [7, 2, 1]);
        let all_train = split_records(&k, [1.0, 0.0, 0.0], 4).unwrap();
        assert!(all_train.iter().all(|p| *p == Partition::Train));
    }

    proptest! {
        #[test]
        fn counts_cover_all_records(n in 0usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (a, b) = if a + b > 1.0 { (a / (a + b), b / (a + b)) } else { (a, b) };
            let c = (1.0 - a - b).max(0.0);
            let counts = partition_counts(n, [a, b, c]).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
        }

        #[test]
        fn split_is_deterministic_partition(per_class in 3usize..12, seed in any::<u64>()) {
            let k = keys(per_class);
            let a = split_records(&k, [0.7, 0.2, 0.1], seed).unwrap();
            let b = split_records(&k, [0.7, 0.2, 0.1], seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), k.len());
            prop_assert!(a.iter().all(|p| *p != Partition::Ood));
        }
    }
}
