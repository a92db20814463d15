use rand::Rng;

use super::{EvidenceCluster, EvidenceError, EvidenceSet, Result, Span};
use crate::data::{derive_label, GapSample, Label, Mention};
use crate::tensor::rng::{self, Stream};

pub struct ProviderInput<'a> {
    pub sample: &'a GapSample,
    /// Gold cluster (char offset, char length), when the sample is synthetic.
    pub gold: Option<&'a [(usize, usize)]>,
}

/// A source of coreference clusters. Outputs depend only on the input and
/// the provider's own configuration.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, input: &ProviderInput) -> Result<EvidenceCluster>;
}

fn span_of(m: &Mention) -> Span {
    Span::new(m.offset, m.char_len())
}

/// Label a cluster points at: which candidates it overlaps.
pub fn implied_label(cluster: &EvidenceCluster, sample: &GapSample) -> Option<Label> {
    let hits = |m: &Mention| {
        let s = span_of(m);
        cluster.mentions.iter().any(|c| c.overlaps(&s))
    };
    derive_label(hits(&sample.a), hits(&sample.b))
}

/// Syntactic parallelism stand-in: the candidate nearest before the pronoun,
/// else the nearest after it; equal distances go to the lower offset.
pub struct Heuristic {
    name: String,
}

impl Heuristic {
    pub fn new(name: &str) -> Self {
        Self { name: name.into() }
    }
}

impl Provider for Heuristic {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, input: &ProviderInput) -> Result<EvidenceCluster> {
        let s = input.sample;
        let p = s.pronoun.offset;
        let cands = [&s.a, &s.b];
        let preceding = cands
            .iter()
            .filter(|m| m.offset < p)
            .min_by_key(|m| (p - m.offset, m.offset));
        let chosen = preceding.or_else(|| {
            cands
                .iter()
                .filter(|m| m.offset >= p)
                .min_by_key(|m| (m.offset - p, m.offset))
        });
        let mentions = chosen.map(|m| vec![span_of(m)]).unwrap_or_default();
        Ok(EvidenceCluster::new(&s.id, &self.name, mentions))
    }
}

/// Emits the gold cluster of a synthetic sample.
pub struct Oracle {
    name: String,
}

impl Oracle {
    pub fn new(name: &str) -> Self {
        Self { name: name.into() }
    }
}

impl Provider for Oracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, input: &ProviderInput) -> Result<EvidenceCluster> {
        let gold = input.gold.ok_or_else(|| EvidenceError::NoGold {
            provider: self.name.clone(),
            sample_id: input.sample.id.clone(),
        })?;
        let mentions = gold.iter().map(|&(o, l)| Span::new(o, l)).collect();
        Ok(EvidenceCluster::new(&input.sample.id, &self.name, mentions))
    }
}

/// Wraps a provider and, with probability `rate` per sample, replaces its
/// cluster with one pointing at a candidate the base cluster does not pick.
/// The replacement lists only that candidate's span.
pub struct Corrupt {
    name: String,
    base: Box<dyn Provider>,
    rate: f64,
    seed: u64,
}

impl Corrupt {
    pub fn new(name: &str, base: Box<dyn Provider>, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(EvidenceError::Rate(rate));
        }
        Ok(Self {
            name: name.into(),
            base,
            rate,
            seed,
        })
    }
}

impl Provider for Corrupt {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, input: &ProviderInput) -> Result<EvidenceCluster> {
        let base = self.base.predict(input)?;
        let s = input.sample;
        let mut r = rng::keyed(self.seed, Stream::Providers, &s.id);
        let flip = r.random::<f64>() < self.rate;
        if !flip {
            return Ok(EvidenceCluster::new(&s.id, &self.name, base.mentions));
        }
        let wrong = match implied_label(&base, s) {
            Some(Label::A) | None => &s.b,
            Some(Label::B) => &s.a,
            Some(Label::Neither) => {
                if r.random::<bool>() {
                    &s.a
                } else {
                    &s.b
                }
            }
        };
        Ok(EvidenceCluster::new(&s.id, &self.name, vec![span_of(wrong)]))
    }
}

/// Run every provider over every input, in the given provider order.
pub fn run_providers(providers: &[Box<dyn Provider>], inputs: &[ProviderInput]) -> Result<EvidenceSet> {
    let mut set = EvidenceSet::new(providers.iter().map(|p| p.name().to_string()).collect());
    for input in inputs {
        for p in providers {
            set.insert(p.predict(input)?);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn spaced(p: usize, a: usize, b: usize) -> GapSample {
        let mut text = vec![' '; 40];
        for (o, w) in [(p, "her"), (a, "Ann"), (b, "Bea")] {
            for (k, c) in w.chars().enumerate() {
                text[o + k] = c;
            }
        }
        let text: String = text.into_iter().collect();
        GapSample::new("h", &text, ("her", p), ("Ann", a), ("Bea", b), false, false, "").unwrap()
    }

    fn heuristic(s: &GapSample) -> Vec<Span> {
        Heuristic::new("par")
            .predict(&ProviderInput { sample: s, gold: None })
            .unwrap()
            .mentions
    }

    #[test]
    fn heuristic_rules() {
        // nearest preceding
        assert_eq!(heuristic(&spaced(20, 4, 30)), vec![Span::new(4, 3)]);
        assert_eq!(heuristic(&spaced(20, 4, 12)), vec![Span::new(12, 3)]);
        // nothing precedes: nearest following
        assert_eq!(heuristic(&spaced(0, 20, 10)), vec![Span::new(10, 3)]);
    }

    #[test]
    fn heuristic_on_table_offsets() {
        // Offsets of a sample with A@338, B@475 and the pronoun @410.
        let mut text = "x".repeat(500);
        text.replace_range(338..352, "Anna MacIntosh");
        text.replace_range(410..413, "her");
        text.replace_range(475..491, "Mildred Vergosen");
        let s = GapSample::new(
            "test-282", &text, ("her", 410), ("Anna MacIntosh", 338), ("Mildred Vergosen", 475), true, false, "",
        )
        .unwrap();
        assert_eq!(heuristic(&s), vec![Span::new(338, 14)]);
    }

    #[test]
    fn oracle_matches_gold_and_needs_it() {
        let corpus = generate_synthetic(&SynthConfig {
            size: 1000,
            ..SynthConfig::default()
        })
        .unwrap();
        let oracle = Oracle::new("oracle");
        for s in &corpus.samples {
            let c = oracle
                .predict(&ProviderInput { sample: &s.sample, gold: Some(&s.gold_cluster) })
                .unwrap();
            assert_eq!(implied_label(&c, &s.sample), Some(s.sample.label()));
        }
        let s = &corpus.samples[0].sample;
        assert!(matches!(
            oracle.predict(&ProviderInput { sample: s, gold: None }),
            Err(EvidenceError::NoGold { .. })
        ));
    }

    #[test]
    fn corruption_rates() {
        let corpus = generate_synthetic(&SynthConfig {
            size: 10_000,
            ..SynthConfig::default()
        })
        .unwrap();
        let inputs: Vec<ProviderInput> = corpus
            .samples
            .iter()
            .map(|s| ProviderInput { sample: &s.sample, gold: Some(&s.gold_cluster) })
            .collect();
        let agree = |rate: f64| {
            let p = Corrupt::new("adv", Box::new(Oracle::new("o")), rate, 3).unwrap();
            inputs
                .iter()
                .filter(|i| implied_label(&p.predict(i).unwrap(), i.sample) == Some(i.sample.label()))
                .count() as f64
                / inputs.len() as f64
        };
        assert_eq!(agree(0.0), 1.0);
        assert_eq!(agree(1.0), 0.0);
        let corrupted = 1.0 - agree(0.5);
        assert!((corrupted - 0.5).abs() <= 0.02, "{corrupted}");

        let clean = Oracle::new("o").predict(&inputs[0]).unwrap();
        let same = Corrupt::new("o", Box::new(Oracle::new("o")), 0.0, 9).unwrap().predict(&inputs[0]).unwrap();
        assert_eq!(clean, same);
        assert!(Corrupt::new("x", Box::new(Oracle::new("o")), 1.5, 0).is_err());
    }

    #[test]
    fn outputs_are_deterministic() {
        let corpus = generate_synthetic(&SynthConfig { size: 40, ..SynthConfig::default() }).unwrap();
        let provs: Vec<Box<dyn Provider>> = vec![
            Box::new(Heuristic::new("par")),
            Box::new(Corrupt::new("adv", Box::new(Oracle::new("o")), 0.5, 1).unwrap()),
        ];
        let inputs: Vec<ProviderInput> = corpus
            .samples
            .iter()
            .map(|s| ProviderInput { sample: &s.sample, gold: Some(&s.gold_cluster) })
            .collect();
        let a = run_providers(&provs, &inputs).unwrap();
        let b = run_providers(&provs, &inputs).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(a.len(), 80);
    }
}
