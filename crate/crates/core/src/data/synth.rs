use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, GapSample, Gender, Label, Result};
use crate::tensor::rng::{self, Stream};

const MALE: &[&str] = &[
    "Adam", "Brian", "Carl", "David", "Edward", "Frank", "George", "Henry", "Ivan", "James",
    "Kevin", "Louis", "Martin", "Nathan", "Oscar", "Peter", "Quentin", "Robert", "Samuel",
    "Thomas", "Victor", "Walter", "Xavier", "Yusuf", "Zachary", "Arthur", "Bernard", "Colin",
    "Dennis", "Eric", "Felix", "Gordon", "Harold", "Isaac", "Jerome", "Keith", "Leonard",
    "Miles", "Neil", "Owen",
];
const FEMALE: &[&str] = &[
    "Alice", "Beatrice", "Clara", "Diana", "Emma", "Fiona", "Grace", "Helen", "Irene", "Julia",
    "Karen", "Laura", "Maria", "Nora", "Olivia", "Paula", "Rachel", "Sarah", "Tina", "Ursula",
    "Vera", "Wendy", "Yvonne", "Zoe", "Agnes", "Brenda", "Cecilia", "Doris", "Elena", "Frances",
    "Gloria", "Hannah", "Ingrid", "Joan", "Kate", "Lucy", "Monica", "Nadia", "Ruth", "Sylvia",
];
const PLACES: &[&str] = &[
    "museum", "harbor", "library", "market", "station", "theater", "garden", "hospital",
    "school", "castle", "bakery", "stadium",
];
const THINGS: &[&str] = &[
    "letter", "painting", "bicycle", "guitar", "camera", "lamp", "book", "ticket", "map",
    "violin", "clock", "basket",
];

/// Templates whose wording alone determines the referent. Slots: `{A}`,
/// `{B}`, `{C}` names; `{ps}`/`{Ps}` subject pronoun, `{pp}` possessive,
/// `{po}` object; `{place}`, `{thing}`.
const CUED: [&[&str]; 3] = [
    &[
        "{A} hired {B} at the {place} because {ps} was the manager there.",
        "{A} thanked {B} for the {thing}, and {ps} smiled as the host.",
        "{A} scolded {B} at the {place}; {ps} was the strict supervisor.",
    ],
    &[
        "{A} visited {B} at the {place}, where {ps} had lived for years.",
        "{A} called {B}, who said {ps} would repair the {thing}.",
        "{A} paid {B}, the tailor, and {ps} mended the {thing}.",
    ],
    &[
        "{A} and {B} watched {C} at the {place}; {ps} was the star of the show.",
        "{A} told {B} about {C}, and {pp} {thing} was famous.",
        "{A} and {B} admired {C}. Everyone praised {po} at the {place}.",
    ],
];

/// Templates with three same-gender names whose wording is identical for
/// every label; only coreference evidence can resolve them.
const OPEN: &[&str] = &[
    "{A}, {B} and {C} went to the {place}. Later {ps} bought a {thing}.",
    "At the {place}, {A} greeted {B} while {C} waited. Then {ps} found the {thing}.",
    "{A} and {B} met {C} near the {place}, where {ps} left a {thing}.",
    "{A} saw {B} and {C} at the {place}. {Ps} carried a {thing}.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    /// Fraction of samples drawn from the evidence-only templates.
    pub insufficient_fraction: f64,
    /// Relative class frequencies for A, B, NEITHER.
    pub class_mix: [f64; 3],
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            insufficient_fraction: 0.5,
            class_mix: [1.0, 1.0, 1.0],
            seed: 42,
            id_prefix: "synth".into(),
        }
    }
}

/// A generated sample with its gold coreference structure. Spans are
/// (char offset, char length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub sample: GapSample,
    /// Referent mention(s) plus the pronoun.
    pub gold_cluster: Vec<(usize, usize)>,
    /// Singleton clusters for the remaining names.
    pub other_clusters: Vec<Vec<(usize, usize)>>,
    pub insufficient: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticCorpus {
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticCorpus {
    pub fn gap_samples(&self) -> Vec<GapSample> {
        self.samples.iter().map(|s| s.sample.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&SyntheticSample> {
        self.samples.iter().find(|s| s.sample.id == id)
    }
}

/// Largest-remainder apportionment of `n` over `weights`.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        (exact[j] - exact[j].floor())
            .total_cmp(&(exact[i] - exact[i].floor()))
            .then(i.cmp(&j))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.size < 6 {
        return Err(DataError::Synthetic(format!(
            "size {} cannot cover three classes for both genders",
            cfg.size
        )));
    }
    if !(0.0..=1.0).contains(&cfg.insufficient_fraction) {
        return Err(DataError::Synthetic("insufficient fraction outside [0, 1]".into()));
    }
    if cfg.class_mix.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(DataError::Synthetic("class mix weights must be positive".into()));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Synthetic);

    // Every class gets at least one sample per gender.
    let mut per_class = apportion(cfg.size, &cfg.class_mix);
    while let Some(k) = per_class.iter().position(|&c| c < 2) {
        let donor = (0..3).max_by_key(|&j| (per_class[j], 3 - j)).expect("three classes");
        per_class[donor] -= 1;
        per_class[k] += 1;
    }
    let mut plan: Vec<(Label, Gender, bool)> = Vec::with_capacity(cfg.size);
    for (k, &n) in per_class.iter().enumerate() {
        let label = Label::ALL[k];
        let (m, f) = if k % 2 == 0 { (n - n / 2, n / 2) } else { (n / 2, n - n / 2) };
        for (gender, count) in [(Gender::M, m), (Gender::F, f)] {
            let open = (count as f64 * cfg.insufficient_fraction).round() as usize;
            for i in 0..count {
                plan.push((label, gender, i < open));
            }
        }
    }
    plan.shuffle(&mut rng);

    let width = cfg.size.to_string().len();
    let samples = plan
        .into_iter()
        .enumerate()
        .map(|(i, (label, gender, open))| {
            let id = format!("{}-{:0width$}", cfg.id_prefix, i + 1);
            fill(&id, label, gender, open, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus { samples })
}

fn fill(id: &str, label: Label, gender: Gender, open: bool, rng: &mut impl Rng) -> Result<SyntheticSample> {
    let template = if open {
        *OPEN.choose(rng).expect("templates")
    } else {
        *CUED[label.index()].choose(rng).expect("templates")
    };
    let pool = match gender {
        Gender::M => MALE,
        Gender::F => FEMALE,
    };
    let names: Vec<&str> = pool.choose_multiple(rng, 3).copied().collect();
    let (subj, poss, obj) = match gender {
        Gender::M => ("he", "his", "him"),
        Gender::F => ("she", "her", "her"),
    };
    let place = *PLACES.choose(rng).expect("places");
    let thing = *THINGS.choose(rng).expect("things");

    let mut text = String::new();
    let mut chars = 0;
    // (char offset, surface) of A, B, C, pronoun
    let mut spans: [Option<(usize, String)>; 4] = Default::default();
    let mut rest = template;
    while let Some(open_at) = rest.find('{') {
        let lit = &rest[..open_at];
        text.push_str(lit);
        chars += lit.chars().count();
        let close = rest[open_at..].find('}').expect("closed slot") + open_at;
        let slot = &rest[open_at + 1..close];
        let (value, which) = match slot {
            "A" => (names[0].to_string(), Some(0)),
            "B" => (names[1].to_string(), Some(1)),
            "C" => (names[2].to_string(), Some(2)),
            "ps" => (subj.to_string(), Some(3)),
            "Ps" => (capitalize(subj), Some(3)),
            "pp" => (poss.to_string(), Some(3)),
            "po" => (obj.to_string(), Some(3)),
            "place" => (place.to_string(), None),
            "thing" => (thing.to_string(), None),
            other => panic!("unknown template slot {other}"),
        };
        if let Some(w) = which {
            spans[w] = Some((chars, value.clone()));
        }
        chars += value.chars().count();
        text.push_str(&value);
        rest = &rest[close + 1..];
    }
    text.push_str(rest);

    let get = |k: usize| spans[k].clone().expect("template fills slot");
    let (p, a, b) = (get(3), get(0), get(1));
    let (a_coref, b_coref) = label.flags();
    let sample = GapSample::new(
        id,
        &text,
        (&p.1, p.0),
        (&a.1, a.0),
        (&b.1, b.0),
        a_coref,
        b_coref,
        "",
    )?;
    let referent = match label {
        Label::A => 0,
        Label::B => 1,
        Label::Neither => 2,
    };
    let span = |k: usize| spans[k].as_ref().map(|(o, s)| (*o, s.chars().count()));
    let mut gold_cluster = vec![span(referent).ok_or_else(|| {
        DataError::Synthetic(format!("template {template:?} lacks a referent for {label}"))
    })?];
    gold_cluster.push(span(3).expect("pronoun"));
    gold_cluster.sort_unstable();
    let other_clusters = (0..3)
        .filter(|&k| k != referent)
        .filter_map(|k| span(k).map(|s| vec![s]))
        .collect();
    Ok(SyntheticSample {
        sample,
        gold_cluster,
        other_clusters,
        insufficient: open,
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
