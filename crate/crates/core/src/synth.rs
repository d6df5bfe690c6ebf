//! Synthetic corpora with controllable, modality-separable class signal.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CategoricalFeature, CategoricalSchema, Corpus, CorpusError, RawPost, StanceLabel, UnknownPolicy, OFFLINE_FEATURES};
use crate::rng;

/// Class tokens planted in the tweet text, `[Anti, Pro]`.
pub const TEXT_TOKENS: [&str; 2] = ["jabalpha", "jabbeta"];
/// Class tokens planted in the profile description, `[Anti, Pro]`.
pub const DESC_TOKENS: [&str; 2] = ["bioalpha", "biobeta"];

const FILLER: [&str; 40] = [
    "the", "a", "today", "people", "news", "read", "think", "week", "shot", "clinic", "health", "town", "family",
    "work", "again", "really", "school", "data", "policy", "doctor", "line", "wait", "friend", "morning", "update",
    "report", "local", "county", "public", "said", "time", "new", "just", "still", "more", "some", "any", "every",
    "after", "before",
];
const BIO_FILLER: [&str; 20] = [
    "mom", "dad", "teacher", "nurse", "engineer", "runner", "fan", "writer", "veteran", "student", "coffee", "dogs",
    "music", "faith", "sports", "travel", "tech", "art", "gardener", "reader",
];
const HASHTAGS: [&str; 4] = ["#covid19", "#vaccine", "#health", "#news"];

pub const STATES: [&str; 50] = [
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "ID", "IL", "IN", "IA", "KS", "KY", "LA", "ME",
    "MD", "MA", "MI", "MN", "MS", "MO", "MT", "NE", "NV", "NH", "NJ", "NM", "NY", "NC", "ND", "OH", "OK", "OR", "PA",
    "RI", "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV", "WI", "WY",
];
pub const RACES: [&str; 4] = ["asian", "black", "hispanic", "white"];
pub const GENDERS: [&str; 2] = ["female", "male"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid signal spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Category weights for one offline feature. `neutral` is used for records
/// that do not carry offline signal; `anti` and `pro` for those that do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSignal {
    pub feature: String,
    pub categories: Vec<String>,
    pub neutral: Vec<f64>,
    pub anti: Vec<f64>,
    pub pro: Vec<f64>,
}

impl OfflineSignal {
    /// Every category equally likely regardless of class.
    pub fn uniform(feature: &str, categories: &[&str]) -> Self {
        let w = vec![1.0; categories.len()];
        OfflineSignal {
            feature: feature.to_owned(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            neutral: w.clone(),
            anti: w.clone(),
            pro: w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub n_records: usize,
    /// Probability that a record's text contains its class token.
    pub text_signal_strength: f64,
    pub desc_signal_strength: f64,
    /// Probability that a record's offline attributes are drawn from the
    /// class-conditional weights instead of the neutral ones.
    pub offline_signal_strength: f64,
    /// When set, each record carries at most one kind of signal: the three
    /// strengths become the probabilities of a single categorical draw and
    /// must sum to at most 1.
    pub exclusive_carriers: bool,
    /// One entry per offline feature, in schema order.
    pub offline_signal: Vec<OfflineSignal>,
    /// Probability of the Pro class.
    pub class_balance: f64,
    /// Timestamps are uniform over `[start, end)`.
    pub time_range: (i64, i64),
    pub seed: u64,
}

fn uniform_offline() -> Vec<OfflineSignal> {
    vec![
        OfflineSignal::uniform("state", &STATES),
        OfflineSignal::uniform("race", &RACES),
        OfflineSignal::uniform("race_pic", &RACES),
        OfflineSignal::uniform("gender", &GENDERS),
    ]
}

impl SignalSpec {
    /// No signal in any modality, uniform offline attributes.
    pub fn null(n_records: usize, seed: u64) -> Self {
        SignalSpec {
            n_records,
            text_signal_strength: 0.0,
            desc_signal_strength: 0.0,
            offline_signal_strength: 0.0,
            exclusive_carriers: false,
            offline_signal: uniform_offline(),
            class_balance: 0.5,
            time_range: (1_609_459_200, 1_640_995_200),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        for (name, p) in [
            ("text_signal_strength", self.text_signal_strength),
            ("desc_signal_strength", self.desc_signal_strength),
            ("offline_signal_strength", self.offline_signal_strength),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        let total = self.text_signal_strength + self.desc_signal_strength + self.offline_signal_strength;
        if self.exclusive_carriers && total > 1.0 + 1e-12 {
            return bad(format!("exclusive carrier probabilities sum to {total}"));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return bad(format!("class_balance = {} must lie in (0, 1)", self.class_balance));
        }
        if self.time_range.0 >= self.time_range.1 {
            return bad(format!("empty time range {:?}", self.time_range));
        }
        let names: Vec<&str> = self.offline_signal.iter().map(|o| o.feature.as_str()).collect();
        if names != OFFLINE_FEATURES {
            return bad(format!("offline signal must cover {OFFLINE_FEATURES:?} in order, got {names:?}"));
        }
        for o in &self.offline_signal {
            for w in [&o.neutral, &o.anti, &o.pro] {
                if w.len() != o.categories.len() || w.iter().any(|v| !(*v >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
                    return bad(format!("weights for {} must be non-negative, sum positive, one per category", o.feature));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<CategoricalSchema> {
        let features = self
            .offline_signal
            .iter()
            .map(|o| CategoricalFeature {
                name: o.feature.clone(),
                categories: o.categories.clone(),
                unknown_policy: UnknownPolicy::ExtraSlot,
            })
            .collect();
        Ok(CategoricalSchema::new(features)?)
    }
}

/// The canonical fusion regime: text carries the class on 60% of records,
/// the state attribute on a disjoint 25%, and the remaining 15% carry
/// nothing. Bayes accuracies: offline-only 0.625, online-only 0.80,
/// hybrid 0.925.
pub fn planted_fusion_spec() -> SignalSpec {
    let n = STATES.len();
    let (anti_states, pro_states) = (0..5, 5..10);
    let pick = |range: std::ops::Range<usize>| (0..n).map(|i| if range.contains(&i) { 1.0 } else { 0.0 }).collect();
    let neutral = (0..n).map(|i| if i >= 10 { 1.0 } else { 0.0 }).collect();
    let mut offline = uniform_offline();
    offline[0] = OfflineSignal {
        feature: "state".into(),
        categories: STATES.iter().map(|s| s.to_string()).collect(),
        neutral,
        anti: pick(anti_states),
        pro: pick(pro_states),
    };
    SignalSpec {
        n_records: 4000,
        text_signal_strength: 0.60,
        desc_signal_strength: 0.0,
        offline_signal_strength: 0.25,
        exclusive_carriers: true,
        offline_signal: offline,
        ..SignalSpec::null(4000, 2021)
    }
}

#[derive(Clone, Copy, Default)]
struct Carriers {
    text: bool,
    desc: bool,
    offline: bool,
}

fn draw_carriers<R: Rng>(spec: &SignalSpec, rng: &mut R) -> Carriers {
    if spec.exclusive_carriers {
        let u: f64 = rng.gen();
        let (t, d) = (spec.text_signal_strength, spec.desc_signal_strength);
        Carriers { text: u < t, desc: u >= t && u < t + d, offline: u >= t + d && u < t + d + spec.offline_signal_strength }
    } else {
        Carriers {
            text: rng.gen_bool(spec.text_signal_strength),
            desc: rng.gen_bool(spec.desc_signal_strength),
            offline: rng.gen_bool(spec.offline_signal_strength),
        }
    }
}

fn sentence<R: Rng>(rng: &mut R, words: &[&str], len: std::ops::RangeInclusive<usize>, token: Option<&str>) -> Vec<String> {
    let n = rng.gen_range(len);
    let mut out: Vec<String> = (0..n).map(|_| words[rng.gen_range(0..words.len())].to_owned()).collect();
    if let Some(t) = token {
        let at = rng.gen_range(0..=out.len());
        out.insert(at, t.to_owned());
    }
    out
}

/// Deterministic corpus drawn from `spec`.
pub fn generate(spec: &SignalSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let samplers: Vec<[WeightedIndex<f64>; 3]> = spec
        .offline_signal
        .iter()
        .map(|o| {
            let w = |ws: &[f64]| WeightedIndex::new(ws.to_vec()).expect("weights validated");
            [w(&o.neutral), w(&o.anti), w(&o.pro)]
        })
        .collect();
    let (start, end) = spec.time_range;

    let mut posts = Vec::with_capacity(spec.n_records);
    for i in 0..spec.n_records {
        let label = if rng.gen_bool(spec.class_balance) { StanceLabel::Pro } else { StanceLabel::Anti };
        let carriers = draw_carriers(spec, &mut rng);
        let mut words = sentence(&mut rng, &FILLER, 4..=10, carriers.text.then(|| TEXT_TOKENS[label.index()]));
        if rng.gen_bool(0.3) {
            words.push(HASHTAGS[rng.gen_range(0..HASHTAGS.len())].to_owned());
        }
        if rng.gen_bool(0.15) {
            words.push(format!("https://t.co/{:06x}", rng.gen_range(0..0xFF_FFFF)));
        }
        let bio = sentence(&mut rng, &BIO_FILLER, 2..=6, carriers.desc.then(|| DESC_TOKENS[label.index()]));
        let which = if carriers.offline { 1 + label.index() } else { 0 };
        let cats: Vec<String> =
            spec.offline_signal.iter().zip(&samplers).map(|(o, s)| o.categories[s[which].sample(&mut rng)].clone()).collect();
        posts.push(RawPost {
            id: format!("syn-{i:06}"),
            timestamp: rng.gen_range(start..end),
            text: words.join(" "),
            description: bio.join(" "),
            state: cats[0].clone(),
            race: cats[1].clone(),
            race_pic: cats[2].clone(),
            gender: cats[3].clone(),
            label,
        });
    }
    Ok(Corpus::new(posts, spec.schema()?, format!("synth:seed={}", spec.seed))?)
}
