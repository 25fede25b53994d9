//! Seeded synthetic corpus: sentences built from a small multi-character
//! vocabulary over pseudo-characters, with typed entity words announced by
//! per-type trigger words.
//!
//! Part of every type's entity words is held out of the training split, so
//! a tagger can only delimit those through the lexicon, which lists the
//! whole vocabulary plus distractor strings that straddle word boundaries.
//! Particles are single characters outside the word alphabet, so no lexicon
//! entry ever covers them.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::nn::ModelRng;

const FIRST_CHAR: u32 = 0x4E00;
const TYPE_NAMES: [&str; 3] = ["PER", "LOC", "ORG"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub alphabet: usize,
    pub entity_types: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// share of each type's entity words that never occur in training
    pub unseen_fraction: f64,
    /// lexicon entries that are not vocabulary words
    pub distractors: usize,
    /// probability that the next segment is a trigger followed by an entity
    pub entity_rate: f64,
    /// reserved single characters that occur in no word
    pub particles: usize,
    /// probability that a particle follows a segment
    pub particle_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            alphabet: 40,
            entity_types: 3,
            vocab: 120,
            min_len: 5,
            max_len: 40,
            train: 200,
            dev: 100,
            test: 100,
            unseen_fraction: 0.15,
            distractors: 40,
            entity_rate: 0.35,
            particles: 4,
            particle_rate: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub lexicon: Vec<String>,
}

fn type_name(t: usize) -> String {
    TYPE_NAMES.get(t).map_or_else(|| format!("T{t}"), |s| s.to_string())
}

struct Inventory {
    triggers: Vec<Vec<Vec<char>>>,
    seen: Vec<Vec<Vec<char>>>,
    unseen: Vec<Vec<Vec<char>>>,
    fillers: Vec<Vec<char>>,
    particles: Vec<char>,
}

#[derive(Clone, Copy, PartialEq)]
enum Split {
    Train,
    Held,
}

fn sentence(inv: &Inventory, cfg: &SynthConfig, split: Split, rng: &mut ModelRng) -> (Vec<char>, Vec<String>) {
    loop {
        let target = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut chars = Vec::new();
        let mut tags = Vec::new();
        while chars.len() < target {
            if rng.random::<f64>() < cfg.entity_rate {
                let t = rng.random_range(0..cfg.entity_types);
                let trig = inv.triggers[t].choose(rng).expect("triggers");
                chars.extend(trig);
                tags.extend(std::iter::repeat_n("O".to_string(), trig.len()));
                let (seen, unseen) = (&inv.seen[t], &inv.unseen[t]);
                let word = match split {
                    Split::Train => seen.choose(rng).expect("entity words"),
                    Split::Held => {
                        let k = rng.random_range(0..seen.len() + unseen.len());
                        seen.get(k).unwrap_or_else(|| &unseen[k - seen.len()])
                    }
                };
                let kind = type_name(t);
                for k in 0..word.len() {
                    let prefix = match k {
                        0 => "B",
                        _ if k + 1 == word.len() => "E",
                        _ => "M",
                    };
                    tags.push(format!("{prefix}-{kind}"));
                }
                chars.extend(word);
            } else {
                let w = inv.fillers.choose(rng).expect("fillers");
                chars.extend(w);
                tags.extend(std::iter::repeat_n("O".to_string(), w.len()));
            }
            if !inv.particles.is_empty() && rng.random::<f64>() < cfg.particle_rate {
                chars.push(*inv.particles.choose(rng).expect("particles"));
                tags.push("O".to_string());
            }
        }
        if (cfg.min_len..=cfg.max_len).contains(&chars.len()) {
            return (chars, tags);
        }
    }
}

/// Generates the three splits and the lexicon. Identical configs give
/// identical output.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.entity_types == 0 || cfg.alphabet < cfg.entity_types {
        return Err(Error::Config(format!(
            "alphabet of {} cannot carry {} entity types",
            cfg.alphabet, cfg.entity_types
        )));
    }
    // two triggers, two seen entity words and one filler per type at least
    if cfg.vocab < 5 * cfg.entity_types + 1 {
        return Err(Error::Config(format!(
            "vocabulary of {} too small for {} entity types",
            cfg.vocab, cfg.entity_types
        )));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.max_len < 4 {
        return Err(Error::Config(format!(
            "invalid sentence length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    if ![cfg.unseen_fraction, cfg.entity_rate, cfg.particle_rate]
        .iter()
        .all(|f| (0.0..1.0).contains(f))
    {
        return Err(Error::Config("fractions must lie in [0, 1)".into()));
    }
    let capacity: usize = (2..=4).map(|l| cfg.alphabet.saturating_pow(l as u32)).sum();
    if capacity < cfg.vocab + cfg.distractors {
        return Err(Error::Config(format!(
            "alphabet of {} cannot supply {} distinct words",
            cfg.alphabet,
            cfg.vocab + cfg.distractors
        )));
    }
    let mut rng = ModelRng::seed_from_u64(cfg.seed);
    let alphabet: Vec<char> = (0..cfg.alphabet as u32)
        .map(|k| char::from_u32(FIRST_CHAR + k).expect("CJK block"))
        .collect();
    let mut seen_words: HashSet<Vec<char>> = HashSet::new();
    let fresh = |rng: &mut ModelRng, seen: &mut HashSet<Vec<char>>| loop {
        let len = rng.random_range(2..=4);
        let w: Vec<char> = (0..len).map(|_| *alphabet.choose(rng).expect("alphabet")).collect();
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let vocab: Vec<Vec<char>> = (0..cfg.vocab).map(|_| fresh(&mut rng, &mut seen_words)).collect();

    let types = cfg.entity_types;
    let mut it = vocab.iter().cloned();
    let triggers: Vec<Vec<Vec<char>>> = (0..types).map(|_| it.by_ref().take(2).collect()).collect();
    let per_type = (cfg.vocab - 2 * types) / 2 / types;
    let mut seen = Vec::with_capacity(types);
    let mut unseen = Vec::with_capacity(types);
    for _ in 0..types {
        let words: Vec<Vec<char>> = it.by_ref().take(per_type.max(2)).collect();
        let held = ((words.len() as f64 * cfg.unseen_fraction).round() as usize).min(words.len() - 1);
        unseen.push(words[..held].to_vec());
        seen.push(words[held..].to_vec());
    }
    let fillers: Vec<Vec<char>> = it.collect();
    let particles = (0..cfg.particles as u32)
        .map(|k| char::from_u32(FIRST_CHAR + cfg.alphabet as u32 + k).expect("CJK block"))
        .collect();
    let inv = Inventory {
        triggers,
        seen,
        unseen,
        fillers,
        particles,
    };

    let mut texts: HashSet<Vec<char>> = HashSet::new();
    let mut make = |count: usize, split: Split, rng: &mut ModelRng| -> Result<Vec<Sentence>> {
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count {
            attempts += 1;
            if attempts > 100 * count + 1000 {
                return Err(Error::Config("could not generate enough distinct sentences".into()));
            }
            let (chars, tags) = sentence(&inv, cfg, split, rng);
            if texts.insert(chars.clone()) {
                out.push(Sentence::new(out.len(), chars, Some(tags))?);
            }
        }
        Ok(out)
    };
    let train = make(cfg.train, Split::Train, &mut rng)?;
    let dev = make(cfg.dev, Split::Held, &mut rng)?;
    let test = make(cfg.test, Split::Held, &mut rng)?;

    // distractors join the tail of one word to the head of another
    let mut lexicon: Vec<String> = vocab.iter().map(|w| w.iter().collect()).collect();
    let mut extra = 0;
    let mut tries = 0;
    while extra < cfg.distractors && tries < 100 * (cfg.distractors + 1) {
        tries += 1;
        let a = vocab.choose(&mut rng).expect("vocab");
        let b = vocab.choose(&mut rng).expect("vocab");
        let ta = rng.random_range(1..=a.len().min(2));
        let hb = rng.random_range(1..=b.len().min(2));
        let w: Vec<char> = a[a.len() - ta..].iter().chain(&b[..hb]).copied().collect();
        if seen_words.insert(w.clone()) {
            lexicon.push(w.iter().collect());
            extra += 1;
        }
    }
    Ok(SynthCorpus {
        train,
        dev,
        test,
        lexicon,
    })
}
