//! Generic base corpus and the sentence pool the vocabulary is built from.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{first_reply, sample_prompt, second_reply, HANDLERS, RESULT_MARKER, SLOT_TEXT};
use crate::data::{guidance_bank, transition_text, Scenario, Weather};
use crate::forecast::{format_value, render_answer, step1_prompt, step2_prompt};

const ALL_WEATHER: [Weather; 5] = [
    Weather::Clear,
    Weather::Cloudy,
    Weather::Overcast,
    Weather::LightRain,
    Weather::HeavyRain,
];

fn weather_phrase(rng: &mut ChaCha8Rng) -> String {
    let a = *ALL_WEATHER.choose(rng).expect("non-empty");
    if rng.random::<f64>() < 0.5 {
        return a.text().to_string();
    }
    let b = *ALL_WEATHER.iter().filter(|w| **w != a).collect::<Vec<_>>().choose(rng).expect("non-empty");
    transition_text(a, *b)
}

/// `(prompt, continuation)` pairs of generic energy-domain text used to
/// pre-train the base model, including both passes of function-calling
/// dialogues. The answer template never appears here.
pub fn base_corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = Scenario::ALL[rng.random_range(0..3)].name();
        let h = rng.random_range(0..24);
        let v = format_value(rng.random_range(0.0..1000.0));
        let w = weather_phrase(&mut rng);
        let pair = match rng.random_range(0..10) {
            0 => (format!("the {s} output at hour {h}"), format!("was {v} kW")),
            1 => (format!("weather at hour {h}"), format!("is {w}")),
            2 => (
                format!("the weather suggests {w}"),
                format!("so {s} power may change at hour {h}"),
            ),
            3 => {
                let a: u32 = rng.random_range(0..95);
                (format!("count {a} {}", a + 1), format!("{} {} {}", a + 2, a + 3, a + 4))
            }
            4 => (format!("{s} power for hour {h}"), format!("depends on {w} weather")),
            5 => (format!("the class of {v} kW"), format!("is {}", rng.random_range(0..=100))),
            6 => (format!("previous hour was {w}"), format!("and the {s} output was {v} kW")),
            8 | 9 => {
                let h = HANDLERS[rng.random_range(0..HANDLERS.len())];
                let p = sample_prompt(h, &mut rng);
                if rng.random::<bool>() {
                    (p, first_reply(h).to_string())
                } else {
                    (format!("{p} {RESULT_MARKER} {SLOT_TEXT}"), second_reply())
                }
            }
            _ => {
                let (q, a) = guidance_bank(Scenario::ALL[rng.random_range(0..3)], 798.0)
                    .choose(&mut rng)
                    .cloned()
                    .expect("non-empty bank");
                (q, a)
            }
        };
        out.push(pair);
    }
    out
}

/// Every sentence shape the system will tokenize, each at least twice, so that
/// all template words become whole-word tokens.
pub fn template_sentences(extra: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for s in Scenario::ALL {
        for h in [0, 13] {
            let p1 = step1_prompt(s.name(), h);
            let a = render_answer(42, 335.16, s.unit());
            out.push(p1.clone());
            out.push(a.clone());
            for w in ALL_WEATHER {
                out.push(step2_prompt(&p1, &a, w.text()));
                for v in ALL_WEATHER {
                    if v != w {
                        out.push(transition_text(w, v));
                    }
                }
            }
            out.push(step2_prompt(&p1, &a, ""));
        }
        for (q, a) in guidance_bank(s, s.default_capacity()) {
            out.push(q);
            out.push(a);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for h in HANDLERS {
        for _ in 0..4 {
            let p = sample_prompt(h, &mut rng);
            out.push(format!("{p} {}", first_reply(h)));
            out.push(format!("{p} {RESULT_MARKER} {SLOT_TEXT} {}", second_reply()));
        }
    }
    out.extend(extra.iter().cloned());
    let twice = out.clone();
    out.extend(twice);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seeded_and_template_free() {
        let a = base_corpus(200, 3);
        assert_eq!(a, base_corpus(200, 3));
        assert!(a.iter().all(|(p, c)| !p.contains("interval:") && !c.contains("interval:")));
    }
}
