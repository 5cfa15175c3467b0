use efllm::agent::*;
use efllm::data::{generate, guidance_bank, transition_text, Dataset, Scenario, ScenarioSpec, Weather};
use efllm::forecast::{render_answer, step1_prompt, step2_prompt, Forecaster};
use efllm::model::{Model, ModelConfig};
use efllm::pipeline::build_vocab;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WEATHER: [Weather; 5] = [
    Weather::Clear,
    Weather::Cloudy,
    Weather::Overcast,
    Weather::LightRain,
    Weather::HeavyRain,
];

/// Every prompt/answer shape the forecasting side produces. None of them
/// should fire a function.
fn forecasting_corpus() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for s in Scenario::ALL {
        for h in 0..24 {
            let p1 = step1_prompt(s.name(), h);
            let a1 = render_answer((h as usize * 4) % 101, h as f64 * 13.37, s.unit());
            for a in WEATHER {
                for b in WEATHER {
                    let w = if a == b { a.text().to_string() } else { transition_text(a, b) };
                    out.push((step2_prompt(&p1, &a1, &w), a1.clone()));
                }
            }
            out.push((p1, a1));
        }
        out.extend(guidance_bank(s, s.default_capacity()));
    }
    out
}

#[test]
fn forecasting_prompts_never_trigger() {
    let reg = Registry::builtin();
    let corpus = forecasting_corpus();
    assert!(corpus.len() >= 3 * 24 * 26);
    let fired: Vec<_> = corpus
        .iter()
        .filter(|(p, a)| !matches!(detect_trigger(p, a, &reg), Ok(None)))
        .collect();
    assert!(fired.is_empty(), "{} of {} fired, e.g. {:?}", fired.len(), corpus.len(), fired.first());
}

#[test]
fn every_handler_fires_on_its_own_prompts() {
    let reg = Registry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for h in HANDLERS {
        for _ in 0..25 {
            let p = sample_prompt(h, &mut rng);
            let t = detect_trigger(&p, "", &reg).unwrap().unwrap_or_else(|| panic!("no trigger for {p:?}"));
            assert_eq!(t.handler, h, "{p:?}");
        }
    }
}

#[test]
fn trigger_detection_is_deterministic() {
    let reg = Registry::builtin();
    let p = "what is the reserve margin for forecasts 10.00 20.50 with capacity 100.00";
    let a = detect_trigger(p, "", &reg).unwrap();
    for _ in 0..10 {
        assert_eq!(detect_trigger(p, "", &reg).unwrap(), a);
    }
}

fn untrained() -> (Model, efllm::text::Vocabulary) {
    let vocab = build_vocab(&[], 1).unwrap();
    let cfg = ModelConfig {
        d_model: 16,
        d_ff: 32,
        key_dim: 16,
        heads: 2,
        layers: 1,
        vocab_size: vocab.len(),
        ..Default::default()
    };
    (Model::init(cfg, 1).unwrap(), vocab)
}

fn agent<'a>(m: &'a Model, vocab: &'a efllm::text::Vocabulary, reg: &'a Registry, root: &std::path::Path) -> Agent<'a> {
    let mut forecaster = Forecaster::new(m, vocab);
    forecaster.max_new = 12;
    Agent {
        forecaster,
        registry: reg,
        root: root.to_path_buf(),
    }
}

#[test]
fn no_trigger_keeps_first_response() {
    let (m, vocab) = untrained();
    let reg = Registry::builtin();
    let agent = agent(&m, &vocab, &reg, std::path::Path::new("."));
    let turn = agent.respond("predict pv power for hour 4").unwrap();
    assert!(turn.function.is_none());
    assert_eq!(turn.final_response, turn.first);
    assert!(!turn.conforming());
}

#[test]
fn fired_turn_carries_result_verbatim_in_second_prompt() {
    let (m, vocab) = untrained();
    let reg = Registry::builtin();
    let agent = agent(&m, &vocab, &reg, std::path::Path::new("."));
    let turn = agent
        .respond("what is the total energy of forecasts 1.25 2.50 with step 1")
        .unwrap();
    assert_eq!(turn.function.as_deref(), Some("energy_sum"));
    let result = turn.result.clone().expect("executed");
    assert!(result.contains("3.75"));
    assert!(turn.second_prompt.unwrap().ends_with(&format!("{RESULT_MARKER} {result}")));
    // An untrained model rarely emits the slot, which must flag the turn
    // rather than pass off generated text as the answer.
    assert!(turn.flagged || turn.final_response.ends_with(&result));
}

#[test]
fn file_handlers_read_relative_to_root() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&ScenarioSpec::new(Scenario::Wind, 3, 2)).unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    let (m, vocab) = untrained();
    let reg = Registry::builtin();
    let agent = agent(&m, &vocab, &reg, dir.path());
    let turn = agent.respond("please do feature engineering on dataset.csv").unwrap();
    assert_eq!(turn.function.as_deref(), Some("feature_engineering"));
    let expected = fn_feature_engineering(&back).unwrap().summary;
    assert_eq!(turn.result.as_deref(), Some(expected.as_str()));

    let missing = agent.respond("please do feature engineering on nowhere.csv").unwrap();
    assert!(missing.flagged);
    assert!(missing.result.is_none());
}
