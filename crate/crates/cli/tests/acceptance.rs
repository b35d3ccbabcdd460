//! Acceptance suite. Each test covers one numbered criterion end to end and
//! prints a `[criterion N] PASS` line (visible with `--nocapture`); a failed
//! assertion is the FAIL line. Criteria touching the executable go through
//! the built binary; scoring arithmetic runs in-process.

mod support;

use std::collections::BTreeMap;
use std::time::Instant;

use todeval::harness::{render_report, run_ablation, EvalMode, EvalResources, ReportFormat, RunConfig, Subtask};
use todeval::lang::Language;
use todeval::metrics::{adjusted_accuracy, bleu, bleu_breakdown, em_dst, MetricsReport};
use todeval::prompts::{render_naive_dst, PromptContext, TemplateSet};
use todeval::provider::{MockBackend, MockScript, Provider};
use todeval::state::{parse_state, serialize_state, DialogueState, ParserConfig};

use support::{fixtures, read, run_cli, HttpStub};

fn pass(n: u32, what: &str) {
    println!("[criterion {n}] PASS — {what}");
}

// ---------------------------------------------------------------------------
// 1. Golden pipeline run: byte-identical reports across runs and worker
//    counts {1, 4, 8}, each run under 5 seconds.
// ---------------------------------------------------------------------------
#[test]
fn criterion_1_golden_run_determinism() {
    let script = fixtures().join("scripts/main.json");
    let mut outputs: Vec<(String, String, String, String)> = Vec::new();
    for workers in ["1", "4", "8"] {
        let out = tempfile::tempdir().unwrap();
        let out_path = out.path().to_str().unwrap().to_string();
        let started = Instant::now();
        let result = run_cli(
            &[
                "--provider", "mock",
                "--script", script.to_str().unwrap(),
                "--workers", workers,
                "--out", &out_path,
            ],
            &[],
        );
        let elapsed = started.elapsed();
        assert!(result.status.success(), "run failed: {}", String::from_utf8_lossy(&result.stderr));
        assert!(elapsed.as_secs_f64() < 5.0, "run took {elapsed:?}, budget is 5 s");
        outputs.push((
            read(&out.path().join("report.md")),
            read(&out.path().join("report.csv")),
            read(&out.path().join("report.json")),
            read(&out.path().join("results.ndrec")),
        ));
    }
    assert_eq!(outputs[0], outputs[1], "workers 1 vs 4 differ");
    assert_eq!(outputs[1], outputs[2], "workers 4 vs 8 differ");

    let golden = read(&fixtures().join("goldens/report.md"));
    assert_eq!(outputs[0].0, golden, "report drifted from the committed golden");

    // hand-scored fixture values
    let reports: Vec<MetricsReport> = serde_json::from_str(&outputs[0].2).unwrap();
    let en = reports.iter().find(|r| r.language == Language::En).unwrap();
    assert_eq!(en.n_turns, 14);
    assert!((en.dst_acc.unwrap() - 100.0 * 10.0 / 14.0).abs() < 1e-9);
    assert!((en.api_acc.unwrap() - 100.0 * 13.0 / 14.0).abs() < 1e-9);
    assert!((en.da_acc.unwrap() - 100.0 * 13.0 / 14.0).abs() < 1e-9);
    let zh = reports.iter().find(|r| r.language == Language::Zh).unwrap();
    assert_eq!((zh.n_turns, zh.dst_acc), (6, Some(100.0)));

    pass(1, "byte-identical golden report across 3 runs and workers {1,4,8}, < 5 s each");
}

// ---------------------------------------------------------------------------
// 2. Appendix prompt fidelity: rendered prompts match the stored goldens and
//    carry the verbatim reference lines.
// ---------------------------------------------------------------------------
#[test]
fn criterion_2_prompt_fidelity() {
    let resources = EvalResources::load(
        &fixtures().join("ontology"),
        &fixtures().join("banks"),
        &[Language::En],
        ParserConfig::default(),
        TemplateSet::bundled(),
    )
    .unwrap();
    let en = resources.by_language.get(&Language::En).unwrap();
    let ctx = PromptContext {
        language: Language::En,
        state: "null".to_string(),
        prev_acts: vec![],
        user_utterance: "Hi, can you recommend some fascinating Japanese TV shows?".to_string(),
        api_result: None,
    };

    let dsel = todeval::prompts::render_domain_selection(&ctx, &en.bank, &en.ontology, &resources.templates).unwrap();
    assert_eq!(dsel, read(&fixtures().join("goldens/prompts/domain_selection_tv.txt")));
    assert!(dsel.contains("Domain(s): tv"));
    assert!(dsel.contains("movie, tv, attraction, retaurant, car, hotel, hospital, weather, flight, pc, train, class"));
    assert!(dsel.contains("Domain(s): movie, tv"));

    let sgen = todeval::prompts::render_state_generation(
        &ctx, &["tv".to_string()], &en.ontology, &en.bank, &resources.templates,
    )
    .unwrap();
    assert_eq!(sgen, read(&fixtures().join("goldens/prompts/state_generation_tv.txt")));
    assert!(sgen.contains("( tv ) production_country_or_area equal_to \" Japanese TV show \""));

    let raw = "( tv ) production_country_or_area equal_to \" Japanese TV show \"";
    let norm = todeval::prompts::render_normalization(
        raw, &["tv".to_string()], &en.ontology, &en.bank, &resources.templates, &resources.parser,
    )
    .unwrap();
    let todeval::prompts::NormalizationPrompt::Prompt(norm) = norm else {
        panic!("expected a normalization prompt");
    };
    assert_eq!(norm, read(&fixtures().join("goldens/prompts/normalization_tv.txt")));
    assert!(norm.contains("( tv ) production_country_or_area equal_to \" United States \""));
    assert!(norm.contains("( tv ) production_country_or_area equal_to \" America \""));

    pass(2, "domain-selection, state-generation and normalization prompts match goldens with verbatim reference lines");
}

// ---------------------------------------------------------------------------
// 3. Cumulative adjusted accuracy reproduces all six published language
//    columns within ±0.1.
// ---------------------------------------------------------------------------
#[test]
fn criterion_3_adjusted_accuracy_columns() {
    let columns: [(&str, f64, [f64; 3], [f64; 3]); 6] = [
        ("Chinese", 80.3, [0.0, 4.0, 11.9], [80.3, 84.3, 96.2]),
        ("English", 74.9, [4.4, 9.3, 8.3], [79.3, 88.6, 96.8]),
        ("French", 66.5, [4.5, 12.8, 6.5], [71.0, 83.8, 90.3]),
        ("Hindi", 55.6, [2.5, 20.1, 11.4], [58.1, 78.2, 89.6]),
        ("Korean", 66.2, [2.4, 15.2, 9.8], [68.6, 83.8, 93.6]),
        ("English-Hindi", 62.2, [5.2, 16.5, 8.5], [67.4, 83.9, 92.4]),
    ];
    for (language, base, pcts, expected) in columns {
        let cumulative = adjusted_accuracy(base, &pcts).unwrap();
        for (got, want) in cumulative.iter().zip(expected.iter()) {
            assert!(
                (got - want).abs() <= 0.1 + 1e-12,
                "{language}: got {got:.2}, table says {want}"
            );
        }
    }
    pass(3, "all six cumulative-accuracy columns reproduced within ±0.1");
}

// ---------------------------------------------------------------------------
// 4. Result-table rendering reproduces the reference row formatting exactly.
// ---------------------------------------------------------------------------
#[test]
fn criterion_4_reference_row_formatting() {
    let report = MetricsReport {
        language: Language::En,
        n_turns: 250,
        dst_acc: Some(74.9),
        api_acc: Some(96.0),
        da_acc: Some(61.2),
        rg_bleu: Some(30.6),
        rg_avg_len: Some(13.39),
        mismatch_classes: vec![],
    };
    let text = render_report(&[report], ReportFormat::Markdown);
    assert!(
        text.contains("| 74.9 | 96.0 | 61.2 | 30.6 | 13.39 |"),
        "row cells not rendered exactly:\n{text}"
    );
    assert!(text.contains("DST Acc. | API Acc. | DA Acc. | RG BLEU | RG Avg. Length"));
    pass(4, "74.9 / 96.0 / 61.2 / 30.6 / 13.39 row renders exactly");
}

// ---------------------------------------------------------------------------
// 5. Parser properties at scale: 10,000 round-trips, 1,000 permuted pairs,
//    and canonicalization failure never matching.
// ---------------------------------------------------------------------------

struct Rng(u64);

impl Rng {
    fn next(&mut self) -> u64 {
        // xorshift64
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    fn pick<'a>(&mut self, pool: &[&'a str]) -> &'a str {
        pool[self.below(pool.len())]
    }
}

const DOMAINS: [&str; 6] = ["alpha", "beta", "gamma", "movie", "tv", "attraction"];
const SLOTS: [&str; 6] = ["area", "type", "name", "price_range", "slot_b", "x1"];
const VALUES: [&str; 8] = ["red", "blue 7", "Tokyo", "cheap", "9.1", "east side", "Lucky Seven", "A-1"];

fn random_state(rng: &mut Rng) -> DialogueState {
    let mut state = DialogueState::new();
    for _ in 0..rng.below(4) {
        let domain = rng.pick(&DOMAINS);
        for _ in 0..(1 + rng.below(3)) {
            state.insert(domain, rng.pick(&SLOTS), "equal_to", rng.pick(&VALUES));
        }
    }
    state
}

fn scrambled_surface(state: &DialogueState, rng: &mut Rng) -> String {
    let mut assignments: Vec<_> = state.assignments().collect();
    if assignments.is_empty() {
        return "null".to_string();
    }
    for i in (1..assignments.len()).rev() {
        assignments.swap(i, rng.below(i + 1));
    }
    let ws = ["", " ", "  ", "\n", "\t"];
    let mut out = String::new();
    for (i, a) in assignments.iter().enumerate() {
        if i > 0 {
            out.push_str(rng.pick(&ws));
            out.push(',');
        }
        out.push_str(&format!(
            "{}( {} ){}{} {} {}\"{}{}{}\"",
            rng.pick(&ws), a.domain, rng.pick(&ws), a.slot, a.relation,
            rng.pick(&ws), rng.pick(&ws), a.value, rng.pick(&ws),
        ));
    }
    out
}

#[test]
fn criterion_5_parser_properties_at_scale() {
    let mut rng = Rng(0x5eed_cafe_f00d_0001);
    for case in 0..10_000 {
        let state = random_state(&mut rng);
        let text = serialize_state(&state);
        let parsed = parse_state(&text).unwrap_or_else(|e| panic!("case {case}: {e} in `{text}`"));
        assert_eq!(parsed, state, "case {case} round-trip failed");
    }
    for case in 0..1_000 {
        let state = random_state(&mut rng);
        let scrambled = scrambled_surface(&state, &mut rng);
        let parsed = parse_state(&scrambled)
            .unwrap_or_else(|e| panic!("case {case}: {e} in `{scrambled}`"));
        assert!(
            em_dst(Some(&parsed), &state),
            "case {case}: permuted surface broke exact match"
        );
    }
    for _ in 0..100 {
        let state = random_state(&mut rng);
        assert!(!em_dst(None, &state), "canonicalization failure must never match");
    }
    pass(5, "10,000 round-trips, 1,000 permutation-invariant pairs, failure never matches");
}

// ---------------------------------------------------------------------------
// 6. BLEU oracle: identity 100, disjoint < 0.5, clipped unigram 2/7.
// ---------------------------------------------------------------------------
#[test]
fn criterion_6_bleu_oracle() {
    let corpus: Vec<String> = [
        "the science museum is in the east of the city",
        "tickets cost thirty yuan per person today",
        "yes you can reach it directly by metro",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    assert_eq!(bleu(&corpus, &corpus, Language::En).unwrap(), 100.0);

    let disjoint: Vec<String> = ["alpha beta gamma delta epsilon zeta", "one two three four five six", "red green blue cyan magenta yellow"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let other: Vec<String> = ["tokyo osaka kyoto nara sendai nagoya", "north south east west up down", "cat dog bird fish mouse horse"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let score = bleu(&disjoint, &other, Language::En).unwrap();
    assert!(score < 0.5, "disjoint corpus scored {score}");

    let cands = vec!["the the the the the the the".to_string()];
    let refs = vec!["the cat is on the mat".to_string()];
    let breakdown = bleu_breakdown(&cands, &refs, Language::En).unwrap();
    assert_eq!(breakdown.precisions[0], (2, 7), "clipped unigram precision must be exactly 2/7");

    pass(6, "identity = 100.0, disjoint < 0.5, clipped unigram precision exactly 2/7");
}

// ---------------------------------------------------------------------------
// 7. Ablation wiring: normalization fixes exactly one turn (k = 1), and the
//    naive prompt renders no schema section.
// ---------------------------------------------------------------------------
#[test]
fn criterion_7_ablation_wiring() {
    let resources = EvalResources::load(
        &fixtures().join("ontology"),
        &fixtures().join("banks"),
        &[Language::En, Language::Zh],
        ParserConfig::default(),
        TemplateSet::bundled(),
    )
    .unwrap();
    let turns: Vec<_> = todeval::data::load_turns_strict(
        fixtures().join("turns.ndjson"),
        Some(Language::En),
        &resources.parser,
    )
    .unwrap();
    let n = turns.len() as f64;
    let script = MockScript::load(fixtures().join("scripts/main.json")).unwrap();
    let provider = Provider::new(
        std::sync::Arc::new(MockBackend::new(script)),
        None,
        resources.templates.format_version(),
    );
    let mut config = RunConfig::new("mock-model");
    config.subtasks = [Subtask::Dst].into_iter().collect();
    config.workers = 1;

    let table = run_ablation(
        &turns,
        &resources,
        &provider,
        &config,
        &[EvalMode::Full, EvalMode::NoNorm, EvalMode::DictNorm, EvalMode::Naive],
    )
    .unwrap();
    let cell = |mode: EvalMode| -> f64 {
        table.rows.iter().find(|(m, _)| *m == mode).unwrap().1[0].unwrap()
    };
    let k_over_n = 100.0 * 1.0 / n;
    assert!((cell(EvalMode::Full) - cell(EvalMode::DictNorm) - k_over_n).abs() < 1e-9);
    assert!((cell(EvalMode::Full) - cell(EvalMode::NoNorm) - k_over_n).abs() < 1e-9);

    // the naive prompt carries no schema section
    let en = resources.by_language.get(&Language::En).unwrap();
    let ctx = PromptContext {
        language: Language::En,
        state: "null".to_string(),
        prev_acts: vec![],
        user_utterance: "Hi, can you recommend some fascinating Japanese TV shows?".to_string(),
        api_result: None,
    };
    let naive = render_naive_dst(&ctx, &en.bank, &resources.templates).unwrap();
    assert!(!naive.contains("A list of possible slots"));
    assert!(!naive.contains("tv: title"));
    let hierarchical = todeval::prompts::render_state_generation(
        &ctx, &["tv".to_string()], &en.ontology, &en.bank, &resources.templates,
    )
    .unwrap();
    assert!(hierarchical.contains("tv: title"));

    pass(7, "full = dict_norm + k/n = no_norm + k/n with k = 1, and the naive prompt has no schema section");
}

// ---------------------------------------------------------------------------
// 8. Cache contract through the HTTP provider: a second identical run makes
//    zero backend calls, and cache-on equals cache-off.
// ---------------------------------------------------------------------------
#[test]
fn criterion_8_cache_contract_over_http() {
    let script = MockScript::load(fixtures().join("scripts/main.json")).unwrap();
    let stub = HttpStub::start(script);
    let cache = tempfile::tempdir().unwrap();
    let envs = [
        ("TODEVAL_API_BASE", stub.base_url()),
        ("NO_PROXY", "127.0.0.1".to_string()),
        ("no_proxy", "127.0.0.1".to_string()),
    ];
    let envs: Vec<(&str, &str)> = envs.iter().map(|(k, v)| (*k, v.as_str())).collect();

    let out1 = tempfile::tempdir().unwrap();
    let result = run_cli(
        &[
            "--provider", "http",
            "--cache-dir", cache.path().to_str().unwrap(),
            "--workers", "2",
            "--out", out1.path().to_str().unwrap(),
        ],
        &envs,
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let first_hits = stub.hits();
    assert!(first_hits > 0, "first run should contact the backend");

    let out2 = tempfile::tempdir().unwrap();
    let result = run_cli(
        &[
            "--provider", "http",
            "--cache-dir", cache.path().to_str().unwrap(),
            "--workers", "2",
            "--out", out2.path().to_str().unwrap(),
        ],
        &envs,
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert_eq!(stub.hits(), first_hits, "second run must perform 0 backend calls");

    // cache-off run produces the identical report
    let out3 = tempfile::tempdir().unwrap();
    let result = run_cli(
        &[
            "--provider", "http",
            "--workers", "2",
            "--out", out3.path().to_str().unwrap(),
        ],
        &envs,
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert_eq!(
        read(&out1.path().join("report.md")),
        read(&out3.path().join("report.md")),
        "cache-on and cache-off reports differ"
    );
    assert_eq!(
        read(&out1.path().join("report.md")),
        read(&fixtures().join("goldens/report.md")),
        "HTTP-backed run drifted from the golden report"
    );

    pass(8, "warm cache: 0 backend calls on the second run; cache-on equals cache-off");
}

// ---------------------------------------------------------------------------
// 9. Error containment: one unparseable mock response among 20 turns still
//    exits 0 with n_turns = 20 and exactly one DST mismatch, classified
//    PostProcessing.
// ---------------------------------------------------------------------------
#[test]
fn criterion_9_error_containment() {
    let script = fixtures().join("scripts/one_bad_turn.json");
    let out = tempfile::tempdir().unwrap();
    let result = run_cli(
        &[
            "--provider", "mock",
            "--script", script.to_str().unwrap(),
            "--subtasks", "dst",
            "--workers", "4",
            "--out", out.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(result.status.success(), "run must exit 0: {}", String::from_utf8_lossy(&result.stderr));

    let reports: Vec<MetricsReport> = serde_json::from_str(&read(&out.path().join("report.json"))).unwrap();
    let total: usize = reports.iter().map(|r| r.n_turns).sum();
    assert_eq!(total, 20);

    let mismatches = read(&out.path().join("mismatches.tsv"));
    let rows: Vec<&str> = mismatches.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
    assert_eq!(rows.len(), 1, "expected exactly one mismatch, got:\n{mismatches}");
    assert!(rows[0].contains("PostProcessing"), "mismatch not classified PostProcessing: {}", rows[0]);
    assert!(rows[0].starts_with("en-001:0\t"));

    let class_counts: BTreeMap<String, usize> = reports
        .iter()
        .flat_map(|r| r.mismatch_classes.iter())
        .map(|(class, n)| (format!("{class:?}"), *n))
        .collect();
    assert_eq!(class_counts.get("PostProcessing"), Some(&1));

    pass(9, "1 unparseable response among 20 turns: exit 0, n_turns = 20, exactly 1 PostProcessing mismatch");
}
