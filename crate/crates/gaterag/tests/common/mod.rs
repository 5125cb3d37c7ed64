//! Shared fixture corpus and provider scripts for integration tests: three
//! small documents forming two causally linked clusters (power grid,
//! hospital) and one unrelated cluster (bakery), with scripted extraction,
//! summarization, gate verification, selection and generation responses.

use gaterag::pipeline::MockScript;
use gaterag::provider::MockRule;

pub const GRID_DOC: &str = "A severe ice storm swept the northern district on Friday night. \
Falling branches snapped three transmission lines along the river road. The damaged \
transmission lines triggered a regional power outage that lasted fourteen hours.";

pub const HOSPITAL_DOC: &str = "Mercy Hospital lost grid power during the regional blackout. \
The backup generator at Mercy Hospital failed after two hours of continuous load. Staff \
postponed all scheduled surgeries until the following morning.";

pub const BAKERY_DOC: &str = "The riverside bakery celebrated its tenth anniversary with a \
sourdough festival. Local bakers demonstrated lamination techniques for croissant dough. The \
festival raised funds for the community kitchen.";

pub fn fixture_corpus() -> Vec<(String, String)> {
    vec![
        ("bakery".to_string(), BAKERY_DOC.to_string()),
        ("grid".to_string(), GRID_DOC.to_string()),
        ("hospital".to_string(), HOSPITAL_DOC.to_string()),
    ]
}

const GRID_EXTRACTION: &str = r#"("entity"|Ice Storm|event|Severe winter storm over the northern district)
("entity"|Transmission Lines|infrastructure|High voltage lines along the river road)
("entity"|Power Outage|event|Fourteen hour regional loss of electricity)
("relationship"|Ice Storm|Transmission Lines|falling branches snapped the lines|9)
("relationship"|Transmission Lines|Power Outage|damaged lines triggered the outage|9)"#;

const HOSPITAL_EXTRACTION: &str = r#"("entity"|Mercy Hospital|organization|Regional hospital that lost grid power)
("entity"|Backup Generator|equipment|Hospital generator that failed under load)
("entity"|Scheduled Surgeries|event|Operations postponed until morning)
("relationship"|Mercy Hospital|Backup Generator|hospital relied on its generator|7)
("relationship"|Backup Generator|Scheduled Surgeries|generator failure forced postponement|8)"#;

const BAKERY_EXTRACTION: &str = r#"("entity"|Riverside Bakery|organization|Bakery celebrating its tenth anniversary)
("entity"|Sourdough Festival|event|Anniversary baking festival)
("entity"|Community Kitchen|organization|Charity receiving festival funds)
("relationship"|Riverside Bakery|Sourdough Festival|bakery hosted the festival|8)
("relationship"|Sourdough Festival|Community Kitchen|festival raised funds for the kitchen|6)"#;

pub const GRID_SUMMARY: &str =
    "Storm damage to the transmission grid caused a long regional power outage in the northern district.";
pub const HOSPITAL_SUMMARY: &str =
    "Mercy Hospital lost power during a blackout; its backup generator failed and surgeries were postponed.";
pub const BAKERY_SUMMARY: &str =
    "A bakery anniversary festival with baking demonstrations raised money for the community kitchen.";

pub const FIXTURE_QUESTION: &str = "Why were scheduled surgeries postponed at Mercy Hospital?";
pub const FIXTURE_ANSWER: &str = "Scheduled surgeries were postponed because the backup \
generator failed during the power outage caused by the ice storm.";

/// Scripted responses for every model call the fixture pipeline makes.
pub fn fixture_script() -> MockScript {
    MockScript {
        rules: vec![
            // Extraction, keyed on distinctive chunk text.
            MockRule::new(&["-Text-", "ice storm swept"], GRID_EXTRACTION),
            MockRule::new(&["-Text-", "Mercy Hospital lost grid power"], HOSPITAL_EXTRACTION),
            MockRule::new(&["-Text-", "sourdough festival"], BAKERY_EXTRACTION),
            // Module summaries, keyed on member names.
            MockRule::new(&["-Items-", "Ice Storm"], GRID_SUMMARY),
            MockRule::new(&["-Items-", "Mercy Hospital"], HOSPITAL_SUMMARY),
            MockRule::new(&["-Items-", "Riverside Bakery"], BAKERY_SUMMARY),
            // Gate verification: the grid outage causally feeds the hospital
            // cluster; everything else is unrelated.
            MockRule::new(&["Module A", "transmission grid", "backup generator failed"], "forward"),
            MockRule::new(&["Module A"], "none"),
            // Causal selection: keep the top of the gain ordering, tag the
            // third row as spurious.
            MockRule::new(
                &["Evidence table"],
                r#"{"precise": ["N1", "N2", "R1"], "ct_precise": ["N3"]}"#,
            ),
            // Grounded generation.
            MockRule::new(&["Question:", "surgeries postponed"], FIXTURE_ANSWER),
            MockRule::new(
                &["Question:", "no verified evidence"],
                "The corpus does not contain verified evidence for this question.",
            ),
            MockRule::new(&["Question:"], "Answer derived from the provided evidence."),
        ],
        default_response: None,
    }
}

/// Writes the corpus and mock script into a temp directory layout:
/// `corpus/*.txt` and `mock_script.json`.
pub fn write_fixtures(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let corpus_dir = dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir).unwrap();
    for (doc_id, text) in fixture_corpus() {
        std::fs::write(corpus_dir.join(format!("{doc_id}.txt")), text).unwrap();
    }
    let script_path = dir.join("mock_script.json");
    let script = serde_json::to_string_pretty(&fixture_script()).unwrap();
    std::fs::write(&script_path, script).unwrap();
    (corpus_dir, script_path)
}
