//! The 20-question mini fixture: a three-table EHR database, train and
//! valid splits, two hashed bag-of-features embedding files, scripted
//! outputs for three models, and replay caches matching the fixture prompts.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ehrsql::dataset::{answers_to_json, questions_to_json};
use ehrsql::llm::prompt_hash;
use ehrsql::run::{build_prompts, Workspace};
use ehrsql::vector_file::{self, text_key};
use ehrsql::RunConfig;
use ehrsql_core::{Answer, Question, Split, VectorStore};
use rusqlite::Connection;
use sha2::{Digest, Sha256};

pub const MODELS: [&str; 3] = ["gpt4", "ft35", "opus"];

pub fn checked_in() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini")
}

/// Copies the checked-in fixture into a fresh directory.
pub fn mini_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&checked_in(), dir.path());
    dir
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

pub fn file_sha256(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

pub const SCHEMA_SQL: &str = "
CREATE TABLE patients
(
    row_id INT NOT NULL PRIMARY KEY,
    subject_id INT NOT NULL UNIQUE,
    gender VARCHAR(5) NOT NULL,
    dob TIMESTAMP(0) NOT NULL,
    dod TIMESTAMP(0)
);
CREATE TABLE admissions
(
    row_id INT NOT NULL PRIMARY KEY,
    subject_id INT NOT NULL,
    hadm_id INT NOT NULL UNIQUE,
    admittime TIMESTAMP(0) NOT NULL,
    dischtime TIMESTAMP(0),
    admission_type VARCHAR(50) NOT NULL,
    FOREIGN KEY(subject_id) REFERENCES patients(subject_id)
);
CREATE TABLE labevents
(
    row_id INT NOT NULL PRIMARY KEY,
    subject_id INT NOT NULL,
    hadm_id INT NOT NULL,
    itemid INT NOT NULL,
    charttime TIMESTAMP(0),
    valuenum DOUBLE PRECISION,
    valueuom VARCHAR(20),
    FOREIGN KEY(hadm_id) REFERENCES admissions(hadm_id)
);
";

pub const PATIENTS: u32 = 12;
pub const TRAIN_SIZE: usize = 36;
const LABS: [(u32, &str, &str); 3] =
    [(50912, "creatinine", "mg/dL"), (50971, "potassium", "mEq/L"), (51221, "hematocrit", "%")];
const ADMISSION_TYPES: [&str; 3] = ["emergency", "elective", "urgent"];

pub fn subject(i: u32) -> u32 {
    10001 + i
}

/// Creates the fixture database at `path`.
pub fn write_db(path: &Path) {
    let _ = fs::remove_file(path);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fill(&Connection::open(path).unwrap());
}

fn fill(conn: &Connection) {
    conn.execute_batch(SCHEMA_SQL).unwrap();
    let tx = conn.unchecked_transaction().unwrap();
    let mut adm_row = 0;
    let mut lab_row = 0;
    for i in 0..PATIENTS {
        let gender = if i % 3 == 1 { "f" } else { "m" };
        let dob = format!("20{:02}-{:02}-{:02} 00:00:00", 40 + (i * 7) % 50, 1 + i % 12, 1 + (i * 5) % 28);
        let dod: Option<String> = (i % 4 == 3).then(|| format!("2105-0{}-11 00:00:00", 1 + i % 9));
        tx.execute(
            "INSERT INTO patients VALUES (?1, ?2, ?3, ?4, ?5)",
            rusqlite::params![i + 1, subject(i), gender, dob, dod],
        )
        .unwrap();
        for k in 0..(1 + i % 3) {
            adm_row += 1;
            let hadm = 20000 + adm_row;
            let day = 1 + (i * 3 + k * 11) % 27;
            let admit = format!("2100-{:02}-{day:02} 08:00:00", 1 + k * 4 + i % 4);
            let disch = format!("2100-{:02}-{:02} 12:30:00", 1 + k * 4 + i % 4, day + 1);
            let kind = ADMISSION_TYPES[((i + k) % 3) as usize];
            tx.execute(
                "INSERT INTO admissions VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                rusqlite::params![adm_row, subject(i), hadm, admit, disch, kind],
            )
            .unwrap();
            for (j, (itemid, _, uom)) in LABS.iter().enumerate() {
                for m in 0..2u32 {
                    lab_row += 1;
                    let value = match j {
                        0 => 0.6 + f64::from((i * 7 + k * 3 + m) % 9) * 0.15,
                        1 => 3.4 + f64::from((i * 5 + k + m * 2) % 8) * 0.2,
                        _ => 29.5 + f64::from((i * 11 + k * 2 + m) % 13) * 1.1,
                    };
                    let chart = format!("2100-{:02}-{day:02} {:02}:15:00", 1 + k * 4 + i % 4, 9 + m * 6);
                    tx.execute(
                        "INSERT INTO labevents VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                        rusqlite::params![lab_row, subject(i), hadm, itemid, chart, value, uom],
                    )
                    .unwrap();
                }
            }
        }
    }
    tx.commit().unwrap();
}

/// Template `t` instantiated for patient `i`: `(question, gold SQL)`.
pub fn template(t: u32, i: u32) -> (String, String) {
    let s = subject(i);
    let (itemid, lab, _) = LABS[(i % 3) as usize];
    match t % 6 {
        0 => (
            format!("what is the gender of patient {s}?"),
            format!("SELECT gender FROM patients WHERE subject_id = {s}"),
        ),
        1 => (
            format!("how many times was patient {s} admitted to the hospital?"),
            format!("SELECT COUNT(DISTINCT hadm_id) FROM admissions WHERE subject_id = {s}"),
        ),
        2 => (
            format!("what is the date of birth of patient {s}?"),
            format!("SELECT dob FROM patients WHERE subject_id = {s}"),
        ),
        3 => (
            format!("what is the average {lab} value of patient {s}?"),
            format!("SELECT AVG(valuenum) FROM labevents WHERE subject_id = {s} AND itemid = {itemid}"),
        ),
        4 => (
            format!("what was the admission type of the first hospital visit of patient {s}?"),
            format!("SELECT admission_type FROM admissions WHERE subject_id = {s} ORDER BY admittime ASC LIMIT 1"),
        ),
        _ => (
            format!("list the {lab} measurements of patient {s} in hospital visit order."),
            format!("SELECT valuenum FROM labevents WHERE subject_id = {s} AND itemid = {itemid} ORDER BY charttime"),
        ),
    }
}

const UNANSWERABLE: [&str; 8] = [
    "can you tell me the weather forecast for tomorrow?",
    "who is the chief of cardiology at the hospital?",
    "what is the favorite food of patient {s}?",
    "how do i reset my password for the patient portal?",
    "which insurance plan would patient {s} prefer next year?",
    "what will the creatinine value of patient {s} be next month?",
    "what is the phone number of the nurse station?",
    "did patient {s} enjoy the hospital food?",
];

fn unanswerable(k: usize, i: u32) -> String {
    UNANSWERABLE[k % UNANSWERABLE.len()].replace("{s}", &subject(i).to_string())
}

pub struct Split3 {
    pub questions: Vec<Question>,
    pub labels: Vec<(String, Answer)>,
}

fn split(items: Vec<(String, String, Option<String>)>, s: Split) -> Split3 {
    let questions =
        items.iter().map(|(id, text, _)| Question { id: id.clone(), text: text.clone(), split: s }).collect();
    let labels = items.into_iter().map(|(id, _, sql)| (id, sql.map_or(Answer::Null, Answer::Sql))).collect();
    Split3 { questions, labels }
}

/// `count` labeled train questions: every template over the patients, and
/// one unanswerable question in six.
pub fn train_split(count: usize) -> Split3 {
    let mut items = Vec::with_capacity(count);
    let mut k = 0;
    let mut n = 0u32;
    while items.len() < count {
        let id = format!("train_{:03}", items.len() + 1);
        if items.len() % 6 == 5 {
            // vary the wording so every text is distinct
            let text = format!("{} (case {n})", unanswerable(k, n % PATIENTS));
            items.push((id, text, None));
            k += 1;
        } else {
            let (t, i) = train_pair(n);
            let (mut text, sql) = template(t, i);
            if n >= TRAIN_SIZE as u32 {
                text = format!("{text} (again {n})");
            }
            items.push((id, text, Some(sql)));
        }
        n += 1;
    }
    split(items, Split::Train)
}

/// `(template, patient)` of the `n`-th train slot; distinct for `n < 36`.
fn train_pair(n: u32) -> (u32, u32) {
    ((n + n / 6) % 6, (5 * n) % PATIENTS)
}

/// Train `(template, patient)` pairs, in train order.
fn train_pairs(count: usize) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    let mut n = 0u32;
    let mut len = 0;
    while len < count {
        if len % 6 != 5 {
            pairs.push(train_pair(n));
        }
        len += 1;
        n += 1;
    }
    pairs
}

/// The 20 valid questions: 16 answerable, on `(template, patient)` pairs the
/// train split does not use, and 4 unanswerable.
pub fn valid_split() -> Split3 {
    let used = train_pairs(TRAIN_SIZE);
    // c = 6a + b -> (b, 11a + b mod 12) enumerates all 72 pairs once
    let mut fresh = (0..6 * PATIENTS).map(|c| (c % 6, (11 * (c / 6) + c % 6) % PATIENTS)).filter(|p| !used.contains(p));
    let mut items = Vec::new();
    for q in 0..20u32 {
        let id = format!("valid_{:02}", q + 1);
        if q % 5 == 4 {
            items.push((id, unanswerable((q / 5 + 2) as usize, (q + 3) % PATIENTS), None));
        } else {
            let (t, i) = fresh.next().unwrap();
            let (text, sql) = template(t, i);
            items.push((id, text, Some(sql)));
        }
    }
    split(items, Split::Valid)
}

fn rows(conn: &Connection, sql: &str) -> Vec<String> {
    let mut stmt = conn.prepare(sql).unwrap();
    let width = stmt.column_count();
    let rows = stmt
        .query_map([], |r| {
            (0..width).map(|c| r.get_ref(c).map(|v| format!("{v:?}"))).collect::<rusqlite::Result<Vec<_>>>()
        })
        .unwrap();
    rows.map(|r| r.unwrap().join("|")).collect()
}

/// Points `sql` at the first following patient whose result differs.
fn wrong_patient(sql: &str) -> String {
    let conn = Connection::open_in_memory().unwrap();
    fill(&conn);
    let at = sql.find("subject_id = ").unwrap() + "subject_id = ".len();
    let s: u32 = sql[at..at + 5].parse().unwrap();
    let gold = rows(&conn, sql);
    (1..PATIENTS)
        .map(|k| format!("{}{}{}", &sql[..at], subject((s - 10001 + k) % PATIENTS), &sql[at + 5..]))
        .find(|w| rows(&conn, w) != gold)
        .unwrap()
}

/// Scripted raw output of `model` for valid question number `q` (0-based).
///
/// gpt4: wrong on 2 and 11, abstains on 7. ft35: wrong on 5, syntax error
/// on 13, answers unanswerable 9. opus: wrong on 2 (like gpt4) and 10,
/// unknown table on 16, answers unanswerable 14.
pub fn scripted(model: &str, q: u32, gold: &Answer) -> String {
    match (model, gold) {
        ("gpt4", Answer::Sql(sql)) => match q {
            2 | 11 => format!("```sql\n{};\n```", wrong_patient(sql)),
            7 => "null".into(),
            _ => format!("```sql\n{sql};\n```"),
        },
        ("gpt4", Answer::Null) => "null".into(),
        ("ft35", Answer::Sql(sql)) => match q {
            5 => wrong_patient(sql),
            13 => sql.replacen("FROM", "FRM", 1),
            // same result, different text
            _ if sql.contains("COUNT(DISTINCT hadm_id)") => sql.replace("COUNT(DISTINCT hadm_id)", "COUNT(*)"),
            _ => sql.clone(),
        },
        ("ft35", Answer::Null) if q == 9 => "SELECT COUNT(*) FROM patients".into(),
        ("ft35", Answer::Null) => "NULL".into(),
        ("opus", Answer::Sql(sql)) => match q {
            2 | 10 => format!("{};\nThis query looks up the requested value.", wrong_patient(sql)),
            16 => sql.replacen("FROM ", "FROM archived_", 1),
            _ => format!("{sql};\nThis query looks up the requested value."),
        },
        ("opus", Answer::Null) if q == 14 => "SELECT dob FROM patients LIMIT 1".into(),
        ("opus", Answer::Null) => "null".into(),
        _ => unreachable!("unknown model {model}"),
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Signed feature hashing into `dims` buckets.
fn hashed(features: impl Iterator<Item = String>, dims: usize, salt: &str) -> Vec<f64> {
    let mut v = vec![0.0; dims];
    for f in features {
        let h = Sha256::digest(format!("{salt}:{f}").as_bytes());
        let idx = (u16::from_be_bytes([h[0], h[1]]) as usize) % dims;
        v[idx] += if h[2] & 1 == 0 { 1.0 } else { -1.0 };
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

pub fn bow_vector(text: &str) -> Vec<f64> {
    hashed(tokens(text).into_iter(), 32, "bow")
}

pub fn trigram_vector(text: &str) -> Vec<f64> {
    let padded: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
    hashed(padded.windows(3).map(|w| w.iter().collect()), 48, "tri")
}

pub fn vector_files(dir: &Path, texts: &[&str]) {
    for (model, dims, f) in [("bow", 32, bow_vector as fn(&str) -> Vec<f64>), ("trigram", 48, trigram_vector)] {
        let mut store = VectorStore::new(model, dims);
        for t in texts {
            let key = text_key(t);
            if store.get(&key).is_none() {
                store.insert(key, f(t)).unwrap();
            }
        }
        fs::create_dir_all(dir.join("vectors")).unwrap();
        vector_file::write(&store, &dir.join(format!("vectors/{model}.tsv"))).unwrap();
    }
}

pub const CONFIG: &str = r#"seed = 0
parallelism = 4
costs = [0, 5, 10]

[paths]
db = "ehr.sqlite"
train_questions = "train/questions.json"
train_labels = "train/labels.json"
eval_questions = "valid/questions.json"
eval_labels = "valid/labels.json"
eval_split = "valid"
output_dir = "out"

[retrieval]
n = 3

[[retrieval.providers]]
model_id = "bow"
dims = 32
source = "vector_file"
path = "vectors/bow.tsv"

[[retrieval.providers]]
model_id = "trigram"
dims = 48
source = "vector_file"
path = "vectors/trigram.tsv"

[prompt]
with_samples = true
samples_per_column = 1

[[models]]
model_id = "gpt4"
priority = 1
endpoint = { kind = "replay", path = "replay/gpt4.json" }

[[models]]
model_id = "ft35"
priority = 2
endpoint = { kind = "replay", path = "replay/ft35.json" }

[[models]]
model_id = "opus"
priority = 3
endpoint = { kind = "replay", path = "replay/opus.json" }

[ensemble]
rule = "strict"
min_size = 2

[ablation]
model = "gpt4"
"#;

fn write_file(path: &Path, contents: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, contents).unwrap();
}

/// Writes the complete mini fixture into `dir`.
pub fn build_mini(dir: &Path) {
    write_db(&dir.join("ehr.sqlite"));
    let train = train_split(TRAIN_SIZE);
    let valid = valid_split();
    write_file(&dir.join("train/questions.json"), &(questions_to_json(&train.questions) + "\n"));
    write_file(
        &dir.join("train/labels.json"),
        &(answers_to_json(train.labels.iter().map(|(id, a)| (id.as_str(), a))) + "\n"),
    );
    write_file(&dir.join("valid/questions.json"), &(questions_to_json(&valid.questions) + "\n"));
    write_file(
        &dir.join("valid/labels.json"),
        &(answers_to_json(valid.labels.iter().map(|(id, a)| (id.as_str(), a))) + "\n"),
    );
    let texts: Vec<&str> = train.questions.iter().chain(&valid.questions).map(|q| q.text.as_str()).collect();
    vector_files(dir, &texts);

    for model in MODELS {
        let script: BTreeMap<&str, String> = valid
            .labels
            .iter()
            .enumerate()
            .map(|(q, (id, gold))| (id.as_str(), scripted(model, q as u32, gold)))
            .collect();
        write_file(
            &dir.join(format!("scripts/{model}.json")),
            &(serde_json::to_string_pretty(&script).unwrap() + "\n"),
        );
    }
    write_file(&dir.join("config.toml"), CONFIG);
    write_replay(dir);
}

/// Records the scripted outputs under the prompts the fixture config builds.
pub fn write_replay(dir: &Path) {
    let config = RunConfig::load(&dir.join("config.toml")).unwrap();
    let ws = Workspace::load(&config).unwrap();
    let prompts = build_prompts(&config, &ws, &config.retrieval.providers, &config.prompt).unwrap().prompts;
    for model in MODELS {
        let script: BTreeMap<String, String> =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("scripts/{model}.json"))).unwrap()).unwrap();
        let cache: BTreeMap<String, &String> =
            prompts.iter().map(|p| (prompt_hash(&p.text), &script[&p.question_id])).collect();
        write_file(&dir.join(format!("replay/{model}.json")), &(serde_json::to_string_pretty(&cache).unwrap() + "\n"));
    }
}

/// Switches every model of a loaded config to its mock script.
pub fn use_mock_scripts(config: &mut RunConfig, dir: &Path) {
    for m in &mut config.models {
        m.endpoint = ehrsql::llm::Endpoint::Mock {
            script: dir.join(format!("scripts/{}.json", m.model_id)),
            default_output: None,
        };
    }
}

/// The first eval prompt of the checked-in fixture with `n` exemplars.
pub fn fixture_prompt(n: usize) -> String {
    let mut config = RunConfig::load(&checked_in().join("config.toml")).unwrap();
    config.retrieval.n = n;
    let ws = Workspace::load(&config).unwrap();
    build_prompts(&config, &ws, &config.retrieval.providers, &config.prompt).unwrap().prompts.remove(0).text
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}
