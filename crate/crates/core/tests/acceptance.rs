//! Acceptance runs. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::{schema, synth, synth_with};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdoh_core::corpus::{
    compute_kappa, parse_standoff, serialize_standoff, split_corpus, AnnotatedDoc, Document, EntityAnnotation,
    SplitRatios,
};
use sdoh_core::linker::{train_linker, LinkerConfig};
use sdoh_core::pipeline::{
    aggregate_rates, compare_strategies, evaluate, format_ratio, run_batch, AdaptConfig, LinkedAttribute, Models,
    ModelVersions, RawDocument, SDoHRecord, Strategy,
};
use sdoh_core::scorer::{match_entities, score_concepts, score_relations, EndpointAlignment, Mode};
use sdoh_core::synth::SynthOptions;
use sdoh_core::tagger::{train_tagger, TrainConfig};
use sdoh_core::textproc::{decode_bio, encode_bio, snap_entities, tokenize};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    check(took < limit, format!("took {took:.2?}, limit {limit:?}"))
}

fn standoff_round_trip() -> Outcome {
    let t = Instant::now();
    let s = schema();
    let docs = synth(100, 1001, 0.3);
    for d in &docs {
        let a = serialize_standoff(&d.document, &d.entities, &d.relations).map_err(|e| e.to_string())?;
        let parsed = parse_standoff(d.document.clone(), &a, &s).map_err(|e| e.to_string())?;
        check(&parsed == d, format!("{}: parse(serialize) differs", d.doc_id()))?;
        let b = serialize_standoff(&parsed.document, &parsed.entities, &parsed.relations).map_err(|e| e.to_string())?;
        check(a == b, format!("{}: serialize not byte-identical", d.doc_id()))?;
        let again = parse_standoff(d.document.clone(), &b, &s).map_err(|e| e.to_string())?;
        check(again == parsed, format!("{}: second parse differs", d.doc_id()))?;
    }
    within(Duration::from_secs(5), t)?;
    Ok(format!("100 documents in {:.2?}", t.elapsed()))
}

fn random_entities(rng: &mut ChaCha8Rng, prefix: &str) -> Vec<EntityAnnotation> {
    let n = rng.gen_range(0..=6);
    (0..n)
        .map(|k| {
            let start = rng.gen_range(0..20);
            let end = start + rng.gen_range(1..6);
            EntityAnnotation {
                entity_id: format!("{prefix}{}", k + 1),
                category: ["Tobacco use", "Alcohol use"][rng.gen_range(0..2)].to_string(),
                start,
                end,
                surface: String::new(),
            }
        })
        .collect()
}

fn compatible(g: &EntityAnnotation, p: &EntityAnnotation, mode: Mode) -> bool {
    g.category == p.category
        && match mode {
            Mode::Strict => (g.start, g.end) == (p.start, p.end),
            Mode::Lenient => g.start < p.end && p.start < g.end,
        }
}

/// Largest matching by trying every assignment of gold to predictions.
fn exhaustive_max(gold: &[EntityAnnotation], pred: &[EntityAnnotation], mode: Mode, used: &mut Vec<bool>) -> usize {
    let Some((g, rest)) = gold.split_first() else {
        return 0;
    };
    let mut best = exhaustive_max(rest, pred, mode, used);
    for j in 0..pred.len() {
        if !used[j] && compatible(g, &pred[j], mode) {
            used[j] = true;
            best = best.max(1 + exhaustive_max(rest, pred, mode, used));
            used[j] = false;
        }
    }
    best
}

fn matcher_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let instances = 1500;
    for i in 0..instances {
        let gold = random_entities(&mut rng, "G");
        let pred = random_entities(&mut rng, "P");
        for mode in [Mode::Strict, Mode::Lenient] {
            let m = match_entities(&gold, &pred, mode);
            let gs: BTreeSet<usize> = m.iter().map(|p| p.0).collect();
            let ps: BTreeSet<usize> = m.iter().map(|p| p.1).collect();
            check(gs.len() == m.len() && ps.len() == m.len(), format!("instance {i}: not one-to-one"))?;
            check(
                m.iter().all(|&(g, p)| compatible(&gold[g], &pred[p], mode)),
                format!("instance {i}: incompatible pair"),
            )?;
            let best = exhaustive_max(&gold, &pred, mode, &mut vec![false; pred.len()]);
            check(m.len() == best, format!("instance {i} {mode}: {} vs exhaustive {best}", m.len()))?;
        }
    }
    within(Duration::from_secs(30), t)?;
    Ok(format!("{instances} instances, both modes"))
}

fn entity(id: &str, cat: &str, start: usize, end: usize) -> EntityAnnotation {
    EntityAnnotation {
        entity_id: id.into(),
        category: cat.into(),
        start,
        end,
        surface: String::new(),
    }
}

fn worked_scorer_case() -> Outcome {
    let doc = |entities| AnnotatedDoc {
        document: Document::new("d", "x".repeat(30)),
        entities,
        relations: vec![],
    };
    let gold = vec![doc(vec![entity("T1", "Tobacco use", 0, 5), entity("T2", "Alcohol use", 10, 15)])];
    let pred = vec![doc(vec![
        entity("T1", "Tobacco use", 0, 5),
        entity("T2", "Alcohol use", 12, 18),
        entity("T3", "Drug use", 20, 24),
    ])];
    let four = |x: f64| format!("{x:.4}");
    let mut got = Vec::new();
    for (mode, want) in [
        (Mode::Strict, ["0.3333", "0.5000", "0.4000"]),
        (Mode::Lenient, ["0.6667", "1.0000", "0.8000"]),
    ] {
        let s = score_concepts(&gold, &pred, mode).map_err(|e| e.to_string())?.micro;
        let have = [four(s.precision), four(s.recall), four(s.f1)];
        check(have == want, format!("{mode}: {have:?} != {want:?}"))?;
        // the brute-force matcher agrees on the true positive count
        let best = exhaustive_max(&gold[0].entities, &pred[0].entities, mode, &mut vec![false; 3]);
        check(best == s.tp, format!("{mode}: tp {} vs exhaustive {best}", s.tp))?;
        got.push(format!("{mode} P/R/F {}", have.join("/")));
    }
    Ok(got.join(", "))
}

fn spans(entities: &[EntityAnnotation]) -> Vec<(String, usize, usize, String)> {
    let mut v: Vec<_> = entities
        .iter()
        .map(|e| (e.category.clone(), e.start, e.end, e.surface.clone()))
        .collect();
    v.sort();
    v
}

fn bio_round_trip() -> Outcome {
    let docs = synth(1000, 4004, 0.5);
    for d in &docs {
        let text = &d.document.text;
        let tokens = tokenize(text);
        let labels = encode_bio(&tokens, &d.entities).map_err(|e| e.to_string())?;
        let decoded = decode_bio(text, &tokens, &labels).map_err(|e| e.to_string())?;
        let snapped = snap_entities(text, &tokens, &d.entities).map_err(|e| e.to_string())?;
        check(spans(&decoded) == spans(&snapped), format!("{}: decode(encode) != snap", d.doc_id()))?;
        let again = encode_bio(&tokens, &decoded).map_err(|e| e.to_string())?;
        check(again == labels, format!("{}: encode(decode(encode)) != encode", d.doc_id()))?;
    }
    Ok("1000 documents".into())
}

fn separable_end_to_end() -> Outcome {
    let t = Instant::now();
    let s = schema();
    let docs = synth(500, 5005, 0.0);
    let (pool, test) = docs.split_at(400);
    let (train, val) = pool.split_at(360);
    let ner = train_tagger(train, val, &s, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let re = train_linker(train, val, &s, &LinkerConfig::default()).map_err(|e| e.to_string())?.model;
    let [cs, _, es, _] = evaluate(&ner, &re, test, &s).map_err(|e| e.to_string())?;
    let linked = re.link_docs(test, &s).map_err(|e| e.to_string())?;
    let rs = score_relations(test, &linked, Mode::Strict, EndpointAlignment::Matching).map_err(|e| e.to_string())?;
    let summary = format!(
        "concept {:.4}, relation {:.4}, end-to-end {:.4} in {:.1?}",
        cs.micro.f1,
        rs.micro.f1,
        es.micro.f1,
        t.elapsed()
    );
    check(cs.micro.f1 >= 0.95, format!("concept below 0.95: {summary}"))?;
    check(rs.micro.f1 >= 0.95, format!("relation below 0.95: {summary}"))?;
    check(es.micro.f1 >= 0.90, format!("end-to-end below 0.90: {summary}"))?;
    within(Duration::from_secs(120), t)?;
    Ok(summary)
}

fn adaptation_direction() -> Outcome {
    let s = schema();
    let cfg = AdaptConfig::default();
    let mut votes = 0;
    let mut lines = Vec::new();
    for seed in [6006u64, 6106, 6206] {
        let src = synth(400, seed, 0.0);
        let opts = SynthOptions {
            id_prefix: "tgt".into(),
            ..Default::default()
        };
        let tgt = synth_with(300, seed + 1, 0.7, &opts);
        let (s_pool, s_test) = src.split_at(300);
        let (s_train, s_val) = s_pool.split_at(270);
        let (t_train, rest) = tgt.split_at(150);
        let (t_val, t_test) = rest.split_at(30);
        let ner = train_tagger(s_train, s_val, &s, &cfg.ner).map_err(|e| e.to_string())?;
        let re = train_linker(s_train, s_val, &s, &cfg.re).map_err(|e| e.to_string())?.model;
        let on_source = evaluate(&ner, &re, s_test, &s).map_err(|e| e.to_string())?[0].micro.f1;
        let rows = compare_strategies(&ner, &re, s_pool, t_train, t_val, t_test, &s, &cfg).map_err(|e| e.to_string())?;
        let f1 = |st: Strategy| rows.iter().find(|r| r.strategy == st).map(|r| r.concept_strict.micro.f1).unwrap();
        let (direct, fine, merged) = (f1(Strategy::Direct), f1(Strategy::FineTune), f1(Strategy::MergeRetrain));
        let ok = fine >= direct && merged >= direct && direct < on_source;
        votes += ok as usize;
        lines.push(format!(
            "seed {seed}: source {on_source:.4} direct {direct:.4} fine-tune {fine:.4} merge {merged:.4}{}",
            if ok { "" } else { " (violated)" }
        ));
    }
    check(votes >= 2, format!("{votes}/3 seeds hold; {}", lines.join("; ")))?;
    Ok(format!("{votes}/3 seeds hold; {}", lines.join("; ")))
}

fn split_reproduction() -> Outcome {
    let ids = |n: usize| (0..n).map(|i| format!("d{i:04}")).collect::<Vec<_>>();
    let mut got = Vec::new();
    for (n, train, want) in [(629, 0.8, (452, 51, 126)), (200, 0.5, (90, 10, 100))] {
        let s = split_corpus(&ids(n), SplitRatios::new(train, 0.10), 7).map_err(|e| e.to_string())?;
        let have = (s.train.len(), s.validation.len(), s.test.len());
        check(have == want, format!("{n} docs: {have:?} != {want:?}"))?;
        got.push(format!("{n} -> {}/{}/{}", have.0, have.1, have.2));
    }
    Ok(got.join(", "))
}

/// Rounds num/den half up to four decimals by long division.
fn four_places(num: usize, den: usize) -> String {
    let whole = num / den;
    let mut rem = num % den;
    let mut digits = Vec::new();
    for _ in 0..4 {
        rem *= 10;
        digits.push(rem / den);
        rem %= den;
    }
    let mut value = whole * 10_000 + digits.iter().fold(0, |acc, d| acc * 10 + d);
    if 2 * rem >= den {
        value += 1;
    }
    format!("{}.{:04}", value / 10_000, value % 10_000)
}

fn aggregation_oracle() -> Outcome {
    let s = schema();
    let concepts: Vec<String> = s.concepts().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let versions = ModelVersions {
        ner: "n".into(),
        re: "r".into(),
    };
    for i in 0..200 {
        let roster: Vec<String> = (0..rng.gen_range(1..25)).map(|p| format!("p{p}")).collect();
        let records: Vec<SDoHRecord> = (0..rng.gen_range(0..60))
            .map(|k| SDoHRecord {
                doc_id: format!("d{}", rng.gen_range(0..10)),
                patient_id: roster[rng.gen_range(0..roster.len())].clone(),
                concept: entity(&format!("T{k}"), &concepts[rng.gen_range(0..concepts.len())], k, k + 1),
                attributes: Vec::<LinkedAttribute>::new(),
                model_versions: versions.clone(),
            })
            .collect();
        let set: BTreeSet<String> = roster.iter().cloned().collect();
        let table = aggregate_rates(&records, &set, &s).map_err(|e| e.to_string())?;
        check(table.total_patients == roster.len(), format!("instance {i}: roster size"))?;
        check(table.rows.len() == concepts.len(), format!("instance {i}: row count"))?;
        for (row, cat) in table.rows.iter().zip(&concepts) {
            let count = records.iter().filter(|r| &r.concept.category == cat).count();
            let patients = roster
                .iter()
                .filter(|p| records.iter().any(|r| &r.patient_id == *p && &r.concept.category == cat))
                .count();
            check(
                &row.category == cat && row.concept_count == count && row.patients_with_category == patients,
                format!("instance {i} {cat}: counts differ"),
            )?;
            let want = four_places(patients, roster.len());
            let have = format_ratio(row.patients_with_category, table.total_patients);
            check(have == want, format!("instance {i} {cat}: rate {have} != {want}"))?;
        }
    }
    Ok("200 instances".into())
}

fn kappa_closed_form() -> Outcome {
    let a = ["O", "O", "O", "O", "O", "O", "O", "B", "B", "B"];
    let b = ["O", "O", "O", "O", "O", "O", "B", "B", "B", "O"];
    let k = compute_kappa(&a, &b).map_err(|e| e.to_string())?.kappa;
    check((k - 0.5238).abs() <= 1e-4, format!("kappa {k}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    for i in 0..100 {
        let seq: Vec<u8> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(0..5)).collect();
        let kk = compute_kappa(&seq, &seq).map_err(|e| e.to_string())?.kappa;
        check(kk == 1.0, format!("sequence {i}: self kappa {kk}"))?;
    }
    Ok(format!("kappa {k:.4}; self-agreement 1 on 100 sequences"))
}

fn determinism() -> Outcome {
    let s = schema();
    let docs = synth(260, 10010, 0.0);
    let (train, val) = docs[..240].split_at(220);
    let cfg = TrainConfig::default();
    let ner = train_tagger(train, val, &s, &cfg).map_err(|e| e.to_string())?;
    let ner2 = train_tagger(train, val, &s, &cfg).map_err(|e| e.to_string())?;
    check(ner.to_model_file() == ner2.to_model_file(), "tagger model files differ")?;
    let re = train_linker(train, val, &s, &LinkerConfig::default()).map_err(|e| e.to_string())?.model;
    let re2 = train_linker(train, val, &s, &LinkerConfig::default()).map_err(|e| e.to_string())?.model;
    check(re.to_model_file() == re2.to_model_file(), "linker model files differ")?;

    let models = Models::new(ner, re, s).map_err(|e| e.to_string())?;
    let raw: Vec<RawDocument> = synth(500, 10011, 0.3).iter().map(|d| RawDocument::from(&d.document)).collect();
    let one = run_batch(&models, &raw, 1);
    let eight = run_batch(&models, &raw, 8);
    check(one.records == eight.records, "records differ between 1 and 8 threads")?;
    check(one.diagnostics == eight.diagnostics, "diagnostics differ between 1 and 8 threads")?;
    check(one.annotations == eight.annotations, "annotations differ between 1 and 8 threads")?;
    Ok(format!(
        "500 documents, {} records; 1 thread {:.2?}, 8 threads {:.2?}",
        one.records.len(),
        one.timing.wall,
        eight.timing.wall
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("standoff round trip", standoff_round_trip),
        ("matcher equals exhaustive search", matcher_oracle),
        ("worked scorer case", worked_scorer_case),
        ("BIO round trip", bio_round_trip),
        ("separable corpus end to end", separable_end_to_end),
        ("adaptation direction under shift", adaptation_direction),
        ("split sizes", split_reproduction),
        ("rate aggregation oracle", aggregation_oracle),
        ("kappa closed form", kappa_closed_form),
        ("determinism and parallel invariance", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
