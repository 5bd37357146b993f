use std::sync::Arc;

use capctl_core::captioner::WeightConfig;
use capctl_core::corpus::{parse_corpus_str, Origin};
use capctl_core::gateway::{BackendLimits, Gateway, ResponseCache};
use capctl_core::imaging::ImageSource;
use capctl_core::pipeline::{with_mock, Pipeline, StageAssignments};
use capctl_core::{Language, Split};

const CORPUS: &str = "img1\t10\t20\t50\t40\tsoap is in the dish\tসাবান থালায় আছে\n\
                      img2\t0\t0\t30\t30\ta red car on the road\tরাস্তায় একটি লাল গাড়ি\n";

fn pipeline(cache: ResponseCache) -> (Arc<Gateway>, Pipeline) {
    let gw = Arc::new(with_mock(Gateway::builder(cache), 11, BackendLimits::default()).build());
    let p = Pipeline::new(gw.clone(), &StageAssignments::offline(), ImageSource::Synthetic);
    (gw, p)
}

#[test]
fn disk_cache_replays_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let records = parse_corpus_str(CORPUS, Language::Bn, Split::Dtest, Origin::BottomLeft).unwrap();
    let w = WeightConfig::new(30).unwrap();

    let (gw, p) = pipeline(ResponseCache::on_disk(dir.path()).unwrap());
    let first: Vec<_> = records
        .iter()
        .map(|r| {
            let up = p.upstream(r).unwrap();
            p.caption(r, &up, w).unwrap()
        })
        .collect();
    let cold = gw.stats();
    assert!(cold.backend_calls > 0);

    let (gw, p) = pipeline(ResponseCache::on_disk(dir.path()).unwrap());
    let second: Vec<_> = records
        .iter()
        .map(|r| {
            let up = p.upstream(r).unwrap();
            p.caption(r, &up, w).unwrap()
        })
        .collect();
    assert_eq!(first, second);
    let warm = gw.stats();
    assert_eq!(warm.backend_calls, 0);
    assert_eq!(warm.cache_hits, warm.requests);

    for c in &first {
        assert_eq!(c.language, Language::Bn);
        assert!(c.valid, "{:?}", c.validation_notes);
        assert!(!c.text.contains('\n'));
    }
}

#[test]
fn hausa_route_uses_the_llm_translator() {
    let records = parse_corpus_str(CORPUS, Language::Ha, Split::Train, Origin::BottomLeft).unwrap();
    let (_, p) = pipeline(ResponseCache::in_memory());
    let up = p.upstream(&records[0]).unwrap();
    assert!(up.translated.text.starts_with("Tambaya: [ha] "));
    let stages: Vec<&str> = up.translated.provenance.iter().map(|c| c.stage.as_str()).collect();
    assert_eq!(&stages[..3], ["context", "context", "fusion"]);
    assert!(stages[3..].iter().all(|s| *s == "translate"));
}
