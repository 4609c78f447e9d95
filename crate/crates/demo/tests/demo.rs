use delaygossip_demo::{preset_list, preset_text, run_json, sparsify_json, stability_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).expect("valid JSON")
}

#[test]
fn presets_are_listed_and_loadable() {
    let names = parse(&preset_list());
    assert_eq!(names.as_array().unwrap().len(), 4);
    assert!(preset_text("two_node").unwrap().contains("two_node"));
    assert!(preset_text("nope").is_none());
}

#[test]
fn two_node_run_decays_below_its_bound() {
    let out = parse(&run_json(&preset_text("two_node").unwrap(), 5).unwrap());
    let err = out["err2"].as_array().unwrap();
    let bound = out["bound"].as_array().unwrap();
    assert_eq!(err.len(), bound.len() + 1);
    assert!(bound.iter().all(|p| p[0].as_f64().unwrap() > 0.0));
    assert_eq!(err[0][1].as_f64().unwrap(), 2.0);
    let last = err.last().unwrap()[1].as_f64().unwrap();
    assert!(last < 1e-3, "{last}");
    assert!(out["report"].as_str().unwrap().contains("lambda2"));
}

#[test]
fn oversized_runs_are_refused() {
    let text = preset_text("er30_fig1").unwrap();
    assert!(run_json(&text, 20).unwrap_err().contains("events"));
}

#[test]
fn stability_tracks_the_step_scale() {
    let text = preset_text("two_node").unwrap();
    let ok = parse(&stability_json(&text, 1.0, 20.0, 0).unwrap());
    assert_eq!(ok["certified"], Value::Bool(true));
    assert!(ok["ratio"].as_f64().unwrap() < 1e-3);
    let bad = parse(&stability_json(&text, 12.0, 20.0, 0).unwrap());
    assert_eq!(bad["certified"], Value::Bool(false));
    assert!(bad["ratio"].as_f64().unwrap() > 1.0 || bad["diverged"] == Value::Bool(true));
}

#[test]
fn sparsify_drops_the_slow_closing_edge() {
    let out = parse(&sparsify_json(&preset_text("braess_line").unwrap(), None).unwrap());
    assert_eq!(out["kept"].as_array().unwrap().len(), 9);
    assert_eq!(out["connected"], Value::Bool(true));
    let hist = out["history"].as_array().unwrap();
    assert!(hist.last().unwrap().as_f64().unwrap() > hist[0].as_f64().unwrap());
    let cut = parse(&sparsify_json(&preset_text("braess_line").unwrap(), Some(1e9)).unwrap());
    assert_eq!(cut["connected"], Value::Bool(false));
}
