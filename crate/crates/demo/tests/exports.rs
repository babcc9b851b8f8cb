//! Success paths only: building a `JsError` needs a JavaScript host.

use vireid_demo::{lr_curve, render_identity, retrieval_metrics};

#[test]
fn step_curve_warms_up_then_drops_at_milestones() {
    let lr = lr_curve("warmup_step", 3e-4, 3e-6, 10, 180, vec![60, 100], 1).unwrap_or_else(|_| unreachable!());
    assert_eq!(lr.len(), 180);
    assert!((lr[0] - 3e-6).abs() < 1e-15);
    assert!((lr[10] - 3e-4).abs() < 1e-15);
    assert!((lr[60] - 3e-5).abs() < 1e-15);
    assert!((lr[179] - 3e-6).abs() < 1e-15);
    assert!(lr[..10].windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn cosine_curve_decays_monotonically_after_warmup() {
    let lr = lr_curve("warmup_cosine", 3e-4, 1e-5, 5, 120, vec![], 4).unwrap_or_else(|_| unreachable!());
    assert_eq!(lr.len(), 480);
    assert!(lr[20..].windows(2).all(|w| w[0] >= w[1]));
    assert!((lr[479] - 1e-6).abs() < 1e-9);
}

#[test]
fn rendered_identities_are_rgba_and_infrared_is_grey() {
    let px = render_identity(2, "infrared", 0, Some(1), 64, 32).unwrap_or_else(|_| unreachable!());
    assert_eq!(px.len(), 64 * 32 * 4);
    assert!(px.chunks(4).all(|p| p[0] == p[1] && p[1] == p[2] && p[3] == 255));
    let a = render_identity(2, "visible", 0, None, 64, 32).unwrap_or_else(|_| unreachable!());
    let b = render_identity(3, "visible", 0, None, 64, 32).unwrap_or_else(|_| unreachable!());
    assert_ne!(a, b);
}

#[test]
fn metrics_of_a_ranked_list() {
    let out = retrieval_metrics(vec![4, 0, 4, 0], 4, 4).unwrap_or_else(|_| unreachable!());
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["cmc"], serde_json::json!([1.0, 1.0, 1.0, 1.0]));
    assert!((v["ap"].as_f64().unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!((v["inp"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(retrieval_metrics(vec![1, 2], 4, 2).unwrap_or_else(|_| unreachable!()), "null");
}
