use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use pqr::fixtures::{synthetic_complexes, MoleculeGenerator};
use pqr::gnn2d::{Model2D, Model2DConfig};
use pqr::gnn3d::{Model3D, Model3DConfig};
use pqr::molio::{is_isomorphic, parse_smiles, MolGraph};
use pqr::posterior::View;
use pqr::shred::{build_vocabulary, Motif, MotifKey, ShredPolicy};
use pqr_serve::engine::growth_vectors;
use pqr_serve::{router, Engine, Models, Origin};
use tower::ServiceExt;

fn models(zeroed: bool) -> Models {
    let policy = ShredPolicy::default();
    let mut rng = pqr::rng::derive(3, &[]);
    let mut mols: Vec<MolGraph> = MoleculeGenerator::new()
        .unwrap()
        .corpus(60, &mut rng)
        .unwrap()
        .into_iter()
        .map(|e| e.graph)
        .collect();
    mols.push(parse_smiles("Cc1ccccc1").unwrap());
    let complexes = synthetic_complexes(3, 1, 5).unwrap();
    let vocab = build_vocabulary(&mols, &policy, 2).unwrap();
    let mut m2 = Model2D::new(Model2DConfig { d: 8, init_seed: 1 }, vocab.clone(), &policy).unwrap();
    let mut m3 = Model3D::new(Model3DConfig::default(), 8, vocab, &policy.fingerprint()).unwrap();
    if zeroed {
        m2.zero_output_layers();
        m3.zero_output_layers();
    }
    Models {
        m2,
        m3: Some(m3),
        complexes: complexes.into_iter().map(|c| (c.id.clone(), c)).collect::<BTreeMap<_, _>>(),
        env: Model3DConfig::default().env,
    }
}

fn methyl() -> MotifKey {
    Motif::from_smiles("C", 0).unwrap().key()
}

#[test]
fn benzene_session_has_six_equivalent_vectors() {
    let e = Engine::new(models(false));
    let s = e.create_session(Origin::Smiles("c1ccccc1".into())).unwrap();
    assert_eq!(s.n_atoms, 6);
    let gv = e.growth_vectors(&s.id).unwrap();
    assert_eq!(gv.len(), 6);
    assert!(gv.iter().all(|g| g.hydrogens == 1 && g.degree == 2));
}

#[test]
fn growth_vector_rules() {
    assert_eq!(growth_vectors(&parse_smiles("C").unwrap()).len(), 1);
    let neo = growth_vectors(&parse_smiles("CC(C)(C)C").unwrap());
    assert_eq!(neo.len(), 4);
    assert!(neo.iter().all(|g| g.atom != 1), "quaternary carbon is excluded");
}

#[test]
fn unknown_inputs_are_rejected() {
    let e = Engine::new(models(false));
    assert_eq!(e.create_session(Origin::Complex("nope".into())).unwrap_err().status, 404);
    assert_eq!(e.create_session(Origin::Smiles("c1cc".into())).unwrap_err().code, "parse_error");
    assert_eq!(e.molecule("s99").unwrap_err().code, "unknown_session");
}

#[test]
fn methyl_on_benzene_gives_toluene_and_undo_restores() {
    let e = Engine::new(models(false));
    let s = e.create_session(Origin::Smiles("c1ccccc1".into())).unwrap();
    let before = e.snapshot(&s.id).unwrap().core;
    e.apply(&s.id, 0, &methyl()).unwrap();
    let after = e.snapshot(&s.id).unwrap().core;
    assert!(is_isomorphic(&after, &parse_smiles("Cc1ccccc1").unwrap()));
    let m = e.undo(&s.id).unwrap();
    assert!(m.history.is_empty());
    assert_eq!(e.snapshot(&s.id).unwrap().core, before);
    assert_eq!(e.undo(&s.id).unwrap_err().code, "empty_history");
}

#[test]
fn saturated_atom_cannot_grow() {
    let e = Engine::new(models(false));
    let s = e.create_session(Origin::Smiles("CC(C)(C)C".into())).unwrap();
    assert_eq!(e.apply(&s.id, 1, &methyl()).unwrap_err().code, "valence");
    assert_eq!(e.posterior(&s.id, 1, View::Pq, None).unwrap_err().code, "invalid_atom");
}

#[test]
fn zeroed_models_rank_by_frequency() {
    let e = Engine::new(models(true));
    let s = e.create_session(Origin::Smiles("c1ccccc1".into())).unwrap();
    let t = e.posterior(&s.id, 0, View::Pq, None).unwrap();
    let freq: Vec<MotifKey> = e.models().m2.vocabulary().entries().iter().map(|x| x.key.clone()).collect();
    let ranked: Vec<MotifKey> = t.rows.iter().map(|r| r.key.clone()).collect();
    assert_eq!(ranked, freq);
    assert!(t.rows.iter().all(|r| r.rank_from == Some(r.rank)));
}

#[test]
fn r_views_need_a_complex() {
    let e = Engine::new(models(false));
    let s = e.create_session(Origin::Smiles("c1ccccc1".into())).unwrap();
    assert_eq!(e.posterior(&s.id, 0, View::Pqr, None).unwrap_err().code, "missing_3d_context");
}

#[test]
fn complex_session_grows_with_coordinates_and_replays() {
    let m = models(false);
    let (id, lig) = m.complexes.iter().next().map(|(k, c)| (k.clone(), c.ligand.clone())).unwrap();
    let e = Engine::new(m);
    let s = e.create_session(Origin::Complex(id)).unwrap();
    assert_eq!(s.n_atoms, lig.n_atoms());
    let gv = e.growth_vectors(&s.id).unwrap();
    assert!(!gv.is_empty() && gv.iter().all(|g| g.atom < lig.n_atoms()));
    let t = e.posterior(&s.id, gv[0].atom, View::Pqr, Some(5)).unwrap();
    assert_eq!(t.rows.len(), 5);
    assert_eq!(t.compared_to, Some(View::Pq));
    assert!(t.rows.iter().all(|r| r.ranks.len() == 5));
    for _ in 0..5 {
        let gv = e.growth_vectors(&s.id).unwrap();
        e.apply(&s.id, gv[0].atom, &methyl()).unwrap();
    }
    let snap = e.snapshot(&s.id).unwrap();
    assert_eq!(snap.history.len(), 5);
    assert!(snap.core.has_coords());
    assert_eq!(e.replayed_core(&s.id).unwrap(), snap.core);
}

#[test]
fn reload_reproduces_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let m = models(false);
    let cx = m.complexes.keys().next().unwrap().clone();
    let (a, b) = {
        let e = Engine::with_log(m, &log).unwrap();
        let a = e.create_session(Origin::Smiles("c1ccccc1".into())).unwrap().id;
        let b = e.create_session(Origin::Complex(cx)).unwrap().id;
        e.apply(&a, 0, &methyl()).unwrap();
        e.apply(&a, 6, &methyl()).unwrap();
        e.undo(&a).unwrap();
        let atom = e.growth_vectors(&b).unwrap()[0].atom;
        e.apply(&b, atom, &methyl()).unwrap();
        (e.snapshot(&a).unwrap(), e.snapshot(&b).unwrap())
    };
    let e = Engine::with_log(models(false), &log).unwrap();
    for s in [&a, &b] {
        let r = e.snapshot(&s.id).unwrap();
        assert_eq!(r.core, s.core);
        assert_eq!(r.history, s.history);
    }
    let c = e.create_session(Origin::Smiles("C".into())).unwrap();
    assert_eq!(c.id, "s3");
}

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, serde_json::Value, Option<String>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let cors = resp
        .headers()
        .get("access-control-allow-origin")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = axum::body::to_bytes(resp.into_body(), 1 << 24).await.unwrap();
    let v = if bytes.is_empty() { serde_json::Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v, cors)
}

fn post(uri: &str, body: serde_json::Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .header("origin", "http://ui.local")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).header("origin", "http://ui.local").body(Body::empty()).unwrap()
}

#[tokio::test]
async fn http_round_trip() {
    let app = router(Arc::new(Engine::new(models(false))), Some("http://ui.local")).unwrap();
    let (st, v, cors) = call(app.clone(), post("/sessions", serde_json::json!({"smiles": "c1ccccc1"}))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(cors.as_deref(), Some("http://ui.local"));
    let id = v["id"].as_str().unwrap().to_string();

    let (st, v, _) = call(app.clone(), get(&format!("/sessions/{id}/growth-vectors"))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 6);

    let (st, v, _) = call(app.clone(), get(&format!("/sessions/{id}/posterior?atom=0&view=pq&top=3"))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert_eq!(v["compared_to"], "p");

    let (st, v, _) = call(app.clone(), get(&format!("/sessions/{id}/posterior?atom=0&view=qr"))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "missing_3d_context");
    assert!(v["message"].is_string());

    let (st, v, _) = call(app.clone(), post(&format!("/sessions/{id}/apply"), serde_json::json!({"atom": 0, "motif": methyl().0}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["n_atoms"], 7);

    let (st, _, _) = call(app.clone(), post(&format!("/sessions/{id}/undo"), serde_json::Value::Null)).await;
    assert_eq!(st, StatusCode::OK);
    let (_, v, _) = call(app.clone(), get(&format!("/sessions/{id}/molecule"))).await;
    assert_eq!(v["n_atoms"], 6);
    assert!(v["coords"].is_null());

    let (st, v, _) = call(app.clone(), get("/sessions/zzz/molecule")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_session");
    let (st, v, _) = call(app, get("/nowhere")).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}
