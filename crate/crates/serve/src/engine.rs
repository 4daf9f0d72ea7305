//! Session state machine, independent of HTTP.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use pqr::gnn2d::Model2D;
use pqr::gnn3d::{pocket_around, Context3D, EnvConfig, Model3D};
use pqr::molio::{parse_smiles, write_smiles, BondOrder, Complex, MolGraph, Vec3};
use pqr::posterior::{Posterior, View};
use pqr::shred::{Motif, MotifKey};
use serde::{Deserialize, Serialize};

use crate::place::place_motif;

/// Failure with an HTTP-ish status, a stable code and a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<pqr::Error> for ApiError {
    fn from(e: pqr::Error) -> Self {
        use pqr::molio::MolError;
        use pqr::Error as E;
        let (status, code) = match &e {
            E::InvalidAtom { .. } => (400, "invalid_atom"),
            E::MissingContext(_) => (422, "missing_3d_context"),
            E::UnknownMotif(_) => (404, "unknown_motif"),
            E::Mol(MolError::NoOpenValence { .. }) => (409, "valence"),
            E::Mol(MolError::Valence { .. }) => (409, "valence"),
            E::Mol(_) => (400, "parse_error"),
            E::Config(_) => (400, "bad_request"),
            _ => (500, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

/// Read-only models shared by every session.
pub struct Models {
    pub m2: Model2D,
    pub m3: Option<Model3D>,
    pub complexes: BTreeMap<String, Complex>,
    pub env: EnvConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Smiles(String),
    Complex(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedStep {
    pub atom: usize,
    pub motif: MotifKey,
}

/// One line of the persistence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Create { session: String, origin: Origin },
    Apply { session: String, step: AppliedStep },
    Undo { session: String },
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub origin: Origin,
    pub core: MolGraph,
    pub history: Vec<AppliedStep>,
    /// Cores before each applied step, for exact undo.
    previous: Vec<MolGraph>,
}

impl Session {
    pub fn complex_id(&self) -> Option<&str> {
        match &self.origin {
            Origin::Complex(id) => Some(id),
            Origin::Smiles(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthVector {
    pub atom: usize,
    pub element: String,
    pub hydrogens: u8,
    pub degree: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorEntry {
    pub rank: usize,
    pub key: MotifKey,
    pub smiles: String,
    pub p: f64,
    pub q_hat: f64,
    pub r_hat: f64,
    pub prob: f64,
    /// Rank of this motif under every view available to the session.
    pub ranks: BTreeMap<View, usize>,
    /// Rank under the view with one factor fewer, when there is one.
    pub rank_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorTable {
    pub atom: usize,
    pub view: View,
    pub compared_to: Option<View>,
    pub entropy: f64,
    pub rows: Vec<PosteriorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoleculeView {
    pub id: String,
    pub smiles: String,
    pub n_atoms: usize,
    pub coords: Option<Vec<Vec3>>,
    pub complex: Option<String>,
    pub history: Vec<AppliedStep>,
}

/// The view a rank delta is reported against.
pub fn reference_view(v: View) -> Option<View> {
    match v {
        View::P => None,
        View::Q => Some(View::P),
        View::Pq => Some(View::P),
        View::Qr => Some(View::Q),
        View::Pqr => Some(View::Pq),
    }
}

pub struct Engine {
    models: Arc<Models>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: Mutex<u64>,
    log: Option<Mutex<File>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Engine {
    /// Engine without persistence.
    pub fn new(models: Models) -> Self {
        Engine {
            models: Arc::new(models),
            sessions: RwLock::new(HashMap::new()),
            next_id: Mutex::new(1),
            log: None,
        }
    }

    /// Engine persisted to a JSON-lines event log; existing events are
    /// replayed first.
    pub fn with_log(models: Models, path: &Path) -> anyhow::Result<Self> {
        let mut e = Engine::new(models);
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: Event = serde_json::from_str(&line)
                    .map_err(|err| anyhow::anyhow!("{}:{}: {err}", path.display(), i + 1))?;
                e.replay(&ev)
                    .map_err(|err| anyhow::anyhow!("{}:{}: {err}", path.display(), i + 1))?;
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        e.log = Some(Mutex::new(f));
        Ok(e)
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    fn record(&self, ev: &Event) -> ApiResult<()> {
        if let Some(f) = &self.log {
            let mut f = lock(f);
            let line = serde_json::to_string(ev).expect("serializable");
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| ApiError::new(500, "persistence", e.to_string()))?;
        }
        Ok(())
    }

    fn replay(&self, ev: &Event) -> ApiResult<()> {
        match ev {
            Event::Create { session, origin } => {
                let s = self.build_session(session.clone(), origin.clone())?;
                self.insert(s);
                let n: u64 = session.trim_start_matches('s').parse().unwrap_or(0);
                let mut next = lock(&self.next_id);
                *next = (*next).max(n + 1);
            }
            Event::Apply { session, step } => {
                let s = self.session(session)?;
                let mut s = lock(&s);
                self.apply_locked(&mut s, step.atom, &step.motif)?;
            }
            Event::Undo { session } => {
                let s = self.session(session)?;
                undo_locked(&mut lock(&s))?;
            }
        }
        Ok(())
    }

    fn insert(&self, s: Session) {
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        map.insert(s.id.clone(), Arc::new(Mutex::new(s)));
    }

    fn build_session(&self, id: String, origin: Origin) -> ApiResult<Session> {
        let core = match &origin {
            Origin::Smiles(s) => parse_smiles(s).map_err(|e| ApiError::new(400, "parse_error", e.to_string()))?,
            Origin::Complex(c) => self
                .models
                .complexes
                .get(c)
                .ok_or_else(|| ApiError::new(404, "unknown_complex", format!("no complex with id {c}")))?
                .ligand
                .clone(),
        };
        Ok(Session {
            id,
            origin,
            core,
            history: Vec::new(),
            previous: Vec::new(),
        })
    }

    pub fn create_session(&self, origin: Origin) -> ApiResult<MoleculeView> {
        let id = {
            let mut next = lock(&self.next_id);
            let id = format!("s{}", *next);
            *next += 1;
            id
        };
        let s = self.build_session(id.clone(), origin.clone())?;
        self.record(&Event::Create {
            session: id,
            origin,
        })?;
        let view = molecule_view(&s);
        self.insert(s);
        Ok(view)
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        map.get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(404, "unknown_session", format!("no session with id {id}")))
    }

    /// Snapshot of a session's state.
    pub fn snapshot(&self, id: &str) -> ApiResult<Session> {
        let s = self.session(id)?;
        let snap = lock(&s).clone();
        Ok(snap)
    }

    pub fn molecule(&self, id: &str) -> ApiResult<MoleculeView> {
        Ok(molecule_view(&self.snapshot(id)?))
    }

    /// Atoms that can take one more single bond, most hydrogens first, then
    /// least substituted, then by index.
    pub fn growth_vectors(&self, id: &str) -> ApiResult<Vec<GrowthVector>> {
        let s = self.snapshot(id)?;
        Ok(growth_vectors(&s.core))
    }

    pub fn posterior(&self, id: &str, atom: usize, view: View, top: Option<usize>) -> ApiResult<PosteriorTable> {
        let s = self.snapshot(id)?;
        let g = &s.core;
        if atom >= g.n_atoms() || g.atom(atom).n_hydrogens == 0 {
            return Err(ApiError::new(400, "invalid_atom", format!("atom {atom} is not a growth vector")));
        }
        let m = &*self.models;
        let complex = s.complex_id().and_then(|c| m.complexes.get(c));
        let pocket = match complex {
            Some(c) if m.m3.is_some() => pocket_around(c, g, atom, &m.env)?,
            _ => None,
        };
        let ctx = match complex {
            Some(_) if m.m3.is_some() => Some(Context3D::new(g, atom, pocket.as_ref().map(|p| &p.graph))?),
            _ => None,
        };
        if view.uses_r() && ctx.is_none() {
            return Err(ApiError::new(
                422,
                "missing_3d_context",
                format!("view {view} needs a complex-backed session and a 3D model"),
            ));
        }
        let available: Vec<View> = View::ALL
            .into_iter()
            .filter(|v| !v.uses_r() || ctx.is_some())
            .collect();
        let mut ranks: BTreeMap<View, HashMap<MotifKey, usize>> = BTreeMap::new();
        let mut main = None;
        for v in available {
            let post = Posterior::assemble(g, atom, ctx.as_ref(), &m.m2, m.m3.as_ref(), v)?;
            ranks.insert(v, post.ranks());
            if v == view {
                main = Some(post);
            }
        }
        let post = main.expect("requested view is available");
        let compared_to = reference_view(view);
        let rows = post
            .ranking()
            .into_iter()
            .take(top.unwrap_or(usize::MAX))
            .enumerate()
            .map(|(k, i)| {
                let r = &post.rows[i];
                PosteriorEntry {
                    rank: k + 1,
                    key: r.key.clone(),
                    smiles: r.smiles.clone(),
                    p: r.p,
                    q_hat: r.q_hat,
                    r_hat: r.r_hat,
                    prob: r.prob,
                    ranks: ranks.iter().map(|(v, m)| (*v, m[&r.key])).collect(),
                    rank_from: compared_to.map(|c| ranks[&c][&r.key]),
                }
            })
            .collect();
        Ok(PosteriorTable {
            atom,
            view,
            compared_to,
            entropy: post.entropy(),
            rows,
        })
    }

    fn motif(&self, key: &MotifKey) -> ApiResult<Motif> {
        let v = self.models.m2.vocabulary();
        if let Some(e) = v.get(key) {
            return Ok(e.motif.clone());
        }
        // Also accept a motif's SMILES when it names exactly one entry.
        let hits: Vec<_> = v.entries().iter().filter(|e| e.smiles == key.0).collect();
        match hits.as_slice() {
            [e] => Ok(e.motif.clone()),
            _ => Err(ApiError::new(404, "unknown_motif", format!("{key} is not in the vocabulary"))),
        }
    }

    fn apply_locked(&self, s: &mut Session, atom: usize, key: &MotifKey) -> ApiResult<MotifKey> {
        let motif = self.motif(key)?;
        let g = &s.core;
        if atom >= g.n_atoms() || g.atom(atom).n_hydrogens == 0 {
            return Err(ApiError::new(409, "valence", format!("atom {atom} cannot take another bond")));
        }
        let graph = if g.has_coords() {
            let obstacles: Vec<Vec3> = s
                .complex_id()
                .and_then(|c| self.models.complexes.get(c))
                .and_then(|c| c.protein.coords())
                .unwrap_or_default();
            let xyz = place_motif(g, atom, &motif, &obstacles).expect("posed core");
            motif.graph.clone().with_coords(&xyz)
        } else {
            motif.graph.clone()
        };
        let next = g
            .attach(atom, &graph, motif.attachment, BondOrder::Single)
            .map_err(|e| ApiError::new(409, "valence", e.to_string()))?;
        let canonical = motif.key();
        s.previous.push(std::mem::replace(&mut s.core, next));
        s.history.push(AppliedStep {
            atom,
            motif: canonical.clone(),
        });
        Ok(canonical)
    }

    /// Extends the core; fails with `session_busy` if another mutation on the
    /// same session is in flight.
    pub fn apply(&self, id: &str, atom: usize, motif: &MotifKey) -> ApiResult<MoleculeView> {
        let s = self.session(id)?;
        let mut s = try_lock(&s)?;
        let key = self.apply_locked(&mut s, atom, motif)?;
        let ev = Event::Apply {
            session: id.to_string(),
            step: AppliedStep { atom, motif: key },
        };
        if let Err(e) = self.record(&ev) {
            undo_locked(&mut s)?;
            return Err(e);
        }
        Ok(molecule_view(&s))
    }

    pub fn undo(&self, id: &str) -> ApiResult<MoleculeView> {
        let s = self.session(id)?;
        let mut s = try_lock(&s)?;
        let step = undo_locked(&mut s)?;
        if let Err(e) = self.record(&Event::Undo { session: id.to_string() }) {
            self.apply_locked(&mut s, step.atom, &step.motif)?;
            return Err(e);
        }
        Ok(molecule_view(&s))
    }

    /// Rebuilds a session's core from its origin and history.
    pub fn replayed_core(&self, id: &str) -> ApiResult<MolGraph> {
        let s = self.snapshot(id)?;
        let mut fresh = self.build_session(s.id.clone(), s.origin.clone())?;
        for st in &s.history {
            self.apply_locked(&mut fresh, st.atom, &st.motif)?;
        }
        Ok(fresh.core)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        let mut ids: Vec<String> = map.keys().cloned().collect();
        ids.sort();
        ids
    }
}

fn try_lock(m: &Mutex<Session>) -> ApiResult<std::sync::MutexGuard<'_, Session>> {
    match m.try_lock() {
        Ok(g) => Ok(g),
        Err(TryLockError::Poisoned(p)) => Ok(p.into_inner()),
        Err(TryLockError::WouldBlock) => Err(ApiError::new(409, "session_busy", "another request is modifying this session")),
    }
}

fn undo_locked(s: &mut Session) -> ApiResult<AppliedStep> {
    let prev = s
        .previous
        .pop()
        .ok_or_else(|| ApiError::new(409, "empty_history", "nothing to undo"))?;
    s.core = prev;
    Ok(s.history.pop().expect("history and undo stack move together"))
}

pub fn growth_vectors(g: &MolGraph) -> Vec<GrowthVector> {
    let mut v: Vec<GrowthVector> = (0..g.n_atoms())
        .filter(|&i| g.atom(i).n_hydrogens > 0)
        .map(|i| GrowthVector {
            atom: i,
            element: g.atom(i).element.symbol().to_string(),
            hydrogens: g.atom(i).n_hydrogens,
            degree: g.degree(i),
            rank: 0,
        })
        .collect();
    v.sort_by_key(|x| (std::cmp::Reverse(x.hydrogens), x.degree, x.atom));
    for (k, x) in v.iter_mut().enumerate() {
        x.rank = k + 1;
    }
    v
}

fn molecule_view(s: &Session) -> MoleculeView {
    MoleculeView {
        id: s.id.clone(),
        smiles: write_smiles(&s.core).unwrap_or_default(),
        n_atoms: s.core.n_atoms(),
        coords: s.core.coords(),
        complex: s.complex_id().map(str::to_string),
        history: s.history.clone(),
    }
}

/// Where a session log lives when none is given.
pub fn default_log_path(out: &Path) -> PathBuf {
    out.join("sessions.jsonl")
}
