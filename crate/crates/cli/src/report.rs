//! Run report and its serialization.

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use std::collections::BTreeMap;
use std::io;

pub const SCHEMA: &str = "transonic-report/1";

#[derive(Debug, Clone, Serialize)]
pub struct Invariant {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    /// Relation between value and limit: `<=`, `>=`, `<` or `>`.
    pub relation: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageResidual {
    pub stage: String,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExitProfiles {
    pub theta: Vec<f64>,
    pub v_ex: Vec<f64>,
    pub p_ex: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub mode: &'static str,
    pub config: crate::config::RunConfig,
    pub values: BTreeMap<String, f64>,
    pub stages: Vec<StageResidual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub front: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_profiles: Option<ExitProfiles>,
    pub invariants: Vec<Invariant>,
    pub failed: usize,
}

impl RunReport {
    pub fn new(mode: &'static str, config: crate::config::RunConfig) -> Self {
        Self {
            schema: SCHEMA,
            mode,
            config,
            values: BTreeMap::new(),
            stages: Vec::new(),
            front: None,
            exit_profiles: None,
            invariants: Vec::new(),
            failed: 0,
        }
    }

    pub fn value(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
    }

    pub fn stage(&mut self, stage: &str, residual: f64) {
        self.stages.push(StageResidual { stage: stage.to_string(), residual });
    }

    fn push(&mut self, name: &str, passed: bool, value: f64, limit: f64, relation: &'static str) {
        assert!(
            self.invariants.iter().all(|i| i.name != name),
            "invariant {name} declared twice"
        );
        if !passed {
            self.failed += 1;
        }
        self.invariants.push(Invariant { name: name.to_string(), passed, value, limit, relation });
    }

    /// Passes when `value <= limit`.
    pub fn at_most(&mut self, name: &str, value: f64, limit: f64) {
        self.push(name, value <= limit, value, limit, "<=");
    }

    /// Passes when `value >= limit`.
    pub fn at_least(&mut self, name: &str, value: f64, limit: f64) {
        self.push(name, value >= limit, value, limit, ">=");
    }

    /// Passes when `value > limit`.
    pub fn above(&mut self, name: &str, value: f64, limit: f64) {
        self.push(name, value > limit, value, limit, ">");
    }

    /// Passes when `value < limit`.
    pub fn below(&mut self, name: &str, value: f64, limit: f64) {
        self.push(name, value < limit, value, limit, "<");
    }

    /// Boolean check recorded as `1 >= 1`.
    pub fn holds(&mut self, name: &str, ok: bool) {
        self.push(name, ok, if ok { 1.0 } else { 0.0 }, 1.0, ">=");
    }

    pub fn passed(&self) -> bool {
        self.failed == 0
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Pretty JSON with every float in round-trip scientific notation.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter::default());
    value.serialize(&mut ser).expect("report serializes");
    out.push(b'\n');
    String::from_utf8(out).expect("utf-8")
}

#[derive(Default)]
struct SciFormatter {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for SciFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{}", sci(v))
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// 17 significant digits in scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}
